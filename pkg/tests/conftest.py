import numpy as np
import pytest

from lipnet import HyperParams, LipschitzParams, synthetic_blobs

try:
    from hypothesis import settings

    settings.register_profile("ci", deadline=None, max_examples=50)
    settings.load_profile("ci")
except ImportError:
    pass


@pytest.fixture(scope="session")
def blobs_train():
    return synthetic_blobs(600, seed=11)


@pytest.fixture(scope="session")
def blobs_test():
    return synthetic_blobs(300, seed=12)


@pytest.fixture(scope="session")
def quick_hp():
    # ~240 steps; enough for the linearly separable blobs
    return HyperParams(lip=LipschitzParams(), lr=0.1, epochs=4, batch_size=10, seed=4)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
