"""The quotient estimator, hinge penalty, aggregated loss, and the
distortion-radius machinery, each against an independent oracle."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.distance import pdist

from lipnet import (Graph, GuaranteeReport, LipschitzParams, RampClassifier,
                    Tensor, aggregated_loss, audit_empirical_k, backward,
                    build_blobs_mlp, compute_rho, counterexample_outside_radius,
                    estimate_k, forward, gradcheck, guarantee, lipschitz_loss,
                    one_hot_labels, pass_counter, perturb, sample_in_ball,
                    synthetic_blobs, verify_theorem1_synthetic)
from lipnet.seeding import derive_rng
from lipnet.tensor import cross_entropy, mul_elementwise


def linear_map(matrix):
    """f(x) = x @ A.T as an analytic stand-in for a model."""
    a = Tensor(np.asarray(matrix, dtype=np.float64).T)

    def f(x, graph=None):
        from lipnet.tensor import matmul
        return matmul(x, a, graph)

    return f


def test_params_validation():
    with pytest.raises(ValueError):
        LipschitzParams(sigma_train=-0.1)
    with pytest.raises(ValueError):
        LipschitzParams(beta=-1.0)
    with pytest.raises(ValueError):
        LipschitzParams(l_n=0.0)
    with pytest.raises(ValueError, match="sigma_train"):
        LipschitzParams(sigma_train=0.0, beta=1.0)
    LipschitzParams(sigma_train=0.5, beta=1.0, l_n=0.01)  # valid


def test_perturb_sigma_zero_bit_exact():
    x = Tensor(np.linspace(0, 1, 12).reshape(3, 4))
    out = perturb(x, 0.0, np.random.default_rng(0))
    assert out.data.tobytes() == x.data.tobytes()
    assert out is not x


def test_perturb_deterministic_given_seed():
    x = Tensor(np.zeros((4, 4)))
    a = perturb(x, 0.5, np.random.default_rng(42))
    b = perturb(x, 0.5, np.random.default_rng(42))
    assert a.data.tobytes() == b.data.tobytes()


def test_perturb_monte_carlo_moments():
    # 10^6 draws at sigma=0.5: mean 0 +- 0.002, std 0.5 +- 0.002
    x = Tensor(np.zeros((1000, 1000)))
    noise = perturb(x, 0.5, np.random.default_rng(7)).data
    assert abs(noise.mean()) < 0.002
    assert abs(noise.std() - 0.5) < 0.002


def test_perturb_rejects_negative_sigma():
    with pytest.raises(ValueError):
        perturb(Tensor(np.zeros(3)), -1e-9, np.random.default_rng(0))


def test_estimate_k_linear_map_is_exact():
    # f(x) = 2x gives k = 2 for every sample and sigma
    f = linear_map(2.0 * np.eye(3))
    x = Tensor(np.random.default_rng(0).random((8, 3)))
    for sigma in (0.1, 1.0, 3.0):
        k = estimate_k(f, x, sigma, np.random.default_rng(1))
        np.testing.assert_allclose(k.values(), 2.0, atol=1e-10)


def test_estimate_k_matches_drawn_noise_quotient():
    # for f(x) = Ax, k_i == ||A n_i|| / ||n_i|| with the actually drawn noise
    a = np.random.default_rng(3).normal(size=(4, 4))
    x = Tensor(np.random.default_rng(4).random((6, 4)))
    k = estimate_k(linear_map(a), x, 0.7, np.random.default_rng(55))
    noise = perturb(x, 0.7, np.random.default_rng(55)).data - x.data
    want = np.linalg.norm(noise @ a.T, axis=1) / np.linalg.norm(noise, axis=1)
    np.testing.assert_allclose(k.values(), want, atol=1e-10)


def test_estimate_k_constant_model_is_zero():
    def const(x, graph=None):
        return mul_elementwise(x, Tensor(np.zeros(x.shape)), graph)

    k = estimate_k(const, Tensor(np.ones((5, 2))), 0.5, np.random.default_rng(0))
    np.testing.assert_array_equal(k.values(), 0.0)
    assert k.mean == 0.0 and k.max == 0.0


def test_estimate_k_square_map_near_derivative():
    # f(x) = x^2 at x=1 with tiny sigma: k -> |f'(1)| = 2
    def square(x, graph=None):
        return mul_elementwise(x, x, graph)

    x = Tensor(np.ones((1, 1)))
    for i in range(100):
        k = estimate_k(square, x, 1e-4, np.random.default_rng(i))
        assert 2.0 - 0.01 <= float(k.values()[0]) <= 2.0 + 0.01


def test_estimate_k_requires_positive_sigma():
    with pytest.raises(ValueError):
        estimate_k(linear_map(np.eye(2)), Tensor(np.ones((2, 2))), 0.0,
                   np.random.default_rng(0))


def test_estimate_k_counts_perturbed_passes():
    pass_counter.reset()
    estimate_k(linear_map(np.eye(2)), Tensor(np.ones((2, 2))), 0.5,
               np.random.default_rng(0))
    assert pass_counter.perturbed_passes == 1


def make_k_stats(values, l_n=0.01):
    t = Tensor(np.asarray(values, dtype=np.float64))
    from lipnet.regularizer import KStatistics, _summaries
    mean, kmax, frac = _summaries(t.data, l_n)
    return KStatistics(t, mean, kmax, frac)


def test_hinge_hand_arithmetic():
    # single sample: 10 * (0.5 - 0.01) = 4.9
    loss = lipschitz_loss(make_k_stats([0.5]), LipschitzParams(0.5, 10.0, 0.01))
    assert abs(loss.item() - 4.9) < 1e-12
    # inactive hinge
    loss = lipschitz_loss(make_k_stats([0.005]), LipschitzParams(0.5, 10.0, 0.01))
    assert loss.item() == 0.0
    # per-sample hinge then mean: mean(0.01, 0) = 0.005 at beta 1
    loss = lipschitz_loss(make_k_stats([0.02, 0.005]), LipschitzParams(0.5, 1.0, 0.01))
    assert abs(loss.item() - 0.005) < 1e-12


@given(st.lists(st.floats(0, 0.1), min_size=1, max_size=12))
def test_hinge_zero_iff_all_within(ks):
    params = LipschitzParams(0.5, 3.0, 0.01)
    loss = lipschitz_loss(make_k_stats(ks), params).item()
    if all(k <= 0.01 for k in ks):
        assert loss == 0.0
    else:
        assert loss > 0.0


def test_hinge_slope_is_beta_over_batch():
    params = LipschitzParams(0.5, 6.0, 0.01)
    stats = make_k_stats([0.5, 0.001, 0.02])
    graph = Graph()
    stats.per_sample_k._on_tape = False
    stats.per_sample_k.requires_grad = True
    loss = lipschitz_loss(stats, params, graph)
    backward(loss, graph)
    np.testing.assert_allclose(stats.per_sample_k.grad, [2.0, 0.0, 2.0], atol=1e-12)


def test_aggregated_loss_beta_zero_is_plain_cross_entropy():
    model = build_blobs_mlp(seed=2)
    ds = synthetic_blobs(16, seed=3)
    x = Tensor(ds.images)
    pass_counter.reset()
    loss, parts = aggregated_loss(model, x, ds.labels, LipschitzParams(),
                                  np.random.default_rng(0))
    assert pass_counter.perturbed_passes == 0
    want = cross_entropy(forward(model, x), ds.labels).item()
    assert loss.item() == want  # bit-identical, not approximately
    assert parts["lipschitz"] == 0.0


def test_aggregated_loss_inactive_hinge_equals_usual():
    model = build_blobs_mlp(seed=2)
    ds = synthetic_blobs(16, seed=3)
    params = LipschitzParams(sigma_train=0.3, beta=10.0, l_n=1e9)
    loss, parts = aggregated_loss(model, Tensor(ds.images), ds.labels, params,
                                  np.random.default_rng(0))
    assert loss.item() == parts["usual"]
    assert parts["lipschitz"] == 0.0


def test_aggregated_loss_decomposition():
    model = build_blobs_mlp(seed=2)
    ds = synthetic_blobs(16, seed=3)
    params = LipschitzParams(sigma_train=0.5, beta=10.0, l_n=1e-4)
    loss, parts = aggregated_loss(model, Tensor(ds.images), ds.labels, params,
                                  np.random.default_rng(0))
    assert parts["lipschitz"] > 0.0
    assert abs(loss.item() - (parts["usual"] + parts["lipschitz"])) < 1e-10


def test_aggregated_loss_gradcheck_active_hinge():
    model = build_blobs_mlp(seed=5)
    ds = synthetic_blobs(12, seed=6)
    params = LipschitzParams(sigma_train=0.5, beta=10.0, l_n=1e-4)
    labels = ds.labels

    def loss_fn(m, x, graph):
        return aggregated_loss(m, x, labels, params, derive_rng(99, "gc"), graph)[0]

    report = gradcheck(model, loss_fn, Tensor(ds.images))
    assert report.passed, report.per_param


def test_compute_rho_one_hot_ten():
    rho = compute_rho(one_hot_labels(10))
    assert abs(rho - np.sqrt(2.0) / 2.0) < 1e-12


def test_compute_rho_matches_pdist_oracle():
    for seed in range(5):
        labels = np.random.default_rng(seed).normal(size=(7, 3))
        want = 0.5 * pdist(labels).min()
        assert abs(compute_rho(labels) - want) < 1e-12


def test_compute_rho_scalar_labels_and_dedup():
    assert compute_rho(np.array([0.0, 1.0])) == 0.5
    assert compute_rho(np.array([0.0, 1.0, 1.0, 0.0])) == 0.5  # duplicates removed
    with pytest.raises(ValueError):
        compute_rho(np.array([2.0, 2.0]))


@given(st.floats(-5, 5), st.floats(0.1, 10))
def test_compute_rho_translation_and_scale(shift, scale):
    labels = one_hot_labels(4)
    base = compute_rho(labels)
    assert abs(compute_rho(labels + shift) - base) < 1e-9
    assert abs(compute_rho(labels * scale) - base * scale) < 1e-9


def test_guarantee_report_fields():
    report = guarantee(LipschitzParams(l_n=0.01), one_hot_labels(10))
    assert isinstance(report, GuaranteeReport)
    assert abs(report.radius - 70.71067811865476) < 1e-9
    assert abs(report.radius * report.l_n - report.rho) < 1e-12
    assert report.label_set_size == 10


def test_guarantee_radius_homogeneous():
    labels = one_hot_labels(10)
    r1 = guarantee(LipschitzParams(l_n=0.01), labels).radius
    r2 = guarantee(LipschitzParams(l_n=0.1), labels).radius
    assert abs(r1 - 10.0 * r2) < 1e-9
    for c in (2.0, 5.0, 0.25):
        rc = guarantee(LipschitzParams(l_n=0.01 * c), labels).radius
        assert abs(rc - r1 / c) < 1e-9 * max(1.0, r1 / c)


def test_ramp_classifier_is_exactly_l_lipschitz():
    labels = one_hot_labels(10)
    for l in (0.5, 1.0, 4.0):
        oracle = RampClassifier(l, labels, dim=3)
        rng = np.random.default_rng(0)
        p = rng.normal(scale=oracle.ramp_width, size=(400, 3))
        q = rng.normal(scale=oracle.ramp_width, size=(400, 3))
        df = np.linalg.norm(oracle.outputs(p) - oracle.outputs(q), axis=1)
        dx = np.linalg.norm(p - q, axis=1)
        assert (df <= l * dx * (1 + 1e-12) + 1e-12).all()
        # the bound is attained inside the ramp along axis 0
        a = np.zeros((1, 3))
        b = np.zeros((1, 3))
        a[0, 0] = 0.25 * oracle.ramp_width
        b[0, 0] = 0.75 * oracle.ramp_width
        ratio = np.linalg.norm(oracle.outputs(a) - oracle.outputs(b)) / \
            np.linalg.norm(a - b)
        assert abs(ratio - l) < 1e-12


def test_sample_in_ball_strictly_inside():
    pts = sample_in_ball(5000, 3, 2.0, np.random.default_rng(0))
    norms = np.linalg.norm(pts, axis=1)
    assert (norms < 2.0).all()
    assert norms.max() > 1.9  # actually fills the ball


def test_verify_theorem1_zero_violations_five_seeds():
    labels = one_hot_labels(10)
    oracle = RampClassifier(1.0, labels, dim=2)
    for seed in range(5):
        v = verify_theorem1_synthetic(oracle, 1.0, labels, 2000,
                                      derive_rng(seed, "thm1"))
        assert v == 0


def test_verify_theorem1_radius_halves_when_l_doubles():
    labels = one_hot_labels(10)
    rho = compute_rho(labels)
    assert abs((rho / 2.0) - 0.5 * (rho / 1.0)) < 1e-15


def test_counterexample_outside_radius_flips():
    labels = one_hot_labels(10)
    oracle = RampClassifier(0.8, labels, dim=2)
    x, d, before, after = counterexample_outside_radius(oracle, 0.8, labels)
    assert before != after
    np.testing.assert_allclose(np.linalg.norm(d),
                               1.5 * compute_rho(labels) / 0.8, atol=1e-12)


def test_audit_constant_model_all_zero():
    def const(x, graph=None):
        return mul_elementwise(x, Tensor(np.zeros(x.shape)), graph)

    ds = synthetic_blobs(40, seed=1)
    stats = audit_empirical_k(const, ds, 0.5, 30, np.random.default_rng(0), l_n=0.01)
    np.testing.assert_array_equal(stats.values(), 0.0)
    assert stats.fraction_exceeding_l_n == 0.0


def test_audit_reproducible_bit_exact():
    model = build_blobs_mlp(seed=1)
    ds = synthetic_blobs(100, seed=2)
    a = audit_empirical_k(model, ds, 0.5, 50, np.random.default_rng(3), l_n=0.01)
    b = audit_empirical_k(model, ds, 0.5, 50, np.random.default_rng(3), l_n=0.01)
    assert a.values().tobytes() == b.values().tobytes()
    assert a.mean == b.mean and a.max == b.max


def test_audit_caps_n_and_reports_fraction():
    model = build_blobs_mlp(seed=1)
    ds = synthetic_blobs(30, seed=2)
    stats = audit_empirical_k(model, ds, 0.5, 10_000, np.random.default_rng(0), l_n=1e-9)
    assert stats.values().shape == (30,)
    assert stats.fraction_exceeding_l_n == 1.0
    assert stats.max >= stats.mean >= 0.0
