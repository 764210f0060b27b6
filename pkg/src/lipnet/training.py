"""Training loop and the evaluation protocol.

Everything here is deterministic given (seed, hyperparams, data): noise,
shuffling and subsampling all come from named streams derived from the run
seed, so reruns produce byte-identical checkpoints and records.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .data import LabeledDataset, batches, corrupt, subsample
from .layers import Model, checkpoint_bytes, forward
from .regularizer import LipschitzParams, aggregated_loss, pass_counter
from .reports import (EpochRecord, EvalReport, EvalRow, SensitivityEntry,
                      SensitivityReport, StepRecord, TrainRecord)
from .seeding import derive_int, derive_key, derive_rng
from .tensor import Graph, Tensor, backward
from .version import VERSION


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class HyperParams:
    """One training run's knobs.

    lr_drops is a tuple of (epoch, factor) pairs: at the start of that epoch
    the current learning rate is divided by the factor. Epochs are 1-based,
    strictly increasing, and must lie within [1, epochs]. momentum is plain
    classical momentum and defaults to off.
    """
    lip: LipschitzParams = LipschitzParams()
    lr: float = 0.05
    epochs: int = 5
    batch_size: int = 100
    lr_drops: tuple = ()
    train_ratio: float = 1.0
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.train_ratio <= 1.0:
            raise ValueError(f"train_ratio must be in (0, 1], got {self.train_ratio}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        drops = tuple((int(e), float(f)) for e, f in self.lr_drops)
        object.__setattr__(self, "lr_drops", drops)
        last = 0
        for e, f in drops:
            if not 1 <= e <= self.epochs:
                raise ValueError(f"lr drop at epoch {e} outside [1, {self.epochs}]")
            if e <= last:
                raise ValueError("lr drop epochs must be strictly increasing")
            if f <= 0:
                raise ValueError(f"lr drop factor must be > 0, got {f}")
            last = e

    def as_dict(self) -> dict:
        return asdict(self)


class SGD:
    """Plain stochastic gradient descent with optional classical momentum
    (velocity = mu * velocity + grad; param -= lr * velocity)."""

    def __init__(self, momentum: float = 0.0):
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict, lr: float) -> None:
        for name, p in params.items():
            if p.grad is None:
                continue
            if self.momentum > 0.0:
                v = self.velocity.get(name)
                v = p.grad.copy() if v is None else self.momentum * v + p.grad
                self.velocity[name] = v
                p.data -= lr * v
            else:
                p.data -= lr * p.grad


TRAIN_ACC_PROBE_CAP = 5000  # per-epoch train accuracy uses at most this many samples


def train(model: Model, ds: LabeledDataset, hp: HyperParams):
    """SGD on the aggregated loss. Returns (model, TrainRecord).

    Applies hp.train_ratio subsampling first. Aborts on a non-finite loss
    with the offending step's loss parts in the message.
    """
    if hp.train_ratio < 1.0:
        ds = subsample(ds, hp.train_ratio, derive_key(hp.seed, "subset"))
    probe = LabeledDataset(ds.images[:TRAIN_ACC_PROBE_CAP],
                           ds.labels[:TRAIN_ACC_PROBE_CAP], ds.provenance)
    opt = SGD(hp.momentum)
    noise_rng = derive_rng(hp.seed, "noise")
    drops = dict(hp.lr_drops)
    lr = hp.lr
    steps: list[StepRecord] = []
    epochs: list[EpochRecord] = []
    passes_before = pass_counter.perturbed_passes
    step_i = 0
    for epoch in range(1, hp.epochs + 1):
        if epoch in drops:
            lr /= drops[epoch]
        t0 = time.perf_counter()
        for xb, yb in batches(ds, hp.batch_size, derive_key(hp.seed, "shuffle", epoch)):
            graph = Graph()
            loss, parts = aggregated_loss(model, Tensor(xb), yb, hp.lip, noise_rng, graph)
            total = loss.item()
            if not math.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step_i}: total={total} "
                    f"usual={parts['usual']} lipschitz={parts['lipschitz']}")
            model.zero_grad()
            backward(loss, graph)
            opt.step(model.params, lr)
            steps.append(StepRecord(step_i, parts["usual"], parts["lipschitz"],
                                    parts["mean_k"], total))
            step_i += 1
        epochs.append(EpochRecord(epoch, evaluate(model, probe)["accuracy"],
                                  time.perf_counter() - t0))
    meta = {"perturbed_passes": pass_counter.perturbed_passes - passes_before,
            "n_train": ds.n, "n_steps": step_i, "final_lr": lr}
    return model, TrainRecord(steps, epochs, meta)


def _batched_probs(model: Model, images: np.ndarray, batch_size: int = 500) -> np.ndarray:
    chunks = [forward(model, Tensor(images[s:s + batch_size])).data
              for s in range(0, images.shape[0], batch_size)]
    return np.concatenate(chunks, axis=0)


def _acc_conf(probs: np.ndarray, labels: np.ndarray):
    predicted = probs.argmax(axis=1)
    correct = predicted == labels
    accuracy = float(correct.mean())
    if correct.any():
        conf = float(probs[np.flatnonzero(correct), labels[correct]].mean())
    else:
        conf = float("nan")
    return accuracy, conf


def evaluate(model: Model, ds: LabeledDataset) -> dict:
    """Accuracy (argmax, ties to the lowest class) and mean confidence over
    the correctly classified samples. Pure: no RNG, no model mutation."""
    accuracy, conf = _acc_conf(_batched_probs(model, ds.images), ds.labels)
    return {"accuracy": accuracy, "mean_confidence_on_correct": conf}


def sweep(model: Model, clean_test: LabeledDataset, sigmas, corruption_seed,
          hyperparams: dict | None = None) -> EvalReport:
    """One evaluation row per test-noise level, rows sorted by sigma.

    Corruption is seeded per sigma from corruption_seed only, so every model
    swept with the same seed sees identical corrupted inputs. mean_k is the
    empirical quotient between corrupted and clean outputs (NaN at sigma 0).
    """
    sigmas = [float(s) for s in sigmas]
    if not sigmas:
        raise ValueError("sweep: sigmas must be nonempty")
    if any(s < 0 for s in sigmas):
        raise ValueError(f"sweep: sigmas must be >= 0, got {sigmas}")
    clean_probs = _batched_probs(model, clean_test.images)
    rows = []
    for sigma in sorted(sigmas):
        if sigma == 0.0:
            probs, mean_k = clean_probs, float("nan")
        else:
            noisy = corrupt(clean_test, sigma,
                            derive_key(corruption_seed, "sigma", repr(sigma)))
            probs = _batched_probs(model, noisy.images)
            d_out = probs - clean_probs
            d_in = (noisy.images - clean_test.images).reshape(clean_test.n, -1)
            denom = np.maximum(np.sqrt((d_in * d_in).sum(axis=1)), 1e-12)
            mean_k = float((np.sqrt((d_out * d_out).sum(axis=1)) / denom).mean())
        accuracy, conf = _acc_conf(probs, clean_test.labels)
        rows.append(EvalRow(sigma, accuracy, conf, mean_k, clean_test.n))
    metadata = {
        "hyperparams": hyperparams,
        "model_hash": hashlib.sha256(checkpoint_bytes(model)).hexdigest(),
        "dataset": clean_test.provenance.as_dict(),
        "corruption_seed": _seed_note(corruption_seed),
        "code_version": VERSION,
    }
    return EvalReport(rows, metadata)


def _seed_note(seed):
    if seed is None or isinstance(seed, (int, np.integer)):
        return None if seed is None else int(seed)
    return list(map(int, seed))


def ratio_study(arch_seed: int, ds_train: LabeledDataset, ds_test: LabeledDataset,
                ratios, hp: HyperParams, sigmas, model_builder,
                corruption_seed=None):
    """Fresh model + subsampled training set per ratio, swept on the shared
    corrupted test sets. Returns rows of (ratio, sigma_test, accuracy).

    Run seeds are derived from (hp.seed, ratio index); the model builder is
    reseeded with arch_seed every time so only the data amount varies.
    """
    ratios = [float(r) for r in ratios]
    if any(not 0.0 < r <= 1.0 for r in ratios):
        raise ValueError(f"ratio_study: ratios must lie in (0, 1], got {ratios}")
    if corruption_seed is None:
        corruption_seed = derive_int(hp.seed, "ratio-corruption")
    rows = []
    for i, ratio in enumerate(ratios):
        run_hp = replace(hp, train_ratio=ratio, seed=derive_int(hp.seed, "ratio", i))
        model, _ = train(model_builder(arch_seed), ds_train, run_hp)
        report = sweep(model, ds_test, sigmas, corruption_seed)
        rows.extend((ratio, row.sigma_test, row.accuracy) for row in report.rows)
    return rows


SENSITIVITY_PARAMS = ("sigma_train", "beta", "l_n", "control")


def sensitivity(baseline: HyperParams, deltas: dict, train_ds: LabeledDataset,
                test_ds: LabeledDataset, sigma_eval: float, model_builder,
                corruption_seed=None) -> SensitivityReport:
    """Finite-difference sensitivity of test accuracy (percentage points) to
    each regularizer hyperparameter at the given test-noise level.

    Every run reuses the baseline's init and data-order seeds, so the lone
    changed hyperparameter is the only difference. The "control" key retrains
    with nothing changed; determinism makes its sensitivity exactly 0.
    """
    unknown = set(deltas) - set(SENSITIVITY_PARAMS)
    if unknown:
        raise ValueError(f"sensitivity: unknown parameters {sorted(unknown)}, "
                         f"allowed: {list(SENSITIVITY_PARAMS)}")
    if any(float(d) == 0.0 for d in deltas.values()):
        raise ValueError("sensitivity: every delta must be nonzero")
    if corruption_seed is None:
        corruption_seed = derive_int(baseline.seed, "sensitivity-corruption")

    def run(hp: HyperParams) -> float:
        model, _ = train(model_builder(baseline.seed), train_ds, hp)
        report = sweep(model, test_ds, [sigma_eval], corruption_seed)
        return report.rows[0].accuracy * 100.0

    acc_before = run(baseline)
    entries = []
    for name in sorted(deltas):
        delta = float(deltas[name])
        if name == "control":
            acc_after = run(baseline)
        else:
            lip = replace(baseline.lip, **{name: getattr(baseline.lip, name) + delta})
            acc_after = run(replace(baseline, lip=lip))
        entries.append(SensitivityEntry(name, delta, acc_before, acc_after,
                                        (acc_after - acc_before) / delta))
    metadata = {"sigma_eval": float(sigma_eval), "units": "percentage points",
                "corruption_seed": _seed_note(corruption_seed),
                "code_version": VERSION}
    return SensitivityReport(baseline=baseline.as_dict(), entries=entries,
                             metadata=metadata)
