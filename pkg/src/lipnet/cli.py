"""Command-line entry point.

Subcommands: train | sweep | grid | sensitivity | guarantee | ratio-study.
Configuration is a flat JSON document; unknown keys are a hard error so
typos cannot silently fall back to defaults. Every command writes its fully
resolved config next to its outputs and never writes outside --out.

Exit codes: 0 success, 1 run failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from dataclasses import replace

from .data import (LabeledDataset, load_idx, synthetic_blobs, synthetic_digits)
from .ioutil import atomic_write_text
from .layers import build_registered, load_checkpoint, save_checkpoint
from .regularizer import (LipschitzParams, RampClassifier, audit_empirical_k,
                          compute_rho, counterexample_outside_radius, guarantee,
                          one_hot_labels, verify_theorem1_synthetic)
from .reports import (EvalReport, write_eval_report, write_json,
                      write_ratio_table, write_sensitivity_report,
                      write_train_record)
from .seeding import derive_int, derive_rng
from .training import HyperParams, ratio_study, sensitivity, sweep, train
from .version import VERSION

DATA_DIR_ENV = "LIPNET_DATA_DIR"

IDX_STANDARD_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

CONFIG_DEFAULTS = {
    # data
    "dataset": "idx",            # idx | synthetic_digits | synthetic_blobs
    "data_dir": None,            # fallback: $LIPNET_DATA_DIR
    "train_images": None,
    "train_labels": None,
    "test_images": None,
    "test_labels": None,
    "train_limit": None,         # keep only the first N training samples
    "synthetic_train_n": 6000,
    "synthetic_test_n": 1000,
    "synthetic_seed": 1234,
    # model
    "model": "mnist_cnn",
    "arch_seed": None,           # defaults to seed
    # optimizer / schedule
    "lr": 0.05,
    "epochs": 5,
    "batch_size": 100,
    "lr_drops": [],
    "train_ratio": 1.0,
    "seed": 0,
    "momentum": 0.0,
    # regularizer
    "sigma_train": 0.0,
    "beta": 0.0,
    "l_n": 0.01,
    # evaluation
    "sweep_sigmas": [0.0, 0.5, 1.0],
    "corruption_seed": 9000,
    # grid
    "grid_sigma_train": [0.5, 0.75],
    "grid_beta": [10.0],
    "grid_l_n": [0.005, 0.01],
    "grid_include_standard": True,
    "workers": 1,
    # ratio study
    "ratios": [0.1, 0.3, 1.0],
    # sensitivity
    "sensitivity_deltas": {"sigma_train": 0.25, "beta": 1.0, "l_n": 0.005},
    "sigma_eval": 0.5,
    # guarantee
    "n_classes": 10,
    "synthetic_trials": 10000,
    "synthetic_seeds": 5,
    "synthetic_l": 1.0,
    "synthetic_dim": 2,
    "audit_sigma": 0.5,
    "audit_n": 1000,
}

REFERENCE_SENSITIVITIES_CIFAR10 = {
    "sigma_train": 87.20, "beta": 2.55, "l_n": -28.89,
    "note": "externally reported CIFAR-10 sensitivities, annotation only, not asserted",
}


class ConfigError(ValueError):
    pass


def load_config(path, seed_override=None) -> dict:
    cfg = dict(CONFIG_DEFAULTS)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                user = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {path}: {e}")
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = sorted(set(user) - set(CONFIG_DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        cfg.update(user)
        cfg["_explicit_keys"] = sorted(user)
    else:
        cfg["_explicit_keys"] = []
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    return cfg


def _hp_from_cfg(cfg) -> HyperParams:
    # Bad values are config mistakes, so they exit with the usage code.
    try:
        lip = LipschitzParams(sigma_train=float(cfg["sigma_train"]),
                              beta=float(cfg["beta"]), l_n=float(cfg["l_n"]))
        return HyperParams(lip=lip, lr=float(cfg["lr"]), epochs=int(cfg["epochs"]),
                           batch_size=int(cfg["batch_size"]),
                           lr_drops=tuple((int(e), float(f)) for e, f in cfg["lr_drops"]),
                           train_ratio=float(cfg["train_ratio"]), seed=int(cfg["seed"]),
                           momentum=float(cfg["momentum"]))
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e))


def _resolve_idx_path(cfg, key):
    if cfg[key]:
        p = Path(cfg[key])
        if not p.exists():
            raise ConfigError(f"dataset path for {key} does not exist: {p}")
        return p
    data_dir = cfg["data_dir"] or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        raise ConfigError(f"no {key} path: set it in the config, or set data_dir, "
                          f"or export {DATA_DIR_ENV}")
    base = Path(data_dir) / IDX_STANDARD_NAMES[key]
    for candidate in (base, base.with_name(base.name + ".gz")):
        if candidate.exists():
            return candidate
    raise ConfigError(f"no {key} file under {data_dir} "
                      f"(looked for {base.name}[.gz])")


def _limit(ds: LabeledDataset, n) -> LabeledDataset:
    if n is None or int(n) >= ds.n:
        return ds
    n = int(n)
    if n < 1:
        raise ConfigError(f"train_limit must be >= 1, got {n}")
    return LabeledDataset(ds.images[:n], ds.labels[:n], ds.provenance)


def load_datasets(cfg):
    """(train, test) per the config. Raises ConfigError before anything has
    been written, so failed runs leave no partial outputs."""
    kind = cfg["dataset"]
    if kind == "idx":
        train_ds = load_idx(_resolve_idx_path(cfg, "train_images"),
                            _resolve_idx_path(cfg, "train_labels"))
        test_ds = load_idx(_resolve_idx_path(cfg, "test_images"),
                           _resolve_idx_path(cfg, "test_labels"))
        return _limit(train_ds, cfg["train_limit"]), test_ds
    if kind == "synthetic_digits":
        maker = synthetic_digits
    elif kind == "synthetic_blobs":
        maker = synthetic_blobs
    else:
        raise ConfigError(f"unknown dataset kind: {kind!r}")
    seed = int(cfg["synthetic_seed"])
    train_ds = maker(int(cfg["synthetic_train_n"]), derive_int(seed, "train"))
    test_ds = maker(int(cfg["synthetic_test_n"]), derive_int(seed, "test"))
    return _limit(train_ds, cfg["train_limit"]), test_ds


def _arch_seed(cfg) -> int:
    return int(cfg["seed"]) if cfg["arch_seed"] is None else int(cfg["arch_seed"])


def _method(cfg) -> str:
    return "standard" if float(cfg["beta"]) == 0.0 else "proposed"


def _write_resolved_config(cfg, out: Path, command: str, extra: dict | None = None) -> None:
    doc = {k: v for k, v in cfg.items() if not k.startswith("_")}
    doc["command"] = command
    doc["method"] = _method(cfg)
    doc["code_version"] = VERSION
    doc["sigma_units"] = "pixel units on [0,1]-scaled inputs"
    if extra:
        doc.update(extra)
    write_json(out / "resolved_config.json", doc)


def cmd_train(cfg, out: Path, checkpoint=None, synthetic=False) -> int:
    train_ds, _ = load_datasets(cfg)
    hp = _hp_from_cfg(cfg)
    model = build_registered(cfg["model"], _arch_seed(cfg))
    model, record = train(model, train_ds, hp)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.ckpt")
    write_train_record(record, out)
    _write_resolved_config(cfg, out, "train")
    return 0


def cmd_sweep(cfg, out: Path, checkpoint=None, synthetic=False) -> int:
    if checkpoint is None:
        raise ConfigError("sweep needs --checkpoint")
    sigmas = cfg["sweep_sigmas"]
    if not sigmas:
        raise ConfigError("sweep_sigmas must be a nonempty list")
    _, test_ds = load_datasets(cfg)
    model = build_registered(cfg["model"], _arch_seed(cfg))
    model = load_checkpoint(model, checkpoint)
    report = sweep(model, test_ds, sigmas, int(cfg["corruption_seed"]),
                   hyperparams=_hp_from_cfg(cfg).as_dict())
    out.mkdir(parents=True, exist_ok=True)
    write_eval_report(report, out)
    _write_resolved_config(cfg, out, "sweep")
    return 0


def _cell_name(lip: LipschitzParams) -> str:
    if lip.beta == 0:
        return "standard"
    txt = f"s{lip.sigma_train:g}_b{lip.beta:g}_l{lip.l_n:g}"
    return txt.replace(".", "p").replace("+", "").replace("-", "m")


def _grid_cells(cfg):
    cells = []
    if cfg["grid_include_standard"]:
        cells.append(LipschitzParams(0.0, 0.0, float(cfg["l_n"])))
    for s in cfg["grid_sigma_train"]:
        for b in cfg["grid_beta"]:
            for l in cfg["grid_l_n"]:
                cells.append(LipschitzParams(float(s), float(b), float(l)))
    if not cells:
        raise ConfigError("grid is empty: no standard baseline and no cells")
    return cells


def _run_cell(cfg, cell_dir: Path, lip: LipschitzParams, train_ds, test_ds):
    hp = replace(_hp_from_cfg(cfg), lip=lip)
    model = build_registered(cfg["model"], _arch_seed(cfg))
    model, record = train(model, train_ds, hp)
    report = sweep(model, test_ds, cfg["sweep_sigmas"], int(cfg["corruption_seed"]),
                   hyperparams=hp.as_dict())
    cell_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, cell_dir / "model.ckpt")
    write_train_record(record, cell_dir)
    write_eval_report(report, cell_dir)
    (cell_dir / "DONE").write_text("ok\n", encoding="utf-8")
    return report


def cmd_grid(cfg, out: Path, checkpoint=None, synthetic=False) -> int:
    """Train + sweep every (sigma_train, beta, l_n) cell plus the standard
    baseline. Cells with a DONE marker are skipped, so an interrupted grid
    resumes; per-cell failures are recorded and the other cells continue."""
    cells = _grid_cells(cfg)
    sigmas = sorted(float(s) for s in cfg["sweep_sigmas"])
    if not sigmas:
        raise ConfigError("sweep_sigmas must be a nonempty list")
    train_ds, test_ds = load_datasets(cfg)
    out.mkdir(parents=True, exist_ok=True)

    def run_one(lip: LipschitzParams):
        cell_dir = out / _cell_name(lip)
        if (cell_dir / "DONE").exists():
            return "skipped"
        try:
            _run_cell(cfg, cell_dir, lip, train_ds, test_ds)
            return "ok"
        except Exception as e:  # recorded, grid continues
            cell_dir.mkdir(parents=True, exist_ok=True)
            (cell_dir / "error.txt").write_text(f"{type(e).__name__}: {e}\n",
                                                encoding="utf-8")
            return "failed"

    workers = max(1, int(cfg["workers"]))
    if workers == 1:
        outcomes = [run_one(lip) for lip in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_one, cells))

    header = ["method", "sigma_train", "beta", "l_n"]
    header += [f"acc_sigma_{s:g}".replace(".", "p") for s in sigmas]
    lines = [",".join(header)]
    failed = []
    for lip, outcome in zip(cells, outcomes):
        cell_dir = out / _cell_name(lip)
        if outcome == "failed" or not (cell_dir / "DONE").exists():
            failed.append(_cell_name(lip))
            continue
        report = EvalReport.from_csv_text(
            (cell_dir / "eval_report.csv").read_text(encoding="utf-8"))
        acc = {row.sigma_test: row.accuracy for row in report.rows}
        method = "standard" if lip.beta == 0 else "proposed"
        cells_txt = [method, repr(lip.sigma_train), repr(lip.beta), repr(lip.l_n)]
        cells_txt += [repr(acc[s]) for s in sigmas]
        lines.append(",".join(cells_txt))
    atomic_write_text(out / "grid_summary.csv", "\n".join(lines) + "\n")
    _write_resolved_config(cfg, out, "grid", {"failed_cells": failed})
    if failed:
        print(f"error: {len(failed)} grid cell(s) failed: {failed}", file=sys.stderr)
        return 1
    return 0


def cmd_sensitivity(cfg, out: Path, checkpoint=None, synthetic=False) -> int:
    train_ds, test_ds = load_datasets(cfg)
    baseline = _hp_from_cfg(cfg)
    deltas = cfg["sensitivity_deltas"]
    if not isinstance(deltas, dict) or not deltas:
        raise ConfigError("sensitivity_deltas must be a nonempty object")
    report = sensitivity(baseline, deltas, train_ds, test_ds,
                         float(cfg["sigma_eval"]),
                         model_builder=lambda seed: build_registered(cfg["model"], seed),
                         corruption_seed=int(cfg["corruption_seed"]))
    report.metadata["reference_cifar10"] = dict(REFERENCE_SENSITIVITIES_CIFAR10)
    out.mkdir(parents=True, exist_ok=True)
    write_sensitivity_report(report, out)
    _write_resolved_config(cfg, out, "sensitivity")
    return 0


def cmd_guarantee(cfg, out: Path, checkpoint=None, synthetic=False) -> int:
    if "l_n" not in cfg["_explicit_keys"]:
        raise ConfigError("guarantee requires an explicit 'l_n' config key "
                          "(plus optional: n_classes, audit_sigma, audit_n, "
                          "synthetic_trials, synthetic_seeds, synthetic_l, synthetic_dim)")
    l_n = float(cfg["l_n"])
    labels = one_hot_labels(int(cfg["n_classes"]))
    report = guarantee(LipschitzParams(l_n=l_n), labels)
    payload = {"guarantee": report.as_dict(), "rho": compute_rho(labels)}

    if checkpoint is not None:
        _, test_ds = load_datasets(cfg)
        model = build_registered(cfg["model"], _arch_seed(cfg))
        model = load_checkpoint(model, checkpoint)
        stats = audit_empirical_k(model, test_ds, float(cfg["audit_sigma"]),
                                  int(cfg["audit_n"]),
                                  derive_rng(int(cfg["seed"]), "audit"), l_n=l_n)
        payload["audit"] = dict(stats.as_dict(), sigma=float(cfg["audit_sigma"]),
                                fraction_within=1.0 - stats.fraction_exceeding_l_n)

    if synthetic:
        l = float(cfg["synthetic_l"])
        dim = int(cfg["synthetic_dim"])
        oracle = RampClassifier(l, labels, dim=dim)
        per_seed = []
        for i in range(int(cfg["synthetic_seeds"])):
            rng = derive_rng(int(cfg["seed"]), "thm1", i)
            per_seed.append(verify_theorem1_synthetic(
                oracle, l, labels, int(cfg["synthetic_trials"]), rng))
        x, d, before, after = counterexample_outside_radius(oracle, l, labels)
        payload["synthetic"] = {
            "lipschitz_l": l, "dim": dim,
            "trials_per_seed": int(cfg["synthetic_trials"]),
            "violations_per_seed": per_seed,
            "total_violations": int(sum(per_seed)),
            "counterexample": {"distortion_norm_over_radius": 1.5,
                               "label_before": before, "label_after": after},
        }

    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "guarantee_report.json", payload)
    _write_resolved_config(cfg, out, "guarantee")
    return 0


def cmd_ratio_study(cfg, out: Path, checkpoint=None, synthetic=False) -> int:
    ratios = cfg["ratios"]
    if not ratios:
        raise ConfigError("ratios must be a nonempty list")
    train_ds, test_ds = load_datasets(cfg)
    rows = ratio_study(_arch_seed(cfg), train_ds, test_ds, ratios,
                       _hp_from_cfg(cfg), cfg["sweep_sigmas"],
                       model_builder=lambda seed: build_registered(cfg["model"], seed),
                       corruption_seed=int(cfg["corruption_seed"]))
    out.mkdir(parents=True, exist_ok=True)
    write_ratio_table(rows, out)
    _write_resolved_config(cfg, out, "ratio-study")
    return 0


COMMANDS = {
    "train": cmd_train,
    "sweep": cmd_sweep,
    "grid": cmd_grid,
    "sensitivity": cmd_sensitivity,
    "guarantee": cmd_guarantee,
    "ratio-study": cmd_ratio_study,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lipnet",
        description="Train and audit Lipschitz-regularized classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None,
                       help="flat JSON config; defaults are used when omitted")
        p.add_argument("--out", type=Path, required=True,
                       help="output directory (all artifacts go here)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--checkpoint", type=Path, default=None,
                       help="checkpoint to evaluate (sweep, guarantee)")
        p.add_argument("--synthetic", action="store_true",
                       help="guarantee: also run the exact synthetic oracle")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        return COMMANDS[args.command](cfg, args.out, checkpoint=args.checkpoint,
                                      synthetic=args.synthetic)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
