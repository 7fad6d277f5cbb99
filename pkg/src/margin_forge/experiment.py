"""Experiment configuration and the end-to-end run/compare drivers."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
import statistics
import tempfile
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .classifier import init_network
from .drw_schedule import TrainConfig, fmt, train, write_epoch_log
from .errors import ConfigurationError
from .imbalance_data import (
    CountProfile,
    LabeledDataset,
    gaussian_mixture,
    load_cifar10_binary,
    long_tailed_counts,
    step_counts,
    subsample,
    uniform_counts,
)
from .margin_losses import LOSS_KINDS, GradMode, LossSpec, MarginParams
from .metrics import evaluate, write_per_class_csv, write_summary_json
from .plotting import plot_per_class

logger = logging.getLogger(__name__)

OUT_ENV = "MARGIN_FORGE_OUT"

# best (beta, delta_neg) per dataset / imbalance type / ratio from the ablation tables
TABLE_DEFAULTS = {
    ("cifar10", "long_tailed", 100): (1.5, 0.6),
    ("cifar10", "step", 100): (1.3, 0.6),
    ("cifar10", "long_tailed", 10): (1.2, 0.7),
    ("cifar10", "step", 10): (1.0, 2.1),
    ("cifar100", "long_tailed", 100): (1.3, 1.2),
    ("cifar100", "step", 100): (1.8, 1.8),
    ("cifar100", "long_tailed", 10): (1.4, 1.5),
    ("cifar100", "step", 10): (1.1, 2.4),
}

DEFAULTS = {
    "name": None,
    "dataset": {
        "kind": "gaussian",
        "K": 3,
        "d": 10,
        "n_max": 2000,
        "rho": 100.0,
        "profile": "long_tailed",
        "majority_frac": 0.5,
        "separation": 2.0,
        "seed": 0,
        "n_val": 1000,
        "cifar_path": None,
    },
    "loss": {
        "kind": "mm",
        "delta_neg": None,
        "beta": None,
        "C": None,
        "s": 10.0,
        "grad_mode": "full",
        "focal_gamma": 2.0,
    },
    "model": {"width": 64, "depth": 1},
    "schedule": {
        "total_epochs": 50,
        "switch_epoch": None,
        "base_lr": 0.1,
        "warmup_epochs": 5,
        "decay_points": None,
        "momentum": 0.9,
        "weight_decay": 2e-4,
        "batch_size": 128,
        "seed": 0,
        "weight_norm_mode": "batch_mean_one",
        "cb_beta": 0.9999,
        "sampler": "uniform",
        "drw": True,
    },
    "output": {"directory": "runs/experiment"},
}

_ENUMS = {
    ("dataset", "kind"): ("gaussian", "cifar10", "cifar100"),
    ("dataset", "profile"): ("long_tailed", "step", "uniform"),
    ("loss", "kind"): LOSS_KINDS,
    ("loss", "grad_mode"): tuple(m.value for m in GradMode),
    ("schedule", "weight_norm_mode"): ("raw_inverse", "batch_mean_one", "cb_effective"),
    ("schedule", "sampler"): ("uniform", "inverse"),
}


def bundled_config(name: str) -> Path | None:
    """Path of a config shipped with the package, or None."""
    stem = name if name.endswith(".json") else name + ".json"
    ref = resources.files("margin_forge") / "configs" / stem
    return Path(str(ref)) if ref.is_file() else None


def parse_override(item: str) -> tuple[str, object]:
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} is not of the form section.key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_override(cfg: dict, key: str, value) -> None:
    parts = key.split(".")
    if len(parts) == 1 and parts[0] == "name":
        cfg["name"] = value
        return
    if len(parts) != 2 or parts[0] not in DEFAULTS or not isinstance(DEFAULTS[parts[0]], dict):
        raise ConfigurationError(f"unknown config field {key!r}")
    section, field_ = parts
    if field_ not in DEFAULTS[section]:
        raise ConfigurationError(f"unknown config field {key!r}")
    cfg.setdefault(section, {})[field_] = value


def load_config(path, overrides=()) -> dict:
    """Read a JSON config, fill defaults, apply ``section.key=value`` overrides."""
    path = Path(path)
    if not path.exists():
        bundled = bundled_config(path.name)
        if bundled is None:
            raise ConfigurationError(f"config file {path} does not exist")
        path = bundled
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    cfg = copy.deepcopy(DEFAULTS)
    for section, body in raw.items():
        if section == "name":
            cfg["name"] = body
            continue
        if section not in DEFAULTS:
            raise ConfigurationError(f"unknown config section {section!r}")
        if not isinstance(body, dict):
            raise ConfigurationError(f"config section {section!r} must be an object")
        for key, value in body.items():
            apply_override(cfg, f"{section}.{key}", value)
    for item in overrides:
        apply_override(cfg, *parse_override(item) if isinstance(item, str) else item)
    if cfg["name"] is None:
        cfg["name"] = path.stem
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    for (section, key), allowed in _ENUMS.items():
        if cfg[section][key] not in allowed:
            raise ConfigurationError(
                f"{section}.{key} must be one of {list(allowed)}, got {cfg[section][key]!r}")
    ds = cfg["dataset"]
    if ds["kind"] != "gaussian" and not ds["cifar_path"]:
        raise ConfigurationError("dataset.cifar_path is required for CIFAR datasets")
    if ds["cifar_path"] and not Path(ds["cifar_path"]).exists():
        raise ConfigurationError(f"dataset.cifar_path {ds['cifar_path']} does not exist")
    for key in ("K", "d", "n_max", "n_val"):
        if not isinstance(ds[key], int) or ds[key] < 1:
            raise ConfigurationError(f"dataset.{key} must be a positive integer, got {ds[key]!r}")
    if cfg["model"]["depth"] < 0 or cfg["model"]["width"] < 1:
        raise ConfigurationError("model.depth must be >= 0 and model.width >= 1")
    # builders raise ConfigurationError for remaining range problems
    margin_params(cfg)
    train_config(cfg)


def margin_params(cfg: dict) -> MarginParams:
    loss = cfg["loss"]
    beta, delta_neg = table_defaults(cfg)
    if loss["beta"] is not None:
        beta = float(loss["beta"])
    if loss["delta_neg"] is not None:
        delta_neg = float(loss["delta_neg"])
    return MarginParams(
        delta_neg=delta_neg,
        beta=beta,
        C=None if loss["C"] is None else float(loss["C"]),
        scale=float(loss["s"]),
        class_aware=loss["kind"] == "mm-ldam",
        grad_mode=loss["grad_mode"],
    )


def table_defaults(cfg: dict) -> tuple[float, float]:
    """(beta, delta_neg) of the closest published setting."""
    ds = cfg["dataset"]
    family = "cifar100" if ds["kind"] == "cifar100" or ds["K"] > 10 else "cifar10"
    profile = "step" if ds["profile"] == "step" else "long_tailed"
    ratio = 10 if float(ds["rho"]) < math.sqrt(10 * 100) else 100
    return TABLE_DEFAULTS[(family, profile, ratio)]


def train_config(cfg: dict, seed: int | None = None) -> TrainConfig:
    sch = cfg["schedule"]
    T = int(sch["total_epochs"])
    base = TrainConfig.scaled(T) if T > 0 else TrainConfig(total_epochs=0, switch_epoch=0,
                                                           decay_points=(), warmup_epochs=0)
    switch = base.switch_epoch if sch["switch_epoch"] is None else int(sch["switch_epoch"])
    if not sch["drw"]:
        switch = T
    warmup = int(sch["warmup_epochs"])
    if sch["decay_points"] is None:
        decay = base.decay_points
        # short runs: the warm-up must still end before the scaled first decay
        warmup = min(warmup, base.warmup_epochs)
    else:
        decay = tuple((int(e), float(f)) for e, f in sch["decay_points"])
    try:
        return TrainConfig(
            total_epochs=T,
            switch_epoch=switch,
            base_lr=float(sch["base_lr"]),
            warmup_epochs=warmup,
            decay_points=decay,
            momentum=float(sch["momentum"]),
            weight_decay=float(sch["weight_decay"]),
            batch_size=int(sch["batch_size"]),
            seed=int(sch["seed"] if seed is None else seed),
            weight_norm_mode=sch["weight_norm_mode"],
            cb_beta=float(sch["cb_beta"]),
            sampler=sch["sampler"],
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"schedule: {exc}") from exc


def count_profile(cfg: dict) -> CountProfile:
    ds = cfg["dataset"]
    K, n_max, rho = ds["K"], ds["n_max"], float(ds["rho"])
    if ds["profile"] == "uniform":
        return uniform_counts(K, n_max)
    if ds["profile"] == "step":
        return step_counts(K, n_max, rho, float(ds["majority_frac"]))
    return long_tailed_counts(K, n_max, rho)


@dataclass
class Datasets:
    train: LabeledDataset
    val: LabeledDataset
    profile: CountProfile


def build_datasets(cfg: dict, seed: int | None = None) -> Datasets:
    ds = cfg["dataset"]
    seed = int(ds["seed"] if seed is None else seed)
    profile = count_profile(cfg)
    if ds["kind"] == "gaussian":
        train_set = gaussian_mixture(ds["K"], ds["d"], profile.counts, float(ds["separation"]), seed)
        val = gaussian_mixture(ds["K"], ds["d"], [ds["n_val"]] * ds["K"], float(ds["separation"]),
                               seed + 1_000_003)
        return Datasets(train_set, val, profile)
    label_bytes = 1 if ds["kind"] == "cifar10" else 2
    num = 10 if ds["kind"] == "cifar10" else 100
    root = Path(ds["cifar_path"])
    full = load_cifar10_binary(root, num, label_bytes)
    test_file = root / ("test_batch.bin" if label_bytes == 1 else "test.bin")
    val = load_cifar10_binary(test_file, num, label_bytes) if root.is_dir() and test_file.exists() else full
    return Datasets(subsample(full, profile, seed), val, profile)


def build_loss(cfg: dict, profile: CountProfile) -> LossSpec:
    loss = cfg["loss"]
    return LossSpec(kind=loss["kind"], margin=margin_params(cfg), counts=profile.counts,
                    focal_gamma=float(loss["focal_gamma"]))


def output_dir(cfg: dict) -> Path:
    return Path(os.environ.get(OUT_ENV) or cfg["output"]["directory"])


def run_experiment(cfg: dict, seed: int | None = None, out_dir=None) -> dict:
    """Train and evaluate one configuration; write the four artifacts.

    ``seed`` (when given) replaces both the dataset and the training seed.
    Returns the summary dictionary that is also written to ``summary.json``.
    """
    out = Path(out_dir) if out_dir is not None else output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    data = build_datasets(cfg, seed)
    tcfg = train_config(cfg, seed)
    margin = margin_params(cfg)
    depth, width = int(cfg["model"]["depth"]), int(cfg["model"]["width"])
    model = init_network(data.train.features.shape[1], data.train.num_classes, (width,) * depth,
                         scale=margin.scale, seed=tcfg.seed)
    spec = build_loss(cfg, data.profile)
    params, log = train(data.train, model, spec, tcfg, data.profile.counts)
    report = evaluate(params, data.val, data.profile)

    write_epoch_log(log, out / "epochs.csv")
    write_per_class_csv(report, out / "per_class.csv")
    plot_per_class(out / "per_class.csv", out / "per_class.svg")
    summary = {
        "name": cfg["name"],
        "seed": tcfg.seed,
        "loss": dict(cfg["loss"], beta=margin.beta, delta_neg=margin.delta_neg),
        "train_counts": list(data.profile.counts.counts),
        "switch_epoch": tcfg.switch_epoch,
        **report.summary(),
    }
    write_summary_json(summary, out / "summary.json")
    return summary


COMPARE_COLUMNS = ("method", "runs", "overall_mean", "overall_std", "majority_mean",
                   "majority_std", "minority_mean", "minority_std", "failed")


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    return statistics.fmean(values), statistics.stdev(values) if len(values) > 1 else 0.0


def compare(configs: list[dict], seeds: list[int], out_dir) -> tuple[list[dict], int]:
    """Run every config under every seed.

    Returns one row of statistics per config (in input order) and the number
    of failed runs; failed runs are left out of the statistics.
    """
    out = Path(out_dir)
    rows, failures = [], 0
    for cfg in configs:
        results, failed = [], 0
        for seed in seeds:
            try:
                results.append(run_experiment(cfg, seed, out / cfg["name"] / f"seed_{seed}"))
            except Exception as exc:  # noqa: BLE001 - any run failure becomes a partial row
                logger.error("%s seed %s failed: %s", cfg["name"], seed, exc)
                failed += 1
        failures += failed
        overall = _mean_std([r["overall_error"] for r in results])
        major = _mean_std([r["majority_error"] for r in results])
        minor = _mean_std([r["minority_error"] for r in results])
        rows.append({
            "method": cfg["name"], "runs": len(results),
            "overall_mean": overall[0], "overall_std": overall[1],
            "majority_mean": major[0], "majority_std": major[1],
            "minority_mean": minor[0], "minority_std": minor[1],
            "failed": failed,
        })
    return rows, failures


def write_compare_csv(rows: list[dict], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COMPARE_COLUMNS)
        for row in rows:
            writer.writerow([row[c] if isinstance(row[c], (str, int)) else fmt(row[c])
                             for c in COMPARE_COLUMNS])


def minority_errors(cfg: dict, seeds) -> np.ndarray:
    """Minority-class error for each seed; artifacts go to a scratch directory."""
    errs = []
    with tempfile.TemporaryDirectory() as tmp:
        for seed in seeds:
            errs.append(run_experiment(cfg, seed, Path(tmp) / str(seed))["minority_error"])
    return np.asarray(errs)
