"""Train/evaluate/sweep drivers shared by the CLI and the acceptance tests."""

from __future__ import annotations

import csv
import io
import logging
from decimal import Decimal
from fractions import Fraction
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .data import LabeledImageSet, load_idx, split_per_class
from .errors import ConfigError
from .vision import N_CLASSES, Evaluation, Network, TrainingReport, evaluate, train

log = logging.getLogger(__name__)

CSV_SCHEMA_VERSION = 1
SWEEP_AXES = {"sample-size": "n_per_class", "rho": "rho", "threshold": "threshold"}


def load_dataset(cfg: RunConfig) -> LabeledImageSet:
    if not cfg.images or not cfg.labels:
        raise ConfigError("both images and labels paths are required")
    return load_idx(cfg.images, cfg.labels)


def split(cfg: RunConfig, ds: LabeledImageSet) -> tuple[LabeledImageSet, LabeledImageSet]:
    return split_per_class(ds, cfg.n_per_class, cfg.test_per_class, cfg.seed)


def fit(cfg: RunConfig, train_set: LabeledImageSet) -> tuple[Network, TrainingReport]:
    network = Network(cfg.network_config())
    log.info("training on %d images (%d angles)", len(train_set), len(cfg.angles))
    report = train(network, train_set.images, train_set.labels, angles=cfg.angles, epochs=cfg.epochs)
    log.info("L1 %d nodes, L2 %d nodes, %.1fs", report.l1_nodes, report.l2_nodes, report.seconds)
    return network, report


@dataclass
class RunResult:
    value: float
    network: Network
    report: TrainingReport
    evaluation: Evaluation


def train_and_evaluate(
    cfg: RunConfig, ds: Optional[LabeledImageSet] = None
) -> RunResult:
    ds = load_dataset(cfg) if ds is None else ds
    train_set, test_set = split(cfg, ds)
    network, report = fit(cfg, train_set)
    evaluation, _ = evaluate(network, test_set.images, test_set.labels, workers=cfg.workers)
    return RunResult(float("nan"), network, report, evaluation)


def sweep(
    cfg: RunConfig, axis: str, values: Sequence[float], ds: Optional[LabeledImageSet] = None
) -> list[RunResult]:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    if len(values) < 2:
        raise ConfigError("a sweep needs at least two values")
    key = SWEEP_AXES[axis]
    ds = load_dataset(cfg) if ds is None else ds
    results = []
    for v in values:
        if key == "n_per_class":
            if float(v) != int(v):
                raise ConfigError(f"sample size must be an integer, got {v}")
            v = int(v)
        run_cfg = cfg.replace(**{key: v})
        res = train_and_evaluate(run_cfg, ds)
        res.value = v
        log.info("%s=%s accuracy %.4f", axis, v, res.evaluation.accuracy)
        results.append(res)
    return results


def _header(command: str, cfg: RunConfig) -> str:
    return f"# arn {command} schema=v{CSV_SCHEMA_VERSION} config={cfg.digest()}\n"


def confusion_csv(evaluation: Evaluation, cfg: RunConfig, command: str = "eval") -> str:
    buf = io.StringIO()
    buf.write(_header(command, cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true"] + [str(c) for c in range(N_CLASSES)] + ["unrecognized", "total"])
    for c in range(N_CLASSES):
        row = evaluation.exact[c]
        w.writerow([c] + [_exact(x) for x in row] + [_exact(sum(row))])
    return buf.getvalue()


def sweep_csv(axis: str, results: Sequence[RunResult], cfg: RunConfig, timing: bool = True) -> str:
    buf = io.StringIO()
    buf.write(_header(f"sweep {axis}", cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([SWEEP_AXES[axis], "accuracy", "l1_nodes", "l2_nodes", "train_seconds"])
    for r in results:
        w.writerow([
            r.value,
            _fmt(r.evaluation.accuracy),
            r.report.l1_nodes,
            r.report.l2_nodes,
            f"{r.report.seconds:.3f}" if timing else "",
        ])
    return buf.getvalue()


def summary(evaluation: Evaluation) -> dict:
    per_class = evaluation.per_class_accuracy
    return {
        "accuracy": evaluation.accuracy,
        "per_class_accuracy": {str(c): (None if np.isnan(a) else float(a)) for c, a in enumerate(per_class)},
        "counts": evaluation.counts,
        "total": int(evaluation.per_class_total.sum()),
    }


def _exact(x: Fraction) -> str:
    """Terminating decimals as decimals (29.5), anything else as p/q (59/3)."""
    d = x.denominator
    while d % 2 == 0:
        d //= 2
    while d % 5 == 0:
        d //= 5
    if d != 1:
        return f"{x.numerator}/{x.denominator}"
    text = f"{Decimal(x.numerator) / Decimal(x.denominator):f}"
    return text.rstrip("0").rstrip(".") if "." in text else text


def _fmt(x: float) -> str:
    # fractional cells come from equal splits, so 6 decimals is exact enough and stable
    return f"{x:.6f}".rstrip("0").rstrip(".") if x != int(x) else str(int(x))
