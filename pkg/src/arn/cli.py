"""Command-line entry point: ``arn train | eval | sweep | trace``.

Exit status: 0 success, 2 configuration error, 3 I/O or parse error,
4 model state error (version, hash, capacity, untrained).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import experiment
from .config import RunConfig, load_config, write_config
from .errors import ConfigError, ParameterError, ParseError, StateError
from .persist import load_model, save_model
from .vision import Network, evaluate, trace_explain


EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_STATE = 0, 2, 3, 4
MODEL_FILE = "model.arn"
# config fields that must agree between a stored model and the run evaluating it
STRUCTURAL_KEYS = ("grid_rows", "grid_cols", "k_cap")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON run config; flags override it")
    p.add_argument("--images", help="IDX image file (gzip ok)")
    p.add_argument("--labels", help="IDX label file (gzip ok)")
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--test-per-class", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _network_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rho", type=float)
    p.add_argument("--threshold", type=float, help="L2 (decision) threshold")
    p.add_argument("--l1-threshold", type=float, help="threshold of the shared tile layer")
    p.add_argument("--grid-rows", type=int)
    p.add_argument("--grid-cols", type=int)
    p.add_argument("--k-cap", type=int)
    p.add_argument("--pixel-floor", type=float)
    p.add_argument("--angles", type=_float_list, help="perturbation angles, e.g. -10,-5,5,10 ('' for none)")
    p.add_argument("--l2-rho-scale", type=float)
    p.add_argument("--jitter", type=int)
    p.add_argument("--dilation-factor", type=float)
    p.add_argument("--dilation-steps", type=int)
    p.add_argument("--blank-level", type=float)
    p.add_argument("--tuning", choices=["frozen", "stats"])
    p.add_argument("--epochs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arn", description="Auto Resonance Network digit classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network and write the model file")
    _common(p)
    _network_flags(p)

    p = sub.add_parser("eval", help="confusion matrix and accuracy on the held-out split")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--on-train", action="store_true", help="evaluate the training split instead")

    p = sub.add_parser("sweep", help="train and evaluate along one parameter axis")
    _common(p)
    _network_flags(p)
    p.add_argument("--axis", required=True, choices=sorted(experiment.SWEEP_AXES))
    p.add_argument("--values", required=True, type=_float_list)
    p.add_argument("--no-timing", action="store_true", help="leave train_seconds empty for byte-stable CSVs")

    p = sub.add_parser("trace", help="explain the recognition of one held-out image")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--index", type=int, required=True)
    return parser


_NOT_CONFIG = {"command", "config", "verbose", "model", "on_train", "axis", "values", "no_timing", "index"}


def resolve_config(args: argparse.Namespace, base: Optional[dict] = None) -> RunConfig:
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    return load_config(args.config, overrides, base)


def _prepare_output(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "resolved_config.yaml")
    return out


def _load_for_eval(args: argparse.Namespace) -> tuple[Network, RunConfig]:
    network, meta = load_model(args.model)
    stored = meta.get("run_config")
    if args.config is None and stored is None:
        raise ConfigError("model carries no run config; pass --config")
    cfg = resolve_config(args, stored)
    if stored is not None:
        for key in STRUCTURAL_KEYS:
            if stored.get(key) != getattr(cfg, key):
                raise ConfigError(f"{key} is {getattr(cfg, key)} here but the model was built with {stored.get(key)}")
    return network, cfg


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    ds = experiment.load_dataset(cfg)
    train_set, _ = experiment.split(cfg, ds)
    network, report = experiment.fit(cfg, train_set)
    out = _prepare_output(cfg)
    save_model(network, out / MODEL_FILE, {"run_config": cfg.to_dict(), "generator": "PCG64"})
    (out / "train_report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(f"model: {out / MODEL_FILE}")
    print(f"images {report.images}  presentations {report.presentations}")
    print(f"L1 nodes {report.l1_nodes}  L2 nodes {report.l2_nodes}  train seconds {report.seconds:.1f}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    network, cfg = _load_for_eval(args)
    ds = experiment.load_dataset(cfg)
    train_set, test_set = experiment.split(cfg, ds)
    target = train_set if args.on_train else test_set
    if len(target) == 0:
        raise StateError("evaluation set is empty")
    evaluation, _ = evaluate(network, target.images, target.labels, workers=cfg.workers)
    out = _prepare_output(cfg)
    name = "confusion_train.csv" if args.on_train else "confusion.csv"
    (out / name).write_text(experiment.confusion_csv(evaluation, cfg))
    summary = experiment.summary(evaluation)
    (out / name.replace(".csv", ".json").replace("confusion", "summary")).write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    print(f"accuracy {summary['accuracy']:.4f} on {summary['total']} images")
    print("  ".join(f"{k} {v}" for k, v in summary["counts"].items()))
    for c, a in summary["per_class_accuracy"].items():
        print(f"  digit {c}: {'-' if a is None else f'{a:.4f}'}")
    print(f"confusion matrix: {out / name}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    results = experiment.sweep(cfg, args.axis, args.values)
    out = _prepare_output(cfg)
    path = out / f"sweep_{args.axis}.csv"
    path.write_text(experiment.sweep_csv(args.axis, results, cfg, timing=not args.no_timing))
    for r in results:
        print(f"{args.axis}={r.value}: accuracy {r.evaluation.accuracy:.4f}  L1 {r.report.l1_nodes}  L2 {r.report.l2_nodes}")
    print(f"sweep: {path}")
    return EXIT_OK


def cmd_trace(args: argparse.Namespace) -> int:
    network, cfg = _load_for_eval(args)
    _, test_set = experiment.split(cfg, experiment.load_dataset(cfg))
    if not 0 <= args.index < len(test_set):
        raise ConfigError(f"index {args.index} outside the held-out set of {len(test_set)} images")
    label = int(test_set.labels[args.index])
    outcome, path = network.classify(test_set.images[args.index], label)
    text = f"image {args.index} (true label {label}): {outcome.status.value}\n" + trace_explain(path, network) + "\n"
    out = _prepare_output(cfg)
    (out / f"trace_{args.index}.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "trace": cmd_trace}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ParameterError) as exc:
        print(f"arn: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ParseError) as exc:
        print(f"arn: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except StateError as exc:
        print(f"arn: state error: {exc}", file=sys.stderr)
        return EXIT_STATE


if __name__ == "__main__":
    sys.exit(main())
