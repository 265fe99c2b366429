"""``surfkit`` command-line entry point.

Every subcommand prints one JSON document on stdout; diagnostics go to
stderr. Exit codes: 0 success, 1 usage error, 2 data/file error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from surfkit import __version__
from surfkit.errors import DegenerateGroundTruth, NonFiniteGradient, SurfkitError
from surfkit.io import read_volume, write_volume
from surfkit.losses import (
    BOUNDARY_KINDS,
    LOSS_KINDS,
    REGION_KINDS,
    ClassWeights,
    LossInputs,
    dataset_class_weights,
    evaluate_loss,
)
from surfkit.volume import FieldStack, LabelVolume, ProbVolume, ScalarField, one_hot_array

log = logging.getLogger("surfkit")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
DEFAULT_SEED = 42


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(payload) -> None:
    sys.stdout.write(json.dumps(payload, indent=2) + "\n")


def _write_json(path: str, payload) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(payload, indent=2) + "\n")


def _load_json(path: str):
    with open(path) as fh:
        return json.load(fh)


def _probabilities(vol, num_classes: int | None = None) -> np.ndarray:
    if isinstance(vol, LabelVolume):
        return one_hot_array(vol.labels, num_classes or vol.num_classes)
    if isinstance(vol, (ProbVolume, FieldStack)):
        values = np.asarray(vol.values)
    elif isinstance(vol, ScalarField):
        values = np.asarray(vol.values)[None]
    else:
        raise ValueError(f"cannot use {type(vol).__name__} as a prediction")
    if values.min() < 0.0 or values.max() > 1.0:
        raise ValueError("prediction values must lie in [0, 1]")
    return values


def _label_array(vol) -> np.ndarray:
    if isinstance(vol, LabelVolume):
        return np.asarray(vol.labels)
    if isinstance(vol, (ProbVolume, FieldStack)):
        return np.argmax(vol.values, axis=0)
    raise ValueError(f"expected a label volume, got {type(vol).__name__}")


# subcommands


def cmd_version(args):
    _emit({"name": "surfkit", "version": __version__})


def cmd_dtm(args):
    from surfkit.dtm import class_dtms

    vol = read_volume(args.input)
    if not isinstance(vol, LabelVolume):
        raise ValueError("dtm input must be a u8 label volume")
    onehot = one_hot_array(vol.labels, vol.num_classes)
    if args.cls is not None:
        if not 0 <= args.cls < vol.num_classes:
            raise ValueError(f"class {args.cls} outside [0, {vol.num_classes - 1}]")
        onehot = onehot[args.cls : args.cls + 1]
    dtms = class_dtms(onehot, vol.grid.spacing, brute_force=args.brute_force)
    write_volume(args.out, FieldStack(vol.grid, dtms), dtype=args.dtype)
    _emit(
        {
            "out": args.out,
            "channels": int(dtms.shape[0]),
            "dtype": args.dtype,
            "method": "brute-force" if args.brute_force else "edt",
            "min": float(dtms.min()),
            "max": float(dtms.max()),
        }
    )


def _read_weights(path: str) -> ClassWeights:
    data = _load_json(path)
    if isinstance(data, dict):
        return ClassWeights(np.asarray(data["weights"], float), float(data.get("p", 1.0)))
    return ClassWeights(np.asarray(data, float))


def cmd_loss(args):
    kinds_needing_dtm = set(BOUNDARY_KINDS) | {"composite"}
    if args.kind in kinds_needing_dtm and args.dtm is None:
        raise UsageError(f"--dtm is required for --kind {args.kind}")
    if args.kind != "composite" and args.alpha is not None:
        raise UsageError("--alpha only applies to --kind composite")
    pred_vol = read_volume(args.pred)
    truth_vol = read_volume(args.truth)
    pred = _probabilities(pred_vol)
    truth = one_hot_array(_label_array(truth_vol), pred.shape[0])
    dtm = None
    if args.dtm is not None:
        dvol = read_volume(args.dtm)
        dtm = np.asarray(dvol.values if isinstance(dvol, FieldStack) else dvol.values[None])
    weights = _read_weights(args.weights) if args.weights else None
    inputs = LossInputs(pred, truth, dtm, weights)
    alpha = 0.5 if args.alpha is None else args.alpha
    value = evaluate_loss(
        args.kind, inputs, alpha, region_kind=args.region_kind, boundary_kind=args.boundary_kind
    )
    _emit(value.to_dict())


def cmd_weights(args):
    try:
        counts = [float(c) for c in args.counts.split(",")]
    except ValueError:
        raise UsageError(f"--counts must be comma-separated numbers, got {args.counts!r}")
    w = dataset_class_weights(counts, args.p)
    _emit({"weights": [float(x) for x in w.weights], "p": w.p})


def cmd_grad_check(args):
    from surfkit.gradcheck import gradient_check

    kw = {}
    if args.kind == "composite":
        kw = {"alpha": args.alpha, "region_kind": args.region_kind, "boundary_kind": args.boundary_kind}
    report = gradient_check(args.kind, args.seed, instances=args.instances, probes=args.probes, **kw)
    _emit(report)
    if not report["passed"]:
        return EXIT_NUMERIC
    return 0


def cmd_metrics(args):
    from surfkit.metrics import evaluate_labels

    pred = read_volume(args.pred)
    truth = read_volume(args.truth)
    if pred.grid.shape != truth.grid.shape:
        raise ValueError(f"grid mismatch: {pred.grid.shape} vs {truth.grid.shape}")
    classes = None
    if args.classes:
        try:
            classes = [int(c) for c in args.classes.split(",")]
        except ValueError:
            raise UsageError(f"--classes must be comma-separated integers, got {args.classes!r}")
    reports = evaluate_labels(
        _label_array(pred), _label_array(truth), truth.grid.spacing, classes
    )
    _emit({"spacing": list(truth.grid.spacing), "classes": {str(k): r.to_dict() for k, r in reports.items()}})


def cmd_schedule(args):
    from surfkit.schedules import Schedule

    sched = Schedule(args.kind, args.epochs, args.step_length)
    if args.epoch is not None:
        _emit({"t": args.epoch, "alpha": sched(args.epoch)})
    else:
        _emit([[t, a] for t, a in sched.table()])


def cmd_train_toy(args):
    from surfkit.toy import TrainConfig, optimize

    cfg = TrainConfig.from_dict(_load_json(args.config))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    report = optimize(cfg)
    log.info("wall time %.2fs", report.wall_time)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.to_json() + "\n")
        _emit({"out": args.out, "final": report.final})
    else:
        _emit(report.to_dict())


def experiment_from_dict(d: dict):
    """Parse a sweep document into ``(configs, names, seeds)``."""
    from surfkit.toy import TrainConfig

    base = dict(d.get("base", {}))
    if "scene" in d:
        base["scene"] = d["scene"]
    variants = d.get("variants") or [{}]
    configs, names = [], []
    for v in variants:
        v = dict(v)
        name = v.pop("name", None)
        cfg = TrainConfig.from_dict({**base, **v})
        configs.append(cfg)
        names.append(name or cfg.label)
    seeds = d.get("seeds", [DEFAULT_SEED])
    return configs, names, seeds


def cmd_experiment(args):
    from surfkit.toy import run_experiment

    configs, names, seeds = experiment_from_dict(_load_json(args.config))
    if args.seed is not None:
        seeds = [args.seed]
    table = run_experiment(configs, seeds, names)
    if args.out:
        _write_json(args.out, table)
    _emit(table)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="surfkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("version", help="print the package version")
    p.set_defaults(func=cmd_version)

    p = sub.add_parser("dtm", help="signed distance maps of every class in a label volume")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--brute-force", action="store_true", help="use the exhaustive reference")
    p.add_argument("--class", dest="cls", type=int, help="only this class")
    p.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    p.set_defaults(func=cmd_dtm)

    p = sub.add_parser("loss", help="evaluate a loss on prediction/truth volumes")
    p.add_argument("--kind", choices=LOSS_KINDS, required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--dtm")
    p.add_argument("--weights", help="JSON list or {\"weights\": [...]} of class weights")
    p.add_argument("--alpha", type=float)
    p.add_argument("--region-kind", choices=REGION_KINDS, default="dice-ce")
    p.add_argument("--boundary-kind", choices=BOUNDARY_KINDS, default="gsl")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("weights", help="dataset class weights from voxel counts")
    p.add_argument("--counts", required=True, help="comma-separated voxel counts")
    p.add_argument("--p", type=float, default=1.0)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("grad-check", help="compare analytic and finite-difference gradients")
    p.add_argument("--kind", choices=LOSS_KINDS, required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--probes", type=int, default=64)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--region-kind", choices=REGION_KINDS, default="dice-ce")
    p.add_argument("--boundary-kind", choices=BOUNDARY_KINDS, default="gsl")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("metrics", help="Dice, HD, HD95 and ASD per class")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--classes", help="comma-separated class indices (default: all foreground)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("schedule", help="alpha schedule values")
    p.add_argument("--kind", choices=("linear", "step", "cosine"), required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--step-length", type=int, default=1)
    p.add_argument("--table", action="store_true", help="emit the full (t, alpha) table (default)")
    p.add_argument("--epoch", type=int, help="emit a single epoch instead of the table")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("train-toy", help="optimize a coarse logit field on a synthetic scene")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="override the config seed (config default 42)")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("experiment", help="sweep losses and seeds on one scene")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="run this single seed instead of the sweep's")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args) or 0
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"surfkit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteGradient, DegenerateGroundTruth) as exc:
        print(f"surfkit {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, SurfkitError, ValueError, KeyError, TypeError) as exc:
        print(f"surfkit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
