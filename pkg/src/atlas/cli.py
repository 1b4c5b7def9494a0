"""Command-line entry point: ``atlas {grid,appendix,verify,eval}``.

Exit status is 0 on success, 2 when a property check fails, 1 on any error.
The default master seed comes from ``$ATLAS_SEED`` when set.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .harness import DEFAULT_WIDTHS, ExperimentConfig, run_appendix, run_grid
from .model import AtlasModel
from .verify import run_suite

EXIT_OK, EXIT_ERROR, EXIT_PROPERTY = 0, 1, 2


def _default_seed() -> int:
    return int(os.environ.get("ATLAS_SEED", "0"))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (default $ATLAS_SEED or 0)")
    p.add_argument("--M", type=int, default=10)
    p.add_argument("--r", type=int, default=4)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--samples", type=int, default=10_000, help="points per train/validation/test split")
    p.add_argument("--adam-mode", choices=["dense", "lazy"], default="dense")
    p.add_argument("--expA-theta", dest="expA_theta", choices=["as_written", "atan2_unsquared"],
                   default="as_written")
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--config", type=Path, help="rerun from a manifest.json (overrides other flags)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atlas", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("grid", help="continual-learning grid over dimension and update-region width")
    _add_common(g)
    g.add_argument("--dims", type=int, nargs="+", default=None)
    g.add_argument("--widths", type=float, nargs="+", default=None)
    g.add_argument("--trials", type=int, default=None)
    g.add_argument("--full", action="store_true", help="full grid: dims 1 2 8, 30 trials")
    g.add_argument("--epochs-task1", type=int, default=20)
    g.add_argument("--epochs-task2", type=int, default=10)
    g.add_argument("--lr", default="random",
                   help="'random' for U(1e-6, 0.01+1e-6) per trial, or a fixed value")
    g.add_argument("--noise", default="exponential",
                   help="'exponential' for a mean-1 draw per trial, or a fixed sigma")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--save-models", action="store_true")

    a = sub.add_parser("appendix", help="train-expand run on an analytic target")
    _add_common(a)
    a.add_argument("--experiment", choices=list("ABCD"), default="A")
    a.add_argument("--segments", type=int, default=5)
    a.add_argument("--epochs-per-segment", type=int, default=30)
    a.add_argument("--epochs-task2", type=int, default=6)
    a.add_argument("--delta-M", type=int, default=2)

    v = sub.add_parser("verify", help="property checks against a model file")
    v.add_argument("model", type=Path)
    v.add_argument("--seed", type=int, default=None)
    v.add_argument("--points", type=int, default=1000)
    v.add_argument("--pairs", type=int, default=10_000)
    v.add_argument("--fd-points", type=int, default=20)
    v.add_argument("--fd-step", type=float, default=1e-5)
    v.add_argument("--gap", type=float, default=None, help="default: trainable-bank support width")

    e = sub.add_parser("eval", help="evaluate a model file on points from a CSV file")
    e.add_argument("model", type=Path)
    e.add_argument("points", type=Path, help="comma-separated, one point per row")
    e.add_argument("--out", type=Path, default=None, help="default: stdout")
    return parser


def _grid_config(args) -> ExperimentConfig:
    if args.config:
        return ExperimentConfig.from_dict(json.loads(args.config.read_text())["config"])
    dims = args.dims or ([1, 2, 8] if args.full else [1, 2])
    trials = args.trials or (30 if args.full else 5)
    lr_mode, lr = ("random_uniform", 0.01) if args.lr == "random" else ("fixed", float(args.lr))
    noise_mode, noise = (("exponential", 1.0) if args.noise == "exponential"
                         else ("fixed", float(args.noise)))
    return ExperimentConfig(
        protocol="grid", dims=dims, widths=args.widths or list(DEFAULT_WIDTHS), trials=trials,
        M=args.M, r=args.r, batch_size=args.batch_size, epochs_task1=args.epochs_task1,
        epochs_task2=args.epochs_task2, lr_mode=lr_mode, lr=lr, noise_mode=noise_mode, noise=noise,
        master_seed=_default_seed() if args.seed is None else args.seed, expA_theta=args.expA_theta,
        adam_mode=args.adam_mode, samples=args.samples)


def _appendix_config(args) -> ExperimentConfig:
    if args.config:
        return ExperimentConfig.from_dict(json.loads(args.config.read_text())["config"])
    return ExperimentConfig(
        protocol="appendix", experiment=args.experiment, segments=args.segments,
        epochs_per_segment=args.epochs_per_segment, epochs_appendix_task2=args.epochs_task2,
        delta_M=args.delta_M, batch_size=args.batch_size, samples=args.samples,
        master_seed=_default_seed() if args.seed is None else args.seed,
        expA_theta=args.expA_theta, adam_mode=args.adam_mode)


def cmd_grid(args) -> int:
    config = _grid_config(args)
    records, table = run_grid(config, args.out, workers=args.workers, save_models=args.save_models)
    failed = sum(r.status != "ok" for r in records)
    print(f"{len(records)} records ({failed} failed) written to {args.out}")
    for row in table:
        print(f"n={row['n']} delta={row['delta']:g} {row['variant']:<24} "
              f"task2 test MAE={row['mean_task2_test_mae']:.4f} "
              f"degradation={row['mean_degradation']:+.4f}")
    return EXIT_OK


def cmd_appendix(args) -> int:
    config = _appendix_config(args)
    rec, _ = run_appendix(config, config.experiment, args.out)
    if rec.status != "ok":
        print(f"run failed: {rec.error}", file=sys.stderr)
        return EXIT_ERROR
    for seg in range(1, config.segments + 1):
        print(f"segment {seg}: validation MAE {rec.curves[f'task1_seg{seg}']['validation'][-1]:.4f}")
    for b in rec.extras["boundaries"]:
        print(f"expansion before segment {b['segment']}: |change in validation MAE| = {b['abs_change']:.3g}")
    print(f"task 2 test MAE {rec.final_test['task2']:.4f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    model = AtlasModel.load(args.model)
    seed = _default_seed() if args.seed is None else args.seed
    reports = run_suite(model, seed, args.points, args.pairs, args.fd_points, args.fd_step, args.gap)
    for rep in reports:
        print(rep.to_json())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_PROPERTY


def cmd_eval(args) -> int:
    model = AtlasModel.load(args.model)
    X = np.loadtxt(args.points, delimiter=",", ndmin=2)
    Y = model.predict(X)
    if args.out is None:
        np.savetxt(sys.stdout, Y, delimiter=",", fmt="%.17g")
    else:
        np.savetxt(args.out, Y, delimiter=",", fmt="%.17g")
    return EXIT_OK


COMMANDS = {"grid": cmd_grid, "appendix": cmd_appendix, "verify": cmd_verify, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - mapped to the documented exit code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
