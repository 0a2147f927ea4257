"""Command line entry point: ``ttnopt train`` and ``ttnopt evaluate``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import DataError, DatasetSpec, load_digits_batch, split
from .experiment import RunConfig, evaluate, train


def _add_train(sub) -> None:
    p = sub.add_parser("train", help="train a TTN classifier and write metrics")
    p.add_argument("--data", required=True, type=Path, help="headerless digits CSV")
    p.add_argument("--optimizer", choices=["rgd", "rtr"], default="rgd")
    p.add_argument("--projector", default="cartesian",
                   help="RGD projector: none, tangent, cartesian, orthogonal")
    p.add_argument("--hessian", default="carth", help="RTR model: carth, orthhess, totalhess")
    p.add_argument("--retraction", default="qr", help="qr, polar (pd) or cayley (ct)")
    p.add_argument("--kmax", type=int, default=8)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--init-scale", type=float, default=0.01,
                   help="RMS of the initial responses on the training set")
    p.add_argument("--max-inner", type=int, default=None, help="cap on truncated-CG iterations")
    p.add_argument("--out", required=True, type=Path, help="output directory")


def _add_evaluate(sub) -> None:
    p = sub.add_parser("evaluate", help="accuracy of a checkpoint on the test split")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--all", action="store_true", help="evaluate on the whole file instead")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttnopt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_train(sub)
    _add_evaluate(sub)
    return parser


def _train(args) -> int:
    config = RunConfig(
        optimizer=args.optimizer, projector=args.projector, hessian=args.hessian,
        retraction=args.retraction, k_max=args.kmax, max_iter=args.max_iter, tol=args.tol,
        seed=args.seed, train_frac=args.train_frac, out=args.out,
        max_inner=args.max_inner, init_scale=args.init_scale,
    )
    batch = load_digits_batch(DatasetSpec(args.data))
    tr, te = split(batch, config.train_frac, config.seed)
    result = train(config, tr, te)
    with open(args.out / "config.json", "w") as fh:
        json.dump(config.to_json(), fh, indent=2, sort_keys=True)
    print(json.dumps({
        "termination": result.report.termination,
        "iterations": result.report.records[-1].iter,
        "loss": result.report.records[-1].f,
        "train_acc": result.train_acc,
        "test_acc": result.test_acc,
    }))
    return 0


def _evaluate(args) -> int:
    batch = load_digits_batch(DatasetSpec(args.data))
    if not args.all:
        _, batch = split(batch, args.train_frac, args.seed)
    ev = evaluate(args.checkpoint, batch)
    print(json.dumps({"accuracy": ev.accuracy, "confusion": ev.confusion.tolist()}))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _train(args) if args.command == "train" else _evaluate(args)
    except (DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
