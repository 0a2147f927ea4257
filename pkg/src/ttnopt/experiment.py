"""Training and evaluation runs on a labeled dataset.

A run writes four files into its output directory:

``metrics.ndjson``
    one JSON record per iteration ``{iter, loss, grad_norm_sq, step_or_radius}``
    followed by a summary ``{train_acc, test_acc, termination}``. Everything
    in it is a deterministic function of the configuration.
``timing.ndjson``
    ``{iter, elapsed_s}`` per iteration (wall clock, kept apart so the metrics
    stream stays reproducible byte for byte).
``loss.csv``
    ``iter,loss`` for plotting.
``checkpoint.npz``
    the final parameter.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import optimizers as opt
from .learning import Batch, euclidean_gradient, objective, predict
from .retractions import RetractionKind
from .tree import DimensionTree, build_balanced
from .ttn import TtnParam, load_checkpoint, random_orthogonal, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    optimizer: str = "rgd"
    projector: str = "cartesian"
    hessian: str = "carth"
    retraction: str = "qr"
    k_max: int = 8
    max_iter: int = 100
    tol: float = 1e-10
    seed: int = 0
    train_frac: float = 0.8
    out: Path | None = None
    max_inner: int | None = None
    init_scale: float | None = 0.01

    def __post_init__(self):
        self.optimizer = self.optimizer.lower()
        if self.optimizer not in ("rgd", "rtr"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        # normalize and validate the choices
        self.retraction = RetractionKind.parse(self.retraction).value
        if self.optimizer == "rgd":
            self.projector = opt.ProjectorChoice.parse(self.projector).value
        else:
            self.hessian = opt.HessianChoice.parse(self.hessian).value
        if self.k_max < 1:
            raise ValueError("k_max must be positive")
        if self.init_scale is not None and not self.init_scale > 0:
            raise ValueError("init_scale must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        if self.out is not None:
            self.out = Path(self.out)

    def to_json(self) -> dict:
        d = asdict(self)
        d["out"] = None if self.out is None else str(self.out)
        return d


@dataclass
class Evaluation:
    accuracy: float
    confusion: np.ndarray  # confusion[true, predicted]


@dataclass
class RunResult:
    config: RunConfig
    report: opt.OptimizerReport
    train_acc: float
    test_acc: float | None

    @property
    def x(self) -> TtnParam:
        return self.report.x


def tree_for(batch: Batch, k_max: int) -> DimensionTree:
    dims = [f.shape[1] for f in batch.features]
    return build_balanced(len(dims), dims, batch.targets.shape[1], k_max)


def scale_root(x: TtnParam, batch: Batch, rms: float) -> TtnParam:
    """Rescale the root block so the RMS response norm over ``batch`` is ``rms``.

    Products of many unit-norm features shrink geometrically with depth, so a
    random orthogonal network answers with responses near ``1e-9`` at ``d = 64``
    and the loss starts on a plateau. A single scalar on the root (the only
    unconstrained block) fixes the scale without touching the orthogonal blocks.
    """
    y = predict(x, batch.features)
    cur = float(np.sqrt(np.mean(np.sum(y * y, axis=1))))
    if cur == 0.0:
        raise ValueError("initial responses vanish identically")
    blocks = dict(x.blocks)
    blocks[x.tree.root] = (rms / cur) * blocks[x.tree.root]
    return TtnParam(x.tree, blocks)


def initial_point(config: RunConfig, train_batch: Batch) -> TtnParam:
    x0 = random_orthogonal(tree_for(train_batch, config.k_max), config.seed)
    if config.init_scale is not None:
        x0 = scale_root(x0, train_batch, config.init_scale)
    return x0


def evaluate(x: TtnParam | str | Path, batch: Batch) -> Evaluation:
    """Accuracy of ``argmax`` predictions (ties go to the lowest class)."""
    if not isinstance(x, TtnParam):
        x = load_checkpoint(x)
    tree = x.tree
    if len(batch.features) != tree.d or tuple(f.shape[1] for f in batch.features) != tuple(
        tree.external_dims
    ):
        raise ValueError("data dimensions do not match the checkpoint's tree")
    if batch.targets.shape[1] != tree.label_dim:
        raise ValueError("target dimension does not match the label dimension")
    k = tree.label_dim
    pred = np.argmax(predict(x, batch.features), axis=1)
    true = np.argmax(batch.targets, axis=1)
    confusion = np.zeros((k, k), dtype=int)
    np.add.at(confusion, (true, pred), 1)
    return Evaluation(float(np.mean(pred == true)), confusion)


def run_optimizer(config: RunConfig, train_batch: Batch, x0: TtnParam, callback=None):
    def f_and_grad(p):
        return euclidean_gradient(p, train_batch, check=False)

    def f(p):
        return objective(p, train_batch)

    if config.optimizer == "rgd":
        return opt.rgd(
            f_and_grad, x0, proj=config.projector, retraction=config.retraction,
            tol=config.tol, max_iter=config.max_iter, f=f, callback=callback,
        )
    params = opt.TrustRegionParams(tol=config.tol, max_inner=config.max_inner)
    return opt.rtr(
        f_and_grad, x0, hess=config.hessian, retraction=config.retraction,
        params=params, max_iter=config.max_iter, f=f, callback=callback,
    )


def _fmt(v: float) -> float | str:
    # JSON has no inf/nan
    return v if np.isfinite(v) else repr(v)


def train(config: RunConfig, train_batch: Batch, test_batch: Batch | None = None) -> RunResult:
    """Run one configured optimization from :func:`initial_point`."""
    x0 = initial_point(config, train_batch)
    out = config.out
    files = {}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        files["metrics"] = open(out / "metrics.ndjson", "w")
        files["timing"] = open(out / "timing.ndjson", "w")
        files["loss"] = open(out / "loss.csv", "w")
        files["loss"].write("iter,loss\n")

    def on_record(rec: opt.IterationRecord):
        log.info("iter %d  f %.6e  |g|^2 %.3e  step %.3e", rec.iter, rec.f, rec.grad_norm_sq, rec.step)
        if not files:
            return
        files["metrics"].write(json.dumps({
            "iter": rec.iter, "loss": _fmt(rec.f),
            "grad_norm_sq": _fmt(rec.grad_norm_sq), "step_or_radius": _fmt(rec.step),
        }) + "\n")
        files["timing"].write(json.dumps({"iter": rec.iter, "elapsed_s": rec.elapsed}) + "\n")
        files["loss"].write(f"{rec.iter},{rec.f!r}\n")

    try:
        report = run_optimizer(config, train_batch, x0, callback=on_record)
        train_acc = evaluate(report.x, train_batch).accuracy
        test_acc = evaluate(report.x, test_batch).accuracy if test_batch is not None else None
        if files:
            files["metrics"].write(json.dumps({
                "train_acc": train_acc, "test_acc": test_acc,
                "termination": report.termination,
            }) + "\n")
            save_checkpoint(out / "checkpoint.npz", report.x)
    finally:
        for fh in files.values():
            fh.close()
    return RunResult(config, report, train_acc, test_acc)
