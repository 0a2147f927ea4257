"""Kernel learning with TTNs: product-state features, forward and backward passes.

A batch keeps one ``(N, n_i)`` feature array per mode, so the forward and
backward sweeps run once over the tree with all samples stacked. No transfer
matrix is ever formed; the largest temporary is ``N * k_L * k_R`` per node.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .geometry import _require_orthogonal
from .ttn import TtnParam, TtnTangent


def spin_feature_map(v, counter: dict | None = None) -> np.ndarray:
    """Map values in ``[0, 1]`` to ``(cos(pi v / 2), sin(pi v / 2))``.

    Out-of-range values are clamped; ``counter["clamped"]`` counts them.
    """
    v = np.asarray(v, dtype=float)
    c = np.clip(v, 0.0, 1.0)
    if counter is not None:
        counter["clamped"] = counter.get("clamped", 0) + int(np.count_nonzero(c != v))
    a = 0.5 * np.pi * c
    return np.stack([np.cos(a), np.sin(a)], axis=-1)


@dataclass
class LabeledSample:
    sample: list[np.ndarray]
    expected: np.ndarray


@dataclass
class Batch:
    """Stacked samples: ``features[i]`` has shape ``(N, n_i)``, ``targets`` ``(N, K)``."""

    features: list[np.ndarray]
    targets: np.ndarray | None = None
    labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.features = [np.asarray(f, dtype=float) for f in self.features]
        n = {f.shape[0] for f in self.features}
        if len(n) != 1:
            raise ValueError("feature arrays disagree on the number of samples")
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=float)
            if self.targets.shape[0] != self.features[0].shape[0]:
                raise ValueError("targets disagree on the number of samples")

    def __len__(self) -> int:
        return self.features[0].shape[0]

    def subset(self, idx) -> "Batch":
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(int)
        return Batch(
            [f[idx] for f in self.features],
            None if self.targets is None else self.targets[idx],
            None if self.labels is None else self.labels[idx],
        )

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample]) -> "Batch":
        if not samples:
            raise ValueError("empty batch")
        d = len(samples[0].sample)
        feats = [np.stack([s.sample[i] for s in samples]) for i in range(d)]
        return cls(feats, np.stack([s.expected for s in samples]))

    def samples(self) -> list[LabeledSample]:
        return [
            LabeledSample([f[n] for f in self.features], self.targets[n])
            for n in range(len(self))
        ]


@dataclass
class PropagationTrace:
    """Effective samples ``s_t`` for every node; ``response`` is the root's."""

    effective: dict[int, np.ndarray]
    response: np.ndarray


def _check_features(x: TtnParam, features: Sequence[np.ndarray]) -> None:
    tree = x.tree
    if len(features) != tree.d:
        raise ValueError(f"expected {tree.d} leaf features, got {len(features)}")
    for i, f in enumerate(features):
        if f.shape[-1] != tree.external_dims[i]:
            raise ValueError(
                f"feature {i} has length {f.shape[-1]}, leaf dimension is {tree.external_dims[i]}"
            )


def forward_batch(x: TtnParam, features: Sequence[np.ndarray]) -> dict[int, np.ndarray]:
    """Effective samples of shape ``(N, k_t)`` for all nodes, leaves up."""
    _check_features(x, features)
    tree = x.tree
    eff = {tree.leaf_of(i): f for i, f in enumerate(features)}
    for t in tree.traverse():
        left, right = tree.children(t)
        sl, sr = eff[left], eff[right]
        a, b, k = x.blocks[t].shape
        outer = (sl[:, :, None] * sr[:, None, :]).reshape(-1, a * b)
        eff[t] = outer @ x.blocks[t].reshape(a * b, k)
    return eff


def forward(x: TtnParam, sample: Sequence[np.ndarray]) -> PropagationTrace:
    """Forward propagation of a single sample."""
    feats = [np.asarray(s, dtype=float)[None, :] for s in sample]
    eff = forward_batch(x, feats)
    eff = {t: v[0] for t, v in eff.items()}
    return PropagationTrace(eff, eff[x.tree.root])


def predict(x: TtnParam, features: Sequence[np.ndarray]) -> np.ndarray:
    return forward_batch(x, features)[x.tree.root]


def backward_batch(
    x: TtnParam, eff: dict[int, np.ndarray], loss_grad: np.ndarray
) -> dict[int, np.ndarray]:
    """Effective loss gradients ``l_t`` of shape ``(N, k_t)``, root down."""
    tree = x.tree
    loss_grad = np.asarray(loss_grad, dtype=float)
    if loss_grad.shape[-1] != tree.label_dim:
        raise ValueError(f"loss gradient has length {loss_grad.shape[-1]}, K = {tree.label_dim}")
    lg = {tree.root: loss_grad}
    internal = set(tree.internal)
    for t in tree.traverse("root_down"):
        left, right = tree.children(t)
        if left not in internal and right not in internal:
            continue
        a, b, k = x.blocks[t].shape
        c = (lg[t] @ x.blocks[t].reshape(a * b, k).T).reshape(-1, a, b)
        if left in internal:
            lg[left] = np.matmul(c, eff[right][:, :, None])[:, :, 0]
        if right in internal:
            lg[right] = np.matmul(eff[left][:, None, :], c)[:, 0, :]
    return lg


def backward(x: TtnParam, trace: PropagationTrace, l: np.ndarray) -> dict[int, np.ndarray]:
    """Backpropagation of the loss gradient ``l`` for a single sample."""
    eff = {t: v[None, :] for t, v in trace.effective.items()}
    lg = backward_batch(x, eff, np.asarray(l, dtype=float)[None, :])
    return {t: v[0] for t, v in lg.items()}


class Loss(Protocol):
    def __call__(self, y: np.ndarray, y_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-sample values ``(N,)`` and gradients ``(N, K)`` w.r.t. ``y``."""


def l2_loss(y, y_star) -> tuple:
    """Quadratic loss ``0.5 ||y* - y||^2`` and its gradient ``y - y*``.

    Works row-wise on 2-d input, returning a vector of values.
    """
    y = np.asarray(y, dtype=float)
    y_star = np.asarray(y_star, dtype=float)
    if y.shape != y_star.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {y_star.shape}")
    r = y - y_star
    val = 0.5 * np.sum(r * r, axis=-1)
    if val.ndim == 0:
        val = float(val)
    return val, r


def objective(x: TtnParam, batch: Batch, loss: Loss = l2_loss) -> float:
    """Mean loss over the batch."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    y = predict(x, batch.features)
    vals, _ = loss(y, batch.targets)
    return float(np.mean(vals))


def euclidean_gradient(
    x: TtnParam, batch: Batch, loss: Loss = l2_loss, check: bool = True
) -> tuple[float, TtnTangent]:
    """Mean loss and its Euclidean gradient ``(s_L ⊗ s_R ⊗ l_t)`` averaged over samples."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if check:
        _require_orthogonal(x)
    n = len(batch)
    tree = x.tree
    eff = forward_batch(x, batch.features)
    vals, lgrad = loss(eff[tree.root], batch.targets)
    lg = backward_batch(x, eff, lgrad)
    grads = {}
    for t in tree.internal:
        left, right = tree.children(t)
        sl, sr = eff[left], eff[right]
        a, b, k = x.blocks[t].shape
        outer = (sl[:, :, None] * sr[:, None, :]).reshape(n, a * b)
        grads[t] = (outer.T @ lg[t]).reshape(a, b, k) / n
    return float(np.mean(vals)), TtnTangent(tree, grads)
