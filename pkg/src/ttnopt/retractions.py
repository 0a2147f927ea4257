"""Stiefel retractions and the node-wise Cartesian retraction on orthogonal TTNs.

QR is not equivariant under the gauge group, so stepping with it depends on
which representative of an orbit is used. Polar and Cayley commute with the
gauge action and therefore induce retractions on the quotient.
"""
from __future__ import annotations

import enum

import numpy as np

from .ttn import BlockEnsemble, TtnParam, qr_pos


class RetractionKind(enum.Enum):
    QR = "qr"
    POLAR = "polar"
    CAYLEY = "cayley"

    @property
    def equivariant(self) -> bool:
        return self is not RetractionKind.QR

    @classmethod
    def parse(cls, value) -> "RetractionKind":
        if isinstance(value, cls):
            return value
        aliases = {"pd": "polar", "ct": "cayley"}
        v = str(value).lower()
        return cls(aliases.get(v, v))


def _qr(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    if not v.any():
        return x.copy()
    q, r = qr_pos(x + v)
    d = np.abs(np.diag(r))
    if d.size and d.min() <= 1e-14 * max(d.max(), 1.0):
        raise np.linalg.LinAlgError("QR retraction: X + V is rank deficient")
    return q


def _polar(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    u, _, wt = np.linalg.svd(x + v, full_matrices=False)
    return u @ wt


def _cayley(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    # W = V' X^T - X V'^T with V' = (I - X X^T / 2) V, applied through its
    # rank-2k factors U = [V', X], Z = [X, -V'] so only a 2k x 2k solve is needed.
    k = x.shape[1]
    vp = v - 0.5 * x @ (x.T @ v)
    u = np.hstack([vp, x])
    z = np.hstack([x, -vp])
    m = np.eye(2 * k) - 0.5 * (z.T @ u)
    return x + u @ np.linalg.solve(m, z.T @ x)


_STIEFEL = {
    RetractionKind.QR: _qr,
    RetractionKind.POLAR: _polar,
    RetractionKind.CAYLEY: _cayley,
}


def stiefel_retract(kind, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Retract the step ``v`` at the orthonormal-column matrix ``x``.

    For Cayley the non-tangent part of ``v`` is discarded implicitly.
    """
    kind = RetractionKind.parse(kind)
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape != v.shape or x.ndim != 2:
        raise ValueError(f"shape mismatch {x.shape} vs {v.shape}")
    return _STIEFEL[kind](x, v)


def cartesian_retract(kind, x: TtnParam, xi: BlockEnsemble) -> TtnParam:
    """Stiefel retraction on every non-root block, additive update at the root."""
    kind = RetractionKind.parse(kind)
    fn = _STIEFEL[kind]
    tree = x.tree
    blocks = {tree.root: x.blocks[tree.root] + xi.blocks[tree.root]}
    for t in tree.internal_nonroot:
        a, b, c = tree.block_shape(t)
        bm = x.blocks[t].reshape(a * b, c, order="F")
        vm = xi.blocks[t].reshape(a * b, c, order="F")
        blocks[t] = fn(bm, vm).reshape(a, b, c, order="F")
    return TtnParam(tree, blocks)
