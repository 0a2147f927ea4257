"""Dense multilinear algebra on column-major arrays.

Tensors are plain :class:`numpy.ndarray` objects. Every operation that
flattens several modes into one index does so in column-major order, i.e.
the first listed mode runs fastest. Modes are 0-based.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np


def _check_modes(t: Sequence[int], d: int) -> tuple[int, ...]:
    t = tuple(int(i) for i in t)
    if not t:
        raise ValueError("mode subset must be nonempty")
    if len(set(t)) != len(t):
        raise ValueError(f"duplicate modes in {t}")
    for i in t:
        if not 0 <= i < d:
            raise ValueError(f"mode {i} out of range for order {d}")
    return t


def matricize(x: np.ndarray, t: Sequence[int]) -> np.ndarray:
    """Return the ``t``-matricization of ``x``.

    Rows are indexed by the modes in ``t`` (in the given order, first mode
    fastest), columns by the remaining modes in ascending order.
    """
    x = np.asarray(x, dtype=float)
    t = _check_modes(t, x.ndim)
    s = tuple(i for i in range(x.ndim) if i not in t)
    rows = int(np.prod([x.shape[i] for i in t]))
    y = np.transpose(x, t + s)
    return y.reshape(rows, -1, order="F")


def dematricize(m: np.ndarray, t: Sequence[int], dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`matricize` for a tensor of extents ``dims``."""
    dims = tuple(int(n) for n in dims)
    t = _check_modes(t, len(dims))
    s = tuple(i for i in range(len(dims)) if i not in t)
    m = np.asarray(m, dtype=float)
    rows = int(np.prod([dims[i] for i in t]))
    cols = int(np.prod([dims[i] for i in s]))
    if m.shape != (rows, cols):
        raise ValueError(f"matrix of shape {m.shape} cannot fold to {dims} along {t}")
    perm = t + s
    y = m.reshape([dims[i] for i in perm], order="F")
    return np.transpose(y, np.argsort(perm))


def inner(x: np.ndarray, y: np.ndarray) -> float:
    """Frobenius inner product ``vec(x)^T vec(y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    return float(np.vdot(x, y))


def contract(x: np.ndarray, y: np.ndarray, t: Sequence[int]) -> np.ndarray:
    """Contract ``x`` and ``y`` over the modes ``t``.

    The result ``(X^(t))^T Y^(t)`` is folded into a tensor whose modes are the
    free modes of ``x`` followed by the free modes of ``y``. Contracting over
    all modes gives a 0-d array equal to :func:`inner`.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != y.ndim:
        raise ValueError("order mismatch")
    t = _check_modes(t, x.ndim)
    for i in t:
        if x.shape[i] != y.shape[i]:
            raise ValueError(f"extent mismatch on mode {i}")
    s = [i for i in range(x.ndim) if i not in t]
    m = matricize(x, t).T @ matricize(y, t)
    free_x = [x.shape[i] for i in s]
    free_y = [y.shape[i] for i in s]
    return m.reshape(free_x + free_y, order="F")


def mode_product(a: np.ndarray, k: int, x: np.ndarray) -> np.ndarray:
    """Multiply mode ``k`` of ``x`` by the matrix ``a`` (``a x_k X``)."""
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    if not 0 <= k < x.ndim:
        raise ValueError(f"mode {k} out of range for order {x.ndim}")
    if a.ndim != 2 or a.shape[1] != x.shape[k]:
        raise ValueError(f"matrix {a.shape} incompatible with extent {x.shape[k]}")
    y = np.tensordot(a, x, axes=(1, k))
    return np.moveaxis(y, 0, k)


def multilinear(mats: Sequence[np.ndarray], x: np.ndarray) -> np.ndarray:
    """Apply ``(A_1 ⊗ ... ⊗ A_d)`` to ``x``, one matrix per mode."""
    x = np.asarray(x, dtype=float)
    if len(mats) != x.ndim:
        raise ValueError(f"need {x.ndim} matrices, got {len(mats)}")
    for k, a in enumerate(mats):
        x = mode_product(a, k, x)
    return x


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard Kronecker product."""
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
