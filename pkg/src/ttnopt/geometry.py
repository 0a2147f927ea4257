"""Tangent, vertical and horizontal structure of orthogonal TTN parameters.

All projectors act on :class:`TtnTangent` ensembles at an orthogonal base
point. The metric is the Euclidean one, ``sum_t <dB_t, dC_t>``. Block
matricizations are never formed explicitly; ``B_t^T dB_t`` is a tensordot
over the first two modes and ``B_t G`` a matmul on the last.
"""
from __future__ import annotations

import math
from typing import Callable, Mapping

import numpy as np

from .ttn import BlockEnsemble, TtnParam, TtnTangent, orthogonality_defect

ORTH_TOL = 1e-8
TANGENT_TOL = 1e-8


class SolverError(RuntimeError):
    """Iterative solve did not converge."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def _btd(b: np.ndarray, d: np.ndarray) -> np.ndarray:
    # B_t^T dB_t on (1,2)-matricizations
    return np.tensordot(b, d, axes=([0, 1], [0, 1]))


def _mode1(g: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.tensordot(g, b, axes=(1, 0))


def _mode2(g: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.matmul(g, b)


def skew(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a - a.T)


def _require_orthogonal(x: TtnParam) -> None:
    err = orthogonality_defect(x)
    if err > ORTH_TOL:
        raise ValueError(f"base point is not orthogonal (defect {err:.2e})")


def tangent_defect(x: TtnParam, v: BlockEnsemble) -> float:
    """Largest ``||B^T dB + dB^T B||_F`` over non-root nodes, relative to ``||v||``."""
    worst = 0.0
    for t in x.tree.internal_nonroot:
        m = _btd(x.blocks[t], v.blocks[t])
        worst = max(worst, float(np.linalg.norm(m + m.T)))
    return worst / max(v.norm(), 1.0)


def _require_tangent(x: TtnParam, v: BlockEnsemble) -> None:
    err = tangent_defect(x, v)
    if err > TANGENT_TOL:
        raise ValueError(f"vector is not tangent (defect {err:.2e})")


def metric(xi: BlockEnsemble, eta: BlockEnsemble) -> float:
    return xi.inner(eta)


def proj_tangent(x: TtnParam, v: BlockEnsemble, check: bool = True) -> TtnTangent:
    """Orthogonal projection of an ambient vector onto the tangent space."""
    if check:
        _require_orthogonal(x)
    tree = x.tree
    out = {tree.root: v.blocks[tree.root]}
    for t in tree.internal_nonroot:
        b, d = x.blocks[t], v.blocks[t]
        m = _btd(b, d)
        out[t] = d - b @ (0.5 * (m + m.T))
    return TtnTangent(tree, out)


def proj_cart_horizontal(x: TtnParam, v: BlockEnsemble, check: bool = True) -> TtnTangent:
    """Projection ``(I - B_t B_t^T) dB_t`` on non-root nodes; the root passes through."""
    if check:
        _require_orthogonal(x)
    tree = x.tree
    out = {tree.root: v.blocks[tree.root]}
    for t in tree.internal_nonroot:
        b, d = x.blocks[t], v.blocks[t]
        out[t] = d - b @ _btd(b, d)
    return TtnTangent(tree, out)


def random_skew_family(tree, rng: np.random.Generator) -> dict[int, np.ndarray]:
    out = {}
    for t in tree.internal_nonroot:
        a = rng.standard_normal((tree.dim(t), tree.dim(t)))
        out[t] = a - a.T
    return out


def vertical_vector(x: TtnParam, g: Mapping[int, np.ndarray], check: bool = True) -> TtnTangent:
    """Tangent to the gauge orbit generated by the skew family ``g``."""
    tree = x.tree
    if check:
        _require_orthogonal(x)
        for t, m in g.items():
            if t not in tree.internal_nonroot:
                raise ValueError(f"skew generators live on non-root internal nodes, got {t}")
            if np.linalg.norm(m + m.T) > 1e-12 * max(1.0, np.linalg.norm(m)):
                raise ValueError(f"generator at node {t} is not skew-symmetric")
    out = {}
    for t in tree.internal:
        left, right = tree.children(t)
        b = x.blocks[t]
        d = np.zeros_like(b)
        if left in g:
            d -= _mode1(g[left], b)
        if right in g:
            d -= _mode2(g[right], b)
        if t in g:
            d += b @ g[t]
        out[t] = d
    return TtnTangent(tree, out)


def proj_oblique(x: TtnParam, v: BlockEnsemble, check: bool = True) -> TtnTangent:
    """Oblique projection of a tangent vector onto the Cartesian horizontal space.

    The kernel is the vertical space. Generators are accumulated leaves-up.
    """
    if check:
        _require_orthogonal(x)
        _require_tangent(x, v)
    tree = x.tree
    g: dict[int, np.ndarray] = {}
    out = {}
    for t in tree.traverse():
        left, right = tree.children(t)
        b = x.blocks[t]
        w = v.blocks[t]
        if left in g:
            w = w + _mode1(g[left], b)
        if right in g:
            w = w + _mode2(g[right], b)
        if t == tree.root:
            out[t] = w
        else:
            gt = _btd(b, w)
            g[t] = gt
            out[t] = w - b @ gt
    return TtnTangent(tree, out)


def proj_oblique_transpose(x: TtnParam, v: BlockEnsemble, check: bool = True) -> TtnTangent:
    """Metric adjoint of :func:`proj_oblique`; its image is the orthogonal horizontal space.

    Generators are accumulated root-down.
    """
    if check:
        _require_orthogonal(x)
        _require_tangent(x, v)
    tree = x.tree
    internal = set(tree.internal_nonroot)
    g: dict[int, np.ndarray] = {}
    out = {}
    for t in tree.traverse("root_down"):
        b, d = x.blocks[t], v.blocks[t]
        gt = g.get(t)
        if gt is not None:
            out[t] = d - b @ gt
            bg = b @ gt
        else:
            out[t] = d
            bg = None
        left, right = tree.children(t)
        if left in internal:
            m = np.tensordot(b, d, axes=([1, 2], [1, 2])) - _btd(x.blocks[left], v.blocks[left]).T
            gl = skew(m)
            if bg is not None:
                gl = gl + np.tensordot(bg, b, axes=([1, 2], [1, 2]))
            g[left] = gl
        if right in internal:
            m = np.tensordot(b, d, axes=([0, 2], [0, 2])) - _btd(x.blocks[right], v.blocks[right]).T
            gr = skew(m)
            if bg is not None:
                gr = gr + np.tensordot(bg, b, axes=([0, 2], [0, 2]))
            g[right] = gr
    return TtnTangent(tree, out)


def orth_horizontal_defect(x: TtnParam, v: BlockEnsemble) -> float:
    """Largest asymmetry of the conditions defining the orthogonal horizontal space.

    For every internal node ``t`` and each internal child ``c`` the matrix
    ``dB_c^T B_c - B_t^(c) (dB_t^(c))^T`` must be symmetric.
    """
    tree = x.tree
    internal = set(tree.internal_nonroot)
    worst = 0.0
    for t in tree.internal:
        b, d = x.blocks[t], v.blocks[t]
        for c, axes in zip(tree.children(t), (([1, 2], [1, 2]), ([0, 2], [0, 2]))):
            if c not in internal:
                continue
            m = _btd(v.blocks[c], x.blocks[c]) - np.tensordot(b, d, axes=axes)
            worst = max(worst, float(np.linalg.norm(m - m.T)))
    return worst


def vertical_adjoint(x: TtnParam, w: BlockEnsemble) -> dict[int, np.ndarray]:
    """Metric adjoint of :func:`vertical_vector` onto skew generator families."""
    tree = x.tree
    internal = set(tree.internal_nonroot)
    out = {t: skew(_btd(x.blocks[t], w.blocks[t])) for t in tree.internal_nonroot}
    for t in tree.internal:
        b, d = x.blocks[t], w.blocks[t]
        left, right = tree.children(t)
        if left in internal:
            out[left] = out[left] - skew(np.tensordot(d, b, axes=([1, 2], [1, 2])))
        if right in internal:
            out[right] = out[right] - skew(np.tensordot(d, b, axes=([0, 2], [0, 2])))
    return out


def _vertical_preconditioner(x: TtnParam):
    """Exact inverse of the node-diagonal blocks of the vertical Gram operator.

    A generator ``g`` at node ``c`` contributes ``B_c g`` at ``c`` and a mode
    product with the parent block, so its diagonal block is
    ``h -> h + (h S + S h) / 2`` with ``S`` the parent's Gram matrix in the
    mode of ``c``. In the eigenbasis of ``S`` this is an entrywise scaling.
    """
    tree = x.tree
    factors = {}
    for t in tree.internal:
        b = x.blocks[t]
        for c, axes in zip(tree.children(t), (([1, 2], [1, 2]), ([0, 2], [0, 2]))):
            if c not in tree.internal_nonroot:
                continue
            lam, u = np.linalg.eigh(np.tensordot(b, b, axes=axes))
            factors[c] = (u, 1.0 / (1.0 + 0.5 * (lam[:, None] + lam[None, :])))

    def apply(r: Mapping[int, np.ndarray]) -> dict[int, np.ndarray]:
        out = {}
        for c, (u, scale) in factors.items():
            out[c] = u @ ((u.T @ r[c] @ u) * scale) @ u.T
        return out

    return apply


def _gen_inner(a: Mapping[int, np.ndarray], b: Mapping[int, np.ndarray]) -> float:
    return float(sum(np.vdot(a[t], b[t]) for t in a))


def _proj_orth_vertical(x, v, tol, max_iter, stats):
    # v - V (V^T V)^{-1} V^T v by preconditioned CG on the generators
    tree = x.tree
    if max_iter is None:
        max_iter = max(tree.dim_vertical(), 1) + 50
    rhs = vertical_adjoint(x, v)
    precond = _vertical_preconditioner(x)
    g = {t: np.zeros_like(m) for t, m in rhs.items()}
    r = rhs
    z = precond(r)
    p = z
    rz = _gen_inner(r, z)
    # r^T M^{-1} r approximates the squared tangent-space error of V g
    target = (tol * v.norm()) ** 2
    it = 0
    while rz > target:
        if it >= max_iter:
            if stats is not None:
                stats["cg_iters"] = stats.get("cg_iters", 0) + it
            raise SolverError("vertical projection CG did not converge", math.sqrt(rz))
        ap = vertical_adjoint(x, vertical_vector(x, p, check=False))
        alpha = rz / _gen_inner(p, ap)
        g = {t: g[t] + alpha * p[t] for t in g}
        r = {t: r[t] - alpha * ap[t] for t in r}
        z = precond(r)
        rz_new = _gen_inner(r, z)
        p = {t: z[t] + (rz_new / rz) * p[t] for t in p}
        rz = rz_new
        it += 1
    if stats is not None:
        stats["cg_iters"] = stats.get("cg_iters", 0) + it
    vg = vertical_vector(x, g, check=False)
    return TtnTangent(tree, {t: v.blocks[t] - vg.blocks[t] for t in tree.internal})


def _proj_orth_oblique(x, v, tol, max_iter, stats):
    # P^T (P P^T)^{-1} P v by CG on the Cartesian horizontal space
    tree = x.tree
    if max_iter is None:
        max_iter = max(tree.dim_tangent() - tree.dim_vertical(), 1)
    rhs = proj_oblique(x, v, check=False)
    if rhs.norm() == 0.0:
        return TtnTangent.zeros(tree)

    def op(z):
        return proj_oblique(x, proj_oblique_transpose(x, z, check=False), check=False)

    z = TtnTangent.zeros(tree)
    r = rhs
    p = r
    rr = r.inner(r)
    target = (tol * v.norm()) ** 2
    it = 0
    while rr > target:
        if it >= max_iter:
            if stats is not None:
                stats["cg_iters"] = stats.get("cg_iters", 0) + it
            raise SolverError("horizontal projection CG did not converge", math.sqrt(rr))
        ap = op(p)
        alpha = rr / p.inner(ap)
        z = z + alpha * p
        r = r - alpha * ap
        rr_new = r.inner(r)
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
    if stats is not None:
        stats["cg_iters"] = stats.get("cg_iters", 0) + it
    return proj_oblique_transpose(x, z, check=False)


def proj_orth_horizontal(
    x: TtnParam,
    v: BlockEnsemble,
    tol: float = 1e-10,
    max_iter: int | None = None,
    check: bool = True,
    stats: dict | None = None,
    method: str = "vertical",
) -> TtnTangent:
    """Orthogonal projection of a tangent vector onto the complement of the vertical space.

    ``method="oblique"`` evaluates ``P^T (P P^T)^{-1} P v`` with ``P`` the
    oblique projector, solving the middle system by CG on the Cartesian
    horizontal space. ``||P||`` grows with the size of the root block, so this
    system becomes too ill-conditioned for CG once the root is far from unit
    scale. ``method="vertical"`` (the default) returns the same projector as
    ``v - V (V^T V)^{-1} V^T v`` over skew generator families, solved by CG
    preconditioned with the exact inverse of the per-node Gram blocks, which
    absorbs the root scale. Both stop when the error estimate drops below
    ``tol * ||v||``. ``stats``, if given, accumulates CG iterations under
    ``"cg_iters"``.
    """
    if check:
        _require_orthogonal(x)
        _require_tangent(x, v)
    if method == "vertical":
        return _proj_orth_vertical(x, v, tol, max_iter, stats)
    if method == "oblique":
        return _proj_orth_oblique(x, v, tol, max_iter, stats)
    raise ValueError(f"unknown method {method!r}")


def default_fd_step(x: TtnParam, xi: BlockEnsemble, c: float = 1.0) -> float:
    """Step ``h`` with ``||h xi|| = c sqrt(eps)``.

    The orthogonal blocks live at unit scale and the model is linear in the
    root, so the step is not scaled by ``||x||`` (whose size is set by the root).
    """
    return c * math.sqrt(np.finfo(float).eps) / xi.norm()


def hess_fd(
    grad_field: Callable[[TtnParam], TtnTangent],
    x: TtnParam,
    xi: BlockEnsemble,
    retract: Callable[[TtnParam, BlockEnsemble], TtnParam],
    project: Callable[[TtnParam, BlockEnsemble], TtnTangent],
    h: float | None = None,
    grad_x: TtnTangent | None = None,
) -> TtnTangent:
    """Forward-difference Hessian-vector product of a gradient field.

    The gradient at the retracted point is compared block-wise with the one at
    ``x`` and the quotient is projected back with ``project`` at ``x``.
    """
    nxi = xi.norm()
    if nxi == 0.0:
        raise ValueError("finite-difference direction must be nonzero")
    if h is None:
        h = default_fd_step(x, xi)
    if grad_x is None:
        grad_x = grad_field(x)
    g1 = grad_field(retract(x, h * xi))
    diff = TtnTangent(x.tree, {t: (g1.blocks[t] - grad_x.blocks[t]) / h for t in x.tree.internal})
    return project(x, diff)


def torsion(
    connection: Callable[[BlockEnsemble, BlockEnsemble], BlockEnsemble],
    bracket: Callable[[BlockEnsemble, BlockEnsemble], BlockEnsemble],
    xi: BlockEnsemble,
    eta: BlockEnsemble,
) -> BlockEnsemble:
    """``T(xi, eta) = nabla_xi eta - nabla_eta xi - [xi, eta]`` as an operator composition.

    ``connection(a, b)`` evaluates ``nabla_a b`` and ``bracket`` the Lie bracket,
    both for vector fields the caller represents. No bracket of the quotient
    vector fields is provided here, so this is a composition helper only.
    """
    return connection(xi, eta) - connection(eta, xi) - bracket(xi, eta)
