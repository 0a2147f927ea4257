"""Riemannian gradient descent, trust regions and Newton steps on orthogonal TTNs.

Objectives are passed as ``f_and_grad(x) -> (value, euclidean_gradient)``
plus an optional cheaper ``f(x) -> value`` used by line searches and the
trust-region acceptance test. The gradient is always the ambient Euclidean
one; projecting it is the optimizer's job.
"""
from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import geometry as geo
from .retractions import RetractionKind, cartesian_retract
from .ttn import BlockEnsemble, TtnParam, TtnTangent

log = logging.getLogger(__name__)

FAndGrad = Callable[[TtnParam], "tuple[float, TtnTangent]"]


class ProjectorChoice(enum.Enum):
    NONE = "none"
    TANGENT = "tangent"
    CARTESIAN = "cartesian"
    ORTHOGONAL = "orthogonal"

    @classmethod
    def parse(cls, value) -> "ProjectorChoice":
        if isinstance(value, cls):
            return value
        v = str(value).lower().replace("-", "").replace("_", "")
        aliases = {"euclidean": "none", "cartesianhorizontal": "cartesian",
                   "orthogonalhorizontal": "orthogonal"}
        return cls(aliases.get(v, v))


class HessianChoice(enum.Enum):
    CART_H = "carth"
    ORTH_HESS = "orthhess"
    TOTAL_HESS = "totalhess"

    @classmethod
    def parse(cls, value) -> "HessianChoice":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower().replace("-", "").replace("_", ""))


def projector(choice: ProjectorChoice, cg_tol: float = 1e-10, stats: dict | None = None):
    """Callable ``(x, v) -> P_x(v)`` for a projector choice (``v`` ambient)."""
    choice = ProjectorChoice.parse(choice)
    if choice is ProjectorChoice.NONE:
        return lambda x, v: TtnTangent(v.tree, v.blocks)
    if choice is ProjectorChoice.TANGENT:
        return lambda x, v: geo.proj_tangent(x, v, check=False)
    if choice is ProjectorChoice.CARTESIAN:
        return lambda x, v: geo.proj_cart_horizontal(x, v, check=False)

    def orth(x, v):
        t = geo.proj_tangent(x, v, check=False)
        return geo.proj_orth_horizontal(x, t, tol=cg_tol, check=False, stats=stats)

    return orth


@dataclass
class IterationRecord:
    iter: int
    f: float
    grad_norm_sq: float
    step: float
    elapsed: float


@dataclass
class OptimizerReport:
    records: list[IterationRecord]
    x: TtnParam
    termination: str
    stats: dict = field(default_factory=dict)

    @property
    def f_values(self) -> list[float]:
        return [r.f for r in self.records]


# ---------------------------------------------------------------------------
# line search and gradient descent


@dataclass
class LineSearchResult:
    alpha: float
    x: TtnParam | None
    f: float
    success: bool
    backtracks: int


def armijo_search(
    f: Callable[[TtnParam], float],
    x: TtnParam,
    direction: BlockEnsemble,
    g_sq: float,
    r: float = 1e-4,
    retract: Callable | RetractionKind | str = RetractionKind.QR,
    alpha0: float = 1.0,
    beta: float = 0.5,
    max_backtracks: int = 50,
    fx: float | None = None,
) -> LineSearchResult:
    """Backtrack from ``alpha0`` until ``f(x) - f(R_x(-alpha d)) >= r alpha g_sq``."""
    if not 0.0 < r < 1.0:
        raise ValueError("Armijo constant must lie in (0, 1)")
    if direction.norm() == 0.0 or g_sq <= 0.0:
        raise ValueError("line search needs a nonzero direction")
    if not callable(retract):
        kind = RetractionKind.parse(retract)
        retract = lambda p, v: cartesian_retract(kind, p, v)  # noqa: E731
    if fx is None:
        fx = f(x)
    alpha = alpha0
    for k in range(max_backtracks + 1):
        try:
            y = retract(x, -alpha * direction)
            fy = f(y)
        except np.linalg.LinAlgError:
            fy = math.inf
        if fx - fy >= r * alpha * g_sq:
            return LineSearchResult(alpha, y, fy, True, k)
        alpha *= beta
    return LineSearchResult(alpha / beta, None, fx, False, max_backtracks)


def _retraction(kind) -> Callable[[TtnParam, BlockEnsemble], TtnParam]:
    if callable(kind):
        return kind
    kind = RetractionKind.parse(kind)
    return lambda p, v: cartesian_retract(kind, p, v)


def rgd(
    f_and_grad: FAndGrad,
    x0: TtnParam,
    proj: ProjectorChoice | str = ProjectorChoice.CARTESIAN,
    retraction: RetractionKind | str = RetractionKind.QR,
    tol: float = 1e-10,
    max_iter: int = 1000,
    f: Callable[[TtnParam], float] | None = None,
    r: float = 1e-4,
    alpha0: float = 1.0,
    beta: float = 0.5,
    max_backtracks: int = 50,
    callback: Callable[[IterationRecord], None] | None = None,
) -> OptimizerReport:
    """Riemannian gradient descent with Armijo backtracking.

    Iterates ``x <- R_x(-alpha P_x(grad))`` and stops once the squared norm of
    the projected gradient drops below ``tol``, after ``max_iter`` steps, or
    when the line search finds no admissible step.
    """
    geo._require_orthogonal(x0)
    stats: dict = {}
    P = projector(proj, stats=stats)
    R = _retraction(retraction)
    if f is None:
        f = lambda p: f_and_grad(p)[0]  # noqa: E731
    start = time.perf_counter()
    records: list[IterationRecord] = []

    def emit(rec):
        records.append(rec)
        if callback is not None:
            callback(rec)

    x = x0
    fx, egrad = f_and_grad(x)
    step = 0.0
    termination = "max_iter"
    for k in range(max_iter + 1):
        s = P(x, egrad)
        g_sq = s.inner(s)
        emit(IterationRecord(k, fx, g_sq, step, time.perf_counter() - start))
        if g_sq < tol:
            termination = "converged"
            break
        if k == max_iter:
            break
        ls = armijo_search(f, x, s, g_sq, r=r, retract=R, alpha0=alpha0, beta=beta,
                           max_backtracks=max_backtracks, fx=fx)
        if not ls.success:
            termination = "line_search_failed"
            log.info("line search failed at iteration %d", k)
            break
        x, step, fx = ls.x, ls.alpha, ls.f
        egrad = f_and_grad(x)[1]
    return OptimizerReport(records, x, termination, stats)


# ---------------------------------------------------------------------------
# trust region


@dataclass
class TcgResult:
    step: TtnTangent
    hess_step: TtnTangent
    status: str
    iterations: int


def steihaug_cg(
    hess_op: Callable[[BlockEnsemble], BlockEnsemble],
    grad: BlockEnsemble,
    radius: float,
    inner_tol: float | None = None,
    max_inner: int = 1000,
    theta: float = 0.5,
    kappa: float = 0.5,
) -> TcgResult:
    """Truncated CG for ``min <g,s> + 1/2 <s,H s>`` subject to ``||s|| <= radius``.

    Stops on the boundary for negative curvature or when the next iterate
    leaves the region, and returns the previous iterate if the model value
    would increase. ``inner_tol`` defaults to ``min(kappa, ||g||^theta) ||g||``.
    """
    if radius <= 0.0:
        raise ValueError("trust-region radius must be positive")
    tree = grad.tree
    eta = TtnTangent.zeros(tree)
    heta = TtnTangent.zeros(tree)
    r = TtnTangent(tree, grad.blocks)
    r_r = r.inner(r)
    norm_r0 = math.sqrt(r_r)
    if norm_r0 == 0.0:
        return TcgResult(eta, heta, "interior", 0)
    if inner_tol is None:
        inner_tol = norm_r0 * min(kappa, norm_r0**theta)
    delta = -r
    e_pe, e_pd, d_pd = 0.0, 0.0, r_r
    model = 0.0
    status = "max_inner"
    j = 0
    for j in range(1, max_inner + 1):
        hdelta = hess_op(delta)
        d_hd = delta.inner(hdelta)
        alpha = r_r / d_hd if d_hd != 0.0 else math.inf
        e_pe_new = e_pe + 2.0 * alpha * e_pd + alpha * alpha * d_pd
        if d_hd <= 0.0 or e_pe_new >= radius * radius:
            tau = (-e_pd + math.sqrt(e_pd * e_pd + d_pd * (radius * radius - e_pe))) / d_pd
            eta = eta + tau * delta
            heta = heta + tau * hdelta
            status = "negative_curvature" if d_hd <= 0.0 else "exceeded_radius"
            break
        new_eta = eta + alpha * delta
        new_heta = heta + alpha * hdelta
        new_model = grad.inner(new_eta) + 0.5 * new_eta.inner(new_heta)
        if new_model > model:
            status = "model_increased"
            break
        eta, heta, model, e_pe = new_eta, new_heta, new_model, e_pe_new
        r = r + alpha * hdelta
        r_r_old, r_r = r_r, r.inner(r)
        if math.sqrt(r_r) <= inner_tol:
            status = "interior"
            break
        b = r_r / r_r_old
        delta = -r + b * delta
        e_pd = b * (e_pd + alpha * d_pd)
        d_pd = r_r + b * b * d_pd
    return TcgResult(eta, heta, status, j)


@dataclass
class TrustRegionParams:
    delta0: float | None = None
    delta_max: float | None = None
    rho_accept: float = 0.1
    rho_shrink: float = 0.25
    rho_expand: float = 0.75
    shrink: float = 0.25
    expand: float = 2.0
    tol: float = 1e-10
    max_inner: int | None = None
    theta: float = 0.5
    kappa: float = 0.5
    rho_regularization: float = 1e3
    fd_step: float | None = None


def update_radius(radius: float, rho: float, on_boundary: bool, model_decreased: bool,
                  p: TrustRegionParams, delta_max: float) -> float:
    if not model_decreased or not rho >= p.rho_shrink:
        return p.shrink * radius
    if rho > p.rho_expand and on_boundary:
        return min(p.expand * radius, delta_max)
    return radius


def hessian_operator(
    choice: HessianChoice,
    f_and_grad: FAndGrad,
    x: TtnParam,
    egrad: TtnTangent,
    retract,
    fd_step: float | None = None,
    stats: dict | None = None,
):
    """Projected gradient, Hessian-vector operator and the operator's domain projector.

    ``CART_H`` differentiates the Cartesian-horizontal gradient field,
    ``ORTH_HESS`` and ``TOTAL_HESS`` the tangent gradient field; ``ORTH_HESS``
    additionally projects onto the orthogonal horizontal space.
    """
    choice = HessianChoice.parse(choice)
    if choice is HessianChoice.CART_H:
        P = lambda p, v: geo.proj_cart_horizontal(p, v, check=False)  # noqa: E731
    else:
        P = lambda p, v: geo.proj_tangent(p, v, check=False)  # noqa: E731

    def field_(p):
        if stats is not None:
            stats["grad_evals"] = stats.get("grad_evals", 0) + 1
        return P(p, f_and_grad(p)[1])

    grad = P(x, egrad)
    if choice is HessianChoice.ORTH_HESS:
        domain = lambda p, v: geo.proj_orth_horizontal(  # noqa: E731
            p, P(p, v), check=False, stats=stats)
    else:
        domain = P

    def op(xi):
        if stats is not None:
            stats["hess_evals"] = stats.get("hess_evals", 0) + 1
        if xi.norm() == 0.0:
            return TtnTangent.zeros(x.tree)
        hv = geo.hess_fd(field_, x, xi, retract, P, h=fd_step, grad_x=grad)
        if choice is HessianChoice.ORTH_HESS:
            hv = geo.proj_orth_horizontal(x, hv, check=False, stats=stats)
        return hv

    return grad, op, domain


def rtr(
    f_and_grad: FAndGrad,
    x0: TtnParam,
    hess: HessianChoice | str = HessianChoice.CART_H,
    retraction: RetractionKind | str = RetractionKind.QR,
    params: TrustRegionParams | None = None,
    max_iter: int = 200,
    f: Callable[[TtnParam], float] | None = None,
    callback: Callable[[IterationRecord], None] | None = None,
    diagnose_symmetry: bool = False,
) -> OptimizerReport:
    """Riemannian trust-region method with a truncated-CG subproblem solver.

    Hessian-vector products are forward differences of the gradient field
    matching ``hess``. Records carry the radius used for each iteration's
    subproblem. With ``diagnose_symmetry`` the report's stats collect the
    measured asymmetry ``<H a, b> - <a, H b>`` of the model operator at every
    outer iteration (no symmetry is assumed anywhere).
    """
    geo._require_orthogonal(x0)
    p = params or TrustRegionParams()
    hess = HessianChoice.parse(hess)
    R = _retraction(retraction)
    if f is None:
        f = lambda q: f_and_grad(q)[0]  # noqa: E731
    tree = x0.tree
    dim = tree.dim_tangent()
    delta_max = p.delta_max if p.delta_max is not None else math.sqrt(dim)
    radius = p.delta0 if p.delta0 is not None else 0.1 * math.sqrt(dim)
    max_inner = p.max_inner if p.max_inner is not None else dim
    stats: dict = {"accepted": 0, "rejected": 0, "tcg_status": {}, "inner_iters": 0}
    if diagnose_symmetry:
        stats["symmetry_defect"] = []
    start = time.perf_counter()
    records: list[IterationRecord] = []

    x = x0
    fx, egrad = f_and_grad(x)
    termination = "max_iter"
    rng = np.random.default_rng(0)
    for k in range(max_iter + 1):
        grad, H, dom = hessian_operator(hess, f_and_grad, x, egrad, R, p.fd_step, stats)
        g_sq = grad.inner(grad)
        rec = IterationRecord(k, fx, g_sq, radius, time.perf_counter() - start)
        records.append(rec)
        if callback is not None:
            callback(rec)
        if g_sq < p.tol:
            termination = "converged"
            break
        if k == max_iter:
            break
        if diagnose_symmetry:
            a = _random_in(dom, x, rng)
            b = _random_in(dom, x, rng)
            stats["symmetry_defect"].append(H(a).inner(b) - a.inner(H(b)))
        tcg = steihaug_cg(H, grad, radius, max_inner=max_inner, theta=p.theta, kappa=p.kappa)
        stats["inner_iters"] += tcg.iterations
        stats["tcg_status"][tcg.status] = stats["tcg_status"].get(tcg.status, 0) + 1
        eta = tcg.step
        try:
            x_prop = R(x, eta)
            f_prop = f(x_prop)
        except np.linalg.LinAlgError:
            x_prop, f_prop = None, math.inf
        reg = max(1.0, abs(fx)) * np.finfo(float).eps * p.rho_regularization
        rho_num = fx - f_prop + reg
        rho_den = -(grad.inner(eta) + 0.5 * eta.inner(tcg.hess_step)) + reg
        model_decreased = rho_den >= 0.0
        rho = rho_num / rho_den if rho_den != 0.0 else -math.inf
        on_boundary = tcg.status in ("negative_curvature", "exceeded_radius")
        radius = update_radius(radius, rho, on_boundary, model_decreased, p, delta_max)
        if model_decreased and rho > p.rho_accept and x_prop is not None:
            x = x_prop
            fx, egrad = f_and_grad(x)
            stats["accepted"] += 1
        else:
            stats["rejected"] += 1
    return OptimizerReport(records, x, termination, stats)


def _random_in(domain, x: TtnParam, rng) -> TtnTangent:
    v = TtnTangent.from_flat(x.tree, rng.standard_normal(x.tree.num_params()))
    return domain(x, v)


# ---------------------------------------------------------------------------
# Newton


def newton_solve(
    hess_op: Callable[[BlockEnsemble], BlockEnsemble],
    grad: BlockEnsemble,
    tol: float = 1e-10,
    max_iter: int = 1000,
    proj: Callable[[BlockEnsemble], BlockEnsemble] | None = None,
) -> TtnTangent:
    """Conjugate gradients on ``H d = -grad``.

    ``proj``, if given, is applied to every operator output so the iteration
    stays in the subspace the gradient was projected to. On breakdown
    (non-positive curvature) the previous iterate is returned.
    """
    tree = grad.tree
    if proj is not None:
        op = hess_op
        hess_op = lambda v: proj(op(v))  # noqa: E731
    d = TtnTangent.zeros(tree)
    r = -TtnTangent(tree, grad.blocks)
    rr = r.inner(r)
    target = tol * math.sqrt(rr)
    p = r
    for _ in range(max_iter):
        if math.sqrt(rr) <= target or rr == 0.0:
            break
        hp = hess_op(p)
        php = p.inner(hp)
        if php <= 0.0:
            break
        alpha = rr / php
        d = d + alpha * p
        r = r - alpha * hp
        rr_new = r.inner(r)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return d


def rnm(
    f_and_grad: FAndGrad,
    x0: TtnParam,
    hess: HessianChoice | str = HessianChoice.CART_H,
    retraction: RetractionKind | str = RetractionKind.QR,
    tol: float = 1e-10,
    max_iter: int = 50,
    newton_tol: float = 1e-10,
    fd_step: float | None = None,
) -> OptimizerReport:
    """Plain Riemannian Newton iteration with CG-solved Newton systems (no globalization)."""
    geo._require_orthogonal(x0)
    R = _retraction(retraction)
    start = time.perf_counter()
    records = []
    x = x0
    fx, egrad = f_and_grad(x)
    termination = "max_iter"
    step = 0.0
    for k in range(max_iter + 1):
        grad, H, _ = hessian_operator(hess, f_and_grad, x, egrad, R, fd_step)
        g_sq = grad.inner(grad)
        records.append(IterationRecord(k, fx, g_sq, step, time.perf_counter() - start))
        if g_sq < tol:
            termination = "converged"
            break
        if k == max_iter:
            break
        d = newton_solve(H, grad, tol=newton_tol, max_iter=grad.tree.num_params())
        step = d.norm()
        x = R(x, d)
        fx, egrad = f_and_grad(x)
    return OptimizerReport(records, x, termination)
