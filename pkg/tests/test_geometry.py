import numpy as np
import pytest

from conftest import random_ambient, random_tangent
from ttnopt import geometry as geo
from ttnopt.retractions import cartesian_retract
from ttnopt.ttn import TtnTangent, apply_gauge, phi_dense, random_gauge


def matrix_of(op, tree):
    n = tree.num_params()
    cols = [op(TtnTangent.from_flat(tree, e)).flat() for e in np.eye(n)]
    return np.array(cols).T


def rank(m, tol=1e-9):
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(s > tol * s[0]))


def vertical_basis(x):
    tree = x.tree
    cols = []
    for t in tree.internal_nonroot:
        k = tree.dim(t)
        for i in range(k):
            for j in range(i + 1, k):
                g = np.zeros((k, k))
                g[i, j], g[j, i] = 1.0, -1.0
                cols.append(geo.vertical_vector(x, {t: g}).flat())
    return np.array(cols).T


@pytest.fixture(params=["small", "deep"])
def point(request, small_x, deep_x):
    return small_x if request.param == "small" else deep_x


def test_metric(rng, small_x):
    xi = random_ambient(small_x.tree, rng)
    assert geo.metric(xi, TtnTangent.zeros(small_x.tree)) == 0.0
    assert geo.metric(xi, xi) > 0.0
    a = random_gauge(small_x.tree, rng)
    eta = random_ambient(small_x.tree, rng)
    assert np.isclose(geo.metric(apply_gauge(xi, a), apply_gauge(eta, a)), geo.metric(xi, eta),
                      rtol=1e-13)


def test_proj_tangent(rng, point):
    tree = point.tree
    v = random_ambient(tree, rng)
    p = geo.proj_tangent(point, v)
    assert geo.tangent_defect(point, p) <= 1e-12
    assert (geo.proj_tangent(point, p) - p).norm() <= 1e-13 * p.norm()
    w = random_ambient(tree, rng)
    assert np.isclose(p.inner(w), v.inner(geo.proj_tangent(point, w)), rtol=1e-12)
    # x itself: non-root parts vanish, root passes through
    px = geo.proj_tangent(point, TtnTangent(tree, point.blocks))
    for t in tree.internal_nonroot:
        assert np.abs(px.blocks[t]).max() <= 1e-14
    assert np.array_equal(px.blocks[tree.root], point.blocks[tree.root])


def test_proj_cart_horizontal(rng, point):
    tree = point.tree
    v = random_ambient(tree, rng)
    h = geo.proj_cart_horizontal(point, v)
    for t in tree.internal_nonroot:
        assert np.abs(np.tensordot(point.blocks[t], h.blocks[t], axes=([0, 1], [0, 1]))).max() <= 1e-12
    assert np.array_equal(h.blocks[tree.root], v.blocks[tree.root])
    assert (geo.proj_cart_horizontal(point, h) - h).norm() <= 1e-13 * h.norm()
    assert (geo.proj_cart_horizontal(point, geo.proj_tangent(point, v)) - h).norm() <= 1e-13 * h.norm()
    # kernel: dB_t = B_t M
    kern = {t: point.blocks[t] @ rng.standard_normal((tree.dim(t),) * 2) for t in tree.internal_nonroot}
    kern[tree.root] = np.zeros(tree.block_shape(tree.root))
    assert geo.proj_cart_horizontal(point, TtnTangent(tree, kern)).norm() <= 1e-13


def test_cart_self_adjoint_on_tangent(rng, point):
    u, w = random_tangent(point, rng), random_tangent(point, rng)
    lhs = geo.proj_cart_horizontal(point, u).inner(w)
    rhs = u.inner(geo.proj_cart_horizontal(point, w))
    assert np.isclose(lhs, rhs, rtol=1e-12)


def test_vertical_vector(rng, point):
    tree = point.tree
    zero = geo.vertical_vector(point, {})
    assert zero.norm() == 0.0
    g = geo.random_skew_family(tree, rng)
    v = geo.vertical_vector(point, g)
    assert geo.tangent_defect(point, v) <= 1e-12
    with pytest.raises(ValueError):
        geo.vertical_vector(point, {tree.internal_nonroot[0]: np.ones((tree.dim(tree.internal_nonroot[0]),) * 2)})


def test_vertical_locality(rng, deep_x):
    tree = deep_x.tree
    t = tree.lowest[0]
    k = tree.dim(t)
    a = rng.standard_normal((k, k))
    v = geo.vertical_vector(deep_x, {t: a - a.T})
    touched = {s for s in tree.internal if np.abs(v.blocks[s]).max() > 0}
    assert touched == {t, tree.nodes[t].parent}


def test_vertical_annihilated_by_phi(rng, small_x):
    g = geo.random_skew_family(small_x.tree, rng)
    v = geo.vertical_vector(small_x, g)
    h = 1e-6
    plus = phi_dense(cartesian_retract("polar", small_x, h * v))
    minus = phi_dense(cartesian_retract("polar", small_x, -h * v))
    d = (plus - minus) / (2 * h)
    assert np.linalg.norm(d) <= 1e-6 * np.linalg.norm(phi_dense(small_x))


def test_oblique(rng, point):
    tree = point.tree
    g = geo.random_skew_family(tree, rng)
    assert geo.proj_oblique(point, geo.vertical_vector(point, g)).norm() <= 1e-11
    u = random_tangent(point, rng)
    h = geo.proj_cart_horizontal(point, u)
    assert (geo.proj_oblique(point, h) - h).norm() <= 1e-12 * h.norm()
    p = geo.proj_oblique(point, u)
    assert (geo.proj_oblique(point, p) - p).norm() <= 1e-11 * p.norm()


def test_oblique_requires_tangent(rng, small_x):
    with pytest.raises(ValueError):
        geo.proj_oblique(small_x, random_ambient(small_x.tree, rng))


def test_oblique_transpose(rng, point):
    tree = point.tree
    for _ in range(20):
        u, w = random_tangent(point, rng), random_tangent(point, rng)
        lhs = geo.proj_oblique(point, u).inner(w)
        rhs = u.inner(geo.proj_oblique_transpose(point, w))
        assert abs(lhs - rhs) <= 1e-11 * u.norm() * w.norm()
    out = geo.proj_oblique_transpose(point, random_tangent(point, rng))
    assert geo.orth_horizontal_defect(point, out) <= 1e-11
    vert = geo.vertical_vector(point, geo.random_skew_family(tree, rng))
    assert abs(out.inner(vert)) <= 1e-11 * out.norm() * vert.norm()


def test_oblique_not_self_adjoint(rng, point):
    worst = 0.0
    for _ in range(5):
        u, w = random_tangent(point, rng), random_tangent(point, rng)
        d = geo.proj_oblique(point, u).inner(w) - u.inner(geo.proj_oblique(point, w))
        worst = max(worst, abs(d) / (u.norm() * w.norm()))
    assert worst > 1e-6


def test_orth_horizontal(rng, point):
    tree = point.tree
    v = random_tangent(point, rng)
    h = geo.proj_orth_horizontal(point, v, tol=1e-13)
    assert geo.orth_horizontal_defect(point, h) <= 1e-9
    for _ in range(10):
        vert = geo.vertical_vector(point, geo.random_skew_family(tree, rng))
        assert abs(h.inner(vert)) <= 1e-9 * h.norm() * vert.norm()
    assert (geo.proj_orth_horizontal(point, h, tol=1e-13) - h).norm() <= 1e-11 * h.norm()
    # orthogonal decomposition
    cross = h.inner(v - h)
    assert abs(cross) <= 1e-9 * v.norm() ** 2
    # vertical input maps to zero
    vert = geo.vertical_vector(point, geo.random_skew_family(tree, rng))
    assert geo.proj_orth_horizontal(point, vert).norm() <= 1e-9 * vert.norm()
    # self-adjoint
    w = random_tangent(point, rng)
    lhs = h.inner(w)
    rhs = v.inner(geo.proj_orth_horizontal(point, w, tol=1e-13))
    assert abs(lhs - rhs) <= 1e-10 * v.norm() * w.norm()


def test_orth_horizontal_fixes_transpose_image(rng, point):
    z = geo.proj_oblique_transpose(point, random_tangent(point, rng))
    assert (geo.proj_orth_horizontal(point, z) - z).norm() <= 1e-9 * z.norm()


def test_orth_horizontal_stats_and_solver_error(rng, deep_x):
    v = random_tangent(deep_x, rng)
    stats = {}
    geo.proj_orth_horizontal(deep_x, v, stats=stats)
    assert stats["cg_iters"] > 0
    with pytest.raises(geo.SolverError) as err:
        geo.proj_orth_horizontal(deep_x, v, tol=1e-14, max_iter=1)
    assert err.value.residual > 0


def test_vertical_adjoint_matches_metric(rng, point):
    tree = point.tree
    g = geo.random_skew_family(tree, rng)
    w = random_tangent(point, rng)
    lhs = geo.vertical_vector(point, g).inner(w)
    adj = geo.vertical_adjoint(point, w)
    rhs = sum(np.vdot(g[t], adj[t]) for t in g)
    assert abs(lhs - rhs) <= 1e-12 * w.norm() * np.sqrt(sum(np.vdot(m, m) for m in g.values()))
    assert all(np.allclose(m, -m.T) for m in adj.values())


def test_orth_horizontal_methods_agree(rng, deep_x):
    v = random_tangent(deep_x, rng)
    a = geo.proj_orth_horizontal(deep_x, v, tol=1e-13, method="vertical")
    b = geo.proj_orth_horizontal(deep_x, v, tol=1e-13, method="oblique")
    assert (a - b).norm() <= 1e-10 * v.norm()
    with pytest.raises(ValueError):
        geo.proj_orth_horizontal(deep_x, v, method="lyapunov")


def _scaled_root(x, c):
    blocks = dict(x.blocks)
    blocks[x.tree.root] = c * blocks[x.tree.root]
    return type(x)(x.tree, blocks)


def test_orth_horizontal_large_root(rng, deep_x):
    # a huge root makes P P^T ill-conditioned; the vertical solve is unaffected
    x = _scaled_root(deep_x, 1e7)
    v = random_tangent(x, rng)
    h = geo.proj_orth_horizontal(x, v)
    for _ in range(10):
        vert = geo.vertical_vector(x, geo.random_skew_family(x.tree, rng))
        assert abs(h.inner(vert)) <= 1e-9 * h.norm() * vert.norm()
    assert (geo.proj_orth_horizontal(x, h) - h).norm() <= 1e-9 * h.norm()
    with pytest.raises(geo.SolverError):
        geo.proj_orth_horizontal(x, v, method="oblique")


def test_dimension_counts(point):
    tree = point.tree
    p_t = matrix_of(lambda v: geo.proj_tangent(point, v), tree)
    p_c = matrix_of(lambda v: geo.proj_cart_horizontal(point, v), tree)
    vb = vertical_basis(point)
    assert rank(p_t) == tree.dim_tangent()
    assert rank(vb) == tree.dim_vertical()
    assert rank(p_c) == tree.dim_tangent() - tree.dim_vertical()
    # H and V are complements inside the tangent space
    assert rank(np.hstack([p_c, vb])) == tree.dim_tangent()
    p_x = matrix_of(lambda v: geo.proj_orth_horizontal(point, geo.proj_tangent(point, v), tol=1e-13), tree)
    assert rank(p_x, 1e-7) == tree.dim_tangent() - tree.dim_vertical()
    assert rank(np.hstack([p_x, vb]), 1e-7) == tree.dim_tangent()


def test_projector_matrices_idempotent(point):
    tree = point.tree
    for op in (
        lambda v: geo.proj_tangent(point, v),
        lambda v: geo.proj_cart_horizontal(point, v),
        lambda v: geo.proj_oblique(point, geo.proj_tangent(point, v)),
    ):
        m = matrix_of(op, tree)
        assert np.abs(m @ m - m).max() <= 1e-11


def test_horizontal_invariance_under_gauge(rng, point):
    tree = point.tree
    a = random_gauge(tree, rng)
    y = apply_gauge(point, a)
    v = random_ambient(tree, rng)
    lhs = apply_gauge(geo.proj_cart_horizontal(point, v), a)
    rhs = geo.proj_cart_horizontal(y, apply_gauge(v, a))
    assert (lhs - rhs).norm() <= 1e-11 * v.norm()
    u = random_tangent(point, rng)
    lhs = apply_gauge(geo.proj_orth_horizontal(point, u, tol=1e-13), a)
    rhs = geo.proj_orth_horizontal(y, apply_gauge(u, a), tol=1e-13)
    assert (lhs - rhs).norm() <= 1e-9 * u.norm()


def test_hess_fd_quadratic(rng, point):
    tree = point.tree
    # f = 1/2 ||x - x0||^2 with x0 differing only in the unconstrained root,
    # so the normal part of x - x0 vanishes and Hess f = Proj
    x0 = point.copy()
    x0.blocks[tree.root] = x0.blocks[tree.root] + rng.standard_normal(tree.block_shape(tree.root))

    def field(p):
        return geo.proj_tangent(p, TtnTangent(tree, (p - x0).blocks), check=False)

    xi = random_tangent(point, rng)
    retract = lambda p, v: cartesian_retract("polar", p, v)  # noqa: E731
    proj = lambda p, v: geo.proj_tangent(p, v, check=False)  # noqa: E731
    hv = geo.hess_fd(field, point, xi, retract, proj)
    assert (hv - xi).norm() <= 1e-6 * xi.norm()
    hv2 = geo.hess_fd(field, point, 2 * xi, retract, proj)
    assert (hv2 / 2 - hv).norm() <= 1e-5 * hv.norm()
    with pytest.raises(ValueError):
        geo.hess_fd(field, point, TtnTangent.zeros(tree), retract, proj)


def test_non_orthogonal_base_rejected(rng, small_x):
    y = small_x.copy()
    y.blocks[small_x.tree.internal_nonroot[0]] *= 2
    v = random_ambient(small_x.tree, rng)
    for fn in (geo.proj_tangent, geo.proj_cart_horizontal):
        with pytest.raises(ValueError):
            fn(y, v)
