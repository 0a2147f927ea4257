import numpy as np
import pytest

from conftest import random_ambient, random_tangent
from ttnopt.geometry import proj_tangent
from ttnopt.retractions import RetractionKind, cartesian_retract, stiefel_retract
from ttnopt.ttn import TtnTangent, apply_gauge, is_orthogonal, phi_dense, random_gauge

KINDS = list(RetractionKind)


def stiefel_point(rng, n=6, k=3):
    q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return q


def stiefel_tangent(x, v):
    s = x.T @ v
    return v - 0.5 * x @ (s + s.T)


def test_flags_and_parse():
    assert not RetractionKind.QR.equivariant
    assert RetractionKind.POLAR.equivariant and RetractionKind.CAYLEY.equivariant
    assert RetractionKind.parse("pd") is RetractionKind.POLAR
    assert RetractionKind.parse("CT") is RetractionKind.CAYLEY
    with pytest.raises(ValueError):
        RetractionKind.parse("svd")


def test_zero_step(rng):
    x = stiefel_point(rng)
    z = np.zeros_like(x)
    assert np.array_equal(stiefel_retract("qr", x, z), x)
    for kind in ("polar", "cayley"):
        assert np.abs(stiefel_retract(kind, x, z) - x).max() <= 1e-14


@pytest.mark.parametrize("kind", KINDS)
def test_orthonormal_output_and_first_order(rng, kind):
    x = stiefel_point(rng)
    v = stiefel_tangent(x, rng.standard_normal(x.shape))
    y = stiefel_retract(kind, x, v)
    assert np.abs(y.T @ y - np.eye(3)).max() <= 1e-12
    h = 1e-6
    d = (stiefel_retract(kind, x, h * v) - stiefel_retract(kind, x, -h * v)) / (2 * h)
    assert np.abs(d - v).max() <= 1e-7


def test_polar_closed_form():
    x = np.array([[1.0], [0.0]])
    v = np.array([[0.0], [1.0]])
    assert np.allclose(stiefel_retract("polar", x, v), np.array([[1.0], [1.0]]) / np.sqrt(2),
                       atol=1e-15)


@pytest.mark.parametrize("kind", ["polar", "cayley"])
def test_stiefel_equivariance(rng, kind):
    x = stiefel_point(rng)
    v = stiefel_tangent(x, rng.standard_normal(x.shape))
    q = stiefel_point(rng, 6, 6)
    w = stiefel_point(rng, 3, 3)
    lhs = stiefel_retract(kind, q @ x @ w, q @ v @ w)
    rhs = q @ stiefel_retract(kind, x, v) @ w
    assert np.abs(lhs - rhs).max() <= 1e-12


def test_qr_rank_deficient(rng):
    x = stiefel_point(rng)
    with pytest.raises(np.linalg.LinAlgError):
        stiefel_retract("qr", x, -x)


def test_shape_mismatch(rng):
    with pytest.raises(ValueError):
        stiefel_retract("qr", stiefel_point(rng), np.zeros((6, 2)))


@pytest.mark.parametrize("kind", KINDS)
def test_cartesian_basic(rng, deep_x, kind):
    tree = deep_x.tree
    assert cartesian_retract(kind, deep_x, TtnTangent.zeros(tree)).allclose(deep_x, atol=1e-14, rtol=0)
    xi = random_tangent(deep_x, rng)
    y = cartesian_retract(kind, deep_x, xi)
    assert is_orthogonal(y, 1e-11)
    assert np.array_equal(y.blocks[tree.root], deep_x.blocks[tree.root] + xi.blocks[tree.root])


@pytest.mark.parametrize("kind", KINDS)
def test_cartesian_first_order_slope(rng, deep_x, kind):
    xi = random_tangent(deep_x, rng)
    xi = xi / xi.norm()
    hs = [1e-3, 1e-4, 1e-5]
    errs = [((cartesian_retract(kind, deep_x, h * xi) - deep_x) / h - xi).norm() for h in hs]
    slopes = np.diff(np.log(errs)) / np.diff(np.log(hs))
    assert np.all(np.abs(slopes - 1.0) <= 0.1)


@pytest.mark.parametrize("kind", ["polar", "cayley"])
def test_cartesian_equivariance(rng, deep_x, kind):
    a = random_gauge(deep_x.tree, rng)
    xi = random_tangent(deep_x, rng)
    lhs = cartesian_retract(kind, apply_gauge(deep_x, a), apply_gauge(xi, a))
    rhs = apply_gauge(cartesian_retract(kind, deep_x, xi), a)
    assert (lhs - rhs).norm() <= 1e-11 * deep_x.norm()


def test_qr_equivariance_counterexample(rng, deep_x):
    found = False
    for _ in range(20):
        a = random_gauge(deep_x.tree, rng)
        xi = random_tangent(deep_x, rng)
        lhs = cartesian_retract("qr", apply_gauge(deep_x, a), apply_gauge(xi, a))
        rhs = apply_gauge(cartesian_retract("qr", deep_x, xi), a)
        if (lhs - rhs).norm() > 1e-6 * deep_x.norm():
            found = True
            break
    assert found


@pytest.mark.parametrize("kind", ["polar", "cayley"])
def test_quotient_consistency(rng, small_x, kind):
    from ttnopt.geometry import proj_cart_horizontal
    a = random_gauge(small_x.tree, rng)
    y = apply_gauge(small_x, a)
    xi = proj_cart_horizontal(small_x, random_ambient(small_x.tree, rng))
    px = phi_dense(cartesian_retract(kind, small_x, xi))
    py = phi_dense(cartesian_retract(kind, y, apply_gauge(xi, a)))
    assert np.linalg.norm(px - py) <= 1e-11 * np.linalg.norm(px)


def test_cayley_discards_normal_part(rng, deep_x):
    v = random_ambient(deep_x.tree, rng)
    a = cartesian_retract("cayley", deep_x, v)
    b = cartesian_retract("cayley", deep_x, proj_tangent(deep_x, v))
    for t in deep_x.tree.internal_nonroot:
        assert np.allclose(a.blocks[t], b.blocks[t], atol=1e-12)
