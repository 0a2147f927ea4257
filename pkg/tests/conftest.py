import numpy as np
import pytest

from ttnopt.geometry import proj_tangent
from ttnopt.learning import Batch, spin_feature_map
from ttnopt.tree import build_balanced
from ttnopt.ttn import TtnTangent, random_orthogonal


def random_ambient(tree, rng):
    return TtnTangent.from_flat(tree, rng.standard_normal(tree.num_params()))


def random_tangent(x, rng):
    return proj_tangent(x, random_ambient(x.tree, rng))


def random_batch(tree, n, rng):
    feats = [spin_feature_map(rng.uniform(size=n)) if tree.external_dims[i] == 2
             else rng.standard_normal((n, tree.external_dims[i]))
             for i in range(tree.d)]
    return Batch(feats, rng.standard_normal((n, tree.label_dim)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_tree():
    # non-square blocks so the horizontal spaces are nontrivial
    return build_balanced(4, [2, 3, 2, 3], 3, 4)


@pytest.fixture
def deep_tree():
    return build_balanced(8, [2] * 8, 3, 3)


@pytest.fixture
def small_x(small_tree):
    return random_orthogonal(small_tree, 7)


@pytest.fixture
def deep_x(deep_tree):
    return random_orthogonal(deep_tree, 11)


# one pass/fail line per acceptance criterion in the terminal summary
_CRITERIA: dict[int, list[tuple[str, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    outcome = "PASS" if call.excinfo is None else "FAIL"
    _CRITERIA.setdefault(marker.args[0], []).append((item.name, outcome))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _CRITERIA[n]
        status = "PASS" if all(o == "PASS" for _, o in results) else "FAIL"
        names = ", ".join(f"{name}={o}" for name, o in results)
        terminalreporter.write_line(f"criterion {n}: {status}  ({names})")
