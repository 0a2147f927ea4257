"""Tree tensor network parameters, the dense map, gauge action and checkpoints."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import dematricize
from .tree import DimensionTree

ORACLE_CAP = 10**7
RANK_TOL = 1e-10
CHECKPOINT_VERSION = "ttnopt-checkpoint/1"


class BlockEnsemble:
    """Mapping from internal tree nodes to order-3 arrays, with vector-space ops."""

    __slots__ = ("tree", "blocks")

    def __init__(self, tree: DimensionTree, blocks: Mapping[int, np.ndarray]):
        self.tree = tree
        self.blocks = {t: np.asarray(blocks[t], dtype=float) for t in tree.internal}
        for t in tree.internal:
            if self.blocks[t].shape != tree.block_shape(t):
                raise ValueError(
                    f"block {t} has shape {self.blocks[t].shape}, "
                    f"expected {tree.block_shape(t)}"
                )

    @classmethod
    def zeros(cls, tree: DimensionTree):
        return cls(tree, {t: np.zeros(tree.block_shape(t)) for t in tree.internal})

    def matrix(self, t: int) -> np.ndarray:
        """The (1,2)-matricization of block ``t``."""
        a, b, c = self.blocks[t].shape
        return self.blocks[t].reshape(a * b, c, order="F")

    def _like(self, blocks):
        return type(self)(self.tree, blocks)

    def _check(self, other: "BlockEnsemble") -> None:
        if other.tree is not self.tree and other.tree != self.tree:
            raise ValueError("ensembles live on different trees")

    def __add__(self, other):
        self._check(other)
        return self._like({t: self.blocks[t] + other.blocks[t] for t in self.blocks})

    def __sub__(self, other):
        self._check(other)
        return self._like({t: self.blocks[t] - other.blocks[t] for t in self.blocks})

    def __mul__(self, a: float):
        return self._like({t: a * b for t, b in self.blocks.items()})

    __rmul__ = __mul__

    def __truediv__(self, a: float):
        return self._like({t: b / a for t, b in self.blocks.items()})

    def __neg__(self):
        return self._like({t: -b for t, b in self.blocks.items()})

    def inner(self, other: "BlockEnsemble") -> float:
        self._check(other)
        return float(sum(np.vdot(self.blocks[t], other.blocks[t]) for t in self.blocks))

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.blocks[t].ravel(order="F") for t in self.tree.internal])

    @classmethod
    def from_flat(cls, tree: DimensionTree, v: np.ndarray):
        blocks, pos = {}, 0
        for t in tree.internal:
            shape = tree.block_shape(t)
            n = int(np.prod(shape))
            blocks[t] = np.asarray(v[pos:pos + n]).reshape(shape, order="F")
            pos += n
        if pos != len(v):
            raise ValueError("flat vector length does not match tree")
        return cls(tree, blocks)

    def copy(self):
        return self._like({t: b.copy() for t, b in self.blocks.items()})

    def allclose(self, other, atol=0.0, rtol=1e-12) -> bool:
        return all(np.allclose(self.blocks[t], other.blocks[t], atol=atol, rtol=rtol)
                   for t in self.blocks)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(nodes={len(self.blocks)}, norm={self.norm():.6g})"


class TtnParam(BlockEnsemble):
    """TTN parameter ``x = (B_t)``; block ``t`` has shape ``(k_L, k_R, k_t)``."""

    __slots__ = ()


class TtnTangent(BlockEnsemble):
    """Tangent vector ``(dB_t)`` shaped like a parameter."""

    __slots__ = ()


def as_tangent(x: BlockEnsemble) -> TtnTangent:
    return TtnTangent(x.tree, x.blocks)


def phi_dense(x: TtnParam, cap: int = ORACLE_CAP) -> np.ndarray:
    """Dense tensor ``X`` of shape ``(n_1, ..., n_d, K)`` represented by ``x``.

    Builds the transfer matrices explicitly, so this is a verification oracle
    only and refuses inputs above ``cap`` entries.
    """
    tree = x.tree
    size = int(np.prod(tree.external_dims, dtype=object)) * tree.label_dim
    if size > cap:
        raise MemoryError(f"dense tensor has {size} entries, oracle cap is {cap}")
    u: dict[int, np.ndarray] = {i: np.eye(tree.dim(i)) for i in tree.leaves}
    for t in tree.traverse():
        left, right = tree.children(t)
        ul, ur = u[left], u[right]
        w = np.einsum("ia,jb,abk->ijk", ul, ur, x.blocks[t])
        u[t] = w.reshape(ul.shape[0] * ur.shape[0], -1, order="F")
    dims = tuple(tree.external_dims) + (tree.label_dim,)
    return dematricize(u[tree.root], tuple(range(tree.d)), dims)


def full_rank_defects(x: TtnParam, rank_tol: float = RANK_TOL) -> list[str]:
    """Describe every rank condition violated by ``x`` (empty when full rank)."""

    def rank(m: np.ndarray) -> int:
        s = np.linalg.svd(m, compute_uv=False)
        if s.size == 0 or s[0] == 0.0:
            return 0
        return int(np.sum(s > rank_tol * s[0]))

    tree = x.tree
    out = []
    for t in tree.internal_nonroot:
        r = rank(x.matrix(t))
        if r < tree.dim(t):
            out.append(f"node {t}: B_t has column rank {r} < {tree.dim(t)}")
    for t in tree.internal:
        if t in tree.lowest:
            continue
        b = x.blocks[t]
        for mode in (0, 1):
            m = np.moveaxis(b, mode, 0).reshape(b.shape[mode], -1, order="F")
            r = rank(m)
            if r < min(m.shape):
                out.append(f"node {t}: mode-{mode + 1} matricization has rank {r}")
    return out


def is_full_rank(x: TtnParam, rank_tol: float = RANK_TOL) -> bool:
    return not full_rank_defects(x, rank_tol)


def orthogonality_defect(x: TtnParam) -> float:
    """Largest ``||B_t^T B_t - I||_F`` over non-root nodes."""
    worst = 0.0
    for t in x.tree.internal_nonroot:
        b = x.matrix(t)
        worst = max(worst, float(np.linalg.norm(b.T @ b - np.eye(b.shape[1]))))
    return worst


def is_orthogonal(x: TtnParam, tol: float = 1e-12) -> bool:
    return orthogonality_defect(x) <= tol


def qr_pos(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR with nonnegative diagonal in ``R``."""
    q, r = np.linalg.qr(a)
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return q * s, s[:, None] * r


def orthogonalize(x: TtnParam, rank_tol: float = RANK_TOL) -> TtnParam:
    """Leaves-up QR sweep; returns an orthogonal parameter with the same tensor."""
    defects = full_rank_defects(x, rank_tol)
    if defects:
        raise ValueError("cannot orthogonalize a rank-deficient parameter: " + "; ".join(defects))
    tree = x.tree
    blocks = {t: b.copy() for t, b in x.blocks.items()}
    for t in tree.traverse():
        if t == tree.root:
            continue
        a, b, c = blocks[t].shape
        q, r = qr_pos(blocks[t].reshape(a * b, c, order="F"))
        blocks[t] = q.reshape(a, b, c, order="F")
        p = tree.nodes[t].parent
        mode = 0 if tree.nodes[p].left == t else 1
        blocks[p] = np.moveaxis(np.tensordot(r, blocks[p], axes=(1, mode)), 0, mode)
    return TtnParam(tree, blocks)


def random_orthogonal(tree: DimensionTree, seed: int | None = None) -> TtnParam:
    """Random orthogonal parameter, deterministic given ``seed``.

    Blocks are drawn standard normal; every non-root block is replaced by the
    Q factor of its own QR decomposition and the root is kept as drawn. A
    global :func:`orthogonalize` sweep would instead push the product of all
    R factors into the root, whose norm then grows exponentially with depth.
    """
    rng = np.random.default_rng(seed)
    blocks = {t: rng.standard_normal(tree.block_shape(t)) for t in tree.internal}
    for t in tree.internal_nonroot:
        a, b, c = blocks[t].shape
        q, _ = qr_pos(blocks[t].reshape(a * b, c, order="F"))
        blocks[t] = q.reshape(a, b, c, order="F")
    return TtnParam(tree, blocks)


# ---------------------------------------------------------------------------
# gauge group


def random_gauge(tree: DimensionTree, rng: np.random.Generator) -> dict[int, np.ndarray]:
    """Haar-distributed orthogonal matrix on every non-root internal node."""
    out = {}
    for t in tree.internal_nonroot:
        k = tree.dim(t)
        q, r = np.linalg.qr(rng.standard_normal((k, k)))
        out[t] = q * np.sign(np.diag(r))
    return out


def compose_gauge(a: Mapping[int, np.ndarray], b: Mapping[int, np.ndarray]) -> dict:
    """Gauge element with ``apply_gauge(x, a*b) == apply_gauge(apply_gauge(x, a), b)``."""
    return {t: a[t] @ b[t] for t in a}


def apply_gauge(x: BlockEnsemble, gauge: Mapping[int, np.ndarray]) -> BlockEnsemble:
    """Apply ``(A_L^T ⊗ A_R^T ⊗ A_t^T)`` to each block (identity on leaves and root).

    Works for parameters and tangent vectors alike, since the action is linear.
    """
    tree = x.tree
    for t, a in gauge.items():
        if t not in tree.internal_nonroot:
            raise ValueError(f"gauge matrices live on non-root internal nodes, got {t}")
        if a.shape != (tree.dim(t), tree.dim(t)):
            raise ValueError(f"gauge matrix at node {t} has shape {a.shape}")
    blocks = {}
    for t in tree.internal:
        left, right = tree.children(t)
        b = x.blocks[t]
        al, ar, at = gauge.get(left), gauge.get(right), gauge.get(t)
        if al is not None:
            b = np.einsum("ia,ijk->ajk", al, b)
        if ar is not None:
            b = np.einsum("jb,ijk->ibk", ar, b)
        if at is not None:
            b = np.einsum("kc,ijk->ijc", at, b)
        blocks[t] = b
    return type(x)(tree, blocks)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, x: TtnParam) -> None:
    """Write ``x`` as an ``.npz`` archive with a JSON header.

    Each block is stored flattened in column-major order next to its shape.
    """
    meta = {
        "format": CHECKPOINT_VERSION,
        "layout": "column-major",
        "tree": x.tree.to_dict(),
        "blocks": {str(t): list(x.tree.block_shape(t)) for t in x.tree.internal},
    }
    arrays = {f"block_{t}": x.blocks[t].ravel(order="F") for t in x.tree.internal}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path: str | Path, check_orthogonal: bool = True) -> TtnParam:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
        if meta.get("layout") != "column-major":
            raise ValueError("unsupported block layout")
        tree = DimensionTree.from_dict(meta["tree"])
        blocks = {}
        for t in tree.internal:
            shape = tuple(meta["blocks"][str(t)])
            if shape != tree.block_shape(t):
                raise ValueError(f"block {t} shape {shape} disagrees with the tree")
            flat = data[f"block_{t}"]
            if flat.size != int(np.prod(shape)):
                raise ValueError(f"block {t} holds {flat.size} values, expected {shape}")
            blocks[t] = flat.reshape(shape, order="F")
    x = TtnParam(tree, blocks)
    if check_orthogonal and not is_orthogonal(x, 1e-8):
        raise ValueError("checkpoint parameter is not orthogonal")
    return x
