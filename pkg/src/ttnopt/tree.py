"""Ordered binary dimension trees with node dimensions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

LEAVES_UP = "leaves_up"
ROOT_DOWN = "root_down"


@dataclass(frozen=True)
class Node:
    label: tuple[int, ...]
    parent: int | None
    left: int | None
    right: int | None
    dim: int

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _saturating_prod(values: Sequence[int], cap: int) -> int:
    p = 1
    for v in values:
        p *= v
        if p > cap:
            return cap + 1
    return p


class DimensionTree:
    """Rooted ordered binary tree over modes ``0..d-1``.

    Node 0 is the root. Leaves carry the external dimensions, the root carries
    the label dimension ``K`` and every other internal node a bond dimension.
    Instances are immutable after construction.
    """

    def __init__(self, nodes: Sequence[Node]):
        self.nodes: tuple[Node, ...] = tuple(nodes)
        self._validate()
        self.root = 0
        self.internal = tuple(i for i, n in enumerate(self.nodes) if not n.is_leaf)
        self.internal_nonroot = tuple(i for i in self.internal if i != self.root)
        self.leaves = tuple(i for i, n in enumerate(self.nodes) if n.is_leaf)
        self.lowest = tuple(i for i in self.internal if len(self.nodes[i].label) == 2)
        self.d = len(self.nodes[0].label)
        self.label_dim = self.nodes[0].dim
        self.external_dims = tuple(
            self.nodes[self.leaf_of(i)].dim for i in range(self.d)
        )
        self._leaves_up = tuple(self._postorder(self.root))
        self._root_down = tuple(reversed(self._leaves_up))

    def _validate(self) -> None:
        if not self.nodes:
            raise ValueError("empty tree")
        root = self.nodes[0]
        d = len(root.label)
        if root.parent is not None or root.label != tuple(range(d)):
            raise ValueError("root must be node 0 labelled with all modes")
        if d < 2:
            raise ValueError("a dimension tree needs at least two modes")
        for i, n in enumerate(self.nodes):
            if n.dim < 1:
                raise ValueError(f"node {i} has dimension {n.dim}")
            if n.is_leaf:
                if n.right is not None or len(n.label) != 1:
                    raise ValueError(f"leaf {i} must have a singleton label")
                continue
            left, right = self.nodes[n.left], self.nodes[n.right]
            if left.parent != i or right.parent != i:
                raise ValueError(f"inconsistent parent links at node {i}")
            if left.label + right.label != n.label:
                raise ValueError(f"children of node {i} do not form an ordered partition")

    def _postorder(self, i: int) -> Iterator[int]:
        n = self.nodes[i]
        if n.is_leaf:
            return
        yield from self._postorder(n.left)
        yield from self._postorder(n.right)
        yield i

    def leaf_of(self, mode: int) -> int:
        for i, n in enumerate(self.nodes):
            if n.is_leaf and n.label == (mode,):
                return i
        raise KeyError(mode)

    def traverse(self, order: str = LEAVES_UP) -> tuple[int, ...]:
        """Internal nodes, children before parents or parents before children."""
        if order == LEAVES_UP:
            return self._leaves_up
        if order == ROOT_DOWN:
            return self._root_down
        raise ValueError(f"unknown traversal order {order!r}")

    def dim(self, i: int) -> int:
        return self.nodes[i].dim

    def children(self, i: int) -> tuple[int, int]:
        n = self.nodes[i]
        return n.left, n.right

    def block_shape(self, i: int) -> tuple[int, int, int]:
        n = self.nodes[i]
        return (self.nodes[n.left].dim, self.nodes[n.right].dim, n.dim)

    def num_params(self) -> int:
        total = 0
        for i in self.internal:
            a, b, c = self.block_shape(i)
            total += a * b * c
        return total

    def dim_tangent(self) -> int:
        """Dimension of the tangent space of the orthogonal parameter manifold."""
        return self.num_params() - sum(
            self.dim(t) * (self.dim(t) + 1) // 2 for t in self.internal_nonroot
        )

    def dim_vertical(self) -> int:
        return sum(self.dim(t) * (self.dim(t) - 1) // 2 for t in self.internal_nonroot)

    def to_text(self, i: int | None = None) -> str:
        """Nested label lists annotated with node dimensions (1-based modes)."""
        i = self.root if i is None else i
        n = self.nodes[i]
        lab = "{" + ",".join(str(m + 1) for m in n.label) + "}"
        if n.is_leaf:
            return f"{lab}:{n.dim}"
        return f"({self.to_text(n.left)} {self.to_text(n.right)})->{lab}:{n.dim}"

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"label": list(n.label), "parent": n.parent, "left": n.left,
                 "right": n.right, "dim": n.dim}
                for n in self.nodes
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DimensionTree":
        return cls([
            Node(tuple(n["label"]), n["parent"], n["left"], n["right"], int(n["dim"]))
            for n in data["nodes"]
        ])

    def __eq__(self, other: object) -> bool:
        return isinstance(other, DimensionTree) and self.nodes == other.nodes

    def __hash__(self) -> int:
        return hash(self.nodes)

    def __repr__(self) -> str:
        return f"DimensionTree({self.to_text()})"


def build_balanced(
    d: int, external_dims: Sequence[int], label_dim: int, k_max: int
) -> DimensionTree:
    """Balanced tree with contiguous splits, left child taking ``ceil(|t|/2)`` modes.

    Bond dimensions are ``min(n_t, k_max)`` with ``n_t`` the product of the
    external dimensions below ``t``.
    """
    if d < 2:
        raise ValueError("d must be at least 2")
    external_dims = [int(n) for n in external_dims]
    if len(external_dims) != d:
        raise ValueError(f"expected {d} external dims, got {len(external_dims)}")
    if min(external_dims) < 1 or label_dim < 1 or k_max < 1:
        raise ValueError("dimensions must be positive")

    nodes: list[dict] = []

    def make(label: tuple[int, ...], parent: int | None) -> int:
        idx = len(nodes)
        nodes.append({"label": label, "parent": parent, "left": None, "right": None})
        if len(label) == 1:
            nodes[idx]["dim"] = external_dims[label[0]]
            return idx
        if parent is None:
            nodes[idx]["dim"] = int(label_dim)
        else:
            n_t = _saturating_prod([external_dims[m] for m in label], k_max)
            nodes[idx]["dim"] = min(n_t, k_max)
        half = (len(label) + 1) // 2
        nodes[idx]["left"] = make(label[:half], idx)
        nodes[idx]["right"] = make(label[half:], idx)
        return idx

    make(tuple(range(d)), None)
    return DimensionTree([Node(**n) for n in nodes])
