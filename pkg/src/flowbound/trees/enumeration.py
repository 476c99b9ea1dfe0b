"""Enumeration of the weighted tree classes and grouping into shapes."""
from __future__ import annotations

import functools
import math
import threading
import warnings
from collections import Counter
from typing import Iterable, Iterator

import numpy as np

from . import _kernels
from .model import TreeClassParams, WeightedTree

__all__ = ["MAX_ENUM_N", "TreeClass", "enumerate_trees", "shapes", "canonical_shape"]

# Packed codes use n_ext bits per line and at most n_ext - 4 lines.
MAX_ENUM_N = 10


class TreeClass:
    """Sorted set of weighted trees sharing ``n_ext``, stored as packed codes.

    Supports ``len``, iteration (decoding lazily), membership and the
    subset/equality comparisons used by the nestedness checks.
    """

    def __init__(self, n_ext: int, codes: np.ndarray, n_coord3: np.ndarray | None = None):
        self.n_ext = n_ext
        self.codes = np.asarray(codes, dtype=np.int64)
        self.n_coord3 = n_coord3

    def __len__(self):
        return int(self.codes.size)

    def __iter__(self) -> Iterator[WeightedTree]:
        for c in self.codes:
            yield WeightedTree.from_code(self.n_ext, int(c))

    def __getitem__(self, i) -> WeightedTree:
        return WeightedTree.from_code(self.n_ext, int(self.codes[i]))

    def __contains__(self, tree: WeightedTree):
        if tree.n_ext != self.n_ext:
            return False
        c = tree.code()
        i = np.searchsorted(self.codes, c)
        return bool(i < self.codes.size and self.codes[i] == c)

    def issubset(self, other: "TreeClass") -> bool:
        if self.n_ext != other.n_ext:
            return False
        if self.codes.size == 0:
            return True
        idx = np.searchsorted(other.codes, self.codes)
        idx[idx >= other.codes.size] = 0
        return bool(np.all(other.codes[idx] == self.codes))

    def __le__(self, other):
        return self.issubset(other)

    def __eq__(self, other):
        if not isinstance(other, TreeClass):
            return NotImplemented
        return self.n_ext == other.n_ext and np.array_equal(self.codes, other.codes)

    def __repr__(self):
        return f"TreeClass(n_ext={self.n_ext}, size={len(self)})"

    def entries(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-tree line masks and weights, shape ``(size, n_ext - 4)``; mask 0 pads."""
        width = max(self.n_ext - 4, 0)
        bits = self.n_ext
        shifts = np.arange(width, dtype=np.int64) * bits
        raw = (self.codes[:, None] >> shifts[None, :]) & ((1 << bits) - 1)
        return raw >> 1, np.where(raw > 0, (raw & 1) + 1, 0)


_lock = threading.Lock()
_saturated: dict[tuple[int, bool], tuple[np.ndarray, np.ndarray]] = {}


def _generate(n_ext: int, r: int, strict: bool) -> tuple[np.ndarray, np.ndarray]:
    # A valid tree has 2*lines - N + 4 coordination-3 vertices, so both
    # condition b) and the weight budget cap the number of lines.
    max_lines = min(n_ext - 4, (r + n_ext - 4) // 2)
    masks = np.zeros((1, max_lines + 1), dtype=np.int64)
    nls = np.zeros(1, dtype=np.int64)
    for n in range(3, n_ext):
        masks, nls = _kernels.grow(masks, nls, n, max_lines)
    codes, n3 = _kernels.weight_assignments(masks, nls, n_ext, r, strict)
    order = np.argsort(codes, kind="stable")
    codes, n3 = codes[order], n3[order]
    if codes.size and np.any(codes[1:] == codes[:-1]):
        raise RuntimeError("enumeration produced a duplicate tree")
    return codes, n3


def enumerate_trees(params: TreeClassParams, strict_d: bool = True) -> TreeClass:
    """All weighted trees of the class ``params`` in canonical (code) order.

    Classes are materialised, so ``n_ext`` is limited to ``MAX_ENUM_N``;
    N = 10 already holds about 1.2e7 trees and N = 11 about 1e8.
    """
    n = params.n_ext
    if n > MAX_ENUM_N:
        raise ValueError(
            f"refusing to enumerate N={n}: classes are materialised and N > {MAX_ENUM_N} "
            "exceeds 1e8 trees"
        )
    if n % 2:
        warnings.warn(f"odd N={n}: the class is well defined but odd-N functions vanish")
    key = (n, strict_d)
    full_r = n - 2  # coordination-3 count never exceeds N - 2
    with _lock:
        cached = _saturated.get(key)
    if cached is None and params.r < full_r:
        codes, n3 = _generate(n, params.r, strict_d)
        return TreeClass(n, codes, n3)
    if cached is None:
        cached = _generate(n, full_r, strict_d)
        with _lock:
            _saturated.setdefault(key, cached)
    codes, n3 = cached
    keep = n3 <= params.r
    return TreeClass(n, codes[keep], n3[keep])


def clear_cache():
    with _lock:
        _saturated.clear()


def _vertex_graph(tree: WeightedTree):
    """Adjacency over internal vertices plus one node per external label."""
    parent, _ = tree.structure()
    nl = tree.n_lines
    adj: dict[int, list[tuple[int, int]]] = {v: [] for v in range(nl + 1)}
    for k, (_, rho) in enumerate(tree.splits):
        adj[k].append((parent[k], rho))
        adj[parent[k]].append((k, rho))
    for v, labels in enumerate(tree.vertex_labels()):
        for lab in labels:
            leaf = nl + 1 + lab
            adj[v].append((leaf, 0))
            adj[leaf] = [(v, 0)]
    return adj, nl + 1


def _centers(adj, n_internal: int) -> list[int]:
    nodes = set(range(n_internal))
    if len(nodes) <= 2:
        return sorted(nodes)
    deg = {v: sum(1 for u, _ in adj[v] if u < n_internal) for v in nodes}
    layer = [v for v in nodes if deg[v] <= 1]
    remaining = len(nodes)
    while remaining > 2:
        remaining -= len(layer)
        nxt = []
        for v in layer:
            for u, _ in adj[v]:
                if u < n_internal and u in nodes and u not in layer:
                    deg[u] -= 1
                    if deg[u] == 1:
                        nxt.append(u)
            nodes.discard(v)
        layer = nxt
    return sorted(nodes)


def canonical_shape(tree: WeightedTree) -> str:
    """Label-free canonical string of a weighted tree (AHU encoding from the centre)."""
    adj, n_internal = _vertex_graph(tree)

    def encode(v, came_from):
        if v >= n_internal:
            return "L"
        parts = sorted(
            f"{w}{encode(u, v)}" for u, w in adj[v] if u != came_from
        )
        return "(" + "".join(parts) + ")"

    centers = _centers(adj, n_internal)
    if len(centers) == 1:
        return encode(centers[0], -1)
    a, b = centers
    w = next(wt for u, wt in adj[a] if u == b)
    ea, eb = encode(a, b), encode(b, a)
    return f"{w}[{min(ea, eb)}{max(ea, eb)}]"


def shapes(trees: Iterable[WeightedTree]) -> list[tuple[WeightedTree, int]]:
    """Group trees into classes under external-label permutations.

    Returns ``(representative, orbit size)`` pairs, largest orbit first. The
    representative is the first tree met in iteration order.
    """
    counts: Counter = Counter()
    reps: dict[str, WeightedTree] = {}
    n_ext = None
    for t in trees:
        if n_ext is None:
            n_ext = t.n_ext
        elif t.n_ext != n_ext:
            raise ValueError("all trees must share n_ext")
        key = canonical_shape(t)
        counts[key] += 1
        reps.setdefault(key, t)
    out = [(reps[k], c) for k, c in counts.items()]
    out.sort(key=lambda rc: (-rc[1], canonical_shape(rc[0])))
    return out


@functools.lru_cache(maxsize=None)
def automorphism_count(n_ext: int, orbit: int) -> int:
    return math.factorial(n_ext) // orbit
