"""Tree-level (zero-loop) functions as sums over quartic trees.

With the flow equation as the definition and vanishing irrelevant boundary
data, ``L_{N,0}`` is the sum over trees whose internal vertices all have
four legs, each tree carrying ``g0 * (-g0)^lines * prod C(k_line)``.
"""
from __future__ import annotations

import functools
import itertools
from typing import Iterator

import numpy as np

from ..covariance import c_hat_sq
from ..kinematics import MomentumConfig, Scales

__all__ = ["quartic_trees", "schwinger_tree_direct", "tree_terms"]


def _odd_partitions3(items: tuple[int, ...]) -> Iterator[tuple[tuple[int, ...], ...]]:
    """Unordered partitions of ``items`` into three blocks of odd size."""
    first, rest = items[0], items[1:]
    n = len(rest)
    for k1 in range(0, n + 1, 2):  # block with ``first`` has odd size 1 + k1
        for c1 in itertools.combinations(rest, k1):
            b1 = (first,) + c1
            rem = tuple(x for x in rest if x not in c1)
            if not rem:
                continue
            second, rest2 = rem[0], rem[1:]
            for k2 in range(0, len(rest2), 2):
                for c2 in itertools.combinations(rest2, k2):
                    b2 = (second,) + c2
                    b3 = tuple(x for x in rest2 if x not in c2)
                    if len(b3) % 2 == 1:
                        yield b1, b2, b3


@functools.lru_cache(maxsize=None)
def _trees_on(labels: tuple[int, ...]) -> tuple[tuple[frozenset, ...], ...]:
    """Quartic trees on ``labels`` plus one root leg, as tuples of line sides."""
    if len(labels) == 1:
        return ((),)
    out = []
    for blocks in _odd_partitions3(labels):
        subs = [_trees_on(b) for b in blocks]
        own = [frozenset(b) for b in blocks if len(b) > 1]
        for combo in itertools.product(*subs):
            out.append(tuple(own) + tuple(itertools.chain.from_iterable(combo)))
    return tuple(out)


def quartic_trees(n_ext: int) -> list[tuple[frozenset, ...]]:
    """All trees with ``n_ext`` labelled legs and only four-leg vertices.

    Each tree is returned as the sides (not containing label 0) of its lines.
    """
    if n_ext < 4 or n_ext % 2:
        return []
    return list(_trees_on(tuple(range(1, n_ext))))


def tree_terms(n_ext: int) -> list[tuple[int, tuple[int, ...]]]:
    """``(lines, side masks)`` per quartic tree; label ``j`` maps to bit ``j``."""
    return [(len(t), tuple(sum(1 << j for j in side) for side in t)) for t in quartic_trees(n_ext)]


def tree_value(full: np.ndarray, lam: float, lam0: float, g0: float) -> float:
    """``L_{N,0}`` at the full momentum list ``(p_0, ..., p_{N-1})``."""
    n = full.shape[0]
    if n % 2 or n < 4:
        return 0.0
    total = 0.0
    for lines, masks in tree_terms(n):
        prod = g0 * (-g0) ** lines
        for m in masks:
            k = full[[j for j in range(n) if m >> j & 1]].sum(axis=0)
            prod *= float(c_hat_sq(k @ k, lam, lam0))
        total += prod
    return total


def schwinger_tree_direct(n_ext: int, scales: Scales, cfg: MomentumConfig, g0: float = 1.0) -> float:
    """Tree-level connected amputated function from the Feynman tree sum.

    ``L_4 = g0``; ``L_6 = -g0^2 sum_channels C(P)``; ``L_8`` has 280 two-line trees
    with ``+g0^3``. Odd ``n_ext`` and ``n_ext = 2`` give 0.
    """
    if cfg.n_ext != n_ext:
        raise ValueError(f"configuration has n_ext={cfg.n_ext}, expected {n_ext}")
    if n_ext not in (2, 4, 6, 8) and n_ext % 2 == 0:
        raise ValueError("direct tree sums are provided for N in {4, 6, 8}")
    return tree_value(cfg.full(), scales.lam, scales.lam0, g0)
