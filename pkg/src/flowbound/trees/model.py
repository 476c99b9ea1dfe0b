"""Weighted trees as laminar families of external-label bipartitions.

A tree with ``n_ext`` external lines labelled ``0..n_ext-1`` is stored as its
set of internal lines. Each line is the bipartition of the labels obtained by
cutting it, recorded by the side that does not contain label 0, together with
its weight ``rho`` in {1, 2}.
"""
from __future__ import annotations

import dataclasses
import json
from typing import Iterable, Mapping

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from ..kinematics import MomentumConfig

__all__ = [
    "MalformedTreeError",
    "Rejected",
    "TreeClassParams",
    "Validation",
    "WeightedTree",
    "junction",
    "line_momentum",
    "reduce_weights",
    "validate",
]

CONDITION_A = "a"  # coordination numbers in {3, 4}
CONDITION_B = "b"  # at most R coordination-3 vertices
CONDITION_C = "c"  # weights sum to N - 4
CONDITION_D = "d"  # coordination-3 vertices <-> rho=1 lines


class MalformedTreeError(ValueError):
    """The split family does not describe a tree at all."""


class Rejected(ValueError):
    """A tree operation produced a tree outside every admissible class."""

    def __init__(self, condition: str, message: str, tree: "WeightedTree | None" = None,
                 conditions: tuple[str, ...] = ()):
        super().__init__(f"condition {condition}): {message}")
        self.condition = condition
        self.conditions = conditions or (condition,)
        self.tree = tree


@dataclasses.dataclass(frozen=True)
class TreeClassParams:
    n_ext: int
    r: int

    def __post_init__(self):
        if self.n_ext < 4:
            raise ValueError(f"tree classes need n_ext >= 4, got {self.n_ext}")
        if self.r < 0:
            raise ValueError(f"r must be non-negative, got {self.r}")

    @property
    def saturation(self) -> int:
        return 3 * self.n_ext - 2


@dataclasses.dataclass(frozen=True)
class Validation:
    ok: bool
    violations: tuple[str, ...] = ()
    n_coord3: int = 0

    def __bool__(self):
        return self.ok

    @property
    def conditions(self) -> tuple[str, ...]:
        return tuple(v.split(")")[0] for v in self.violations)


def _canonical_side(side: Iterable[int], n_ext: int) -> frozenset[int]:
    s = frozenset(int(x) for x in side)
    if not s or any(x < 0 or x >= n_ext for x in s):
        raise MalformedTreeError(f"split side {sorted(s)} has labels outside 0..{n_ext - 1}")
    if 0 in s:
        s = frozenset(range(n_ext)) - s
    return s


@dataclasses.dataclass(frozen=True)
class WeightedTree:
    """Immutable weighted tree; ``splits`` is sorted so equality is set equality."""

    n_ext: int
    splits: tuple[tuple[frozenset, int], ...]

    def __init__(self, n_ext: int, splits: Mapping[Iterable[int], int] | Iterable[tuple[Iterable[int], int]] = ()):
        if isinstance(splits, Mapping):
            splits = splits.items()
        table: dict[frozenset, int] = {}
        for side, rho in splits:
            s = _canonical_side(side, n_ext)
            if s in table:
                raise MalformedTreeError(f"line {sorted(s)} listed twice")
            table[s] = int(rho)
        ordered = tuple(sorted(table.items(), key=lambda kv: (sorted(kv[0]), kv[1])))
        object.__setattr__(self, "n_ext", int(n_ext))
        object.__setattr__(self, "splits", ordered)
        self._check_structure()

    def _check_structure(self):
        n = self.n_ext
        for side, rho in self.splits:
            if rho not in (1, 2):
                raise MalformedTreeError(f"line {sorted(side)} has weight {rho} outside {{1, 2}}")
            if not 2 <= len(side) <= n - 2:
                raise MalformedTreeError(
                    f"line {sorted(side)} cuts off {len(side)} labels; sides need 2..{n - 2}"
                )
        sides = self.sides
        for i, s in enumerate(sides):
            for t in sides[i + 1:]:
                if not (s <= t or t <= s or not (s & t)):
                    raise MalformedTreeError(
                        f"lines {sorted(s)} and {sorted(t)} are neither nested nor disjoint"
                    )

    @property
    def sides(self) -> list[frozenset]:
        return [s for s, _ in self.splits]

    @property
    def weights(self) -> list[int]:
        return [r for _, r in self.splits]

    @property
    def n_lines(self) -> int:
        return len(self.splits)

    def rho(self, side: Iterable[int]) -> int:
        s = _canonical_side(side, self.n_ext)
        return dict(self.splits)[s]

    def structure(self) -> tuple[list[int], list[int]]:
        """Return ``(parent, coordination)``.

        ``parent[k]`` is the upper end of line ``k`` (index into vertices);
        vertex ``k < n_lines`` is the lower end of line ``k`` and vertex
        ``n_lines`` carries label 0.
        """
        sides = self.sides
        nl = len(sides)
        parent = []
        for k, s in enumerate(sides):
            sup = [(len(t), j) for j, t in enumerate(sides) if j != k and s < t]
            parent.append(min(sup)[1] if sup else nl)
        covered = [0] * (nl + 1)
        nchild = [0] * (nl + 1)
        for k, s in enumerate(sides):
            covered[parent[k]] += len(s)
            nchild[parent[k]] += 1
        coord = [1 + len(s) - covered[v] + nchild[v] for v, s in enumerate(sides)]
        coord.append(self.n_ext - covered[nl] + nchild[nl])
        return parent, coord

    def vertex_labels(self) -> list[list[int]]:
        """External labels attached directly to each vertex."""
        sides = self.sides
        parent, _ = self.structure()
        direct = [set(s) for s in sides] + [set(range(self.n_ext))]
        for k, s in enumerate(sides):
            direct[parent[k]] -= s
        return [sorted(d) for d in direct]

    def to_dict(self) -> dict:
        return {
            "n_ext": self.n_ext,
            "splits": [{"side": sorted(s), "rho": r} for s, r in self.splits],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "WeightedTree":
        return cls(data["n_ext"], [(d["side"], d["rho"]) for d in data["splits"]])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def code(self) -> int:
        """Packed integer key (same packing as the enumeration kernels)."""
        bits = self.n_ext
        if bits * self.n_lines > 63:
            raise ValueError("packed codes are limited to 63 bits")
        entries = sorted(
            (sum(1 << (j - 1) for j in s) << 1) | (r - 1) for s, r in self.splits
        )
        return sum(e << (bits * k) for k, e in enumerate(entries))

    @classmethod
    def from_code(cls, n_ext: int, code: int) -> "WeightedTree":
        bits = n_ext
        mask = (1 << bits) - 1
        splits = []
        code = int(code)
        while code:
            e = code & mask
            code >>= bits
            side = [j + 1 for j in range(n_ext - 1) if (e >> 1) >> j & 1]
            splits.append((side, (e & 1) + 1))
        return cls(n_ext, splits)

    def relabel(self, perm: Mapping[int, int] | np.ndarray) -> "WeightedTree":
        """Image under the label permutation ``old -> perm[old]``."""
        return WeightedTree(
            self.n_ext, [([perm[x] for x in s], r) for s, r in self.splits]
        )


def _matching_size(coord3: list[int], rho1_lines: list[int], parent: list[int]) -> int:
    if not coord3 or not rho1_lines:
        return 0
    vindex = {v: i for i, v in enumerate(coord3)}
    rows, cols = [], []
    for j, k in enumerate(rho1_lines):
        for v in (k, parent[k]):
            if v in vindex:
                rows.append(vindex[v])
                cols.append(j)
    if not rows:
        return 0
    graph = csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(len(coord3), len(rho1_lines))
    )
    match = maximum_bipartite_matching(graph, perm_type="column")
    return int(np.count_nonzero(match >= 0))


def validate(tree: WeightedTree, params: TreeClassParams, strict_d: bool = True) -> Validation:
    """Check conditions a)-d) for membership in the class ``params``.

    ``strict_d`` demands an incidence-respecting bijection between
    coordination-3 vertices and rho=1 lines (decided by bipartite matching);
    with ``strict_d=False`` equal counts suffice.
    """
    if tree.n_ext != params.n_ext:
        raise ValueError(f"tree has {tree.n_ext} external lines, class expects {params.n_ext}")
    parent, coord = tree.structure()
    violations = []
    bad = [c for c in coord if c not in (3, 4)]
    if bad:
        violations.append(f"{CONDITION_A}) coordination numbers {sorted(set(bad))} outside {{3, 4}}")
    coord3 = [v for v, c in enumerate(coord) if c == 3]
    if len(coord3) > params.r:
        violations.append(f"{CONDITION_B}) {len(coord3)} coordination-3 vertices exceed R={params.r}")
    total = sum(tree.weights)
    if total != params.n_ext - 4:
        violations.append(f"{CONDITION_C}) weight sum {total} != N-4 = {params.n_ext - 4}")
    rho1 = [k for k, r in enumerate(tree.weights) if r == 1]
    if len(rho1) != len(coord3):
        violations.append(
            f"{CONDITION_D}) {len(coord3)} coordination-3 vertices vs {len(rho1)} rho=1 lines"
        )
    elif strict_d and _matching_size(coord3, rho1, parent) != len(coord3):
        violations.append(f"{CONDITION_D}) no incidence-respecting bijection")
    return Validation(not violations, tuple(violations), len(coord3))


def line_momentum(tree: WeightedTree, side: Iterable[int], cfg: MomentumConfig) -> np.ndarray:
    """Momentum flowing through the line with the given side."""
    if cfg.n_ext != tree.n_ext:
        raise ValueError("configuration and tree disagree on n_ext")
    s = _canonical_side(side, tree.n_ext)
    full = cfg.full()
    return full[sorted(s)].sum(axis=0)


def junction(t1: WeightedTree, e1: int, t2: WeightedTree, e2: int) -> WeightedTree:
    """Join external line ``e1`` of ``t1`` to ``e2`` of ``t2`` through a rho=2 line.

    Surviving labels of ``t1`` come first (in increasing order), then those
    of ``t2``.
    """
    n1, n2 = t1.n_ext, t2.n_ext
    if not (0 <= e1 < n1 and 0 <= e2 < n2):
        raise ValueError(f"labels out of range: e1={e1} of {n1}, e2={e2} of {n2}")
    n = n1 + n2 - 2
    map1 = {x: i for i, x in enumerate(x for x in range(n1) if x != e1)}
    map2 = {x: i + n1 - 1 for i, x in enumerate(x for x in range(n2) if x != e2)}
    part2 = frozenset(map2.values())
    part1 = frozenset(map1.values())

    def lift(side, own_map, own_e, other_part):
        new = {own_map[x] for x in side if x != own_e}
        if own_e in side:
            new |= other_part
        return new

    splits = [(lift(s, map1, e1, part2), r) for s, r in t1.splits]
    splits += [(lift(s, map2, e2, part1), r) for s, r in t2.splits]
    splits.append((part2, 2))
    return WeightedTree(n, splits)


def reduce_weights(
    tree: WeightedTree,
    decrements: Mapping[Iterable[int], int],
    r: int | None = None,
    drop_legs: tuple[int, int] | None = None,
    strict_d: bool = True,
) -> tuple[WeightedTree, int]:
    """Subtract two units of weight from one or two lines.

    Lines left with weight 0 are contracted. With ``drop_legs`` the two
    external lines are removed first (the loop lines of the linear flow
    term): a vertex left with coordination 2 is suppressed and its two lines
    merge with summed weight, and a line that ends up cutting off a single
    label becomes part of that external line, its weight counting towards
    the two units.

    Returns ``(tree, r_out)`` where ``r_out <= r + 2`` is the number of
    coordination-3 vertices of the result. Raises :class:`Rejected` naming
    the first violated condition otherwise.
    """
    r = count_coord3(tree) if r is None else r
    n = tree.n_ext
    weights = dict(tree.splits)
    dec: dict[frozenset, int] = {}
    for side, d in decrements.items():
        s = _canonical_side(side, n)
        if s not in weights:
            raise ValueError(f"{sorted(s)} is not a line of the tree")
        if d < 1:
            raise ValueError("decrements must be positive")
        dec[s] = dec.get(s, 0) + int(d)
    if len(dec) > 2:
        raise ValueError("at most two lines may be reduced")
    for s, d in dec.items():
        if d > weights[s]:
            raise ValueError(f"decrement {d} exceeds weight {weights[s]} of line {sorted(s)}")

    absorbed = 0
    if drop_legs is not None:
        n, weights, absorbed, side_map = _drop_legs(tree, drop_legs)
        moved: dict[frozenset, int] = {}
        for s, d in dec.items():
            if s not in side_map:
                raise ValueError(f"line {sorted(s)} does not survive the leg removal")
            moved[side_map[s]] = moved.get(side_map[s], 0) + d
        dec = moved
    if sum(dec.values()) + absorbed != 2:
        raise ValueError(
            f"decrements ({sum(dec.values())}) and absorbed weight ({absorbed}) must total 2"
        )
    if n < 4:
        raise Rejected(CONDITION_A, f"only {n} external lines left")

    reduced = {s: w - dec.get(s, 0) for s, w in weights.items()}
    heavy = [s for s, w in reduced.items() if w > 2]
    if heavy:
        raise Rejected("rho", f"line {sorted(heavy[0])} keeps weight {reduced[heavy[0]]} > 2")
    out = WeightedTree(n, [(s, w) for s, w in reduced.items() if w > 0])
    check = validate(out, TreeClassParams(n, r + 2), strict_d=strict_d)
    if not check.ok:
        # With every line contracted the weight budget is the primary failure;
        # otherwise report in the order a, b, c, d.
        conds = check.conditions
        first = CONDITION_C if out.n_lines == 0 and CONDITION_C in conds else conds[0]
        msg = check.violations[conds.index(first)]
        raise Rejected(first, msg, out, conds)
    return out, check.n_coord3


def count_coord3(tree: WeightedTree) -> int:
    _, coord = tree.structure()
    return sum(1 for c in coord if c == 3)


def _drop_legs(tree: WeightedTree, legs: tuple[int, int]):
    """Remove two external lines; returns ``(n_ext, weights, absorbed, side_map)``.

    ``weights`` maps new canonical sides to (possibly merged, possibly > 2)
    weights and ``side_map`` sends each surviving old side to its new side.
    """
    n = tree.n_ext
    a, b = (int(x) for x in legs)
    if a == b or not (0 <= a < n and 0 <= b < n):
        raise ValueError(f"need two distinct legs in 0..{n - 1}")
    relabel = {x: i for i, x in enumerate(x for x in range(n) if x not in (a, b))}
    m = n - 2
    everything = frozenset(range(m))
    weights: dict[frozenset, int] = {}
    side_map = {}
    absorbed = 0
    for s, w in tree.splits:
        side = frozenset(relabel[x] for x in s if x in relabel)
        if 0 in side:
            side = everything - side
        if len(side) <= 1 or len(side) >= m - 1:
            absorbed += w
            continue
        weights[side] = weights.get(side, 0) + w
        side_map[s] = side
    return m, weights, absorbed, side_map
