"""Euclidean four-momenta and the scale functions entering the momentum bounds."""
from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

__all__ = [
    "MAX_SUBSET_MOMENTA",
    "MomentumConfig",
    "Scales",
    "config_norm",
    "eta",
    "is_exceptional",
    "kappa",
    "log_plus",
    "regulated_norm",
    "random_rotation",
    "subset_sums",
]

MAX_SUBSET_MOMENTA = 24
DEFAULT_EXCEPTIONAL_RTOL = 1e-9


def _as_momentum(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (4,):
        raise ValueError(f"a momentum has four components, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"non-finite momentum {p}")
    return p


@dataclasses.dataclass(frozen=True)
class Scales:
    """IR flow scale ``lam``, UV cutoff ``lam0`` and renormalization scale ``mu``."""

    lam: float
    lam0: float
    mu: float = 1.0

    def __post_init__(self):
        if not (self.lam > 0 and self.lam <= self.lam0):
            raise ValueError(f"need 0 < lambda <= lambda0, got {self.lam}, {self.lam0}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")


class MomentumConfig:
    """External momenta ``p_1 .. p_{N-1}``; ``p_0`` is always derived.

    >>> cfg = MomentumConfig([[1, 0, 0, 0], [0, 1, 0, 0]])
    >>> cfg.n_ext, cfg.p0.tolist()
    (3, [-1.0, -1.0, 0.0, 0.0])
    """

    __slots__ = ("_p",)

    def __init__(self, external, n_ext: int | None = None):
        p = np.array(external, dtype=float).reshape(-1, 4)
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite momentum component")
        if n_ext is not None and p.shape[0] != n_ext - 1:
            raise ValueError(f"n_ext={n_ext} needs {n_ext - 1} momenta, got {p.shape[0]}")
        if p.shape[0] < 1:
            raise ValueError("need at least one external momentum (n_ext >= 2)")
        p.setflags(write=False)
        self._p = p

    @property
    def n_ext(self) -> int:
        return self._p.shape[0] + 1

    @property
    def external(self) -> np.ndarray:
        return self._p

    @property
    def p0(self) -> np.ndarray:
        return -self._p.sum(axis=0)

    def full(self) -> np.ndarray:
        """All ``N`` momenta ``(p_0, p_1, ..., p_{N-1})``."""
        return np.vstack([self.p0, self._p])

    def scaled(self, s: float) -> "MomentumConfig":
        return MomentumConfig(self._p * s)

    def rotated(self, rot: np.ndarray) -> "MomentumConfig":
        return MomentumConfig(self._p @ np.asarray(rot).T)

    @classmethod
    def from_full(cls, full, drop: int = 0) -> "MomentumConfig":
        """Build from a complete conserving list, treating entry ``drop`` as dependent."""
        full = np.asarray(full, dtype=float)
        return cls(np.delete(full, drop, axis=0))

    def to_dict(self) -> dict:
        return {"n_ext": self.n_ext, "p": self._p.tolist(), "p0": self.p0.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "MomentumConfig":
        return cls(data["p"], n_ext=data.get("n_ext"))

    @classmethod
    def load(cls, path) -> "MomentumConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def __repr__(self):
        return f"MomentumConfig(n_ext={self.n_ext}, p={self._p.tolist()})"


def regulated_norm(p, lam: float) -> float:
    """``|p|_lam = max(lam, |p|)``."""
    p = _as_momentum(p)
    if not (lam > 0 and math.isfinite(lam)):
        raise ValueError(f"lambda must be positive and finite, got {lam}")
    return max(lam, float(np.linalg.norm(p)))


def log_plus(x: float) -> float:
    return math.log(x) if x > 1.0 else 0.0


def subset_sums(momenta: np.ndarray) -> np.ndarray:
    """Sums over all nonempty subsets; row ``mask - 1`` holds subset ``mask``."""
    momenta = np.asarray(momenta, dtype=float)
    n = momenta.shape[0]
    if n > MAX_SUBSET_MOMENTA:
        raise ValueError(
            f"{n} momenta give 2^{n}-1 subsets; refusing above {MAX_SUBSET_MOMENTA}"
        )
    sums = np.zeros((1 << n, momenta.shape[1]))
    for j in range(n):
        lo = 1 << j
        sums[lo:2 * lo] = sums[:lo] + momenta[j]
    return sums[1:]


def eta(cfg: MomentumConfig) -> float:
    """Dynamical IR cutoff: smallest norm of a nonempty subset sum of ``p_1..p_{N-1}``."""
    return float(np.sqrt((subset_sums(cfg.external) ** 2).sum(axis=1).min()))


def config_norm(cfg: MomentumConfig, floor: float, include_p0: bool = False) -> float:
    """``max(floor, max_e |p_e|)`` over ``e = 1..N-1`` (or ``0..N-1``)."""
    if not floor > 0:
        raise ValueError("floor must be positive")
    moms = cfg.full() if include_p0 else cfg.external
    return max(floor, float(np.linalg.norm(moms, axis=1).max()))


def is_exceptional(cfg: MomentumConfig, tol: float | None = None) -> bool:
    """Whether some nonempty subset of ``p_1..p_{N-1}`` sums to (nearly) zero.

    The default tolerance is ``1e-9 * max_e |p_e|``; pass ``tol=0`` for the
    exact test.
    """
    if tol is None:
        scale = float(np.linalg.norm(cfg.external, axis=1).max())
        tol = DEFAULT_EXCEPTIONAL_RTOL * scale
    if tol < 0:
        raise ValueError("tol must be non-negative")
    return eta(cfg) <= tol


def kappa(cfg: MomentumConfig, scales: Scales, eta_value: float | None = None) -> float:
    e = eta(cfg) if eta_value is None else eta_value
    return max(scales.lam, min(e, scales.mu))


def random_rotation(rng: np.random.Generator, dim: int = 4) -> np.ndarray:
    """Haar-random element of SO(dim)."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q

