"""Exponential cutoff covariance and the loop integrals built from it.

The flowing covariance is

    C(p) = (exp(-p^2/lam0^2) - exp(-p^2/lam^2)) / p^2,

continued to ``1/lam^2 - 1/lam0^2`` at ``p = 0``; its scale derivative is
``-(2/lam^3) exp(-p^2/lam^2)``. Because ``|dC/dlam|`` is a Gaussian in the
loop momentum, every loop integral here is ``2 pi^2 lam`` times an average
over ``l ~ N(0, lam^2/2)`` in four dimensions.
"""
from __future__ import annotations

import csv
import dataclasses
import functools
import math
from typing import Sequence

import numpy as np
from scipy import integrate, special
from scipy.stats import qmc

from .kinematics import Scales

__all__ = [
    "FAMILIES",
    "GAUSS_VOLUME",
    "LoopLemmaReport",
    "QuadratureError",
    "QuadratureSpec",
    "c_hat",
    "c_hat_sq",
    "d_c_hat_d_lambda",
    "d_c_hat_sq",
    "loop_integral",
    "loop_lemma_lhs",
    "verify_loop_lemma",
]

FAMILIES = ("exponential",)
TWO_PI2 = 2.0 * math.pi**2
# int d^4l (2/lam^3) exp(-l^2/lam^2) = GAUSS_VOLUME * lam
GAUSS_VOLUME = TWO_PI2
_SERIES_SWITCH = 1e-8


class QuadratureError(RuntimeError):
    """Requested tolerance not reached; carries the achieved estimate."""

    def __init__(self, message: str, estimate: float, error: float):
        super().__init__(f"{message} (estimate {estimate:.6g} +- {error:.2g})")
        self.estimate = estimate
        self.error = error


@dataclasses.dataclass(frozen=True)
class QuadratureSpec:
    rel_tol: float = 1e-9
    abs_tol: float = 0.0
    angular_nodes: int = 96
    radial_nodes: int = 20
    qmc_log2: int = 12
    qmc_log2_max: int = 18
    qmc_replicates: int = 8
    seed: int = 20240611


# --- covariance -----------------------------------------------------------

def c_hat_sq(p2, lam: float, lam0: float = math.inf):
    """Covariance as a function of ``p^2``; broadcasts over ``p2``, ``lam`` and ``lam0``."""
    p2 = np.asarray(p2, dtype=float)
    lam, lam0 = np.asarray(lam, dtype=float), np.asarray(lam0, dtype=float)
    inv0 = 1.0 / lam0**2  # 0 for lam0 = inf
    d = 1.0 / lam**2 - inv0
    uv = np.exp(-p2 * inv0)
    x = p2 * d
    small = x < _SERIES_SWITCH
    safe = np.where(small, 1.0, p2)
    body = -np.expm1(-np.where(small, 1.0, x)) / safe
    series = d * (1.0 - 0.5 * x)
    return uv * np.where(small, series, body)


def c_hat(p, scales: Scales | None = None, *, lam: float | None = None, lam0: float | None = None) -> float:
    """Covariance at a single momentum; depends on ``p`` only through ``p^2``."""
    lam, lam0 = _scales(scales, lam, lam0)
    p = np.asarray(p, dtype=float)
    return float(c_hat_sq(p @ p, lam, lam0))


def d_c_hat_sq(p2, lam: float):
    """``dC/dlam`` as a function of ``p^2``; independent of ``lam0``."""
    return -2.0 / lam**3 * np.exp(-np.asarray(p2, dtype=float) / lam**2)


def d_c_hat_d_lambda(p, scales: Scales | None = None, *, lam: float | None = None, lam0: float | None = None) -> float:
    lam, _ = _scales(scales, lam, lam0)
    p = np.asarray(p, dtype=float)
    return float(d_c_hat_sq(p @ p, lam))


def _scales(scales, lam, lam0):
    if scales is not None:
        return scales.lam, scales.lam0
    if lam is None:
        raise TypeError("pass scales or lam")
    lam0 = math.inf if lam0 is None else lam0
    if not (0 < lam <= lam0):
        raise ValueError(f"need 0 < lambda <= lambda0, got {lam}, {lam0}")
    return lam, lam0


# --- quadrature rules -----------------------------------------------------

@functools.lru_cache(maxsize=None)
def _gauss_legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def _composite(breaks: Sequence[float], n: int):
    x, w = _gauss_legendre(n)
    nodes, weights = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b <= a:
            continue
        h = 0.5 * (b - a)
        nodes.append(a + h * (x + 1.0))
        weights.append(h * w)
    return np.concatenate(nodes), np.concatenate(weights)


_RADIAL_BREAKS = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.75, 4.5, 5.5, 7.0, 9.0)


def _radial_rule(extra: Sequence[float], n: int):
    """Nodes/weights for ``int_0^inf 2 x^3 exp(-x^2) f(x) dx``."""
    breaks = sorted(set(_RADIAL_BREAKS) | {e for e in extra if 0 < e < _RADIAL_BREAKS[-1]})
    x, w = _composite(breaks, n)
    return x, w * 2.0 * x**3 * np.exp(-x * x)


@functools.lru_cache(maxsize=None)
def _angular_rule(n: int):
    """Nodes (cos psi) and weights for the S^3 average ``(2/pi) int sin^2``."""
    x, w = _gauss_legendre(n)
    psi = 0.5 * math.pi * (x + 1.0)
    return np.cos(psi), w * 0.5 * math.pi * (2.0 / math.pi) * np.sin(psi) ** 2


def _gauss_average_1(f_of_q2, k: float, lam: float, quad: QuadratureSpec) -> float:
    """``E[f(|l + K|^2)]`` for ``l ~ N(0, lam^2/2)`` in 4D, ``|K| = k``."""
    kx = k / lam
    xr, wr = _radial_rule((kx - 1.0, kx, kx + 1.0), quad.radial_nodes)
    c, wa = _angular_rule(quad.angular_nodes)
    r = lam * xr[:, None]
    q2 = r * r + k * k + 2.0 * r * k * c[None, :]
    q2 = np.maximum(q2, 0.0)
    return float(wr @ f_of_q2(q2) @ wa)


def _gauss_average_qmc(f_of_l, lam: float, quad: QuadratureSpec, rel_tol: float):
    """Randomised-QMC average of ``f(l)`` over ``l ~ N(0, lam^2/2)`` in 4D.

    Doubles the sample size until the replicate standard error drops below
    ``rel_tol`` relative; returns ``(mean, stderr)``.
    """
    log2 = quad.qmc_log2
    while True:
        means = []
        for rep in range(quad.qmc_replicates):
            sob = qmc.Sobol(d=4, scramble=True, seed=quad.seed + rep)
            u = sob.random_base2(log2)
            u = np.clip(u, 1e-16, 1 - 1e-16)
            ell = (lam / math.sqrt(2.0)) * special.ndtri(u)
            means.append(float(np.mean(f_of_l(ell))))
        means = np.asarray(means)
        mean = float(means.mean())
        err = float(means.std(ddof=1) / math.sqrt(len(means)))
        if err <= rel_tol * abs(mean) + quad.abs_tol:
            return mean, err
        if log2 >= quad.qmc_log2_max:
            raise QuadratureError("quasi-Monte Carlo loop average did not converge", mean, err)
        log2 += 1


# --- loop integrals for the flow ------------------------------------------

def loop_integral(shifts: Sequence[np.ndarray], lam: float, lam0: float,
                  quad: QuadratureSpec = QuadratureSpec(), mc_rel_tol: float = 1e-2) -> tuple[float, float]:
    """``int d^4l dC/dlam(l) prod_j C(l + K_j)`` and an error estimate.

    No shifts: closed form ``-2 pi^2 lam``. One shift: the integrand depends
    on ``|l|`` and ``|l + K|`` only, reduced to a radius/angle rule. More
    shifts fall back to randomised QMC at ``mc_rel_tol``.
    """
    n = len(shifts)
    if n == 0:
        return -GAUSS_VOLUME * lam, 0.0
    if n == 1:
        k = float(np.linalg.norm(shifts[0]))
        avg = _gauss_average_1(lambda q2: c_hat_sq(q2, lam, lam0), k, lam, quad)
        return -GAUSS_VOLUME * lam * avg, 0.0
    ks = np.asarray(shifts, dtype=float)

    def f(ell):
        out = np.ones(ell.shape[0])
        for kvec in ks:
            q = ell + kvec
            out *= c_hat_sq(np.einsum("ij,ij->i", q, q), lam, lam0)
        return out

    mean, err = _gauss_average_qmc(f, lam, quad, mc_rel_tol)
    return -GAUSS_VOLUME * lam * mean, GAUSS_VOLUME * lam * err


# --- loop lemma --------------------------------------------------------------

def _regulated_power_average(k: float, theta: float, r: float, lam: float, quad: QuadratureSpec) -> float:
    """S^3 average of ``max(lam, |l + K|)^-theta`` at ``|l| = r``, ``|K| = k``."""
    if r == 0 or k == 0:
        return max(lam, math.hypot(r, k)) ** (-theta)
    c_star = (lam * lam - r * r - k * k) / (2.0 * r * k)
    if c_star >= 1.0:
        return lam ** (-theta)
    psi_star = math.pi if c_star <= -1.0 else math.acos(c_star)
    # |l + K| >= lam for psi <= psi_star
    x, w = _gauss_legendre(quad.angular_nodes)
    psi = 0.5 * psi_star * (x + 1.0)
    q2 = r * r + k * k + 2.0 * r * k * np.cos(psi)
    smooth = 0.5 * psi_star * float(np.sum(w * np.sin(psi) ** 2 * np.maximum(q2, lam * lam) ** (-0.5 * theta)))
    flat = 0.5 * (math.pi - psi_star) + 0.25 * math.sin(2.0 * psi_star)
    return (2.0 / math.pi) * (smooth + flat * lam ** (-theta))


def _lhs_one(k: float, theta: float, lam: float, quad: QuadratureSpec) -> tuple[float, float]:
    points = sorted({p for p in (k - lam, k, k + lam, lam) if 0 < p < 9.0 * lam})

    def radial(r):
        return 2.0 * (r / lam) ** 3 * math.exp(-(r / lam) ** 2) / lam * _regulated_power_average(k, theta, r, lam, quad)

    # the Gaussian mass beyond 9 lam is below 1e-33
    val, err = integrate.quad(radial, 0.0, 9.0 * lam, points=points or None,
                              epsabs=quad.abs_tol, epsrel=quad.rel_tol, limit=200)
    return GAUSS_VOLUME * lam * val, GAUSS_VOLUME * lam * err


def loop_lemma_lhs(k: Sequence[tuple[Sequence[float], float]], scales: Scales | float,
                   quad: QuadratureSpec = QuadratureSpec(), return_error: bool = False):
    """``int d^4l |dC/dlam(l)| prod_j max(lam, |l + k_j|)^-theta_j``.

    ``k`` is a list of ``(momentum, theta)`` pairs. Zero or one factor is
    reduced to a radial integral (with the angular kinks resolved exactly);
    more factors use randomised QMC with replicate error estimates.
    """
    lam = scales.lam if isinstance(scales, Scales) else float(scales)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    pairs = [(np.asarray(v, dtype=float), float(t)) for v, t in k]
    if any(t <= 0 for _, t in pairs):
        raise ValueError("all theta_j must be positive")
    if not pairs:
        val, err = GAUSS_VOLUME * lam, 0.0
    elif len(pairs) == 1:
        kv, th = pairs[0]
        val, err = _lhs_one(float(np.linalg.norm(kv)), th, lam, quad)
        if err > max(quad.rel_tol * abs(val) * 10, quad.abs_tol, 1e-14 * abs(val)):
            raise QuadratureError("radial quadrature did not converge", val, err)
    else:
        ks = np.array([v for v, _ in pairs])
        th = np.array([t for _, t in pairs])

        def f(ell):
            out = np.ones(ell.shape[0])
            for kvec, t in zip(ks, th):
                q = np.sqrt(np.einsum("ij,ij->i", ell + kvec, ell + kvec))
                out *= np.maximum(q, lam) ** (-t)
            return out

        mean, stderr = _gauss_average_qmc(f, lam, quad, max(quad.rel_tol, 1e-4))
        val, err = GAUSS_VOLUME * lam * mean, GAUSS_VOLUME * lam * stderr
    return (val, err) if return_error else val


def loop_lemma_rhs(k: Sequence[tuple[Sequence[float], float]], lam: float) -> float:
    """``lam * prod_j max(lam, |k_j|)^-theta_j`` (the bound without its constant)."""
    out = lam
    for v, t in k:
        out *= max(lam, float(np.linalg.norm(v))) ** (-float(t))
    return out


@dataclasses.dataclass
class LoopLemmaReport:
    rows: list[dict]
    sup_ratio: dict[str, float]
    sup_half: dict[str, float]
    running_sup: dict[str, list[float]]

    @property
    def doubling_change(self) -> dict[str, float]:
        return {m: abs(self.sup_ratio[m] - self.sup_half[m]) / self.sup_half[m] for m in self.sup_ratio}

    def stable(self, threshold: float = 0.05) -> bool:
        """Supremum changes by less than ``threshold`` when the sample doubles."""
        return all(c < threshold for c in self.doubling_change.values())

    def write_csv(self, path):
        width = max((len(r["k_norms"]) for r in self.rows), default=0)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "lambda", "thetas"] + [f"k_norm_{j}" for j in range(width)]
                       + ["lhs", "rhs_without_c", "ratio"])
            for r in self.rows:
                norms = list(r["k_norms"]) + [""] * (width - len(r["k_norms"]))
                w.writerow([r["sample_id"], r["lambda"], " ".join(f"{t:g}" for t in r["thetas"])]
                           + norms + [r["lhs"], r["rhs_without_c"], r["ratio"]])


def _menu_key(thetas) -> str:
    return "(" + ",".join(f"{t:g}" for t in thetas) + ")"


def random_k(rng: np.random.Generator, lam: float, k_range=(1e-2, 1e2)) -> np.ndarray:
    """Random direction, norm log-uniform in ``k_range * lam``."""
    v = rng.standard_normal(4)
    v /= np.linalg.norm(v)
    lo, hi = np.log(k_range[0]), np.log(k_range[1])
    return v * lam * math.exp(rng.uniform(lo, hi))


def verify_loop_lemma(samples: int, theta_menu: Sequence[Sequence[float]], scales_grid: Sequence[Scales],
                      seed: int = 0, k_range=(1e-2, 1e2), fixed_k: Sequence[np.ndarray] | None = None,
                      quad: QuadratureSpec = QuadratureSpec(rel_tol=1e-6), pool=None) -> LoopLemmaReport:
    """Sample ratios LHS / (lam prod |k_j|_lam^-theta_j) and track their supremum.

    For every menu entry ``samples`` shift sets are drawn per scale. The
    supremum over the first half of the draws is kept alongside the full one
    so that growth under sample doubling can be judged.
    ``fixed_k`` replaces the random shifts (e.g. ``[zeros]`` for k = 0).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    jobs = []
    for thetas in theta_menu:
        for sc in scales_grid:
            for s in range(samples):
                if fixed_k is not None:
                    ks = [np.asarray(fixed_k[j % len(fixed_k)], dtype=float) for j in range(len(thetas))]
                else:
                    ks = [random_k(rng, sc.lam, k_range) for _ in thetas]
                jobs.append((tuple(thetas), sc.lam, ks, s))
    mapper = pool.map if pool is not None else map
    results = list(mapper(_loop_lemma_job, [(t, lam, ks, quad) for t, lam, ks, _ in jobs]))
    rows = []
    sup, half, running = {}, {}, {}
    for i, ((thetas, lam, ks, s), (lhs, rhs)) in enumerate(zip(jobs, results)):
        key = _menu_key(thetas)
        ratio = lhs / rhs
        rows.append({"sample_id": i, "lambda": lam, "thetas": thetas,
                     "k_norms": [float(np.linalg.norm(k)) for k in ks],
                     "lhs": lhs, "rhs_without_c": rhs, "ratio": ratio})
        sup[key] = max(sup.get(key, -math.inf), ratio)
        running.setdefault(key, []).append(sup[key])
        if s < max(1, samples // 2):
            half[key] = max(half.get(key, -math.inf), ratio)
    return LoopLemmaReport(rows, sup, half, running)


def _loop_lemma_job(args):
    thetas, lam, ks, quad = args
    pairs = list(zip(ks, thetas))
    return loop_lemma_lhs(pairs, lam, quad), loop_lemma_rhs(pairs, lam)
