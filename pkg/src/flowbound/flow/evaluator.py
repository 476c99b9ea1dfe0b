"""Numerical integration of the perturbative flow equations.

``L_{N,L}(lam)`` is obtained as its boundary value at ``lam0`` minus the
integral of the flow right-hand side over ``[lam, lam0]``. The right-hand side
has a loop part, built from ``L_{N+2,L-1}`` with two legs joined by the
differentiated covariance, and a bilinear part, a sum over splittings of the
external legs into two lower functions joined by one such line.

Top-level values integrate the two parts with ``quad_vec`` in ``log lam`` so
that they can be reported separately; functions needed inside the
right-hand side are taken from cached piecewise Chebyshev antiderivatives of their own flow.
"""
from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import math
import os
import threading
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy import integrate, special
from scipy.stats import qmc

from ..covariance import GAUSS_VOLUME, QuadratureSpec, c_hat_sq, d_c_hat_sq, loop_integral
from ..kinematics import MomentumConfig, Scales
from .counterterms import CountertermSeries
from .tree_level import tree_terms

__all__ = ["FlowRHS", "SchwingerEvaluator", "SchwingerRequest", "SchwingerResult", "UnsupportedDepth"]

LOOP_PREFACTOR = 0.5 / (2.0 * math.pi) ** 4
MAX_TREE_N = 8


class UnsupportedDepth(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class SchwingerRequest:
    n_ext: int
    loops: int
    scales: Scales
    cfg: MomentumConfig

    def __post_init__(self):
        if self.loops < 0:
            raise ValueError("loops must be >= 0")
        if self.cfg.n_ext != self.n_ext:
            raise ValueError(f"configuration has n_ext={self.cfg.n_ext}, request says {self.n_ext}")


@dataclasses.dataclass(frozen=True)
class FlowRHS:
    linear: float
    bilinear: float

    @property
    def total(self) -> float:
        return self.linear + self.bilinear


@dataclasses.dataclass
class SchwingerResult:
    value: float
    boundary: float
    linear_part: float
    bilinear_part: float
    quadrature_error: float
    counterterms: dict
    property_only: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _vanishes(n: int, loops: int) -> bool:
    return n % 2 == 1 or n < 2 or (n == 2 and loops == 0)


class _Trajectory:
    """``L(lam) = boundary - int_{log lam}^{log lam0} lam' rhs(lam') dt`` as a piecewise
    Chebyshev antiderivative, built panel by panel downward from ``lam0``.

    The integrand is analytic in ``t = log lam``; panels are bisected until
    the trailing Chebyshev coefficients are negligible.
    """

    DEG = 20

    def __init__(self, g, t0: float, boundary: float, tol: float, width: float = 0.5):
        self.g, self.t0, self.boundary, self.tol, self.width = g, t0, boundary, tol, width
        self.panels: list[tuple[float, float, np.ndarray, float]] = []  # (ta, tb, antideriv coeffs, I(tb))
        self.t_min = t0
        self._lock = threading.Lock()

    def _fit(self, ta, tb, depth=0):
        x = np.cos(np.pi * (np.arange(self.DEG + 1) + 0.5) / (self.DEG + 1))
        y = np.array([self.g(0.5 * (tb - ta) * (xi + 1.0) + ta) for xi in x])
        c = cheb.chebfit(x, y, self.DEG)
        scale = np.abs(c).max()
        if depth < 30 and np.abs(c[-4:]).max() > self.tol * max(scale, 1e-300) and tb - ta > 1e-6:
            mid = 0.5 * (ta + tb)
            return self._fit(mid, tb, depth + 1) + self._fit(ta, mid, depth + 1)
        return [(ta, tb, cheb.chebint(c, lbnd=-1.0) * 0.5 * (tb - ta))]

    def extend(self, t_need: float):
        with self._lock:
            while self.t_min > t_need:
                tb = self.t_min
                ta = max(t_need, tb - self.width) if tb - t_need < 1.5 * self.width else tb - self.width
                acc = self.panels[-1][3] + self._panel_total(self.panels[-1]) if self.panels else 0.0
                for pa, pb, coef in self._fit(ta, tb):
                    self.panels.append((pa, pb, coef, acc))
                    acc += self._panel_total(self.panels[-1])
                self.t_min = ta

    @staticmethod
    def _panel_total(panel) -> float:
        return float(cheb.chebval(1.0, panel[2]))

    def integral(self, t: float) -> float:
        if t >= self.t0:
            return 0.0
        lo, hi = 0, len(self.panels) - 1
        while lo < hi:  # panels are ordered by decreasing t
            mid = (lo + hi) // 2
            if self.panels[mid][0] > t:
                lo = mid + 1
            else:
                hi = mid
        ta, tb, coef, acc = self.panels[lo]
        x = 2.0 * (t - ta) / (tb - ta) - 1.0
        return acc + float(cheb.chebval(1.0, coef) - cheb.chebval(x, coef))

    def __call__(self, lam: float) -> float:
        return self.boundary - self.integral(math.log(lam))


class SchwingerEvaluator:
    """Memoising evaluator of ``L_{N,L}`` for one cutoff and counterterm set.

    Supported: ``L = 0`` with ``N <= 8``; ``L = 1`` with ``N <= 4``; ``(6, 1)``
    with a quasi-Monte Carlo loop integral (flagged property-only). Deeper
    orders need ``allow_generic=True``; their loop term is sampled by
    randomised QMC over full sub-evaluations and is very slow.
    """

    def __init__(self, counterterms: CountertermSeries, lam0: float, *,
                 quad: QuadratureSpec = QuadratureSpec(), lam_rtol: float = 1e-10,
                 sub_rtol: float = 1e-14, mc_rel_tol: float = 1e-2, mc_log2: int = 12,
                 allow_generic: bool = False, cache_dir: str | os.PathLike | None = None):
        if not lam0 > 0:
            raise ValueError("lambda0 must be positive")
        self.ct = counterterms
        self.lam0 = float(lam0)
        self.quad = quad
        self.lam_rtol = lam_rtol
        self.sub_rtol = sub_rtol
        self.mc_rel_tol = mc_rel_tol
        self.mc_log2 = mc_log2
        self.allow_generic = allow_generic
        self._traj: dict[tuple, _Trajectory] = {}
        self._lock = threading.Lock()
        self._qmc_cache: dict[tuple, np.ndarray] = {}
        if cache_dir is None:
            cache_dir = os.environ.get("FLOWBOUND_CACHE_DIR")
        self.cache_dir = Path(cache_dir) if cache_dir else None

    # --- public API ----------------------------------------------------

    def check_depth(self, n: int, loops: int) -> bool:
        """Raise ``UnsupportedDepth`` if ``(n, loops)`` is out of reach; return property-only flag."""
        if _vanishes(n, loops):
            return False
        if loops == 0 and n <= MAX_TREE_N:
            return False
        if loops == 1 and n <= 4:
            return False
        if loops == 1 and n == 6:
            return True
        if self.allow_generic and n + 2 * loops <= 8:
            return True
        raise UnsupportedDepth(f"(N, L) = ({n}, {loops}) is outside the supported depth")

    def evaluate(self, req: SchwingerRequest) -> SchwingerResult:
        self._check_scales(req.scales)
        full = req.cfg.full()
        property_only = self.check_depth(req.n_ext, req.loops)
        if _vanishes(req.n_ext, req.loops):
            return SchwingerResult(0.0, 0.0, 0.0, 0.0, 0.0, self.ct.to_dict(), False)
        cached = self._disk_get(req)
        if cached is not None:
            return cached
        lam = req.scales.lam
        bnd = self.boundary(req.n_ext, req.loops, full)
        if lam >= self.lam0:
            res = SchwingerResult(bnd, bnd, 0.0, 0.0, 0.0, self.ct.to_dict(), property_only)
        else:
            n, loops = req.n_ext, req.loops

            def f(t):
                lp = math.exp(t)
                r = self._rhs(n, loops, full, lp, lam)
                return np.array([lp * r.linear, lp * r.bilinear])

            a, b = math.log(lam), math.log(self.lam0)
            pts = self._breakpoints(full, a, b)
            tol = self.lam_rtol if not property_only else max(self.lam_rtol, 1e-4)
            kw = {"points": pts} if pts else {}
            ints, err = integrate.quad_vec(f, a, b, epsrel=tol, epsabs=1e-300, limit=4000, **kw)
            lin, bil = float(ints[0]), float(ints[1])
            res = SchwingerResult(bnd - lin - bil, bnd, -lin, -bil, float(err), self.ct.to_dict(), property_only)
        self._disk_put(req, res)
        return res

    def value(self, n: int, loops: int, full: np.ndarray, lam: float) -> float:
        """``L_{n,loops}`` at the full momentum list (``p_0`` first) and scale ``lam``."""
        if _vanishes(n, loops):
            return 0.0
        self.check_depth(n, loops)
        full = np.asarray(full, dtype=float)
        if full.shape != (n, 4):
            raise ValueError(f"expected {n} momenta, got shape {full.shape}")
        return self._sub(n, loops, full, lam)

    def flow_rhs(self, req: SchwingerRequest) -> FlowRHS:
        self._check_scales(req.scales)
        if _vanishes(req.n_ext, req.loops):
            return FlowRHS(0.0, 0.0)
        self.check_depth(req.n_ext, req.loops)
        lam = req.scales.lam
        return self._rhs(req.n_ext, req.loops, req.cfg.full(), lam, lam)

    def boundary(self, n: int, loops: int, full: np.ndarray) -> float:
        if n == 2:
            p = full[1]
            return self.ct.two_point_boundary(loops, float(p @ p))
        if n == 4:
            return self.ct.four_point_boundary(loops)
        return 0.0

    # --- right-hand side -----------------------------------------------

    def _rhs(self, n: int, loops: int, full: np.ndarray, lam: float, floor: float) -> FlowRHS:
        lin = self._linear(n, loops, full, lam, floor) if loops >= 1 else 0.0
        return FlowRHS(lin, self._bilinear(n, loops, full, lam, floor))

    def _bilinear(self, n, loops, full, lam, floor) -> float:
        # Only splittings with label 0 on the first side; the mirrored ones
        # double this and cancel the 1/2.
        total = 0.0
        others = range(1, n)
        for size in range(0, n - 1):
            n1 = size + 2
            n2 = n - n1 + 2
            if n1 % 2 or n2 % 2:
                continue
            for rest in itertools.combinations(others, size):
                idx1 = (0,) + rest
                idx2 = tuple(j for j in others if j not in rest)
                mom1, mom2 = full[list(idx1)], full[list(idx2)]
                k = mom1.sum(axis=0)
                dc = float(d_c_hat_sq(k @ k, lam))
                if dc == 0.0:
                    continue
                sub1 = np.vstack([-k, mom1])
                sub2 = np.vstack([k, mom2])
                for l1 in range(loops + 1):
                    l2 = loops - l1
                    if _vanishes(n1, l1) or _vanishes(n2, l2):
                        continue
                    v1 = self._sub(n1, l1, sub1, lam, floor)
                    if v1 == 0.0:
                        continue
                    total += dc * v1 * self._sub(n2, l2, sub2, lam, floor)
        return -total

    def _linear(self, n, loops, full, lam, floor) -> float:
        if loops - 1 == 0:
            return LOOP_PREFACTOR * self._tree_loop(n + 2, full, lam)
        if not self.allow_generic:
            raise UnsupportedDepth(f"loop term of (N, L) = ({n}, {loops}) needs the generic path")
        return LOOP_PREFACTOR * self._generic_loop(n + 2, loops - 1, full, lam, floor)

    def _tree_loop(self, m: int, full: np.ndarray, lam: float) -> float:
        """``int d^4l dC(l) L_{m,0}(p, -l, l)`` from the quartic tree sum."""
        n = m - 2
        g0 = self.ct.g0
        lam0 = self.lam0
        const_total = 0.0
        by_shift: list[tuple[float, np.ndarray]] = []
        multi: list[tuple[float, list[tuple[int, np.ndarray]]]] = []
        for lines, masks in tree_terms(m):
            coef = g0 * (-g0) ** lines
            dep = []
            for mask in masks:
                c = ((mask >> (n + 1)) & 1) - ((mask >> n) & 1)
                ext = [j for j in range(n) if mask >> j & 1]
                kvec = full[ext].sum(axis=0) if ext else np.zeros(4)
                if c == 0:
                    coef *= float(c_hat_sq(kvec @ kvec, lam, lam0))
                else:
                    # c l + K has the norm of l + c K
                    dep.append(c * kvec)
            if coef == 0.0:
                continue
            if not dep:
                const_total += coef
            elif len(dep) == 1:
                by_shift.append((coef, dep[0]))
            else:
                multi.append((coef, dep))
        total = const_total * (-GAUSS_VOLUME * lam)
        for coef, kvec in by_shift:
            val, _ = loop_integral([kvec], lam, lam0, self.quad)
            total += coef * val
        if multi:
            total += self._multi_loop(multi, lam)
        return total

    def _qmc_points(self, lam: float):
        key = (self.mc_log2, self.quad.qmc_replicates, self.quad.seed)
        base = self._qmc_cache.get(key)
        if base is None:
            pts = []
            for rep in range(self.quad.qmc_replicates):
                u = qmc.Sobol(d=4, scramble=True, seed=self.quad.seed + rep).random_base2(self.mc_log2)
                pts.append(special.ndtri(np.clip(u, 1e-16, 1 - 1e-16)) / math.sqrt(2.0))
            base = np.stack(pts)
            self._qmc_cache.setdefault(key, base)
        return lam * base

    def _multi_loop(self, terms, lam) -> float:
        # Fixed scrambled Sobol points keep the integrand smooth in lam.
        ell = self._qmc_points(lam)
        acc = np.zeros(ell.shape[:2])
        for coef, shifts in terms:
            prod = np.full(ell.shape[:2], coef)
            for kvec in shifts:
                q = ell + kvec
                prod *= c_hat_sq(np.einsum("rij,rij->ri", q, q), lam, self.lam0)
            acc += prod
        return -GAUSS_VOLUME * lam * float(acc.mean())

    def _generic_loop(self, m, loops, full, lam, floor) -> float:
        ell = self._qmc_points(lam)
        vals = np.empty(ell.shape[:2])
        for r in range(ell.shape[0]):
            for i in range(ell.shape[1]):
                sub = np.vstack([full, -ell[r, i], ell[r, i]])
                vals[r, i] = self._sub(m, loops, sub, lam, floor)
        return -GAUSS_VOLUME * lam * float(vals.mean())

    # --- sub-evaluations -----------------------------------------------

    def _sub(self, n, loops, full, lam, floor=None) -> float:
        if _vanishes(n, loops):
            return 0.0
        if n == 4 and loops == 0:
            return self.ct.g0
        floor = lam if floor is None else min(floor, lam)
        if lam >= self.lam0:
            return self.boundary(n, loops, full)
        traj = self._trajectory(n, loops, full, floor)
        return traj(lam)

    @staticmethod
    def _key(n, loops, full) -> tuple:
        rows = np.round(full, 15) + 0.0
        order = np.lexsort(rows.T[::-1])
        return (n, loops, rows[order].tobytes())

    def _trajectory(self, n, loops, full, floor) -> _Trajectory:
        key = self._key(n, loops, full)
        traj = self._traj.get(key)
        if traj is None:
            floor_t = [math.log(floor)]

            def g(t):
                lp = math.exp(t)
                return lp * self._rhs(n, loops, full, lp, math.exp(floor_t[0])).total

            traj = _Trajectory(g, math.log(self.lam0), self.boundary(n, loops, full), self.sub_rtol)
            traj.floor_t = floor_t
            traj = self._traj.setdefault(key, traj)
        t_need = math.log(floor)
        if traj.t_min > t_need:
            # sub-evaluations inside the new panels may need to reach lower too
            traj.floor_t[0] = min(traj.floor_t[0], t_need - 0.5)
            traj.extend(t_need - 0.5)
        return traj

    # --- helpers ---------------------------------------------------------

    def _check_scales(self, scales: Scales):
        if not math.isclose(scales.lam0, self.lam0, rel_tol=1e-15):
            raise ValueError(f"evaluator was built for lambda0={self.lam0}, request has {scales.lam0}")

    @staticmethod
    def _breakpoints(full, a, b) -> list[float]:
        n = full.shape[0]
        norms = set()
        for size in range(1, n):
            for idx in itertools.combinations(range(n), size):
                norms.add(float(np.linalg.norm(full[list(idx)].sum(axis=0))))
        ts = sorted({round(math.log(x), 12) for x in norms if x > 0 and a < math.log(x) < b})
        return ts

    def _disk_path(self, req: SchwingerRequest) -> Path | None:
        if self.cache_dir is None:
            return None
        blob = json.dumps({
            "version": 1, "n": req.n_ext, "loops": req.loops, "lam": req.scales.lam, "lam0": self.lam0,
            "p": req.cfg.external.tolist(), "ct": self.ct.to_dict(),
            "quad": dataclasses.asdict(self.quad), "lam_rtol": self.lam_rtol, "sub_rtol": self.sub_rtol,
            "mc": [self.mc_rel_tol, self.mc_log2],
        }, sort_keys=True)
        return self.cache_dir / (hashlib.sha256(blob.encode()).hexdigest() + ".json")

    def _disk_get(self, req) -> SchwingerResult | None:
        path = self._disk_path(req)
        if path is None or not path.exists():
            return None
        try:
            return SchwingerResult(**json.loads(path.read_text()))
        except (ValueError, TypeError) as exc:
            warnings.warn(f"ignoring unreadable cache entry {path}: {exc}")
            return None

    def _disk_put(self, req, res: SchwingerResult):
        path = self._disk_path(req)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.tmp")
        tmp.write_text(json.dumps(res.to_dict()))
        os.replace(tmp, path)


def request(n_ext: int, loops: int, lam: float, lam0: float, momenta: Sequence, mu: float = 1.0) -> SchwingerRequest:
    return SchwingerRequest(n_ext, loops, Scales(lam, lam0, mu), MomentumConfig(momenta, n_ext=n_ext))
