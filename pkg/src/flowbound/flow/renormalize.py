"""Counterterm fixing by shooting, and convergence probes in the cutoffs."""
from __future__ import annotations

import dataclasses
import math
from typing import Callable, Sequence

import numpy as np

from ..covariance import QuadratureSpec
from ..kinematics import MomentumConfig, Scales, is_exceptional
from .counterterms import CountertermSeries
from .evaluator import SchwingerEvaluator, SchwingerRequest

__all__ = ["RenormalizationScheme", "SingularResponse", "fix_counterterms", "renormalized_series", "uv_ir_probe"]


class SingularResponse(np.linalg.LinAlgError):
    pass


@dataclasses.dataclass(frozen=True)
class RenormalizationScheme:
    """Conditions at flow scale ``mu`` and zero momenta, for UV cutoff ``lam0``."""

    mu: float
    g0: float
    lam0: float
    fd_step: float = 0.1  # in units of mu, for the p^2-derivative
    quad: QuadratureSpec = QuadratureSpec()
    lam_rtol: float = 1e-13

    def __post_init__(self):
        if not (self.mu > 0 and self.g0 > 0 and self.lam0 >= self.mu):
            raise ValueError("need mu > 0, g0 > 0 and lam0 >= mu")


def _conditions(ev: SchwingerEvaluator, order: int, scheme: RenormalizationScheme) -> np.ndarray:
    mu = scheme.mu
    h = scheme.fd_step * mu

    scales = Scales(mu, scheme.lam0, mu)

    def two(p):
        cfg = MomentumConfig([[p, 0.0, 0.0, 0.0]])
        return ev.evaluate(SchwingerRequest(2, order, scales, cfg)).value

    v0 = two(0.0)
    # (f(x) - f(0)) / x = f' + f'' x / 2 + ...; Richardson in x = p^2
    d1 = (two(h) - v0) / h**2
    d2 = (two(h / math.sqrt(2.0)) - v0) / (h * h / 2.0)
    deriv = 2.0 * d2 - d1
    four = ev.evaluate(SchwingerRequest(4, order, scales, MomentumConfig(np.zeros((3, 4))))).value
    return np.array([v0, deriv, four])


def fix_counterterms(order: int, scheme: RenormalizationScheme,
                     series: CountertermSeries | None = None, *, return_details: bool = False):
    """Fix ``(b2, a, b4)`` at ``order`` from the three conditions at ``mu``.

    The order-``l`` functions are affine in the order-``l`` boundary data, so a
    base run and three unit-response runs determine them.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    series = series or CountertermSeries(scheme.g0)
    if series.g0 != scheme.g0:
        raise ValueError("series and scheme disagree on g0")
    if series.max_order < order - 1:
        raise ValueError(f"orders below {order} must be fixed first")
    base = series.truncated(order - 1).with_order(order, a=0.0, b2=0.0, b4=0.0)

    def run(ct):
        ev = SchwingerEvaluator(ct, scheme.lam0, quad=scheme.quad, lam_rtol=scheme.lam_rtol)
        return _conditions(ev, order, scheme)

    v0 = run(base)
    names = ("b2", "a", "b4")
    cols = []
    for name in names:
        ct = base.with_order(order, **{name: 1.0})
        cols.append(run(ct) - v0)
    m = np.column_stack(cols)
    if abs(np.linalg.det(m)) < 1e-12 * max(1.0, np.abs(m).max() ** 3):
        raise SingularResponse(f"response matrix is singular:\n{m}")
    x = np.linalg.solve(m, -v0)
    out = base.with_order(order, b2=x[0], a=x[1], b4=x[2])
    if return_details:
        return out, {"base": v0.tolist(), "response": m.tolist()}
    return out


def renormalized_series(max_order: int, scheme: RenormalizationScheme) -> CountertermSeries:
    ct = CountertermSeries(scheme.g0)
    for order in range(1, max_order + 1):
        ct = fix_counterterms(order, scheme, ct)
    return ct


def uv_ir_probe(n_ext: int, loops: int, cfg: MomentumConfig, lambda_sequence: Sequence[float],
                lambda0_sequence: Sequence[float], *, mu: float = 1.0, g0: float = 1.0,
                rtol: float = 1e-6, evaluator_factory: Callable | None = None) -> dict:
    """Evaluate along decreasing ``lam`` and increasing ``lam0``; report Cauchy increments.

    A direction is flagged divergent when its last increment is not smaller
    than the previous one and still exceeds ``rtol`` relative to the value.
    """
    if is_exceptional(cfg):
        raise ValueError("the probe needs nonexceptional momenta")
    lams = sorted(lambda_sequence, reverse=True)
    lam0s = sorted(lambda0_sequence)
    grid = np.empty((len(lam0s), len(lams)))
    for i, lam0 in enumerate(lam0s):
        scheme = RenormalizationScheme(mu, g0, lam0)
        ct = renormalized_series(loops, scheme) if loops >= 1 else CountertermSeries(g0)
        ev = evaluator_factory(ct, lam0) if evaluator_factory else SchwingerEvaluator(ct, lam0)
        for j, lam in enumerate(lams):
            grid[i, j] = ev.evaluate(SchwingerRequest(n_ext, loops, Scales(lam, lam0, mu), cfg)).value

    def verdict(inc, ref):
        inc = np.abs(inc)
        if inc.size < 2:
            return False
        return bool(inc[-1] >= inc[-2] and inc[-1] > rtol * max(abs(ref), 1e-300))

    ir_inc = np.diff(grid, axis=1)
    uv_inc = np.diff(grid, axis=0)
    return {
        "n_ext": n_ext, "loops": loops, "lambdas": lams, "lambda0s": lam0s,
        "values": grid.tolist(),
        "ir_increments": ir_inc.tolist(),
        "uv_increments": uv_inc.tolist(),
        "ir_divergent": [verdict(row, grid[i, -1]) for i, row in enumerate(ir_inc)],
        "uv_divergent": [verdict(col, grid[-1, j]) for j, col in enumerate(uv_inc.T)],
    }
