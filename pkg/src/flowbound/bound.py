"""Tree sums of regulated inverse line momenta and empirical ratio fits."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

from .kinematics import MomentumConfig, Scales, config_norm, eta, kappa, log_plus, subset_sums
from .trees import TreeClass, TreeClassParams, enumerate_trees

__all__ = ["BoundStructure", "RatioFit", "monomials", "ratio_check", "tree_sum"]


@dataclasses.dataclass
class BoundStructure:
    tree_sum: float
    log_arg_momentum: float
    log_arg_scale: float
    factors: np.ndarray  # one product per tree, in class order
    eta: float
    kappa: float


def _resolve_scales(scales, mu):
    if isinstance(scales, Scales):
        return scales.lam, scales.mu
    lam = float(scales)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return lam, mu


def tree_factors(trees: TreeClass, cfg: MomentumConfig, lam: float) -> np.ndarray:
    """``prod_i max(lam, |k_i|)^-rho_i`` for every tree of the class."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if cfg.n_ext != trees.n_ext:
        raise ValueError(f"configuration has n_ext={cfg.n_ext}, trees have {trees.n_ext}")
    masks, rho = trees.entries()
    if masks.shape[1] == 0:
        return np.ones(len(trees))
    norms = np.linalg.norm(subset_sums(cfg.external), axis=1)
    reg = np.maximum(lam, norms)
    k = reg[np.maximum(masks - 1, 0)]
    return np.prod(np.where(masks > 0, k ** (-rho.astype(float)), 1.0), axis=1)


def tree_sum(params: TreeClassParams, cfg: MomentumConfig, scales: Scales | float, *, mu: float = 1.0,
             include_p0: bool = False, trees: TreeClass | None = None, strict_d: bool = True) -> BoundStructure:
    """Sum over the class of ``prod_i |k_i|_lam^-theta(i)`` (``theta = rho``) and the two log arguments."""
    lam, mu = _resolve_scales(scales, mu)
    if params.n_ext != cfg.n_ext:
        raise ValueError("params and configuration disagree on n_ext")
    if trees is None:
        trees = enumerate_trees(params, strict_d=strict_d)
    f = tree_factors(trees, cfg, lam)
    e = eta(cfg)
    kap = max(lam, min(e, mu))
    return BoundStructure(
        tree_sum=float(f.sum()),
        log_arg_momentum=log_plus(config_norm(cfg, mu, include_p0=include_p0) / kap),
        log_arg_scale=log_plus(lam / mu),
        factors=f,
        eta=e,
        kappa=kap,
    )


def monomials(degree: int) -> list[tuple[int, int]]:
    """Exponent pairs ``(i, j)`` of ``x^i y^j`` with ``i + j <= degree``."""
    return [(i, d - i) for d in range(degree + 1) for i in range(d, -1, -1)]


@dataclasses.dataclass
class RatioFit:
    rows: list[dict]
    degree: int
    exponents: list[tuple[int, int]]
    coefficients: np.ndarray
    max_residual: float      # max(ratio / fit) - 1, the bound-violation measure
    max_abs_residual: float  # max |ratio / fit - 1|

    def polynomial(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        return sum(c * x**i * y**j for c, (i, j) in zip(self.coefficients, self.exponents))

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "monomials": [f"x^{i} y^{j}" for i, j in self.exponents],
            "coefficients": [float(c) for c in self.coefficients],
            "max_residual": self.max_residual,
            "max_abs_residual": self.max_abs_residual,
            "n_samples": len(self.rows),
        }

    def write_csv(self, path):
        cols = ["sample_id", "lambda", "eta", "kappa", "log_arg_p", "log_arg_lambda",
                "schwinger_abs", "tree_sum", "ratio"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            w.writerows(self.rows)

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def ratio_check(values: Sequence[tuple[MomentumConfig, float, float]], n_ext: int, loops: int, mu: float = 1.0,
                *, include_p0: bool = False, strict_d: bool = True) -> RatioFit:
    """Fit ``|L| / tree_sum`` by a degree-``loops`` polynomial with nonnegative coefficients.

    The variables are ``x = log+(|p|_mu / kappa)`` and ``y = log+(lam / mu)``.
    ``max_residual`` measures by how much a sample exceeds the fitted
    polynomial; ``max_abs_residual`` is the symmetric misfit.
    """
    if not values:
        raise ValueError("empty sample set")
    if n_ext < 4:
        raise ValueError("ratio checks need n_ext >= 4")
    trees = enumerate_trees(TreeClassParams(n_ext, 2 * loops), strict_d=strict_d)
    rows = []
    for i, (cfg, lam, val) in enumerate(values):
        if cfg.n_ext != n_ext:
            raise ValueError(f"sample {i} has n_ext={cfg.n_ext}")
        b = tree_sum(TreeClassParams(n_ext, 2 * loops), cfg, lam, mu=mu, include_p0=include_p0, trees=trees)
        rows.append({
            "sample_id": i, "lambda": lam, "eta": b.eta, "kappa": b.kappa,
            "log_arg_p": b.log_arg_momentum, "log_arg_lambda": b.log_arg_scale,
            "schwinger_abs": abs(val), "tree_sum": b.tree_sum, "ratio": abs(val) / b.tree_sum,
        })
    exps = monomials(loops)
    x = np.array([r["log_arg_p"] for r in rows])
    y = np.array([r["log_arg_lambda"] for r in rows])
    ratio = np.array([r["ratio"] for r in rows])
    design = np.column_stack([x**i * y**j for i, j in exps])
    coef, _ = nnls(design, ratio)
    fit = design @ coef
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(fit > 0, ratio / fit - 1.0, np.where(ratio > 0, math.inf, 0.0))
    for r, fv in zip(rows, fit):
        r["fit"] = float(fv)
    return RatioFit(rows, loops, exps, coef, float(max(rel.max(), 0.0)), float(np.abs(rel).max()))
