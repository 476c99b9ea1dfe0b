import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowbound.bound import monomials, ratio_check, tree_sum
from flowbound.flow import schwinger_tree_direct
from flowbound.kinematics import MomentumConfig, Scales, random_rotation
from flowbound.trees import TreeClassParams, WeightedTree, enumerate_trees
from oracles import valid_weighted_bruteforce


def brute_tree_sum(n, r, p, lam):
    full = MomentumConfig(p).full()
    total = 0.0
    for tree in valid_weighted_bruteforce(n, r):
        prod = 1.0
        for side, rho in tree:
            k = np.linalg.norm(full[sorted(side)].sum(axis=0))
            prod *= max(lam, k) ** -rho
        total += prod
    return total


def test_four_point_sum_is_one():
    cfg = MomentumConfig(np.random.default_rng(0).standard_normal((3, 4)))
    b = tree_sum(TreeClassParams(4, 2), cfg, 0.3)
    assert b.tree_sum == 1.0 and len(b.factors) == 1


def test_single_tree_factor():
    # p1 + p2 + p3 = (3, 0, 0, 0): the rho=2 line over {1, 2, 3} contributes 1/9
    p = [[1, 0, 0, 0]] * 3 + [[0, 1, 0, 0], [0, 0, 1, 0]]
    cfg = MomentumConfig(p)
    cls = enumerate_trees(TreeClassParams(6, 4))
    b = tree_sum(TreeClassParams(6, 4), cfg, 1.0, trees=cls)
    idx = list(cls).index(WeightedTree(6, {(1, 2, 3): 2}))
    assert b.factors[idx] == pytest.approx(1 / 9, rel=1e-15)


@pytest.mark.parametrize("r", [0, 2, 4])
def test_tree_sum_matches_bruteforce(r):
    rng = np.random.default_rng(r)
    for _ in range(5):
        p = rng.standard_normal((5, 4)) * rng.uniform(0.1, 5)
        lam = 10 ** rng.uniform(-2, 0.5)
        got = tree_sum(TreeClassParams(6, r), MomentumConfig(p), lam).tree_sum
        assert got == pytest.approx(brute_tree_sum(6, r, p, lam), rel=1e-13)


def test_log_arguments():
    cfg = MomentumConfig(np.eye(4)[:3] * 10)
    b = tree_sum(TreeClassParams(4, 0), cfg, Scales(0.01, 1e3, 1.0))
    assert b.eta == pytest.approx(10.0) and b.kappa == 1.0
    assert b.log_arg_momentum == pytest.approx(math.log(10.0))
    assert b.log_arg_scale == 0.0
    b = tree_sum(TreeClassParams(4, 0), cfg, Scales(5.0, 1e3, 1.0))
    assert b.log_arg_scale == pytest.approx(math.log(5.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    cfg = MomentumConfig(rng.standard_normal((5, 4)))
    rot = random_rotation(rng)
    params = TreeClassParams(6, 4)
    a = tree_sum(params, cfg, 0.2)
    b = tree_sum(params, cfg.rotated(rot), 0.2)
    assert b.tree_sum == pytest.approx(a.tree_sum, rel=1e-12)
    assert b.log_arg_momentum == pytest.approx(a.log_arg_momentum, rel=1e-12, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 10.0), st.floats(1.01, 10.0))
def test_monotone_decreasing_in_lambda(seed, lam, factor):
    cfg = MomentumConfig(np.random.default_rng(seed).standard_normal((5, 4)))
    params = TreeClassParams(6, 4)
    assert tree_sum(params, cfg, lam * factor).tree_sum <= tree_sum(params, cfg, lam).tree_sum


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 100.0))
def test_scaling_by_s(seed, s):
    # each N=6 tree has total weight 2, so large momenta give s^-2
    rng = np.random.default_rng(seed)
    p = rng.standard_normal((5, 4)) + 0.1
    params = TreeClassParams(6, 4)
    lam = 1e-9
    a = tree_sum(params, MomentumConfig(p), lam)
    if np.min(np.abs(a.factors)) == 0 or a.eta < 1e-6:
        return
    b = tree_sum(params, MomentumConfig(p * s), lam * s)
    assert b.tree_sum == pytest.approx(a.tree_sum / s**2, rel=1e-12)


def test_large_lambda_limit():
    cfg = MomentumConfig(np.random.default_rng(1).standard_normal((5, 4)))
    params = TreeClassParams(6, 4)
    n_trees = len(enumerate_trees(params))
    lam = 1e4
    assert tree_sum(params, cfg, lam).tree_sum == pytest.approx(n_trees / lam**2, rel=1e-14)


def test_p0_flag_changes_log_argument_only():
    cfg = MomentumConfig([[1, 0, 0, 0], [1, 0, 0, 0], [1, 0, 0, 0]])
    a = tree_sum(TreeClassParams(4, 0), cfg, 0.1)
    b = tree_sum(TreeClassParams(4, 0), cfg, 0.1, include_p0=True)
    assert a.tree_sum == b.tree_sum
    assert b.log_arg_momentum == pytest.approx(a.log_arg_momentum + math.log(3))


def test_monomials():
    assert monomials(0) == [(0, 0)]
    assert monomials(1) == [(0, 0), (1, 0), (0, 1)]
    assert len(monomials(3)) == 10


def test_ratio_check_six_point_tree():
    rng = np.random.default_rng(2)
    g0 = 0.8
    samples = []
    for _ in range(40):
        cfg = MomentumConfig(rng.standard_normal((5, 4)) * 10 ** rng.uniform(-1, 1))
        lam = 10 ** rng.uniform(-3, 0)
        samples.append((cfg, lam, schwinger_tree_direct(6, Scales(lam, 1e3), cfg, g0)))
    fit = ratio_check(samples, 6, 0)
    assert max(r["ratio"] for r in fit.rows) <= g0**2 * (1 + 1e-12)
    assert fit.exponents == [(0, 0)]
    assert fit.coefficients[0] <= g0**2 * (1 + 1e-12)


def test_ratio_check_constant_ratio_fits_exactly():
    rng = np.random.default_rng(3)
    samples = []
    for _ in range(10):
        cfg = MomentumConfig(rng.standard_normal((5, 4)))
        lam = 0.1
        ts = tree_sum(TreeClassParams(6, 2), cfg, lam).tree_sum
        samples.append((cfg, lam, -2.5 * ts))
    fit = ratio_check(samples, 6, 1)
    assert fit.max_abs_residual < 1e-10
    assert fit.polynomial(0.0, 0.0) == pytest.approx(2.5, rel=1e-10)


def test_ratio_check_all_zero_values():
    cfg = MomentumConfig(np.ones((3, 4)))
    fit = ratio_check([(cfg, 0.1, 0.0), (cfg, 0.2, 0.0)], 4, 1)
    assert fit.max_residual == 0.0 and fit.max_abs_residual == 0.0


def test_ratio_check_rejects_bad_input():
    with pytest.raises(ValueError):
        ratio_check([], 4, 1)
    with pytest.raises(ValueError):
        ratio_check([(MomentumConfig(np.ones((1, 4))), 0.1, 1.0)], 2, 1)
    with pytest.raises(ValueError):
        ratio_check([(MomentumConfig(np.ones((5, 4))), 0.1, 1.0)], 4, 1)


def test_ratio_outputs(tmp_path):
    cfg = MomentumConfig(np.random.default_rng(4).standard_normal((3, 4)))
    fit = ratio_check([(cfg, lam, lam) for lam in (0.1, 0.5, 2.0)], 4, 1)
    fit.write_csv(tmp_path / "r.csv")
    fit.write_json(tmp_path / "r.json")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert list(rows[0]) == ["sample_id", "lambda", "eta", "kappa", "log_arg_p", "log_arg_lambda",
                             "schwinger_abs", "tree_sum", "ratio"]
    assert len(rows) == 3
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["n_samples"] == 3 and len(data["coefficients"]) == 3
