import itertools
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from flowbound.covariance import c_hat_sq, d_c_hat_sq
from flowbound.flow import (
    CountertermSeries,
    RenormalizationScheme,
    SchwingerEvaluator,
    SchwingerRequest,
    UnsupportedDepth,
    fix_counterterms,
    quartic_trees,
    request,
    schwinger_tree_direct,
    uv_ir_probe,
)
from flowbound.kinematics import MomentumConfig, Scales, random_rotation
from flowbound.trees import TreeClassParams, enumerate_trees
from oracles import bubble, four_point_one_loop, loop_term_mc, tetrahedral, two_point_one_loop

G0, MU = 1.0, 1.0
PI2_32 = 32 * math.pi**2


@pytest.fixture(scope="module")
def one_loop():
    lam0 = 100.0
    ct = fix_counterterms(1, RenormalizationScheme(MU, G0, lam0))
    return ct, SchwingerEvaluator(ct, lam0)


def channels6(full):
    for trip in itertools.combinations(range(1, 6), 3):
        yield full[list(trip)].sum(axis=0)


# --- counterterms ------------------------------------------------------------

def test_counterterm_series_orders():
    ct = CountertermSeries(0.5)
    assert ct.coefficient("b4", 0) == 0.5
    assert ct.coefficient("a", 0) == ct.coefficient("b2", 0) == 0.0
    ct2 = ct.with_order(2, b4=3.0)
    assert ct2.b4 == (0.0, 3.0) and ct2.a == (0.0, 0.0)
    assert CountertermSeries.from_dict(ct2.to_dict()) == ct2
    with pytest.raises(ValueError):
        CountertermSeries(0.0)
    with pytest.raises(ValueError):
        ct.with_order(0, b2=1.0)


# --- tree level --------------------------------------------------------------

def test_quartic_tree_counts():
    assert [len(quartic_trees(n)) for n in (2, 4, 5, 6, 8, 10)] == [0, 1, 0, 10, 280, 15400]


@pytest.mark.parametrize("n", [4, 6, 8])
def test_quartic_trees_are_the_r0_class(n):
    # two independent generators of the same objects
    ours = {frozenset(t) for t in quartic_trees(n)}
    cls = {frozenset(s for s, _ in t.splits) for t in enumerate_trees(TreeClassParams(n, 0))}
    assert ours == cls


def test_tree_direct_examples():
    rng = np.random.default_rng(0)
    cfg4 = MomentumConfig(rng.standard_normal((3, 4)))
    assert schwinger_tree_direct(4, Scales(0.3, 5.0), cfg4, g0=0.7) == 0.7
    cfg6 = MomentumConfig(rng.standard_normal((5, 4)))
    assert schwinger_tree_direct(6, Scales(2.0, 2.0), cfg6) == 0.0
    cfg = MomentumConfig(np.vstack([np.eye(4), [[1.0, 1.0, 0, 0]]]))
    direct = schwinger_tree_direct(6, Scales(1.0, 1e12), cfg, g0=G0)
    ref = -G0**2 * sum((1 - math.exp(-(k @ k))) / (k @ k) for k in channels6(cfg.full()))
    assert direct == pytest.approx(ref, rel=1e-12)


def test_tree_direct_n8_sign_and_size():
    rng = np.random.default_rng(1)
    cfg = MomentumConfig(rng.standard_normal((7, 4)))
    v = schwinger_tree_direct(8, Scales(0.5, 50.0), cfg, g0=2.0)
    assert v > 0  # (+g0^3) * positive propagator products


# --- flow right-hand side ------------------------------------------------------

def test_rhs_six_point_tree():
    rng = np.random.default_rng(2)
    ev = SchwingerEvaluator(CountertermSeries(G0), 10.0)
    cfg = MomentumConfig(rng.standard_normal((5, 4)))
    lam = 0.7
    rhs = ev.flow_rhs(SchwingerRequest(6, 0, Scales(lam, 10.0), cfg))
    assert rhs.linear == 0.0
    ref = -G0**2 * sum(float(d_c_hat_sq(k @ k, lam)) for k in channels6(cfg.full()))
    assert rhs.bilinear == pytest.approx(ref, rel=1e-14)


def test_rhs_two_point_one_loop():
    ev = SchwingerEvaluator(CountertermSeries(G0), 10.0)
    for lam in (0.01, 0.4, 3.0):
        rhs = ev.flow_rhs(request(2, 1, lam, 10.0, [[0.3, 0, 0, 0]]))
        assert rhs.bilinear == 0.0
        assert rhs.linear == pytest.approx(-G0 * lam / (16 * math.pi**2), rel=1e-14)


def test_rhs_four_point_loop_term_vs_monte_carlo(one_loop):
    _, ev = one_loop
    rng = np.random.default_rng(3)
    lam, lam0 = 0.8, 100.0
    p = rng.standard_normal((3, 4))
    rhs = ev.flow_rhs(request(4, 1, lam, lam0, p))
    mc, err = loop_term_mc(MomentumConfig(p).full(), lam, lam0, G0, 400000, seed=4)
    assert abs(rhs.linear - mc) <= max(4 * err, 0.01 * abs(mc))
    assert rhs.linear == pytest.approx(mc, rel=0.01)


def test_rhs_four_point_bilinear_term(one_loop):
    _, ev = one_loop
    rng = np.random.default_rng(5)
    lam = 0.3
    p = rng.standard_normal((3, 4))
    full = MomentumConfig(p).full()
    rhs = ev.flow_rhs(request(4, 1, lam, 100.0, p))
    ref = -G0 * two_point_one_loop(lam, MU, G0) * sum(float(d_c_hat_sq(q @ q, lam)) for q in full)
    assert rhs.bilinear == pytest.approx(ref, rel=1e-9)


# --- values ------------------------------------------------------------------------

def test_two_point_closed_form_example(one_loop):
    _, ev = one_loop
    v = ev.evaluate(request(2, 1, 0.5, 100.0, [[0, 0, 0, 0]])).value
    assert v == pytest.approx(0.75 / PI2_32, rel=1e-8)
    assert 0.75 / PI2_32 == pytest.approx(2.3747e-3, rel=1e-4)


def test_six_point_flow_matches_direct():
    rng = np.random.default_rng(6)
    ev = SchwingerEvaluator(CountertermSeries(G0), 50.0)
    for _ in range(5):
        cfg = MomentumConfig(rng.standard_normal((5, 4)) * rng.uniform(0.1, 10))
        sc = Scales(10 ** rng.uniform(-2, 1), 50.0)
        v = ev.evaluate(SchwingerRequest(6, 0, sc, cfg)).value
        assert v == pytest.approx(schwinger_tree_direct(6, sc, cfg, G0), rel=1e-9)


@pytest.mark.slow
def test_eight_point_flow_matches_direct():
    rng = np.random.default_rng(7)
    ev = SchwingerEvaluator(CountertermSeries(G0), 20.0)
    cfg = MomentumConfig(rng.standard_normal((7, 4)))
    sc = Scales(0.5, 20.0)
    v = ev.evaluate(SchwingerRequest(8, 0, sc, cfg)).value
    assert v == pytest.approx(schwinger_tree_direct(8, sc, cfg, G0), rel=1e-8)


def test_four_point_renormalisation_condition(one_loop):
    _, ev = one_loop
    v = ev.evaluate(request(4, 1, MU, 100.0, np.zeros((3, 4)))).value
    assert abs(v) < 1e-9


@pytest.mark.parametrize("s, lam", [(0.5, 0.2), (30.0, 0.01), (3.0, 2.0)])
def test_four_point_matches_bubble_oracle(one_loop, s, lam):
    _, ev = one_loop
    full = tetrahedral(s)
    v = ev.evaluate(request(4, 1, lam, 100.0, full[1:])).value
    ref = four_point_one_loop(full, lam, 100.0, MU, G0)
    assert v == pytest.approx(ref, rel=1e-6, abs=1e-10)


def test_four_point_random_config_matches_bubble_oracle(one_loop):
    _, ev = one_loop
    rng = np.random.default_rng(8)
    p = rng.standard_normal((3, 4))
    full = MomentumConfig(p).full()
    v = ev.evaluate(request(4, 1, 0.1, 100.0, p)).value
    assert v == pytest.approx(four_point_one_loop(full, 0.1, 100.0, MU, G0), rel=1e-6)


def test_result_decomposition(one_loop):
    _, ev = one_loop
    r = ev.evaluate(request(4, 1, 0.05, 100.0, tetrahedral(2.0)[1:]))
    assert r.value == pytest.approx(r.boundary + r.linear_part + r.bilinear_part, rel=1e-12)
    assert r.quadrature_error < 1e-8
    assert set(r.counterterms) == {"g0", "a", "b2", "b4"}


# --- invariants ------------------------------------------------------------------------

def test_vanishing_sectors():
    ev = SchwingerEvaluator(CountertermSeries(G0), 10.0)
    rng = np.random.default_rng(9)
    for n in (3, 5, 7):
        assert ev.evaluate(request(n, 0, 0.5, 10.0, rng.standard_normal((n - 1, 4)))).value == 0.0
        assert ev.evaluate(request(n, 1, 0.5, 10.0, rng.standard_normal((n - 1, 4)))).value == 0.0
    assert ev.evaluate(request(2, 0, 0.5, 10.0, rng.standard_normal((1, 4)))).value == 0.0


def test_permutation_symmetry_including_p0(one_loop):
    _, ev = one_loop
    rng = np.random.default_rng(10)
    full = MomentumConfig(rng.standard_normal((3, 4))).full()
    base = ev.evaluate(request(4, 1, 0.2, 100.0, full[1:])).value
    for perm in [(1, 0, 2, 3), (3, 2, 1, 0), (2, 3, 0, 1)]:
        permuted = full[list(perm)]
        v = ev.evaluate(request(4, 1, 0.2, 100.0, permuted[1:])).value
        assert v == pytest.approx(base, rel=1e-9)
    ev6 = SchwingerEvaluator(CountertermSeries(G0), 10.0)
    full6 = MomentumConfig(rng.standard_normal((5, 4))).full()
    b6 = ev6.evaluate(request(6, 0, 0.3, 10.0, full6[1:])).value
    for _ in range(3):
        perm = rng.permutation(6)
        assert ev6.evaluate(request(6, 0, 0.3, 10.0, full6[perm][1:])).value == pytest.approx(b6, rel=1e-9)


def test_rotation_invariance(one_loop):
    _, ev = one_loop
    rng = np.random.default_rng(11)
    p = rng.standard_normal((3, 4))
    rot = random_rotation(rng)
    a = ev.evaluate(request(4, 1, 0.1, 100.0, p)).value
    b = ev.evaluate(request(4, 1, 0.1, 100.0, p @ rot.T)).value
    assert b == pytest.approx(a, rel=1e-8)


@pytest.mark.parametrize("n, loops", [(2, 1), (4, 1), (6, 0)])
def test_lambda_derivative_matches_rhs(one_loop, n, loops):
    ct, _ = one_loop
    ev = SchwingerEvaluator(ct, 100.0, lam_rtol=1e-13)
    rng = np.random.default_rng(12)
    p = rng.standard_normal((n - 1, 4))
    lam, h = 0.6, 1e-3

    def val(x):
        return ev.evaluate(request(n, loops, x, 100.0, p)).value

    d1 = (val(lam + h) - val(lam - h)) / (2 * h)
    d2 = (val(lam + h / 2) - val(lam - h / 2)) / h
    rich = (4 * d2 - d1) / 3
    rhs = ev.flow_rhs(request(n, loops, lam, 100.0, p)).total
    assert rich == pytest.approx(rhs, rel=1e-6)


def test_six_point_bound_with_g0_squared():
    rng = np.random.default_rng(13)
    for _ in range(50):
        cfg = MomentumConfig(rng.standard_normal((5, 4)) * 10 ** rng.uniform(-2, 2))
        lam = 10 ** rng.uniform(-3, 0)
        v = schwinger_tree_direct(6, Scales(lam, 1e3), cfg, G0)
        bound = sum(max(lam**2, float(k @ k)) ** -1 for k in channels6(cfg.full()))
        assert abs(v) <= G0**2 * bound * (1 + 1e-12)


def test_unsupported_depth():
    ev = SchwingerEvaluator(CountertermSeries(G0), 10.0)
    for n, loops in [(2, 2), (4, 2), (8, 1), (10, 0)]:
        with pytest.raises(UnsupportedDepth):
            ev.evaluate(request(n, loops, 0.5, 10.0, np.ones((n - 1, 4))))


def test_lambda0_mismatch_rejected():
    ev = SchwingerEvaluator(CountertermSeries(G0), 10.0)
    with pytest.raises(ValueError):
        ev.evaluate(request(4, 0, 0.5, 20.0, np.ones((3, 4))))


# --- counterterms by shooting ------------------------------------------------------------

def test_fix_counterterms_one_loop_values():
    lam0 = 100.0
    ct, info = fix_counterterms(1, RenormalizationScheme(MU, G0, lam0), return_details=True)
    assert ct.b2[0] == pytest.approx(-G0 * (lam0**2 - MU**2) / PI2_32, rel=1e-12)
    assert abs(ct.a[0]) < 1e-9
    b4 = 1.5 * G0**2 * bubble(0.0, MU, lam0)
    assert ct.b4[0] == pytest.approx(b4, rel=1e-8)
    resp = np.array(info["response"])
    assert resp[0, 0] == pytest.approx(1.0) and resp[1, 1] == pytest.approx(1.0, rel=1e-6)


def test_fix_counterterms_without_flow_interval():
    ct = fix_counterterms(1, RenormalizationScheme(2.0, G0, 2.0))
    assert ct.b2[0] == 0.0 and ct.a[0] == 0.0 and ct.b4[0] == 0.0


def test_counterterm_response_is_affine():
    lam0 = 50.0
    cfg = MomentumConfig(np.zeros((3, 4)))
    sc = Scales(MU, lam0, MU)
    base = CountertermSeries(G0, (0.0,), (-1.0,), (0.0,))

    def l4(ct):
        return SchwingerEvaluator(ct, lam0).evaluate(SchwingerRequest(4, 1, sc, cfg)).value

    v0 = l4(base)
    d1 = l4(base.with_order(1, b4=0.3)) - v0
    d2 = l4(base.with_order(1, b4=0.6)) - v0
    assert d2 == pytest.approx(2 * d1, rel=1e-9)
    e1 = l4(base.with_order(1, b2=-0.5)) - v0
    e2 = l4(base.with_order(1, b2=0.0)) - v0
    assert e2 == pytest.approx(2 * e1, rel=1e-9)


def test_fix_counterterms_needs_lower_orders():
    with pytest.raises(ValueError):
        fix_counterterms(2, RenormalizationScheme(MU, G0, 10.0))


# --- probes, caching, concurrency ----------------------------------------------------------

def test_probe_two_point():
    cfg = MomentumConfig([[0.5, 0, 0, 0]])
    rep = uv_ir_probe(2, 1, cfg, [1e-1, 1e-2, 1e-3], [10.0, 100.0])
    vals = np.array(rep["values"])
    np.testing.assert_allclose(vals[:, -1], G0 * (MU**2 - 1e-6) / PI2_32, rtol=1e-7)
    inc = np.abs(np.array(rep["ir_increments"])[0])
    assert inc[1] / inc[0] == pytest.approx(1e-2, rel=1e-3)  # increments scale like lam^2
    assert not any(rep["ir_divergent"])


def test_probe_six_point_increments_vanish():
    rng = np.random.default_rng(14)
    cfg = MomentumConfig(rng.standard_normal((5, 4)))
    rep = uv_ir_probe(6, 0, cfg, [1e-2, 1e-3, 1e-4], [50.0])
    inc = np.abs(np.array(rep["ir_increments"])[0])
    assert inc.max() < 1e-12 * abs(rep["values"][0][-1])


def test_probe_rejects_exceptional():
    with pytest.raises(ValueError):
        uv_ir_probe(4, 0, MomentumConfig([[1, 0, 0, 0], [-1, 0, 0, 0], [0, 1, 0, 0]]), [0.1], [10.0])


def test_disk_cache_roundtrip(tmp_path):
    ct = CountertermSeries(G0)
    req = request(6, 0, 0.4, 10.0, np.arange(20.0).reshape(5, 4) / 10)
    a = SchwingerEvaluator(ct, 10.0, cache_dir=tmp_path).evaluate(req)
    assert len(list(tmp_path.glob("*.json"))) == 1
    b = SchwingerEvaluator(ct, 10.0, cache_dir=tmp_path).evaluate(req)
    assert a == b


def test_concurrent_evaluations_agree(one_loop):
    ct, _ = one_loop
    ev = SchwingerEvaluator(ct, 100.0)
    reqs = [request(4, 1, lam, 100.0, tetrahedral(4.0)[1:]) for lam in (0.1, 0.2, 0.1, 0.2)]
    with ThreadPoolExecutor(4) as pool:
        vals = [r.value for r in pool.map(ev.evaluate, reqs)]
    assert vals[0] == vals[2] and vals[1] == vals[3]


@pytest.mark.slow
def test_six_point_one_loop_property_only():
    lam0 = 20.0
    ct = fix_counterterms(1, RenormalizationScheme(MU, G0, lam0))
    ev = SchwingerEvaluator(ct, lam0, mc_log2=9)
    rng = np.random.default_rng(15)
    p = rng.standard_normal((5, 4))
    r = ev.evaluate(request(6, 1, 0.5, lam0, p))
    assert r.property_only and math.isfinite(r.value)
    rot = random_rotation(rng)
    r2 = ev.evaluate(request(6, 1, 0.5, lam0, p @ rot.T))
    assert r2.value == pytest.approx(r.value, rel=0.05)
