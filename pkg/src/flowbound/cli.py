"""Command-line front end: ``flowbound {trees,bound,flow,cov,check} ...``.

Every run writes ``manifest.json`` (command line, config hash, seed, package
versions) next to its outputs in ``--out``. Exit status is 0 iff all checks
requested by the command pass.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import logging
import math
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bound import ratio_check, tree_sum
from .covariance import QuadratureSpec, c_hat, d_c_hat_d_lambda, verify_loop_lemma
from .flow import (
    CountertermSeries,
    RenormalizationScheme,
    SchwingerEvaluator,
    SchwingerRequest,
    UnsupportedDepth,
    renormalized_series,
    tree_value,
    uv_ir_probe,
)
from .kinematics import MomentumConfig, Scales, is_exceptional
from .trees import MAX_ENUM_N, TreeClassParams, enumerate_trees, shapes

log = logging.getLogger("flowbound")

CLI_MAX_N = 12  # accepted on the command line; enumeration itself stops at MAX_ENUM_N


class CheckFailed(Exception):
    pass


# --- helpers -----------------------------------------------------------------

def _versions() -> dict:
    import numba
    import scipy

    return {"flowbound": __version__, "python": sys.version.split()[0], "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _write_manifest(out: Path, args, argv, extra=None):
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    blob = json.dumps(cfg, sort_keys=True, default=str)
    manifest = {
        "command": ["flowbound", *argv],
        "config": json.loads(blob),
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "seed": cfg.get("seed"),
        "versions": _versions(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _dump(path: Path, data):
    path.write_text(json.dumps(data, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


@contextlib.contextmanager
def _pool(jobs: int):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            yield ex
    else:
        yield None


def _map(pool, fn, items):
    return list(pool.map(fn, items)) if pool is not None else [fn(x) for x in items]


def _parse_range(text: str) -> tuple[float, float]:
    lo, _, hi = text.partition("..")
    if not hi:
        raise argparse.ArgumentTypeError("expected LO..HI")
    return float(lo), float(hi)


def _parse_theta(text: str) -> tuple[float, ...]:
    text = text.strip("() ")
    return tuple(float(t) for t in text.split(",") if t.strip()) if text else ()


def _load_list(path) -> list[float]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data.get("lambdas", data.get("values"))
    return [float(x) for x in data]


def _symmetric_config(n: int, s: float) -> MomentumConfig:
    """Simplex directions in 4D (``p_i . p_j = -s/(n-1)``), scaled so ``p_i^2 = s``; needs n <= 5."""
    if n > 5:
        raise ValueError("symmetric configurations exist for n <= 5 in four dimensions")
    e = np.eye(n) - 1.0 / n
    u, sv, _ = np.linalg.svd(e)
    vecs = u[:, : n - 1] * sv[: n - 1]
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    full = np.zeros((n, 4))
    full[:, : n - 1] = vecs * math.sqrt(s)
    return MomentumConfig.from_full(full)


# --- trees -------------------------------------------------------------------

def cmd_trees_enum(args) -> int:
    out = Path(args.out)
    if args.n > MAX_ENUM_N:
        raise ValueError(f"N={args.n} exceeds the enumeration limit N <= {MAX_ENUM_N}")
    t0 = time.perf_counter()
    cls = enumerate_trees(TreeClassParams(args.n, args.r), strict_d=not args.relaxed_d)
    elapsed = time.perf_counter() - t0
    groups = shapes(cls) if len(cls) <= args.max_shapes_trees else []
    with open(out / "shapes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["shape_id", "orbit_size", "n_lines", "representative"])
        for i, (rep, orbit) in enumerate(groups):
            w.writerow([i, orbit, rep.n_lines, rep.to_json()])
    if not args.no_trees:
        with open(out / "trees.json", "w") as fh:
            fh.write('{"n_ext": %d, "r": %d, "trees": [' % (args.n, args.r))
            for i, t in enumerate(cls):
                fh.write(("," if i else "") + "\n" + json.dumps(t.to_dict()["splits"]))
            fh.write("\n]}\n")
    summary = {"n_ext": args.n, "r": args.r, "count": len(cls), "shapes": len(groups) if groups else None,
               "seconds": elapsed}
    _dump(out / "summary.json", summary)
    print(f"N={args.n} R={args.r}: {len(cls)} trees" + (f", {len(groups)} shapes" if groups else ""))
    return 0


def cmd_trees_check(args) -> int:
    out = Path(args.out)
    n = args.n
    if n > MAX_ENUM_N:
        raise ValueError(f"N={n} exceeds the enumeration limit N <= {MAX_ENUM_N}")
    strict = not args.relaxed_d
    classes = [enumerate_trees(TreeClassParams(n, r), strict_d=strict) for r in range(args.r_max + 1)]
    rows, failures = [], []
    sat = 3 * n - 2
    first_stable = None
    for r in range(args.r_max + 1):
        nested = r == args.r_max or classes[r].issubset(classes[r + 1])
        rows.append({"r": r, "count": len(classes[r]), "nested_in_next": nested})
        if not nested:
            failures.append(f"nestedness fails at R={r}")
    for r in range(args.r_max + 1):
        if all(classes[q] == classes[r] for q in range(r, args.r_max + 1)):
            first_stable = r
            break
    if args.r_max >= sat:
        for r in range(sat, args.r_max + 1):
            if classes[r] != classes[sat]:
                failures.append(f"saturation fails: class at R={r} differs from R={sat}")
    with open(out / "counts.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["r", "count", "nested_in_next"])
        w.writeheader()
        w.writerows(rows)
    summary = {"n_ext": n, "r_max": args.r_max, "saturation_threshold": sat,
               "stable_from_r": first_stable, "saturation_confirmed": args.r_max >= sat and not any(
                   f.startswith("saturation") for f in failures),
               "failures": failures}
    _dump(out / "check.json", summary)
    print(f"N={n}: class sizes stable from R={first_stable}; saturation at R={sat} "
          + ("confirmed" if summary["saturation_confirmed"] else "not checked (r-max too small)"
             if args.r_max < sat else "FAILED"))
    if failures:
        raise CheckFailed("; ".join(failures))
    return 0


# --- bound -------------------------------------------------------------------

def cmd_bound_eval(args) -> int:
    cfg = MomentumConfig.load(args.momenta)
    b = tree_sum(TreeClassParams(cfg.n_ext, 2 * args.l), cfg, Scales(args.lam, max(args.lam, args.lam0), args.mu),
                 include_p0=args.include_p0)
    res = {"tree_sum": b.tree_sum, "log_arg_momentum": b.log_arg_momentum, "log_arg_scale": b.log_arg_scale,
           "eta": b.eta, "kappa": b.kappa, "n_trees": int(b.factors.size)}
    _dump(Path(args.out) / "bound.json", res)
    print(json.dumps(res))
    return 0


def _l60_job(item):
    p, lam, lam0, g0 = item
    cfg = MomentumConfig(p)
    return tree_value(cfg.full(), lam, lam0, g0)


def _flow_job(item):
    n, loops, p, lam, lam0, mu, ct = item
    ev = SchwingerEvaluator(CountertermSeries.from_dict(ct), lam0)
    cfg = MomentumConfig(p)
    return ev.evaluate(SchwingerRequest(n, loops, Scales(lam, lam0, mu), cfg)).value


def _bound_samples_l0(args, rng):
    lams = _load_list(args.sweep) if args.sweep else list(np.logspace(-3, 0, 5))
    items = []
    for lam in lams:
        for _ in range(args.samples):
            scale = 10 ** rng.uniform(-2, 2)
            p = rng.standard_normal((args.n - 1, 4)) * scale
            if rng.uniform() < args.exceptional_fraction:
                p[1] = -p[0]  # exact cancellation
            items.append((p, lam))
    return items


def cmd_bound_check(args) -> int:
    out = Path(args.out)
    rng = np.random.default_rng(args.seed)
    if args.l == 0:
        if args.n % 2 or args.n < 4 or args.n > 8:
            raise CheckFailed("L=0 bound checks support even N in 4..8")
        samples = _bound_samples_l0(args, rng)
        with _pool(args.jobs) as pool:
            vals = _map(pool, _l60_job, [(p, lam, args.lam0, args.g0) for p, lam in samples])
        values = [(MomentumConfig(p), lam, v) for (p, lam), v in zip(samples, vals)]
        fit = ratio_check(values, args.n, 0, args.mu)
        max_ratio = max(r["ratio"] for r in fit.rows)
        report = fit.to_dict() | {"max_ratio": max_ratio}
        ok = True
        if args.n == 6:
            report["ratio_limit"] = args.g0**2
            ok = max_ratio <= args.g0**2 * (1 + 1e-12)
    elif args.l == 1 and args.n == 4:
        lo, hi = args.scale_sweep
        ss = np.logspace(math.log10(lo), math.log10(hi), args.points)
        lams = _load_list(args.sweep) if args.sweep else [1e-3, 1e-2, 1e-1]
        scheme = RenormalizationScheme(args.mu, args.g0, args.lam0)
        ct = renormalized_series(1, scheme)
        items = [(4, 1, _symmetric_config(4, s).external, lam, args.lam0, args.mu, ct.to_dict())
                 for lam in lams for s in ss]
        with _pool(args.jobs) as pool:
            vals = _map(pool, _flow_job, items)
        values = [(MomentumConfig(it[2]), it[3], v) for it, v in zip(items, vals)]
        fit = ratio_check(values, 4, 1, args.mu)
        report = fit.to_dict() | {"counterterms": ct.to_dict(), "threshold": args.threshold}
        ok = fit.max_residual <= args.threshold
    else:
        raise CheckFailed("bound checks are provided for (N, L) = (even N <= 8, 0) and (4, 1)")
    fit.write_csv(out / "bound_samples.csv")
    report["pass"] = bool(ok)
    _dump(out / "bound_fit.json", report)
    print(f"bound check N={args.n} L={args.l}: {'PASS' if ok else 'FAIL'} "
          f"(max residual {fit.max_residual:.4g}, coefficients {np.round(fit.coefficients, 6).tolist()})")
    if not ok:
        raise CheckFailed("bound ratio check failed")
    return 0


# --- flow --------------------------------------------------------------------

def _counterterms(args) -> CountertermSeries:
    if args.l == 0:
        return CountertermSeries(args.g0)
    return renormalized_series(args.l, RenormalizationScheme(args.mu, args.g0, args.lam0))


def cmd_flow_eval(args) -> int:
    cfg = MomentumConfig.load(args.momenta)
    if cfg.n_ext != args.n:
        raise CheckFailed(f"momentum file has n_ext={cfg.n_ext}, --n is {args.n}")
    if args.n % 2:
        warnings.warn(f"odd N={args.n}: the function vanishes identically")
    ct = _counterterms(args) if args.n % 2 == 0 else CountertermSeries(args.g0)
    kw = {"mc_log2": max(4, int(math.ceil(math.log2(args.mc_samples))))} if args.mc_samples else {}
    ev = SchwingerEvaluator(ct, args.lam0, **kw)
    res = ev.evaluate(SchwingerRequest(args.n, args.l, Scales(args.lam, args.lam0, args.mu), cfg))
    d = res.to_dict()
    _dump(Path(args.out) / "flow.json", d)
    print(json.dumps({k: d[k] for k in ("value", "linear_part", "bilinear_part", "quadrature_error")}))
    return 0


def cmd_flow_probe(args) -> int:
    cfg = MomentumConfig.load(args.momenta)
    if is_exceptional(cfg):
        raise CheckFailed("the probe needs nonexceptional momenta")
    rep = uv_ir_probe(args.n, args.l, cfg, args.lambdas, args.lambda0s, mu=args.mu, g0=args.g0)
    _dump(Path(args.out) / "probe.json", rep)
    print(json.dumps({"ir_divergent": rep["ir_divergent"], "uv_divergent": rep["uv_divergent"]}))
    if any(rep["ir_divergent"]) or any(rep["uv_divergent"]):
        raise CheckFailed("divergent increments")
    return 0


# --- covariance ----------------------------------------------------------------

def cmd_cov_eval(args) -> int:
    sc = Scales(args.lam, args.lam0)
    p = np.array(args.p, dtype=float)
    res = {"c_hat": c_hat(p, sc), "d_c_hat_d_lambda": d_c_hat_d_lambda(p, sc)}
    _dump(Path(args.out) / "cov.json", res)
    print(json.dumps(res))
    return 0


def cmd_loop_lemma(args) -> int:
    out = Path(args.out)
    menus = args.theta or [(2.0,)]
    scales = [Scales(lam, max(lam, args.lam0)) for lam in (args.lam or [1.0])]
    fixed = [np.zeros(4)] if args.k is not None and args.k == 0 else None
    samples = 1 if fixed else args.samples
    with _pool(args.jobs) as pool:
        rep = verify_loop_lemma(samples, menus, scales, seed=args.seed, fixed_k=fixed,
                                quad=QuadratureSpec(rel_tol=args.rel_tol), pool=pool)
    rep.write_csv(out / "loop_lemma.csv")
    summary = {"sup_ratio": rep.sup_ratio, "doubling_change": rep.doubling_change}
    ok = True
    if fixed:
        expected = 2 * math.pi**2 * (1 - math.exp(-1.0))
        checks = {m: abs(v - expected) for m, v in rep.sup_ratio.items() if m == "(2)"}
        summary["expected_theta2_k0"] = expected
        ok = all(d <= args.abs_tol for d in checks.values())
    else:
        ok = rep.stable(args.doubling_threshold)
    summary["pass"] = ok
    _dump(out / "loop_lemma.json", summary)
    for m, v in rep.sup_ratio.items():
        print(f"theta={m}: sup ratio {v:.6f} (doubling change {rep.doubling_change[m]:.2e})")
    if not ok:
        raise CheckFailed("loop-lemma check failed")
    return 0


# --- parser ------------------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--seed", type=int, default=0)


def _scales_args(p, lam=True):
    if lam:
        p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--lambda0", dest="lam0", type=float, default=1e3)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--g0", type=float, default=1.0)


def _n_arg(p):
    def n_type(text):
        n = int(text)
        if n > CLI_MAX_N:
            raise argparse.ArgumentTypeError(f"N must be <= {CLI_MAX_N}")
        return n
    p.add_argument("--n", type=n_type, required=True)


def _bound_check_args(p):
    _n_arg(p)
    p.add_argument("--l", type=int, default=0)
    p.add_argument("--sweep", help="JSON list of lambda values")
    p.add_argument("--scale-sweep", type=_parse_range, default=(10.0, 1e4), metavar="LO..HI")
    p.add_argument("--points", type=int, default=7)
    p.add_argument("--samples", type=int, default=100, help="random configurations per lambda (L=0)")
    p.add_argument("--exceptional-fraction", type=float, default=0.1)
    p.add_argument("--threshold", type=float, default=0.05)
    _scales_args(p, lam=False)
    p.set_defaults(func=cmd_bound_check)


def _loop_lemma_args(p):
    p.add_argument("--theta", type=_parse_theta, action="append", help="weights, e.g. 2 or 1,1 (repeatable)")
    p.add_argument("--k", type=float, default=None, help="0 fixes all shifts at k = 0")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--lam", type=float, action="append")
    p.add_argument("--lambda0", dest="lam0", type=float, default=1e3)
    p.add_argument("--rel-tol", type=float, default=1e-6)
    p.add_argument("--abs-tol", type=float, default=1e-4)
    p.add_argument("--doubling-threshold", type=float, default=0.05)
    p.set_defaults(func=cmd_loop_lemma)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flowbound", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="group", required=True)

    trees = sub.add_parser("trees").add_subparsers(dest="cmd", required=True)
    p = trees.add_parser("enum", help="enumerate a tree class")
    _common(p)
    _n_arg(p)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--relaxed-d", action="store_true", help="count-only reading of condition d")
    p.add_argument("--no-trees", action="store_true", help="skip trees.json")
    p.add_argument("--max-shapes-trees", type=int, default=200000)
    p.set_defaults(func=cmd_trees_enum)
    p = trees.add_parser("check", help="nestedness and saturation")
    _common(p)
    _n_arg(p)
    p.add_argument("--r-max", type=int, required=True)
    p.add_argument("--relaxed-d", action="store_true")
    p.set_defaults(func=cmd_trees_check)

    bound = sub.add_parser("bound").add_subparsers(dest="cmd", required=True)
    p = bound.add_parser("eval")
    _common(p)
    p.add_argument("--momenta", required=True)
    p.add_argument("--l", type=int, default=0)
    p.add_argument("--include-p0", action="store_true")
    _scales_args(p)
    p.set_defaults(func=cmd_bound_eval)
    p = bound.add_parser("check")
    _common(p)
    _bound_check_args(p)

    flow = sub.add_parser("flow").add_subparsers(dest="cmd", required=True)
    p = flow.add_parser("eval")
    _common(p)
    _n_arg(p)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--momenta", required=True)
    p.add_argument("--mc-samples", type=int, default=None)
    _scales_args(p)
    p.set_defaults(func=cmd_flow_eval)
    p = flow.add_parser("probe")
    _common(p)
    _n_arg(p)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--momenta", required=True)
    p.add_argument("--lambdas", type=float, nargs="+", default=[1e-1, 1e-2, 1e-3])
    p.add_argument("--lambda0s", type=float, nargs="+", default=[1e2, 1e3])
    _scales_args(p, lam=False)
    p.set_defaults(func=cmd_flow_probe)

    cov = sub.add_parser("cov").add_subparsers(dest="cmd", required=True)
    p = cov.add_parser("eval")
    _common(p)
    p.add_argument("--p", type=float, nargs=4, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--lambda0", dest="lam0", type=float, default=math.inf)
    p.set_defaults(func=cmd_cov_eval)
    p = cov.add_parser("loop-lemma")
    _common(p)
    _loop_lemma_args(p)

    check = sub.add_parser("check").add_subparsers(dest="cmd", required=True)
    p = check.add_parser("bound")
    _common(p)
    _bound_check_args(p)
    p = check.add_parser("loop-lemma")
    _common(p)
    _loop_lemma_args(p)
    p = check.add_parser("probe")
    _common(p)
    _n_arg(p)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--momenta", required=True)
    p.add_argument("--lambdas", type=float, nargs="+", default=[1e-1, 1e-2, 1e-3])
    p.add_argument("--lambda0s", type=float, nargs="+", default=[1e2, 1e3])
    _scales_args(p, lam=False)
    p.set_defaults(func=cmd_flow_probe)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out, args, argv)
    try:
        return args.func(args)
    except CheckFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (UnsupportedDepth, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
