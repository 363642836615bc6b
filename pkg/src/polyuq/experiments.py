"""Batch experiment drivers writing CSV, gnuplot data, summaries and manifests."""
import csv
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_digest
from .estimators import (estimate_error, matched_cost_error, mc_estimate, mc_sample_count,
                         mlmc_estimate, mlmc_sample_counts)
from .exceptions import ConfigError
from .fields import write_field_csv
from .geometry import (build_cartesian_hierarchy, build_refined_hierarchy,
                       cartesian_mesh, load_mesh, voronoi_mesh)
from .problems import (StochasticProblem, deterministic_problem, polynomial_exact_solution,
                       sine_exact_solution, smooth_coefficient_problem, strata_geometry,
                       strata_problem)
from .stochastic import PiecewiseRegionCoefficient, SampleStream
from .vem import assemble, error_norms, get_space, qoi, solve

__all__ = [
    "CSV_COLUMNS",
    "run_experiment",
    "fit_slope",
    "build_problem",
    "build_hierarchy",
    "graded_map",
    "complexity_fit",
]

log = logging.getLogger(__name__)

CSV_COLUMNS = ["method", "p", "L", "level", "M", "N", "cost", "error_h1", "error_qoi",
               "var_level"]
CONVERGENCE_COLUMNS = ["p", "level", "h", "n_dofs", "error_h1", "error_l2", "error_qoi"]


def fit_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    if len(x) < 2:
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])


def _semilog_slope(levels, errors):
    return float(-np.polyfit(np.asarray(levels, float), np.log(np.asarray(errors, float)), 1)[0])


def complexity_fit(costs, basis):
    """Fit ``cost = C * basis`` in log space; returns ``(C, R^2)``.

    The exponent is fixed at one, so ``R^2`` measures how well the
    predicted growth shape explains the measured costs.
    """
    y = np.log(np.asarray(costs, dtype=float))
    b = np.log(np.asarray(basis, dtype=float))
    logc = float(np.mean(y - b))
    ss_res = float(np.sum((y - logc - b) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return float(np.exp(logc)), 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")


def graded_map(a):
    """Increasing map ``s -> (e^{a s} - 1) / (e^a - 1)`` of [0, 1] (identity for ``a = 0``)."""
    a = float(a)
    if abs(a) < 1e-6:
        # second-order series; the quotient underflows for denormal a
        return lambda s: (lambda s: s + 0.5 * a * s * (s - 1.0))(np.asarray(s, dtype=float))
    return lambda s: np.expm1(a * np.asarray(s, dtype=float)) / np.expm1(a)


def _grading(cfg, p):
    g = cfg.mesh.grading
    if isinstance(g, dict):
        if p not in g:
            raise ConfigError(f"mesh.grading has no entry for p={p}")
        g = g[p]
    return None if g is None else (graded_map(g[0]), graded_map(g[1]))


def build_problem(cfg):
    c = cfg.coefficient
    if c.model == "smooth-kl":
        return smooth_coefficient_problem()
    if c.model == "constant":
        return deterministic_problem(c.alpha)
    if c.polygons is not None:
        if c.ranges is None:
            raise ConfigError("custom region polygons need explicit ranges")
        coef = PiecewiseRegionCoefficient(c.polygons, c.ranges)
        pts = np.vstack([np.asarray(r, float) for r in c.polygons])
        length = float(pts[:, 0].max() - pts[:, 0].min())
        return StochasticProblem(coef, 1.0, 1.0 / length, name="regions")
    return strata_problem(c.regime, c.ranges)


def build_hierarchy(cfg, n_levels, p=None):
    """Hierarchy with ``n_levels`` levels for the configured mesh source and order ``p``."""
    m = cfg.mesh
    if cfg.coefficient.model == "regions":
        if m.source == "files":
            coarse = load_mesh(m.files[0])
        else:
            _, coarse = strata_geometry()
        return build_refined_hierarchy(coarse, n_levels)
    if m.source == "cartesian":
        return build_cartesian_hierarchy(n_levels, m.n0, grading=_grading(cfg, p))
    if m.source == "files":
        return build_refined_hierarchy(load_mesh(m.files[0]), n_levels)
    raise ConfigError("stochastic experiments need a cartesian or file mesh source")


class _Writer:
    def __init__(self, out):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)

    def csv(self, name, columns, rows):
        with open(self.out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(r.get(c, "")) for c in columns])

    def dat(self, name, columns, rows):
        with open(self.out / name, "w") as fh:
            fh.write("# " + " ".join(columns) + "\n")
            for r in rows:
                fh.write(" ".join(_fmt(r.get(c, "nan")) for c in columns) + "\n")

    def json(self, name, data):
        with open(self.out / name, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _json_default(v):
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v).__name__)


def _estimator_rows(res, L, err_h1, err_q):
    rows = []
    for rec in res.levels:
        rows.append(dict(method=res.method, p=res.p, L=L, level=rec.level if res.method == "mlmc"
                         else L, M=rec.M, N=rec.N, cost=rec.M * rec.N, error_h1="",
                         error_qoi="", var_level=rec.var_qoi if res.target == "qoi"
                         else rec.var_h1))
    rows.append(dict(method=res.method, p=res.p, L=L, level="all", M=sum(res.counts),
                     N=res.dofs[-1], cost=res.cost, error_h1=err_h1, error_qoi=err_q,
                     var_level=""))
    return rows


def _stream(cfg, *parts):
    return SampleStream(cfg.seed, "/".join([cfg.experiment] + [str(p) for p in parts]))


def _counts(cfg, p, hierarchy, L):
    return mlmc_sample_counts(p, hierarchy.level_sizes[:L], cfg.epsilon, cfg.target,
                              cfg.per_p("multiplier", p), cfg.max_count)


def _solve_kwargs(cfg):
    return dict(rel_tol=cfg.rel_tol, threads=cfg.threads, preconditioner=cfg.preconditioner)


# -- deterministic convergence ---------------------------------------------------

def _convergence_meshes(cfg, p):
    m = cfg.mesh
    if m.source == "cartesian":
        lo, hi = cfg.per_p("min_level", p), cfg.per_p("max_level", p)
        g = _grading(cfg, p)
        return [(lv, cartesian_mesh(m.n0 * 2 ** (lv - 1), grading=g)) for lv in range(lo, hi + 1)]
    if m.source == "voronoi":
        return [(i + 1, voronoi_mesh(n, seed=cfg.seed)) for i, n in enumerate(m.seeds)]
    return [(i + 1, load_mesh(f)) for i, f in enumerate(m.files)]


def _patch_row(mesh, p):
    """Polynomial exact solution of degree p with interpolated boundary data."""
    coeffs = {(a, d - a): 0.3 + 0.1 * a - 0.05 * d for d in range(p + 1) for a in range(d + 1)}
    ex = polynomial_exact_solution(coeffs)
    sol = solve(assemble(mesh, p, 1.0, ex.source, boundary_values=ex.value), method="direct")
    interp = get_space(mesh, p).interpolate(ex.value)
    return dict(dof_error=float(np.abs(sol.dofs - interp).max()),
                qoi_error=abs(qoi(sol, 1.0) - ex.qoi))


def run_qoi_convergence(cfg, writer):
    ex = sine_exact_solution(4.0)
    rows, summary = [], {"slopes": {}, "patch": {}, "pass": {}}
    tol = cfg.tolerance("slope", 0.25)
    tol_rates = cfg.tolerance("h1_slope", 0.2)
    for p in cfg.p:
        meshes = _convergence_meshes(cfg, p)
        pr = []
        for lv, mesh in meshes:
            t0 = time.perf_counter()
            sol = solve(assemble(mesh, p, 1.0, ex.source), rel_tol=cfg.rel_tol,
                        method=cfg.solver)
            h1, l2 = error_norms(sol, ex.value, ex.gradient)
            eq = abs(ex.qoi - qoi(sol, 1.0))
            pr.append(dict(p=p, level=lv, h=mesh.h, n_dofs=sol.space.n_free, error_h1=h1,
                           error_l2=l2, error_qoi=eq))
            log.info("p=%d level=%d h=%.4g H1=%.3e L2=%.3e Q=%.3e (%.1fs)", p, lv, mesh.h, h1,
                     l2, eq, time.perf_counter() - t0)
        rows.extend(pr)
        hs = [r["h"] for r in pr]
        s = {k: fit_slope(hs, [r[f"error_{k}"] for r in pr]) for k in ("h1", "l2", "qoi")}
        summary["slopes"][p] = s
        summary["patch"][p] = _patch_row(meshes[0][1], p)
        summary["pass"][p] = {
            "qoi": abs(s["qoi"] - 2 * p) <= tol,
            "h1": abs(s["h1"] - p) <= tol_rates,
            "l2": abs(s["l2"] - (p + 1)) <= tol_rates,
            "patch": max(summary["patch"][p].values()) <= 1e-8,
        }
    writer.csv("convergence.csv", CONVERGENCE_COLUMNS, rows)
    writer.dat("convergence.dat", CONVERGENCE_COLUMNS, rows)
    return summary


# -- stochastic studies ------------------------------------------------------------

def _reference(cfg, problem, p, L_ref):
    H = build_hierarchy(cfg, L_ref, p)
    ref = mlmc_estimate(problem, H, p, _counts(cfg, p, H, L_ref), _stream(cfg, f"p{p}", "ref"),
                        cfg.target, **_solve_kwargs(cfg))
    return H, ref


def _mlmc_series(cfg, problem, p, H, ref, L_range):
    rows, series = [], []
    for L in L_range:
        res = mlmc_estimate(problem, H, p, _counts(cfg, p, H, L), _stream(cfg, f"p{p}", f"L{L}"),
                            cfg.target, **_solve_kwargs(cfg))
        e1, eq = estimate_error(res, ref, H)
        rows.extend(_estimator_rows(res, L, e1, eq))
        series.append(dict(L=L, h=float(H.level_sizes[L - 1]), cost=res.cost,
                           cost_two_solve=res.cost_two_solve, error_h1=e1, error_qoi=eq,
                           counts=list(res.counts)))
        log.info("mlmc p=%d L=%d cost=%d H1=%.3e Q=%.3e", p, L, res.cost, e1, eq)
    return rows, series


def _mc_series(cfg, problem, p, H, ref, L_range):
    rows, series = [], []
    for L in L_range:
        mesh = H.mesh(L)
        M = mc_sample_count(p, mesh.h, cfg.target, cfg.per_p("multiplier", p), cfg.max_count)
        res = mc_estimate(problem, mesh, p, M, _stream(cfg, "mc", f"p{p}", f"L{L}"), cfg.target,
                          **_solve_kwargs(cfg))
        e1, eq = estimate_error(res, ref, H)
        rows.extend(_estimator_rows(res, L, e1, eq))
        series.append(dict(L=L, h=float(mesh.h), cost=res.cost, error_h1=e1, error_qoi=eq,
                           counts=[M]))
        log.info("mc p=%d L=%d M=%d cost=%d H1=%.3e Q=%.3e", p, L, M, res.cost, e1, eq)
    return rows, series


def _slopes(series):
    hs = [s["h"] for s in series]
    Ls = [s["L"] for s in series]
    e1 = [s["error_h1"] for s in series]
    eq = [s["error_qoi"] for s in series]
    return {"h1_vs_h": fit_slope(hs, e1), "qoi_vs_h": fit_slope(hs, eq),
            "h1_vs_L_semilog": _semilog_slope(Ls, e1), "qoi_vs_L_semilog": _semilog_slope(Ls, eq)}


def _dat_rows(series, method, p):
    return [dict(method=method, p=p, L=s["L"], h=s["h"], cost=s["cost"], error_h1=s["error_h1"],
                 error_qoi=s["error_qoi"]) for s in series]


DAT_COLUMNS = ["method", "p", "L", "h", "cost", "error_h1", "error_qoi"]


def _stochastic_study(cfg, writer, with_mlmc, with_mc):
    problem = build_problem(cfg)
    rows, dat, summary = [], [], {"slopes": {}, "series": {}}
    for p in cfg.p:
        lo, hi = cfg.per_p("min_level", p), cfg.per_p("max_level", p)
        mc_hi = cfg.per_p("mc_max_level", p) if cfg.mc_max_level is not None else hi
        L_ref = (hi if with_mlmc else mc_hi) + 1
        H, ref = _reference(cfg, problem, p, L_ref)
        summary["series"][p] = {"reference": {"L": L_ref, "counts": list(ref.counts),
                                              "qoi": ref.qoi}}
        if with_mlmc:
            r, s = _mlmc_series(cfg, problem, p, H, ref, range(lo, hi + 1))
            rows += r
            dat += _dat_rows(s, "mlmc", p)
            summary["series"][p]["mlmc"] = s
            summary["slopes"].setdefault(p, {})["mlmc"] = _slopes(s)
        if with_mc:
            r, s = _mc_series(cfg, problem, p, H, ref, range(lo, mc_hi + 1))
            rows += r
            dat += _dat_rows(s, "mc", p)
            summary["series"][p]["mc"] = s
            summary["slopes"].setdefault(p, {})["mc"] = _slopes(s)
    writer.csv("results.csv", CSV_COLUMNS, rows)
    writer.dat("results.dat", DAT_COLUMNS, dat)
    return summary


def run_mc_convergence(cfg, writer):
    return _stochastic_study(cfg, writer, with_mlmc=False, with_mc=True)


def run_mlmc_convergence(cfg, writer):
    summary = _stochastic_study(cfg, writer, with_mlmc=True, with_mc=cfg.mc_max_level is not None)
    summary["pass"] = {}
    for p, sl in summary["slopes"].items():
        if cfg.target == "solution":
            slope, rate, tol = sl["mlmc"]["h1_vs_h"], p, 0.3 if p == 1 else 0.4
        else:
            slope, rate, tol = sl["mlmc"]["qoi_vs_h"], 2 * p, 0.5
        summary["pass"][p] = abs(slope - rate) <= cfg.tolerance("slope", tol)
    return summary


def run_cost_accuracy(cfg, writer):
    summary = _stochastic_study(cfg, writer, with_mlmc=True, with_mc=True)
    factor = cfg.tolerance("dominance", 3.0)
    summary["matched"] = {}
    for p, ser in summary["series"].items():
        mlmc, mc = ser["mlmc"][-1], ser["mc"]
        mc_err = matched_cost_error([s["cost"] for s in mc], [s["error_h1"] for s in mc],
                                    mlmc["cost"])
        summary["matched"][p] = {"cost": mlmc["cost"], "mlmc_error_h1": mlmc["error_h1"],
                                 "mc_error_h1": mc_err, "ratio": mc_err / mlmc["error_h1"],
                                 "pass": mlmc["error_h1"] <= mc_err / factor}
    return summary


def run_samples_table(cfg, writer):
    rows, table = [], {}
    for p in cfg.p:
        hi = cfg.per_p("max_level", p)
        lo = cfg.per_p("min_level", p)
        H = build_hierarchy(cfg, hi, p)
        table[p] = {}
        for L in range(lo, hi + 1):
            counts = _counts(cfg, p, H, L)
            dofs = [H.dof_count(lv, p) for lv in range(1, L + 1)]
            for lv, (m, n) in enumerate(zip(counts, dofs), start=1):
                rows.append(dict(method="mlmc", p=p, L=L, level=lv, M=m, N=n, cost=m * n))
            cost = int(sum(m * n for m, n in zip(counts, dofs)))
            rows.append(dict(method="mlmc", p=p, L=L, level="all", M=sum(counts), N=dofs[-1],
                             cost=cost))
            M = mc_sample_count(p, H.level_sizes[L - 1], cfg.target,
                                cfg.per_p("multiplier", p), cfg.max_count)
            rows.append(dict(method="mc", p=p, L=L, level="all", M=M, N=dofs[-1],
                             cost=M * dofs[-1]))
            table[p][L] = {"mlmc": counts, "mc": M, "mlmc_cost": cost, "mc_cost": M * dofs[-1],
                           "dofs": dofs}
    writer.csv("results.csv", CSV_COLUMNS, rows)
    writer.dat("samples.dat", ["method", "p", "L", "level", "M", "N", "cost"], rows)
    return {"table": table, "complexity": _complexity(cfg, table)}


def _complexity(cfg, table):
    """Fit MLMC cost against ``N_L L^(3+2 eps)`` (p = 1) or ``N_L^2`` (p >= 2), over L >= 2."""
    out = {}
    for p, rows in table.items():
        Ls = [L for L in sorted(rows) if L >= 2]
        if len(Ls) < 3:
            continue
        cost = [rows[L]["mlmc_cost"] for L in Ls]
        NL = np.array([rows[L]["dofs"][-1] for L in Ls], dtype=float)
        if p == 1:
            model, basis = "N_L*L^(3+2eps)", NL * np.array(Ls, float) ** (3 + 2 * cfg.epsilon)
        else:
            model, basis = "N_L^2", NL ** 2
        C, r2 = complexity_fit(cost, basis)
        out[p] = {"levels": Ls, "model": model, "C": C, "r2": r2, "pass": r2 >= 0.98}
    return out


def _snapshot_points(mesh):
    """Element vertices and centroids, tagged with their element."""
    pts, els = [], []
    for k, e in enumerate(mesh.elements):
        pts.append(mesh.vertices[e])
        pts.append(mesh.centroids[k][None])
        els.append(np.full(len(e) + 1, k))
    return np.vstack(pts), np.concatenate(els)


def run_validate_regions(cfg, writer):
    if cfg.coefficient.model != "regions":
        raise ConfigError("validate-regions needs coefficient.model: regions")
    rows, dat, summary = [], [], {"regimes": {}}
    tol_pw = cfg.tolerance("pointwise", 5e-3)
    tol_q = cfg.tolerance("qoi", 1e-3)
    configured = cfg.coefficient.regime
    for regime in cfg.regimes:
        cfg.coefficient.regime = regime
        try:
            problem = build_problem(cfg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        finally:
            cfg.coefficient.regime = configured
        for p in cfg.p:
            L = cfg.per_p("max_level", p)
            H = build_hierarchy(cfg, L, p)
            stream = _stream(cfg, regime, f"p{p}")
            mult = cfg.per_p("multiplier", p)
            counts = mlmc_sample_counts(p, H.level_sizes, cfg.epsilon, cfg.target, mult,
                                        cfg.max_count)
            M = mc_sample_count(p, H.level_sizes[-1], cfg.target, mult, cfg.max_count)
            ml = mlmc_estimate(problem, H, p, counts, stream, cfg.target, **_solve_kwargs(cfg))
            mc = mc_estimate(problem, H.mesh(L), p, M, stream, cfg.target, **_solve_kwargs(cfg))
            pts, els = _snapshot_points(H.mesh(L))
            v_ml = ml.field.evaluate(pts, els)
            v_mc = mc.field.evaluate(pts, els)
            rel = np.abs(v_mc - v_ml) / np.abs(v_ml).max()
            dq = abs(mc.qoi - ml.qoi)
            for res in (ml, mc):
                rows.extend(_estimator_rows(res, L, "", ""))
            write_field_csv(ml.field, writer.out / f"field_mlmc_{regime}_p{p}.csv")
            write_field_csv(mc.field, writer.out / f"field_mc_{regime}_p{p}.csv")
            for x, k, d, a, b in zip(pts, els, rel, v_mc, v_ml):
                dat.append(dict(regime=regime, p=p, x=x[0], y=x[1], element=k, mc=a, mlmc=b,
                                rel_discrepancy=d))
            summary["regimes"].setdefault(regime, {})[p] = {
                "counts_mlmc": counts, "count_mc": M, "max_pointwise": float(rel.max()),
                "qoi_mlmc": ml.qoi, "qoi_mc": mc.qoi, "qoi_discrepancy": dq,
                "pass": bool(rel.max() <= tol_pw and dq <= tol_q)}
            log.info("%s p=%d pointwise=%.3e qoi |MC-MLMC|=%.3e", regime, p, rel.max(), dq)
    writer.csv("results.csv", CSV_COLUMNS, rows)
    writer.dat("discrepancy.dat", ["regime", "p", "x", "y", "element", "mc", "mlmc",
                                   "rel_discrepancy"], dat)
    return summary


RUNNERS = {
    "qoi-convergence": run_qoi_convergence,
    "mc-convergence": run_mc_convergence,
    "mlmc-convergence": run_mlmc_convergence,
    "samples-table": run_samples_table,
    "cost-accuracy": run_cost_accuracy,
    "validate-regions": run_validate_regions,
}


def run_experiment(cfg: ExperimentConfig, out=None):
    """Run the configured experiment; returns the summary written to ``summary.json``."""
    writer = _Writer(out if out is not None else cfg.output)
    manifest = {"experiment": cfg.experiment, "seed": cfg.seed,
                "config_sha256": config_digest(cfg), "version": f"v{__version__}",
                "config": cfg.to_dict()}
    writer.json("manifest.json", manifest)
    summary = RUNNERS[cfg.experiment](cfg, writer)
    summary = {"experiment": cfg.experiment, **summary}
    writer.json("summary.json", summary)
    return summary
