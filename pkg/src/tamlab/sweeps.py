"""Reproducible sweep experiments with CSV records, SVG figures and summaries.

Every grid point is an independent task whose random stream is derived from
``(master seed, grid indices)``.  Tasks run in a bounded process pool with
BLAS pinned to one thread, and results are collected in grid order, so
``records.csv`` is byte-identical for any worker count.  Wall times go to a
separate ``timings.csv`` because they are not reproducible.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from threadpoolctl import threadpool_limits

from . import svg
from .cmm import percentile_cdf_theory, scan_point
from .config import RunConfig
from .ensemble import derive_seed, sample_instance
from .objective import TamConfig
from .phase import TOP1_CONSTANT, alpha_c, classify_phase, sat_profiles
from .scalar import ScalarParams, channel_cdfs, kappa_r, solve_saddle
from .solver import SolveOptions, minimize_ce, minimize_tam
from .special import normal_cdf

log = logging.getLogger(__name__)

SOLVER_ERRORS = (ValueError, RuntimeError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError)


class NumericalFailure(RuntimeError):
    """A required (non-sweep) computation failed."""


# ---------------------------------------------------------------------------
# CSV and execution plumbing


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "%.17g" % v if math.isfinite(v) else ""
    return str(v)


def write_csv(path: str, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])


def read_csv(path: str) -> list[dict]:
    """Read a records file back.

    Integer cells (seeds, indices, counts) come back as exact ``int``, other
    numeric cells as ``float`` and empty cells as None.
    """
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = {}
            for k, v in row.items():
                if v == "":
                    rec[k] = None
                    continue
                try:
                    rec[k] = int(v)
                except ValueError:
                    try:
                        rec[k] = float(v)
                    except ValueError:
                        rec[k] = v
            out.append(rec)
    return out


def _pin_blas():
    threadpool_limits(limits=1)


def _timed(fn, task):
    t0 = time.perf_counter()
    with threadpool_limits(limits=1):
        res = fn(task)
    return res, time.perf_counter() - t0


def run_tasks(fn, tasks: list, workers: int) -> tuple[list, list]:
    """Map ``fn`` over ``tasks`` preserving order; returns (results, seconds)."""
    if workers <= 1 or len(tasks) <= 1:
        pairs = [_timed(fn, t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_pin_blas) as ex:
            pairs = list(ex.map(_timed, [fn] * len(tasks), tasks))
    return [p[0] for p in pairs], [p[1] for p in pairs]


def _prepare_out(cfg: RunConfig) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "config.resolved"), "w") as fh:
        fh.write(cfg.resolved_text())
    return cfg.out


def _write_summary(out: str, summary: dict) -> None:
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _write_timings(out: str, keys: list, seconds: list) -> None:
    rows = [dict(k, seconds=s) for k, s in zip(keys, seconds)]
    cols = list(keys[0].keys()) + ["seconds"] if keys else ["seconds"]
    write_csv(os.path.join(out, "timings.csv"), cols, rows)


def _finite_or_none(v):
    return float(v) if v is not None and math.isfinite(v) else None


def _saddle_or_none(alpha, r, beta, lam):
    """Scalar-theory prediction at a sweep point, or None if it does not solve."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return solve_saddle(ScalarParams(alpha, r, beta, lam))
    except SOLVER_ERRORS as exc:
        log.warning("saddle failed at alpha=%g r=%g: %s", alpha, r, exc)
        return None


# ---------------------------------------------------------------------------
# statistics helpers


def ks_distance(samples, cdf, atoms=()) -> float:
    """Sup distance between the empirical CDF of ``samples`` and ``cdf``.

    ``atoms`` lists jump points of ``cdf`` so that both one-sided limits are
    compared there as well.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    m = x.size
    pts = np.concatenate([x, np.asarray(atoms, dtype=float)])
    left = np.nextafter(pts, -np.inf)
    F_at = np.asarray(cdf(pts), dtype=float)
    F_left = np.asarray(cdf(left), dtype=float)
    E_at = np.searchsorted(x, pts, side="right") / m
    E_left = np.searchsorted(x, pts, side="left") / m
    return float(max(np.max(np.abs(E_at - F_at)), np.max(np.abs(E_left - F_left))))


def empirical_cdf(samples, grid) -> np.ndarray:
    x = np.sort(np.asarray(samples, dtype=float))
    return np.searchsorted(x, np.asarray(grid, dtype=float), side="right") / x.size


def extract_boundary(rows: list[dict], loss_threshold: float = 0.05,
                     key_r: str = "r", key_alpha: str = "alpha", key_loss: str = "loss") -> dict:
    """Empirical boundary per r: first alpha where the loss crosses the threshold.

    The crossing is located by linear interpolation of ``log(loss)`` in alpha
    between the last point below and the first point at or above the threshold.
    Rows with no usable loss are skipped; an r without a crossing maps to None.
    """
    by_r: dict = {}
    for row in rows:
        if row.get(key_loss) is None:
            continue
        by_r.setdefault(float(row[key_r]), []).append((float(row[key_alpha]), float(row[key_loss])))
    lt = math.log(loss_threshold)
    out = {}
    for r in sorted(by_r):
        pts = sorted(by_r[r])
        est = None
        for (a0, l0), (a1, l1) in zip(pts[:-1], pts[1:]):
            if l0 < loss_threshold <= l1:
                y0, y1 = math.log(max(l0, 1e-300)), math.log(max(l1, 1e-300))
                est = a0 + (lt - y0) / (y1 - y0) * (a1 - a0)
                break
        out[r] = est
    return out


@dataclass(frozen=True)
class Peak:
    location: float
    value: float
    index: int
    on_edge: bool


def refine_peak(xs, ys) -> Peak:
    """Grid argmax refined by the vertex of the parabola through the top three points."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    j = int(np.nanargmax(ys))
    if j == 0 or j == len(xs) - 1:
        return Peak(float(xs[j]), float(ys[j]), j, True)
    a, b, c = np.polyfit(xs[j - 1:j + 2], ys[j - 1:j + 2], 2)
    if a >= 0:
        return Peak(float(xs[j]), float(ys[j]), j, False)
    xv = float(np.clip(-b / (2 * a), xs[j - 1], xs[j + 1]))
    return Peak(xv, float(np.polyval([a, b, c], xv)), j, False)


@dataclass(frozen=True)
class LinearFit:
    intercept: float
    slope: float
    intercept_se: float | None
    slope_se: float | None
    points: int


def fit_inverse_log(dims, peaks) -> LinearFit:
    """Least-squares fit of peak = a + b / log d with standard errors (needs 3+ points for SEs)."""
    x = 1.0 / np.log(np.asarray(dims, dtype=float))
    y = np.asarray(peaks, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two dimensions to fit")
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    a_se = b_se = None
    dof = x.size - 2
    if dof > 0:
        resid = y - X @ coef
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.inv(X.T @ X)
        a_se, b_se = float(math.sqrt(cov[0, 0])), float(math.sqrt(cov[1, 1]))
    return LinearFit(float(coef[0]), float(coef[1]), a_se, b_se, int(x.size))


def n_for_c(c: float, d: int) -> int:
    """Nearest integer n solving n log n = c d^2."""
    target = c * d * d
    if target <= 0:
        raise ValueError("c must be positive")
    hi = max(3.0, target)
    return max(2, int(round(optimize.brentq(lambda x: x * math.log(x) - target, 1.0 + 1e-12, hi + 3.0,
                                            xtol=1e-12))))


# ---------------------------------------------------------------------------
# phase diagram


PHASE_COLUMNS = [
    "experiment", "i_r", "i_alpha", "r", "alpha", "d", "n", "beta", "lam", "seed",
    "status", "converged", "iterations", "grad_norm", "loss", "nu", "inv_nu",
    "margin_median", "margin_pos_frac", "exact_margin_pos_frac", "percentile_mean",
    "alpha_c", "phase", "rho_alpha", "p_alpha", "pred_loss", "pred_nu", "pred_capped",
]


def _tam_point(task: dict) -> dict:
    d, alpha, r = task["d"], task["alpha"], task["r"]
    n = max(2, int(round(alpha * d * d)))
    seed = task["seed"]
    rec = dict(task["keys"], r=r, alpha=alpha, d=d, n=n, beta=task["beta"], lam=task["lam"], seed=seed)
    try:
        inst = sample_instance(d, n, seed)
        sol = minimize_tam(inst, TamConfig(r, task["beta"], task["lam"]),
                           SolveOptions(grad_tol=task["grad_tol"], max_iters=task["max_iters"],
                                        precision=task["precision"]))
        normalized = sol.margins / sol.nu if sol.nu > 0 else np.zeros_like(sol.margins)
        rec.update(status="ok" if sol.converged else "maxiter", converged=sol.converged,
                   iterations=sol.iterations, grad_norm=sol.grad_norm, loss=sol.loss, nu=sol.nu,
                   inv_nu=1.0 / sol.nu if sol.nu > 0 else None,
                   margin_median=float(np.median(normalized)),
                   margin_pos_frac=float(np.mean(sol.margins > 0)),
                   exact_margin_pos_frac=float(np.mean(sol.exact_margins > 0)),
                   percentile_mean=float(np.mean(sol.percentiles)))
        if task.get("keep_profile"):
            rec["_normalized_margins"] = normalized
            rec["_percentiles"] = sol.percentiles
    except SOLVER_ERRORS as exc:
        rec.update(status=f"failed:{type(exc).__name__}")
    pp = classify_phase(alpha, r)
    rec.update(alpha_c=pp.alpha_c, phase=pp.phase, rho_alpha=pp.rho_alpha, p_alpha=pp.p_alpha)
    sad = _saddle_or_none(alpha, r, task["beta"], task["lam"])
    if sad is not None:
        rec.update(pred_loss=sad.loss, pred_nu=sad.nu_star, pred_capped=sad.capped)
    return rec


def _alpha_c_curve(r_lo: float, r_hi: float, num: int = 200):
    rs = np.linspace(max(r_lo, 1e-4), min(r_hi, 1.0 - 1e-9), num)
    try:
        vals = [alpha_c(float(r)) for r in rs]
    except (ValueError, ArithmeticError) as exc:
        raise NumericalFailure(f"alpha_c curve failed: {exc}") from exc
    return rs.tolist(), vals


def plot_phase_diagram(out: str, loss_threshold: float) -> None:
    rows = read_csv(os.path.join(out, "records.csv"))
    rs = sorted({row["r"] for row in rows})
    alphas = sorted({row["alpha"] for row in rows})
    grid = {(row["r"], row["alpha"]): row for row in rows}

    def table(key):
        return [[(grid.get((r, a)) or {}).get(key) for r in rs] for a in alphas]

    loss = [[v if v is not None else float("nan") for v in row] for row in table("loss")]
    nu = [[v if v is not None else float("nan") for v in row] for row in table("nu")]
    curve = _alpha_c_curve(rs[0] - 0.5 * (rs[1] - rs[0]) if len(rs) > 1 else rs[0], rs[-1])
    bnd = extract_boundary(rows, loss_threshold)
    pts = [(r, a) for r, a in bnd.items() if a is not None]
    with open(os.path.join(out, "phase_loss.svg"), "w") as fh:
        fh.write(svg.heatmap(loss, rs, alphas, title="fit loss (clipped at 1)", xlabel="r",
                             ylabel="alpha", vmax=1.0, curves=[(*curve, "alpha_c")], points=pts))
    with open(os.path.join(out, "phase_norm.svg"), "w") as fh:
        fh.write(svg.heatmap(nu, rs, alphas, title="||W||_F / d (clipped at 100)", xlabel="r",
                             ylabel="alpha", vmax=100.0, log=True, curves=[(*curve, "alpha_c")],
                             points=pts))


def run_phase_diagram(cfg: RunConfig) -> dict:
    p = cfg.params
    d = p.effective_d()
    out = _prepare_out(cfg)
    tasks = []
    for i, r in enumerate(p.r_grid):
        for j, a in enumerate(p.alpha_grid):
            tasks.append(dict(keys=dict(experiment="phase-diagram", i_r=i, i_alpha=j), r=r, alpha=a,
                              d=d, beta=p.beta, lam=p.lam, seed=derive_seed(cfg.seed, i, j),
                              grad_tol=p.grad_tol, max_iters=p.max_iters, precision=p.precision))
    records, secs = run_tasks(_tam_point, tasks, cfg.workers)
    write_csv(os.path.join(out, "records.csv"), PHASE_COLUMNS, records)
    _write_timings(out, [t["keys"] for t in tasks], secs)
    plot_phase_diagram(out, p.loss_threshold)
    bnd = extract_boundary(read_csv(os.path.join(out, "records.csv")), p.loss_threshold)
    dev = {r: (a - alpha_c(r)) if a is not None else None for r, a in bnd.items()}
    present = [abs(v) for v in dev.values() if v is not None]
    summary = dict(
        experiment="phase-diagram", d=d, loss_threshold=p.loss_threshold,
        boundary=[dict(r=r, alpha_hat=_finite_or_none(a), alpha_c=alpha_c(r),
                       deviation=_finite_or_none(dev[r])) for r, a in bnd.items()],
        failed_points=sum(1 for rec in records if str(rec.get("status", "")).startswith("failed")),
        max_abs_deviation=max(present) if present else None,
        acceptance=dict(boundary_within_0_08=bool(present) and max(present) <= 0.08),
    )
    _write_summary(out, summary)
    return summary


# ---------------------------------------------------------------------------
# one-dimensional slice


SLICE_COLUMNS = PHASE_COLUMNS + ["pred_inv_nu"]
PROFILE_COLUMNS = ["panel", "x", "empirical", "sat_theory", "saddle_theory", "cmm_baseline"]


def plot_slice(out: str) -> None:
    rows = [row for row in read_csv(os.path.join(out, "records.csv"))]
    prof = read_csv(os.path.join(out, "profile.csv"))
    rows.sort(key=lambda row: row["alpha"])
    a = [row["alpha"] for row in rows]
    ac = rows[0]["alpha_c"] if rows else None
    vl = [(ac, "alpha_c")] if ac is not None else []

    def col(key, src):
        return [row[key] if row[key] is not None else float("nan") for row in src]

    ax1 = svg.Axes("fit loss", "alpha", "loss", log_y=True, vlines=vl, series=[
        svg.Series(a, col("loss", rows), "ERM", "points"),
        svg.Series(a, col("pred_loss", rows), "scalar theory")])
    ax2 = svg.Axes("inverse norm", "alpha", "d / ||W||_F", vlines=vl, series=[
        svg.Series(a, col("inv_nu", rows), "ERM", "points"),
        svg.Series(a, col("pred_inv_nu", rows), "scalar theory")])
    m = [row for row in prof if row["panel"] == "margin"]
    q = [row for row in prof if row["panel"] == "percentile"]
    x_m, x_q = col("x", m), col("x", q)
    ax3 = svg.Axes("normalized margin CDF", "margin / nu", "CDF", ylim=(0, 1), series=[
        svg.Series(x_m, col("empirical", m), "ERM", "step"),
        svg.Series(x_m, col("sat_theory", m), "SAT limit", "step", dashed=True),
        svg.Series(x_m, col("saddle_theory", m), "finite ridge")])
    ax4 = svg.Axes("percentile CDF", "omega", "CDF", ylim=(0, 1), series=[
        svg.Series(x_q, col("empirical", q), "ERM", "step"),
        svg.Series(x_q, col("sat_theory", q), "SAT limit", "step", dashed=True),
        svg.Series(x_q, col("cmm_baseline", q), "correlation memory")])
    with open(os.path.join(out, "slice.svg"), "w") as fh:
        fh.write(svg.figure([ax1, ax2, ax3, ax4], cols=2))


def run_slice(cfg: RunConfig) -> dict:
    p = cfg.params
    d = p.effective_d()
    out = _prepare_out(cfg)
    alphas = sorted(set(p.alpha_grid) | {p.profile_alpha})
    tasks = [dict(keys=dict(experiment="slice", i_r=0, i_alpha=j), r=p.r, alpha=a, d=d, beta=p.beta,
                  lam=p.lam, seed=derive_seed(cfg.seed, j), grad_tol=p.grad_tol,
                  max_iters=p.max_iters, precision=p.precision, keep_profile=(a == p.profile_alpha))
             for j, a in enumerate(alphas)]
    records, secs = run_tasks(_tam_point, tasks, cfg.workers)
    for rec in records:
        rec["pred_inv_nu"] = 1.0 / rec["pred_nu"] if rec.get("pred_nu") else None
    write_csv(os.path.join(out, "records.csv"), SLICE_COLUMNS, records)
    _write_timings(out, [t["keys"] for t in tasks], secs)

    prof_rec = next(rec for rec in records if rec["alpha"] == p.profile_alpha)
    margins = prof_rec.get("_normalized_margins")
    pct = prof_rec.get("_percentiles")
    sat = sat_profiles(p.profile_alpha, p.r) if prof_rec["phase"] == "SAT" else None
    sad = _saddle_or_none(p.profile_alpha, p.r, p.beta, p.lam)
    laws = channel_cdfs(sad) if sad is not None else None
    t_grid = np.round(np.linspace(-0.5, 1.5, 401), 12)
    w_grid = np.round(np.linspace(0.0, 1.0, 401), 12)
    prof_rows = []
    for t in t_grid:
        prof_rows.append(dict(
            panel="margin", x=t,
            empirical=float(empirical_cdf(margins, [t])[0]) if margins is not None else None,
            sat_theory=float(sat.margin_cdf(t)) if sat else None,
            saddle_theory=float(laws.score_cdf(sad.c_star + sad.nu_star * t)) if laws else None))
    for w in w_grid:
        prof_rows.append(dict(
            panel="percentile", x=w,
            empirical=float(empirical_cdf(pct, [w])[0]) if pct is not None else None,
            sat_theory=float(sat.percentile_cdf(w)) if sat else None,
            saddle_theory=float(laws.percentile_cdf(w)) if laws else None,
            cmm_baseline=float(percentile_cdf_theory(p.profile_alpha, w)) if 0 < w < 1 else float(w)))
    write_csv(os.path.join(out, "profile.csv"), PROFILE_COLUMNS, prof_rows)
    plot_slice(out)

    checks = {}
    headline = {}
    if margins is not None:
        headline.update(loss=prof_rec["loss"], inv_nu=prof_rec["inv_nu"])
        checks["loss_le_0_05"] = prof_rec["loss"] <= 0.05
        if sad is not None:
            headline["pred_inv_nu"] = 1.0 / sad.nu_star
            checks["inv_nu_within_0_1"] = abs(prof_rec["inv_nu"] - 1.0 / sad.nu_star) <= 0.1
        if sat is not None:
            ks = ks_distance(margins, sat.margin_cdf, atoms=[sat.rho - sat.kappa])
            frac = float(np.mean(pct >= sat.p_alpha - 0.05))
            headline.update(margin_ks=ks, percentile_frac_above=frac, rho_alpha=sat.rho,
                            p_alpha=sat.p_alpha)
            checks["margin_ks_le_0_10"] = ks <= 0.10
            checks["percentile_frac_ge_0_9"] = frac >= 0.9
    bnd = extract_boundary(read_csv(os.path.join(out, "records.csv")), p.loss_threshold)
    crossing = bnd.get(p.r)
    summary = dict(experiment="slice", d=d, r=p.r, profile_alpha=p.profile_alpha,
                   alpha_c=alpha_c(p.r), kappa_r=kappa_r(p.r),
                   loss_crossing=_finite_or_none(crossing), profile=headline,
                   acceptance={k: bool(v) for k, v in checks.items()})
    _write_summary(out, summary)
    return summary


# ---------------------------------------------------------------------------
# correlation-memory threshold


CMM_COLUMNS = ["experiment", "i_rho", "rho", "rho_realized", "d", "n", "trials", "successes",
               "p_hat", "stderr", "ci_low", "ci_high", "seed"]


def _cmm_point(task: dict) -> dict:
    sp = scan_point(task["n"], task["index"], task["rho"], task["trials"], task["seed"])
    lo, hi = sp.estimate.wilson_ci
    return dict(experiment="cmm-threshold", i_rho=task["index"], rho=sp.rho,
                rho_realized=sp.rho_realized, d=sp.d, n=sp.n, trials=sp.estimate.trials,
                successes=sp.estimate.successes, p_hat=sp.estimate.p_hat, stderr=sp.estimate.stderr,
                ci_low=lo, ci_high=hi, seed=derive_seed(task["seed"], task["index"]))


def plot_cmm(out: str) -> None:
    rows = read_csv(os.path.join(out, "records.csv"))
    x = [row["rho"] for row in rows]
    ax = svg.Axes("correlation memory top-1 retrieval", "d^2 / (n log n)", "P(top-1)",
                  ylim=(0, 1), vlines=[(8.0, "8")], series=[
                      svg.Series(x, [row["p_hat"] for row in rows], "estimate"),
                      svg.Series(x, [row["ci_low"] for row in rows], "95% interval", "points"),
                      svg.Series(x, [row["ci_high"] for row in rows], "", "points", color=svg.PALETTE[1])])
    with open(os.path.join(out, "cmm_threshold.svg"), "w") as fh:
        fh.write(svg.figure([ax]))


def monotone_within(rhos, p, se, k: float = 2.0) -> bool:
    """True if no later estimate falls below an earlier one by more than k combined SEs."""
    order = np.argsort(rhos)
    p = np.asarray(p)[order]
    se = np.asarray(se)[order]
    for i in range(len(p)):
        for j in range(i + 1, len(p)):
            if p[j] < p[i] - k * math.hypot(se[i], se[j]):
                return False
    return True


def run_cmm_threshold(cfg: RunConfig) -> dict:
    p = cfg.params
    out = _prepare_out(cfg)
    tasks = [dict(n=p.n, index=a, rho=rho, trials=p.trials, seed=cfg.seed) for a, rho in enumerate(p.rho_grid)]
    records, secs = run_tasks(_cmm_point, tasks, cfg.workers)
    write_csv(os.path.join(out, "records.csv"), CMM_COLUMNS, records)
    _write_timings(out, [dict(i_rho=t["index"]) for t in tasks], secs)
    plot_cmm(out)
    by_rho = {rec["rho"]: rec["p_hat"] for rec in records}
    checks = dict(monotone_2se=monotone_within([r["rho"] for r in records], [r["p_hat"] for r in records],
                                               [r["stderr"] for r in records]))
    if 16.0 in by_rho:
        checks["p16_ge_0_9"] = by_rho[16.0] >= 0.9
    if 4.0 in by_rho:
        checks["p4_le_0_1"] = by_rho[4.0] <= 0.1
    summary = dict(experiment="cmm-threshold", n=p.n, trials=p.trials,
                   estimates=[dict(rho=r["rho"], d=r["d"], p_hat=r["p_hat"], stderr=r["stderr"])
                              for r in records],
                   acceptance={k: bool(v) for k, v in checks.items()})
    _write_summary(out, summary)
    return summary


# ---------------------------------------------------------------------------
# cross-entropy top-1 sweep


TOP1_COLUMNS = ["experiment", "i_d", "i_c", "rep", "d", "c", "n", "c_realized", "lam", "seed",
                "status", "converged", "iterations", "grad_norm", "loss", "nu", "margin_min",
                "top1_holds"]
PEAK_COLUMNS = ["d", "c_hat", "nu_peak", "grid_index", "on_edge", "inv_log_d"]


def _ce_point(task: dict) -> dict:
    d, c = task["d"], task["c"]
    n = n_for_c(c, d)
    rec = dict(task["keys"], d=d, c=c, n=n, c_realized=n * math.log(n) / (d * d), lam=task["lam"],
               seed=task["seed"])
    try:
        inst = sample_instance(d, n, task["seed"])
        sol = minimize_ce(inst, task["lam"], SolveOptions(grad_tol=task["grad_tol"],
                                                          max_iters=task["max_iters"],
                                                          precision=task["precision"]))
        rec.update(status="ok" if sol.converged else "maxiter", converged=sol.converged,
                   iterations=sol.iterations, grad_norm=sol.grad_norm, loss=sol.loss, nu=sol.nu,
                   margin_min=float(np.min(sol.margins)), top1_holds=bool(np.min(sol.margins) > 0))
    except SOLVER_ERRORS as exc:
        rec.update(status=f"failed:{type(exc).__name__}")
    return rec


def top1_peaks(rows: list[dict]) -> list[dict]:
    """Per-d peak of the replicate-mean norm over the c grid."""
    out = []
    for d in sorted({row["d"] for row in rows}):
        sub = [row for row in rows if row["d"] == d and row.get("nu") is not None]
        cs = sorted({row["c"] for row in sub})
        means = [float(np.mean([row["nu"] for row in sub if row["c"] == c])) for c in cs]
        pk = refine_peak(cs, means)
        out.append(dict(d=int(d), c_hat=pk.location, nu_peak=pk.value, grid_index=pk.index,
                        on_edge=pk.on_edge, inv_log_d=1.0 / math.log(d), _cs=cs, _means=means))
    return out


def plot_top1(out: str) -> None:
    rows = read_csv(os.path.join(out, "records.csv"))
    peaks = top1_peaks(rows)
    series = [svg.Series(pk["_cs"], pk["_means"], f"d={pk['d']}") for pk in peaks]
    series.append(svg.Series([pk["c_hat"] for pk in peaks], [pk["nu_peak"] for pk in peaks], "peak", "points"))
    ax1 = svg.Axes("norm scale vs load", "c = n log n / d^2", "||W||_F / d", series=series)
    good = [pk for pk in peaks if not pk["on_edge"]]
    s2 = [svg.Series([pk["inv_log_d"] for pk in peaks], [pk["c_hat"] for pk in peaks], "peak", "points")]
    if len(good) >= 2:
        fit = fit_inverse_log([pk["d"] for pk in good], [pk["c_hat"] for pk in good])
        xs = [0.0, max(pk["inv_log_d"] for pk in peaks) * 1.05]
        s2.append(svg.Series(xs, [fit.intercept + fit.slope * x for x in xs],
                             f"fit {fit.intercept:.3f} + {fit.slope:.3f} x"))
    ax2 = svg.Axes("peak extrapolation", "1 / log d", "c_hat", series=s2)
    with open(os.path.join(out, "top1.svg"), "w") as fh:
        fh.write(svg.figure([ax1, ax2], cols=2))


def run_top1_sweep(cfg: RunConfig) -> dict:
    p = cfg.params
    out = _prepare_out(cfg)
    tasks = []
    for i, d in enumerate(p.dims):
        for j, c in enumerate(p.c_grid):
            for k in range(p.reps):
                tasks.append(dict(keys=dict(experiment="top1-sweep", i_d=i, i_c=j, rep=k), d=int(d), c=c,
                                  lam=p.lam, seed=derive_seed(cfg.seed, i, j, k), grad_tol=p.grad_tol,
                                  max_iters=p.max_iters, precision=p.precision))
    records, secs = run_tasks(_ce_point, tasks, cfg.workers)
    write_csv(os.path.join(out, "records.csv"), TOP1_COLUMNS, records)
    _write_timings(out, [t["keys"] for t in tasks], secs)
    peaks = top1_peaks(read_csv(os.path.join(out, "records.csv")))
    write_csv(os.path.join(out, "peaks.csv"), PEAK_COLUMNS, peaks)
    plot_top1(out)
    good = [pk for pk in peaks if not pk["on_edge"]]
    fit = fit_inverse_log([pk["d"] for pk in good], [pk["c_hat"] for pk in good]) if len(good) >= 2 else None
    spacing = float(np.min(np.diff(sorted(p.c_grid))))
    ordered = sorted(good, key=lambda pk: pk["d"])
    decreasing = len(ordered) >= 2 and all(b["c_hat"] <= a["c_hat"] + spacing
                                           for a, b in zip(ordered[:-1], ordered[1:]))
    checks = dict(decreasing_within_spacing=decreasing,
                  no_edge_peaks=not any(pk["on_edge"] for pk in peaks))
    if fit is not None:
        checks["intercept_in_0_3_0_8"] = 0.3 <= fit.intercept <= 0.8
    summary = dict(
        experiment="top1-sweep", lam=p.lam, reps=p.reps, grid_spacing=spacing,
        peaks=[{k: v for k, v in pk.items() if not k.startswith("_")} for pk in peaks],
        fit=None if fit is None else dict(intercept=fit.intercept, slope=fit.slope,
                                          intercept_se=fit.intercept_se, slope_se=fit.slope_se,
                                          points=fit.points),
        limiting_c=1.0 / TOP1_CONSTANT,
        acceptance={k: bool(v) for k, v in checks.items()},
    )
    _write_summary(out, summary)
    return summary


RUNNERS = {
    "phase-diagram": run_phase_diagram,
    "slice": run_slice,
    "cmm-threshold": run_cmm_threshold,
    "top1-sweep": run_top1_sweep,
}

PLOTTERS = {
    "phase-diagram": lambda out, cfg: plot_phase_diagram(out, cfg.loss_threshold),
    "slice": lambda out, cfg: plot_slice(out),
    "cmm-threshold": lambda out, cfg: plot_cmm(out),
    "top1-sweep": lambda out, cfg: plot_top1(out),
}
