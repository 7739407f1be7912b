"""Suite orchestration: run checks, write CSV/JSON/SVG artifacts, collect a report record.

Every artifact is a pure function of the config (seed included), so reruns are
byte-identical.  Wall time is logged, never written to disk.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import svg
from .config import ExperimentConfig
from .discretize import LAMBDA0, assemble_H, build_grid
from .geometry import CurveGeometry, make_curve
from .heatkernel import (
    Propagator,
    log_times,
    markov_checks,
    semigroup_convergence,
    semigroup_test_functions,
    subgaussian_verify,
    ultracontractivity_fit,
)
from .inequalities import (
    basic_function,
    gs_transform_identity,
    hardy_check,
    logsobolev_fit_verify,
    make_test_functions,
    rosen_check,
    weighted_form_bounds,
    InequalityReport,
)
from .sampler import condition_htransform, condition_rejection, limit_sampler, marginal_stat, modulus_sweep, write_paths
from .spectral import SpectralConfig, base_schrodinger_oracle, eigen_gap_sweep, extrapolate_limit, ground_state

log = logging.getLogger("tubeflow")

SPECTRAL_FIELDS = ("eps", "lambda", "gap", "c_env", "C_env", "l2_dist", "residual")
KERNEL_FIELDS = ("eps", "t", "source_s", "source_v", "target_s", "target_v", "K", "bound", "slack")
ESTIMATE_FIELDS = ("observable", "eps", "t", "mean", "stderr", "ess", "n")


@dataclass
class Check:
    name: str
    status: str  # pass | fail | info
    slack: float = float("nan")
    detail: str = ""


@dataclass
class ReportRecord:
    suite: str
    config_hash: str
    checks: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    def add(self, name: str, ok: bool | None, slack: float = float("nan"), detail: str = ""):
        status = "info" if ok is None else ("pass" if ok else "fail")
        self.checks.append(Check(name, status, float(slack), detail))

    def to_json(self) -> dict:
        return {
            "suite": self.suite,
            "config_hash": self.config_hash,
            "passed": self.passed,
            "checks": [{"name": c.name, "status": c.status, "slack": c.slack, "detail": c.detail} for c in self.checks],
            "constants": self.constants,
        }


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None, keys to str."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def dump_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(x) for x in r])
    path.write_text(buf.getvalue())


def curve_from_config(cfg: ExperimentConfig) -> CurveGeometry:
    return make_curve(cfg["geometry.kind"], radius=cfg["geometry.radius"], a=cfg["geometry.a"], b=cfg["geometry.b"], length=cfg["geometry.length"])


def _plot(cfg, out: Path, name: str, series, **kw):
    if cfg["run.svg"]:
        (out / name).write_text(svg.line_plot(series, **kw))


def _spread(x) -> float:
    x = np.asarray(x, float)
    return float((x.max() - x.min()) / abs(x).max())


# ---------------------------------------------------------------- suites


def run_spectrum(cfg, curve, out: Path, rec: ReportRecord):
    eps = cfg["run.eps_list"]
    kind = cfg["spectrum.kind"]
    rows = eigen_gap_sweep(curve, eps, cfg["grid.N_s"], cfg["grid.N_v"], kind=kind, cfg=SpectralConfig(tol=cfg["spectrum.tol"]))
    dump_csv(out / "spectral.csv", SPECTRAL_FIELDS, [r.csv_fields() for r in rows])
    gaps = [r.gap for r in rows]
    c = [r.c_env for r in rows]
    C = [r.C_env for r in rows]
    rec.add("envelope_c_positive", min(c) > 0, min(c))
    rec.add("envelope_c_spread", _spread(c) <= 0.25, 0.25 - _spread(c))
    rec.add("envelope_C_spread", _spread(C) <= 0.25, 0.25 - _spread(C))
    consts = {"c_env": c, "C_env": C}
    if curve.is_flat or kind == "nu":
        # the transported form keeps the fiber mode exact: zero gap and distance
        worst = max(max(abs(g) for g in gaps), max(r.l2_dist for r in rows))
        rec.add("exact_ground_pair", worst <= 1e-6, 1e-6 - worst)
    else:
        ratios = [(a - b) / (b - c_) for a, b, c_ in zip(gaps, gaps[1:], gaps[2:]) if b != c_]
        if ratios:
            rec.add("gap_cauchy", min(ratios) >= 1.5, min(ratios) - 1.5)
        g0, p = extrapolate_limit(eps, gaps)
        # plain Brownian motion sees the attractive potential -kappa^2/4
        oracle = base_schrodinger_oracle(curve, sign=-1.0)
        literal = base_schrodinger_oracle(curve, sign=1.0)
        rel = abs(g0 - oracle) / abs(oracle)
        rec.add("gap_limit_vs_oracle", rel <= 0.05, 0.05 - rel)
        rec.add("gap_limit_vs_repulsive_oracle", None, abs(g0 - literal) / abs(literal))
        consts |= {"gap_limit": g0, "order": p, "oracle_attractive": oracle, "oracle_repulsive": literal}
    rec.constants["spectrum"] = consts
    _plot(cfg, out, "spectrum_gap.svg", [("gap", eps, gaps)], title="eigen-gap vs eps", xlabel="eps", ylabel="lambda - lambda0/eps^2")


def run_semigroup(cfg, curve, out: Path, rec: ReportRecord):
    eps = cfg["run.eps_list"]
    t_list = cfg["run.t_list"]
    E = semigroup_convergence(curve, eps, semigroup_test_functions, t_list, cfg["grid.N_s"], cfg["grid.N_v"])
    rows = [(e, t, f"f{j}", E[i, k, j]) for i, e in enumerate(eps) for k, t in enumerate(t_list) for j in range(E.shape[2])]
    dump_csv(out / "semigroup.csv", ("eps", "t", "function", "error"), rows)
    floor = 1e-12
    mono = all(E[i + 1, k, j] <= E[i, k, j] or E[i + 1, k, j] <= floor for i in range(len(eps) - 1) for k in range(len(t_list)) for j in range(E.shape[2]))
    rec.add("semigroup_monotone", mono)
    if len(eps) > 1:
        ratio = float(np.max(np.where(E[0] > floor, E[-1] / np.maximum(E[0], floor), 0.0)))
        rec.add("semigroup_final_third", ratio < 1 / 3, 1 / 3 - ratio)
    rng = np.random.default_rng(cfg["run.seed"])
    mk = []
    for e in eps:
        # positivity and contraction concern the killed (non-renormalized) semigroup;
        # the shift only factors out exp(-t lambda0 / (2 eps^2)) for range
        form = assemble_H(build_grid(curve, cfg["grid.N_s"], cfg["grid.N_v"], e), "nu")
        prop = Propagator(form, min(t_list), shift=LAMBDA0 / e**2)
        for t in t_list:
            mk.append(markov_checks(form, t, cfg["semigroup.markov_trials"], rng, prop))
    dump_json(out / "markov.json", mk)
    nv = sum(m["violations"] for m in mk)
    rec.add("markov_violations", nv == 0, -nv)
    _plot(
        cfg, out, "semigroup_ladder.svg",
        [(f"t={t}", eps, E[:, k, :].max(axis=1)) for k, t in enumerate(t_list)],
        title="semigroup error vs eps", xlabel="eps", ylabel="max error", logy=True,
    )


def run_kernel(cfg, curve, out: Path, rec: ReportRecord):
    eps = cfg["run.eps_list"]
    N_s, N_v = cfg["grid.N_s"], cfg["grid.N_v"]
    t_list = [float(t) for t in log_times(cfg["kernel.t_min"], cfg["kernel.t_max"], cfg["kernel.n_times"], sub=1)]
    grid0 = build_grid(curve, N_s, N_v, eps[0])
    S = np.repeat(grid0.s, N_v - 1)
    V = np.tile(grid0.v, N_s)
    rows = []

    def record(e, t, sources, K, bound):
        # one row per (eps, t, source): the binding target
        sl = (bound - K) / bound
        a = np.argmin(sl, axis=0)
        for j, src in enumerate(sources):
            i = a[j]
            rows.append((e, t, S[src], V[src], S[i], V[i], K[i, j], bound[i, j], sl[i, j]))

    fit = subgaussian_verify(curve, eps, t_list, N_s, N_v, n_sources=cfg["kernel.n_sources"], rng=np.random.default_rng(cfg["run.seed"]), rel_tol=cfg["kernel.rel_tol"], record=record)
    dump_csv(out / "kernel.csv", KERNEL_FIELDS, rows)
    ut = log_times(0.05, 1.0, 16)
    norms, slopes, N, slack = ultracontractivity_fit(curve, eps, ut, N_s, N_v)
    dump_csv(out / "ultracontractivity.csv", ("eps", "t", "norm"), [(e, t, norms[i, k]) for i, e in enumerate(eps) for k, t in enumerate(ut)])
    counts = {"d": sum(v["count"] for v in fit.violations if v["form"] == "d"), "h": sum(v["count"] for v in fit.violations if v["form"] == "h")}
    summary = {
        "C": fit.C, "B": fit.B, "k": fit.k, "C_h": fit.C_h, "N": N, "Lambda_dav": fit.Lambda_dav,
        "fit_eps": fit.fit_eps, "t_range": list(fit.t_range), "min_slack": fit.min_slack,
        "violation_counts": counts, "violations": fit.violations,
        "ultracontractive_slopes": dict(zip(eps, slopes)), "ultracontractive_slack": dict(zip(eps, slack)),
    }
    dump_json(out / "kernel_summary.json", summary)
    rec.add("subgaussian_d_violations", counts["d"] == 0, min(v["d"] for v in fit.min_slack.values()))
    rec.add("subgaussian_h_violations", counts["h"] == 0, min(v["h"] for v in fit.min_slack.values()))
    tol = cfg["kernel.rel_tol"]
    if curve.is_flat:
        rec.add("ultracontractive_slope", abs(slopes[0] + 0.75) <= 0.07, 0.07 - abs(slopes[0] + 0.75))
        rec.add("ultracontractive_N_uniform", min(slack) >= -tol, min(slack))
    else:
        rec.add("ultracontractive_slope", None, slopes[0])
        rec.add("ultracontractive_N_uniform", None, min(slack))
    rec.constants["kernel"] = {"C": fit.C, "B": fit.B, "k": fit.k, "N": N}
    _plot(
        cfg, out, "kernel_slack.svg",
        [(f"eps={e}", t_list, [min(r[8] for r in rows if r[0] == e and r[1] == t) for t in t_list]) for e in eps],
        title="kernel-bound slack strip", xlabel="t", ylabel="min relative slack", logx=True,
    )


def run_inequalities(cfg, curve, out: Path, rec: ReportRecord):
    eps = cfg["run.eps_list"]
    N_s, N_v = cfg["grid.N_s"], cfg["grid.N_v"]
    count, seed, tol = cfg["inequalities.count"], cfg["run.seed"], cfg["inequalities.tol"]
    builder = lambda g: make_test_functions(g, count, seed)  # noqa: E731
    reports = []
    rng = np.random.default_rng(seed)
    for e in eps:
        grid = build_grid(curve, N_s, N_v, e)
        fs = builder(grid)
        r = hardy_check(grid, fs)
        r.id = f"hardy@eps={e}"
        reports.append(r)
        for kind in ("nu", "plain"):
            form = assemble_H(grid, kind)
            eig = ground_state(form)
            worst, viol = 0.0, []
            for _ in range(100):
                i, j = rng.integers(0, fs.count, 2)
                d = gs_transform_identity(form, eig.lam, eig.phi, fs.functions[i], fs.functions[j])
                worst = max(worst, d)
                if d > 1e-6:
                    viol.append({"f": fs.ids[i], "g": fs.ids[j], "defect": d})
            reports.append(InequalityReport(f"gs_identity_{kind}@eps={e}", 100, 1e-6 - worst, "", {"residual": eig.residual}, viol))
            h = basic_function(form)
            wr = weighted_form_bounds(form, eig.lam, eig.phi, fs.nonnegative(), h, [-2.0, -0.5, 0.5, 2.0], [2, 4])
            wr.id = f"weighted_form_{kind}@eps={e}"
            reports.append(wr)
    grid_th = np.geomspace(0.01, 1.0, 25)
    c, ls = logsobolev_fit_verify(curve, eps, grid_th, builder, N_s, N_v, tol=tol)
    for e, r in ls.items():
        r.id = f"log_sobolev@eps={e}"
        reports.append(r)
    consts, rs = rosen_check(curve, eps, grid_th, builder, N_s, N_v, tol=tol)
    for e, r in rs.items():
        r.id = f"rosen@eps={e}"
        reports.append(r)
    dump_json(out / "inequalities.json", [r.to_json() for r in reports])
    for r in reports:
        rec.add(r.id, r.passed, r.min_slack, r.worst)
    rec.constants["inequalities"] = {"c": c, "k1_k2": {str(p): v for p, v in consts.items()}}


def _observables(L: float):
    return [
        ("cos1", lambda s: np.cos(2 * np.pi * s / L)),
        ("sin1", lambda s: np.sin(2 * np.pi * s / L)),
        ("cos2", lambda s: np.cos(4 * np.pi * s / L)),
    ]


def run_sample(cfg, curve, out: Path, rec: ReportRecord):
    eps = cfg["run.eps_list"]
    T, h, n, seed = cfg["sampler.T"], cfg["sampler.h"], cfg["sampler.n"], cfg["run.seed"]
    lh = cfg["sampler.limit_h"]
    every = round(h / lh)
    obs_t = cfg["sampler.observe_t"]
    L = curve.total_length
    lim = limit_sampler(curve, T, lh, n, seed * 1009, record_every=every)
    rows = []
    ref = {}
    for name, f in _observables(L):
        for t in obs_t:
            m = marginal_stat(lim, f, t)
            ref[name, t] = m
            rows.append((name, 0.0, t, m.mean, m.stderr, m.ess, m.n))
    last = {}
    for i, e in enumerate(eps):
        if cfg["sampler.method"] == "htransform":
            paths = condition_htransform(curve, e, T, cfg["sampler.N_s"], cfg["sampler.N_v"], h, n, seed * 1009 + i + 1)
        else:
            paths = condition_rejection(curve, e, T, lh, n, seed * 1009 + i + 1, record_every=every)
        if cfg["sampler.write_paths"]:
            write_paths(out / f"paths_eps{e:g}.bin", paths)
        for name, f in _observables(L):
            for t in obs_t:
                m = marginal_stat(paths, f, t)
                rows.append((name, e, t, m.mean, m.stderr, m.ess, m.n))
                last[name, t] = m
    dump_csv(out / "estimates.csv", ESTIMATE_FIELDS, rows)
    for (name, t), m in last.items():
        r = ref[name, t]
        z = abs(m.mean - r.mean) / max(math.hypot(m.stderr, r.stderr), 1e-300)
        rec.add(f"limit_agreement_{name}_t={t}", z <= 3.0, 3.0 - z)


def run_modulus(cfg, curve, out: Path, rec: ReportRecord):
    eps = cfg["run.eps_list"]
    lags = cfg["modulus.lags"]
    s0, h, M = cfg["modulus.start"], cfg["modulus.h"], cfg["modulus.M"]
    T = round((s0 + max(lags)) / h) * h
    bundles = {e: condition_htransform(curve, e, T, cfg["modulus.N_s"], cfg["modulus.N_v"], h, cfg["modulus.n"], cfg["run.seed"] * 1013 + i) for i, e in enumerate(eps)}
    exponent = M - 2.5  # M - (m + 3)/2 with m = 2
    r = modulus_sweep(bundles, s0, lags, M, exponent)
    dump_csv(out / "modulus.csv", ("eps", "lag", "mean", "stderr", "ess", "n"), [(e, lag, x.mean, x.stderr, x.ess, x.n) for e in eps for lag, x in zip(lags, r["curves"][e])])
    dump_json(out / "modulus.json", {"M": M, "exponent": exponent, "K": r["K"], "slopes": r["slopes"], "violations": r["violations"]})
    worst = min(r["slopes"].values())
    rec.add("modulus_slope", worst >= cfg["modulus.min_slope"], worst - cfg["modulus.min_slope"])
    rec.add("modulus_uniform_K", not r["violations"], -len(r["violations"]))
    if curve.is_flat:
        rec.add("modulus_flat_slope", None, r["slopes"][eps[0]] - M)
    rec.constants["modulus"] = {"K": r["K"], "slopes": r["slopes"]}
    _plot(cfg, out, "modulus.svg", [(f"eps={e}", lags, [x.mean for x in r["curves"][e]]) for e in eps], title="E d^2M vs lag", xlabel="lag", ylabel="moment", logx=True, logy=True)


RUNNERS = {
    "spectrum": run_spectrum,
    "semigroup": run_semigroup,
    "kernel-bound": run_kernel,
    "inequalities": run_inequalities,
    "sample": run_sample,
    "modulus": run_modulus,
}


def run_suite(cfg: ExperimentConfig, suite: str, out: Path) -> ReportRecord:
    """Run one suite, write its artifacts and ``<suite>_report.json`` under ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    curve = curve_from_config(cfg)
    rec = ReportRecord(suite, cfg.hash())
    t0 = time.perf_counter()
    RUNNERS[suite](cfg, curve, out, rec)
    log.info("%s finished in %.1f s, %s", suite, time.perf_counter() - t0, "pass" if rec.passed else "FAIL")
    dump_json(out / f"{suite}_report.json", rec.to_json())
    return rec
