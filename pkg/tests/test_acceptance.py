"""Acceptance criteria 1-13.

Each test prints one ``C<k> PASS|FAIL`` line to the real stdout (visible
without ``-s``) and then asserts the criterion at its stated tolerance.
Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import filecmp
import math
import time
from pathlib import Path

import numpy as np
import pytest

from tubeflow import cli
from tubeflow.discretize import LAMBDA0, assemble_H, build_grid, phi0
from tubeflow.heatkernel import (
    Propagator,
    log_times,
    markov_checks,
    semigroup_convergence,
    semigroup_test_functions,
    subgaussian_verify,
    ultracontractivity_fit,
)
from tubeflow.inequalities import gs_transform_identity, hardy_check, logsobolev_fit_verify, make_test_functions, rosen_check
from tubeflow.sampler import AcceptanceError, condition_htransform, condition_rejection, limit_sampler, marginal_stat, modulus_sweep
from tubeflow.spectral import base_schrodinger_oracle, eigen_gap_sweep, extrapolate_limit, ground_state

EPS = [0.2, 0.1, 0.05]
CONFIGS = Path(__file__).resolve().parent.parent / "configs"

pytestmark = pytest.mark.slow
ACCEPTANCE_LINES: list[str] = []
_reporter = None


def _emit(line: str):
    # the terminal reporter bypasses output capture; lines are repeated in the run summary
    ACCEPTANCE_LINES.append(line)
    if _reporter is not None:
        _reporter.write_line(line)


def verdict(k, ok: bool, detail: str):
    _emit(f"C{k:<2d} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def info(k, detail: str):
    _emit(f"C{k:<2d} INFO  {detail}")


@pytest.fixture(autouse=True, scope="module")
def _terminal(pytestconfig):
    global _reporter
    _reporter = pytestconfig.pluginmanager.get_plugin("terminalreporter")
    yield
    _reporter = None


def spread(x):
    x = np.asarray(x, float)
    return float((x.max() - x.min()) / abs(x).max())


def z_score(a, b):
    return abs(a.mean - b.mean) / math.hypot(a.stderr, b.stderr)


def test_c01_flat_exactness(flat):
    t0 = time.perf_counter()
    rows = eigen_gap_sweep(flat, [0.4, 0.2, 0.1], 256, 64, kind="plain")
    dt = time.perf_counter() - t0
    gap = max(abs(r.gap) for r in rows)
    dist = max(r.l2_dist for r in rows)
    verdict(1, gap <= 1e-6 and dist <= 1e-6 and dt < 30, f"max|gap|={gap:.2e} max dist={dist:.2e} time={dt:.1f}s")


@pytest.mark.parametrize("name", ["circle", "ellipse"])
def test_c02_gap_asymptotics(name, circle, ellipse):
    curve = circle if name == "circle" else ellipse
    eps = [0.4, 0.2, 0.1, 0.05]
    t0 = time.perf_counter()
    rows = eigen_gap_sweep(curve, eps, 256, 64, kind="plain")
    dt = time.perf_counter() - t0
    g = [r.gap for r in rows]
    ratios = [(a - b) / (b - c) for a, b, c in zip(g, g[1:], g[2:])]
    g0, p = extrapolate_limit(eps, g)
    oracle = base_schrodinger_oracle(curve, sign=1.0)
    rel = abs(g0 - oracle) / abs(oracle)
    attractive = base_schrodinger_oracle(curve, sign=-1.0)
    rel_a = abs(g0 - attractive) / abs(attractive)
    # the comparison with the potential of opposite sign is reported, not asserted
    info(2, f"{name}: limit vs -kappa^2/4 oracle {attractive:.5f}: rel={rel_a:.2e}")
    ok = min(ratios) >= 1.5 and rel <= 0.05 and dt < 300
    verdict(2, ok, f"{name}: ratios={np.round(ratios, 2).tolist()} limit={g0:.5f} (order {p:.2f}) oracle(+kappa^2/4)={oracle:.5f} rel={rel:.2e} time={dt:.0f}s")


def test_c03_envelope(ellipse):
    rows = eigen_gap_sweep(ellipse, EPS, 256, 64, kind="plain")
    c = [r.c_env for r in rows]
    C = [r.C_env for r in rows]
    ok = min(c) > 0 and spread(c) <= 0.25 and np.all(np.isfinite(C)) and spread(C) <= 0.25
    verdict(3, ok, f"c={np.round(c, 4).tolist()} (spread {spread(c):.3f}) C={np.round(C, 4).tolist()} (spread {spread(C):.3f})")


@pytest.fixture(scope="module")
def ineq_grid(ellipse):
    g = build_grid(ellipse, 128, 32, 0.1)
    return g, make_test_functions(g, 1000, 7)


def test_c04_hardy(ineq_grid):
    g, fs = ineq_grid
    r = hardy_check(g, fs, tol=1e-10)
    verdict(4, r.min_slack >= -1e-10 and not r.violations and r.trials >= 1000, f"{r.trials} functions, min slack={r.min_slack:.3e} ({r.worst})")


def test_c05_gs_identity(ineq_grid):
    g, fs = ineq_grid
    rng = np.random.default_rng(0)
    worst, res = 0.0, 0.0
    for kind in ("nu", "plain"):
        form = assemble_H(g, kind)
        eig = ground_state(form)
        # absolute residuals bottom out at the matvec rounding level, about 5e-13 lambda
        res = max(res, eig.residual / eig.lam)
        for _ in range(100):
            i, j = rng.integers(0, fs.count, 2)
            worst = max(worst, gs_transform_identity(form, eig.lam, eig.phi, fs.functions[i], fs.functions[j]))
    verdict(5, worst <= 1e-6 and res <= 1e-10, f"worst relative defect={worst:.2e} eigen residual / lambda={res:.1e}")


def test_c06_semigroup_limit(ellipse):
    t0 = time.perf_counter()
    E = semigroup_convergence(ellipse, EPS, semigroup_test_functions, [0.1, 0.5, 1.0], 128, 16)
    dt = time.perf_counter() - t0
    mono = bool(np.all(np.diff(E, axis=0) <= 0))
    ratio = float((E[-1] / E[0]).max())
    verdict(6, mono and ratio < 1 / 3 and dt < 600, f"monotone={mono} worst final/initial={ratio:.3f} time={dt:.0f}s")


def test_c07_ultracontractivity(flat, ellipse):
    t = log_times(0.05, 1.0, 16)
    _, slopes, N, slack = ultracontractivity_fit(flat, EPS, t, 128, 16)
    _, es, eN, eslack = ultracontractivity_fit(ellipse, EPS, t, 128, 16)
    info(7, f"ellipse: slopes={np.round(es, 3).tolist()} N={eN:.4g} slack={np.round(eslack, 4).tolist()}")
    ok = abs(slopes[0] + 0.75) <= 0.07 and min(slack) >= -1e-8
    verdict(7, ok, f"flat slope={slopes[0]:.4f} N={N:.4g} slack at eps={EPS[1:]}: {np.round(slack[1:], 4).tolist()}")


def test_c08_subgaussian(ellipse):
    t0 = time.perf_counter()
    t = [float(x) for x in log_times(0.05, 1.0, 6, sub=1)]
    fit = subgaussian_verify(ellipse, EPS, t, 128, 16, n_sources=64, rng=np.random.default_rng(1), rel_tol=1e-8)
    dt = time.perf_counter() - t0
    ok = not fit.violations and dt < 1200
    verdict(8, ok, f"C={fit.C:.4g} B={fit.B:.4g} violations={len(fit.violations)} min slack={fit.min_slack} time={dt:.0f}s")


def test_c09_markov(ellipse):
    rng = np.random.default_rng(0)
    out = []
    for e in EPS:
        form = assemble_H(build_grid(ellipse, 128, 16, e), "nu")
        prop = Propagator(form, 0.1, shift=LAMBDA0 / e**2)
        out += [markov_checks(form, t, 100, rng, prop) for t in (0.1, 0.5, 1.0)]
    nv = sum(m["violations"] for m in out)
    verdict(9, nv == 0, f"{len(out)} (eps, t) pairs, violations={nv}, min value={min(m['min_value'] for m in out):.2e}, max ratio={max(m['max_ratio'] for m in out):.12f}")


def test_c10_logsobolev_rosen(ellipse):
    builder = lambda g: make_test_functions(g, 200, 7)  # noqa: E731
    grid = np.geomspace(0.01, 1.0, 25)
    c, ls = logsobolev_fit_verify(ellipse, EPS, grid, builder, 128, 32)
    k, rs = rosen_check(ellipse, EPS, grid, builder, 128, 32)
    lsv = {e: (len(r.violations), f"{r.min_slack:.2e}") for e, r in ls.items()}
    rsv = {e: (len(r.violations), f"{r.min_slack:.2e}") for e, r in rs.items()}
    ok = all(r.passed for r in ls.values()) and all(r.passed for r in rs.values())
    verdict(10, ok, f"log-Sobolev c={c:.4g} (violations, min slack) {lsv}; Rosen {rsv}")


def test_c11a_circle_anchor(circle):
    try:
        b = condition_rejection(circle, 0.05, 1.0, 1e-3, 100000, seed=1, record_every=100)
    except AcceptanceError as exc:
        verdict(11, False, f"(a) circle rejection at eps=0.05, T=1 refused: {exc}")
    m = marginal_stat(b, np.cos, 1.0)
    z = abs(m.mean - math.exp(-0.5)) / m.stderr
    verdict(11, z <= 3, f"(a) E cos(s_1)={m.mean:.5f} +- {m.stderr:.1e} z={z:.2f}")


def test_c11b_ellipse_limit(ellipse):
    L = ellipse.total_length
    obs = [("cos1", lambda s: np.cos(2 * np.pi * s / L)), ("sin1", lambda s: np.sin(2 * np.pi * s / L)), ("cos2", lambda s: np.cos(4 * np.pi * s / L))]
    lim = limit_sampler(ellipse, 1.0, 1e-3, 100000, seed=5, record_every=250)
    H = condition_htransform(ellipse, 0.05, 1.0, 256, 8, 0.25, 100000, seed=6)
    zs = {(n, t): z_score(marginal_stat(H, f, t), marginal_stat(lim, f, t)) for n, f in obs for t in (0.25, 0.5)}
    worst = max(zs.values())
    verdict(11, worst <= 3, f"(b) ellipse eps=0.05 conditioned vs limit, worst z={worst:.2f} over {len(zs)} (observable, t)")


def test_c11c_sampler_agreement(circle):
    R = condition_rejection(circle, 0.3, 0.25, 1e-3, 100000, seed=2, record_every=25)
    H = condition_htransform(circle, 0.3, 0.25, 128, 32, 0.025, 100000, seed=3)
    zs = [z_score(marginal_stat(R, f, t), marginal_stat(H, f, t)) for f in (np.cos, np.sin, lambda s: np.cos(2 * s)) for t in (0.1, 0.2)]
    verdict(11, max(zs) <= 3, f"(c) circle eps=0.3 rejection vs h-transform, worst z={max(zs):.2f}, acceptance={R.acceptance:.3f}")


def test_c12_modulus(ellipse, flat):
    lags = [0.02, 0.04, 0.08, 0.16, 0.32]
    B = {e: condition_htransform(ellipse, e, 0.6, 512, 8, 0.02, 50000, seed=7 + i) for i, e in enumerate(EPS)}
    r = modulus_sweep(B, 0.2, lags, 4, 1.5)
    F = condition_rejection(flat, 1.0, 0.52, 1e-3, 100000, seed=8, record_every=20)
    fs = modulus_sweep({1.0: F}, 0.2, lags, 4, 4.0)["slopes"][1.0]
    worst = min(r["slopes"].values())
    ok = worst >= 1.3 and not r["violations"] and abs(fs - 4) <= 0.1
    verdict(12, ok, f"slopes={ {e: round(s, 3) for e, s in r['slopes'].items()} } K={r['K']:.4g} violations={len(r['violations'])} flat slope={fs:.3f}")


def test_c13_determinism(tmp_path):
    cfg = str(CONFIGS / "flat_smoke.cfg")
    a, b = tmp_path / "a", tmp_path / "b"
    codes = [cli.main(["all", "--config", cfg, "--out", str(d), "-q"]) for d in (a, b)]
    names = sorted(p.name for p in a.iterdir())
    _, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    ok = codes == [0, 0] and names == sorted(p.name for p in b.iterdir()) and not mismatch and not errors
    verdict(13, ok, f"{len(names)} artifacts, mismatched={mismatch + errors}")
