"""Functional inequalities of the ground-state transformed tube forms, checked on grids.

Conventions: ``B0(u, w) = u^T (A - lambda M) w`` is the form renormalized by
the ground eigenvalue; weighted norms use ``phi^2 w_Sa``; every slack is
``RHS - LHS`` (or ``LHS - RHS`` for lower bounds) so that ``slack >= 0``
means the inequality holds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .discretize import LAMBDA0, FormOperator, assemble_H, assemble_sasaki, build_grid, edge_bilinear, grad_norm_eps, phi0, renormalize
from .geometry import boundary_distance
from .heatkernel import smoothed_distance
from .spectral import SpectralConfig, ground_state

__all__ = [
    "TestFunctionSet",
    "InequalityReport",
    "make_test_functions",
    "hardy_check",
    "gs_transform_identity",
    "power_identity_check",
    "weighted_form_bounds",
    "entropy",
    "logsobolev_fit_verify",
    "rosen_check",
    "basic_function",
]


@dataclass(frozen=True, eq=False)
class TestFunctionSet:
    """Grid functions on the interior nodes; values at ``|v| = 1`` are zero by elimination."""

    functions: tuple
    ids: tuple
    nonneg: np.ndarray
    seed: int

    __test__ = False  # not a pytest class

    @property
    def count(self) -> int:
        return len(self.functions)

    def nonnegative(self):
        return [(i, f) for i, f, ok in zip(self.ids, self.functions, self.nonneg) if ok]


@dataclass
class InequalityReport:
    id: str
    trials: int
    min_slack: float
    worst: str = ""
    fitted_constants: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    def __post_init__(self):
        if self.trials <= 0:
            raise ValueError("a report needs at least one trial")

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "trials": self.trials,
            "min_slack": self.min_slack,
            "fitted_constants": self.fitted_constants,
            "violations": self.violations,
        }


def make_test_functions(grid, count: int, seed: int, n_modes: int = 6) -> TestFunctionSet:
    """Random Fourier-fiber tensor functions plus adversarial members.

    Random members are ``sum a_kj e_k(s) sin(j pi (v+1)/2)`` with decaying
    Gaussian coefficients (every fiber factor vanishes at ``|v| = 1``).  Every
    third random member is replaced by a nonnegative one,
    ``phi0(v)^r exp(g(s, v))`` with ``g`` a smooth random field.
    Adversarial members: ``phi0``, boundary-concentrated bumps, functions that
    vanish quadratically at the boundary, basic functions ``h o pi`` and a
    near-delta.
    """
    rng = np.random.default_rng(seed)
    S, V = grid.mesh()
    x = 2 * np.pi * S / grid.curve.total_length
    dlt = 1.0 - np.abs(V)
    adv = {
        "phi0": phi0(V),
        "phi0_cos": phi0(V) * (1.2 + np.cos(x)),
        "bump_top_w0.05": dlt * np.exp(-dlt / 0.05) * (1.1 + np.cos(x)) * (V > 0),
        "bump_both_w0.1": dlt * np.exp(-dlt / 0.1) * (1.5 + np.sin(2 * x)),
        "bump_edge_node": (np.abs(V) == np.abs(V).max()) * (1.0 + 0.5 * np.cos(x)),
        "quadratic_vanish": dlt**2 * (1.0 + 0.3 * np.cos(3 * x)),
        "basic_cos": np.cos(x) + 0 * V,
        "basic_const": np.ones_like(V),
        "near_delta": np.exp(-((x - np.pi) ** 2 + (V - 0.9) ** 2) / 0.005),
        "fiber_mode_3": np.cos(1.5 * np.pi * V),
    }
    funcs, ids, nonneg = [], [], []
    for k, f in adv.items():
        funcs.append(np.asarray(f, float))
        ids.append(k)
        nonneg.append(bool(np.all(f >= 0)))
    n_rand = max(count - len(funcs), 0)
    ks = np.arange(n_modes)
    js = np.arange(1, n_modes + 1)
    basis_s = [np.cos(k * x) for k in ks] + [np.sin(k * x) for k in ks[1:]]
    kdecay = np.concatenate([1.0 / (1 + ks), 1.0 / (1 + ks[1:])])
    fib = [np.sin(j * np.pi * (V + 1) / 2) for j in js]
    for r in range(n_rand):
        coef = rng.standard_normal((len(basis_s), len(fib))) * kdecay[:, None] / js[None, :] ** 1.5
        if r % 3 == 2:
            c2 = rng.standard_normal((len(basis_s), 3)) * kdecay[:, None]
            g = sum(c2[a, b] * basis_s[a] * np.cos(b * np.pi * V / 2) for a in range(len(basis_s)) for b in range(3))
            f = phi0(V) ** rng.integers(1, 3) * np.exp(0.5 * g)
            funcs.append(f)
            nonneg.append(True)
        else:
            f = sum(coef[a, b] * basis_s[a] * fib[b] for a in range(len(basis_s)) for b in range(len(fib)))
            funcs.append(f)
            nonneg.append(bool(np.all(f >= 0)))
        ids.append(f"random_{r}")
    return TestFunctionSet(tuple(funcs), tuple(ids), np.asarray(nonneg), seed)


def hardy_check(grid, fs: TestFunctionSet, tol: float = 1e-10) -> InequalityReport:
    """``int |df|^2 dmu_Sa >= 1/4 int f^2 / delta^2 dmu_Sa`` with the Sasaki stiffness.

    Slack is normalized by ``||f||^2`` to make the tolerance scale-free.
    """
    form = assemble_sasaki(grid)
    inv_d2 = (1.0 / boundary_distance(grid.v) ** 2)[None, :] * grid.w_sa
    worst, worst_id, viol = np.inf, "", []
    for fid, f in zip(fs.ids, fs.functions):
        lhs = form.quadratic(f)
        rhs = 0.25 * float(np.sum(f**2 * inv_d2))
        nrm = float(np.sum(f**2 * grid.w_sa))
        sl = (lhs - rhs) / nrm
        if sl < worst:
            worst, worst_id = sl, fid
        if sl < -tol:
            viol.append({"f": fid, "slack": sl})
    return InequalityReport("hardy", fs.count, worst, worst_id, {}, viol)


def _B0(form: FormOperator, lam: float, u, w) -> float:
    u, w = np.ravel(u), np.ravel(w)
    return float(u @ (form.stiffness @ w) - lam * np.sum(u * form.mass * w))


def gs_transform_identity(form: FormOperator, lam: float, phi, f, g) -> float:
    """Relative defect of ``B0(phi f, phi g) = int phi^2 <df, dg>``.

    ``form`` is the raw (un-renormalized) form and ``lam`` its ground
    eigenvalue.  The defect is scaled by ``sqrt(R(f,f) R(g,g))``, the
    Cauchy-Schwarz size of the right side, so it stays meaningful when the
    pairing itself is near zero.
    """
    lhs = _B0(form, lam, np.ravel(phi) * np.ravel(f), np.ravel(phi) * np.ravel(g))
    rhs = edge_bilinear(form, f, g, weight=phi)
    scale = math.sqrt(abs(edge_bilinear(form, f, f, weight=phi)) * abs(edge_bilinear(form, g, g, weight=phi)))
    if scale == 0:
        return abs(lhs - rhs)
    return abs(lhs - rhs) / scale


def power_identity_check(form: FormOperator, lam: float, phi, f, p: int) -> float:
    """Relative defect of ``B0(phi f^{p/2}, phi f^{p/2}) = p^2/(4(p-1)) B0(phi f, phi f^{p-1})``."""
    if p not in (2, 4, 8):
        raise ValueError("p must be one of 2, 4, 8")
    phi, f = np.ravel(phi), np.ravel(f)
    u = phi * f ** (p // 2)
    lhs = _B0(form, lam, u, u)
    rhs = p**2 / (4 * (p - 1)) * _B0(form, lam, phi * f, phi * f ** (p - 1))
    # both sides vanish for constant f; the eigen residual then sets the level of B0
    floor = 1e-8 * abs(lam) * float(np.sum(u * u * form.mass))
    scale = max(abs(lhs), abs(rhs), floor)
    return 0.0 if scale == 0 else abs(lhs - rhs) / scale


def _wnorm_p(f, phi, w, p) -> float:
    return float(np.sum(np.ravel(f) ** p * np.ravel(phi) ** 2 * np.ravel(w)))


def weighted_form_bounds(form: FormOperator, lam: float, phi, fs, h_basic, a_list, p_list, tol: float = 1e-6) -> InequalityReport:
    """``B0(e^{ah} phi f, e^{-ah} phi f^{p-1}) + a^2 p/2 ||f||_p^p >= (2/p) B0(phi f^{p/2}, phi f^{p/2})``.

    ``h_basic`` is a node array already scaled so that ``||dh||_eps <= 1``.
    ``fs`` is a list of ``(id, f)`` with ``f >= 0``.  Slack is relative to
    ``||f||_p^p + (2/p) |B0(phi f^{p/2}, phi f^{p/2})|``.
    """
    phi = np.ravel(phi)
    h = np.ravel(h_basic)
    w = form.mass
    worst, worst_id, viol, trials = np.inf, "", [], 0
    for fid, f in fs:
        f = np.ravel(f)
        for p in p_list:
            rhs = (2.0 / p) * _B0(form, lam, phi * f ** (p // 2), phi * f ** (p // 2))
            npp = _wnorm_p(f, phi, w, p)
            for a in a_list:
                lhs = _B0(form, lam, np.exp(a * h) * phi * f, np.exp(-a * h) * phi * f ** (p - 1)) + a * a * p / 2 * npp
                sl = (lhs - rhs) / (npp + abs(rhs))
                trials += 1
                if sl < worst:
                    worst, worst_id = sl, f"{fid} a={a} p={p}"
                if sl < -tol:
                    viol.append({"f": fid, "a": a, "p": p, "slack": sl})
    return InequalityReport("weighted_form", max(trials, 1), worst, worst_id, {}, viol)


def entropy(f, p: int, weight) -> float:
    """``int f^p log(f / ||f||_p) d(weight)`` with ``0 log 0 = 0``."""
    f = np.ravel(np.asarray(f, float))
    w = np.ravel(np.broadcast_to(weight, np.shape(f)))
    if np.any(f < 0):
        raise ValueError("entropy needs f >= 0")
    fp = f**p
    norm_p = np.sum(fp * w) ** (1.0 / p)
    if norm_p == 0:
        raise ValueError("entropy of the zero function")
    pos = f > 0
    return float(np.sum(fp[pos] * np.log(f[pos] / norm_p) * w[pos]))


def _ls_terms(form0: FormOperator, f, alpha):
    """(entropy, q0 + alpha ||f||^2, ||f||^2) with ``q0`` renormalized by ``lambda_0 / eps^2``."""
    a = np.abs(np.ravel(f))
    w = form0.mass
    n2 = float(np.sum(a * a * w))
    return entropy(a, 2, w), form0.quadratic(a) + alpha * n2, n2


def logsobolev_fit_verify(curve, eps_list, theta_grid, fs_builder, N_s, N_v, alpha=None, m: int = 2, tol: float = 1e-8, kind: str = "nu"):
    """Fit ``c`` at ``eps_list[0]`` in ``E_2(f) <= (theta/2) q(f) + beta(theta) ||f||^2``, verify below.

    ``beta(theta) = c - (m+1)/4 log(theta) - (theta/2)(lambda_0/eps^2 - alpha)``.  The
    check uses ``|f|`` (the form is a Dirichlet form, so ``q(|f|) <= q(f)``).
    ``fs_builder(grid)`` returns a ``TestFunctionSet``.  Slacks are per unit
    ``||f||^2``.
    """
    alpha = LAMBDA0 + 1 if alpha is None else alpha
    th = np.asarray(theta_grid, float)
    k = (m + 1) / 4

    def values(eps):
        grid = build_grid(curve, N_s, N_v, eps)
        form0 = renormalize(assemble_H(grid, kind), "lambda0_over_eps2")
        fs = fs_builder(grid)
        out = []
        for fid, f in zip(fs.ids, fs.functions):
            E, Q, n2 = _ls_terms(form0, f, alpha)
            # c needed for each theta
            out.append((fid, E / n2 - 0.5 * th * Q / n2 + k * np.log(th)))
        return out

    fit_vals = values(eps_list[0])
    c = max(float(v.max()) for _, v in fit_vals)
    reports = {}
    for eps in eps_list:
        vals = fit_vals if eps == eps_list[0] else values(eps)
        worst, worst_id, viol = np.inf, "", []
        for fid, v in vals:
            sl = c - v
            i = int(np.argmin(sl))
            if sl[i] < worst:
                worst, worst_id = float(sl[i]), f"{fid} theta={th[i]:.4g}"
            for j in np.nonzero(sl < -tol)[0]:
                viol.append({"f": fid, "theta": float(th[j]), "eps": eps, "slack": float(sl[j])})
        reports[eps] = InequalityReport("log_sobolev", len(vals) * th.size, worst, worst_id, {"c": c, "alpha": alpha}, viol)
    return c, reports


def _rosen_terms(form: FormOperator, lam: float, phi, f, p: int):
    phi, f = np.ravel(phi), np.ravel(f)
    w = form.mass
    lhs = -float(np.sum(phi**2 * f**p * np.log(phi) * w))
    b = _B0(form, lam, phi * f ** (p // 2), phi * f ** (p // 2))
    return lhs, b, _wnorm_p(f, phi, w, p)


def _upper_line(tau, g):
    """Cheapest ``k1 + k2 tau >= g(tau)`` on the grid (``k2 >= 0``), by linear programming."""
    res = linprog(c=[tau.size, tau.sum()], A_ub=-np.column_stack([np.ones_like(tau), tau]), b_ub=-g, bounds=[(None, None), (0, None)], method="highs")
    if not res.success:
        raise RuntimeError(f"linear program failed: {res.message}")
    k1, k2 = res.x
    # nudge onto the feasible side against solver round-off
    k1 += max(0.0, float((g - (k1 + k2 * tau)).max()))
    return float(k1), float(k2)


def rosen_check(curve, eps_list, tau_grid, fs_builder, N_s, N_v, p_list=(2, 4), tol: float = 1e-8, kind: str = "nu"):
    """Fit ``(k1, k2)`` at ``eps_list[0]``, verify ``-int phi^2 f^p log phi <= tau B0 + nu(tau) ||f||^p``.

    ``nu(tau) = k1 + k2 tau - 1/2 log tau``; one line per ``p``.  Test functions
    are the nonnegative members of ``fs_builder(grid)``.
    """
    tau = np.asarray(tau_grid, float)

    def values(eps):
        grid = build_grid(curve, N_s, N_v, eps)
        form = assemble_H(grid, kind)
        eig = ground_state(form, SpectralConfig())
        fs = fs_builder(grid)
        out = {p: [] for p in p_list}
        for fid, f in fs.nonnegative():
            for p in p_list:
                lhs, b, npp = _rosen_terms(form, eig.lam, eig.phi, f, p)
                out[p].append((fid, lhs / npp - tau * b / npp + 0.5 * np.log(tau)))
        return out

    fit_vals = values(eps_list[0])
    consts = {}
    for p in p_list:
        g = np.max(np.vstack([v for _, v in fit_vals[p]]), axis=0)
        consts[p] = _upper_line(tau, g)
    reports = {}
    for eps in eps_list:
        vals = fit_vals if eps == eps_list[0] else values(eps)
        worst, worst_id, viol, trials = np.inf, "", [], 0
        for p in p_list:
            k1, k2 = consts[p]
            for fid, v in vals[p]:
                sl = k1 + k2 * tau - v
                trials += tau.size
                i = int(np.argmin(sl))
                if sl[i] < worst:
                    worst, worst_id = float(sl[i]), f"{fid} p={p} tau={tau[i]:.4g}"
                for j in np.nonzero(sl < -tol)[0]:
                    viol.append({"f": fid, "p": p, "tau": float(tau[j]), "eps": eps, "slack": float(sl[j])})
        fitted = {f"k1_p{p}": consts[p][0] for p in p_list} | {f"k2_p{p}": consts[p][1] for p in p_list}
        reports[eps] = InequalityReport("rosen", trials, worst, worst_id, fitted, viol)
    return consts, reports


def basic_function(form: FormOperator, s0: float | None = None) -> np.ndarray:
    """Smoothed arc distance ``h o pi`` scaled so that ``||dh||_eps <= 1`` on the form's grid."""
    grid = form.grid
    s0 = grid.curve.total_length / 4 if s0 is None else s0
    h = np.repeat(smoothed_distance(grid, s0), grid.N_v - 1)
    g = float(grad_norm_eps(form, h, boundary="neumann").max())
    return h / max(g, 1.0)
