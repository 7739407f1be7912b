"""Ground eigenpairs of the tube forms and their small-eps asymptotics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretize import (
    LAMBDA0,
    FormOperator,
    assemble_direct,
    assemble_H,
    assemble_sasaki,
    build_grid,
    fiber_denominator,
    grad_norm_eps,
    phi0,
)
from .geometry import CurveGeometry, boundary_distance, potential_U

__all__ = [
    "ConvergenceError",
    "EigenPair",
    "SpectralConfig",
    "ground_state",
    "lowest_eigenpairs",
    "flat_ball_mode",
    "interval_ground_state",
    "base_schrodinger_oracle",
    "base_ground_mode",
    "eigen_gap_sweep",
    "extrapolate_limit",
    "envelope_fit",
    "ground_state_convergence",
]


class ConvergenceError(RuntimeError):
    """Iterative solver did not reach the requested tolerance."""


@dataclass(frozen=True, eq=False)
class EigenPair:
    lam: float
    phi: np.ndarray
    residual: float
    lam2: float = np.nan
    iterations: int = 0

    @property
    def gap(self) -> float:
        return self.lam2 - self.lam


@dataclass(frozen=True)
class SpectralConfig:
    tol: float = 1e-10
    max_iter: int = 500
    shift: str = "phi0"  # or "zero"
    k: int = 2
    block: int = 6

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.k < 1 or self.block < self.k:
            raise ValueError("need 1 <= k <= block")


def _residuals(A, m, lam, X):
    R = A @ X - (m[:, None] * X) * lam[None, :]
    return np.linalg.norm(R, axis=0) / np.linalg.norm(m[:, None] * X, axis=0)


def _start_block(form: FormOperator, b: int) -> np.ndarray:
    """Deterministic start: fiber ground mode times low base harmonics."""
    g = form.grid
    p = np.broadcast_to(phi0(g.v), g.shape)
    x = 2 * np.pi * g.s / g.curve.total_length
    cols = [p]
    k = 1
    while len(cols) < b:
        cols.append(p * np.cos(k * x)[:, None])
        if len(cols) < b:
            cols.append(p * np.sin(k * x)[:, None])
        k += 1
    return np.column_stack([c.ravel() for c in cols])


def lowest_eigenpairs(form: FormOperator, cfg: SpectralConfig = SpectralConfig()):
    """Lowest ``cfg.k`` eigenpairs of ``A x = lam M x`` by shift-and-invert subspace iteration.

    The shift sits just below the Rayleigh quotient of the fiber-mode start
    vector, so the iteration count does not grow as the spectrum moves up
    like ``eps^-2``.  Inner solves use one sparse LU factorization.
    """
    A = form.stiffness
    m = form.mass
    X = _start_block(form, cfg.block)
    x0 = X[:, 0]
    rq = float(x0 @ (A @ x0)) / float(x0 @ (m * x0))
    if cfg.shift == "phi0":
        sigma = rq - max(1.0, 1e-3 * abs(rq))
    elif cfg.shift == "zero":
        sigma = 0.0
    else:
        raise ValueError(f"unknown shift strategy {cfg.shift!r}")
    lu = spla.splu((A - sp.diags(sigma * m)).tocsc())
    # residuals cannot go below the rounding level of the matvec itself
    floor = 8 * np.finfo(float).eps * float(abs(A).sum(axis=1).max() / m.min())
    tol = max(cfg.tol, floor)
    res = np.full(cfg.k, np.inf)
    for it in range(1, cfg.max_iter + 1):
        Y = lu.solve(m[:, None] * X)
        Q, _ = np.linalg.qr(np.sqrt(m)[:, None] * Y)
        Y = Q / np.sqrt(m)[:, None]
        Ar = Y.T @ (A @ Y)
        Mr = Y.T @ (m[:, None] * Y)
        lam, C = sla.eigh(0.5 * (Ar + Ar.T), 0.5 * (Mr + Mr.T))
        X = Y @ C
        res = _residuals(A, m, lam[: cfg.k], X[:, : cfg.k])
        if np.all(res <= tol):
            return lam[: cfg.k], X[:, : cfg.k], res, it
    raise ConvergenceError(f"subspace iteration stalled after {cfg.max_iter} iterations, residuals {res}")


def ground_state(form: FormOperator, cfg: SpectralConfig = SpectralConfig()) -> EigenPair:
    """Smallest eigenvalue with a nonnegative eigenvector normalized in the form's mass."""
    lam, X, res, it = lowest_eigenpairs(form, cfg)
    phi = X[:, 0]
    if phi.sum() < 0:
        phi = -phi
    phi = phi / np.sqrt(np.sum(phi**2 * form.mass))
    if phi.min() < -1e-12:
        raise ConvergenceError(f"ground state changes sign (min {phi.min():.3e}); discretization failure")
    lam2 = float(lam[1]) if lam.size > 1 else np.nan
    if lam.size > 1 and not lam2 > lam[0]:
        raise ConvergenceError("ground state is not simple")
    return EigenPair(float(lam[0]), phi.reshape(form.grid.shape), float(res[0]), lam2, it)


def flat_ball_mode(v=None) -> EigenPair:
    """Dirichlet ground mode of the unit interval: ``pi^2/4`` and ``cos(pi v / 2)``."""
    vals = np.empty(0) if v is None else phi0(v)
    return EigenPair(LAMBDA0, vals, 0.0, 9 * LAMBDA0)


def interval_ground_state(N_v: int, fitted: bool = False) -> EigenPair:
    """Ground pair of the 1-D Dirichlet stencil on ``(-1, 1)`` with ``N_v`` cells.

    ``fitted=False`` uses the plain ``h^2`` denominator (second-order accurate);
    ``fitted=True`` the fiber denominator used by the tube forms.
    """
    h = 2.0 / N_v
    d = fiber_denominator(h) if fitted else h * h
    n = N_v - 1
    lam, vec = sla.eigh_tridiagonal(np.full(n, 2.0 / d), np.full(n - 1, -1.0 / d), select="i", select_range=(0, 1))
    phi = vec[:, 0] * np.sign(vec[:, 0].sum())
    phi /= np.sqrt(np.sum(phi**2) * h)
    return EigenPair(float(lam[0]), phi, 0.0, float(lam[1]))


def _base_galerkin(curve: CurveGeometry, sign: float, n_modes: int):
    L = curve.total_length
    N = 8 * n_modes
    s = L * np.arange(N) / N
    V = sign * potential_U(curve, s, np.zeros_like(s))
    Vh = np.fft.fft(V) / N
    k = np.arange(-n_modes, n_modes + 1)
    H = Vh[(k[:, None] - k[None, :]) % N].astype(complex)
    H[np.diag_indices_from(H)] += (2 * np.pi * k / L) ** 2
    lam, vec = sla.eigh(0.5 * (H + H.conj().T), subset_by_index=[0, 0])
    return float(lam[0]), k, vec[:, 0]


def base_schrodinger_oracle(curve: CurveGeometry, sign: float = 1.0, n_modes: int = 128) -> float:
    """Bottom of ``-d^2/ds^2 + sign * U|_L`` on the periodic base, by Fourier-Galerkin.

    ``U|_L = kappa^2/4``.  Independent of the finite-difference machinery: the
    potential is sampled on a fine grid and its Fourier coefficients build the
    Galerkin matrix in the exponential basis.
    """
    return _base_galerkin(curve, sign, n_modes)[0]


def base_ground_mode(curve: CurveGeometry, s, sign: float = 1.0, n_modes: int = 128) -> np.ndarray:
    """Positive ground mode of ``-d^2/ds^2 + sign * U|_L`` at ``s``, unit norm in ``L^2(ds)``."""
    L = curve.total_length
    _, k, c = _base_galerkin(curve, sign, n_modes)
    c = c / c[n_modes]  # the mean coefficient of a positive function is real and nonzero
    psi = np.real(np.exp(2j * np.pi * np.outer(np.asarray(s, float), k) / L) @ c)
    return psi / np.sqrt(L * np.sum(np.abs(c) ** 2))


def extrapolate_limit(eps, gaps):
    """Limit and order of ``g(eps) = g0 + a eps^p`` from the last three points.

    For a geometric eps sequence with ratio r, ``p = log(d1/d2)/log(1/r)``
    with ``d`` the successive differences, and ``g0`` follows by Aitken
    acceleration.  Returns ``(g0, p)``; ``p`` is nan when differences vanish.
    """
    eps = np.asarray(eps, float)
    g = np.asarray(gaps, float)
    if g.size < 3:
        return float(g[-1]), np.nan
    e1, e2, e3 = eps[-3:]
    g1, g2, g3 = g[-3:]
    d1, d2 = g1 - g2, g2 - g3
    if d1 == 0 or d2 == 0 or np.sign(d1) != np.sign(d2):
        return float(g3), np.nan
    # solve (e1^p - e2^p)/(e2^p - e3^p) = d1/d2 for p
    from scipy.optimize import brentq

    f = lambda p: np.log((e1**p - e2**p) / (e2**p - e3**p)) - np.log(d1 / d2)
    try:
        p = brentq(f, 0.05, 12.0)
    except ValueError:
        return float(g3), np.nan
    a = d2 / (e2**p - e3**p)
    return float(g3 - a * e3**p), float(p)


def envelope_fit(eig: EigenPair, grid) -> tuple[float, float]:
    """``c = min phi/delta``, ``C = max phi/delta`` over interior nodes."""
    ratio = eig.phi / boundary_distance(grid.v)[None, :]
    return float(ratio.min()), float(ratio.max())


@dataclass
class SweepRow:
    eps: float
    lam: float
    gap: float
    c_env: float
    C_env: float
    l2_dist: float
    residual: float
    h1_dist: float = np.nan
    extra: dict = field(default_factory=dict)

    def csv_fields(self):
        return (self.eps, self.lam, self.gap, self.c_env, self.C_env, self.l2_dist, self.residual)


def _reference_mode(grid) -> np.ndarray:
    return np.broadcast_to(phi0(grid.v) / np.sqrt(grid.curve.total_length), grid.shape)


def eigen_gap_sweep(
    curve: CurveGeometry,
    eps_list,
    N_s: int,
    N_v: int,
    kind: str = "nu",
    route: str = "unit",
    cfg: SpectralConfig = SpectralConfig(),
) -> list[SweepRow]:
    """Per-eps ground pair, gap ``lambda_eps - lambda_0/eps^2``, envelope and distance to the limit mode."""
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing")
    rows = []
    for eps in eps_list:
        if route == "unit":
            form = assemble_H(build_grid(curve, N_s, N_v, eps), kind)
        else:
            form = assemble_direct(curve, eps, N_s, N_v, kind)
        eig = ground_state(form, cfg)
        c, C = envelope_fit(eig, form.grid)
        diff = eig.phi - _reference_mode(form.grid)
        l2 = float(np.sqrt(np.sum(diff**2 * form.mass.reshape(form.grid.shape))))
        sas = assemble_sasaki(form.grid)
        h1 = float(np.sqrt(l2**2 + sas.quadratic(diff)))
        rows.append(SweepRow(eps, eig.lam, eig.lam - LAMBDA0 / eps**2, c, C, l2, eig.residual, h1, {"lam2": eig.lam2}))
    return rows


def ground_state_convergence(curve: CurveGeometry, eps_list, N_s: int, N_v: int, kind: str = "nu", cfg: SpectralConfig = SpectralConfig()):
    """Table of ``(eps, L2 distance, H1 distance, sup gradient gap)`` to the limit mode.

    The limit mode is ``phi0(v) psi(s)`` with ``psi`` the base ground mode:
    constant ``1/sqrt(Lambda)`` for ``kind="nu"``, and the ground mode of
    ``-d^2/ds^2 - kappa^2/4`` for ``kind="plain"``.
    """
    out = []
    for eps in eps_list:
        form = assemble_H(build_grid(curve, N_s, N_v, eps), kind)
        eig = ground_state(form, cfg)
        g = form.grid
        if kind == "plain":
            ref = np.outer(base_ground_mode(curve, g.s, sign=-1.0), phi0(g.v))
        else:
            ref = _reference_mode(g)
        diff = eig.phi - ref
        l2 = float(np.sqrt(np.sum(diff**2 * form.grid.w_sa)))
        sas = assemble_sasaki(form.grid)
        h1 = float(np.sqrt(l2**2 + sas.quadratic(diff)))
        sup_grad = float(grad_norm_eps(sas, diff).max())
        out.append((float(eps), l2, h1, sup_grad))
    return out
