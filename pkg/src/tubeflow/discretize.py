"""Finite-difference forms on the unit tube ``L(1) = S^1_L x (-1, 1)``.

Grid functions live on the interior nodes ``(s_i, v_j)``, ``i = 0..N_s-1``
(periodic) and ``j = 1..N_v-1``; the Dirichlet nodes ``v = +-1`` are
eliminated.  Arrays have shape ``(N_s, N_v - 1)`` and are flattened in C
order when a matrix acts on them.

Every form is assembled from an explicit edge list, so the stiffness matrix
is an exact sum of rank-one edge terms plus a diagonal:

    q(f) = sum_e w_e (f_a - f_b)^2 + sum_a d_a f_a^2

The edge weights are the staggered (midpoint) coefficients of the continuum
form.  The fiber second difference uses the fitted denominator
``eta^2 = (4/w^2) sin^2(w h_v / 2)`` with ``w = pi/2``, which makes the
discrete fiber ground energy equal to ``pi^2/4`` exactly while keeping every
off-diagonal entry nonpositive.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .geometry import ChartError, CurveGeometry, density_rho, potential_U

LAMBDA0 = np.pi**2 / 4

__all__ = [
    "LAMBDA0",
    "TubeGrid",
    "FormOperator",
    "phi0",
    "fiber_denominator",
    "build_grid",
    "assemble_H",
    "assemble_sasaki",
    "assemble_direct",
    "renormalize",
    "assemble_laplace_L",
    "project_E0",
    "grad_norm_eps",
    "sigma_eps",
    "sigma_eps_inverse",
    "bilinear",
    "edge_bilinear",
]


def phi0(v):
    """Normalized Dirichlet ground mode of the unit fiber ``(-1, 1)``."""
    return np.cos(0.5 * np.pi * np.asarray(v, dtype=float))


def fiber_denominator(h_v: float) -> float:
    w = 0.5 * np.pi
    return (4.0 / w**2) * np.sin(0.5 * w * h_v) ** 2


@dataclass(frozen=True, eq=False)
class TubeGrid:
    curve: CurveGeometry
    N_s: int
    N_v: int
    eps: float
    s: np.ndarray
    v: np.ndarray
    h_s: float
    h_v: float
    rho: np.ndarray  # at nodes, physical offset eps * v
    w_sa: np.ndarray
    w_mu: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (self.N_s, self.N_v - 1)

    @property
    def size(self) -> int:
        return self.N_s * (self.N_v - 1)

    @property
    def delta(self) -> np.ndarray:
        return np.broadcast_to(1.0 - np.abs(self.v), self.shape)

    @property
    def phi0(self) -> np.ndarray:
        return np.broadcast_to(phi0(self.v), self.shape)

    def mesh(self):
        return np.meshgrid(self.s, self.v, indexing="ij")

    def with_eps(self, eps: float) -> "TubeGrid":
        return build_grid(self.curve, self.N_s, self.N_v, eps)


@dataclass(frozen=True, eq=False)
class FormOperator:
    """Symmetric stiffness plus diagonal mass, with the edge data that built it.

    ``renormalization`` is the constant already subtracted (times the mass).
    """

    stiffness: sp.csr_matrix
    mass: np.ndarray
    epsilon: float
    grid: TubeGrid
    edges: tuple[np.ndarray, np.ndarray, np.ndarray]
    boundary: np.ndarray
    potential: np.ndarray
    renormalization: float = 0.0
    kind: str = "nu"
    space: str = "unit"
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.mass.size

    def quadratic(self, f) -> float:
        f = np.ravel(f)
        return float(f @ (self.stiffness @ f))

    def norm2(self, f) -> float:
        f = np.ravel(f)
        return float(f @ (self.mass * f))


def build_grid(curve: CurveGeometry, N_s: int, N_v: int, eps: float) -> TubeGrid:
    if N_s < 16 or N_v < 8:
        raise ValueError(f"grid too coarse: N_s={N_s} (>=16), N_v={N_v} (>=8)")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if eps * curve.max_curvature >= 1:
        raise ChartError(f"eps={eps} violates eps * kappa_max < 1")
    h_s = curve.total_length / N_s
    h_v = 2.0 / N_v
    s = h_s * np.arange(N_s)
    v = -1.0 + h_v * np.arange(1, N_v)
    S, V = np.meshgrid(s, v, indexing="ij")
    rho = density_rho(curve, S, eps * V)
    w_sa = np.full(S.shape, h_s * h_v)
    w_mu = h_s * h_v * eps * rho
    return TubeGrid(curve, N_s, N_v, float(eps), s, v, h_s, h_v, rho, w_sa, w_mu)


def _index(grid: TubeGrid) -> np.ndarray:
    return np.arange(grid.size).reshape(grid.shape)


def _edge_lists(grid: TubeGrid, s_coef: np.ndarray, v_coef: np.ndarray, vb_coef: np.ndarray):
    """Edge lists from staggered coefficients.

    ``s_coef[i, j]`` weights the edge ``(i, j) - (i+1, j)``; ``v_coef[i, j]``
    the interior fiber edge ``(i, j) - (i, j+1)``; ``vb_coef[i, 0/1]`` the two
    Dirichlet edges of fiber ``i``.
    """
    idx = _index(grid)
    a_s = idx.ravel()
    b_s = np.roll(idx, -1, axis=0).ravel()
    a_v = idx[:, :-1].ravel()
    b_v = idx[:, 1:].ravel()
    rows = np.concatenate([a_s, a_v])
    cols = np.concatenate([b_s, b_v])
    w = np.concatenate([s_coef.ravel(), v_coef.ravel()])
    boundary = np.zeros(grid.shape)
    boundary[:, 0] += vb_coef[:, 0]
    boundary[:, -1] += vb_coef[:, 1]
    return (rows, cols, w), boundary.ravel()


def _stiffness(n: int, edges, diag) -> sp.csr_matrix:
    rows, cols, w = edges
    d = np.asarray(diag, dtype=float).copy()
    np.add.at(d, rows, w)
    np.add.at(d, cols, w)
    r = np.concatenate([rows, cols, np.arange(n)])
    c = np.concatenate([cols, rows, np.arange(n)])
    vals = np.concatenate([-w, -w, d])
    A = sp.coo_matrix((vals, (r, c)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def _unit_tube_form(grid: TubeGrid, s_factor: np.ndarray, v_factor: float, potential, kind: str) -> FormOperator:
    h_s, h_v = grid.h_s, grid.h_v
    eta2 = fiber_denominator(h_v)
    s_coef = h_s * h_v * s_factor / h_s**2
    v_w = h_s * h_v * v_factor / eta2
    v_coef = np.full((grid.N_s, grid.N_v - 2), v_w)
    vb = np.full((grid.N_s, 2), v_w)
    edges, boundary = _edge_lists(grid, s_coef, v_coef, vb)
    pot = np.zeros(grid.size) if potential is None else np.ravel(potential) * grid.w_sa.ravel()
    A = _stiffness(grid.size, edges, boundary + pot)
    return FormOperator(A, grid.w_sa.ravel().copy(), grid.eps, grid, edges, boundary, pot, 0.0, kind, "unit")


def assemble_H(grid: TubeGrid, kind: str = "nu") -> FormOperator:
    """Transported Dirichlet form on the unit tube, in ``L^2(mu_Sa)``.

    ``kind="nu"`` is the generator of the reweighted measure: the potential
    cancels under the rescaling and the form is
    ``int rho^-2 f_s^2 + eps^-2 f_v^2 ds dv`` with ``rho = 1 - eps v kappa``.
    ``kind="plain"`` is the transported Dirichlet Laplacian of plain Brownian
    motion, which carries the extra ``-U`` term.
    """
    if kind not in ("nu", "plain"):
        raise ValueError(f"unknown form kind {kind!r}")
    curve = grid.curve
    s_mid = grid.s + 0.5 * grid.h_s
    S, V = np.meshgrid(s_mid, grid.v, indexing="ij")
    rho_mid = density_rho(curve, S, grid.eps * V)
    pot = None
    if kind == "plain":
        Sn, Vn = grid.mesh()
        pot = -potential_U(curve, Sn, grid.eps * Vn)
    return _unit_tube_form(grid, rho_mid**-2, grid.eps**-2, pot, kind)


def assemble_sasaki(grid: TubeGrid) -> FormOperator:
    """Dirichlet form of the product (Sasaki) metric, ``int f_s^2 + f_v^2``."""
    return _unit_tube_form(grid, np.ones(grid.shape), 1.0, None, "sasaki")


def assemble_direct(curve: CurveGeometry, eps: float, N_s: int, N_v: int, kind: str = "nu") -> FormOperator:
    """Dirichlet form on the physical tube ``L(eps)`` in ``L^2(mu)``.

    Nodes are ``(s_i, n_j = eps v_j)``; the form is
    ``int (rho^-2 u_s^2 + u_n^2) + U u^2 dmu`` for ``kind="nu"`` and without
    ``U`` for ``kind="plain"``.  Conjugating with ``sigma_eps`` gives an
    operator similar to the matching ``assemble_H`` output.
    """
    grid = build_grid(curve, N_s, N_v, eps)
    h_s, h_v = grid.h_s, grid.h_v
    h_n = eps * h_v
    eta2_n = eps**2 * fiber_denominator(h_v)
    s_mid = grid.s + 0.5 * h_s
    S, V = np.meshgrid(s_mid, grid.v, indexing="ij")
    s_coef = h_s * h_n / density_rho(curve, S, eps * V) / h_s**2
    v_edges = -1.0 + h_v * (np.arange(N_v) + 0.5)  # fiber edge midpoints, boundary edges included
    Se, Ve = np.meshgrid(grid.s, v_edges, indexing="ij")
    rho_e = density_rho(curve, Se, eps * Ve)
    n_coef = h_s * h_n * rho_e / eta2_n
    edges, boundary = _edge_lists(grid, s_coef, n_coef[:, 1:-1], n_coef[:, [0, -1]])
    pot = np.zeros(grid.size)
    if kind == "nu":
        Sn, Vn = grid.mesh()
        pot = (potential_U(curve, Sn, eps * Vn) * grid.w_mu).ravel()
    elif kind != "plain":
        raise ValueError(f"unknown form kind {kind!r}")
    A = _stiffness(grid.size, edges, boundary + pot)
    return FormOperator(A, grid.w_mu.ravel().copy(), eps, grid, edges, boundary, pot, 0.0, kind, "physical")


def renormalize(form: FormOperator, mode: str, lam: float | None = None) -> FormOperator:
    """Subtract ``lambda_0 / eps^2`` or a computed ground eigenvalue (times the mass).

    Renormalization is absolute: the result always equals the raw form minus
    the requested constant, whatever ``form`` already had subtracted.
    """
    if mode == "lambda0_over_eps2":
        c = LAMBDA0 / form.epsilon**2
    elif mode == "lambda_eps":
        if lam is None:
            raise ValueError("mode 'lambda_eps' needs the computed ground eigenvalue")
        c = float(lam)
    elif mode == "none":
        c = 0.0
    else:
        raise ValueError(f"unknown renormalization mode {mode!r}")
    shift = c - form.renormalization
    A = (form.stiffness - sp.diags(shift * form.mass)).tocsr()
    return replace(form, stiffness=A, renormalization=c, meta={**form.meta, "renormalization_mode": mode})


def assemble_laplace_L(curve: CurveGeometry, N_s: int):
    """Periodic second-difference stiffness of ``-d^2/ds^2`` with mass ``h_s I``."""
    if N_s < 16:
        raise ValueError("N_s must be >= 16")
    h = curve.total_length / N_s
    main = np.full(N_s, 2.0 / h)
    off = np.full(N_s - 1, -1.0 / h)
    A = sp.diags([main, off, off], [0, 1, -1], format="lil")
    A[0, N_s - 1] = -1.0 / h
    A[N_s - 1, 0] = -1.0 / h
    return A.tocsr(), np.full(N_s, h)


def project_E0(grid: TubeGrid, f):
    """Fiber projection onto the ground mode: ``(f_b, phi0 * f_b o pi)``."""
    f = np.reshape(f, grid.shape)
    p0 = phi0(grid.v)
    fb = (f * p0).sum(axis=1) * grid.h_v
    return fb, np.outer(fb, p0)


def grad_norm_eps(form: FormOperator, g, boundary: str = "dirichlet"):
    """Pointwise gradient norm consistent with the form's quadrature.

    Each interior edge energy is split evenly between its end nodes and each
    Dirichlet edge is charged to its interior node, so that
    ``sum(grad_norm**2 * w) == q(g)`` for the potential-free part of ``form``.
    With ``boundary="neumann"`` the Dirichlet edges are dropped, which is the
    right choice for basic functions ``h o pi`` that do not vanish at ``|v|=1``.
    """
    g = np.ravel(g)
    rows, cols, w = form.edges
    e = w * (g[rows] - g[cols]) ** 2
    dens = np.zeros(g.size)
    np.add.at(dens, rows, 0.5 * e)
    np.add.at(dens, cols, 0.5 * e)
    if boundary == "dirichlet":
        dens += form.boundary * g**2
    elif boundary != "neumann":
        raise ValueError(boundary)
    return np.sqrt(dens / form.mass).reshape(form.grid.shape)


def sigma_eps(grid: TubeGrid, f):
    """Unitary map ``L^2(L(1), mu_Sa) -> L^2(L(eps), mu)``: ``(eps rho)^-1/2 f``."""
    return np.reshape(f, grid.shape) / np.sqrt(grid.eps * grid.rho)


def sigma_eps_inverse(grid: TubeGrid, u):
    return np.reshape(u, grid.shape) * np.sqrt(grid.eps * grid.rho)


def bilinear(form: FormOperator, f, g) -> float:
    """``f^T A g`` for the (possibly renormalized) stiffness."""
    return float(np.ravel(f) @ (form.stiffness @ np.ravel(g)))


def edge_bilinear(form: FormOperator, f, g, weight=None) -> float:
    """Edge-sum ``sum_e w_e c_e (f_a - f_b)(g_a - g_b)``, ``c_e = weight_a weight_b``.

    With ``weight = phi_eps`` this is the discrete weighted gradient pairing
    ``int phi^2 <df, dg>``.
    """
    f, g = np.ravel(f), np.ravel(g)
    rows, cols, w = form.edges
    c = w if weight is None else w * np.ravel(weight)[rows] * np.ravel(weight)[cols]
    return float(np.sum(c * (f[rows] - f[cols]) * (g[rows] - g[cols])))
