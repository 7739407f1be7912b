import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from tubeflow.discretize import (
    LAMBDA0,
    assemble_direct,
    assemble_H,
    assemble_laplace_L,
    assemble_sasaki,
    build_grid,
    edge_bilinear,
    fiber_denominator,
    grad_norm_eps,
    phi0,
    project_E0,
    renormalize,
    sigma_eps,
    sigma_eps_inverse,
)
from tubeflow.geometry import ChartError, potential_U
from tubeflow.spectral import ground_state


def _dense_gen_eigs(form, k=5):
    A = form.stiffness.toarray()
    return sla.eigh(A, np.diag(form.mass), eigvals_only=True, subset_by_index=[0, k - 1])


def test_grid_validation(circle):
    with pytest.raises(ValueError):
        build_grid(circle, 8, 16, 0.1)
    with pytest.raises(ChartError):
        build_grid(circle, 32, 16, 1.0)


def test_weights(flat, circle, ellipse):
    g = build_grid(flat, 32, 8, 0.3)
    assert np.allclose(g.w_mu, 0.3 * g.w_sa)
    g = build_grid(circle, 32, 8, 0.5)
    hv = g.h_v
    assert g.w_mu[0, -1] / (g.h_s * hv * 0.5) == pytest.approx(1 - 0.5 * (1 - hv))
    g = build_grid(ellipse, 256, 32, 0.2)
    # midpoint rule in s, interior nodes in v: the area converges to 2 eps Lambda
    assert g.w_mu.sum() == pytest.approx(2 * 0.2 * ellipse.total_length * (1 - g.h_v / 2), rel=1e-6)


def test_fitted_fiber_ground_energy():
    for N in (8, 16, 64):
        h = 2.0 / N
        n = N - 1
        d = fiber_denominator(h)
        lam = sla.eigh_tridiagonal(np.full(n, 2 / d), np.full(n - 1, -1 / d), select="i", select_range=(0, 0))[0][0]
        assert lam == pytest.approx(LAMBDA0, rel=1e-13)


def test_flat_kronecker_sum(flat):
    eps = 0.3
    g = build_grid(flat, 32, 8, eps)
    H = assemble_H(g)
    Ns, n = 32, 7
    Ts = sp.diags([np.full(Ns, 2.0), np.full(Ns - 1, -1.0), np.full(Ns - 1, -1.0)], [0, 1, -1], format="lil")
    Ts[0, -1] = Ts[-1, 0] = -1.0
    Ts = Ts.tocsr() / g.h_s**2
    Tv = sp.diags([np.full(n, 2.0), np.full(n - 1, -1.0), np.full(n - 1, -1.0)], [0, 1, -1]) / fiber_denominator(g.h_v)
    K = sp.kron(Ts, sp.eye(n)) + sp.kron(sp.eye(Ns), Tv) / eps**2
    assert abs(H.stiffness - sp.diags(H.mass) @ K).max() < 1e-9


def test_constant_has_zero_energy(ellipse):
    g = build_grid(ellipse, 32, 8, 0.1)
    form = assemble_sasaki(g)
    f = np.ones(g.size)
    assert edge_bilinear(form, f, f) == 0.0


def _plain_fiber_oracle(curve, eps, s):
    """Rayleigh quotient of cos(pi v/2) for the plain form at fixed s, by fiber quadrature."""
    num = quad(lambda v: phi0(v) ** 2 * potential_U(curve, s, eps * v), -1, 1, epsabs=1e-13)[0]
    return -num  # norm of phi0 on (-1, 1) is 1


def test_plain_fiber_quotient(circle):
    eps = 0.2
    g = build_grid(circle, 64, 64, eps)
    form = assemble_H(g, "plain")
    f = np.ravel(g.phi0)
    rq = form.quadratic(f) / form.norm2(f)
    oracle = LAMBDA0 / eps**2 + _plain_fiber_oracle(circle, eps, 0.0)
    assert rq == pytest.approx(oracle, abs=2e-3)
    assert _plain_fiber_oracle(circle, 1e-6, 0.0) == pytest.approx(-0.25, abs=1e-9)
    # the transported form keeps the fiber mode at exactly lambda_0 / eps^2
    nu = assemble_H(g, "nu")
    assert nu.quadratic(f) / nu.norm2(f) == pytest.approx(LAMBDA0 / eps**2, rel=1e-13)


def test_routes_agree_flat(flat):
    a = _dense_gen_eigs(assemble_H(build_grid(flat, 32, 8, 0.3), "nu"))
    b = _dense_gen_eigs(assemble_direct(flat, 0.3, 32, 8, "nu"))
    assert np.allclose(a, b, rtol=1e-12)


@pytest.mark.parametrize("kind", ["nu", "plain"])
def test_routes_agree_circle(circle, kind):
    a = _dense_gen_eigs(assemble_H(build_grid(circle, 64, 32, 0.2), kind))
    b = _dense_gen_eigs(assemble_direct(circle, 0.2, 64, 32, kind))
    assert np.max(np.abs(a - b) / np.abs(a)) < 1e-4


@pytest.mark.slow
def test_routes_agree_ellipse(ellipse):
    a = _dense_gen_eigs(assemble_H(build_grid(ellipse, 128, 16, 0.1), "plain"))
    b = _dense_gen_eigs(assemble_direct(ellipse, 0.1, 128, 16, "plain"))
    assert np.max(np.abs(a - b) / np.abs(a)) < 1e-3


def test_renormalize(circle, flat):
    g = build_grid(circle, 32, 8, 0.2)
    H = assemble_H(g, "plain")
    lam = ground_state(H).lam
    a = renormalize(H, "lambda0_over_eps2")
    b = renormalize(H, "lambda_eps", lam)
    D = (a.stiffness - b.stiffness).toarray()
    assert np.allclose(D, np.diag((lam - LAMBDA0 / 0.2**2) * H.mass), atol=1e-9)
    # absolute, not stacking
    assert abs(renormalize(a, "lambda_eps", lam).stiffness - b.stiffness).max() < 1e-12
    assert abs(ground_state(b).lam) < 1e-8
    f0 = renormalize(assemble_H(build_grid(flat, 64, 16, 0.2)), "lambda0_over_eps2")
    assert abs(ground_state(f0).lam) < 1e-8
    with pytest.raises(ValueError):
        renormalize(H, "lambda_eps")


def test_laplace_L(circle):
    A, m = assemble_laplace_L(circle, 256)
    assert np.allclose(A @ np.ones(256), 0)
    ev = sla.eigh(A.toarray(), np.diag(m), eigvals_only=True, subset_by_index=[0, 2])
    assert abs(ev[1] - 1) < 1e-4
    s = np.arange(256) * circle.total_length / 256
    c = np.cos(s)
    assert np.allclose(A @ c, ev[1] * m * c, atol=1e-12)


def test_project_E0(ellipse):
    g = build_grid(ellipse, 32, 16, 0.1)
    S, V = g.mesh()
    fb, Ef = project_E0(g, phi0(V))
    assert np.allclose(fb, 1.0, atol=1e-12) and np.allclose(Ef, phi0(V), atol=1e-12)
    fb, Ef = project_E0(g, np.sin(np.pi * V))
    assert np.allclose(fb, 0, atol=1e-14)
    rng = np.random.default_rng(0)
    for _ in range(100):
        f = rng.standard_normal(g.shape)
        _, E1 = project_E0(g, f)
        _, E2 = project_E0(g, E1)
        assert np.allclose(E1, E2, atol=1e-12)


def test_grad_norm(flat, ellipse):
    g = build_grid(flat, 256, 8, 0.2)
    S, V = g.mesh()
    form = assemble_sasaki(g)
    assert np.all(grad_norm_eps(form, np.ones(g.size), "neumann") == 0)
    L = flat.total_length
    gn = grad_norm_eps(form, np.sin(2 * np.pi * S / L), "neumann")
    exact = (2 * np.pi / L) * np.abs(np.cos(2 * np.pi * S / L))
    assert np.max(np.abs(gn**2 - exact**2)) < 5e-3
    # quadrature identity: sum |dg|^2 w = q(g) for the potential-free form
    ge = build_grid(ellipse, 32, 8, 0.1)
    H = assemble_H(ge, "nu")
    f = np.random.default_rng(1).standard_normal(ge.size)
    assert np.sum(grad_norm_eps(H, f).ravel() ** 2 * H.mass) == pytest.approx(H.quadratic(f), rel=1e-12)


def test_basic_gradient_converges(ellipse):
    from tubeflow.heatkernel import smoothed_distance

    errs = []
    for eps in (0.2, 0.1, 0.05):
        g = build_grid(ellipse, 256, 8, eps)
        h = smoothed_distance(g, 1.0)
        H = assemble_H(g, "nu")
        hb = np.repeat(h, g.N_v - 1)
        gn = grad_norm_eps(H, hb, "neumann")
        base = grad_norm_eps(assemble_sasaki(g), hb, "neumann")
        errs.append(np.max(np.abs(gn**2 - base**2)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[2] > 1.5  # at least linear in eps


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 0.9))
def test_sigma_unitary(eps):
    from tubeflow.geometry import make_circle

    g = build_grid(make_circle(1.0), 16, 8, eps)
    f = np.cos(np.arange(g.size)).reshape(g.shape)
    u = sigma_eps(g, f)
    assert np.sum(u**2 * g.w_mu) == pytest.approx(np.sum(f**2 * g.w_sa), rel=1e-12)
    assert np.allclose(sigma_eps_inverse(g, u), f)
