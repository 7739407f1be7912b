import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from tubeflow.geometry import (
    ChartError,
    boundary_distance,
    closest_point_projection,
    density_rho,
    fermi_to_ambient,
    geodesic_distance,
    make_circle,
    make_curve,
    make_ellipse,
    potential_U,
)


def test_circle_basics(circle):
    assert circle.total_length == pytest.approx(2 * np.pi)
    assert np.allclose(circle.curvature(np.linspace(0, 6, 7)), 1.0)
    assert make_circle(2.0).max_curvature == pytest.approx(0.5)
    assert np.allclose(circle.position(np.pi), [-1.0, 0.0], atol=1e-14)


def test_flat_is_trivial(flat):
    assert flat.max_curvature == 0
    s, n = np.meshgrid(np.linspace(0, 6, 5), np.linspace(-3, 3, 5))
    assert np.all(density_rho(flat, s, n) == 1.0)
    assert np.all(potential_U(flat, s, n) == 0.0)


def test_degenerate_ellipse_matches_circle(circle):
    e = make_ellipse(1.0, 1.0)
    assert abs(e.total_length - circle.total_length) < 1e-10
    s = np.linspace(0, 2 * np.pi, 50, endpoint=False)
    assert np.max(np.abs(e.curvature(s) - 1.0)) < 1e-10


def test_ellipse_length_and_curvature(ellipse):
    L, _ = quad(lambda t: np.sqrt(9 * np.sin(t) ** 2 + 4 * np.cos(t) ** 2), 0, 2 * np.pi, epsabs=1e-13, epsrel=1e-13)
    assert abs(ellipse.total_length - L) < 1e-10
    assert ellipse.max_curvature == pytest.approx(0.75, rel=1e-9)


def test_fermi_examples(circle):
    assert np.allclose(fermi_to_ambient(circle, 0.0, 0.5), [0.5, 0.0])
    fc = closest_point_projection(circle, np.array([1.2, 0.0]))
    assert fc.s == pytest.approx(0.0, abs=1e-14) and fc.n == pytest.approx(-0.2)


def test_chart_violation(circle):
    with pytest.raises(ChartError):
        fermi_to_ambient(circle, 0.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 15.8), st.floats(-0.6, 0.6))
def test_ellipse_round_trip(s, n):
    e = make_ellipse(3.0, 2.0)
    s = s % e.total_length
    fc = closest_point_projection(e, fermi_to_ambient(e, s, n))
    ds = abs(fc.s - s)
    assert min(ds, e.total_length - ds) < 1e-9
    assert abs(fc.n - n) < 1e-9


def test_rho_examples():
    c2 = make_circle(2.0)
    assert density_rho(c2, 0.3, 0.5) == pytest.approx(0.75)
    # Jacobian of the chart against the product chart
    s, n, h = 0.3, 0.5, 1e-6
    ds = (fermi_to_ambient(c2, s + h, n) - fermi_to_ambient(c2, s - h, n)) / (2 * h)
    dn = (fermi_to_ambient(c2, s, n + h) - fermi_to_ambient(c2, s, n - h)) / (2 * h)
    assert abs(abs(ds[0] * dn[1] - ds[1] * dn[0]) - 0.75) < 1e-8


def _fd_potential(curve, s, n, h=1e-3):
    """rho^{1/2} Lap rho^{-1/2} with the metric diag(rho^2, 1), by centered differences."""

    def g(s_, n_):
        return density_rho(curve, s_, n_) ** -0.5

    rho = density_rho(curve, s, n)
    rp = density_rho(curve, s + h / 2, n)
    rm = density_rho(curve, s - h / 2, n)
    # (1/rho) d_s (rho^{-1} d_s g) + (1/rho) d_n (rho d_n g)
    lap_s = ((g(s + h, n) - g(s, n)) / rp - (g(s, n) - g(s - h, n)) / rm) / h**2 / rho
    np_, nm = density_rho(curve, s, n + h / 2), density_rho(curve, s, n - h / 2)
    lap_n = (np_ * (g(s, n + h) - g(s, n)) - nm * (g(s, n) - g(s, n - h))) / h**2 / rho
    return rho**0.5 * (lap_s + lap_n)


@pytest.mark.parametrize("kind", ["circle", "ellipse"])
def test_potential_matches_finite_differences(kind):
    curve = make_curve(kind, radius=1.0, a=3.0, b=2.0)
    rng = np.random.default_rng(3)
    s = rng.uniform(0, curve.total_length, 20)
    n = rng.uniform(-0.5, 0.5, 20) / curve.max_curvature
    # one Richardson step removes the h^2 term of the centered stencil
    fd = (4 * _fd_potential(curve, s, n, 1e-3) - _fd_potential(curve, s, n, 2e-3)) / 3
    assert np.max(np.abs(potential_U(curve, s, n) - fd)) < 1e-6
    assert potential_U(make_circle(1.0), 0.0, 0.0) == pytest.approx(0.25)


def test_boundary_distance():
    assert boundary_distance(0.0) == 1.0
    assert boundary_distance(1.0) == 0.0
    assert boundary_distance(-0.25) == 0.75


def test_geodesic_distance(circle):
    assert geodesic_distance(circle, 0.0, np.pi) == pytest.approx(np.pi)
    assert geodesic_distance(circle, 1.3, 1.3) == 0.0


def test_distance_sup_characterization(ellipse):
    rng = np.random.default_rng(0)
    L = ellipse.total_length
    c = np.linspace(0, L, 4001)
    for s1, s2 in rng.uniform(0, L, (100, 2)):
        sup = np.max(np.abs(geodesic_distance(ellipse, s1, c) - geodesic_distance(ellipse, s2, c)))
        assert abs(sup - geodesic_distance(ellipse, s1, s2)) <= L / 4000 + 1e-12
