"""Closed plane curves and their tubes in Fermi coordinates.

A point near the curve is addressed by ``(s, n)``: ``s`` is arc length along
the curve (periodic with period ``total_length``) and ``n`` the signed normal
offset along the unit normal ``nu(s)``.  For counter-clockwise curves ``nu``
points to the interior, so the curvature of a convex curve is positive and
the volume density of the induced metric relative to the product metric is
``rho = 1 - n * kappa``.

Only codimension one in a flat ambient space is modelled: the plane for
circles and ellipses, the flat cylinder ``S^1_L x R`` for the straight case.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

__all__ = [
    "ChartError",
    "CurveGeometry",
    "FermiCoordinate",
    "make_circle",
    "make_flat_cylinder",
    "make_ellipse",
    "make_curve",
    "fermi_to_ambient",
    "closest_point_projection",
    "density_rho",
    "potential_U",
    "boundary_distance",
    "geodesic_distance",
]


class ChartError(ValueError):
    """Raised when a point lies outside the region where the Fermi chart is valid."""


@dataclass(frozen=True)
class FermiCoordinate:
    s: np.ndarray | float
    n: np.ndarray | float


@dataclass(frozen=True, eq=False)
class CurveGeometry:
    """Arc-length parametrized closed curve with curvature jets.

    The callables are vectorized over ``s`` and already periodic.
    """

    kind: str
    total_length: float
    max_curvature: float
    _position: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    _tangent: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    _curvature: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]] = field(repr=False)
    params: dict = field(default_factory=dict)

    def wrap(self, s):
        return np.mod(s, self.total_length)

    def position(self, s):
        return self._position(self.wrap(np.asarray(s, dtype=float)))

    def tangent(self, s):
        return self._tangent(self.wrap(np.asarray(s, dtype=float)))

    def normal(self, s):
        t = self.tangent(s)
        return np.stack([-t[..., 1], t[..., 0]], axis=-1)

    def curvature_jets(self, s):
        """Return ``(kappa, kappa', kappa'')`` at arc length ``s``."""
        return self._curvature(self.wrap(np.asarray(s, dtype=float)))

    def curvature(self, s):
        return self.curvature_jets(s)[0]

    @property
    def is_flat(self) -> bool:
        return self.kind == "flat_cylinder"

    def max_offset(self) -> float:
        """Largest admissible ``|n|`` (the reach of the tube chart)."""
        return np.inf if self.max_curvature == 0 else 1.0 / self.max_curvature


def make_circle(R: float) -> CurveGeometry:
    if not R > 0:
        raise ValueError(f"circle radius must be positive, got {R}")

    def position(s):
        th = s / R
        return np.stack([R * np.cos(th), R * np.sin(th)], axis=-1)

    def tangent(s):
        th = s / R
        return np.stack([-np.sin(th), np.cos(th)], axis=-1)

    def curvature(s):
        k = np.full(np.shape(s), 1.0 / R)
        z = np.zeros(np.shape(s))
        return k, z, z.copy()

    return CurveGeometry("circle", 2 * np.pi * R, 1.0 / R, position, tangent, curvature, {"radius": R})


def make_flat_cylinder(length: float = 2 * np.pi) -> CurveGeometry:
    """Zero section of the flat cylinder ``S^1_length x R``; ambient x is periodic."""
    if not length > 0:
        raise ValueError(f"cylinder length must be positive, got {length}")

    def position(s):
        s = np.asarray(s, dtype=float)
        return np.stack([s, np.zeros_like(s)], axis=-1)

    def tangent(s):
        s = np.asarray(s, dtype=float)
        return np.stack([np.ones_like(s), np.zeros_like(s)], axis=-1)

    def curvature(s):
        z = np.zeros(np.shape(s))
        return z, z.copy(), z.copy()

    return CurveGeometry("flat_cylinder", float(length), 0.0, position, tangent, curvature, {"length": length})


def make_ellipse(a: float, b: float, N_quad: int = 4096) -> CurveGeometry:
    """Ellipse ``(a cos t, b sin t)`` reparametrized by arc length.

    The cumulative arc length ``S(t)`` is integrated spectrally on ``N_quad``
    uniform nodes (the speed is smooth and periodic) and inverted with a
    monotone cubic spline.  The inverse is Newton-polished on ``N_quad`` nodes
    and then held as a periodic cubic spline, so evaluation stays cheap for
    the samplers.
    """
    if a * b == 0:
        raise ValueError("ellipse semi-axes must be nonzero")
    if not (a >= b > 0):
        raise ValueError(f"need a >= b > 0, got a={a}, b={b}")
    a, b = float(a), float(b)
    c2 = a * a - b * b

    def speed(t):
        return np.sqrt(a * a * np.sin(t) ** 2 + b * b * np.cos(t) ** 2)

    # Fourier coefficients of the speed give S(t) in closed form.
    tq = 2 * np.pi * np.arange(N_quad) / N_quad
    coef = np.fft.rfft(speed(tq)) / N_quad
    k = np.arange(coef.size)
    c0 = coef[0].real
    nz = np.abs(coef) > 1e-15 * abs(c0)
    nz[0] = False
    kk, ck = k[nz], coef[nz]
    total = 2 * np.pi * c0

    def arc(t):
        t = np.asarray(t, dtype=float)
        ph = np.exp(1j * np.multiply.outer(t, kk))
        per = 2.0 * np.real(ph * (ck / (1j * kk))).sum(axis=-1)
        per0 = 2.0 * np.real(ck / (1j * kk)).sum()
        return c0 * t + per - per0

    tn = np.linspace(0.0, 2 * np.pi, N_quad + 1)
    seed = PchipInterpolator(arc(tn), tn)

    def newton_theta(s):
        t = seed(s)
        for _ in range(8):
            step = (arc(t) - s) / speed(t)
            t = t - step
            if np.all(np.abs(step) < 1e-15):
                break
        return t

    # Exact nodes, then a periodic spline of the periodic part for fast evaluation.
    s_nodes = np.linspace(0.0, total, N_quad + 1)
    drift = 2 * np.pi / total
    per_nodes = newton_theta(s_nodes) - drift * s_nodes
    per_nodes[-1] = per_nodes[0]
    per_spline = CubicSpline(s_nodes, per_nodes, bc_type="periodic")

    def theta_of_s(s):
        s = np.mod(np.asarray(s, dtype=float), total)
        return drift * s + per_spline(s)

    probe = (np.arange(512) + 0.5) * total / 512
    resid = np.max(np.abs(arc(theta_of_s(probe)) - probe))
    if resid > 1e-10:
        raise ValueError(f"arc-length reparametrization residual {resid:.3e} exceeds 1e-10")

    def position(s):
        t = theta_of_s(s)
        return np.stack([a * np.cos(t), b * np.sin(t)], axis=-1)

    def tangent(s):
        t = theta_of_s(s)
        sp = speed(t)
        return np.stack([-a * np.sin(t) / sp, b * np.cos(t) / sp], axis=-1)

    def curvature(s):
        t = theta_of_s(s)
        sn_, cs = np.sin(t), np.cos(t)
        sg = speed(t)
        dsg = c2 * sn_ * cs / sg
        d2sg = c2 * (np.cos(2 * t) / sg - sn_ * cs * dsg / sg**2)
        kap = a * b / sg**3
        dk_dt = -3 * a * b * dsg / sg**4
        d2k_dt = -3 * a * b * (d2sg / sg**4 - 4 * dsg**2 / sg**5)
        dk = dk_dt / sg
        d2k = (d2k_dt * sg - dk_dt * dsg) / sg**3
        return kap, dk, d2k

    return CurveGeometry(
        "ellipse", total, a / b**2, position, tangent, curvature, {"a": a, "b": b, "N_quad": N_quad}
    )


def make_curve(kind: str, **params) -> CurveGeometry:
    """Config-driven constructor: ``kind`` is one of flat, circle, ellipse."""
    if kind in ("flat", "flat_cylinder"):
        return make_flat_cylinder(params.get("length", 2 * np.pi))
    if kind == "circle":
        return make_circle(params.get("radius", 1.0))
    if kind == "ellipse":
        return make_ellipse(params.get("a", 3.0), params.get("b", 2.0), int(params.get("N_quad", 4096)))
    raise ValueError(f"unknown geometry kind {kind!r}")


def _check_chart(curve: CurveGeometry, n):
    if curve.max_curvature > 0 and np.any(np.abs(n) * curve.max_curvature >= 1.0):
        raise ChartError("normal offset outside the tube chart (|n| * kappa_max >= 1)")


def fermi_to_ambient(curve: CurveGeometry, s, n):
    n = np.asarray(n, dtype=float)
    _check_chart(curve, n)
    return curve.position(s) + n[..., None] * curve.normal(s)


def closest_point_projection(curve: CurveGeometry, p, s0=None, max_iter: int = 50, tol: float = 1e-13):
    """Fermi coordinates ``(s, n)`` of ambient points ``p`` (shape ``(..., 2)``).

    Safeguarded Newton on ``<p - gamma(s), gamma'(s)> = 0``.  Without a warm
    start ``s0`` the seed comes from a coarse scan of the curve.
    """
    p = np.asarray(p, dtype=float)
    L = curve.total_length
    if curve.is_flat:
        return FermiCoordinate(np.mod(p[..., 0], L), p[..., 1].copy())
    if curve.kind == "circle":
        R = curve.params["radius"]
        r = np.hypot(p[..., 0], p[..., 1])
        n = R - r
        _check_chart(curve, n)
        return FermiCoordinate(np.mod(R * np.arctan2(p[..., 1], p[..., 0]), L), n)

    flat = p.reshape(-1, 2)
    if s0 is None:
        sg = np.linspace(0.0, L, 512, endpoint=False)
        gam = curve.position(sg)
        d2 = ((flat[:, None, :] - gam[None, :, :]) ** 2).sum(-1)
        s = sg[np.argmin(d2, axis=1)]
        half_bracket = L / 512
    else:
        s = np.broadcast_to(np.asarray(s0, dtype=float), flat.shape[:1]).reshape(-1).copy()
        half_bracket = L / 8
    lo, hi = s - half_bracket, s + half_bracket
    for _ in range(max_iter):
        gam = curve.position(s)
        t = curve.tangent(s)
        nu = np.stack([-t[:, 1], t[:, 0]], axis=-1)
        d = flat - gam
        g = (d * t).sum(-1)
        nn = (d * nu).sum(-1)
        k = curve.curvature(s)
        dg = -(1.0 - nn * k)
        step = -g / dg
        new = s + step
        bad = (new < lo) | (new > hi) | ~np.isfinite(new)
        new[bad] = 0.5 * (lo[bad] + hi[bad])
        lo = np.where(g > 0, np.maximum(lo, s), lo)
        hi = np.where(g < 0, np.minimum(hi, s), hi)
        done = np.abs(new - s) < tol * max(L, 1.0)
        s = new
        if np.all(done):
            break
    else:
        raise RuntimeError("closest-point Newton iteration did not converge in %d steps" % max_iter)
    gam = curve.position(s)
    nu = curve.normal(s)
    n = ((flat - gam) * nu).sum(-1)
    _check_chart(curve, n)
    return FermiCoordinate(np.mod(s, L).reshape(p.shape[:-1]), n.reshape(p.shape[:-1]))


def density_rho(curve: CurveGeometry, s, n):
    """Volume density of the induced metric relative to the product metric."""
    n = np.asarray(n, dtype=float)
    _check_chart(curve, n)
    return 1.0 - n * curve.curvature(s)


def potential_U(curve: CurveGeometry, s, n):
    """``U = rho^{1/2} Lap rho^{-1/2}`` with ``Lap = div grad`` of the plane metric.

    Closed form in Fermi coordinates; equals ``kappa^2 / 4`` on the curve.
    """
    n = np.asarray(n, dtype=float)
    _check_chart(curve, n)
    k, dk, d2k = curve.curvature_jets(s)
    rho = 1.0 - n * k
    return 0.25 * k**2 / rho**2 + 0.5 * n * d2k / rho**3 + 1.25 * n**2 * dk**2 / rho**4


def boundary_distance(v):
    """Distance of a unit-tube point with fiber coordinate ``v`` to the tube boundary."""
    return 1.0 - np.abs(v)


def geodesic_distance(curve: CurveGeometry, s1, s2):
    d = np.abs(np.mod(s1, curve.total_length) - np.mod(s2, curve.total_length))
    return np.minimum(d, curve.total_length - d)
