"""Path-level Monte Carlo for Brownian motion conditioned to a thin tube.

Generator convention ``(1/2) Laplacian``: increments are ``Normal(0, h)`` per
coordinate.  Randomness comes from counter-based Philox streams keyed by
``(seed, stream_id)``; samplers work in chunks, one stream per chunk, and
concatenate chunks in stream order, so results are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .discretize import LAMBDA0, assemble_direct
from .geometry import CurveGeometry, closest_point_projection, fermi_to_ambient, potential_U
from .heatkernel import Propagator

__all__ = [
    "AcceptanceError",
    "EstimateRefused",
    "RngStream",
    "PathBundle",
    "MCEstimate",
    "simulate_bm",
    "condition_rejection",
    "condition_htransform",
    "htransform_marginal",
    "limit_sampler",
    "marginal_stat",
    "kolmogorov_modulus",
    "modulus_sweep",
    "write_paths",
    "read_paths",
    "PATH_RECORD",
]

ESS_FLOOR = 30

# little-endian record: stream id, step index, s, v or n, log-weight
PATH_RECORD = np.dtype([("stream_id", "<u4"), ("step", "<u4"), ("s", "<f8"), ("v_or_n", "<f8"), ("log_w", "<f8")])


class AcceptanceError(RuntimeError):
    """Rejection sampling is hopeless at the requested (eps, T)."""


class EstimateRefused(RuntimeError):
    """Too few effective samples for a trustworthy estimate."""


@dataclass(frozen=True)
class RngStream:
    """Philox stream keyed by ``(seed, stream_id)``, optionally advanced by ``counter`` blocks."""

    seed: int
    stream_id: int
    counter: int = 0

    def generator(self) -> np.random.Generator:
        bitgen = np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,)))
        if self.counter:
            bitgen = bitgen.advance(self.counter)
        return np.random.Generator(bitgen)


@dataclass(eq=False)
class PathBundle:
    """Paths recorded on ``times``.

    ``coords`` is ``"ambient"`` (``x``, ``y``), ``"fermi"`` (``s``, ``n``) or
    ``"base"`` (``s`` only, ``y`` zero).  ``log_w`` holds Feynman-Kac
    log-weights (zero when unweighted).
    """

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    log_w: np.ndarray
    stream_id: np.ndarray
    coords: str
    total_length: float
    eps: float = np.nan
    acceptance: float = np.nan

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def alive(self) -> np.ndarray:
        # samplers only return surviving paths
        return np.ones(self.n, dtype=bool)

    def step_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"t={t} is not on the recorded grid")
        return i

    def base_coordinate(self, i: int, curve: CurveGeometry | None = None) -> np.ndarray:
        if self.coords == "ambient":
            if curve is None:
                raise ValueError("ambient paths need the curve for projection")
            return closest_point_projection(curve, np.stack([self.x[:, i], self.y[:, i]], -1)).s
        return self.x[:, i]


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    ess: float
    n: int

    def __post_init__(self):
        if self.stderr < 0 or self.ess > self.n * (1 + 1e-12):
            raise ValueError("inconsistent estimate")


def _steps(T: float, h: float) -> int:
    if not h > 0:
        raise ValueError("h must be positive")
    K = round(T / h)
    if abs(K * h - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be an integer multiple of h")
    return K


def _record_index(K: int, record_every: int | None) -> np.ndarray:
    r = max(1, K // 100) if record_every is None else int(record_every)
    idx = np.arange(0, K + 1, r)
    if idx[-1] != K:
        idx = np.append(idx, K)
    return idx


def simulate_bm(start, T: float, h: float, rng: RngStream, n_paths: int = 1, cylinder_length: float | None = None, record_every: int | None = 1) -> PathBundle:
    """Planar Brownian motion (or on the cylinder ``S^1_L x R`` with x wrapped)."""
    K = _steps(T, h)
    rec = _record_index(K, record_every) if K else np.array([0])
    g = rng.generator()
    start = np.asarray(start, float)
    incr = g.standard_normal((n_paths, K, 2)) * math.sqrt(h)
    path = np.concatenate([np.broadcast_to(start, (n_paths, 1, 2)), start + np.cumsum(incr, axis=1)], axis=1)
    if cylinder_length is not None:
        path[..., 0] = np.mod(path[..., 0], cylinder_length)
    L = np.nan if cylinder_length is None else cylinder_length
    return PathBundle(rec * h, path[:, rec, 0], path[:, rec, 1], np.zeros(n_paths), np.full(n_paths, rng.stream_id, np.uint32), "ambient", L)


def _run_chunk(curve, eps, K, h, m, gen, bridge, rec):
    """Simulate ``m`` killed paths from ``gamma(0)``; returns survivors' records and survival counts."""
    L = curve.total_length
    flat = curve.is_flat
    p = np.broadcast_to(fermi_to_ambient(curve, 0.0, 0.0), (m, 2)).copy()
    s = np.zeros(m)
    nrm = np.zeros(m)
    ids = np.arange(m)
    out_s = np.zeros((m, rec.size))
    out_n = np.zeros((m, rec.size))
    surv = np.empty(K + 1, dtype=np.int64)
    surv[0] = m
    r = 1
    sq = math.sqrt(h)
    for k in range(1, K + 1):
        p += gen.standard_normal(p.shape) * sq
        if flat:
            s_new, n_new = np.mod(p[:, 0], L), p[:, 1]
        else:
            # warm-started Newton; points leaving the tube are killed below
            fc = closest_point_projection(curve, p, s0=s)
            s_new, n_new = fc.s, fc.n
        keep = np.abs(n_new) < eps
        if bridge:
            side = np.sign(nrm + n_new)
            side[side == 0] = 1.0
            d1 = np.maximum(eps - side * nrm, 0.0)
            d2 = np.maximum(eps - side * n_new, 0.0)
            u = gen.random(p.shape[0])
            keep &= u >= np.exp(-2.0 * d1 * d2 / h)
        p, s, nrm, ids = p[keep], s_new[keep], n_new[keep], ids[keep]
        surv[k] = ids.size
        if r < rec.size and rec[r] == k:
            out_s[ids, r] = s
            out_n[ids, r] = nrm
            r += 1
        if ids.size == 0:
            surv[k:] = 0
            break
    return ids, out_s[ids], out_n[ids], surv


def _extrapolated_survival(surv: np.ndarray, h: float, K: int) -> float:
    """Survival fraction at step K, extrapolating the exponential tail if the pilot died out."""
    m = surv[0]
    if surv[K] >= 10:
        return surv[K] / m
    ok = np.nonzero(surv >= 50)[0]
    if ok.size < 4:
        return 0.0
    k_star = ok[-1]
    lo = k_star // 2
    kk = np.arange(lo, k_star + 1)
    rate = -np.polyfit(kk * h, np.log(surv[kk] / m), 1)[0]
    return float(surv[k_star] / m * math.exp(-max(rate, 0.0) * (K - k_star) * h))


def condition_rejection(
    curve: CurveGeometry,
    eps: float,
    T: float,
    h: float,
    n_target: int,
    seed: int,
    bridge_correction: bool = True,
    chunk: int = 20000,
    floor: float = 1e-5,
    record_every: int | None = None,
    max_paths: int | None = None,
) -> PathBundle:
    """Brownian paths from ``gamma(0)`` kept only if they stay in ``L(eps)`` up to ``T``.

    Containment is checked through the closest-point projection at every
    step; with ``bridge_correction`` each step is also killed with the
    Brownian-bridge crossing probability ``exp(-2 d1 d2 / h)`` against the
    nearest fiber boundary.  The first chunk is a pilot: if its (possibly
    extrapolated) acceptance is below ``floor`` an ``AcceptanceError`` is
    raised before any heavy work.
    """
    if eps * curve.max_curvature >= 1:
        raise ValueError("eps violates the tube chart")
    K = _steps(T, h)
    rec = _record_index(K, record_every)
    parts = []
    total, accepted, cid = 0, 0, 0
    rate = None
    while accepted < n_target:
        gen = RngStream(seed, cid).generator()
        ids, ps, pn, surv = _run_chunk(curve, eps, K, h, chunk, gen, bridge_correction, rec)
        if rate is None:
            rate = _extrapolated_survival(surv, h, K)
            if rate < floor:
                raise AcceptanceError(
                    f"acceptance {rate:.3g} below floor {floor:g} at eps={eps}, T={T}: use a larger eps, a smaller T, or the h-transform sampler"
                )
            if max_paths is None:
                max_paths = int(10 * n_target / rate) + 10 * chunk
        parts.append((cid, ps, pn))
        total += chunk
        accepted += ids.size
        cid += 1
        if total > max_paths:
            raise AcceptanceError(f"exceeded {max_paths} proposals with {accepted} accepted")
    S = np.concatenate([p[1] for p in parts])[:n_target]
    N = np.concatenate([p[2] for p in parts])[:n_target]
    sid = np.concatenate([np.full(p[1].shape[0], p[0], np.uint32) for p in parts])[:n_target]
    return PathBundle(rec * h, S, N, np.zeros(n_target), sid, "fermi", curve.total_length, float(eps), accepted / total)


def _htransform_setup(curve, eps, T, N_s, N_v, h, mode):
    if N_v % 2:
        raise ValueError("N_v must be even so that v = 0 is a node")
    kind = {"plain": "plain", "nu": "nu"}[mode]
    form = assemble_direct(curve, eps, N_s, N_v, kind)
    K = _steps(T, h)
    prop = Propagator(form, h, shift=LAMBDA0 / eps**2)
    P = prop.matrix(h)
    pis = [np.ones(form.size)]
    for _ in range(K):
        nxt = P @ pis[-1]
        top = nxt.max()
        if top < 1e-300:
            raise FloatingPointError("survival mass underflow in the h-transform")
        # only ratios along a row matter, so rescale to keep the ladder in range
        pis.append(nxt / top)
    x0 = N_v // 2 - 1  # node (s=0, v=0)
    return form, prop, P, pis, K, x0


def condition_htransform(curve: CurveGeometry, eps: float, T: float, N_s: int, N_v: int, h: float, n: int, seed: int, mode: str = "plain", chunk: int = 50000) -> PathBundle:
    """Doob h-transform of the killed grid diffusion, sampled as an exact jump chain.

    Transitions over one chain step ``h`` are
    ``P_h(x, y) pi_{T-t-h}(y) / pi_{T-t}(x)`` with ``P_h`` the absorbed
    propagator of the physical tube form (``mode="plain"``: Dirichlet
    Laplacian of plain Brownian motion; ``mode="nu"``: with the extra
    potential).  ``h`` can be as coarse as the recording grid; the chain is
    exact for the discretized generator at any step.
    """
    form, prop, P, pis, K, x0 = _htransform_setup(curve, eps, T, N_s, N_v, h, mode)
    grid = form.grid
    S = np.repeat(grid.s, grid.N_v - 1)
    Nn = eps * np.tile(grid.v, grid.N_s)
    nn = form.size
    state = np.full(n, x0, dtype=np.int64)
    xs = np.empty((n, K + 1))
    ys = np.empty((n, K + 1))
    xs[:, 0], ys[:, 0] = S[x0], Nn[x0]
    offsets = np.arange(nn)[:, None]
    for k in range(K):
        Q = P * pis[K - k - 1][None, :]
        Q /= Q.sum(axis=1, keepdims=True)
        flat = (np.cumsum(Q, axis=1) + offsets).ravel()
        u = np.concatenate([RngStream(seed, c, k).generator().random(min(chunk, n - c * chunk)) for c in range(math.ceil(n / chunk))])
        pos = np.searchsorted(flat, state + np.minimum(u, 1 - 1e-16), side="right")
        state = np.minimum(pos - state * nn, nn - 1)
        xs[:, k + 1], ys[:, k + 1] = S[state], Nn[state]
    sid = (np.arange(n) // chunk).astype(np.uint32)
    return PathBundle(np.arange(K + 1) * h, xs, ys, np.zeros(n), sid, "fermi", curve.total_length, float(eps), 1.0)


def htransform_marginal(curve, eps, T, N_s, N_v, h, t, mode: str = "plain") -> np.ndarray:
    """Node probabilities of the h-transform chain at time ``t`` by kernel algebra."""
    form, prop, P, pis, K, x0 = _htransform_setup(curve, eps, T, N_s, N_v, h, mode)
    k = _steps(t, h)
    row = np.zeros(form.size)
    row[x0] = 1.0
    for _ in range(k):
        row = row @ P
    p = row * pis[K - k] / pis[K][x0]
    return p / p.sum()


def limit_sampler(
    curve: CurveGeometry, T: float, h: float, n: int, seed: int, chunk: int = 20000, record_every: int | None = None, sign: float = 1.0
) -> PathBundle:
    """Brownian motion on arc length mod Lambda with the curvature Feynman-Kac weight.

    ``log_w = sign * (1/2) int_0^T kappa(s_u)^2 / 4 du`` by the trapezoid rule.
    The default ``sign=+1`` is the limit of plain Brownian motion conditioned
    to the tube: its Dirichlet Laplacian carries the attractive potential
    ``-kappa^2/4``, so the conditioned process favours curved stretches.
    """
    K = _steps(T, h)
    rec = _record_index(K, record_every)
    L = curve.total_length
    xs, lw, sid = [], [], []
    for c in range(math.ceil(n / chunk)):
        m = min(chunk, n - c * chunk)
        g = RngStream(seed, c).generator()
        s = np.zeros(m)
        V = potential_U(curve, s, np.zeros(m))
        acc = 0.5 * V
        out = np.zeros((m, rec.size))
        r = 1
        for k in range(1, K + 1):
            s = np.mod(s + g.standard_normal(m) * math.sqrt(h), L)
            V = potential_U(curve, s, np.zeros(m))
            acc += V if k < K else 0.5 * V
            if r < rec.size and rec[r] == k:
                out[:, r] = s
                r += 1
        xs.append(out)
        lw.append(sign * 0.5 * h * acc)
        sid.append(np.full(m, c, np.uint32))
    X = np.concatenate(xs)
    return PathBundle(rec * h, X, np.zeros_like(X), np.concatenate(lw), np.concatenate(sid), "base", L)


def _weights(log_w: np.ndarray):
    if not np.any(log_w):
        return None
    w = np.exp(log_w - log_w.max())
    return w / w.sum()


def _estimate(values: np.ndarray, log_w: np.ndarray) -> MCEstimate:
    n = values.size
    w = _weights(log_w)
    if w is None:
        mean = float(values.mean())
        se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return MCEstimate(mean, se, float(n), n)
    ess = float(1.0 / np.sum(w**2))
    if ess < ESS_FLOOR:
        raise EstimateRefused(f"effective sample size {ess:.1f} below {ESS_FLOOR}")
    mean = float(np.sum(w * values))
    se = float(math.sqrt(np.sum(w**2 * (values - mean) ** 2)))
    return MCEstimate(mean, se, min(ess, float(n)), n)


def marginal_stat(paths: PathBundle, f, t: float, curve: CurveGeometry | None = None) -> MCEstimate:
    """(Self-normalized) mean of ``f(pi(Y_t))``."""
    i = paths.step_of(t)
    return _estimate(np.asarray(f(paths.base_coordinate(i, curve)), float), paths.log_w)


def kolmogorov_modulus(paths: PathBundle, s: float, t: float, M: int, curve: CurveGeometry | None = None) -> MCEstimate:
    """``E[d_L(pi Y_s, pi Y_t)^{2M}]``."""
    if not s <= t:
        raise ValueError("need s <= t")
    if M < 1:
        raise ValueError("M must be a positive integer")
    a = paths.base_coordinate(paths.step_of(s), curve)
    b = paths.base_coordinate(paths.step_of(t), curve)
    L = paths.total_length
    d = np.abs(a - b)
    d = np.minimum(d, L - d)
    return _estimate(d ** (2 * M), paths.log_w)


def modulus_sweep(bundles: dict, s: float, lags, M: int, exponent: float):
    """Per-eps moment curves, log-log slopes, and one constant ``K`` fitted at the largest eps.

    ``K = max_lag E / lag^exponent`` at the first (largest) eps; a smaller eps
    passes if ``E <= K lag^exponent + 3 stderr`` at every lag.  Returns a dict
    with ``curves``, ``slopes``, ``K`` and ``violations``.
    """
    lags = np.asarray(lags, float)
    keys = list(bundles)
    curves, slopes = {}, {}
    for e in keys:
        est = [kolmogorov_modulus(bundles[e], s, s + lag, M) for lag in lags]
        curves[e] = est
        slopes[e] = float(np.polyfit(np.log(lags), np.log([x.mean for x in est]), 1)[0])
    K = max(x.mean / lag**exponent for x, lag in zip(curves[keys[0]], lags))
    viol = []
    for e in keys[1:]:
        for x, lag in zip(curves[e], lags):
            if x.mean > K * lag**exponent + 3 * x.stderr:
                viol.append({"eps": e, "lag": float(lag), "moment": x.mean, "bound": K * lag**exponent, "stderr": x.stderr})
    return {"curves": curves, "slopes": slopes, "K": K, "violations": viol}


def write_paths(path, bundle: PathBundle) -> int:
    """Write little-endian ``(stream_id u32, step u32, s f64, v_or_n f64, log_w f64)`` records.

    Records run path by path and step by step; a new path starts whenever
    ``step`` returns to 0.  Returns the number of records written.
    """
    n, k = bundle.x.shape
    rec = np.empty(n * k, dtype=PATH_RECORD)
    rec["stream_id"] = np.repeat(bundle.stream_id.astype(np.uint32), k)
    rec["step"] = np.tile(np.arange(k, dtype=np.uint32), n)
    rec["s"] = bundle.x.ravel()
    rec["v_or_n"] = bundle.y.ravel()
    rec["log_w"] = np.repeat(bundle.log_w, k)
    with open(path, "wb") as fh:
        fh.write(rec.tobytes())
    return rec.size


def read_paths(path) -> np.ndarray:
    return np.fromfile(path, dtype=PATH_RECORD)
