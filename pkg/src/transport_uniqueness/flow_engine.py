"""Characteristics dX/dt = b(X): adaptive integration, explosion detection,
and the escape-to-infinity certificate for radial bounds.

The integrator is a Dormand-Prince 5(4) pair run in lock-step over a batch
of starting points, each point keeping its own time and step size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm as _normal
from scipy.stats import qmc

from . import quadrature
from .errors import CertificateFailure, EvalError, StepFailure
from .field_expr import RadialBound, VectorField

ALIVE, EXPLODED, FAILED = 0, 1, 2
STATUS_NAMES = {ALIVE: "alive", EXPLODED: "exploded", FAILED: "step_failure"}

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array(_A[6] + [0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass(frozen=True)
class FlowOptions:
    rtol: float = 1e-9
    atol: float = 1e-12
    R_explode: float = 1e6
    h_min: float = 1e-12
    max_steps: int = 200_000
    safety: float = 0.9
    # stall: over stall_window attempts, time advanced by less than
    # stall_fraction of the horizon while |X| did not double
    stall_window: int = 1000
    stall_fraction: float = 1e-6


@dataclass
class Trajectory:
    initial_point: np.ndarray
    times: np.ndarray
    states: np.ndarray
    status: str
    horizon: float
    tau_e_estimate: float | None = None
    bracket_width: float | None = None
    failure_time: float | None = None

    @property
    def samples(self):
        return list(zip(self.times.tolist(), [s.tolist() for s in self.states]))

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def raise_for_status(self) -> "Trajectory":
        if self.status == "step_failure":
            raise StepFailure(self.failure_time, f"trajectory from {self.initial_point.tolist()}")
        return self


@dataclass
class BatchResult:
    """Per-point states at the requested output times."""

    t_eval: np.ndarray
    states: np.ndarray  # (N, m, d); NaN after death
    status: np.ndarray  # (N,) ALIVE / EXPLODED / FAILED
    tau_e: np.ndarray  # (N,) midpoint of the bracket, NaN unless exploded
    bracket: np.ndarray  # (N,) bracket width
    stop_time: np.ndarray  # (N,) time reached (last accepted)
    last_state: np.ndarray  # (N, d)
    history: list | None = None

    def alive_at(self, j: int) -> np.ndarray:
        return ~np.isnan(self.states[:, j, 0])


def _initial_step(b, X, f0, span, opts):
    sc = opts.atol + opts.rtol * np.abs(X)
    d0 = np.max(np.abs(X) / sc, axis=1)
    d1 = np.max(np.abs(f0) / sc, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        h0 = np.where((d0 > 1e-5) & (d1 > 1e-5), 0.01 * d0 / d1, 1e-6)
    h0 = np.where(np.isfinite(h0), h0, 1e-6)
    return np.minimum(h0, span)


def solve_batch(b: VectorField, X0, t_eval, opts: FlowOptions | None = None, record: bool = False) -> BatchResult:
    """Integrate every row of ``X0`` and report states at the times ``t_eval``.

    ``t_eval`` must be non-decreasing and start at a non-negative time.  Each
    point lands exactly on every output time.  Points whose step size
    collapses below ``h_min`` are classified as exploded (radius above
    ``R_explode`` and still growing) or as step failures.
    """
    opts = opts or FlowOptions()
    X = np.array(X0, dtype=float, copy=True)
    if X.ndim == 1:
        X = X.reshape(-1, b.dim) if b.dim > 1 else X.reshape(-1, 1)
    N, d = X.shape
    t_eval = np.asarray(t_eval, dtype=float)
    m = t_eval.size
    if np.any(np.diff(t_eval) < 0) or (m and t_eval[0] < 0):
        raise ValueError("t_eval must be non-decreasing and non-negative")
    out = np.full((N, m, d), np.nan)
    t = np.zeros(N)
    nxt = np.zeros(N, dtype=int)
    j0 = 0
    while j0 < m and t_eval[j0] == 0.0:
        out[:, j0] = X
        j0 += 1
    nxt[:] = j0
    status = np.full(N, ALIVE)
    tau = np.full(N, np.nan)
    bracket = np.full(N, np.nan)
    attempts = np.zeros(N, dtype=int)
    history = [[(0.0, X[i].copy())] for i in range(N)] if record else None

    active = nxt < m
    k1 = np.zeros_like(X)
    h = np.zeros(N)
    if active.any():
        idx = np.flatnonzero(active)
        k1[idx] = b(X[idx])
        h[idx] = _initial_step(b, X[idx], k1[idx], t_eval[nxt[idx]] - t[idx], opts)
    last_norm = np.linalg.norm(X, axis=1)
    prev_norm = last_norm.copy()
    horizon = float(t_eval[-1]) if m else 0.0
    anchor_t, anchor_norm, anchor_at = t.copy(), last_norm.copy(), np.zeros(N, dtype=int)

    while active.any():
        idx = np.flatnonzero(active)
        Xa, ta = X[idx], t[idx]
        target = t_eval[nxt[idx]]
        remaining = target - ta
        ha = np.minimum(h[idx], remaining)
        landing = h[idx] >= remaining
        hc = ha[:, None]
        K = np.empty((7, idx.size, d))
        K[0] = k1[idx]
        with np.errstate(all="ignore"):
            for s in range(1, 6):
                K[s] = _safe_eval(b, Xa + hc * _combine(_A[s], K))
            Xn = Xa + hc * _combine(_B5, K)
            K[6] = _safe_eval(b, Xn)
            err_vec = hc * _combine(_E, K)
            scale = opts.atol + opts.rtol * np.maximum(np.abs(Xa), np.abs(Xn))
            err = np.max(np.abs(err_vec) / scale, axis=1)
        finite = np.isfinite(err) & np.all(np.isfinite(Xn), axis=1) & np.all(np.isfinite(K[6]), axis=1)
        acc = finite & (err <= 1.0)
        attempts[idx] += 1

        with np.errstate(divide="ignore"):
            factor = np.where(finite, opts.safety * np.power(np.maximum(err, 1e-10), -0.2), 0.2)
        factor = np.clip(factor, 0.2, 5.0)
        factor = np.where(acc, factor, np.minimum(factor, 1.0))
        h_new = ha * factor

        ai = idx[acc]
        if ai.size:
            t[ai] = np.where(landing[acc], target[acc], ta[acc] + ha[acc])
            X[ai] = Xn[acc]
            k1[ai] = K[6][acc]
            prev_norm[ai] = last_norm[ai]
            last_norm[ai] = np.linalg.norm(Xn[acc], axis=1)
            if record:
                for i in ai:
                    history[i].append((float(t[i]), X[i].copy()))
            hit = ai[landing[acc]]
            # several identical output times are all satisfied by one landing
            while hit.size:
                out[hit, nxt[hit]] = X[hit]
                nxt[hit] += 1
                more = nxt[hit] < m
                hit = hit[more]
                hit = hit[t_eval[nxt[hit]] == t[hit]]
        h[idx] = h_new

        # a proposed step below h_min means the controller has collapsed; a
        # landing step may legitimately be tiny, so only count unclipped ones
        collapsed = (h_new < opts.h_min) & ~(acc & landing)
        if collapsed.any():
            ci = idx[collapsed]
            growing = (last_norm[ci] >= opts.R_explode) & (last_norm[ci] > prev_norm[ci])
            ex = ci[growing]
            # bracket: [last accepted time, end of the step that was attempted]
            width = np.maximum(ha[collapsed][growing], h_new[collapsed][growing])
            status[ex] = EXPLODED
            tau[ex] = t[ex] + 0.5 * width
            bracket[ex] = width
            status[ci[~growing]] = FAILED
        stalled = idx[(attempts[idx] > opts.max_steps) & (status[idx] == ALIVE)]
        status[stalled] = FAILED
        due = idx[(attempts[idx] - anchor_at[idx] >= opts.stall_window) & (status[idx] == ALIVE)]
        if due.size:
            slow = (t[due] - anchor_t[due] < opts.stall_fraction * horizon) & (
                last_norm[due] < 2.0 * anchor_norm[due] + opts.atol)
            status[due[slow]] = FAILED
            anchor_t[due], anchor_norm[due], anchor_at[due] = t[due], last_norm[due], attempts[due]
        active = (nxt < m) & (status == ALIVE)

    return BatchResult(t_eval, out, status, tau, bracket, t.copy(), X, history)


def _combine(coeffs, K):
    acc = None
    for j, c in enumerate(coeffs):
        if c != 0.0:
            acc = c * K[j] if acc is None else acc + c * K[j]
    return acc


def _safe_eval(b: VectorField, Y):
    # overflowed stage points and domain errors reject the step instead of
    # aborting the whole batch
    bad = ~np.all(np.isfinite(Y), axis=1)
    if not bad.any():
        try:
            return b(Y)
        except EvalError:
            pass
    out = np.full_like(Y, np.nan)
    for i in np.flatnonzero(~bad):
        try:
            out[i] = b(Y[i:i + 1])[0]
        except EvalError:
            pass
    return out


def integrate(b: VectorField, x, horizon: float, opts: FlowOptions | None = None) -> Trajectory:
    """Solve dX/dt = b(X), X(0) = x on [0, horizon], keeping every accepted step."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    x = np.asarray(x, dtype=float).reshape(1, b.dim)
    res = solve_batch(b, x, [float(horizon)], opts, record=True)
    hist = res.history[0]
    times = np.array([p[0] for p in hist])
    states = np.array([p[1] for p in hist])
    st = STATUS_NAMES[int(res.status[0])]
    traj = Trajectory(x[0].copy(), times, states, st, float(horizon))
    if st == "exploded":
        traj.tau_e_estimate = float(res.tau_e[0])
        traj.bracket_width = float(res.bracket[0])
    elif st == "step_failure":
        traj.failure_time = float(res.stop_time[0])
    return traj


def flow_map(b: VectorField, X0, t: float, opts: FlowOptions | None = None) -> np.ndarray:
    """X_t(x) for each row of X0; raises StepFailure unless every point stays alive."""
    res = solve_batch(b, X0, [t], opts)
    if np.any(res.status != ALIVE):
        i = int(np.flatnonzero(res.status != ALIVE)[0])
        raise StepFailure(float(res.stop_time[i]), f"{STATUS_NAMES[int(res.status[i])]} before t={t}")
    return res.states[:, 0, :]


def semigroup_check(b: VectorField, x, t: float, s: float, opts: FlowOptions | None = None) -> float:
    """|X_{t+s}(x) - X_s(X_t(x))| with identical tolerances on both routes."""
    x = np.asarray(x, dtype=float).reshape(1, b.dim)
    direct = flow_map(b, x, t + s, opts)
    mid = flow_map(b, x, t, opts) if t > 0 else x
    composed = flow_map(b, mid, s, opts) if s > 0 else mid
    return float(np.linalg.norm(direct - composed))


# --------------------------------------------------------------------------
# escape certificate


@dataclass
class EscapeCertificate:
    radial_bound: RadialBound
    h_table: np.ndarray  # (K, 2): r, h(r)
    points: np.ndarray  # (P, d) starting points
    times: np.ndarray  # (P,)
    h_of_state: np.ndarray  # h(|X_t(x)|)
    lower_bound: np.ndarray  # h(|x|) - t
    margin: np.ndarray
    tol_cert: float
    divergence: object = None
    min_radius_by_start: list = field(default_factory=list)
    trend_nondecreasing: bool | None = None
    bound_excess: float = 0.0  # max of (b.x/|x|)^- - beta(|x|) over sampled states

    @property
    def checked_points(self):
        return [
            (p.tolist(), float(t), float(a), float(lb), float(mg))
            for p, t, a, lb, mg in zip(self.points, self.times, self.h_of_state, self.lower_bound, self.margin)
        ]

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margin)) if self.margin.size else float("inf")

    @property
    def passed(self) -> bool:
        return self.min_margin >= -self.tol_cert

    def violations(self):
        bad = np.flatnonzero(self.margin < -self.tol_cert)
        return [(self.points[i].tolist(), float(self.times[i]), float(self.margin[i])) for i in bad]


def sphere_directions(d: int, n: int, seed: int = 0) -> np.ndarray:
    """Deterministic low-discrepancy directions on the unit sphere in R^d."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        # rotated equispaced angles; the seed only fixes the rotation
        offset = np.random.default_rng(seed).random()
        ang = 2 * np.pi * (np.arange(n) + offset) / n
        return np.column_stack([np.cos(ang), np.sin(ang)])
    pts = qmc.Sobol(d, scramble=True, seed=seed).random(n)
    g = _normal.ppf(np.clip(pts, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def radial_primitive(bound: RadialBound, radii) -> np.ndarray:
    """h(r) = integral from R to r of ds / beta(s)."""
    radii = np.asarray(radii, dtype=float)
    return quadrature.cumulative(lambda r: 1.0 / bound(r), bound.inner_radius, radii)


def escape_certificate(
    b: VectorField,
    bound: RadialBound,
    test_radii,
    t_max: float,
    n_directions: int = 32,
    n_times: int = 61,
    tol_cert: float = 1e-6,
    seed: int = 0,
    opts: FlowOptions | None = None,
    raise_on_failure: bool = True,
) -> EscapeCertificate:
    """Check h(|X_t(x)|) >= h(|x|) - t along sampled characteristics.

    Samples are restricted to times before the trajectory first enters the
    ball of radius R and before explosion.  Raises :class:`CertificateFailure`
    when some margin is below ``-tol_cert``.
    """
    from .uniqueness1d import RadialTail, divergence_test

    R = bound.inner_radius
    verdict = divergence_test(1 / bound.beta, RadialTail(R))
    if verdict.kind != "diverges":
        raise CertificateFailure([], f"integral of 1/beta on [R, inf) not shown divergent ({verdict.kind})")

    d = b.dim
    dirs = sphere_directions(d, n_directions, seed)
    radii = np.asarray(sorted(float(r) for r in test_radii))
    if np.any(radii < R):
        raise ValueError("test radii must be at least the inner radius R")
    starts = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, d)
    t_grid = np.linspace(0.0, t_max, n_times)
    res = solve_batch(b, starts, t_grid, opts)
    if np.any(res.status == FAILED):
        i = int(np.flatnonzero(res.status == FAILED)[0])
        raise StepFailure(float(res.stop_time[i]), f"escape certificate start {starts[i].tolist()}")

    rad = np.linalg.norm(res.states, axis=2)  # NaN after explosion
    valid = np.isfinite(rad) & (np.minimum.accumulate(np.where(np.isfinite(rad), rad, np.inf), axis=1) >= R)
    P, M = np.nonzero(valid)
    r_state = rad[P, M]
    r_start = np.linalg.norm(starts, axis=1)
    h_vals = radial_primitive(bound, np.concatenate([r_state, r_start]))
    h_state, h_start = h_vals[: r_state.size], h_vals[r_state.size:]
    lower = h_start[P] - t_grid[M]
    margin = h_state - lower

    # the hypothesis (b.x/|x|)^- <= beta(|x|) itself, sampled on the same states
    X_s = res.states[P, M]
    bx = np.einsum("ij,ij->i", b(X_s), X_s) / r_state
    excess = np.maximum(-bx, 0.0) - bound(r_state)
    r_table = np.geomspace(R, max(float(np.max(r_state)), R * 1.0001), 64) if r_state.size else np.array([R])
    h_table = np.column_stack([r_table, radial_primitive(bound, r_table)])

    end_rad = rad[:, -1].reshape(radii.size, -1)
    min_by_radius = [float(np.nanmin(row)) if np.any(np.isfinite(row)) else float("inf") for row in end_rad]
    trend = bool(np.all(np.diff(min_by_radius) >= 0)) if len(min_by_radius) > 1 else None

    cert = EscapeCertificate(
        radial_bound=bound,
        h_table=h_table,
        points=starts[P],
        times=t_grid[M],
        h_of_state=h_state,
        lower_bound=lower,
        margin=margin,
        tol_cert=tol_cert,
        divergence=verdict,
        min_radius_by_start=list(zip(radii.tolist(), min_by_radius)),
        trend_nondecreasing=trend,
        bound_excess=float(np.max(excess)) if excess.size else 0.0,
    )
    if raise_on_failure and not cert.passed:
        exc = CertificateFailure(cert.violations())
        exc.certificate = cert
        raise exc
    return cert
