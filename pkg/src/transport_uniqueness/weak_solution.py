"""Particle representation of L1 densities and the dual (pushforward) semigroup.

A density y is replaced by a weighted particle measure; u(t) = T*(t) y moves
each particle along the characteristic flow and kills it at explosion.
Pairings with compactly supported bumps are exact sums over particles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import flow_engine
from .errors import NegativeDensity
from .field_expr import Expr, VectorField, evaluate
from .flow_engine import FlowOptions


@dataclass(frozen=True)
class BumpFunction:
    """f(x) = exp(1 - 1/(1 - r^2)) with r = |x - center| / radius, zero for r >= 1."""

    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        object.__setattr__(self, "center", tuple(float(v) for v in c))
        if not self.radius > 0:
            raise ValueError("bump radius must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def sup_norm(self) -> float:
        return 1.0

    def support(self) -> tuple[float, float]:
        """Support interval (one-dimensional bumps only)."""
        c = self.center[0]
        return c - self.radius, c + self.radius

    def _s(self, X):
        X = np.asarray(X, dtype=float)
        if self.dim == 1 and (X.ndim == 1 or X.ndim == 0):
            X = X.reshape(-1, 1)
        diff = X - np.asarray(self.center)
        return diff, np.sum(diff * diff, axis=-1) / self.radius**2

    def __call__(self, X) -> np.ndarray:
        _, s = self._s(X)
        inside = s < 1.0
        out = np.zeros(s.shape)
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside]))
        return out

    def gradient(self, X) -> np.ndarray:
        diff, s = self._s(X)
        inside = s < 1.0
        g = np.zeros(diff.shape)
        si = s[inside]
        f = np.exp(1.0 - 1.0 / (1.0 - si))
        g[inside] = (-2.0 * f / (1.0 - si) ** 2 / self.radius**2)[:, None] * diff[inside]
        return g

    def derivative_1d(self, x) -> np.ndarray:
        return self.gradient(np.asarray(x, dtype=float).reshape(-1, 1))[:, 0]


def bump_battery(n: int = 20, lo: float = -10.0, hi: float = 10.0, radius: float = 1.0) -> list[BumpFunction]:
    """One-dimensional bumps with equally spaced centres in [lo, hi]."""
    return [BumpFunction((float(c),), radius) for c in np.linspace(lo, hi, n)]


@dataclass
class ParticleCloud:
    positions: np.ndarray  # (N, d)
    weights: np.ndarray  # (N,)
    alive: np.ndarray  # (N,) bool
    provenance: dict = field(default_factory=dict)
    failed: np.ndarray | None = None  # (N,) bool, step failures (counted as dead)
    riemann_error: float | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim == 1:
            self.positions = self.positions.reshape(-1, 1)
        self.weights = np.asarray(self.weights, dtype=float)
        self.alive = np.asarray(self.alive, dtype=bool)
        if self.failed is None:
            self.failed = np.zeros(self.weights.shape, dtype=bool)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def __len__(self) -> int:
        return self.weights.size

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights)

    @property
    def alive_mass(self) -> float:
        return math.fsum(self.weights[self.alive])

    @property
    def dead_mass(self) -> float:
        return math.fsum(self.weights[~self.alive])

    def pair(self, f) -> float:
        """<f, u> = sum of w_i f(x_i) over alive particles."""
        if not self.alive.any():
            return 0.0
        return math.fsum(self.weights[self.alive] * f(self.positions[self.alive]))

    def rows(self):
        for i, (p, w, a) in enumerate(zip(self.positions, self.weights, self.alive)):
            yield [i, *p.tolist(), float(w), int(a)]


def sample_cloud(density: Expr, box, n: int, seed: int = 0, jitter: bool = False, signed: bool = False) -> ParticleCloud:
    """Midpoint lattice on ``box`` with weights density(x_i) * cell volume.

    ``n`` must be a perfect d-th power.  With ``jitter`` each node is moved
    uniformly inside its cell (seeded); otherwise ``seed`` only goes into
    the provenance record.  The Riemann error estimate compares against the
    lattice with half as many nodes per axis.
    """
    box = np.atleast_2d(np.asarray(box, dtype=float))
    d = box.shape[0]
    if d != density.dim:
        raise ValueError(f"box has {d} axes but the density has dimension {density.dim}")
    if n < 1:
        raise ValueError("need at least one particle")
    m = int(round(n ** (1.0 / d)))
    if m**d != n:
        raise ValueError(f"n={n} is not a perfect {d}-th power")

    def lattice(per_axis, rng=None):
        axes = []
        for lo, hi in box:
            step = (hi - lo) / per_axis
            axes.append(lo + step * (np.arange(per_axis) + 0.5))
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([g.reshape(-1) for g in grids])
        vol = float(np.prod((box[:, 1] - box[:, 0]) / per_axis))
        if rng is not None:
            steps = (box[:, 1] - box[:, 0]) / per_axis
            pts = pts + (rng.random(pts.shape) - 0.5) * steps
        return pts, vol

    rng = np.random.default_rng(seed) if jitter else None
    pts, vol = lattice(m, rng)
    dens = evaluate(density, pts)
    if not signed and np.any(dens < 0):
        k = int(np.flatnonzero(dens < 0)[0])
        raise NegativeDensity(f"density is {dens[k]!r} < 0 at {pts[k].tolist()}")
    weights = dens * vol
    err = None
    if m >= 2:
        cpts, cvol = lattice(m // 2)
        coarse = math.fsum(evaluate(density, cpts) * cvol)
        err = abs(math.fsum(weights) - coarse) / 3.0
    prov = {
        "density": density.source if density.source is not None else str(density),
        "sampling": "jittered midpoint lattice" if jitter else "midpoint lattice",
        "box": box.tolist(),
        "n": n,
        "seed": seed,
    }
    return ParticleCloud(pts, weights, np.ones(n, dtype=bool), prov, riemann_error=err)


def _cloud_at(cloud: ParticleCloud, res, j: int) -> ParticleCloud:
    states = res.states[:, j, :]
    alive_now = cloud.alive & ~np.isnan(states[:, 0])
    pos = np.where(np.isnan(states), res.last_state, states)
    failed = cloud.failed | (res.status == flow_engine.FAILED)
    return replace(cloud, positions=pos, alive=alive_now & ~failed, failed=failed)


def _solve(cloud: ParticleCloud, b: VectorField, times, opts):
    if cloud.dim != b.dim:
        raise ValueError("cloud and vector field dimensions differ")
    live = cloud.alive
    X0 = cloud.positions
    res = flow_engine.solve_batch(b, X0[live], times, opts)
    # re-expand to the full particle index so dead particles stay dead in place
    N, m, d = len(cloud), len(res.t_eval), cloud.dim
    states = np.full((N, m, d), np.nan)
    states[live] = res.states
    status = np.full(N, flow_engine.EXPLODED)
    status[live] = res.status
    last = X0.copy()
    last[live] = res.last_state
    tau = np.full(N, np.nan)
    tau[live] = res.tau_e
    return flow_engine.BatchResult(res.t_eval, states, status, tau, np.full(N, np.nan), np.zeros(N), last)


def pushforward(cloud: ParticleCloud, b: VectorField, t: float, opts: FlowOptions | None = None) -> ParticleCloud:
    """Move every alive particle to X_t(x_i); particles exploding before t die."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return replace(cloud)
    res = _solve(cloud, b, [t], opts)
    n_failed = int(np.sum(res.status == flow_engine.FAILED))
    out = _cloud_at(cloud, res, 0)
    if n_failed:
        out.provenance = {**cloud.provenance, "step_failures": n_failed}
    return out


def pushforward_series(cloud: ParticleCloud, b: VectorField, times, opts: FlowOptions | None = None) -> list[ParticleCloud]:
    """Snapshots u(t_j) for increasing times, from a single trajectory solve."""
    res = _solve(cloud, b, times, opts)
    return [_cloud_at(cloud, res, j) for j in range(len(res.t_eval))]


def simpson(values, dt: float) -> float:
    v = np.asarray(values, dtype=float)
    n = v.size - 1
    if n < 2 or n % 2:
        raise ValueError("composite Simpson needs an even number of intervals")
    return dt / 3.0 * (v[0] + v[-1] + 4.0 * math.fsum(v[1:-1:2]) + 2.0 * math.fsum(v[2:-1:2]))


@dataclass
class WeakResidual:
    residual: float  # normalised
    raw: float
    times: np.ndarray
    pairings: np.ndarray  # <f, u(t_j)>
    drift_pairings: np.ndarray  # <b.grad f, u(t_j)>
    n_time: int


def weak_residual(b: VectorField, y: ParticleCloud, f: BumpFunction, t: float, n_time: int = 64,
                  opts: FlowOptions | None = None, details: bool = False):
    """|<f,u(t)> - <f,y> - int_0^t <b.grad f, u(s)> ds| / (||f||_inf * sum|w|).

    The time integral is composite Simpson over ``n_time`` intervals (even),
    on snapshots of one trajectory solve per particle.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    if n_time < 2 or n_time % 2:
        raise ValueError("n_time must be an even integer >= 2")
    times = np.linspace(0.0, t, n_time + 1)
    snaps = pushforward_series(y, b, times, opts)

    def drift(X):
        return np.einsum("ij,ij->i", b(X), f.gradient(X))

    pair = np.array([s.pair(f) for s in snaps])
    dpair = np.array([s.pair(drift) for s in snaps])
    raw = abs(pair[-1] - pair[0] - simpson(dpair, t / n_time))
    norm = f.sup_norm * math.fsum(np.abs(y.weights))
    res = raw / norm if norm > 0 else 0.0
    if details:
        return WeakResidual(res, raw, times, pair, dpair, n_time)
    return res


def mass_audit(b: VectorField, y: ParticleCloud, times, opts: FlowOptions | None = None):
    """Rows (t, alive_mass, dead_mass); alive + dead equals the initial mass."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be increasing")
    if len(y) == 0:
        return [(float(t), 0.0, 0.0) for t in times]
    snaps = pushforward_series(y, b, times, opts)
    return [(float(t), s.alive_mass, s.dead_mass) for t, s in zip(times, snaps)]
