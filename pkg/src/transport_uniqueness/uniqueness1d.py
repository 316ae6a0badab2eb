"""One-dimensional uniqueness analysis for A f = b f' on C_c^inf(R).

Uniqueness fails exactly when mass can enter from infinity in finite time,
i.e. when the integral of 1/b over the inflowing tail converges.  When it
does, an explicit L1 eigenfunction of the adjoint is built:

    h(x) = b(c)/b(x) * exp(-lam * int_c^x ds/b(s)),     -(b h)' = lam h,

extended by zero beyond the first zero of b when b changes sign.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import quadrature
from .errors import GluingFailure, NonPositiveIntegrand, QuadratureError, SignViolation
from .field_expr import Expr, VectorField, evaluate
from .weak_solution import BumpFunction, bump_battery


def _ev(e: Expr, x) -> np.ndarray:
    """Evaluate a one-variable expression elementwise, keeping the input shape."""
    x = np.asarray(x, dtype=float)
    return evaluate(e, x.reshape(-1, 1)).reshape(x.shape)


EXACT_CAUCHY_TOL = 4 * np.finfo(float).eps


class TangentZeroWarning(UserWarning):
    """b touches zero without changing sign."""


# --------------------------------------------------------------------------
# tails and the divergence test


@dataclass(frozen=True)
class LeftTail:
    """The half-line (-inf, anchor]."""

    anchor: float
    direction = -1

    def point(self, T):
        return self.anchor - np.asarray(T, dtype=float)


@dataclass(frozen=True)
class RightTail:
    """The half-line [anchor, +inf)."""

    anchor: float
    direction = 1

    def point(self, T):
        return self.anchor + np.asarray(T, dtype=float)


@dataclass(frozen=True)
class RadialTail(RightTail):
    """[R, +inf) in the radial variable."""


Tail = Union[LeftTail, RightTail, RadialTail]


@dataclass(frozen=True)
class DivergenceOptions:
    T0: float = 1.0
    k_max: int = 60
    M: float = 1e3
    cauchy_tol: float = 1e-9
    fit_tol: float = 1e-2
    k_fit_min: int = 20
    fit_window: int = 4
    quad_rel_tol: float = 1e-12
    quad_abs_tol: float = 1e-13


@dataclass
class DivergenceVerdict:
    kind: str  # "diverges" | "converges" | "inconclusive"
    tail: str
    value: float | None = None
    abs_err: float | None = None
    cutoffs: list = field(default_factory=list)  # (T, partial integral)
    growth_exponent_fit: float | None = None
    reason: str = ""
    by_convention: bool = False

    @property
    def diverges(self) -> bool:
        return self.kind == "diverges"

    @property
    def converges(self) -> bool:
        return self.kind == "converges"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "tail": self.tail,
            "value": self.value,
            "abs_err": self.abs_err,
            "growth_exponent_fit": self.growth_exponent_fit,
            "reason": self.reason,
            "by_convention": self.by_convention,
            "cutoffs": [[float(T), float(v)] for T, v in self.cutoffs],
        }


def _tail_name(tail: Tail) -> str:
    return f"{type(tail).__name__}({tail.anchor!r})"


def _as_function(integrand) -> Callable:
    if isinstance(integrand, Expr):
        return lambda x: _ev(integrand, np.asarray(x, dtype=float))
    return integrand


def _positive(g: Callable) -> Callable:
    def checked(x):
        v = np.asarray(g(x), dtype=float)
        bad = ~(v > 0)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise NonPositiveIntegrand(float(np.asarray(x).reshape(-1)[k]), float(v.reshape(-1)[k]))
        return v

    return checked


def _slope(Ts, gs) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        lt = np.log(np.asarray(Ts))
        lg = np.log(np.asarray(gs))
    if np.any(np.isposinf(lg)):
        return math.inf
    if np.any(~np.isfinite(lg)):
        return -math.inf
    return float(np.polyfit(lt, lg, 1)[0])


def divergence_test(integrand, tail: Tail, opts: DivergenceOptions | None = None,
                    antiderivative: Expr | None = None) -> DivergenceVerdict:
    """Three-valued test of whether the integral of ``integrand`` over ``tail`` is infinite.

    Partial integrals are accumulated over cutoffs T_k = T0 * 2^k (distance
    from the anchor), panel by panel with adaptive Gauss-Kronrod, or from an
    exact ``antiderivative`` when one is supplied (then the Cauchy test runs
    down to roundoff).  ``integrand`` must be
    strictly positive on the tail.
    """
    opts = opts or DivergenceOptions()
    g = _positive(_as_function(integrand))
    name = _tail_name(tail)
    a = tail.anchor
    F = None
    if antiderivative is not None:
        F = _as_function(antiderivative)
        F_anchor = float(np.asarray(F(np.array([a])))[0])

    cutoffs: list[tuple[float, float]] = []
    g_at: list[float] = []
    exps: list[float] = []
    partial = 0.0
    quad_err = 0.0
    prev_T = 0.0
    for k in range(opts.k_max + 1):
        T = opts.T0 * 2.0**k
        if F is not None:
            end = float(np.asarray(F(np.array([float(tail.point(T))])))[0])
            partial = (end - F_anchor) * tail.direction
            g(np.array([float(tail.point(T))]))
        else:
            lo, hi = sorted((float(tail.point(prev_T)), float(tail.point(T))))
            panel, err = quadrature.integrate(g, lo, hi, opts.quad_abs_tol, opts.quad_rel_tol)
            partial += panel
            quad_err += err
        prev_T = T
        cutoffs.append((T, partial))
        g_at.append(float(g(np.array([float(tail.point(T))]))[0]))
        w = opts.fit_window
        p = _slope([c[0] for c in cutoffs[-w:]], g_at[-w:]) if k >= 1 else None
        exps.append(p if p is not None else math.nan)

        if math.isinf(partial):
            return DivergenceVerdict("diverges", name, None, None, cutoffs, p, "partial integral overflowed")
        if k >= 2:
            d1 = abs(cutoffs[-1][1] - cutoffs[-2][1])
            d2 = abs(cutoffs[-2][1] - cutoffs[-3][1])
            # antiderivative values are cheap, so exact mode runs to roundoff
            base = EXACT_CAUCHY_TOL if F is not None else opts.cauchy_tol
            tol = base * max(1.0, abs(partial))
            if d1 < tol and d2 < tol:
                q = d1 / d2 if d2 > 0 else 0.0
                tail_est = d1 * q / (1.0 - q) if q < 1.0 else d1
                return DivergenceVerdict("converges", name, partial, tail_est + quad_err, cutoffs, p,
                                         "partial integrals are Cauchy over the last three cutoffs")
        slow = p is not None and p >= -1.0 - opts.fit_tol
        if partial > opts.M and slow:
            return DivergenceVerdict("diverges", name, None, None, cutoffs, p,
                                     f"partial integral exceeds M={opts.M:g} with tail exponent {p:.4g}")
        if k >= opts.k_fit_min and len(exps) >= 3:
            recent = exps[-3:]
            growing = cutoffs[-1][1] > cutoffs[-2][1]
            if growing and all(e >= -1.0 - opts.fit_tol for e in recent):
                return DivergenceVerdict("diverges", name, None, None, cutoffs, p,
                                         f"integrand decays no faster than t^-1 (fitted exponent {p:.4g})")
    return DivergenceVerdict("inconclusive", name, None, None, cutoffs, exps[-1] if exps else None,
                             f"no rule fired by k_max={opts.k_max}")


def convention_verdict(tail: Tail, reason: str) -> DivergenceVerdict:
    """The vanishing-part convention: 1/b^+ (or 1/b^-) is +inf where b^+ (b^-) is 0."""
    return DivergenceVerdict("diverges", _tail_name(tail), reason=reason, by_convention=True)


# --------------------------------------------------------------------------
# witnesses


class Witness:
    """h(x) = b(c)/b(x) exp(-lam int_c^x ds/b(s)) on ``support``, zero elsewhere.

    The primitive of 1/b is cached at knots marching away from c so that
    far-away evaluations do not repeat the whole integral.
    """

    def __init__(self, b: Expr, reference_point: float, support=(-math.inf, math.inf), lam: float = 1.0):
        self.b = b
        self.c = float(reference_point)
        self.support = (float(support[0]), float(support[1]))
        self.lam = float(lam)
        if not self.support[0] < self.c < self.support[1]:
            raise ValueError("reference point must lie inside the support")
        self.b_c = float(_ev(b, np.array([self.c]))[0])
        if self.b_c == 0.0:
            raise ValueError("b vanishes at the reference point")
        self.l1_norm_estimate: float | None = None
        self.l1_cutoffs: list = []
        self.l1_converged = False
        self._knots = {1: ([self.c], [0.0]), -1: ([self.c], [0.0])}

    def _inv_b(self, x):
        return 1.0 / _ev(self.b, np.asarray(x, dtype=float))

    def _next_knot(self, side: int, j: int) -> float:
        edge = self.support[1] if side > 0 else self.support[0]
        if math.isfinite(edge):
            return edge - (edge - self.c) * 2.0 ** (-j)
        return self.c + side * (2.0**j - 1.0)

    def _extend(self, side: int, x: float):
        pts, vals = self._knots[side]
        while (x - pts[-1]) * side > 0 and len(pts) < 80:
            new = self._next_knot(side, len(pts))
            if new == pts[-1]:
                break
            v, _ = quadrature.integrate(self._inv_b, pts[-1], new)
            pts.append(new)
            vals.append(vals[-1] + v)

    def primitive(self, x) -> np.ndarray:
        """int_c^x ds / b(s) for points inside the support."""
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        out = np.zeros_like(flat)
        for side in (1, -1):
            sel = np.flatnonzero((flat - self.c) * side > 0)
            if sel.size == 0:
                continue
            xs = flat[sel]
            self._extend(side, float(np.max(xs * side)) * side)
            pts = np.asarray(self._knots[side][0]) * side
            vals = np.asarray(self._knots[side][1])
            j = np.searchsorted(pts, xs * side, side="right") - 1
            start = pts[j] * side
            gaps, _ = quadrature.integrate_many(self._inv_b, np.minimum(start, xs), np.maximum(start, xs))
            out[sel] = vals[j] + side * gaps
        return out.reshape(x.shape)

    def log_abs(self, x):
        """(log|h(x)|, sign h(x)) inside the support."""
        x = np.asarray(x, dtype=float)
        bx = _ev(self.b, x.reshape(-1)).reshape(x.shape)
        G = self.primitive(x)
        with np.errstate(divide="ignore"):
            la = math.log(abs(self.b_c)) - np.log(np.abs(bx)) - self.lam * G
        return la, np.sign(self.b_c) * np.sign(bx)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        out = np.zeros(x.shape)
        inside = (x > self.support[0]) & (x < self.support[1])
        if inside.any():
            la, sg = self.log_abs(x[inside])
            with np.errstate(over="ignore"):
                out[inside] = np.where(np.isfinite(la) | (la > 0), sg * np.exp(la), 0.0)
        return float(out[0]) if scalar else out

    def b_times_h(self, x) -> np.ndarray:
        """b(x) h(x) = b(c) exp(-lam G(x)), evaluated without the 1/b factor."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        with np.errstate(over="ignore"):
            return self.b_c * np.exp(-self.lam * self.primitive(x))

    def _side_l1(self, side: int, M: float, tol: float, k_max: int):
        edge = self.support[1] if side > 0 else self.support[0]
        absh = lambda x: np.abs(self(x))
        if math.isfinite(edge):
            v, err = quadrature.integrate(absh, *sorted((self.c, edge)), abs_tol=1e-12, rel_tol=1e-10)
            return abs(v), True, [(abs(edge - self.c), abs(v))]
        partial, cut, prev = 0.0, [], self.c
        for k in range(k_max + 1):
            nxt = self.c + side * (2.0**k)
            v, _ = quadrature.integrate(absh, *sorted((prev, nxt)), abs_tol=1e-14, rel_tol=1e-12)
            partial += abs(v)
            prev = nxt
            cut.append((2.0**k, partial))
            if not math.isfinite(partial) or partial > M:
                return partial, False, cut
            if k >= 2:
                d1 = cut[-1][1] - cut[-2][1]
                d2 = cut[-2][1] - cut[-3][1]
                if d1 < tol * max(1.0, partial) and d2 < tol * max(1.0, partial):
                    return partial, True, cut
        return partial, False, cut

    def l1_norm(self, M: float = math.inf, tol: float = 1e-9, k_max: int = 60):
        """Partial L1 integrals walking out from c; sets ``l1_norm_estimate``.

        Returns (estimate, converged, cutoffs) where cutoffs lists, for each
        infinite side, the (distance, partial) pairs.
        """
        total, ok, cuts = 0.0, True, {}
        for side in (-1, 1):
            v, conv, cut = self._side_l1(side, M, tol, k_max)
            total += v
            ok = ok and conv
            cuts["left" if side < 0 else "right"] = cut
        self.l1_norm_estimate = total
        self.l1_cutoffs = cuts
        self.l1_converged = ok
        return total, ok, cuts

    def sample(self, lo: float, hi: float, n: int = 401):
        x = np.linspace(lo, hi, n)
        return x, self(x)

    def to_dict(self) -> dict:
        return {
            "reference_point": self.c,
            "support": [_json_float(self.support[0]), _json_float(self.support[1])],
            "lambda": self.lam,
            "normalization": "h(c) = 1",
            "l1_norm_estimate": self.l1_norm_estimate,
            "l1_converged": self.l1_converged,
        }


def _json_float(v: float):
    if math.isinf(v):
        return "-inf" if v < 0 else "inf"
    return v


# --------------------------------------------------------------------------
# residual test


def residual_profile(b: Expr, h, lam: float = 1.0, battery=None, abs_tol: float = 1e-12):
    """rho(f) = int (lam f - b f') h dx per bump, with its normaliser.

    ``h`` is a :class:`Witness` or any vectorised callable (support taken as R).
    Returns a list of dicts.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    battery = bump_battery() if battery is None else battery
    support = getattr(h, "support", (-math.inf, math.inf))
    rows = []
    for f in battery:
        lo, hi = f.support()
        a, z = max(lo, support[0]), min(hi, support[1])

        def integrand(x, f=f):
            bx = _ev(b, x)
            return (lam * f(x) - bx * f.derivative_1d(x)) * h(x)

        rho = 0.0
        if a < z:
            # split at the bump centre as well; the integrand is smooth otherwise
            cuts = sorted({a, z, min(max(f.center[0], a), z)})
            for u, v in zip(cuts[:-1], cuts[1:]):
                if v > u:
                    try:
                        val, _ = quadrature.integrate(integrand, u, v, abs_tol=abs_tol, rel_tol=1e-12)
                    except QuadratureError as exc:
                        raise QuadratureError(exc.panel, f"residual for bump at {f.center[0]:g}: {exc}") from exc
                    rho += val
        xs = np.linspace(lo, hi, 2001)[1:-1]
        norm = lam * f.sup_norm + float(np.max(np.abs(_ev(b, xs) * f.derivative_1d(xs))))
        rows.append({"center": f.center[0], "radius": f.radius, "rho": rho, "normalizer": norm,
                     "normalized": abs(rho) / norm})
    return rows


def residual_test(b: Expr, h, lam: float = 1.0, battery=None) -> float:
    """max over the battery of |rho(f)| / (lam ||f||_inf + ||b f'||_inf)."""
    rows = residual_profile(b, h, lam, battery)
    return max((r["normalized"] for r in rows), default=0.0)


# --------------------------------------------------------------------------
# zero structure


@dataclass
class ZeroStructure:
    c0: float
    cN: float
    zeros: list[float]
    interval_signs: list[int]
    tangent: list[bool]

    def to_dict(self) -> dict:
        return {"c0": self.c0, "cN": self.cN, "zeros": self.zeros,
                "interval_signs": self.interval_signs, "tangent": self.tangent}


def _scalar_b(b) -> Expr:
    return b.scalar() if isinstance(b, VectorField) else b


def find_zero_structure(b, c0: float, cN: float, scan_step: float | None = None,
                        root_tol: float = 1e-10) -> ZeroStructure:
    """Roots of b in [c0, cN] by a bracketing scan and refinement.

    Sign changes are refined with Brent's method; local minima of |b| that
    reach zero without a sign change are reported as tangent zeros.
    """
    b = _scalar_b(b)
    if not c0 < cN:
        raise ValueError("need c0 < cN")
    step = scan_step or 1e-3 * (cN - c0)
    n = max(int(math.ceil((cN - c0) / step)), 2)
    xs = np.linspace(c0, cN, n + 1)
    vs = _ev(b, xs)
    f = lambda x: float(_ev(b, np.array([x]))[0])
    sg = np.sign(vs)
    zeros: list[float] = []
    tangent: list[bool] = []

    def add(x, is_tangent):
        if zeros and abs(x - zeros[-1]) <= 10 * root_tol:
            return
        zeros.append(float(x))
        tangent.append(bool(is_tangent))

    for i in range(n + 1):
        if sg[i] == 0:
            left = sg[i - 1] if i > 0 else np.sign(f(xs[i] - step))
            right = sg[i + 1] if i < n else np.sign(f(xs[i] + step))
            add(xs[i], left == right and left != 0)
            continue
        if i < n and sg[i + 1] != 0 and sg[i] != sg[i + 1]:
            add(brentq(f, xs[i], xs[i + 1], xtol=root_tol * 1e-3), False)
        elif 0 < i < n and sg[i - 1] == sg[i] == sg[i + 1] and abs(vs[i]) <= abs(vs[i - 1]) and abs(vs[i]) <= abs(vs[i + 1]):
            res = minimize_scalar(lambda x: abs(f(x)), bounds=(xs[i - 1], xs[i + 1]), method="bounded",
                                  options={"xatol": root_tol})
            if abs(f(res.x)) <= root_tol:
                add(res.x, True)
    zeros_sorted = sorted(zip(zeros, tangent))
    zeros = [z for z, _ in zeros_sorted]
    tangent = [t for _, t in zeros_sorted]
    bounds = [c0, *zeros, cN]
    signs = []
    for u, v in zip(bounds[:-1], bounds[1:]):
        mid = 0.5 * (u + v) if v > u else u
        signs.append(int(np.sign(f(mid))))
    if any(tangent):
        warnings.warn(f"b touches zero without a sign change at {[z for z, t in zip(zeros, tangent) if t]}",
                      TangentZeroWarning, stacklevel=2)
    return ZeroStructure(float(c0), float(cN), zeros, signs, tangent)


def _check_outer_signs(b: Expr, c0: float, cN: float):
    """Spot-check that b keeps a constant non-zero sign on (-inf, c0] and [cN, inf)."""
    offsets = np.concatenate([[0.0], np.geomspace(1e-6, 1e6, 61)])
    signs = {}
    for name, pts in (("left", c0 - offsets), ("right", cN + offsets)):
        v = _ev(b, pts)
        s = np.sign(v)
        # far-out underflow to exactly 0 is tolerated once the sign is established
        nz = s[s != 0]
        if s[0] == 0 or np.any(nz != s[0]):
            raise SignViolation(f"b does not keep a constant non-zero sign on the {name} tail")
        signs[name] = int(s[0])
    return signs["left"], signs["right"]


# --------------------------------------------------------------------------
# reports


@dataclass
class UniquenessReport:
    verdict: str  # "unique" | "not_unique" | "inconclusive"
    condition_breakdown: dict
    witness: Witness | None = None
    zero_structure: ZeroStructure | None = None
    reasons: list = field(default_factory=list)
    residual: float | None = None
    residual_tol: float | None = None
    gluing: dict | None = None
    blowup: dict | None = None
    lam: float = 1.0

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "lambda": self.lam,
            "condition_breakdown": {k: v.to_dict() for k, v in self.condition_breakdown.items()},
            "witness": self.witness.to_dict() if self.witness is not None else None,
            "zero_structure": self.zero_structure.to_dict() if self.zero_structure else None,
            "reasons": list(self.reasons),
            "residual": {"max_residual": self.residual, "tolerance": self.residual_tol}
            if self.residual is not None else None,
            "gluing": self.gluing,
            "blowup": self.blowup,
        }


@dataclass(frozen=True)
class AnalysisOptions:
    lam: float = 1.0
    residual_tol: float = 1e-5
    glue_tol: float = 1e-6
    glue_eps: float = 1e-8
    root_tol: float = 1e-10
    scan_step: float | None = None
    l1_tol: float = 1e-9
    M: float = 1e3
    divergence: DivergenceOptions = DivergenceOptions()


def _certify_witness(b: Expr, w: Witness, opts: AnalysisOptions, battery, report: UniquenessReport):
    est, ok, _ = w.l1_norm(tol=opts.l1_tol)
    report.residual = residual_test(b, w, opts.lam, battery)
    report.residual_tol = opts.residual_tol
    if not ok:
        report.verdict = "inconclusive"
        report.reasons.append("witness L1 partial integrals did not settle")
    elif report.residual > opts.residual_tol:
        report.verdict = "inconclusive"
        report.reasons.append(f"witness residual {report.residual:.3e} exceeds {opts.residual_tol:g}")
    else:
        report.verdict = "not_unique"
        report.witness = w
    report.witness = w


def analyze_positive_b(b, opts: AnalysisOptions | None = None, battery=None,
                       antiderivative: Expr | None = None) -> UniquenessReport:
    """Decide uniqueness for b > 0 by the left-tail integral of 1/b."""
    opts = opts or AnalysisOptions()
    b = _scalar_b(b)
    lattice = np.linspace(-100.0, 100.0, 4001)
    vals = _ev(b, lattice)
    if np.any(vals <= 0):
        k = int(np.flatnonzero(vals <= 0)[0])
        raise SignViolation(f"b({lattice[k]:g}) = {float(vals[k])!r} is not positive")
    tail = LeftTail(0.0)
    verdict = divergence_test(1 / b, tail, opts.divergence, antiderivative)
    report = UniquenessReport("inconclusive", {"left": verdict}, lam=opts.lam)
    if verdict.diverges:
        report.verdict = "unique"
        # the formal eigenfunction exists anyway; its L1 mass must blow up
        formal = Witness(b, 0.0, lam=opts.lam)
        partial, _, cut = formal._side_l1(-1, opts.M, 0.0, opts.divergence.k_max)
        report.blowup = {"final_partial": _json_float(partial) if math.isinf(partial) else partial,
                         "M": opts.M, "exceeds_M": bool(partial > opts.M),
                         "cutoffs": [[T, _json_float(v) if math.isinf(v) else v] for T, v in cut]}
    elif verdict.converges:
        _certify_witness(b, Witness(b, 0.0, lam=opts.lam), opts, battery, report)
    else:
        report.reasons.append(verdict.reason)
    return report


def analyze_general_b(b, c0: float, cN: float, opts: AnalysisOptions | None = None, battery=None,
                      antiderivative: Expr | None = None) -> UniquenessReport:
    """Both-tail criterion for b with finitely many zeros inside [c0, cN]."""
    opts = opts or AnalysisOptions()
    b = _scalar_b(b)
    s_left, s_right = _check_outer_signs(b, c0, cN)
    zs = find_zero_structure(b, c0, cN, opts.scan_step, opts.root_tol)

    left_tail, right_tail = LeftTail(c0), RightTail(cN)
    if s_left > 0:
        left = divergence_test(1 / b, left_tail, opts.divergence, antiderivative)
    else:
        left = convention_verdict(left_tail, "b+ vanishes on the left tail")
    if s_right < 0:
        neg_F = -antiderivative if antiderivative is not None else None
        right = divergence_test(1 / (-b), right_tail, opts.divergence, neg_F)
    else:
        right = convention_verdict(right_tail, "b- vanishes on the right tail")
    report = UniquenessReport("inconclusive", {"left": left, "right": right}, zero_structure=zs, lam=opts.lam)

    if left.diverges and right.diverges:
        report.verdict = "unique"
        return report
    if not (left.converges or right.converges):
        report.reasons += [v.reason for v in (left, right) if not v.diverges]
        return report

    if left.converges:
        edge = zs.zeros[0] if zs.zeros else math.inf
        w = Witness(b, c0, (-math.inf, edge), opts.lam)
        probe = edge - opts.glue_eps * max(1.0, abs(edge))
    else:
        edge = zs.zeros[-1] if zs.zeros else -math.inf
        w = Witness(b, cN, (edge, math.inf), opts.lam)
        probe = edge + opts.glue_eps * max(1.0, abs(edge))
    if math.isfinite(edge):
        bh = float(abs(w.b_times_h(probe)[0]))
        report.gluing = {"edge": edge, "probe": probe, "abs_bh": bh, "tolerance": opts.glue_tol}
        if bh > opts.glue_tol:
            report.reasons.append(str(GluingFailure(edge, bh, opts.glue_tol)))
            report.witness = w
            return report
    _certify_witness(b, w, opts, battery, report)
    return report
