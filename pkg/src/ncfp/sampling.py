"""Brute-force piecewise-linear semantics for the curve algebra.

This module evaluates the *definitions* of the min-plus operations on
explicit piecewise-linear functions, independently of the closed forms in
:mod:`ncfp.minplus`.  It exists so that every closed form can be checked
against first principles:

  * convolution / deconvolution as the definitional inf / sup, computed
    exactly by enumerating candidate breakpoints (both operands are
    piecewise linear, so extrema sit at breakpoints or one-sided limits),
  * the FIFO residual service as the nondecreasing closure of
    beta(z) - alpha(z - theta) over z past theta, floored at zero,
  * horizontal / vertical deviation by exact breakpoint walks, plus a
    bisection variant for sampled data.

Everything is exact rational arithmetic on a finite horizon.  Curves carry
their values left-continuously with explicit right limits, so upward jumps
(a token-bucket burst at 0, a residual curve emerging after theta) are
represented without smearing.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction

from .minplus import (
    AffineExpr,
    PseudoAffineCurve,
    TokenBucket,
    UsageError,
    frac,
)

F0 = Fraction(0)


class DomainError(UsageError):
    """Evaluation requested outside the feasible theta domain."""


# ---------------------------------------------------------------------------
# exact piecewise-linear curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PLCurve:
    """Piecewise-linear function on [0, horizon].

    ``points`` holds (t, value, right_limit) with strictly increasing t;
    the function is left-continuous (its value at a jump is the lower one)
    and linear from each right limit to the next point's value.
    """

    points: tuple[tuple[Fraction, Fraction, Fraction], ...]
    horizon: Fraction

    def __post_init__(self):
        ts = [p[0] for p in self.points]
        if ts != sorted(set(ts)):
            raise UsageError("breakpoints must be strictly increasing")
        if ts[0] != 0 or ts[-1] != self.horizon:
            raise UsageError("curve must span [0, horizon]")

    @property
    def kinks(self) -> list[Fraction]:
        return [p[0] for p in self.points]

    def value(self, t: Fraction) -> Fraction:
        if t < 0:
            return F0
        if t > self.horizon:
            raise DomainError(f"t={t} beyond horizon {self.horizon}")
        i = bisect_right(self.kinks, t) - 1
        t0, v0, w0 = self.points[i]
        if t == t0:
            return v0
        t1, v1, _ = self.points[i + 1]
        return w0 + (v1 - w0) * (t - t0) / (t1 - t0)

    def right(self, t: Fraction) -> Fraction:
        if t < 0:
            return F0
        if t >= self.horizon:
            return self.value(self.horizon)
        i = bisect_right(self.kinks, t) - 1
        t0, _, w0 = self.points[i]
        if t == t0:
            return w0
        t1, v1, _ = self.points[i + 1]
        return w0 + (v1 - w0) * (t - t0) / (t1 - t0)


def _normalize(raw, horizon: Fraction) -> PLCurve:
    pts = sorted(raw)
    merged: list[tuple[Fraction, Fraction, Fraction]] = []
    for t, v, w in pts:
        if merged and merged[-1][0] == t:
            pt, pv, pw = merged.pop()
            merged.append((t, min(pv, v), max(pw, w)))
        else:
            merged.append((t, v, w))
    cleaned = [merged[0]]
    for i in range(1, len(merged) - 1):
        t, v, w = merged[i]
        if v != w:
            cleaned.append(merged[i])
            continue
        tp, _, wp = cleaned[-1]
        tn, vn, _ = merged[i + 1]
        if (v - wp) * (tn - tp) != (vn - wp) * (t - tp):
            cleaned.append(merged[i])
    if len(merged) > 1:
        cleaned.append(merged[-1])
    return PLCurve(tuple(cleaned), horizon)


# ---------------------------------------------------------------------------
# constructors from the symbolic types
# ---------------------------------------------------------------------------

def token_bucket_pl(rate: Fraction, burst: Fraction, horizon: Fraction) -> PLCurve:
    if burst < 0:
        raise DomainError(f"negative burst {burst} at this assignment")
    end = burst + rate * horizon
    return _normalize([(F0, F0, burst), (horizon, end, end)], horizon)


def default_horizon(curve: PseudoAffineCurve, assignment=None) -> Fraction:
    """4 * (latency + total stage burst / min rate): covers every kink with margin."""
    assignment = assignment or {}
    lat = curve.latency.evaluate(assignment)
    total_burst = sum((s.burst.evaluate(assignment) for s in curve.stages), F0)
    h = 4 * (lat + total_burst / curve.min_rate)
    return h if h > 0 else Fraction(4)


def pseudo_affine_pl(curve: PseudoAffineCurve, assignment=None, horizon=None) -> PLCurve:
    """Evaluate the denoted function at a theta assignment; exact lower envelope."""
    assignment = assignment or {}
    lat = curve.latency.evaluate(assignment)
    stages = [(s.burst.evaluate(assignment), s.rate) for s in curve.stages]
    for sigma, _ in stages:
        if sigma < 0:
            raise DomainError(f"stage burst {sigma} < 0 at this assignment")
    if lat < 0:
        raise DomainError(f"latency {lat} < 0 at this assignment")
    horizon = frac(horizon) if horizon is not None else default_horizon(curve, assignment)
    if lat >= horizon:
        return _normalize([(F0, F0, F0), (horizon, F0, F0)], horizon)

    def envelope(s: Fraction) -> Fraction:
        return min(sigma + rho * s for sigma, rho in stages)

    span = horizon - lat
    cuts = {span}
    for i in range(len(stages)):
        for j in range(i + 1, len(stages)):
            s1, r1 = stages[i]
            s2, r2 = stages[j]
            if r1 != r2:
                x = (s2 - s1) / (r1 - r2)
                if 0 < x < span:
                    cuts.add(x)
    pts: list[tuple[Fraction, Fraction, Fraction]]
    if lat > 0:
        pts = [(F0, F0, F0), (lat, F0, envelope(F0))]
    else:
        pts = [(F0, F0, envelope(F0))]
    for s in sorted(cuts):
        v = envelope(s)
        pts.append((lat + s, v, v))
    return _normalize(pts, horizon)


# ---------------------------------------------------------------------------
# definitional operations
# ---------------------------------------------------------------------------

def conv_value_at(f: PLCurve, g: PLCurve, t: Fraction) -> Fraction:
    """Definitional inf over u in [0, t] of f(t-u) + g(u) at a single t."""
    best = None
    for u in _conv_candidates(f, g, t):
        fv, gv = f.value(t - u), g.value(u)
        best = _minopt(best, fv + gv)
        if u > 0:
            best = _minopt(best, f.right(t - u) + gv)
        if u < t:
            best = _minopt(best, fv + g.right(u))
    return best


def _conv_right_at(f: PLCurve, g: PLCurve, t: Fraction) -> Fraction:
    best = None
    for u in _conv_candidates(f, g, t):
        fv, gv = f.value(t - u), g.value(u)
        fr, gr = f.right(t - u), g.right(u)
        best = _minopt(best, fr + gv)
        best = _minopt(best, fv + gr)
        best = _minopt(best, fr + gr)
    return best


def _conv_candidates(f: PLCurve, g: PLCurve, t: Fraction) -> list[Fraction]:
    cand = {F0, t}
    for b in g.kinks:
        if 0 < b < t:
            cand.add(b)
    for a in f.kinks:
        u = t - a
        if 0 < u < t:
            cand.add(u)
    return sorted(cand)


def _segment_line(c: PLCurve, x: Fraction) -> tuple[Fraction, Fraction]:
    """Affine extension (intercept, slope) of the segment of c containing interior x."""
    i = bisect_right(c.kinks, x) - 1
    t0, _, w0 = c.points[i]
    if x == t0:
        raise UsageError("x must be in a segment interior")
    t1, v1, _ = c.points[i + 1]
    slope = (v1 - w0) / (t1 - t0)
    return w0 - slope * t0, slope


def convolve_pl(f: PLCurve, g: PLCurve) -> PLCurve:
    """(f (x) g)(t) = inf over u in [0, t] of f(t-u) + g(u), exact.

    For fixed t the inner function is piecewise linear in u with kinks where
    g kinks or where t-u hits a kink of f.  Between consecutive breakpoint
    sums the candidate structure is constant and each candidate contributes
    an affine function of t, so the result is the lower envelope of finitely
    many lines per interval; envelope crossings add the remaining kinks.
    """
    horizon = min(f.horizon, g.horizon)
    sums = {F0, horizon}
    for a in f.kinks:
        for b in g.kinks:
            s = a + b
            if 0 < s < horizon:
                sums.add(s)
    grid = sorted(sums)

    raw: list[tuple[Fraction, Fraction, Fraction]] = []
    for t in grid:
        v = conv_value_at(f, g, t)
        w = _conv_right_at(f, g, t) if t < horizon else v
        raw.append((t, v, w))

    for t0, t1 in zip(grid, grid[1:]):
        tm = (t0 + t1) / 2
        lines: list[tuple[Fraction, Fraction]] = []
        for b in g.kinks:
            if 0 <= b <= t0:
                i0, s0 = _segment_line(f, tm - b)
                for gval in (g.value(b), g.right(b)):
                    lines.append((i0 - s0 * b + gval, s0))
        for a in f.kinks:
            if 0 <= a <= t0:
                i0, s0 = _segment_line(g, tm - a)
                for fval in (f.value(a), f.right(a)):
                    lines.append((i0 - s0 * a + fval, s0))
        crossings = set()
        for i in range(len(lines)):
            for j in range(i + 1, len(lines)):
                (c0, c1), (d0, d1) = lines[i], lines[j]
                if c1 != d1:
                    x = (d0 - c0) / (c1 - d1)
                    if t0 < x < t1:
                        crossings.add(x)
        for x in crossings:
            v = min(c0 + c1 * x for c0, c1 in lines)
            raw.append((x, v, v))
    return _normalize(raw, horizon)


def _minopt(cur, new):
    return new if cur is None or new < cur else cur


def residual_pl(
    beta: PLCurve, cross_rate: Fraction, cross_burst: Fraction, theta: Fraction
) -> PLCurve:
    """FIFO residual service from the definition.

    0 up to theta; past theta, the running supremum of
    beta(z) - (cross_burst + cross_rate * (z - theta)) over z in (theta, t],
    floored at 0.  The cross-traffic term is live throughout the supremum's
    range, so the result matches the closed form on its constraint domain
    and stays a valid (lower-bounded) service curve outside it.
    """
    if theta < 0:
        raise DomainError("theta must be >= 0")
    horizon = beta.horizon
    if theta >= horizon:
        return _normalize([(F0, F0, F0), (horizon, F0, F0)], horizon)

    def d_at(z: Fraction) -> Fraction:
        return beta.value(z) - (cross_burst + cross_rate * (z - theta))

    def d_right(z: Fraction) -> Fraction:
        return beta.right(z) - (cross_burst + cross_rate * (z - theta))

    kz = sorted({theta, horizon} | {k for k in beta.kinks if theta < k < horizon})
    pts: list[tuple[Fraction, Fraction, Fraction]] = []
    if theta > 0:
        pts.append((F0, F0, F0))
    m = max(F0, d_right(theta))
    pts.append((theta, F0, m))
    for i in range(len(kz) - 1):
        z0, z1 = kz[i], kz[i + 1]
        m0 = m
        dr0 = d_right(z0)
        start = max(m0, dr0)
        if start > m0:
            t_last, v_last, _ = pts[-1]
            pts[-1] = (t_last, v_last, start)  # upward jump of the supremum at z0
        hi = d_at(z1)
        if hi > start:
            if dr0 < m0 < hi:
                zc = z0 + (m0 - dr0) * (z1 - z0) / (hi - dr0)
                if z0 < zc < z1:
                    pts.append((zc, m0, m0))
            m = hi
        else:
            m = start
        pts.append((z1, m, m))
    return _normalize(pts, horizon)


def deconv_value(rate: Fraction, burst: Fraction, beta: PLCurve, d: Fraction) -> Fraction:
    """(alpha (/) beta)(d) = sup over u >= 0 of alpha(d+u) - beta(u), token-bucket alpha.

    The final slope of beta must exceed ``rate`` within the horizon for the
    supremum to be attained; callers size horizons accordingly.
    """

    def alpha_at(s: Fraction) -> Fraction:
        return F0 if s <= 0 else burst + rate * s

    def alpha_right(s: Fraction) -> Fraction:
        return F0 if s < 0 else burst + rate * s

    cand = set(beta.kinks)
    if d < 0:
        cand.add(-d)
    best = None
    for u in sorted(cand):
        if u < 0 or u > beta.horizon:
            continue
        vals = [alpha_at(d + u) - beta.value(u)]
        if u < beta.horizon:
            vals.append(alpha_right(d + u) - beta.right(u))
        m = max(vals)
        best = m if best is None or m > best else best
    return best


def vdev_pl(rate: Fraction, burst: Fraction, beta: PLCurve) -> Fraction:
    """Output burstiness: lim_{d->0+} (alpha (/) beta)(d) = sup_u [burst + rate*u - beta(u)].

    For d > 0 the deconvolution sees alpha on its analytic branch, so the
    burst of the output token bucket is this supremum; beta is lowest at its
    left-continuous breakpoint values, which therefore carry the supremum.
    """
    return max(burst + rate * u - beta.value(u) for u in beta.kinks)


def inverse_level(beta: PLCurve, level: Fraction) -> Fraction:
    """inf { s : beta(s) >= level } by a breakpoint walk."""
    if level <= 0:
        return F0
    pts = beta.points
    for i, (t, v, w) in enumerate(pts):
        if v >= level:
            return t
        if w >= level:
            return t
        if i + 1 < len(pts):
            t1, v1, _ = pts[i + 1]
            if v1 >= level and v1 > w:
                return t + (level - w) * (t1 - t) / (v1 - w)
    raise DomainError(f"level {level} not reached within horizon {beta.horizon}")


def inverse_level_above(beta: PLCurve, level: Fraction) -> Fraction:
    """inf { s : beta(s) > level }: differs from inverse_level at plateaus."""
    pts = beta.points
    for i, (t, v, w) in enumerate(pts):
        if v > level:
            return t
        if w > level:
            return t
        if i + 1 < len(pts):
            t1, v1, _ = pts[i + 1]
            if v1 > level and v1 > w:
                return t + (level - w) * (t1 - t) / (v1 - w) if level > w else t
    raise DomainError(f"level {level} not exceeded within horizon {beta.horizon}")


def hdev_pl(rate: Fraction, burst: Fraction, beta: PLCurve) -> Fraction:
    """Horizontal deviation between gamma_{rate,burst} and beta, exact.

    The deviation at arrival instant t is the time beta needs to reach the
    arrival level, minus t; it is piecewise linear between the candidate
    instants where the arrival level crosses a breakpoint value of beta.
    For rate > 0 the right-sided limit uses the strict inverse, which
    matters at beta's plateaus and at a zero burst.
    """
    levels = {burst}
    for _, v, w in beta.points:
        levels.add(v)
        levels.add(w)
    cand_t = {F0}
    if rate > 0:
        for lv in levels:
            t = (lv - burst) / rate
            if t > 0:
                cand_t.add(t)
    top = beta.points[-1][1]
    best = F0
    for t in sorted(cand_t):
        level = burst + rate * t
        if level > 0:
            best = max(best, inverse_level(beta, level) - t)
        if rate > 0 and level < top:
            best = max(best, inverse_level_above(beta, level) - t)
    return best


# ---------------------------------------------------------------------------
# public sampling surface
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampledCurve:
    """Sampled breakpoints of a curve: (time, value) pairs, duplicated time = jump."""

    breakpoints: tuple[tuple[Fraction, Fraction], ...]
    horizon: Fraction


def sample_curve(obj, theta_assignment=None, horizon=None, step=None) -> SampledCurve:
    """Sample a curve (or an already-evaluated PL function) on a grid.

    The grid is every multiple of ``step`` plus every exact breakpoint, so
    kinks and jumps are never straddled; jumps appear as two pairs with the
    same time.
    """
    assignment = {k: frac(v) for k, v in (theta_assignment or {}).items()}
    if isinstance(obj, PLCurve):
        pl = obj
        h = frac(horizon) if horizon is not None else pl.horizon
    elif isinstance(obj, PseudoAffineCurve):
        h = frac(horizon) if horizon is not None else default_horizon(obj, assignment)
        pl = pseudo_affine_pl(obj, assignment, h)
    elif isinstance(obj, TokenBucket):
        if horizon is None:
            raise UsageError("horizon required for token-bucket sampling")
        h = frac(horizon)
        pl = token_bucket_pl(obj.rate, obj.burst.evaluate(assignment), h)
    else:
        raise UsageError(f"cannot sample {type(obj).__name__}")
    if h <= 0:
        raise UsageError("horizon must be > 0")
    if h > pl.horizon:
        raise DomainError("requested horizon beyond the curve's construction horizon")

    ts = {k for k in pl.kinks if k <= h}
    ts.add(h)
    if step is not None:
        st = frac(step)
        if st <= 0:
            raise UsageError("step must be > 0")
        n = 0
        while n * st <= h:
            ts.add(n * st)
            n += 1
    out: list[tuple[Fraction, Fraction]] = []
    for t in sorted(ts):
        v = pl.value(t)
        out.append((t, v))
        if t < h:
            w = pl.right(t)
            if w != v:
                out.append((t, w))
    return SampledCurve(tuple(out), h)


def hdev_bisect(alpha: SampledCurve, beta: SampledCurve, tol: float = 1e-12) -> float:
    """Numeric horizontal deviation on sampled curves by bisection on the shift d."""

    def feasible(d: float) -> bool:
        for t, v in alpha.breakpoints:
            s = float(t) + d
            if s > float(beta.horizon):
                continue
            if float(v) > _sampled_value(beta, s) + 1e-15:
                return False
        return True

    lo, hi = 0.0, float(beta.horizon)
    if feasible(lo):
        return 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol:
            break
    return hi


def _sampled_value(sc: SampledCurve, t: float) -> float:
    prev_t, prev_v = float(sc.breakpoints[0][0]), float(sc.breakpoints[0][1])
    for bt, bv in sc.breakpoints:
        bt_f, bv_f = float(bt), float(bv)
        if bt_f > t:
            if bt_f == prev_t:
                return prev_v
            lam = (t - prev_t) / (bt_f - prev_t)
            return prev_v + lam * (bv_f - prev_v)
        prev_t, prev_v = bt_f, bv_f
    return prev_v


# convenience: evaluate an affine expression map for tests
def eval_affine(e: AffineExpr, assignment) -> Fraction:
    return e.evaluate({k: frac(v) for k, v in assignment.items()})
