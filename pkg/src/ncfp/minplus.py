"""Symbolic min-plus curve algebra over affine theta expressions.

Curves are restricted to the affine family that stays closed under the FIFO
analysis:

  * token buckets  gamma_{r,b}(d) = b + r*d for d > 0, 0 at d = 0,
  * rate-latency   beta_{R,T}(d)  = max(0, R*(d - T)),
  * their closure, curves of the form  delta_D (x) min_x gamma_{sigma_x,rho_x}
    (a pure delay convolved with a minimum of token buckets).

Latencies and bursts are affine expressions over free nonnegative theta
parameters introduced by the FIFO residual-service operation; rates stay
plain rationals.  Every operation here is a closed form.  Its validity
domain is expressed as a set of affine constraints (each asserted >= 0)
that the caller accumulates and later feeds to the LP optimizer.  The
matching brute-force semantics live in :mod:`ncfp.sampling`, which is kept
deliberately independent of the closed forms so the two can cross-check
each other.

All arithmetic is exact (:class:`fractions.Fraction`); operations are pure
and all values are immutable, so concurrent analyses may share them freely.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

Rational = Union[Fraction, int, str]


def frac(x: Rational) -> Fraction:
    """Coerce to an exact Fraction. Floats are rejected to avoid silent rounding."""
    if isinstance(x, float):
        raise TypeError("pass rationals as Fraction/int/str, not float: %r" % x)
    return Fraction(x)


class InstabilityError(ValueError):
    """Cross-traffic rate reaches or exceeds the service rate: delay unbounded."""


class UsageError(ValueError):
    """Operation called outside its contract."""


# ---------------------------------------------------------------------------
# affine expressions in theta
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineExpr:
    """const + sum(coeff_i * theta_i), exact rationals, zero coefficients dropped."""

    const: Fraction = Fraction(0)
    coeffs: tuple[tuple[int, Fraction], ...] = ()

    @staticmethod
    def of(const: Rational = 0, coeffs: Mapping[int, Rational] | None = None) -> "AffineExpr":
        items = []
        for k, v in sorted((coeffs or {}).items()):
            fv = frac(v)
            if fv != 0:
                items.append((k, fv))
        return AffineExpr(frac(const), tuple(items))

    @staticmethod
    def theta(tid: int, coeff: Rational = 1) -> "AffineExpr":
        return AffineExpr.of(0, {tid: coeff})

    def coeff_map(self) -> dict[int, Fraction]:
        return dict(self.coeffs)

    @property
    def is_constant(self) -> bool:
        return not self.coeffs

    def thetas(self) -> set[int]:
        return {k for k, _ in self.coeffs}

    def __add__(self, other: "AffineExpr | Rational") -> "AffineExpr":
        o = other if isinstance(other, AffineExpr) else AffineExpr.of(other)
        m = self.coeff_map()
        for k, v in o.coeffs:
            m[k] = m.get(k, Fraction(0)) + v
        return AffineExpr.of(self.const + o.const, m)

    __radd__ = __add__

    def __neg__(self) -> "AffineExpr":
        return AffineExpr.of(-self.const, {k: -v for k, v in self.coeffs})

    def __sub__(self, other: "AffineExpr | Rational") -> "AffineExpr":
        o = other if isinstance(other, AffineExpr) else AffineExpr.of(other)
        return self + (-o)

    def __rsub__(self, other: Rational) -> "AffineExpr":
        return AffineExpr.of(other) - self

    def scale(self, k: Rational) -> "AffineExpr":
        kf = frac(k)
        return AffineExpr.of(self.const * kf, {i: v * kf for i, v in self.coeffs})

    def evaluate(self, assignment: Mapping[int, Fraction]) -> Fraction:
        total = self.const
        for k, v in self.coeffs:
            if k not in assignment:
                raise UsageError(f"theta_{k} missing from assignment")
            total += v * assignment[k]
        return total

    def __str__(self) -> str:
        parts = [] if self.const == 0 and self.coeffs else [str(self.const)]
        if self.const == 0 and self.coeffs:
            parts = []
        for k, v in self.coeffs:
            parts.append(f"{v}*t{k}")
        return " + ".join(parts) if parts else "0"


ZERO = AffineExpr()


def aff(x: "AffineExpr | Rational") -> AffineExpr:
    return x if isinstance(x, AffineExpr) else AffineExpr.of(x)


# ---------------------------------------------------------------------------
# curve types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TokenBucket:
    """Arrival curve gamma_{rate,burst}: burst may be affine in theta, rate is rational."""

    rate: Fraction
    burst: AffineExpr

    @staticmethod
    def of(rate: Rational, burst: "AffineExpr | Rational") -> "TokenBucket":
        r = frac(rate)
        if r < 0:
            raise UsageError("token-bucket rate must be >= 0")
        return TokenBucket(r, aff(burst))

    @property
    def is_numeric(self) -> bool:
        return self.burst.is_constant

    def numeric_burst(self) -> Fraction:
        if not self.is_numeric:
            raise UsageError("burst is theta-dependent; substitute an assignment first")
        return self.burst.const


@dataclass(frozen=True)
class Stage:
    """One token-bucket stage gamma_{sigma,rho} of a pseudo-affine curve."""

    burst: AffineExpr
    rate: Fraction


@dataclass(frozen=True)
class PseudoAffineCurve:
    """Service curve delta_latency (x) min over stages gamma_{sigma_x, rho_x}.

    Rate-latency beta_{R,T} is the single-stage case (sigma=0, rho=R,
    latency=T).  At a feasible theta assignment (all stage bursts >= 0) the
    denoted function is 0 on [0, latency] and min_x(sigma_x + rho_x*(t - latency))
    afterwards: nondecreasing, in F0.
    """

    latency: AffineExpr
    stages: tuple[Stage, ...]

    def __post_init__(self):
        if not self.stages:
            raise UsageError("pseudo-affine curve needs at least one stage")
        for s in self.stages:
            if s.rate <= 0:
                raise UsageError("stage rates must be > 0")

    @staticmethod
    def rate_latency(rate: Rational, latency: "AffineExpr | Rational") -> "PseudoAffineCurve":
        return PseudoAffineCurve(aff(latency), (Stage(ZERO, frac(rate)),))

    @property
    def min_rate(self) -> Fraction:
        return min(s.rate for s in self.stages)

    def shifted(self, extra_latency: "AffineExpr | Rational") -> "PseudoAffineCurve":
        return PseudoAffineCurve(self.latency + aff(extra_latency), self.stages)

    def thetas(self) -> set[int]:
        out = self.latency.thetas()
        for s in self.stages:
            out |= s.burst.thetas()
        return out


@dataclass(frozen=True)
class DelayExpr:
    """Delay bound base + max(0, max over max_terms), each part affine in theta."""

    base: AffineExpr
    max_terms: tuple[AffineExpr, ...]

    def evaluate(self, assignment: Mapping[int, Fraction]) -> Fraction:
        worst = Fraction(0)
        for term in self.max_terms:
            worst = max(worst, term.evaluate(assignment))
        return self.base.evaluate(assignment) + worst


ConstraintSet = tuple[AffineExpr, ...]  # every expression asserted >= 0


# ---------------------------------------------------------------------------
# dominance pruning
# ---------------------------------------------------------------------------

def _provably_nonneg(e: AffineExpr) -> bool:
    # sound under theta >= 0: sufficient, not necessary
    return e.const >= 0 and all(v >= 0 for _, v in e.coeffs)


def _prune_stages(stages: Sequence[Stage]) -> tuple[Stage, ...]:
    """Drop stages provably dominated (never the pointwise minimum) at every theta >= 0."""
    kept: list[Stage] = []
    for i, cand in enumerate(stages):
        dominated = False
        for j, other in enumerate(stages):
            if i == j:
                continue
            strictly_below = other.rate <= cand.rate and _provably_nonneg(cand.burst - other.burst)
            if strictly_below and (other.rate, other.burst) != (cand.rate, cand.burst):
                dominated = True
                break
            if strictly_below and j < i:  # exact duplicate: keep the first occurrence
                dominated = True
                break
        if not dominated:
            kept.append(cand)
    return tuple(kept)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def tb_aggregate(flows: Sequence[TokenBucket]) -> TokenBucket:
    """Arrival curve of a multiplex: rates and bursts add."""
    if not flows:
        raise UsageError("cannot aggregate an empty flow sequence")
    rate = sum((f.rate for f in flows), Fraction(0))
    burst = ZERO
    for f in flows:
        burst = burst + f.burst
    return TokenBucket(rate, burst)


def pa_convolve(a: PseudoAffineCurve, b: PseudoAffineCurve) -> PseudoAffineCurve:
    """Min-plus convolution: latencies add, stage sets merge.

    Token buckets through the origin convolve to their minimum, and minimum
    distributes over convolution, so the merged stage set denotes the exact
    convolution of the two curves.
    """
    return PseudoAffineCurve(a.latency + b.latency, _prune_stages(a.stages + b.stages))


def pa_convolve_all(curves: Iterable[PseudoAffineCurve]) -> PseudoAffineCurve:
    out: PseudoAffineCurve | None = None
    for c in curves:
        out = c if out is None else pa_convolve(out, c)
    if out is None:
        raise UsageError("cannot convolve an empty curve sequence")
    return out


def fifo_leftover(
    beta: PseudoAffineCurve, cross: TokenBucket, theta: int
) -> tuple[PseudoAffineCurve, ConstraintSet]:
    """Residual FIFO service after subtracting token-bucket cross-traffic.

    Returns  delta_theta (x) min_x gamma_{sigma_x + rho_x*(theta - D) - b, rho_x - r}
    together with the domain constraints

        theta - D >= 0    and    sigma_x + rho_x*(theta - D) - b >= 0  for all x.

    On that domain the returned curve equals the residual-service definition
    evaluated past theta, and lower-bounds it everywhere, so it is itself a
    valid service curve for the flow of interest.  Multi-stage inputs are
    covered by the same substitution; the sampling oracle re-derives this
    from the definition in tests.
    """
    if cross.rate >= beta.min_rate:
        raise InstabilityError(
            f"cross rate {cross.rate} >= residual service rate {beta.min_rate}"
        )
    slack = AffineExpr.theta(theta) - beta.latency  # theta - D
    new_stages = []
    for s in beta.stages:
        new_burst = s.burst + slack.scale(s.rate) - cross.burst
        new_stages.append(Stage(new_burst, s.rate - cross.rate))
    kept = _prune_stages(new_stages)
    constraints: list[AffineExpr] = [slack]
    constraints.extend(s.burst for s in kept)
    curve = PseudoAffineCurve(AffineExpr.theta(theta), kept)
    return curve, tuple(constraints)


def _check_rate(alpha: TokenBucket, beta: PseudoAffineCurve) -> None:
    if alpha.rate > beta.min_rate:
        raise InstabilityError(
            f"arrival rate {alpha.rate} > service rate {beta.min_rate}"
        )


def tb_deconvolve(alpha: TokenBucket, beta: PseudoAffineCurve) -> TokenBucket:
    """Output arrival bound alpha (/) beta = gamma_{r, b + r*D}.

    Valid on the curve's constraint domain (all stage bursts >= 0): there the
    curve jumps to min_x sigma_x >= 0 right after its latency, so the
    deconvolution supremum is attained at the latency edge.
    """
    _check_rate(alpha, beta)
    return TokenBucket(alpha.rate, alpha.burst + beta.latency.scale(alpha.rate))


def hdev(alpha: TokenBucket, beta: PseudoAffineCurve) -> DelayExpr:
    """Horizontal deviation (delay bound): D + max(0, max_x (b - sigma_x)/rho_x)."""
    _check_rate(alpha, beta)
    terms = tuple((alpha.burst - s.burst).scale(Fraction(1, 1) / s.rate) for s in beta.stages)
    return DelayExpr(beta.latency, terms)


def vdev(alpha: TokenBucket, beta: PseudoAffineCurve) -> AffineExpr:
    """Vertical deviation (backlog / output burstiness): (alpha (/) beta)(0) = b + r*D."""
    _check_rate(alpha, beta)
    return alpha.burst + beta.latency.scale(alpha.rate)
