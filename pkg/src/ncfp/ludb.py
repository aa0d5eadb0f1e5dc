"""FIFO feedforward analysis: residual-service terms and their optimization.

For a flow of interest the analysis builds one or more symbolic service
terms over its path.  A tandem whose cross-traffic intervals are pairwise
disjoint-or-nested compiles end-to-end from a nesting tree: children are
convolved and each flow group is subtracted with a fresh theta via the FIFO
residual operation.  A non-nested tandem must first be cut into nested
sub-tandems; every minimal cut set yields an alternative term, and the
least optimized bound over all alternatives is reported.

Cross-traffic arrivals at a tandem (or sub-tandem) entry are bounded
recursively through the flow's real upstream path: flows are aggregated
from the latest point where their routes join (one deconvolution per joint
segment), and each upstream tandem is analyzed with the same machinery,
with the bounded aggregate as its protected flow.  All thetas introduced
anywhere in a term, including inside arrival bounds, are optimized jointly
in a single exact LP per term.

A theta-grid refinement evaluates the definitional residual-service
semantics (including closure behavior outside the LP's constraint region)
at sampled theta assignments; every grid point yields a provably valid
bound, so the reported bound is the minimum of the LP optimum and the grid.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from fractions import Fraction

from . import sampling
from .minplus import (
    AffineExpr,
    InstabilityError,
    PseudoAffineCurve,
    TokenBucket,
    UsageError,
    frac,
    fifo_leftover,
    hdev,
    pa_convolve_all,
    tb_aggregate,
    tb_deconvolve,
    vdev,
)
from .lp import LinearProgram, solve
from .netmodel import Flow, ServerGraph, TandemView, tandem_view, validate

F0 = Fraction(0)


class AnalysisError(RuntimeError):
    pass


class EmptyThetaDomain(AnalysisError):
    """The LP constraint region is empty; fall back to grid refinement."""


class BudgetExceeded(AnalysisError):
    """Per-analysis wall-clock or memory-proxy budget exhausted."""


# ---------------------------------------------------------------------------
# term ASTs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SLeaf:
    server: str
    rate: Fraction
    latency: Fraction


@dataclass(frozen=True)
class SConv:
    parts: tuple


@dataclass(frozen=True)
class SLeftover:
    service: object
    cross: object
    theta: int


@dataclass(frozen=True)
class ASource:
    flow: str
    rate: Fraction
    burst: Fraction


@dataclass(frozen=True)
class ASum:
    parts: tuple


@dataclass(frozen=True)
class ADeconv:
    arrival: object
    service: object


def term_thetas(ast) -> list[int]:
    out: list[int] = []

    def walk(node):
        if isinstance(node, SLeftover):
            out.append(node.theta)
            walk(node.service)
            walk(node.cross)
        elif isinstance(node, SConv):
            for p in node.parts:
                walk(p)
        elif isinstance(node, ASum):
            for p in node.parts:
                walk(p)
        elif isinstance(node, ADeconv):
            walk(node.arrival)
            walk(node.service)

    walk(ast)
    return out


# ---------------------------------------------------------------------------
# nesting structure
# ---------------------------------------------------------------------------

def _contains(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] <= b[0] and b[1] <= a[1]


def _disjoint(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[1] < b[0] or b[1] < a[0]


def _interleaved(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return not _disjoint(a, b) and not _contains(a, b) and not _contains(b, a)


@dataclass(frozen=True)
class NestingNode:
    interval: tuple[int, int]
    flows: tuple[tuple[str, int], ...]  # (flow id, segment part)
    children: tuple["NestingNode", ...]
    leaf_positions: tuple[int, ...]


@dataclass(frozen=True)
class NestingTree:
    """Root spans the foi's whole interval; the foi itself is never subtracted."""

    root: NestingNode
    length: int


@dataclass(frozen=True)
class NotNested:
    witness: tuple[str, str]


def build_nesting_tree(view: TandemView) -> NestingTree | NotNested:
    segs = [((s.entry, s.exit), (s.flow_id, s.part)) for s in view.segments]
    for i in range(len(segs)):
        for j in range(i + 1, len(segs)):
            if _interleaved(segs[i][0], segs[j][0]):
                return NotNested((segs[i][1][0], segs[j][1][0]))
    root = _grow_tree([(iv, fl) for iv, fl in segs], (1, view.length), ())
    return NestingTree(root, view.length)


def _grow_tree(segs, interval, root_flows) -> NestingNode:
    """Build the node for `interval` from segments strictly inside it."""
    by_iv: dict[tuple[int, int], list] = {}
    for iv, fl in segs:
        by_iv.setdefault(iv, []).append(fl)
    # direct children: maximal intervals (not strictly contained in another)
    child_ivs = []
    for iv in sorted(by_iv):
        if not any(iv != other and _contains(other, iv) for other in by_iv):
            child_ivs.append(iv)
    children = []
    covered: set[int] = set()
    for iv in child_ivs:
        inner = [(i, f) for i, f in segs if i != iv and _contains(iv, i)]
        children.append(_grow_tree(inner, iv, tuple(sorted(by_iv[iv]))))
        covered.update(range(iv[0], iv[1] + 1))
    leaves = tuple(p for p in range(interval[0], interval[1] + 1) if p not in covered)
    return NestingNode(interval, tuple(root_flows), tuple(children), leaves)


def enumerate_cut_sets(view: TandemView) -> list[tuple[int, ...]]:
    """All minimal boundary sets making every sub-tandem nested.

    Boundary i cuts between positions i and i+1.  Supersets of valid cut
    sets are always valid, so minimality means no valid proper subset.
    Deterministic order: by size, then lexicographically.
    """
    ivs = [(s.entry, s.exit) for s in view.segments]
    n = view.length
    if not any(_interleaved(a, b) for a in ivs for b in ivs):
        return []
    minimal: list[tuple[int, ...]] = []
    boundaries = list(range(1, n))
    for size in range(1, n):
        for cand in itertools.combinations(boundaries, size):
            if any(set(m) <= set(cand) for m in minimal):
                continue
            if _cut_valid(ivs, n, cand):
                minimal.append(cand)
        if minimal and size >= max(len(m) for m in minimal):
            # all larger sets are supersets of found minimal ones or invalid
            pass
    return sorted(minimal, key=lambda c: (len(c), c))


def _cut_valid(ivs, n: int, cuts: tuple[int, ...]) -> bool:
    edges = [0, *cuts, n]
    for a, b in zip(edges, edges[1:]):
        lo, hi = a + 1, b
        clipped = []
        for e, x in ivs:
            ce, cx = max(e, lo), min(x, hi)
            if ce <= cx:
                clipped.append((ce, cx))
        for i in range(len(clipped)):
            for j in range(i + 1, len(clipped)):
                if _interleaved(clipped[i], clipped[j]):
                    return False
    return True


def _split(n: int, cuts: tuple[int, ...]) -> list[tuple[int, int]]:
    edges = [0, *cuts, n]
    return [(a + 1, b) for a, b in zip(edges, edges[1:])]


# ---------------------------------------------------------------------------
# budgets
# ---------------------------------------------------------------------------

@dataclass
class Budget:
    """Cooperative wall-clock / allocation-proxy budget for one analysis.

    Memory is approximated by counting constraint and stage allocations
    (an arena-style byte counter), deliberately not by process isolation,
    so the success flag is deterministic across hosts.
    """

    timeout_s: float | None = None
    mem_cap_bytes: int | None = None
    started: float = field(default_factory=time.monotonic)
    allocated: int = 0

    def charge(self, nbytes: int) -> None:
        self.allocated += nbytes
        if self.mem_cap_bytes is not None and self.allocated > self.mem_cap_bytes:
            raise BudgetExceeded(f"memory proxy {self.allocated}B over cap")

    def check_time(self) -> None:
        if self.timeout_s is not None and time.monotonic() - self.started > self.timeout_s:
            raise BudgetExceeded("analysis timeout")


# ---------------------------------------------------------------------------
# term construction
# ---------------------------------------------------------------------------

@dataclass
class TermContext:
    """Per-analysis theta registry and accumulated constraint set."""

    counter: itertools.count = field(default_factory=itertools.count)
    constraints: list[AffineExpr] = field(default_factory=list)

    def fresh_theta(self) -> int:
        return next(self.counter)

    def require(self, exprs) -> None:
        self.constraints.extend(exprs)


@dataclass
class _Build:
    net: ServerGraph
    ctx: TermContext
    cap: int = 64
    budget: Budget | None = None

    def tick(self):
        if self.budget is not None:
            self.budget.check_time()
            self.budget.charge(64)


def _bounded_product(lists: list[list], cap: int) -> list[tuple]:
    out: list[tuple] = []
    for combo in itertools.product(*lists):
        out.append(combo)
        if len(out) >= cap:
            break
    return out


def _leaf(build: _Build, sid: str) -> SLeaf:
    s = build.net.server(sid)
    return SLeaf(sid, s.rate, s.latency)


def _segments_of(build: _Build, servers: tuple[str, ...], protected: frozenset[str]):
    from .netmodel import segments_on

    segs = []
    for f in build.net.flows:
        if f.id in protected:
            continue
        for part, (a, b) in enumerate(segments_on(f.path, servers)):
            segs.append(((a, b), (f.id, part)))
    return segs


def _arrival_terms(build: _Build, flow_ids: list[str], at: str) -> list:
    """Aggregate arrival bound of `flow_ids` at the entry of server `at`."""
    build.tick()
    flows = [build.net.flow(fid) for fid in sorted(set(flow_ids))]
    base = []
    groups: dict[str, list[str]] = {}
    for f in flows:
        if f.source == at:
            base.append(ASource(f.id, f.rate, f.burst))
        else:
            i = f.path.index(at)
            groups.setdefault(f.path[i - 1], []).append(f.id)
    lists = [_output_terms(build, members, pred) for pred, members in sorted(groups.items())]
    if not lists:
        return [base[0] if len(base) == 1 else ASum(tuple(base))]
    out = []
    for combo in _bounded_product(lists, build.cap):
        parts = tuple(base) + combo
        out.append(parts[0] if len(parts) == 1 else ASum(parts))
    return out


def _output_terms(build: _Build, flow_ids: list[str], last: str) -> list:
    """Bound the aggregate output of `flow_ids` after server `last`.

    The flows are followed back along their joint route: the tandem from
    their latest entry to `last` is analyzed with the aggregate protected,
    and flows joining earlier are bounded recursively up to the join.
    """
    build.tick()
    flows = [build.net.flow(fid) for fid in sorted(set(flow_ids))]
    tandem = [last]
    while True:
        preds = set()
        for g in flows:
            if tandem[0] not in g.path:
                continue  # sourced inside the tandem already walked
            i = g.path.index(tandem[0])
            if i > 0:
                preds.add(g.path[i - 1])
        if len(preds) != 1:
            break
        tandem.insert(0, preds.pop())

    entry = {g.id: (tandem.index(g.source) if g.source in tandem else 0) for g in flows}
    e_idx = max(entry.values())
    span = tuple(tandem[e_idx:])

    if e_idx == 0:
        arrival_alts = _arrival_terms(build, [g.id for g in flows], tandem[0])
    else:
        base = tuple(
            ASource(g.id, g.rate, g.burst) for g in flows if entry[g.id] == e_idx
        )
        before = [g.id for g in flows if entry[g.id] < e_idx]
        inner = _output_terms(build, before, tandem[e_idx - 1])
        arrival_alts = []
        for term in inner:
            parts = base + (term,)
            arrival_alts.append(parts[0] if len(parts) == 1 else ASum(parts))

    service_alts = _tandem_service_terms(build, span, frozenset(g.id for g in flows))
    return [
        ADeconv(arr, svc)
        for arr, svc in _bounded_product([arrival_alts, service_alts], build.cap)
    ]


def _tandem_service_terms(build: _Build, servers: tuple[str, ...], protected: frozenset[str]) -> list:
    """End-to-end residual service alternatives for `protected` over `servers`."""
    build.tick()
    segs = _segments_of(build, servers, protected)
    ivs = [iv for iv, _ in segs]
    if not any(_interleaved(a, b) for a in ivs for b in ivs):
        return _nested_terms(build, servers, segs)
    cut_sets = _minimal_cut_sets(ivs, len(servers))
    alts = []
    for cuts in cut_sets:
        alts.extend(_cut_terms(build, servers, segs, cuts))
        if len(alts) >= build.cap:
            break
    return alts[: build.cap]


def _minimal_cut_sets(ivs, n: int) -> list[tuple[int, ...]]:
    minimal: list[tuple[int, ...]] = []
    for size in range(1, n):
        for cand in itertools.combinations(range(1, n), size):
            if any(set(m) <= set(cand) for m in minimal):
                continue
            if _cut_valid(ivs, n, cand):
                minimal.append(cand)
    return sorted(minimal, key=lambda c: (len(c), c))


def _cut_terms(build: _Build, servers, segs, cuts: tuple[int, ...]) -> list:
    sub_lists = []
    for a, b in _split(len(servers), cuts):
        sub_servers = servers[a - 1 : b]
        sub_segs = []
        for (e, x), fl in segs:
            ce, cx = max(e, a), min(x, b)
            if ce <= cx:
                sub_segs.append(((ce - a + 1, cx - a + 1), fl))
        sub_lists.append(_nested_terms(build, sub_servers, sub_segs))
    return [SConv(combo) for combo in _bounded_product(sub_lists, build.cap)]


def _nested_terms(build: _Build, servers: tuple[str, ...], segs) -> list:
    """Compile a nested tandem bottom-up; returns alternatives (arrival branching)."""
    n = len(servers)
    root = _grow_tree(segs, (1, n), ())

    def emit(node: NestingNode) -> list:
        build.tick()
        part_lists: list[list] = []
        order: list[tuple[int, str]] = []  # (position, kind) to keep parts sorted
        for child in node.children:
            part_lists.append(emit(child))
            order.append((child.interval[0], "c"))
        for p in node.leaf_positions:
            part_lists.append([_leaf(build, servers[p - 1])])
            order.append((p, "l"))
        idx = sorted(range(len(order)), key=lambda i: order[i])
        combos = _bounded_product(part_lists, build.cap)
        results = []
        for combo in combos:
            parts = tuple(combo[i] for i in idx)
            conv = parts[0] if len(parts) == 1 else SConv(parts)
            if not node.flows:
                results.append(conv)
                continue
            entry_server = servers[node.interval[0] - 1]
            arrivals = _arrival_terms(build, [fid for fid, _ in node.flows], entry_server)
            for arr in arrivals:
                results.append(SLeftover(conv, arr, build.ctx.fresh_theta()))
                if len(results) >= build.cap:
                    break
            if len(results) >= build.cap:
                break
        return results

    return emit(root)


# ---------------------------------------------------------------------------
# closed-form compilation
# ---------------------------------------------------------------------------

def compile_service(ast, ctx: TermContext) -> PseudoAffineCurve:
    if isinstance(ast, SLeaf):
        return PseudoAffineCurve.rate_latency(ast.rate, ast.latency)
    if isinstance(ast, SConv):
        return pa_convolve_all(compile_service(p, ctx) for p in ast.parts)
    if isinstance(ast, SLeftover):
        beta = compile_service(ast.service, ctx)
        cross = compile_arrival(ast.cross, ctx)
        curve, cons = fifo_leftover(beta, cross, ast.theta)
        ctx.require(cons)
        return curve
    raise UsageError(f"not a service term: {ast!r}")


def compile_arrival(ast, ctx: TermContext) -> TokenBucket:
    if isinstance(ast, ASource):
        return TokenBucket(ast.rate, AffineExpr.of(ast.burst))
    if isinstance(ast, ASum):
        return tb_aggregate([compile_arrival(p, ctx) for p in ast.parts])
    if isinstance(ast, ADeconv):
        return tb_deconvolve(
            compile_arrival(ast.arrival, ctx), compile_service(ast.service, ctx)
        )
    raise UsageError(f"not an arrival term: {ast!r}")


@dataclass(frozen=True)
class Term:
    """One complete residual-service alternative with its theta domain."""

    ast: object
    curve: PseudoAffineCurve
    constraints: tuple[AffineExpr, ...]
    cut_set: tuple[int, ...]

    def thetas(self) -> tuple[int, ...]:
        return tuple(sorted(set(term_thetas(self.ast))))


def foi_terms(
    net: ServerGraph,
    foi: str,
    cap: int = 64,
    budget: Budget | None = None,
) -> list[Term]:
    """All residual-service alternatives for the flow of interest.

    One term per outer cut set (and per inner branching combination); a
    nested tandem yields a single outer alternative with empty cut set.
    """
    view = tandem_view(net, foi)
    servers = view.servers
    ctx = TermContext()
    build = _Build(net, ctx, cap, budget)
    segs = [((s.entry, s.exit), (s.flow_id, s.part)) for s in view.segments]
    ivs = [iv for iv, _ in segs]

    tagged: list[tuple[object, tuple[int, ...]]] = []
    if not any(_interleaved(a, b) for a in ivs for b in ivs):
        for ast in _nested_terms(build, servers, segs):
            tagged.append((ast, ()))
    else:
        for cuts in _minimal_cut_sets(ivs, len(servers)):
            for ast in _cut_terms(build, servers, segs, cuts):
                tagged.append((ast, cuts))
            if len(tagged) >= cap:
                break

    terms = []
    for ast, cuts in tagged[:cap]:
        tctx = TermContext()
        curve = compile_service(ast, tctx)
        terms.append(Term(ast, curve, tuple(tctx.constraints), cuts))
    return terms


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

def optimize_delay(term: Term, foi_arrival: TokenBucket) -> tuple[Fraction, dict[int, Fraction]]:
    """Exact minimum of the delay expression over the term's theta domain."""
    dl = hdev(foi_arrival, term.curve)
    thetas = term.thetas()
    z = (max(thetas) + 1) if thetas else 0
    cons = list(term.constraints)
    for mt in dl.max_terms:
        cons.append(AffineExpr.theta(z) - mt)
    lp = LinearProgram(tuple(thetas) + (z,), dl.base + AffineExpr.theta(z), tuple(cons))
    sol = solve(lp)
    if sol.status == "infeasible":
        raise EmptyThetaDomain("empty theta domain")
    if sol.status != "optimal":
        raise AnalysisError(f"unexpected LP status {sol.status}")
    assignment = {t: sol.assignment[t] for t in thetas}
    return sol.value, assignment


def optimize_output(term: Term, foi_arrival: TokenBucket) -> tuple[Fraction, dict[int, Fraction]]:
    """Exact minimum of the output burstiness over the term's theta domain."""
    objective = vdev(foi_arrival, term.curve)
    thetas = term.thetas()
    lp = LinearProgram(tuple(thetas), objective, term.constraints)
    sol = solve(lp)
    if sol.status == "infeasible":
        raise EmptyThetaDomain("empty theta domain")
    if sol.status != "optimal":
        raise AnalysisError(f"unexpected LP status {sol.status}")
    return sol.value, dict(sol.assignment)


# ---------------------------------------------------------------------------
# definitional (oracle) evaluation of terms
# ---------------------------------------------------------------------------

def service_pl_of(ast, assign, horizon: Fraction) -> sampling.PLCurve:
    if isinstance(ast, SLeaf):
        return sampling.pseudo_affine_pl(
            PseudoAffineCurve.rate_latency(ast.rate, ast.latency), {}, horizon
        )
    if isinstance(ast, SConv):
        out = None
        for p in ast.parts:
            pl = service_pl_of(p, assign, horizon)
            out = pl if out is None else sampling.convolve_pl(out, pl)
        return out
    if isinstance(ast, SLeftover):
        beta = service_pl_of(ast.service, assign, horizon)
        rate, burst = arrival_numeric_of(ast.cross, assign, horizon)
        return sampling.residual_pl(beta, rate, burst, frac(assign[ast.theta]))
    raise UsageError(f"not a service term: {ast!r}")


def arrival_numeric_of(ast, assign, horizon: Fraction) -> tuple[Fraction, Fraction]:
    if isinstance(ast, ASource):
        return ast.rate, ast.burst
    if isinstance(ast, ASum):
        parts = [arrival_numeric_of(p, assign, horizon) for p in ast.parts]
        return sum(r for r, _ in parts), sum(b for _, b in parts)
    if isinstance(ast, ADeconv):
        rate, burst = arrival_numeric_of(ast.arrival, assign, horizon)
        beta = service_pl_of(ast.service, assign, horizon)
        return rate, sampling.vdev_pl(rate, burst, beta)
    raise UsageError(f"not an arrival term: {ast!r}")


def term_bound_numeric(term: Term, foi_arrival: TokenBucket, assign) -> Fraction:
    """Valid delay bound from the definitional semantics at one assignment."""
    assign = {k: frac(v) for k, v in assign.items()}
    horizon = _initial_horizon(term, foi_arrival, assign)
    for _ in range(8):
        try:
            beta = service_pl_of(term.ast, assign, horizon)
            return sampling.hdev_pl(foi_arrival.rate, foi_arrival.numeric_burst(), beta)
        except sampling.DomainError:
            horizon *= 2
    raise AnalysisError("horizon growth did not stabilize")


def term_output_numeric(term: Term, foi_arrival: TokenBucket, assign) -> Fraction:
    assign = {k: frac(v) for k, v in assign.items()}
    horizon = _initial_horizon(term, foi_arrival, assign)
    prev = None
    for _ in range(8):
        beta = service_pl_of(term.ast, assign, horizon)
        val = sampling.vdev_pl(foi_arrival.rate, foi_arrival.numeric_burst(), beta)
        if prev is not None and val == prev:
            return val
        prev = val
        horizon *= 2
    return prev


def _initial_horizon(term: Term, foi_arrival: TokenBucket, assign) -> Fraction:
    total_theta = sum(assign.values(), F0)
    lat = sum((l.latency for l in _leaves_of(term.ast)), F0)
    bursts = sum((s.burst for s in _sources_of(term.ast)), foi_arrival.numeric_burst())
    res_rate = min(s.rate for s in term.curve.stages)
    return 8 * (1 + lat + total_theta + bursts / res_rate)


def _leaves_of(ast):
    if isinstance(ast, SLeaf):
        yield ast
    elif isinstance(ast, SConv):
        for p in ast.parts:
            yield from _leaves_of(p)
    elif isinstance(ast, SLeftover):
        yield from _leaves_of(ast.service)
    elif isinstance(ast, ADeconv):
        yield from _leaves_of(ast.service)
        yield from _leaves_of(ast.arrival)
    elif isinstance(ast, ASum):
        for p in ast.parts:
            yield from _leaves_of(p)


def _sources_of(ast):
    if isinstance(ast, ASource):
        yield ast
    elif isinstance(ast, (SConv, ASum)):
        for p in ast.parts:
            yield from _sources_of(p)
    elif isinstance(ast, SLeftover):
        yield from _sources_of(ast.service)
        yield from _sources_of(ast.cross)
    elif isinstance(ast, ADeconv):
        yield from _sources_of(ast.arrival)
        yield from _sources_of(ast.service)


# ---------------------------------------------------------------------------
# theta-grid refinement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Per-theta ranges (lo, hi) and the number of points per axis."""

    ranges: dict[int, tuple[Fraction, Fraction]]
    points: int = 8
    extra: tuple[dict[int, Fraction], ...] = ()  # explicit assignments to include


def theta_grid_refine(
    term: Term,
    foi_arrival: TokenBucket,
    grid: GridSpec,
    lp_bound: Fraction | None = None,
    objective: str = "delay",
) -> Fraction:
    """min(LP bound, definitional bound over the grid); always valid."""
    thetas = term.thetas()
    axes = []
    for t in thetas:
        lo, hi = grid.ranges[t]
        lo, hi = frac(lo), frac(hi)
        if grid.points == 1 or lo == hi:
            axes.append([lo])
        else:
            axes.append([lo + (hi - lo) * k / (grid.points - 1) for k in range(grid.points)])
    best = lp_bound
    evalf = term_bound_numeric if objective == "delay" else term_output_numeric
    for combo in itertools.product(*axes):
        assign = dict(zip(thetas, combo))
        val = evalf(term, foi_arrival, assign)
        if best is None or val < best:
            best = val
    for assign in grid.extra:
        val = evalf(term, foi_arrival, assign)
        if best is None or val < best:
            best = val
    return best


def fallback_grid_bound(
    term: Term, foi_arrival: TokenBucket, objective: str = "delay"
) -> tuple[Fraction, dict[int, Fraction]]:
    """Coordinate-sweep refinement used when the LP domain is empty.

    Each theta is swept over a window [D, D + 10 * total_burst/min_rate]
    with 32 points, zooming 3 times around the best point, round-robin over
    the variables.  Every probe is a valid bound.
    """
    thetas = term.thetas()
    lat = sum((l.latency for l in _leaves_of(term.ast)), F0)
    bursts = sum((s.burst for s in _sources_of(term.ast)), foi_arrival.numeric_burst())
    width = 10 * (bursts / term.curve.min_rate + lat + 1)
    assign = {t: lat + width / 2 for t in thetas}
    evalf = term_bound_numeric if objective == "delay" else term_output_numeric
    best = evalf(term, foi_arrival, assign)
    for _zoom in range(3):
        for t in thetas:
            lo = max(F0, assign[t] - width / 2)
            for k in range(32):
                trial = dict(assign)
                trial[t] = lo + width * k / 31
                val = evalf(term, foi_arrival, trial)
                if val < best:
                    best = val
                    assign = trial
        width /= 3
    return best, assign


# ---------------------------------------------------------------------------
# full analysis
# ---------------------------------------------------------------------------

def _feasible(term: Term, assign) -> bool:
    if set(assign) != set(term.thetas()):
        return False
    return all(c.evaluate(assign) >= 0 for c in term.constraints)


@dataclass(frozen=True)
class AnalysisResult:
    delay_bound: Fraction
    output_burst: Fraction
    term_count: int
    theta_count: int
    assignment: dict[int, Fraction]
    cut_set: tuple[int, ...]


def analyze(
    net: ServerGraph,
    foi: str | None = None,
    objective: str = "delay",
    cap: int = 64,
    budget: Budget | None = None,
    grid_points: int = 0,
) -> AnalysisResult:
    """Bound the foi's delay (or output burstiness) over all term alternatives.

    ``grid_points`` > 0 additionally refines each term on a theta grid of
    that resolution around the LP optimum (definitional semantics, so the
    refinement can only tighten while staying valid).
    """
    foi = foi if foi is not None else net.foi
    if foi is None:
        raise UsageError("no flow of interest given")
    problems = validate(net)
    if problems:
        raise AnalysisError("; ".join(problems))
    terms = foi_terms(net, foi, cap=cap, budget=budget)
    if not terms:
        raise AnalysisError("no terms produced")
    foi_tb = net.flow(foi).arrival()

    best: tuple[Fraction, Term, dict[int, Fraction]] | None = None
    for term in terms:
        if budget is not None:
            budget.check_time()
            budget.charge(len(term.constraints) * 96)
        try:
            if objective == "delay":
                bound, assign = optimize_delay(term, foi_tb)
            else:
                bound, assign = optimize_output(term, foi_tb)
        except EmptyThetaDomain:
            bound, assign = fallback_grid_bound(term, foi_tb, objective)
        if grid_points > 0 and assign:
            spec = GridSpec(
                ranges={t: (v, v * 2 + 1) for t, v in assign.items()},
                points=grid_points,
                extra=(assign,),
            )
            bound = theta_grid_refine(term, foi_tb, spec, bound, objective)
        if best is None or bound < best[0]:
            best = (bound, term, assign)

    bound, term, assign = best
    if objective == "delay":
        delay_bound = bound
        out_burst = (
            vdev(foi_tb, term.curve).evaluate(assign)
            if _feasible(term, assign)
            else term_output_numeric(term, foi_tb, assign)
        )
    else:
        out_burst = bound
        delay_bound = (
            hdev(foi_tb, term.curve).evaluate(assign)
            if _feasible(term, assign)
            else term_bound_numeric(term, foi_tb, assign)
        )
    return AnalysisResult(
        delay_bound=delay_bound,
        output_burst=out_burst,
        term_count=len(terms),
        theta_count=len(term.thetas()),
        assignment=assign,
        cut_set=term.cut_set,
    )
