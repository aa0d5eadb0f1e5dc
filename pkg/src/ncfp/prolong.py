"""Flow prolongation: alternative generation, rewriting, evaluation.

Extending a cross-flow further along the foi's path only adds interference,
so the true foi delay cannot decrease and any valid bound computed on the
prolonged network also bounds the original.  Searching over prolongation
alternatives therefore trades computation for tightness without risking
validity.

A cross-flow is prolongable only if it currently ends on the foi's path
(its sink is its exit there); flows that continue elsewhere keep their
single no-op option.  The exhaustive pool is the Cartesian product of
per-flow exit choices and is enumerated lazily (pools grow as n^m).  The
pattern heuristic proposes only moves that resolve non-nested interference
patterns; random selection draws uniformly without replacement with a
prefix-stable seed semantics.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterator, Sequence

from .ludb import AnalysisError, Budget, BudgetExceeded, _interleaved, analyze
from .minplus import InstabilityError, UsageError
from .netmodel import Flow, ServerGraph, TandemView, tandem_view, validate

Assignment = tuple[tuple[str, int], ...]  # (flow id, exit index), sorted by flow id


def assignment_of(mapping: dict[str, int]) -> Assignment:
    return tuple(sorted(mapping.items()))


def prolongation_options(net: ServerGraph, foi: str) -> dict[str, tuple[int, ...]]:
    """Per cross-flow exit choices on the foi path, current exit first."""
    view = tandem_view(net, foi)
    n = view.length
    out: dict[str, tuple[int, ...]] = {}
    for fid, intervals in sorted(view.intervals().items()):
        exit_pos = intervals[-1][1]
        flow = net.flow(fid)
        prolongable = flow.sink == view.servers[exit_pos - 1]
        if prolongable:
            out[fid] = tuple(range(exit_pos, n + 1))
        else:
            out[fid] = (exit_pos,)
    return out


def apply_assignment(net: ServerGraph, foi: str, assignment: Assignment) -> ServerGraph:
    """Rewrite the network with the prolonged paths; a pure transformation."""
    view = tandem_view(net, foi)
    options = prolongation_options(net, foi)
    by_flow = dict(assignment)
    new_flows: list[Flow] = []
    for f in net.flows:
        target = by_flow.get(f.id)
        if target is None or f.id == foi:
            new_flows.append(f)
            continue
        if target not in options.get(f.id, ()):
            raise UsageError(f"invalid exit {target} for flow {f.id!r}")
        current = options[f.id][0]
        if target == current:
            new_flows.append(f)
            continue
        extension = view.servers[current:target]
        new_flows.append(replace(f, path=f.path + extension))
    return net.with_flows(new_flows)


@dataclass(frozen=True)
class AlternativeSet:
    """Ordered alternatives; either a lazy Cartesian product or an explicit list."""

    flow_order: tuple[str, ...]
    options: dict[str, tuple[int, ...]]
    provenance: str
    explicit: tuple[Assignment, ...] | None = None

    def __len__(self) -> int:
        if self.explicit is not None:
            return len(self.explicit)
        size = 1
        for fid in self.flow_order:
            size *= len(self.options[fid])
        return size

    def __iter__(self) -> Iterator[Assignment]:
        if self.explicit is not None:
            yield from self.explicit
            return
        for i in range(len(self)):
            yield self.unrank(i)

    def unrank(self, index: int) -> Assignment:
        """Lexicographic unranking over per-flow choices (identity is rank 0)."""
        if self.explicit is not None:
            return self.explicit[index]
        digits: dict[str, int] = {}
        for fid in reversed(self.flow_order):
            opts = self.options[fid]
            index, d = divmod(index, len(opts))
            digits[fid] = opts[d]
        if index:
            raise UsageError("rank out of range")
        return assignment_of(digits)

    @property
    def identity(self) -> Assignment:
        return assignment_of({fid: self.options[fid][0] for fid in self.flow_order})


def enumerate_all(net: ServerGraph, foi: str) -> AlternativeSet:
    options = prolongation_options(net, foi)
    return AlternativeSet(tuple(sorted(options)), options, "exhaustive")


def hfp_alternatives(net: ServerGraph, foi: str, combo_cap: int = 4096) -> AlternativeSet:
    """Identity plus combinations of pattern-resolving moves.

    Every non-nested pair proposes one move: prolong both involved flows to
    the later of their exits.  Moves combine freely (per flow, the furthest
    requested exit wins); prolongations that might create new non-nested
    patterns are not re-examined.  Moves needing a non-prolongable flow are
    dropped.
    """
    view = tandem_view(net, foi)
    options = prolongation_options(net, foi)
    segs = list(view.segments)
    moves: list[tuple[tuple[str, int], ...]] = []
    for i in range(len(segs)):
        for j in range(i + 1, len(segs)):
            a, b = segs[i], segs[j]
            if not _interleaved((a.entry, a.exit), (b.entry, b.exit)):
                continue
            target = max(a.exit, b.exit)
            move = []
            ok = True
            for fid in sorted({a.flow_id, b.flow_id}):
                if target > options[fid][0]:
                    if target not in options[fid]:
                        ok = False
                        break
                    move.append((fid, target))
            if ok and move:
                moves.append(tuple(move))
    uniq_moves = sorted(set(moves))

    identity = assignment_of({fid: options[fid][0] for fid in options})
    pool: list[Assignment] = [identity]
    seen = {identity}
    for mask in range(1, 1 << len(uniq_moves)):
        if mask >= combo_cap:
            break
        chosen: dict[str, int] = dict(identity)
        for k, move in enumerate(uniq_moves):
            if mask >> k & 1:
                for fid, target in move:
                    chosen[fid] = max(chosen[fid], target)
        asg = assignment_of(chosen)
        if asg not in seen:
            seen.add(asg)
            pool.append(asg)
    return AlternativeSet(tuple(sorted(options)), options, "hfp", tuple(pool))


def random_select(pool: AlternativeSet, k: int, seed: int) -> AlternativeSet:
    """k distinct uniform draws without replacement; first draws are a prefix.

    Sequential rejection sampling makes the selection for k+1 extend the
    selection for k under the same seed.
    """
    if k < 1:
        raise UsageError("k must be >= 1")
    n = len(pool)
    if k >= n:
        return AlternativeSet(
            pool.flow_order, pool.options, f"random({pool.provenance})", tuple(pool)
        )
    rng = random.Random(seed)
    picked: list[int] = []
    taken: set[int] = set()
    while len(picked) < k:
        i = rng.randrange(n)
        if i not in taken:
            taken.add(i)
            picked.append(i)
    chosen = tuple(pool.unrank(i) for i in picked)
    return AlternativeSet(pool.flow_order, pool.options, f"random({pool.provenance})", chosen)


@dataclass(frozen=True)
class AlternativeOutcome:
    assignment: Assignment
    bound: Fraction | None
    error: str | None = None


@dataclass(frozen=True)
class Evaluation:
    best_assignment: Assignment | None
    best_bound: Fraction | None
    outcomes: tuple[AlternativeOutcome, ...]
    explored: int

    @property
    def ok(self) -> bool:
        return self.best_bound is not None


def evaluate_alternatives(
    net: ServerGraph,
    foi: str,
    alts: AlternativeSet | Sequence[Assignment],
    objective: str = "delay",
    budget: Budget | None = None,
    cap: int = 64,
    grid_points: int = 0,
) -> Evaluation:
    """Analyze every alternative; exact minimum, ties broken by order.

    Per-alternative failures (instability after a rewrite, budget blowups)
    are recorded and skipped; the evaluation fails only if nothing succeeds.
    """
    outcomes: list[AlternativeOutcome] = []
    best: tuple[Fraction, Assignment] | None = None
    explored = 0
    for asg in alts:
        if budget is not None:
            try:
                budget.check_time()
            except BudgetExceeded:
                break
        explored += 1
        try:
            rewritten = apply_assignment(net, foi, asg)
            problems = validate(rewritten)
            if problems:
                raise AnalysisError("; ".join(problems))
            res = analyze(rewritten, foi, objective=objective, cap=cap,
                          budget=budget, grid_points=grid_points)
            bound = res.delay_bound if objective == "delay" else res.output_burst
            outcomes.append(AlternativeOutcome(asg, bound))
            if best is None or bound < best[0]:
                best = (bound, asg)
        except BudgetExceeded:
            outcomes.append(AlternativeOutcome(asg, None, "budget"))
            break
        except (AnalysisError, InstabilityError, UsageError) as exc:
            outcomes.append(AlternativeOutcome(asg, None, str(exc)))
    if best is None:
        return Evaluation(None, None, tuple(outcomes), explored)
    return Evaluation(best[1], best[0], tuple(outcomes), explored)


def format_alternatives(alts: AlternativeSet | Sequence[Assignment]) -> str:
    """Audit dump: one assignment per line as flow->exit pairs."""
    lines = []
    for asg in alts:
        lines.append(" ".join(f"{fid}->{exit_}" for fid, exit_ in asg))
    return "\n".join(lines) + "\n"
