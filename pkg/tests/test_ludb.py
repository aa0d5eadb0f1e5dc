"""Tandem analysis: nesting, cutting, theta bookkeeping, LP and grid bounds."""

import itertools
from fractions import Fraction

import pytest

from ncfp.ludb import (
    AnalysisResult,
    GridSpec,
    NotNested,
    Term,
    analyze,
    build_nesting_tree,
    enumerate_cut_sets,
    foi_terms,
    optimize_delay,
    optimize_output,
    term_bound_numeric,
    theta_grid_refine,
)
from ncfp.minplus import AffineExpr
from ncfp.netmodel import (
    Flow,
    FlowSegment,
    GeneratorConfig,
    Server,
    ServerGraph,
    TandemView,
    generate,
    overlap_tandem,
    tandem_view,
)

F = Fraction


def prolonged_overlap_tandem(**kw) -> ServerGraph:
    net = overlap_tandem(**kw)
    flows = [
        f if f.id != "f2" else Flow("f2", ("s1", "s2", "s3", "s4"), f.rate, f.burst)
        for f in net.flows
    ]
    return net.with_flows(flows)


# ---------------------------------------------------------------------------
# nesting and cutting
# ---------------------------------------------------------------------------

def test_overlap_tandem_is_not_nested():
    out = build_nesting_tree(tandem_view(overlap_tandem(), "foi"))
    assert isinstance(out, NotNested)
    assert set(out.witness) == {"f2", "f3"}


def test_prolonged_view_is_nested():
    view = tandem_view(prolonged_overlap_tandem(), "foi")
    assert view.intervals()["f2"] == [(1, 3)]
    tree = build_nesting_tree(view)
    assert not isinstance(tree, NotNested)
    assert tree.root.interval == (1, 4)


def test_empty_view_tree_is_all_leaves():
    view = TandemView(("a", "b", "c"), ())
    tree = build_nesting_tree(view)
    assert tree.root.leaf_positions == (1, 2, 3)
    assert tree.root.children == ()


def test_cut_sets_for_overlap_tandem():
    cs = enumerate_cut_sets(tandem_view(overlap_tandem(), "foi"))
    assert cs == [(1,), (2,)]


def test_cut_sets_nested_view_empty():
    assert enumerate_cut_sets(tandem_view(prolonged_overlap_tandem(), "foi")) == []


def test_cut_sets_interleaved_chain_vs_bruteforce():
    # 4-hop tandem, f_a [1,3] and f_b [2,4]
    view = TandemView(
        ("t1", "t2", "t3", "t4"),
        (FlowSegment("fa", 0, 1, 3), FlowSegment("fb", 0, 2, 4)),
    )
    got = enumerate_cut_sets(view)

    # independent brute force over all boundary subsets
    def nested_after(cuts):
        edges = [0, *cuts, 4]
        for a, b in zip(edges, edges[1:]):
            clip = []
            for e, x in [(1, 3), (2, 4)]:
                ce, cx = max(e, a + 1), min(x, b)
                if ce <= cx:
                    clip.append((ce, cx))
            for p, q in itertools.combinations(clip, 2):
                overlap = not (p[1] < q[0] or q[1] < p[0])
                contains = (p[0] <= q[0] and q[1] <= p[1]) or (q[0] <= p[0] and p[1] <= q[1])
                if overlap and not contains:
                    return False
        return True

    valid = [c for r in range(1, 4) for c in itertools.combinations((1, 2, 3), r) if nested_after(c)]
    minimal = [c for c in valid if not any(set(v) < set(c) for v in valid)]
    assert got == sorted(minimal, key=lambda c: (len(c), c))
    assert got == [(1,), (2,), (3,)]


# ---------------------------------------------------------------------------
# theta bookkeeping on the worked example
# ---------------------------------------------------------------------------

def test_worked_example_theta_counts():
    terms = foi_terms(overlap_tandem(), "foi")
    by_cut = {t.cut_set: len(t.thetas()) for t in terms}
    assert by_cut == {(1,): 7, (2,): 9}


def test_prolonged_term_has_two_thetas():
    terms = foi_terms(prolonged_overlap_tandem(), "foi")
    assert len(terms) == 1
    assert terms[0].cut_set == ()
    assert len(terms[0].thetas()) == 2


def test_single_server_one_cross_flow_term():
    net = ServerGraph(
        (Server.of("a", 4, "1/2"),),
        (),
        (Flow.of("x", ("a",), 1, 1), Flow.of("g", ("a",), 1, 2)),
        foi="x",
    )
    terms = foi_terms(net, "x")
    assert len(terms) == 1
    assert len(terms[0].thetas()) == 1


def test_two_server_nested_cross_flow_term():
    net = ServerGraph(
        (Server.of("a", 4, "1/2"), Server.of("b", 5, "1/4")),
        (("a", "b"),),
        (Flow.of("x", ("a", "b"), 1, 1), Flow.of("g", ("a", "b"), 1, 2)),
        foi="x",
    )
    terms = foi_terms(net, "x")
    assert len(terms) == 1
    term = terms[0]
    assert len(term.thetas()) == 1
    # validity of the compiled form against the definitional semantics
    bound, assign = optimize_delay(term, net.flow("x").arrival())
    assert term_bound_numeric(term, net.flow("x").arrival(), assign) == bound


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

def test_single_server_delay_bound():
    net = ServerGraph((Server.of("a", 40, 2),), (), (Flow.of("x", ("a",), 10, 10),), foi="x")
    res = analyze(net)
    assert res.delay_bound == F(9, 4)
    assert res.theta_count == 0


def test_prolonged_beats_both_cuts():
    plain = analyze(overlap_tandem())
    pro = analyze(prolonged_overlap_tandem())
    assert pro.delay_bound < plain.delay_bound


def test_theta_independent_lp_degenerates_to_constant():
    net = ServerGraph(
        (Server.of("a", 3, "2/7"), Server.of("b", 4, "1/3")),
        (("a", "b"),),
        (Flow.of("x", ("a", "b"), 1, 1),),
        foi="x",
    )
    terms = foi_terms(net, "x")
    bound, assign = optimize_delay(terms[0], net.flow("x").arrival())
    assert assign == {}
    assert bound == F(2, 7) + F(1, 3) + F(1, 3)


def test_analyze_reports_min_over_cut_sets():
    net = overlap_tandem()
    foi_tb = net.flow("foi").arrival()
    bounds = [optimize_delay(t, foi_tb)[0] for t in foi_terms(net, "foi")]
    assert analyze(net).delay_bound == min(bounds)


def test_zero_cross_flow_closed_form():
    net = ServerGraph(
        (Server.of("a", 4, "1/2"), Server.of("b", 6, "1/4"), Server.of("c", 5, "1/8")),
        (("a", "b"), ("b", "c")),
        (Flow.of("x", ("a", "b", "c"), 1, 2),),
        foi="x",
    )
    assert analyze(net).delay_bound == F(1, 2) + F(1, 4) + F(1, 8) + F(2, 4)


def test_bound_at_least_sum_of_latencies():
    for seed in range(6):
        net = generate(GeneratorConfig(topology="mixed", servers=(4, 7), flows=(3, 7), path_len=(2, 4), seed=seed))
        for f in net.flows[:2]:
            res = analyze(net.with_foi(f.id))
            lat = sum((net.server(s).latency for s in f.path), F(0))
            assert res.delay_bound >= lat


# ---------------------------------------------------------------------------
# grid refinement
# ---------------------------------------------------------------------------

def test_grid_hits_lp_optimum_exactly():
    net = ServerGraph(
        (Server.of("a", 4, "1/2"),),
        (),
        (Flow.of("x", ("a",), 1, 1), Flow.of("g", ("a",), 1, 2)),
        foi="x",
    )
    term = foi_terms(net, "x")[0]
    foi_tb = net.flow("x").arrival()
    bound, assign = optimize_delay(term, foi_tb)
    t = term.thetas()[0]
    spec = GridSpec(ranges={t: (assign[t], assign[t] + 2)}, points=5, extra=(assign,))
    refined = theta_grid_refine(term, foi_tb, spec, bound)
    assert refined == bound  # the optimum itself is a grid point


def test_in_domain_grid_never_beats_lp():
    net = overlap_tandem()
    foi_tb = net.flow("foi").arrival()
    for term in foi_terms(net, "foi"):
        bound, assign = optimize_delay(term, foi_tb)
        spec = GridSpec(ranges={t: (v, v + 1) for t, v in assign.items()}, points=2)
        refined = theta_grid_refine(term, foi_tb, spec, None)
        # grid points sit inside the feasible region (thetas only grow), and
        # at feasible assignments the definitional bound equals the closed form
        assert refined >= bound


def test_fp_term_grid_refine_not_above_lp():
    net = prolonged_overlap_tandem()
    term = foi_terms(net, "foi")[0]
    foi_tb = net.flow("foi").arrival()
    bound, assign = optimize_delay(term, foi_tb)
    ta, tb = term.thetas()
    spec = GridSpec(
        ranges={ta: (F(0), assign[ta] * 2 + 1), tb: (F(0), assign[tb] * 2 + 1)},
        points=8,
        extra=(assign,),
    )
    refined = theta_grid_refine(term, foi_tb, spec, bound)
    assert refined <= bound  # closure semantics may only help


def test_output_objective():
    net = overlap_tandem()
    res = analyze(net, objective="output")
    delay_res = analyze(net)
    # optimizing for output burstiness cannot give a worse burst than the
    # delay-optimal assignment's burst
    assert res.output_burst <= delay_res.output_burst
