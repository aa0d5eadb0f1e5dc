"""Fluid FIFO simulation: exactness on simple systems, validity vs bounds."""

from fractions import Fraction

from ncfp.flowsim import simulate_foi_delay
from ncfp.ludb import analyze
from ncfp.netmodel import Flow, GeneratorConfig, Server, ServerGraph, generate, overlap_tandem

F = Fraction


def test_single_server_single_flow_exact():
    net = ServerGraph((Server.of("a", 40, 2),), (), (Flow.of("x", ("a",), 10, 10),), foi="x")
    # greedy burst through a latency-then-rate server: delay exactly T + b/R
    assert simulate_foi_delay(net) == F(9, 4)


def test_two_flow_fifo_share():
    net = ServerGraph(
        (Server.of("a", 1, 0),),
        (),
        (Flow.of("x", ("a",), "1/4", 1), Flow.of("y", ("a",), "1/4", 1)),
        foi="x",
    )
    # simultaneous unit bursts drain at rate 1: the last bit of x's burst
    # leaves when the full joint burst (2) has been served
    assert simulate_foi_delay(net) == 2


def test_sim_never_exceeds_bound_on_random_instances():
    checked = 0
    for seed in range(8):
        net = generate(
            GeneratorConfig(topology="mixed", servers=(4, 6), flows=(3, 6), path_len=(2, 4), seed=seed)
        )
        for f in net.flows[:2]:
            inst = net.with_foi(f.id)
            assert simulate_foi_delay(inst) <= analyze(inst).delay_bound
            checked += 1
    assert checked >= 14


def test_sim_below_bound_on_overlap_tandem_and_prolonged():
    net = overlap_tandem()
    sim = simulate_foi_delay(net)
    assert sim <= analyze(net).delay_bound
    pro_flows = [
        f if f.id != "f2" else Flow("f2", ("s1", "s2", "s3", "s4"), f.rate, f.burst)
        for f in net.flows
    ]
    pro = net.with_flows(pro_flows)
    # a bound for the prolonged network is a bound for the original
    assert sim <= analyze(pro).delay_bound
