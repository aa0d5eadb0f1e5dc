"""Exact fluid FIFO simulation under greedy arrivals.

Every flow injects its full burst at time zero and then sends at its token
rate forever, i.e. it saturates its arrival curve.  Each server is realized
as a fixed delay equal to its latency followed by a work-conserving
constant-rate fluid queue; such a server honours its rate-latency service
curve, so the simulated network is one admissible behavior of the analyzed
model and its flow-of-interest delay can never exceed a valid bound.

All cumulative arrival/departure functions are exact piecewise-linear
curves (:class:`ncfp.sampling.PLCurve`): the departure of a rate queue is
the min-plus convolution of its (shifted) aggregate input with the rate
line, and FIFO per-flow splitting maps aggregate output volume back through
each flow's share of the input, interpolating proportionally within
simultaneous bursts.
"""

from __future__ import annotations

from fractions import Fraction

from .minplus import UsageError
from .netmodel import ServerGraph, topological_order
from .sampling import (
    DomainError,
    PLCurve,
    _normalize,
    convolve_pl,
    hdev_pl,
    inverse_level,
    inverse_level_above,
    token_bucket_pl,
)

F0 = Fraction(0)


def pl_add(f: PLCurve, g: PLCurve) -> PLCurve:
    if f.horizon != g.horizon:
        raise UsageError("cannot add curves with different horizons")
    ts = sorted(set(f.kinks) | set(g.kinks))
    pts = [(t, f.value(t) + g.value(t),
            (f.right(t) + g.right(t)) if t < f.horizon else f.value(t) + g.value(t))
           for t in ts]
    return _normalize(pts, f.horizon)


def pl_shift(f: PLCurve, delay: Fraction, horizon: Fraction) -> PLCurve:
    """f delayed by `delay` (zero before), truncated to `horizon`."""
    if delay < 0:
        raise UsageError("negative delay")
    pts: list[tuple[Fraction, Fraction, Fraction]] = []
    if delay > 0:
        pts.append((F0, F0, F0))
    for t, v, w in f.points:
        if t + delay < horizon:
            pts.append((t + delay, v, w))
    edge = f.value(horizon - delay)
    pts.append((horizon, edge, edge))
    return _normalize(pts, horizon)


def volume_share(total: PLCurve, part: PLCurve) -> list[tuple[Fraction, Fraction]]:
    """Continuous map from aggregate volume to `part`'s volume within it.

    Simultaneous bursts (jumps of `total`) are shared proportionally, which
    is one admissible FIFO tie-breaking.
    """
    anchors: list[tuple[Fraction, Fraction]] = []
    # the part can kink where the total stays collinear (compensating slopes),
    # so anchor at the union of both kink sets
    for t in sorted(set(total.kinks) | set(part.kinks)):
        anchors.append((total.value(t), part.value(t)))
        if t < total.horizon:
            anchors.append((total.right(t), part.right(t)))
    out: list[tuple[Fraction, Fraction]] = []
    for v, w in sorted(anchors):
        if out and out[-1][0] == v:
            if w > out[-1][1]:
                out[-1] = (v, w)
            continue
        out.append((v, w))
    return out


def _share_at(anchors: list[tuple[Fraction, Fraction]], v: Fraction) -> Fraction:
    if v <= anchors[0][0]:
        return anchors[0][1]
    for (v0, w0), (v1, w1) in zip(anchors, anchors[1:]):
        if v <= v1:
            if v1 == v0:
                return w1
            return w0 + (w1 - w0) * (v - v0) / (v1 - v0)
    return anchors[-1][1]


def compose_share(anchors: list[tuple[Fraction, Fraction]], dep: PLCurve) -> PLCurve:
    """share(dep(t)) as an exact curve: the flow's own departures."""
    ts = set(dep.kinks)
    top = dep.points[-1][1]
    for v, _ in anchors:
        if v <= F0 or v > top:
            continue
        try:
            ts.add(inverse_level(dep, v))
            ts.add(inverse_level_above(dep, v))
        except DomainError:
            pass
    pts = []
    for t in sorted(ts):
        val = _share_at(anchors, dep.value(t))
        w = _share_at(anchors, dep.right(t)) if t < dep.horizon else val
        pts.append((t, val, w))
    return _normalize(pts, dep.horizon)


def simulate_foi_delay(net: ServerGraph, foi: str | None = None) -> Fraction:
    """Worst observed per-bit delay of the flow of interest, exact.

    The returned value is a lower bound on the true worst case, so any
    valid delay bound must weakly exceed it.
    """
    foi = foi if foi is not None else net.foi
    if foi is None:
        raise UsageError("no flow of interest")
    foi_flow = net.flow(foi)

    total_burst = sum((f.burst for f in net.flows), F0)
    slack = min(
        s.rate - sum(f.rate for f in net.flows if s.id in f.path) for s in net.servers
    )
    total_lat = sum((s.latency for s in net.servers), F0)
    horizon = 8 * (1 + total_lat + total_burst / slack)

    for _attempt in range(6):
        try:
            return _run(net, foi_flow, horizon)
        except DomainError:
            horizon *= 2
    raise RuntimeError("simulation horizon did not stabilize")


def _run(net: ServerGraph, foi_flow, horizon: Fraction) -> Fraction:
    arrivals: dict[tuple[str, str], PLCurve] = {}
    for f in net.flows:
        arrivals[(f.id, f.source)] = token_bucket_pl(f.rate, f.burst, horizon)

    final: PLCurve | None = None
    for sid in topological_order(net):
        here = [f for f in net.flows if sid in f.path]
        if not here:
            continue
        server = net.server(sid)
        agg = None
        for f in here:
            cur = arrivals[(f.id, sid)]
            agg = cur if agg is None else pl_add(agg, cur)
        shifted = pl_shift(agg, server.latency, horizon)
        dep = convolve_pl(shifted, token_bucket_pl(server.rate, F0, horizon))
        for f in here:
            share = volume_share(agg, arrivals[(f.id, sid)])
            dep_f = compose_share(share, dep)
            i = f.path.index(sid)
            if i + 1 < len(f.path):
                arrivals[(f.id, f.path[i + 1])] = dep_f
            elif f.id == foi_flow.id:
                final = dep_f
    if final is None:
        raise UsageError("foi never departs; check its path")
    return hdev_pl(foi_flow.rate, foi_flow.burst, final)
