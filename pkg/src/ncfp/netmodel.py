"""Server-graph model: curves on a feedforward topology, plus generators.

A network is a DAG of rate-latency servers crossed by unicast token-bucket
flows on fixed paths.  Everything is immutable; rewrites (prolongations)
build new graphs.  The canonical text format round-trips bit-exactly.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Sequence

from .minplus import AffineExpr, TokenBucket, UsageError, frac

F0 = Fraction(0)


@dataclass(frozen=True)
class Server:
    id: str
    rate: Fraction
    latency: Fraction

    @staticmethod
    def of(sid: str, rate, latency) -> "Server":
        return Server(sid, frac(rate), frac(latency))


@dataclass(frozen=True)
class Flow:
    id: str
    path: tuple[str, ...]
    rate: Fraction
    burst: Fraction

    @staticmethod
    def of(fid: str, path: Sequence[str], rate, burst) -> "Flow":
        return Flow(fid, tuple(path), frac(rate), frac(burst))

    @property
    def source(self) -> str:
        return self.path[0]

    @property
    def sink(self) -> str:
        return self.path[-1]

    def arrival(self) -> TokenBucket:
        return TokenBucket(self.rate, AffineExpr.of(self.burst))


@dataclass(frozen=True)
class ServerGraph:
    servers: tuple[Server, ...]
    links: tuple[tuple[str, str], ...]
    flows: tuple[Flow, ...]
    foi: str | None = None

    def server(self, sid: str) -> Server:
        return self._servers()[sid]

    def flow(self, fid: str) -> Flow:
        for f in self.flows:
            if f.id == fid:
                return f
        raise UsageError(f"unknown flow {fid!r}")

    def _servers(self) -> dict[str, Server]:
        return {s.id: s for s in self.servers}

    def link_set(self) -> set[tuple[str, str]]:
        return set(self.links)

    def successors(self, sid: str) -> list[str]:
        return [d for s, d in self.links if s == sid]

    def with_flows(self, flows: Iterable[Flow]) -> "ServerGraph":
        return replace(self, flows=tuple(flows))

    def with_foi(self, foi: str) -> "ServerGraph":
        self.flow(foi)
        return replace(self, foi=foi)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate(net: ServerGraph) -> list[str]:
    """Return a list of violations; empty means the model is analyzable."""
    out: list[str] = []
    seen: set[str] = set()
    for s in net.servers:
        if s.id in seen:
            out.append(f"duplicate server id {s.id!r}")
        seen.add(s.id)
        if s.rate <= 0:
            out.append(f"nonpositive rate at server {s.id!r}")
        if s.latency < 0:
            out.append(f"negative latency at server {s.id!r}")
    links = net.link_set()
    for a, b in links:
        if a not in seen or b not in seen:
            out.append(f"link ({a},{b}) references unknown server")
    if _has_cycle(seen, links):
        out.append("link graph has a cycle (network must be feedforward)")
    fids = set()
    for f in net.flows:
        if f.id in fids:
            out.append(f"duplicate flow id {f.id!r}")
        fids.add(f.id)
        if len(set(f.path)) != len(f.path):
            out.append(f"flow {f.id!r} repeats a server on its path")
        if f.rate < 0 or f.burst < 0:
            out.append(f"flow {f.id!r} has negative curve parameters")
        for a, b in zip(f.path, f.path[1:]):
            if (a, b) not in links:
                out.append(f"flow {f.id!r} path against link direction at ({a},{b})")
        for sid in f.path:
            if sid not in seen:
                out.append(f"flow {f.id!r} crosses unknown server {sid!r}")
    if net.foi is not None and net.foi not in fids:
        out.append(f"foi {net.foi!r} is not a flow")
    # stability: strict at every server
    load: dict[str, Fraction] = {s.id: F0 for s in net.servers}
    for f in net.flows:
        for sid in f.path:
            if sid in load:
                load[sid] += f.rate
    for s in net.servers:
        if load[s.id] >= s.rate:
            out.append(f"server {s.id!r} unstable: crossing rate {load[s.id]} >= {s.rate}")
    return out


def _has_cycle(nodes: set[str], links: set[tuple[str, str]]) -> bool:
    succ: dict[str, list[str]] = {n: [] for n in nodes}
    indeg = {n: 0 for n in nodes}
    for a, b in links:
        if a in succ and b in indeg:
            succ[a].append(b)
            indeg[b] += 1
    queue = [n for n in sorted(nodes) if indeg[n] == 0]
    seen = 0
    while queue:
        n = queue.pop()
        seen += 1
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                queue.append(m)
    return seen != len(nodes)


def topological_order(net: ServerGraph) -> list[str]:
    succ: dict[str, list[str]] = {s.id: [] for s in net.servers}
    indeg = {s.id: 0 for s in net.servers}
    for a, b in net.links:
        succ[a].append(b)
        indeg[b] += 1
    order = []
    queue = sorted(n for n, d in indeg.items() if d == 0)
    while queue:
        n = queue.pop(0)
        order.append(n)
        for m in sorted(succ[n]):
            indeg[m] -= 1
            if indeg[m] == 0:
                queue.append(m)
        queue.sort()
    return order


# ---------------------------------------------------------------------------
# tandem views
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowSegment:
    """One contiguous run of a flow along a tandem, 1-based [entry, exit]."""

    flow_id: str
    part: int
    entry: int
    exit: int


@dataclass(frozen=True)
class TandemView:
    """A tandem (ordered servers) with each crossing flow's interval(s) on it.

    Flows meeting the tandem in several disjoint runs appear once per run
    (``part`` numbers them); each run is treated as its own pseudo-flow.
    """

    servers: tuple[str, ...]
    segments: tuple[FlowSegment, ...]

    @property
    def length(self) -> int:
        return len(self.servers)

    def intervals(self) -> dict[str, list[tuple[int, int]]]:
        out: dict[str, list[tuple[int, int]]] = {}
        for seg in self.segments:
            out.setdefault(seg.flow_id, []).append((seg.entry, seg.exit))
        return out


def segments_on(path: Sequence[str], tandem: Sequence[str]) -> list[tuple[int, int]]:
    """Contiguous runs of `path` along `tandem`, as 1-based [entry, exit] pairs.

    A run requires consecutive path hops to be consecutive tandem hops, so a
    flow that leaves and rejoins contributes several runs.
    """
    pos = {sid: i + 1 for i, sid in enumerate(tandem)}
    runs: list[tuple[int, int]] = []
    start = prev = None
    prev_path_idx = None
    for i, sid in enumerate(path):
        p = pos.get(sid)
        if p is None:
            if start is not None:
                runs.append((start, prev))
            start = prev = prev_path_idx = None
            continue
        contiguous = (
            prev is not None and p == prev + 1 and prev_path_idx == i - 1
        )
        if contiguous:
            prev = p
            prev_path_idx = i
        else:
            if start is not None:
                runs.append((start, prev))
            start = prev = p
            prev_path_idx = i
    if start is not None:
        runs.append((start, prev))
    return runs


def tandem_view(net: ServerGraph, foi: str) -> TandemView:
    foi_flow = net.flow(foi)
    tandem = foi_flow.path
    segs: list[FlowSegment] = []
    for f in net.flows:
        if f.id == foi:
            continue
        for part, (a, b) in enumerate(segments_on(f.path, tandem)):
            segs.append(FlowSegment(f.id, part, a, b))
    return TandemView(tandem, tuple(segs))


# ---------------------------------------------------------------------------
# canonical text format
# ---------------------------------------------------------------------------

def serialize(net: ServerGraph) -> str:
    """Canonical, bit-exact text form (rationals as p/q)."""
    lines = ["SERVERS"]
    for s in net.servers:
        lines.append(f"{s.id} {s.rate} {s.latency}")
    lines.append("LINKS")
    for a, b in net.links:
        lines.append(f"{a} {b}")
    lines.append("FLOWS")
    for f in net.flows:
        lines.append(f"{f.id} {f.rate} {f.burst} " + " ".join(f.path))
    if net.foi is not None:
        lines.append("FOI")
        lines.append(net.foi)
    return "\n".join(lines) + "\n"


def parse(text: str) -> ServerGraph:
    servers: list[Server] = []
    links: list[tuple[str, str]] = []
    flows: list[Flow] = []
    foi: str | None = None
    section = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line in ("SERVERS", "LINKS", "FLOWS", "FOI"):
            section = line
            continue
        parts = line.split()
        if section == "SERVERS":
            if len(parts) != 3:
                raise UsageError(f"bad server line: {raw!r}")
            servers.append(Server.of(parts[0], parts[1], parts[2]))
        elif section == "LINKS":
            if len(parts) != 2:
                raise UsageError(f"bad link line: {raw!r}")
            links.append((parts[0], parts[1]))
        elif section == "FLOWS":
            if len(parts) < 4:
                raise UsageError(f"bad flow line: {raw!r}")
            flows.append(Flow.of(parts[0], parts[3:], parts[1], parts[2]))
        elif section == "FOI":
            foi = parts[0]
        else:
            raise UsageError(f"content before any section: {raw!r}")
    return ServerGraph(tuple(servers), tuple(links), tuple(flows), foi)


# ---------------------------------------------------------------------------
# random generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorConfig:
    """Random instance generator settings.

    Topologies: ``tandem``, ``tree``, ``erdos_renyi`` or ``mixed`` (uniform
    choice among the three).  Curve parameters are drawn uniformly on a
    1/1000 grid in (0, 1]; flow rates are then rescaled so every server
    keeps ``utilization`` headroom, which preserves the (0, 1] range and
    makes every instance analyzable.
    """

    topology: str = "mixed"
    servers: tuple[int, int] = (5, 15)
    flows: tuple[int, int] = (12, 40)
    path_len: tuple[int, int] = (3, 6)
    er_prob: Fraction = Fraction(3, 10)
    utilization: Fraction = Fraction(3, 4)
    seed: int = 0

    def __post_init__(self):
        for rng_pair in (self.servers, self.flows, self.path_len):
            if rng_pair[0] > rng_pair[1] or rng_pair[0] < 1:
                raise UsageError(f"empty range {rng_pair}")


class GenerationError(RuntimeError):
    pass


_GRID = 1000


def _param(rng: random.Random) -> Fraction:
    return Fraction(rng.randint(1, _GRID), _GRID)


def _gen_links(kind: str, n: int, p: Fraction, rng: random.Random) -> list[tuple[str, str]]:
    ids = [f"s{i}" for i in range(n)]
    links: list[tuple[str, str]] = []
    if kind == "tandem":
        links = [(ids[i], ids[i + 1]) for i in range(n - 1)]
    elif kind == "tree":
        # spine first so deep paths exist, then random attachment
        spine = min(n, 7)
        for i in range(1, spine):
            links.append((ids[i - 1], ids[i]))
        for i in range(spine, n):
            parent = rng.randint(0, i - 1)
            links.append((ids[parent], ids[i]))
    elif kind == "erdos_renyi":
        # edges oriented low -> high index: acyclic by construction
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < float(p):
                    links.append((ids[i], ids[j]))
        for i in range(n - 1):  # keep a spine so long paths exist
            if (ids[i], ids[i + 1]) not in links:
                links.append((ids[i], ids[i + 1]))
    else:
        raise UsageError(f"unknown topology {kind!r}")
    return links


def _random_path(succ: dict[str, list[str]], length: int, rng: random.Random) -> list[str] | None:
    """Random directed path of exact length: random walk with backtracking."""
    starts = sorted(succ)

    def extend(path: list[str]) -> bool:
        if len(path) == length:
            return True
        options = [s for s in succ.get(path[-1], []) if s not in path]
        rng.shuffle(options)
        for nxt in options:
            path.append(nxt)
            if extend(path):
                return True
            path.pop()
        return False

    for _ in range(40):
        node = rng.choice(starts)
        path = [node]
        if extend(path):
            return path
    return None


def generate(cfg: GeneratorConfig) -> ServerGraph:
    """Deterministic under seed; always satisfies :func:`validate`."""
    rng = random.Random(cfg.seed)
    kind = cfg.topology
    if kind == "mixed":
        kind = rng.choice(["tandem", "tree", "erdos_renyi"])

    for attempt in range(60):
        n = rng.randint(*cfg.servers)
        links = _gen_links(kind, n, cfg.er_prob, rng)
        servers = [Server(f"s{i}", _param(rng), _param(rng)) for i in range(n)]
        succ: dict[str, list[str]] = {s.id: [] for s in servers}
        for a, b in links:
            succ[a].append(b)
        for v in succ.values():
            v.sort()

        nflows = rng.randint(*cfg.flows)
        flows: list[Flow] = []
        ok = True
        for i in range(nflows):
            length = rng.randint(*cfg.path_len)
            if length > n:
                if cfg.path_len[0] > n:
                    ok = False
                    break
                length = max(cfg.path_len[0], n)
            path = _random_path(succ, length, rng)
            if path is None:
                ok = False
                break
            flows.append(Flow(f"f{i}", tuple(path), _param(rng), _param(rng)))
        if not ok:
            continue

        flows = _rescale_for_stability(servers, flows, cfg.utilization, rng)
        net = ServerGraph(tuple(servers), tuple(links), tuple(flows))
        if not validate(net):
            return net
    raise GenerationError(f"could not generate a valid network for {cfg}")


def _rescale_for_stability(
    servers: Sequence[Server], flows: Sequence[Flow], target: Fraction, rng: random.Random
) -> list[Flow]:
    load: dict[str, Fraction] = {s.id: F0 for s in servers}
    for f in flows:
        for sid in f.path:
            load[sid] += f.rate
    worst = max(
        (load[s.id] / s.rate for s in servers if load[s.id] > 0), default=F0
    )
    if worst <= target:
        return list(flows)
    scale = target / worst
    out = []
    for f in flows:
        scaled = f.rate * scale
        # keep the 1/grid quantization so serialization stays compact
        num = max(1, int(scaled * _GRID * 1000))
        out.append(replace(f, rate=Fraction(num, _GRID * 1000)))
    rescaled = out
    # the integer floor may still overshoot at one server; nudge down if so
    load = {s.id: F0 for s in servers}
    for f in rescaled:
        for sid in f.path:
            load[sid] += f.rate
    for s in servers:
        if load[s.id] >= s.rate:
            return _rescale_for_stability(servers, rescaled, target / 2, rng)
    return rescaled


# ---------------------------------------------------------------------------
# reference instances
# ---------------------------------------------------------------------------

def overlap_tandem(u=Fraction(1, 4), latency=Fraction(1, 10), burst=Fraction(1, 10),
                   rate=Fraction(40)) -> ServerGraph:
    """Five-server chain whose cross-flows overlap pairwise without nesting.

    The flow of interest runs s2..s5; two flows from s1 end at s4 and s3,
    and a third runs s3..s4, so the middle of the tandem carries an
    interference pattern that cannot be analyzed end-to-end without either
    cutting or prolonging.  ``u`` is the utilization at s3, which sees all
    four flows: each flow gets rate u*rate/4.
    """
    u, latency, burst, rate = frac(u), frac(latency), frac(burst), frac(rate)
    r = u * rate / 4
    servers = tuple(Server(f"s{i}", rate, latency) for i in range(1, 6))
    links = tuple((f"s{i}", f"s{i+1}") for i in range(1, 5))
    flows = (
        Flow("foi", ("s2", "s3", "s4", "s5"), r, burst),
        Flow("f1", ("s1", "s2", "s3", "s4"), r, burst),
        Flow("f2", ("s1", "s2", "s3"), r, burst),
        Flow("f3", ("s3", "s4"), r, burst),
    )
    return ServerGraph(servers, links, flows, foi="foi")


def randomized_overlap_tandem(rng: random.Random) -> ServerGraph:
    """The overlap tandem with every curve parameter drawn fresh from (0, 1]."""
    servers = tuple(Server(f"s{i}", _param(rng), _param(rng)) for i in range(1, 6))
    links = tuple((f"s{i}", f"s{i+1}") for i in range(1, 5))
    paths = {
        "foi": ("s2", "s3", "s4", "s5"),
        "f1": ("s1", "s2", "s3", "s4"),
        "f2": ("s1", "s2", "s3"),
        "f3": ("s3", "s4"),
    }
    flows = [Flow(fid, path, _param(rng), _param(rng)) for fid, path in paths.items()]
    # stability must survive any prolongation: s3/s4 can end up carrying all
    # four flows, so normalize against the full aggregate everywhere
    total = sum(f.rate for f in flows)
    min_rate = min(s.rate for s in servers)
    scale = min_rate * Fraction(9, 10) / total
    if scale < 1:
        flows = [
            replace(f, rate=Fraction(max(1, int(f.rate * scale * _GRID * 1000)), _GRID * 1000))
            for f in flows
        ]
    return ServerGraph(servers, links, tuple(flows), foi="foi")
