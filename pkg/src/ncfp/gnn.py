"""Prolongation prediction: graph encoding, message passing, gradients.

The analysis instance (servers, flows, candidate prolongations around one
flow of interest) is encoded as an undirected heterogeneous graph: servers
and flows become nodes connected along links and paths, and every candidate
exit of a prolongable cross-flow becomes a *prolongation node* wired to its
flow and its candidate sink server; keeping the current exit is itself a
candidate, so every cross-flow owns at least one such node.

The network is a gated message-passing model with edge attention: node
states update through a GRU cell fed with attention-weighted neighbor
messages, run for as many iterations as the graph diameter, and a readout
scores each prolongation node.  A per-flow softmax over its nodes' scores
yields one categorical distribution per cross-flow.

Forward, scoring and exact reverse-mode gradients are implemented directly
on numpy float64 arrays; no autograd framework is involved.  The default
hidden width is kept small for desk-scale training; the published-scale
configuration (feature width 13, hidden 128) has exactly 166,402
parameters, which the tests audit.
"""

from __future__ import annotations

import heapq
import json
import struct
from dataclasses import dataclass, fields
from fractions import Fraction

import numpy as np

from .minplus import UsageError
from .netmodel import ServerGraph, tandem_view
from .prolong import Assignment, assignment_of, prolongation_options

FEATURE_WIDTH = 13  # [kind one-hot(3) | rate | latency-or-burst | order-or-hop | foi flag | padding(6)]


# ---------------------------------------------------------------------------
# graph encoding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnalysisGraph:
    features: np.ndarray              # (N, F)
    edges: tuple[tuple[int, int], ...]  # undirected, deduplicated
    kinds: tuple[str, ...]            # server | flow | prolongation
    labels: tuple[str, ...]           # server/flow id or "flow@exit"
    flow_groups: dict[str, tuple[int, ...]]   # cross-flow -> its prolongation nodes
    group_exits: dict[str, tuple[int, ...]]   # cross-flow -> exit index per node

    @property
    def n_nodes(self) -> int:
        return len(self.kinds)

    def diameter(self) -> int:
        n = self.n_nodes
        adj: list[list[int]] = [[] for _ in range(n)]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        best = 1
        for start in range(n):
            dist = [-1] * n
            dist[start] = 0
            queue = [start]
            while queue:
                u = queue.pop(0)
                for v in adj[u]:
                    if dist[v] < 0:
                        dist[v] = dist[u] + 1
                        queue.append(v)
            best = max(best, max(d for d in dist if d >= 0))
        return best


def _relevant_subnetwork(net: ServerGraph, foi: str) -> tuple[list[str], list[str]]:
    """Servers and flows reachable by backtracking interference from the foi."""
    servers = set(net.flow(foi).path)
    flows = {foi}
    changed = True
    while changed:
        changed = False
        for f in net.flows:
            if f.id in flows:
                continue
            if any(s in servers for s in f.path):
                flows.add(f.id)
                servers.update(f.path)
                changed = True
    return sorted(servers), sorted(flows)


def transform_graph(net: ServerGraph, foi: str | None = None) -> AnalysisGraph:
    foi = foi if foi is not None else net.foi
    if foi is None:
        raise UsageError("no flow of interest")
    foi_path = net.flow(foi).path
    n = len(foi_path)
    servers, flows = _relevant_subnetwork(net, foi)
    options = prolongation_options(net, foi)

    # order: foi-path servers first (path order), other servers sorted,
    # then foi, other flows sorted, then prolongation nodes by (flow, exit)
    server_order = list(foi_path) + [s for s in servers if s not in foi_path]
    flow_order = [foi] + [f for f in flows if f != foi]

    hops_to_sink = _hops_to(net, foi_path[-1], servers)

    feats: list[list[float]] = []
    kinds: list[str] = []
    labels: list[str] = []
    index: dict[str, int] = {}

    for sid in server_order:
        s = net.server(sid)
        order = hops_to_sink.get(sid, -1)
        feats.append([1, 0, 0, float(s.rate), float(s.latency), float(order), 0] + [0] * 6)
        index[sid] = len(kinds)
        kinds.append("server")
        labels.append(sid)
    for fid in flow_order:
        f = net.flow(fid)
        feats.append([0, 1, 0, float(f.rate), float(f.burst), 0, 1.0 if fid == foi else 0.0] + [0] * 6)
        index[fid] = len(kinds)
        kinds.append("flow")
        labels.append(fid)

    edges: set[tuple[int, int]] = set()

    def add_edge(a: int, b: int) -> None:
        edges.add((min(a, b), max(a, b)))

    server_set = set(server_order)
    for a, b in net.links:
        if a in server_set and b in server_set:
            add_edge(index[a], index[b])
    for fid in flow_order:
        for sid in net.flow(fid).path:
            add_edge(index[fid], index[sid])

    flow_groups: dict[str, tuple[int, ...]] = {}
    group_exits: dict[str, tuple[int, ...]] = {}
    for fid in sorted(options):
        nodes = []
        exits = []
        for exit_pos in options[fid]:
            hop = n - exit_pos  # hops along the foi path to its sink
            feats.append([0, 0, 1, 0, 0, float(hop), 0] + [0] * 6)
            node = len(kinds)
            kinds.append("prolongation")
            labels.append(f"{fid}@{exit_pos}")
            add_edge(node, index[fid])
            add_edge(node, index[foi_path[exit_pos - 1]])
            nodes.append(node)
            exits.append(exit_pos)
        flow_groups[fid] = tuple(nodes)
        group_exits[fid] = tuple(exits)

    features = np.asarray(feats, dtype=np.float64)
    assert features.shape[1] == FEATURE_WIDTH
    return AnalysisGraph(
        features, tuple(sorted(edges)), tuple(kinds), tuple(labels), flow_groups, group_exits
    )


def _hops_to(net: ServerGraph, sink: str, servers: list[str]) -> dict[str, int]:
    # BFS on reversed links, restricted to the relevant servers
    rev: dict[str, list[str]] = {s: [] for s in servers}
    sset = set(servers)
    for a, b in net.links:
        if a in sset and b in sset:
            rev[b].append(a)
    dist = {sink: 0}
    queue = [sink]
    while queue:
        u = queue.pop(0)
        for v in rev[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass
class ModelParams:
    """All weights; GRU biases follow the (3H,H)+(3H,H)+(H)+(H) factorization,
    with both H-sized biases on the candidate gate (input side and hidden side)."""

    w_init: np.ndarray  # (F, H)
    b_init: np.ndarray  # (H,)
    w_msg: np.ndarray   # (H, H)
    w_ih: np.ndarray    # (3H, H)
    w_hh: np.ndarray    # (3H, H)
    b_in: np.ndarray    # (H,)
    b_hn: np.ndarray    # (H,)
    w_e1: np.ndarray    # (2H, H)
    b_e1: np.ndarray    # (H,)
    w_e2: np.ndarray    # (H, 1)
    b_e2: np.ndarray    # (1,)
    w_o1: np.ndarray    # (H, H)
    b_o1: np.ndarray    # (H,)
    w_o2: np.ndarray    # (H, 1)
    b_o2: np.ndarray    # (1,)

    @property
    def feature_width(self) -> int:
        return self.w_init.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_init.shape[1]

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def count(self) -> int:
        return sum(a.size for _, a in self.arrays())

    def zeros_like(self) -> "ModelParams":
        return ModelParams(**{n: np.zeros_like(a) for n, a in self.arrays()})

    def add_scaled(self, other: "ModelParams", scale: float) -> None:
        for name, a in self.arrays():
            a += scale * getattr(other, name)

    def copy(self) -> "ModelParams":
        return ModelParams(**{n: a.copy() for n, a in self.arrays()})


def init_params(feature_width: int = FEATURE_WIDTH, hidden: int = 32, seed: int = 0) -> ModelParams:
    rng = np.random.Generator(np.random.PCG64(seed))
    f, h = feature_width, hidden

    def mat(rows, cols):
        return rng.uniform(-1, 1, size=(rows, cols)) / np.sqrt(rows)

    return ModelParams(
        w_init=mat(f, h), b_init=np.zeros(h),
        w_msg=mat(h, h),
        w_ih=mat(3 * h, h), w_hh=mat(3 * h, h),
        b_in=np.zeros(h), b_hn=np.zeros(h),
        w_e1=mat(2 * h, h), b_e1=np.zeros(h),
        w_e2=mat(h, 1), b_e2=np.zeros(1),
        w_o1=mat(h, h), b_o1=np.zeros(h),
        w_o2=mat(h, 1), b_o2=np.zeros(1),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

@dataclass
class PolicyOutput:
    """Per cross-flow categorical distribution over its prolongation nodes."""

    flows: tuple[str, ...]
    probs: dict[str, np.ndarray]
    exits: dict[str, tuple[int, ...]]

    def greedy_assignment(self) -> Assignment:
        out = {}
        for fid in self.flows:
            out[fid] = self.exits[fid][int(np.argmax(self.probs[fid]))]
        return assignment_of(out)


@dataclass
class _Trace:
    h0: np.ndarray
    per_iter: list[dict]
    h_final: np.ndarray
    o1: np.ndarray
    scores: np.ndarray
    src: np.ndarray
    dst: np.ndarray


def _directed_edges(graph: AnalysisGraph) -> tuple[np.ndarray, np.ndarray]:
    src, dst = [], []
    for a, b in graph.edges:
        src += [a, b]
        dst += [b, a]
    return np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)


def _forward_trace(graph: AnalysisGraph, params: ModelParams, iterations: int | None) -> _Trace:
    d = iterations if iterations is not None else graph.diameter()
    if d < 1:
        raise UsageError("iteration count must be >= 1")
    h = graph.features @ params.w_init + params.b_init
    h0 = h.copy()
    src, dst = _directed_edges(graph)
    hsize = params.hidden
    per_iter: list[dict] = []
    for _ in range(d):
        concat = np.concatenate([h[src], h[dst]], axis=1)          # (E2, 2H)
        pre1 = concat @ params.w_e1 + params.b_e1                  # (E2, H)
        e1 = np.maximum(pre1, 0.0)
        pre2 = e1 @ params.w_e2 + params.b_e2                      # (E2, 1)
        lam = _sigmoid(pre2)                                       # (E2, 1)
        msg = h[src] @ params.w_msg                                # (E2, H)
        x = np.zeros_like(h)
        np.add.at(x, dst, lam * msg)
        a = x @ params.w_ih.T                                      # (N, 3H)
        bmat = h @ params.w_hh.T                                   # (N, 3H)
        az, ar, an = a[:, :hsize], a[:, hsize : 2 * hsize], a[:, 2 * hsize :]
        bz, br, bn = bmat[:, :hsize], bmat[:, hsize : 2 * hsize], bmat[:, 2 * hsize :]
        z = _sigmoid(az + bz)
        r = _sigmoid(ar + br)
        bn_h = bn + params.b_hn
        n_pre = an + params.b_in + r * bn_h
        ncand = np.tanh(n_pre)
        h_new = (1.0 - z) * ncand + z * h
        per_iter.append(
            dict(h_prev=h, concat=concat, pre1=pre1, e1=e1, lam=lam, msg=msg,
                 x=x, z=z, r=r, bn_h=bn_h, ncand=ncand)
        )
        h = h_new
    o1 = np.maximum(h @ params.w_o1 + params.b_o1, 0.0)
    scores = (o1 @ params.w_o2 + params.b_o2)[:, 0]
    return _Trace(h0, per_iter, h, o1, scores, src, dst)


def _policy_from_scores(graph: AnalysisGraph, scores: np.ndarray) -> PolicyOutput:
    probs: dict[str, np.ndarray] = {}
    for fid, nodes in graph.flow_groups.items():
        s = scores[list(nodes)]
        s = s - np.max(s)
        e = np.exp(s)
        probs[fid] = e / np.sum(e)
    return PolicyOutput(tuple(sorted(graph.flow_groups)), probs, dict(graph.group_exits))


def forward(graph: AnalysisGraph, params: ModelParams, iterations: int | None = None) -> PolicyOutput:
    trace = _forward_trace(graph, params, iterations)
    return _policy_from_scores(graph, trace.scores)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def backward(
    graph: AnalysisGraph,
    params: ModelParams,
    actions: Assignment,
    weight: float,
    iterations: int | None = None,
) -> ModelParams:
    """Exact gradient of  weight * sum_flows log pi(action_flow)  w.r.t. params."""
    trace = _forward_trace(graph, params, iterations)
    policy = _policy_from_scores(graph, trace.scores)
    chosen = dict(actions)

    dscores = np.zeros_like(trace.scores)
    for fid, nodes in graph.flow_groups.items():
        exits = graph.group_exits[fid]
        if fid not in chosen:
            raise UsageError(f"no action for flow {fid!r}")
        target = exits.index(chosen[fid])
        p = policy.probs[fid]
        for j, node in enumerate(nodes):
            dscores[node] += weight * ((1.0 if j == target else 0.0) - p[j])

    grads = params.zeros_like()
    hsize = params.hidden

    # readout
    do1 = np.outer(dscores, params.w_o2[:, 0])
    grads.w_o2 += trace.o1.T @ dscores[:, None]
    grads.b_o2 += np.array([np.sum(dscores)])
    dpre_o1 = do1 * (trace.o1 > 0)
    grads.w_o1 += trace.h_final.T @ dpre_o1
    grads.b_o1 += dpre_o1.sum(axis=0)
    dh = dpre_o1 @ params.w_o1.T

    src, dst = trace.src, trace.dst
    for cache in reversed(trace.per_iter):
        h_prev = cache["h_prev"]
        z, r, ncand = cache["z"], cache["r"], cache["ncand"]
        dz = dh * (h_prev - ncand)
        dncand = dh * (1.0 - z)
        dh_prev = dh * z

        dn_pre = dncand * (1.0 - ncand**2)
        da_n = dn_pre
        grads.b_in += dn_pre.sum(axis=0)
        dr = dn_pre * cache["bn_h"]
        dbn = dn_pre * r
        grads.b_hn += dbn.sum(axis=0)

        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)

        da = np.concatenate([dz_pre, dr_pre, da_n], axis=1)   # (N, 3H)
        db = np.concatenate([dz_pre, dr_pre, dbn], axis=1)
        x = cache["x"]
        grads.w_ih += da.T @ x
        grads.w_hh += db.T @ h_prev
        dx = da @ params.w_ih
        dh_prev += db @ params.w_hh

        lam, msg = cache["lam"], cache["msg"]
        dcontrib = dx[dst]                                     # (E2, H)
        dmsg = lam * dcontrib
        dlam = np.sum(dcontrib * msg, axis=1, keepdims=True)

        grads.w_msg += h_prev[src].T @ dmsg
        dh_src = dmsg @ params.w_msg.T

        dpre2 = dlam * lam * (1.0 - lam)
        grads.w_e2 += cache["e1"].T @ dpre2
        grads.b_e2 += dpre2.sum(axis=0)
        de1 = dpre2 @ params.w_e2.T
        dpre1 = de1 * (cache["pre1"] > 0)
        grads.w_e1 += cache["concat"].T @ dpre1
        grads.b_e1 += dpre1.sum(axis=0)
        dconcat = dpre1 @ params.w_e1.T

        np.add.at(dh_prev, src, dh_src + dconcat[:, :hsize])
        np.add.at(dh_prev, dst, dconcat[:, hsize:])
        dh = dh_prev

    grads.w_init += graph.features.T @ dh
    grads.b_init += dh.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

def select_top_k(policy: PolicyOutput, k: int) -> list[Assignment]:
    """k highest joint-probability assignments under per-flow independence.

    Best-first search over per-flow probability-sorted choices; ties resolve
    by node order, so the output is deterministic.
    """
    if k < 1:
        raise UsageError("k must be >= 1")
    flows = list(policy.flows)
    if not flows:
        return [()]
    ordered: list[list[tuple[float, int]]] = []
    for fid in flows:
        p = policy.probs[fid]
        idx = sorted(range(len(p)), key=lambda j: (-p[j], j))
        eps = 1e-300
        ordered.append([(float(np.log(max(p[j], eps))), policy.exits[fid][j]) for j in idx])

    start = tuple(0 for _ in flows)
    best0 = sum(o[0][0] for o in ordered)
    heap = [(-best0, start)]
    seen = {start}
    out: list[Assignment] = []
    while heap and len(out) < k:
        neg, state = heapq.heappop(heap)
        out.append(assignment_of({fid: ordered[i][state[i]][1] for i, fid in enumerate(flows)}))
        for i in range(len(flows)):
            if state[i] + 1 < len(ordered[i]):
                nxt = tuple(s + 1 if j == i else s for j, s in enumerate(state))
                if nxt not in seen:
                    seen.add(nxt)
                    score = -neg - ordered[i][state[i]][0] + ordered[i][nxt[i]][0]
                    heapq.heappush(heap, (-score, nxt))
    return out


# ---------------------------------------------------------------------------
# permutation importance
# ---------------------------------------------------------------------------

def permute_feature(graphs: list[AnalysisGraph], column: int, seed: int) -> list[AnalysisGraph]:
    """Shuffle one feature column across all nodes of all graphs (seeded)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    sizes = [g.n_nodes for g in graphs]
    col = np.concatenate([g.features[:, column] for g in graphs])
    perm = rng.permutation(len(col))
    shuffled = col[perm]
    out = []
    start = 0
    for g, size in zip(graphs, sizes):
        feats = g.features.copy()
        feats[:, column] = shuffled[start : start + size]
        start += size
        out.append(AnalysisGraph(feats, g.edges, g.kinds, g.labels, g.flow_groups, g.group_exits))
    return out


def permutation_importance(instances, params: ModelParams, column: int, gap_fn, seed: int = 0) -> float:
    """Baseline mean gap minus mean gap with the feature column shuffled.

    ``gap_fn(instance, graph)`` must return the relative bound improvement
    obtained when the policy on ``graph`` drives the analysis of
    ``instance``; the instances' graphs are built here so the permutation is
    consistent across the whole evaluation set.
    """
    graphs = [transform_graph(net, foi) for net, foi in instances]
    base = [gap_fn(inst, g) for inst, g in zip(instances, graphs)]
    shuffled = permute_feature(graphs, column, seed)
    perm = [gap_fn(inst, g) for inst, g in zip(instances, shuffled)]
    return float(np.mean(base) - np.mean(perm))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"NCFPGNN1"


def save_checkpoint(path, params: ModelParams, metadata: dict | None = None) -> None:
    """Versioned binary: header (F, H), arrays as little-endian float64 in
    field order, then a JSON metadata blob.  Byte-exact round trip."""
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", 1, params.feature_width, params.hidden))
        for _, a in params.arrays():
            fh.write(a.astype("<f8").tobytes())
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise UsageError("not a checkpoint file")
        version, f, h = struct.unpack("<III", fh.read(12))
        if version != 1:
            raise UsageError(f"unsupported checkpoint version {version}")
        shapes = ModelParams(
            w_init=np.empty((f, h)), b_init=np.empty(h),
            w_msg=np.empty((h, h)),
            w_ih=np.empty((3 * h, h)), w_hh=np.empty((3 * h, h)),
            b_in=np.empty(h), b_hn=np.empty(h),
            w_e1=np.empty((2 * h, h)), b_e1=np.empty(h),
            w_e2=np.empty((h, 1)), b_e2=np.empty(1),
            w_o1=np.empty((h, h)), b_o1=np.empty(h),
            w_o2=np.empty((h, 1)), b_o2=np.empty(1),
        )
        loaded = {}
        for name, a in shapes.arrays():
            buf = fh.read(a.size * 8)
            loaded[name] = np.frombuffer(buf, dtype="<f8").reshape(a.shape).copy()
        (mlen,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(mlen).decode() or "{}")
    return ModelParams(**loaded), meta
