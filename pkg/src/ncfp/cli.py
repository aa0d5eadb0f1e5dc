"""Batch front end: dataset generation, analysis, training, evaluation.

Subcommands
    generate    write a dataset of canonical network files + manifest
    analyze     per-flow delay bounds under a chosen method and budgets
    train       policy-gradient training of the prolongation predictor
    evaluate    aggregate metrics files into tables and figures
    importance  permutation importance of the predictor's input features

Exit codes: 0 ok, 1 usage error, 2 run finished but some analyses failed.
"""

from __future__ import annotations

import argparse
import datetime
import os
import random
import sys
import time
from fractions import Fraction

from . import gnn, prolong, reports, train as training
from .ludb import AnalysisError, Budget, BudgetExceeded, analyze, foi_terms, optimize_delay
from .lp import LinearProgram, format_program
from .minplus import AffineExpr, InstabilityError, UsageError, hdev
from .netmodel import GenerationError, GeneratorConfig, ServerGraph, generate, parse, serialize
from .prolong import (
    enumerate_all,
    evaluate_alternatives,
    hfp_alternatives,
    random_select,
)

METHODS = ("ludb-ff", "fp-exhaustive", "fp-heuristic", "rnd-fp", "rnd-hfp", "deepfp")

FEATURE_NAMES = (
    "kind_server", "kind_flow", "kind_prolongation",
    "rate", "latency_or_burst", "order_or_hop", "foi_flag",
    "pad0", "pad1", "pad2", "pad3", "pad4", "pad5",
)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.run(args)
    except (UsageError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ncfp", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(required=True)

    g = sub.add_parser("generate", help="generate a dataset of random networks")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--topology", default="mixed",
                   choices=("tandem", "tree", "erdos_renyi", "mixed"))
    g.add_argument("--servers", default="5,15")
    g.add_argument("--flows", default="12,40")
    g.add_argument("--path-len", default="3,6")
    g.add_argument("--utilization", default="3/4")
    g.set_defaults(run=cmd_generate)

    a = sub.add_parser("analyze", help="bound every flow of every network")
    a.add_argument("--in", dest="inputs", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--method", required=True, choices=METHODS)
    a.add_argument("--k", type=int, default=1)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--timeout-s", type=float, default=None)
    a.add_argument("--mem-cap-mb", type=float, default=None)
    a.add_argument("--workers", type=int, default=1)
    a.add_argument("--checkpoint", default=None)
    a.add_argument("--theta-grid", type=int, default=0)
    a.add_argument("--foi", default=None, help="restrict to one flow id")
    a.add_argument("--dump-lp", default=None, help="export per-term LPs to this directory")
    a.add_argument("--dump-alts", default=None, help="export alternative pools to this directory")
    a.set_defaults(run=cmd_analyze)

    t = sub.add_parser("train", help="train the prolongation predictor")
    t.add_argument("--in", dest="inputs", required=True)
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--log", default=None)
    t.add_argument("--episodes", type=int, default=2000)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--hidden", type=int, default=16)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(run=cmd_train)

    e = sub.add_parser("evaluate", help="aggregate metrics files into a report")
    e.add_argument("--in", dest="inputs", required=True, nargs="+")
    e.add_argument("--timings", nargs="*", default=[])
    e.add_argument("--out", required=True)
    e.set_defaults(run=cmd_evaluate)

    i = sub.add_parser("importance", help="permutation feature importance")
    i.add_argument("--in", dest="inputs", required=True)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--count", type=int, default=40)
    i.set_defaults(run=cmd_importance)
    return p


def _range(text: str) -> tuple[int, int]:
    lo, hi = text.split(",")
    return int(lo), int(hi)


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    names = []
    for i in range(args.count):
        cfg = GeneratorConfig(
            topology=args.topology,
            servers=_range(args.servers),
            flows=_range(args.flows),
            path_len=_range(args.path_len),
            utilization=Fraction(args.utilization),
            seed=args.seed + i,
        )
        net = generate(cfg)
        name = f"net_{i:04d}.txt"
        with open(os.path.join(args.out, name), "w") as fh:
            fh.write(serialize(net))
        names.append((name, len(net.servers), len(net.flows)))
    with open(os.path.join(args.out, "manifest.tsv"), "w") as fh:
        fh.write(f"# topology={args.topology} seed={args.seed} count={args.count}\n")
        fh.write("file\tservers\tflows\n")
        for name, ns, nf in names:
            fh.write(f"{name}\t{ns}\t{nf}\n")
    print(f"wrote {args.count} networks to {args.out}")
    return 0


def _load_dataset(path) -> list[tuple[str, ServerGraph]]:
    if os.path.isfile(path):
        with open(path) as fh:
            return [(os.path.basename(path), parse(fh.read()))]
    out = []
    for name in sorted(os.listdir(path)):
        if name.endswith(".txt") and name != "manifest.tsv":
            with open(os.path.join(path, name)) as fh:
                out.append((name, parse(fh.read())))
    if not out:
        raise UsageError(f"no network files found under {path}")
    return out


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

_CKPT_CACHE: dict[str, object] = {}


def _params_from(path):
    if path not in _CKPT_CACHE:
        params, _ = gnn.load_checkpoint(path)
        _CKPT_CACHE[path] = params
    return _CKPT_CACHE[path]


def run_method(net: ServerGraph, foi: str, method: str, k: int, seed: int,
               budget: Budget | None, checkpoint=None, grid_points: int = 0):
    """Returns (delay bound, output burst, explored alternatives)."""
    if method == "ludb-ff":
        res = analyze(net, foi, budget=budget, grid_points=grid_points)
        return res.delay_bound, res.output_burst, 1
    if method == "deepfp":
        params = _params_from(checkpoint)
        graph = gnn.transform_graph(net, foi)
        policy = gnn.forward(graph, params)
        alts = gnn.select_top_k(policy, k)
    elif method == "fp-exhaustive":
        alts = enumerate_all(net, foi)
    elif method == "fp-heuristic":
        alts = hfp_alternatives(net, foi)
    elif method == "rnd-fp":
        alts = random_select(enumerate_all(net, foi), k, seed)
    elif method == "rnd-hfp":
        alts = random_select(hfp_alternatives(net, foi), k, seed)
    else:
        raise UsageError(f"unknown method {method}")
    ev = evaluate_alternatives(net, foi, alts, budget=budget, grid_points=grid_points)
    if not ev.ok:
        raise AnalysisError("no alternative could be analyzed")
    best_net = prolong.apply_assignment(net, foi, ev.best_assignment)
    burst = analyze(best_net, foi, grid_points=grid_points).output_burst
    return ev.best_bound, burst, ev.explored


def _analyze_one(item) -> reports.MetricsRecord:
    (name, text, foi, method, k, seed, timeout, memcap, checkpoint, grid) = item
    net = parse(text)
    n_flows = len(net.flows)
    budget = Budget(timeout_s=timeout,
                    mem_cap_bytes=int(memcap * 1e6) if memcap else None)
    start = time.perf_counter()
    try:
        bound, burst, explored = run_method(net, foi, method, k, seed, budget,
                                            checkpoint, grid)
        wall = time.perf_counter() - start
        ok, err = True, ""
    except (AnalysisError, BudgetExceeded, InstabilityError, UsageError) as exc:
        wall = time.perf_counter() - start
        bound = burst = None
        explored = 0
        ok, err = False, exc.__class__.__name__
    gap = lat = bimp = None
    if ok:
        if method == "ludb-ff":
            gap = lat = 0.0
            bimp = 0.0
        else:
            try:
                plain = analyze(net, foi, grid_points=grid)
                gap = float((plain.delay_bound - bound) / plain.delay_bound)
                lat = gap
                bimp = float((plain.output_burst - burst) / plain.output_burst)
            except AnalysisError:
                pass
    return reports.MetricsRecord(
        network=name, foi=foi, method=method, success=ok,
        delay_bound=bound, output_burst=burst,
        gap=gap, lat_improvement=lat, burst_improvement=bimp,
        explored=explored, n_flows=n_flows, wall_time_s=wall, error=err,
    )


def cmd_analyze(args) -> int:
    if args.method == "deepfp" and not args.checkpoint:
        raise UsageError("deepfp needs --checkpoint")
    dataset = _load_dataset(args.inputs)
    tasks = []
    for name, net in dataset:
        fois = [args.foi] if args.foi else [f.id for f in net.flows]
        text = serialize(net)
        for foi in fois:
            if args.foi is None or net.flow(foi):
                tasks.append((name, text, foi, args.method, args.k, args.seed,
                              args.timeout_s, args.mem_cap_mb, args.checkpoint,
                              args.theta_grid))

    if args.workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            records = list(pool.map(_analyze_one, tasks))
    else:
        records = [_analyze_one(t) for t in tasks]

    reports.write_metrics(args.out, records)
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    reports.write_timings(args.out + ".timing", records, stamp)

    if args.dump_lp:
        _dump_lps(dataset, tasks, args)
    if args.dump_alts:
        _dump_alternatives(dataset, args)

    failures = sum(1 for r in records if not r.success)
    print(f"{len(records)} analyses, {failures} failures -> {args.out}")
    return 2 if failures else 0


def _dump_lps(dataset, tasks, args) -> None:
    os.makedirs(args.dump_lp, exist_ok=True)
    for name, net in dataset:
        for f in net.flows:
            for i, term in enumerate(foi_terms(net, f.id)):
                dl = hdev(net.flow(f.id).arrival(), term.curve)
                thetas = term.thetas()
                z = (max(thetas) + 1) if thetas else 0
                cons = list(term.constraints) + [AffineExpr.theta(z) - mt for mt in dl.max_terms]
                lp = LinearProgram(tuple(thetas) + (z,), dl.base + AffineExpr.theta(z), tuple(cons))
                out = os.path.join(args.dump_lp, f"{name}.{f.id}.term{i}.lp")
                with open(out, "w") as fh:
                    fh.write(format_program(lp))


def _dump_alternatives(dataset, args) -> None:
    os.makedirs(args.dump_alts, exist_ok=True)
    for name, net in dataset:
        for f in net.flows:
            pool = enumerate_all(net, f.id)
            out = os.path.join(args.dump_alts, f"{name}.{f.id}.alts")
            with open(out, "w") as fh:
                fh.write(prolong.format_alternatives(pool))


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    dataset = _load_dataset(args.inputs)
    instances = []
    for _, net in dataset:
        for f in net.flows:
            inst = net.with_foi(f.id)
            if training.difficulty(inst, f.id) > 0:
                instances.append((inst, f.id))
    if not instances:
        raise UsageError("dataset has no flows with prolongation options")
    cfg = training.TrainConfig(
        episodes=args.episodes, learning_rate=args.lr, hidden=args.hidden, seed=args.seed
    )
    resume = None
    if os.path.exists(args.checkpoint):
        resume = training.load_state(args.checkpoint)
        print(f"resuming from episode {resume.episode}")
    state = training.train(cfg, instances, log_path=args.log,
                           checkpoint_path=args.checkpoint, resume=resume)
    ok = [r for r in state.records if not r.skipped]
    mean_r = sum(r.reward for r in ok) / len(ok) if ok else float("nan")
    print(f"trained to episode {state.episode}; mean reward {mean_r:.4f} -> {args.checkpoint}")
    return 0


# ---------------------------------------------------------------------------
# evaluate / importance
# ---------------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    records = []
    for path in args.inputs:
        records.extend(reports.read_metrics(path))
    timings = {}
    timing_paths = list(args.timings) or [p + ".timing" for p in args.inputs if os.path.exists(p + ".timing")]
    for path in timing_paths:
        timings.update(reports.read_timings(path))

    os.makedirs(args.out, exist_ok=True)
    summaries, common = reports.summarize(records)
    sizes = reports.success_by_size(records)
    runtime = {}
    for method in sorted({r.method for r in records}):
        vals = sorted(t for (n, f, m), t in timings.items() if m == method)
        if vals:
            runtime[method] = (sum(vals) / len(vals), vals[len(vals) // 2])
    text = reports.format_report(summaries, common, sizes, runtime or None)
    with open(os.path.join(args.out, "report.txt"), "w") as fh:
        fh.write(text)
    with open(os.path.join(args.out, "gap_cdf.tsv"), "w") as fh:
        fh.write("method\tgap\tcdf\n")
        for method in sorted({r.method for r in records}):
            for g, p in reports.gap_cdf(records, method):
                fh.write(f"{method}\t{g!r}\t{p!r}\n")
    figures = reports.render_figures(records, args.out, timings or None)
    print(text)
    print("figures:", ", ".join(figures))
    return 0


def cmd_importance(args) -> int:
    dataset = _load_dataset(args.inputs)
    params = _params_from(args.checkpoint)
    instances = []
    for _, net in dataset:
        for f in net.flows:
            inst = net.with_foi(f.id)
            if training.difficulty(inst, f.id) > 0:
                instances.append((inst, f.id))
            if len(instances) >= args.count:
                break
        if len(instances) >= args.count:
            break

    def gap_fn(instance, graph):
        net, foi = instance
        policy = gnn.forward(graph, params)
        choice = policy.greedy_assignment()
        try:
            fp = analyze(prolong.apply_assignment(net, foi, choice), foi).delay_bound
            plain = analyze(net, foi).delay_bound
            return float((plain - fp) / plain)
        except (AnalysisError, InstabilityError):
            return 0.0

    rows = []
    for col, fname in enumerate(FEATURE_NAMES):
        imp = gnn.permutation_importance(instances, params, col, gap_fn, seed=args.seed)
        rows.append((fname, imp))
    rows.sort(key=lambda r: -abs(r[1]))

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "importance.tsv"), "w") as fh:
        fh.write("feature\timportance\n")
        for fname, imp in rows:
            fh.write(f"{fname}\t{imp!r}\n")
    fig = reports.render_importance(rows, args.out)
    for fname, imp in rows:
        print(f"{fname}\t{imp:+.5f}")
    print("figure:", fig)
    return 0


if __name__ == "__main__":
    sys.exit(main())
