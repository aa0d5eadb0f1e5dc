"""Policy-gradient training of the prolongation predictor.

The policy interacts directly with the exact analysis: per episode it
samples one prolongation assignment for a drawn instance, receives the
relative bound improvement over the plain (unprolonged) analysis as the
reward, and ascends the REINFORCE gradient.  No optimal prolongations are
ever computed for training, so no exhaustive search is in the loop;
exhaustive results appear only in evaluation code.

Exploration is epsilon-greedy: with probability epsilon the whole action is
drawn uniformly over the per-flow choices instead of from the policy.
Instances are ordered by a curriculum: difficulty = foi path length times
the number of prolongable cross-flows, in four ascending quartile phases.

Training is bit-reproducible: a single seeded RNG drives instance draws and
action sampling, its state is stored in checkpoints, and resuming from a
checkpoint replays the identical trajectory.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .gnn import (
    AnalysisGraph,
    ModelParams,
    PolicyOutput,
    backward,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    transform_graph,
)
from .ludb import AnalysisError, analyze
from .minplus import InstabilityError, UsageError
from .netmodel import ServerGraph, tandem_view
from .prolong import Assignment, apply_assignment, assignment_of, prolongation_options

Instance = tuple[ServerGraph, str]
AnalysisHandle = Callable[[ServerGraph, str, Assignment | None], Fraction]


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 2000
    learning_rate: float = 0.05
    hidden: int = 16
    seed: int = 0
    eps_start: float = 0.5
    eps_end: float = 0.05
    # linear decay over the first half of the episodes, then flat
    curriculum_phases: int = 4
    eval_every: int = 0          # 0 = no periodic eval
    use_baseline: bool = False   # optional moving-average reward baseline
    baseline_momentum: float = 0.9
    iterations: int | None = None  # message-passing rounds; None = diameter

    def epsilon(self, episode: int) -> float:
        half = max(1, self.episodes // 2)
        if episode >= half:
            return self.eps_end
        frac_done = episode / half
        return self.eps_start + (self.eps_end - self.eps_start) * frac_done


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    difficulty: int
    reward: float
    bound_fifo: float
    bound_fp: float
    epsilon: float
    skipped: bool = False


def compute_reward(bound_fifo: Fraction, bound_fp: Fraction) -> float:
    """(plain - prolonged) / plain: positive iff the prolongation helped."""
    if bound_fifo <= 0:
        raise UsageError("plain bound must be positive")
    return float((bound_fifo - bound_fp) / bound_fifo)


def sample_action(policy: PolicyOutput, eps: float, rng: random.Random) -> Assignment:
    """With probability eps draw every flow uniformly, else from the policy."""
    if not 0 <= eps <= 1:
        raise UsageError("epsilon must be in [0, 1]")
    uniform = rng.random() < eps
    out = {}
    for fid in policy.flows:
        exits = policy.exits[fid]
        if uniform:
            out[fid] = exits[rng.randrange(len(exits))]
        else:
            probs = policy.probs[fid]
            u = rng.random()
            acc = 0.0
            pick = exits[-1]
            for p, e in zip(probs, exits):
                acc += float(p)
                if u < acc:
                    pick = e
                    break
            out[fid] = pick
    return assignment_of(out)


def reinforce_step(
    params: ModelParams,
    graph: AnalysisGraph,
    actions: Assignment,
    reward: float,
    lr: float,
    iterations: int | None = None,
) -> ModelParams:
    """Ascend lr * grad(log pi(actions)) * reward; a no-op when lr*reward == 0."""
    if lr * reward == 0.0:
        return params
    grads = backward(graph, params, actions, reward, iterations)
    if not all(np.all(np.isfinite(a)) for _, a in grads.arrays()):
        return params  # skip non-finite steps, keep training alive
    params.add_scaled(grads, lr)
    return params


def difficulty(net: ServerGraph, foi: str) -> int:
    options = prolongation_options(net, foi)
    prolongable = sum(1 for opts in options.values() if len(opts) > 1)
    return len(net.flow(foi).path) * prolongable


def curriculum_phases(instances: Sequence[Instance], phases: int) -> list[list[int]]:
    """Indices grouped into ascending-difficulty quartile phases (stable sort)."""
    order = sorted(range(len(instances)), key=lambda i: difficulty(*instances[i]))
    out = []
    n = len(order)
    for p in range(phases):
        lo = n * p // phases
        hi = n * (p + 1) // phases
        out.append(order[lo:hi] or order[-1:])
    return out


def default_analyzer(cap: int = 64) -> AnalysisHandle:
    def run(net: ServerGraph, foi: str, assignment: Assignment | None) -> Fraction:
        target = net if assignment is None else apply_assignment(net, foi, assignment)
        return analyze(target, foi, cap=cap).delay_bound

    return run


@dataclass
class TrainState:
    params: ModelParams
    episode: int = 0
    baseline: float = 0.0
    rng_state: object = None
    records: list[EpisodeRecord] = field(default_factory=list)


def train(
    cfg: TrainConfig,
    instances: Sequence[Instance],
    analyzer: AnalysisHandle | None = None,
    log_path=None,
    checkpoint_path=None,
    resume: TrainState | None = None,
    stop_after: int | None = None,
) -> TrainState:
    """Run the episode loop; returns final parameters plus resumable state.

    ``stop_after`` interrupts the run early (the schedules still follow
    ``cfg.episodes``); resuming from the checkpoint with the same config
    reproduces the uninterrupted run bit for bit.
    """
    analyzer = analyzer or default_analyzer()
    if resume is not None:
        state = resume
        rng = random.Random()
        rng.setstate(_rng_state_from(state.rng_state))
    else:
        state = TrainState(params=init_params(hidden=cfg.hidden, seed=cfg.seed))
        rng = random.Random(cfg.seed + 1)

    phases = curriculum_phases(instances, cfg.curriculum_phases)
    records: list[EpisodeRecord] = []
    last = cfg.episodes if stop_after is None else min(cfg.episodes, stop_after)
    log_fh = open(log_path, "a") if log_path is not None else None
    if log_fh is not None and state.episode == 0:
        log_fh.write("episode\tdifficulty\treward\tbound_fifo\tbound_fp\tepsilon\tskipped\n")

    try:
        for e in range(state.episode, last):
            phase = min(len(phases) - 1, e * cfg.curriculum_phases // max(1, cfg.episodes))
            idx = phases[phase][rng.randrange(len(phases[phase]))]
            net, foi = instances[idx]
            eps = cfg.epsilon(e)
            diff = difficulty(net, foi)
            try:
                graph = transform_graph(net, foi)
                policy = forward(graph, state.params, cfg.iterations)
                action = sample_action(policy, eps, rng)
                bound_fifo = analyzer(net, foi, None)
                bound_fp = analyzer(net, foi, action)
                reward = compute_reward(bound_fifo, bound_fp)
            except (AnalysisError, InstabilityError) as _:
                records.append(EpisodeRecord(e, diff, 0.0, 0.0, 0.0, eps, skipped=True))
                if log_fh is not None:
                    log_fh.write(f"{e}\t{diff}\t0\t0\t0\t{eps!r}\tskipped\n")
                continue
            advantage = reward - state.baseline if cfg.use_baseline else reward
            reinforce_step(state.params, graph, action, advantage, cfg.learning_rate, cfg.iterations)
            if cfg.use_baseline:
                m = cfg.baseline_momentum
                state.baseline = m * state.baseline + (1 - m) * reward
            records.append(
                EpisodeRecord(e, diff, reward, float(bound_fifo), float(bound_fp), eps)
            )
            if log_fh is not None:
                log_fh.write(
                    f"{e}\t{diff}\t{reward!r}\t{float(bound_fifo)!r}\t{float(bound_fp)!r}\t{eps!r}\tok\n"
                )
            state.episode = e + 1
            if checkpoint_path is not None and cfg.eval_every and (e + 1) % cfg.eval_every == 0:
                save_state(checkpoint_path, state, rng)
    finally:
        if log_fh is not None:
            log_fh.close()

    state.episode = last
    state.rng_state = _rng_state_to(rng.getstate())
    state.records = records
    if checkpoint_path is not None:
        save_state(checkpoint_path, state, rng)
    return state


def save_state(path, state: TrainState, rng: random.Random) -> None:
    meta = {
        "episode": state.episode,
        "baseline": state.baseline,
        "rng_state": _rng_state_to(rng.getstate()),
    }
    save_checkpoint(path, state.params, meta)


def load_state(path) -> TrainState:
    params, meta = load_checkpoint(path)
    return TrainState(
        params=params,
        episode=int(meta.get("episode", 0)),
        baseline=float(meta.get("baseline", 0.0)),
        rng_state=meta.get("rng_state"),
    )


def _rng_state_to(s):
    version, internal, gauss = s
    return [version, list(internal), gauss]


def _rng_state_from(s):
    version, internal, gauss = s
    return (version, tuple(internal), gauss)
