"""DP x PP cluster model: health, failover, recovery, gradient averaging.

Nodes are (dp_rank, stage) pairs. When a node fails, the next healthy node in
ring order of stages within the same DP rank takes over its stage and runs
both workloads until the original node recovers. Failed stages are processed
in descending stage order, cascading past failed or already-doubled nodes.

Failures arrive either on a simulated-time schedule (one uniformly chosen
healthy node per interval crossing, recovering after a fixed delay) or as an
independent per-node coin flip each iteration (recovering after a fixed
iteration count). Only healthy nodes fail; every draw comes from one seeded
stream so a (scenario, seed) pair replays an identical event log.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConfigError, ConsistencyError, ContractViolation, UnrecoverableRankError

HEALTHY = "healthy"
FAILED = "failed"
DOUBLED = "doubled"

SCENARIO_NONE = "none"
SCENARIO_PER_ITERATION = "per_iteration"
SCENARIO_SCHEDULED = "scheduled"

MHA_GRAD_KINDS = ("q", "k", "v", "o", "norm_mha")
FFN_GRAD_KINDS = ("gate", "up", "down", "norm_ffn")
GLOBAL_GRAD_NAMES = ("embedding", "final_norm", "unembedding")


@dataclass(frozen=True)
class ClusterConfig:
    dp: int
    pp: int
    layers: int
    stage_boundaries: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.dp < 1 or self.pp < 1:
            raise ConfigError("dp and pp must be >= 1")
        if self.layers < self.pp:
            raise ConfigError("need at least one layer per stage")
        if self.stage_boundaries is not None and len(self.stage_boundaries) != self.pp + 1:
            raise ConfigError("stage_boundaries must have pp+1 entries")

    def stage_of_layer(self, layer: int) -> int:
        bounds = self.boundaries()
        for s in range(self.pp):
            if bounds[s] <= layer < bounds[s + 1]:
                return s
        raise ContractViolation(f"layer {layer} outside 0..{self.layers - 1}")

    def boundaries(self) -> tuple[int, ...]:
        if self.stage_boundaries is not None:
            return self.stage_boundaries
        return tuple(round(s * self.layers / self.pp) for s in range(self.pp + 1))

    def layers_of_stage(self, stage: int) -> range:
        bounds = self.boundaries()
        return range(bounds[stage], bounds[stage + 1])


@dataclass(frozen=True)
class FailureScenario:
    kind: str = SCENARIO_NONE
    probability: float = 0.0
    recovery_iterations: int = 1
    failure_interval_s: float = 1800.0
    recovery_time_s: float = 7200.0
    victims: tuple[tuple[int, int], ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (SCENARIO_NONE, SCENARIO_PER_ITERATION, SCENARIO_SCHEDULED):
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError("probability must be in [0, 1]")
        if self.kind == SCENARIO_SCHEDULED and (
            self.failure_interval_s <= 0 or self.recovery_time_s <= 0
        ):
            raise ConfigError("scheduled intervals must be > 0")
        if self.recovery_iterations < 1:
            raise ConfigError("recovery_iterations must be >= 1")


class ClusterState:
    """Mutable health/assignment state, driven single-threaded."""

    def __init__(self, cfg: ClusterConfig, scenario: FailureScenario):
        self.cfg = cfg
        self.scenario = scenario
        self.rng = np.random.Generator(np.random.PCG64(scenario.seed))
        self.status = {(i, s): HEALTHY for i in range(cfg.dp) for s in range(cfg.pp)}
        self.executor = {(i, s): (i, s) for i in range(cfg.dp) for s in range(cfg.pp)}
        # Recovery deadlines: iteration index (per_iteration) or sim time (scheduled).
        self.down_until: dict[tuple[int, int], float] = {}
        self.next_failure_time = scenario.failure_interval_s

    def nodes(self) -> Iterable[tuple[int, int]]:
        return self.status.keys()

    def healthy_nodes(self) -> list[tuple[int, int]]:
        return [n for n in sorted(self.status) if self.status[n] == HEALTHY]

    def executing_stages(self, node: tuple[int, int]) -> list[int]:
        i = node[0]
        return [s for s in range(self.cfg.pp) if self.executor[(i, s)] == node]

    def affected_ranks(self) -> list[int]:
        """Ranks with at least one stage not executed by a healthy node."""
        out = []
        for i in range(self.cfg.dp):
            for s in range(self.cfg.pp):
                if self.status[self.executor[(i, s)]] != HEALTHY:
                    out.append(i)
                    break
        return out


def _event(time: float, iteration: int, kind: str, node: tuple[int, int], **details) -> dict:
    return {
        "time": float(time),
        "iteration": int(iteration),
        "kind": kind,
        "node": list(node),
        "details": details,
    }


def inject_failures(state: ClusterState, scenario: FailureScenario, sim_time: float, iteration: int) -> list[dict]:
    """Fail nodes according to the scenario; returns the failure events."""
    events: list[dict] = []
    if scenario.kind == SCENARIO_NONE:
        return events
    if scenario.kind == SCENARIO_PER_ITERATION:
        if scenario.probability == 0.0:
            return events
        for node in sorted(state.status):
            if state.status[node] != HEALTHY:
                continue
            if scenario.victims is not None and tuple(node) not in {tuple(v) for v in scenario.victims}:
                continue
            if state.rng.random() < scenario.probability:
                state.status[node] = FAILED
                state.down_until[node] = iteration + scenario.recovery_iterations
                events.append(_event(sim_time, iteration, "fail", node))
        return events
    # Scheduled: one uniformly chosen healthy node per interval crossing.
    while sim_time >= state.next_failure_time:
        boundary = state.next_failure_time
        state.next_failure_time += scenario.failure_interval_s
        candidates = state.healthy_nodes()
        if scenario.victims is not None:
            allowed = {tuple(v) for v in scenario.victims}
            candidates = [n for n in candidates if n in allowed]
        if not candidates:
            continue
        node = candidates[int(state.rng.integers(len(candidates)))]
        state.status[node] = FAILED
        state.down_until[node] = boundary + scenario.recovery_time_s
        events.append(_event(boundary, iteration, "fail", node))
    return events


def due_recoveries(state: ClusterState, sim_time: float, iteration: int) -> list[tuple[int, int]]:
    clock = iteration if state.scenario.kind == SCENARIO_PER_ITERATION else sim_time
    return sorted(n for n, until in state.down_until.items() if clock >= until)


def recover_node(state: ClusterState, node: tuple[int, int], sim_time: float, iteration: int) -> list[dict]:
    """Bring a failed node back; its stage returns to it (with a fetch)."""
    if state.status[node] != FAILED:
        raise ContractViolation(f"node {node} is not failed")
    old_executor = state.executor[node]
    state.status[node] = HEALTHY
    state.down_until.pop(node, None)
    state.executor[node] = node
    if old_executor != node and state.status[old_executor] == DOUBLED:
        if len(state.executing_stages(old_executor)) == 1:
            state.status[old_executor] = HEALTHY
    return [_event(sim_time, iteration, "recover", node, fetched_from=list(old_executor))]


def reassign_takeover(state: ClusterState, sim_time: float = 0.0, iteration: int = 0) -> list[dict]:
    """Recompute the stage assignment from the current health state.

    Each failed stage goes to the next eligible node in ring order within its
    DP rank (descending stage processing, skipping failed and already-doubled
    nodes). Emits an adoption event with a cross-rank fetch whenever a stage
    changes hands to a non-owner; the caller resets the matching projection
    caches and local steps.
    """
    cfg = state.cfg
    events: list[dict] = []
    for i in range(cfg.dp):
        failed = [s for s in range(cfg.pp) if state.status[(i, s)] == FAILED]
        adopting: dict[int, int] = {}
        for s in range(cfg.pp):
            if s not in failed:
                state.executor[(i, s)] = (i, s)
        for s in sorted(failed, reverse=True):
            target = None
            for step in range(1, cfg.pp):
                cand = (s + step) % cfg.pp
                if cand in failed or cand in adopting:
                    continue
                target = cand
                break
            if target is None:
                raise UnrecoverableRankError(
                    f"DP rank {i}: no eligible adopter for stage {s} "
                    f"(failed stages {sorted(failed)})"
                )
            adopting[target] = s
            new_exec = (i, target)
            if state.executor[(i, s)] != new_exec:
                state.executor[(i, s)] = new_exec
                events.append(
                    _event(
                        sim_time,
                        iteration,
                        "adopt",
                        new_exec,
                        stage=s,
                        layers=list(cfg.layers_of_stage(s)),
                        fetched_from_rank=(i + 1) % cfg.dp if cfg.dp > 1 else i,
                    )
                )
        for s in range(cfg.pp):
            if state.status[(i, s)] == FAILED:
                continue
            state.status[(i, s)] = DOUBLED if s in adopting else HEALTHY
    return events


def step_cluster(state: ClusterState, sim_time: float, iteration: int) -> list[dict]:
    """One iteration-boundary update: recoveries, new failures, reassignment."""
    events: list[dict] = []
    for node in due_recoveries(state, sim_time, iteration):
        events.extend(recover_node(state, node, sim_time, iteration))
    events.extend(inject_failures(state, state.scenario, sim_time, iteration))
    events.extend(reassign_takeover(state, sim_time, iteration))
    validate_state(state)
    return events


def validate_state(state: ClusterState) -> None:
    """Assert the partition and status-coupling invariants."""
    cfg = state.cfg
    for i in range(cfg.dp):
        for s in range(cfg.pp):
            ex = state.executor[(i, s)]
            if ex[0] != i:
                raise ConsistencyError(f"stage ({i},{s}) executed by foreign rank {ex}")
            if state.status[ex] == FAILED:
                raise ConsistencyError(f"stage ({i},{s}) assigned to failed node {ex}")
    for node in state.nodes():
        n_stages = len(state.executing_stages(node))
        status = state.status[node]
        if status == FAILED and n_stages != 0:
            raise ConsistencyError(f"failed node {node} still executes {n_stages} stages")
        if status == HEALTHY and n_stages != 1:
            raise ConsistencyError(f"healthy node {node} executes {n_stages} stages")
        if status == DOUBLED and n_stages != 2:
            raise ConsistencyError(f"doubled node {node} executes {n_stages} stages")


def active_set(state: ClusterState, layer: int, kind: str) -> list[int]:
    """DP ranks whose gradient for (layer, kind) enters the average.

    Attention-side kinds require the executing node to be healthy; feedforward
    kinds are contributed by every rank (approximated on doubled nodes).
    """
    if kind in MHA_GRAD_KINDS:
        stage = state.cfg.stage_of_layer(layer)
        return [
            i
            for i in range(state.cfg.dp)
            if state.status[state.executor[(i, stage)]] == HEALTHY
        ]
    if kind in FFN_GRAD_KINDS:
        return list(range(state.cfg.dp))
    raise ContractViolation(f"unknown per-layer gradient kind {kind!r}")


def aggregate_gradients(per_rank: list[dict], active: dict[tuple[int, str], list[int]], layers: int):
    """Average per-rank gradient dicts.

    `active` maps (layer, kind) to the contributing ranks; summation runs in
    ascending rank order. Global parameters average over all ranks. Returns
    (averaged dict, names whose active set was empty and must skip the update).
    """
    n = len(per_rank)
    averaged: dict[str, np.ndarray] = {}
    skipped: list[str] = []

    def mean_over(name: str, ranks: list[int]) -> np.ndarray:
        total = None
        for i in ranks:
            if name not in per_rank[i]:
                raise ConsistencyError(f"rank {i} is missing gradient {name!r}")
            g = per_rank[i][name]
            total = g.copy() if total is None else total + g
        return total / len(ranks)

    for name in GLOBAL_GRAD_NAMES:
        averaged[name] = mean_over(name, list(range(n)))
    for layer in range(layers):
        for kind in MHA_GRAD_KINDS + FFN_GRAD_KINDS:
            name = f"layers.{layer}.{kind}"
            ranks = active[(layer, kind)]
            if not ranks:
                skipped.append(name)
                continue
            averaged[name] = mean_over(name, ranks)
    return averaged, skipped
