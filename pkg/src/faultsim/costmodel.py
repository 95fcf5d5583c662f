"""Analytic FLOP/memory accounting and a throughput timeline simulation.

Only the seven per-block linear-layer matmuls are counted (attention
score/context products and the unembedding are excluded); each of Fprop,
Wgrad, Dgrad and Rcomp on an (out, in) matrix over b tokens costs
2 * b * out * in flops, and the projected weight-gradient costs
2*b*r*in + 2*b*r*out + 2*r*out*in.

The timeline model is bottleneck-stage dominated: an iteration takes the
slowest node's assigned flops divided by a single configurable node
throughput, plus a constant charge per weight/optimizer fetch event. A
doubled node executes its two stages serially.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from . import cluster as cl
from .errors import ConfigError, ContractViolation
from .model import ModelConfig

FPROP = "fprop"
WGRAD = "wgrad"
DGRAD = "dgrad"
RCOMP = "rcomp"
APPROX_WGRAD = "approx_wgrad"

MODE_STANDARD = "standard"
MODE_NEIGHBOR_APPROX = "neighbor_approx"
MODE_NEIGHBOR_NAIVE = "neighbor_naive"

POLICY_APPROX = "approx"
POLICY_NAIVE = "naive"
POLICY_CHECKPOINT = "checkpoint"

# Iteration count charged per truncated-SVD refresh (mirrors the default
# behavior of the implementation at desk scale).
SVD_CHARGED_ITERATIONS = 30


def linear_flops(b: int, m: int, n: int, op: str, r: int | None = None) -> int:
    """Flops of one linear-layer operation on W (m x n) over b tokens."""
    if b < 1 or m < 1 or n < 1:
        raise ContractViolation("dimensions must be positive")
    if op in (FPROP, WGRAD, DGRAD, RCOMP):
        return 2 * b * m * n
    if op == APPROX_WGRAD:
        if r is None or r < 1:
            raise ContractViolation("approx_wgrad needs a positive rank")
        return 2 * b * r * n + 2 * b * r * m + 2 * r * m * n
    raise ContractViolation(f"unknown op {op!r}")


def svd_flops(m: int, n: int, r: int, iterations: int = SVD_CHARGED_ITERATIONS) -> int:
    """Charge for one projection refresh on W (m x n): forming W^T W plus
    the per-iteration block products."""
    k = min(n, r + 4)
    return 2 * m * n * n + iterations * (2 * n * n * k + 2 * n * k * k)


def block_matrix_dims(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
    m, f = cfg.hidden, cfg.ffn_intermediate
    return {
        "q": (m, m),
        "k": (m, m),
        "v": (m, m),
        "o": (m, m),
        "gate": (f, m),
        "up": (f, m),
        "down": (m, f),
    }


@dataclass
class BlockCost:
    """Per-block flops split by operation class, plus activation bytes."""

    flops: dict[str, int]
    activation_bytes: int

    @property
    def total_flops(self) -> int:
        return sum(self.flops.values())


def full_cache_floats(cfg: ModelConfig, tokens: int) -> int:
    """Floats stored per block by a full cache (mirrors the implementation:
    x, h1, rotated q/k, v, probs, ctx, x1, h2, gate, up, act plus the two
    per-row inverse-rms vectors)."""
    m, f = cfg.hidden, cfg.ffn_intermediate
    seq = cfg.seq_len
    per_row_mats = 8 * m + 3 * f  # x, h1, q, k, v, ctx, x1, h2 + gate, up, act
    probs = cfg.heads * seq  # (B, H, T, T) has heads*seq floats per token row
    return tokens * (per_row_mats + probs + 2)


def block_cost(
    cfg: ModelConfig,
    mode: str,
    r: int,
    tau: int,
    tokens: int,
    svd_iterations: int = SVD_CHARGED_ITERATIONS,
) -> BlockCost:
    """Cost of one transformer block for one iteration at `tokens` rows."""
    if tau < 1:
        raise ContractViolation("tau must be >= 1")
    dims = block_matrix_dims(cfg)
    flops = {FPROP: 0, WGRAD: 0, DGRAD: 0, RCOMP: 0, APPROX_WGRAD: 0, "svd": 0}

    for kind, (m, n) in dims.items():
        flops[FPROP] += linear_flops(tokens, m, n, FPROP)
    if mode == MODE_STANDARD or mode == MODE_NEIGHBOR_NAIVE:
        for kind, (m, n) in dims.items():
            flops[WGRAD] += linear_flops(tokens, m, n, WGRAD)
            flops[DGRAD] += linear_flops(tokens, m, n, DGRAD)
        bytes_ = 8 * full_cache_floats(cfg, tokens)
        return BlockCost(flops=flops, activation_bytes=bytes_)
    if mode != MODE_NEIGHBOR_APPROX:
        raise ContractViolation(f"unknown mode {mode!r}")

    # Attention backward is skipped entirely; feedforward pays recomputation,
    # exact activation gradients, the projected weight gradient, and the
    # tau-amortized projection refresh.
    for kind in ("gate", "up", "down"):
        m, n = dims[kind]
        r_eff = min(r, n)
        flops[RCOMP] += linear_flops(tokens, m, n, RCOMP)
        flops[DGRAD] += linear_flops(tokens, m, n, DGRAD)
        flops[APPROX_WGRAD] += linear_flops(tokens, m, n, APPROX_WGRAD, r=r_eff)
        flops["svd"] += svd_flops(m, n, r_eff, svd_iterations) // tau
    bytes_ = 8 * 2 * tokens * cfg.hidden  # exactly x and x1
    return BlockCost(flops=flops, activation_bytes=bytes_)


def stage_flops(cfg: ModelConfig, cluster_cfg: cl.ClusterConfig, stage: int, mode: str, r: int, tau: int, tokens: int) -> int:
    n_layers = len(cluster_cfg.layers_of_stage(stage))
    return n_layers * block_cost(cfg, mode, r, tau, tokens).total_flops


@dataclass
class TimelineRow:
    iteration: int
    sim_time_s: float
    bottleneck_stage: int
    flops_total: int
    activation_bytes_max: int
    tokens_per_s: float
    degradation_pct: float


@dataclass
class Timeline:
    rows: list[TimelineRow]
    tokens_per_s: float
    baseline_tokens_per_s: float
    degradation_pct: float
    events: list[dict]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            [
                "iteration",
                "sim_time_s",
                "bottleneck_stage",
                "flops_total",
                "activation_bytes_max",
                "tokens_per_s",
                "degradation_pct",
            ]
        )
        for row in self.rows:
            writer.writerow(
                [
                    row.iteration,
                    repr(row.sim_time_s),
                    row.bottleneck_stage,
                    row.flops_total,
                    row.activation_bytes_max,
                    repr(row.tokens_per_s),
                    repr(row.degradation_pct),
                ]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "tokens_per_s": self.tokens_per_s,
                "baseline_tokens_per_s": self.baseline_tokens_per_s,
                "degradation_pct": self.degradation_pct,
                "iterations": len(self.rows),
            },
            indent=2,
        )


def iteration_cost(
    state: cl.ClusterState,
    model_cfg: ModelConfig,
    policy: str,
    r: int,
    tau: int,
    tokens_per_rank: int,
):
    """Max-over-nodes flops this iteration plus per-node peaks."""
    cfg = state.cfg
    worst_flops = 0
    worst_stage = 0
    max_bytes = 0
    total_flops = 0
    doubled_mode = MODE_NEIGHBOR_APPROX if policy == POLICY_APPROX else MODE_NEIGHBOR_NAIVE
    for node in sorted(state.nodes()):
        stages = state.executing_stages(node)
        if not stages:
            continue
        mode = MODE_STANDARD if state.status[node] == cl.HEALTHY else doubled_mode
        per_block = block_cost(model_cfg, mode, r, tau, tokens_per_rank)
        node_flops = 0
        node_bytes = 0
        for s in stages:
            n_layers = len(cfg.layers_of_stage(s))
            node_flops += n_layers * per_block.total_flops
            node_bytes += n_layers * per_block.activation_bytes
        total_flops += node_flops
        if node_flops > worst_flops:
            worst_flops = node_flops
            worst_stage = stages[0]
        max_bytes = max(max_bytes, node_bytes)
    return worst_flops, worst_stage, total_flops, max_bytes


def simulate_throughput(
    cluster_cfg: cl.ClusterConfig,
    scenario: cl.FailureScenario,
    model_cfg: ModelConfig,
    policy: str = POLICY_APPROX,
    r: int = 4,
    tau: int = 100,
    tokens_per_rank: int = 256,
    node_flops_per_s: float = 1e12,
    fetch_cost_s: float = 1.0,
    total_iterations: int = 1000,
) -> Timeline:
    """Replay a failure scenario and integrate the iteration timeline.

    The checkpoint policy models stall-and-restart without failover: every
    failure halts the whole cluster for the scenario's recovery delay. Its
    failures arrive per unit of productive time (a stalled machine draws no
    new failures), so the stall accounting stays well defined even when the
    recovery delay exceeds the failure interval.
    """
    if policy not in (POLICY_APPROX, POLICY_NAIVE, POLICY_CHECKPOINT):
        raise ConfigError(f"unknown policy {policy!r}")
    tokens_per_iter = tokens_per_rank * cluster_cfg.dp

    base_flops = max(
        stage_flops(model_cfg, cluster_cfg, s, MODE_STANDARD, r, tau, tokens_per_rank)
        for s in range(cluster_cfg.pp)
    )
    base_duration = base_flops / node_flops_per_s
    baseline_rate = tokens_per_iter / base_duration

    rows: list[TimelineRow] = []
    all_events: list[dict] = []
    sim_time = 0.0

    if policy == POLICY_CHECKPOINT:
        rng = np.random.Generator(np.random.PCG64(scenario.seed))
        n_nodes = cluster_cfg.dp * cluster_cfg.pp
        productive = 0.0
        next_failure = scenario.failure_interval_s
        for it in range(total_iterations):
            productive += base_duration
            if scenario.kind == cl.SCENARIO_SCHEDULED:
                arrivals = 0
                while productive >= next_failure:
                    arrivals += 1
                    next_failure += scenario.failure_interval_s
                stall = arrivals * scenario.recovery_time_s
            elif scenario.kind == cl.SCENARIO_PER_ITERATION:
                arrivals = int(rng.binomial(n_nodes, scenario.probability))
                stall = arrivals * scenario.recovery_iterations * base_duration
            else:
                arrivals, stall = 0, 0.0
            duration = base_duration + stall
            sim_time += duration
            if arrivals:
                all_events.append(
                    {
                        "time": sim_time,
                        "iteration": it,
                        "kind": "stall",
                        "node": [0, 0],
                        "details": {"failures": int(arrivals), "stall_s": stall},
                    }
                )
            rate = tokens_per_iter / duration
            rows.append(
                TimelineRow(
                    iteration=it,
                    sim_time_s=sim_time,
                    bottleneck_stage=0,
                    flops_total=base_flops,
                    activation_bytes_max=0,
                    tokens_per_s=rate,
                    degradation_pct=100.0 * (1.0 - rate / baseline_rate),
                )
            )
        overall_rate = tokens_per_iter * total_iterations / sim_time
        return Timeline(
            rows=rows,
            tokens_per_s=overall_rate,
            baseline_tokens_per_s=baseline_rate,
            degradation_pct=100.0 * (1.0 - overall_rate / baseline_rate),
            events=all_events,
        )

    state = cl.ClusterState(cluster_cfg, scenario)
    for it in range(total_iterations):
        events = cl.step_cluster(state, sim_time, it)
        all_events.extend(events)
        worst_flops, worst_stage, flops_total, max_bytes = iteration_cost(
            state, model_cfg, policy, r, tau, tokens_per_rank
        )
        fetches = sum(1 for ev in events if ev["kind"] in ("adopt", "recover"))
        duration = worst_flops / node_flops_per_s + fetches * fetch_cost_s
        sim_time += duration
        rate = tokens_per_iter / duration
        rows.append(
            TimelineRow(
                iteration=it,
                sim_time_s=sim_time,
                bottleneck_stage=worst_stage,
                flops_total=flops_total,
                activation_bytes_max=max_bytes,
                tokens_per_s=rate,
                degradation_pct=100.0 * (1.0 - rate / baseline_rate),
            )
        )

    overall_rate = tokens_per_iter * total_iterations / sim_time
    return Timeline(
        rows=rows,
        tokens_per_s=overall_rate,
        baseline_tokens_per_s=baseline_rate,
        degradation_pct=100.0 * (1.0 - overall_rate / baseline_rate),
        events=all_events,
    )
