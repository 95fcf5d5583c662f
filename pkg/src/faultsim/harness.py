"""End-to-end training driver, relative-error probes, and gradient checks.

The driver runs the fault-tolerant loop: update cluster health at each
iteration boundary, run per-rank forward/backward with per-layer cache modes
chosen by the executing node's role, average gradients over the per-matrix
active sets, and step the optimizer. A plain data-parallel loop over the same
primitives serves as the fault-free reference; with no failures the two are
bit-identical.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

from . import approx, cluster as cl, costmodel as cm, data as dt, model as mdl, optim as op
from .errors import ConfigError, NumericalFailure
from .linalg import SvdConfig

METRICS_HEADER = "iteration,loss,perplexity,rho1,rho2,lr,sim_time_s,affected_ranks"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class RunSettings:
    iterations: int = 200
    global_batch: int = 8
    seed: int = 0
    r: int = 4
    tau: int = 100
    probe_interval: int = 0
    probe_only_under_faults: bool = True
    full_batch_interval: int = 50
    full_batch_windows: int = 8
    flush_interval: int = 50
    base_lr: float | None = None  # defaults to optimizer lr


@dataclass
class CostSettings:
    node_flops_per_s: float = 1e12
    fetch_cost_s: float = 1.0


@dataclass
class DataSettings:
    source: str = dt.SOURCE_CORPUS
    path: str | None = None


@dataclass
class RunConfig:
    model: mdl.ModelConfig = field(default_factory=mdl.ModelConfig)
    cluster: cl.ClusterConfig = field(default_factory=lambda: cl.ClusterConfig(dp=4, pp=2, layers=4))
    scenario: cl.FailureScenario = field(default_factory=cl.FailureScenario)
    optimizer: op.OptimConfig = field(default_factory=op.OptimConfig)
    run: RunSettings = field(default_factory=RunSettings)
    cost: CostSettings = field(default_factory=CostSettings)
    data: DataSettings = field(default_factory=DataSettings)

    def __post_init__(self):
        if self.cluster.layers != self.model.layers:
            raise ConfigError("cluster layer count must match the model")
        if self.run.global_batch % self.cluster.dp != 0:
            raise ConfigError("global batch must divide evenly across DP ranks")
        if self.data.path is not None and not os.path.exists(self.data.path):
            raise ConfigError(f"dataset path does not exist: {self.data.path}")

    @property
    def per_rank_batch(self) -> int:
        return self.run.global_batch // self.cluster.dp

    @property
    def tokens_per_rank(self) -> int:
        return self.per_rank_batch * self.model.seq_len


def _build_section(cls, raw: dict, section: str):
    allowed = {f.name for f in dc_fields(cls)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {sorted(unknown)}")
    if section == "scenario" and "victims" in raw and raw["victims"] is not None:
        raw = dict(raw)
        raw["victims"] = tuple(tuple(v) for v in raw["victims"])
    if section == "cluster" and raw.get("stage_boundaries") is not None:
        raw = dict(raw)
        raw["stage_boundaries"] = tuple(raw["stage_boundaries"])
    return cls(**raw)


_SECTIONS = {
    "model": mdl.ModelConfig,
    "cluster": cl.ClusterConfig,
    "scenario": cl.FailureScenario,
    "optimizer": op.OptimConfig,
    "run": RunSettings,
    "cost": CostSettings,
    "data": DataSettings,
}


def config_from_dict(raw: dict) -> RunConfig:
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    kwargs = {}
    scenario_raw = raw.get("scenario", {})
    for section, cls in _SECTIONS.items():
        if section not in raw:
            continue  # dataclass defaults apply
        sec = raw[section]
        if not isinstance(sec, dict):
            raise ConfigError(f"section {section!r} must be an object")
        kwargs[section] = _build_section(cls, sec, section)
    cfg = RunConfig(**kwargs)
    # Failure draws follow the run seed unless the scenario pins its own.
    if "seed" not in scenario_raw:
        cfg = replace_scenario_seed(cfg, cfg.run.seed * 31 + 7)
    return cfg


def replace_scenario_seed(cfg: RunConfig, seed: int) -> RunConfig:
    sc = cfg.scenario
    new_sc = cl.FailureScenario(
        kind=sc.kind,
        probability=sc.probability,
        recovery_iterations=sc.recovery_iterations,
        failure_interval_s=sc.failure_interval_s,
        recovery_time_s=sc.recovery_time_s,
        victims=sc.victims,
        seed=seed,
    )
    return RunConfig(
        model=cfg.model,
        cluster=cfg.cluster,
        scenario=new_sc,
        optimizer=cfg.optimizer,
        run=cfg.run,
        cost=cfg.cost,
        data=cfg.data,
    )


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# Crash-consistent writers
# ---------------------------------------------------------------------------


class AtomicFileWriter:
    """Accumulates lines; every flush rewrites the file via write-then-rename."""

    def __init__(self, path: str | None, header: str | None = None):
        self.path = path
        self.header = header
        self.lines: list[str] = []

    def add(self, line: str) -> None:
        self.lines.append(line)

    def flush(self) -> None:
        if self.path is None:
            return
        directory = os.path.dirname(os.path.abspath(self.path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                if self.header is not None:
                    f.write(self.header + "\n")
                for line in self.lines:
                    f.write(line + "\n")
            os.replace(tmp, self.path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# Model-level backward with per-layer modes
# ---------------------------------------------------------------------------


def backward_model(
    weights: mdl.ModelWeights,
    tokens: np.ndarray,
    caches: list[mdl.BlockCache],
    final_cache: dict,
    dlogits: np.ndarray,
    modes: list[str],
    proj_caches: dict[int, approx.ProjectionCache] | None = None,
    svd: SvdConfig | None = None,
) -> dict[str, np.ndarray]:
    """Walk the model backward, dispatching per layer on the cache mode.

    Layers in neighbor mode contribute only feedforward-side gradients; their
    projection caches (keyed by layer index) are refreshed/advanced in place.
    """
    cfg = weights.cfg
    if modes is None:
        modes = [mdl.CACHE_FULL] * cfg.layers
    dx, grads = mdl.head_backward(weights, final_cache, dlogits)
    for layer in reversed(range(cfg.layers)):
        lw = weights.layers[layer]
        if modes[layer] == mdl.CACHE_FULL:
            dx, layer_grads = mdl.backward_block_exact(cfg, lw, caches[layer], dx)
        else:
            proj = proj_caches.get(layer) if proj_caches is not None else None
            dx, layer_grads = approx.backward_block_neighbor(
                cfg, lw, caches[layer], dx, proj=proj, svd=svd
            )
        for kind, g in layer_grads.items():
            grads[f"layers.{layer}.{kind}"] = g
    grads["embedding"] = mdl.embedding_backward(weights, tokens, dx)
    return grads


def _rank_pass(weights, tokens, targets, modes, proj_caches=None, svd=None):
    logits, caches, final_cache = mdl.forward_model(weights, tokens, modes)
    loss, dlogits = mdl.cross_entropy(logits, targets.reshape(-1))
    grads = backward_model(
        weights, tokens, caches, final_cache, dlogits, modes, proj_caches, svd
    )
    return loss, grads


def _mean_grads(per_rank: list[dict]) -> dict:
    out = {}
    for name in per_rank[0]:
        total = per_rank[0][name].copy()
        for g in per_rank[1:]:
            total += g[name]
        out[name] = total / len(per_rank)
    return out


def _flatten_diff_sq(a: dict, b: dict, names) -> tuple[float, float]:
    diff_sq = 0.0
    ref_sq = 0.0
    for name in names:
        gb = b[name]
        ga = a.get(name)
        d = (ga - gb) if ga is not None else -gb
        diff_sq += float(np.sum(d * d))
        ref_sq += float(np.sum(gb * gb))
    return diff_sq, ref_sq


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    rows: list[dict]
    events: list[dict]
    weights: mdl.ModelWeights
    summary: dict


def _standard_iteration_seconds(cfg: RunConfig) -> float:
    flops = max(
        cm.stage_flops(
            cfg.model, cfg.cluster, s, cm.MODE_STANDARD, cfg.run.r, cfg.run.tau, cfg.tokens_per_rank
        )
        for s in range(cfg.cluster.pp)
    )
    return flops / cfg.cost.node_flops_per_s


def _make_common(cfg: RunConfig):
    weights = mdl.init_weights(cfg.model, seed=cfg.run.seed)
    opt_state = op.OptimState(cfg.optimizer)
    sampler = dt.ShardedSampler(
        n_ranks=cfg.cluster.dp,
        seq_len=cfg.model.seq_len,
        vocab_size=cfg.model.vocab,
        seed=cfg.run.seed,
        source=cfg.data.source,
        corpus_path=cfg.data.path,
    )
    base_lr = cfg.run.base_lr if cfg.run.base_lr is not None else cfg.optimizer.lr
    return weights, opt_state, sampler, base_lr


def run_plain_training(cfg: RunConfig, out_dir: str | None = None, quiet: bool = True) -> RunResult:
    """Fault-free data-parallel reference loop (no cluster machinery)."""
    weights, opt_state, sampler, base_lr = _make_common(cfg)
    n = cfg.cluster.dp
    duration = _standard_iteration_seconds(cfg)
    metrics = AtomicFileWriter(
        os.path.join(out_dir, "metrics.csv") if out_dir else None, METRICS_HEADER
    )
    rows: list[dict] = []
    sim_time = 0.0
    try:
        for it in range(cfg.run.iterations):
            lr = op.lr_at(it + 1, cfg.run.iterations, base_lr)
            losses = []
            per_rank = []
            for i in range(n):
                tokens, targets = sampler.batch(i, cfg.per_rank_batch)
                loss_i, grads_i = _rank_pass(weights, tokens, targets, None)
                losses.append(loss_i)
                per_rank.append(grads_i)
            loss = sum(losses) / n
            if not np.isfinite(loss):
                raise NumericalFailure(f"non-finite loss at iteration {it}")
            averaged = _mean_grads(per_rank)
            op.apply_step(weights, opt_state, averaged, lr)
            sim_time += duration
            row = {
                "iteration": it,
                "loss": loss,
                "perplexity": float(np.exp(loss)),
                "rho1": None,
                "rho2": None,
                "lr": lr,
                "sim_time_s": sim_time,
                "affected_ranks": 0,
            }
            rows.append(row)
            metrics.add(",".join(_fmt(row[k]) for k in METRICS_HEADER.split(",")))
            if out_dir and (it + 1) % cfg.run.flush_interval == 0:
                metrics.flush()
            if not quiet and (it + 1) % 100 == 0:
                print(f"[plain] iter {it + 1}/{cfg.run.iterations} loss {loss:.4f}")
    finally:
        metrics.flush()
    if out_dir:
        AtomicFileWriter(os.path.join(out_dir, "events.jsonl")).flush()
        dump_weights(weights, out_dir)
    return RunResult(rows=rows, events=[], weights=weights, summary=_summary(rows))


def run_training(cfg: RunConfig, out_dir: str | None = None, quiet: bool = True) -> RunResult:
    """The fault-tolerant loop with failover, approximation, and probes."""
    weights, opt_state, sampler, base_lr = _make_common(cfg)
    n = cfg.cluster.dp
    state = cl.ClusterState(cfg.cluster, cfg.scenario)
    svd = SvdConfig(rank=cfg.run.r, tolerance=1e-9, max_iterations=3000, seed=cfg.run.seed + 23)
    proj_caches = {
        (i, layer): approx.ProjectionCache(rank=cfg.run.r, refresh_period=cfg.run.tau)
        for i in range(n)
        for layer in range(cfg.model.layers)
    }

    metrics = AtomicFileWriter(
        os.path.join(out_dir, "metrics.csv") if out_dir else None, METRICS_HEADER
    )
    events_out = AtomicFileWriter(os.path.join(out_dir, "events.jsonl") if out_dir else None)
    rows: list[dict] = []
    all_events: list[dict] = []
    sim_time = 0.0
    try:
        for it in range(cfg.run.iterations):
            events = cl.step_cluster(state, sim_time, it)
            for ev in events:
                if ev["kind"] == "adopt":
                    i = ev["node"][0]
                    for layer in ev["details"]["layers"]:
                        proj_caches[(i, layer)].reset()
                all_events.append(ev)
                events_out.add(json.dumps(ev))

            modes_by_rank = [
                [
                    mdl.CACHE_FULL
                    if state.status[state.executor[(i, cfg.cluster.stage_of_layer(layer))]] == cl.HEALTHY
                    else mdl.CACHE_FFN_INPUT_ONLY
                    for layer in range(cfg.model.layers)
                ]
                for i in range(n)
            ]

            lr = op.lr_at(it + 1, cfg.run.iterations, base_lr)
            losses = []
            per_rank = []
            batches = []
            for i in range(n):
                tokens, targets = sampler.batch(i, cfg.per_rank_batch)
                batches.append((tokens, targets))
                rank_proj = {
                    layer: proj_caches[(i, layer)]
                    for layer in range(cfg.model.layers)
                    if modes_by_rank[i][layer] == mdl.CACHE_FFN_INPUT_ONLY
                }
                loss_i, grads_i = _rank_pass(
                    weights, tokens, targets, modes_by_rank[i], rank_proj, svd
                )
                losses.append(loss_i)
                per_rank.append(grads_i)
            loss = sum(losses) / n
            if not np.isfinite(loss):
                raise NumericalFailure(f"non-finite loss at iteration {it}")

            active = {
                (layer, kind): cl.active_set(state, layer, kind)
                for layer in range(cfg.model.layers)
                for kind in cl.MHA_GRAD_KINDS + cl.FFN_GRAD_KINDS
            }
            averaged, skipped = cl.aggregate_gradients(per_rank, active, cfg.model.layers)

            affected = state.affected_ranks()
            rho1 = rho2 = None
            if cfg.run.probe_interval > 0 and it % cfg.run.probe_interval == 0:
                if affected or not cfg.run.probe_only_under_faults:
                    rho1 = _probe_rho1(cfg, weights, batches, averaged)
                    if cfg.run.full_batch_interval > 0 and it % cfg.run.full_batch_interval == 0:
                        rho2 = _probe_rho2(
                            cfg, weights, sampler, state, modes_by_rank, proj_caches
                        )

            op.apply_step(weights, opt_state, averaged, lr, skip=skipped)

            worst_flops, _, _, _ = cm.iteration_cost(
                state, cfg.model, cm.POLICY_APPROX, cfg.run.r, cfg.run.tau, cfg.tokens_per_rank
            )
            fetches = sum(1 for ev in events if ev["kind"] in ("adopt", "recover"))
            sim_time += worst_flops / cfg.cost.node_flops_per_s + fetches * cfg.cost.fetch_cost_s

            row = {
                "iteration": it,
                "loss": loss,
                "perplexity": float(np.exp(loss)),
                "rho1": rho1,
                "rho2": rho2,
                "lr": lr,
                "sim_time_s": sim_time,
                "affected_ranks": len(affected),
            }
            rows.append(row)
            metrics.add(",".join(_fmt(row[k]) for k in METRICS_HEADER.split(",")))
            if out_dir and (it + 1) % cfg.run.flush_interval == 0:
                metrics.flush()
                events_out.flush()
            if not quiet and (it + 1) % 100 == 0:
                print(f"[train] iter {it + 1}/{cfg.run.iterations} loss {loss:.4f}")
    finally:
        metrics.flush()
        events_out.flush()
    if out_dir:
        dump_weights(weights, out_dir)
    return RunResult(rows=rows, events=all_events, weights=weights, summary=_summary(rows))


def _probe_rho1(cfg: RunConfig, weights, batches, averaged) -> float:
    """Single-batch relative error against a fault-free pass on the same data."""
    per_rank = []
    for tokens, targets in batches:
        _, grads = _rank_pass(weights, tokens, targets, None)
        per_rank.append(grads)
    g_star = _mean_grads(per_rank)
    diff_sq, ref_sq = _flatten_diff_sq(averaged, g_star, g_star.keys())
    return diff_sq / ref_sq if ref_sq > 0 else 0.0


def _probe_rho2(cfg: RunConfig, weights, sampler, state, modes_by_rank, proj_caches) -> float:
    """Full-shard relative error over fixed evaluation windows."""
    n = cfg.cluster.dp
    approx_per_rank = []
    exact_per_rank = []
    for i in range(n):
        tokens, targets = sampler.eval_windows(i, cfg.run.full_batch_windows)
        frozen = {}
        for layer in range(cfg.model.layers):
            pc = proj_caches[(i, layer)]
            if modes_by_rank[i][layer] == mdl.CACHE_FFN_INPUT_ONLY and pc.basis:
                # Read-only clone: reuse the current bases, never refresh.
                frozen[layer] = approx.ProjectionCache(
                    rank=pc.rank, refresh_period=10 ** 9, step=1, basis=dict(pc.basis)
                )
        _, g_approx = _rank_pass(
            weights, tokens, targets, modes_by_rank[i], frozen,
            SvdConfig(rank=cfg.run.r, seed=0),
        )
        _, g_exact = _rank_pass(weights, tokens, targets, None)
        approx_per_rank.append(g_approx)
        exact_per_rank.append(g_exact)
    active = {
        (layer, kind): cl.active_set(state, layer, kind)
        for layer in range(cfg.model.layers)
        for kind in cl.MHA_GRAD_KINDS + cl.FFN_GRAD_KINDS
    }
    averaged, _ = cl.aggregate_gradients(approx_per_rank, active, cfg.model.layers)
    g_star = _mean_grads(exact_per_rank)
    diff_sq, ref_sq = _flatten_diff_sq(averaged, g_star, g_star.keys())
    return diff_sq / ref_sq if ref_sq > 0 else 0.0


def _summary(rows: list[dict]) -> dict:
    if not rows:
        return {"iterations": 0}
    tail = rows[-min(50, len(rows)) :]
    rho1_values = [r["rho1"] for r in rows if r["rho1"] is not None]
    return {
        "iterations": len(rows),
        "final_loss": float(np.mean([r["loss"] for r in tail])),
        "last_loss": rows[-1]["loss"],
        "max_rho1": max(rho1_values) if rho1_values else None,
        "sim_time_s": rows[-1]["sim_time_s"],
    }


# ---------------------------------------------------------------------------
# Relative-error checker and gradient checks
# ---------------------------------------------------------------------------


def check_assumption_errors(cfg: RunConfig, out_dir: str | None = None, quiet: bool = True) -> dict:
    """Train with the probe enabled and report the relative-error series."""
    if cfg.run.probe_interval < 1:
        cfg.run.probe_interval = 1
    result = run_training(cfg, out_dir=out_dir, quiet=quiet)
    rho1 = [(r["iteration"], r["rho1"]) for r in result.rows if r["rho1"] is not None]
    rho2 = [(r["iteration"], r["rho2"]) for r in result.rows if r["rho2"] is not None]
    return {
        "rho1": rho1,
        "rho2": rho2,
        "max_rho1": max((v for _, v in rho1), default=None),
        "max_rho2": max((v for _, v in rho2), default=None),
        "summary": result.summary,
    }


def finite_difference_check(seed: int = 0, h: float = 1e-5) -> dict[str, float]:
    """Central-difference check of the exact backward on a tiny model.

    Returns the max relative error per parameter kind, with the usual
    max(|a|, |b|, floor) denominator.
    """
    cfg = mdl.ModelConfig(
        vocab=16, hidden=16, heads=4, ffn_intermediate=32, layers=2, seq_len=6, rope=True
    )
    weights = mdl.init_weights(cfg, seed=seed, std=0.05)
    rng = np.random.Generator(np.random.PCG64(seed + 1))
    tokens = rng.integers(0, cfg.vocab, size=(2, cfg.seq_len))
    targets = rng.integers(0, cfg.vocab, size=(2, cfg.seq_len))

    def loss_fn():
        logits, _, _ = mdl.forward_model(weights, tokens)
        loss, _ = mdl.cross_entropy(logits, targets.reshape(-1))
        return loss

    _, analytic = _rank_pass(weights, tokens, targets, None)
    report: dict[str, float] = {}
    for name, arr in weights.named():
        numeric = np.empty_like(arr)
        flat = arr.reshape(-1)
        num_flat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss_fn()
            flat[j] = orig - h
            down = loss_fn()
            flat[j] = orig
            num_flat[j] = (up - down) / (2.0 * h)
        # Relative to the tensor's own scale; entrywise ratios on near-zero
        # entries would only measure finite-difference noise.
        scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic[name]))), 1e-12)
        err = float(np.max(np.abs(numeric - analytic[name]))) / scale
        kind = name.split(".")[-1]
        report[kind] = max(report.get(kind, 0.0), err)
    return report


def check_gradients(seed: int = 0) -> dict:
    """Runtime health checks: finite differences, full-rank projection
    exactness, and bitwise recomputation fidelity."""
    fd = finite_difference_check(seed=seed)

    cfg = mdl.ModelConfig(vocab=16, hidden=16, heads=4, ffn_intermediate=32, layers=1, seq_len=6)
    weights = mdl.init_weights(cfg, seed=seed + 5, std=0.1)
    rng = np.random.Generator(np.random.PCG64(seed + 9))
    x = rng.normal(size=(2 * cfg.seq_len, cfg.hidden))
    dy = rng.normal(size=(2 * cfg.seq_len, cfg.hidden))
    lw = weights.layers[0]

    _, cache_full = mdl.forward_block(cfg, lw, x, mdl.CACHE_FULL)
    _, cache_lean = mdl.forward_block(cfg, lw, x, mdl.CACHE_FFN_INPUT_ONLY)

    dx_exact, g_exact = approx.backward_block_neighbor(cfg, lw, cache_lean, dy, proj=None)
    proj = approx.ProjectionCache(rank=max(cfg.hidden, cfg.ffn_intermediate), refresh_period=1)
    svd = SvdConfig(rank=1, tolerance=1e-12, max_iterations=3000, seed=seed)
    dx_lr, g_lr = approx.backward_block_neighbor(cfg, lw, cache_lean, dy, proj=proj, svd=svd)

    lowrank_err = 0.0
    for kind in approx.FFN_KINDS:
        scale = max(float(np.max(np.abs(g_exact[kind]))), 1e-12)
        lowrank_err = max(lowrank_err, float(np.max(np.abs(g_lr[kind] - g_exact[kind]))) / scale)

    _, g_full = mdl.backward_block_exact(cfg, lw, cache_full, dy)
    bitwise = all(
        np.array_equal(g_exact[kind], g_full[kind]) for kind in ("gate", "up", "down", "norm_ffn")
    )

    return {
        "finite_difference": fd,
        "max_fd_error": max(fd.values()),
        "lowrank_full_rank_error": lowrank_err,
        "recompute_bitwise_equal": bitwise,
    }


# ---------------------------------------------------------------------------
# Weight serialization
# ---------------------------------------------------------------------------


def dump_weights(weights: mdl.ModelWeights, out_dir: str) -> None:
    """Flat little-endian float64 dump plus a JSON shape manifest."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = []
    offset = 0
    chunks = []
    for name, arr in weights.named():
        manifest.append({"name": name, "shape": list(arr.shape), "offset_elems": offset})
        flat = np.ascontiguousarray(arr, dtype="<f8").reshape(-1)
        chunks.append(flat)
        offset += flat.size
    blob = np.concatenate(chunks)
    tmp = os.path.join(out_dir, "final_weights.bin.tmp")
    blob.tofile(tmp)
    os.replace(tmp, os.path.join(out_dir, "final_weights.bin"))
    with open(os.path.join(out_dir, "final_weights.json"), "w", encoding="utf-8") as f:
        json.dump({"dtype": "<f8", "total_elems": offset, "params": manifest}, f, indent=2)


def load_weights(cfg: mdl.ModelConfig, out_dir: str) -> mdl.ModelWeights:
    with open(os.path.join(out_dir, "final_weights.json"), "r", encoding="utf-8") as f:
        manifest = json.load(f)
    blob = np.fromfile(os.path.join(out_dir, "final_weights.bin"), dtype="<f8")
    weights = mdl.init_weights(cfg, seed=0)
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape))
        start = entry["offset_elems"]
        weights.set(entry["name"], blob[start : start + size].reshape(shape).astype(np.float64))
    return weights
