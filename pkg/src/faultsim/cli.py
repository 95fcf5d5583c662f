"""Command-line entry point.

Subcommands: train, check-assumption, check-grad, cost, simulate.
Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 unrecoverable cluster.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import cluster as cl, costmodel as cm, harness
from .errors import ConfigError, NumericalFailure, UnrecoverableRankError


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument("--out", type=str, default=None, help="output directory")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")


def _load(args) -> harness.RunConfig:
    if args.config is not None:
        cfg = harness.load_config(args.config)
    else:
        cfg = harness.config_from_dict({})
    if args.seed is not None:
        cfg.run.seed = args.seed
        cfg = harness.replace_scenario_seed(cfg, args.seed * 31 + 7)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faultsim",
        description="Deterministic simulator of fault-tolerant DP x PP training",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("train", "run the fault-tolerant training loop"),
        ("check-assumption", "train with the relative-error probe enabled"),
        ("check-grad", "finite-difference and approximation health checks"),
        ("cost", "static per-block cost report"),
        ("simulate", "cost-only throughput timeline for a failure scenario"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "simulate":
            p.add_argument(
                "--policy",
                choices=[cm.POLICY_APPROX, cm.POLICY_NAIVE, cm.POLICY_CHECKPOINT],
                default=cm.POLICY_APPROX,
            )
            p.add_argument("--iterations", type=int, default=2000)
    return parser


def _cmd_train(cfg, args) -> int:
    result = harness.run_training(cfg, out_dir=args.out, quiet=args.quiet)
    if not args.quiet:
        print(json.dumps(result.summary, indent=2))
    return 0


def _cmd_check_assumption(cfg, args) -> int:
    report = harness.check_assumption_errors(cfg, out_dir=args.out, quiet=args.quiet)
    print(
        json.dumps(
            {
                "max_rho1": report["max_rho1"],
                "max_rho2": report["max_rho2"],
                "probed_iterations": len(report["rho1"]),
            },
            indent=2,
        )
    )
    return 0


def _cmd_check_grad(cfg, args) -> int:
    report = harness.check_gradients(seed=cfg.run.seed)
    print(json.dumps(report, indent=2))
    ok = (
        report["max_fd_error"] <= 1e-5
        and report["lowrank_full_rank_error"] <= 1e-10
        and report["recompute_bitwise_equal"]
    )
    if not ok:
        print("gradient checks FAILED", file=sys.stderr)
        raise NumericalFailure("gradient check tolerance exceeded")
    return 0


def _cmd_cost(cfg, args) -> int:
    tokens = cfg.tokens_per_rank
    report = {}
    for mode in (cm.MODE_STANDARD, cm.MODE_NEIGHBOR_APPROX, cm.MODE_NEIGHBOR_NAIVE):
        cost = cm.block_cost(cfg.model, mode, cfg.run.r, cfg.run.tau, tokens)
        report[mode] = {
            "flops": cost.flops,
            "flops_total": cost.total_flops,
            "activation_bytes": cost.activation_bytes,
        }
    text = json.dumps(report, indent=2)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "block_cost.json"), "w", encoding="utf-8") as f:
            f.write(text + "\n")
    print(text)
    return 0


def _cmd_simulate(cfg, args) -> int:
    timeline = cm.simulate_throughput(
        cfg.cluster,
        cfg.scenario,
        cfg.model,
        policy=args.policy,
        r=cfg.run.r,
        tau=cfg.run.tau,
        tokens_per_rank=cfg.tokens_per_rank,
        node_flops_per_s=cfg.cost.node_flops_per_s,
        fetch_cost_s=cfg.cost.fetch_cost_s,
        total_iterations=args.iterations,
    )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "timeline.csv"), "w", encoding="utf-8") as f:
            f.write(timeline.to_csv())
        with open(os.path.join(args.out, "timeline.json"), "w", encoding="utf-8") as f:
            f.write(timeline.to_json() + "\n")
        with open(os.path.join(args.out, "events.jsonl"), "w", encoding="utf-8") as f:
            for ev in timeline.events:
                f.write(json.dumps(ev) + "\n")
    print(timeline.to_json())
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "check-assumption": _cmd_check_assumption,
    "check-grad": _cmd_check_grad,
    "cost": _cmd_cost,
    "simulate": _cmd_simulate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except UnrecoverableRankError as exc:
        print(f"unrecoverable cluster: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
