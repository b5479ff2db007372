"""Command-line entry point: run, baseline, sweep, gradcheck, report, config."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from typing import Optional, Sequence

from pydantic import ValidationError

from .config import ExperimentConfig
from .harness import (
    ALL_POLICIES,
    BASELINE_POLICIES,
    SWEEP_AXES,
    gradcheck_suite,
    report,
    run_experiment,
    run_sweep,
)

GRADCHECK_TOLERANCE = 1e-4


class ConfigError(Exception):
    pass


def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"  {loc}: {e['msg']}")
    return "invalid configuration:\n" + "\n".join(lines)


def load_config(args) -> ExperimentConfig:
    try:
        config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        updates = {}
        if getattr(args, "seed", None) is not None:
            updates["seed"] = args.seed
        if getattr(args, "mode", None) is not None:
            updates["federation.mode"] = args.mode
        if getattr(args, "personal_layers", None) is not None:
            updates["federation.personal_layers"] = args.personal_layers
        elif getattr(args, "mode", None) in ("nonper", "nonfed"):
            updates["federation.personal_layers"] = 0
        if getattr(args, "episodes", None) is not None:
            updates["schedule.episodes"] = args.episodes
            if config.schedule.final_window > args.episodes:
                updates["schedule.final_window"] = args.episodes
        return config.with_updates(**updates) if updates else config
    except ValidationError as err:
        raise ConfigError(_format_validation(err)) from None
    except (OSError, ValueError) as err:
        raise ConfigError(f"cannot read configuration: {err}") from None


def _parse_values(text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        out.append(int(tok) if tok.lstrip("-").isdigit() else float(tok))
    return out


def _print_table(rows: list[dict]) -> None:
    if not rows:
        return
    writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgefedcache", description="Federated DQN edge caching experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mode=True):
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--episodes", type=int, help="override schedule.episodes")
        if mode:
            p.add_argument("--mode", choices=["pf", "nonper", "nonfed"])
            p.add_argument("--personal-layers", type=int, dest="personal_layers")

    common(sub.add_parser("run", help="train federated agents and write metrics"))

    p = sub.add_parser("baseline", help="run a non-learning policy")
    common(p, mode=False)
    p.add_argument("--policy", choices=BASELINE_POLICIES, required=True)

    p = sub.add_parser("sweep", help="sweep one parameter over several seeds")
    common(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    p.add_argument("--policies", default=",".join(ALL_POLICIES))

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--nets", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)

    p = sub.add_parser("report", help="print plot-ready rows for a run or sweep directory")
    p.add_argument("path")

    p = sub.add_parser("config", help="print the default (or given) configuration as JSON")
    p.add_argument("--config")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            res = run_experiment(load_config(args), args.out)
            print(json.dumps(res.summary["final"]["system"], sort_keys=True))
        elif args.command == "baseline":
            res = run_experiment(load_config(args), args.out, policy=args.policy)
            print(json.dumps(res.summary["final"]["system"], sort_keys=True))
        elif args.command == "sweep":
            config = load_config(args)
            seeds = [int(s) for s in _parse_values(args.seeds)]
            policies = [s.strip() for s in args.policies.split(",") if s.strip()]
            unknown = [p for p in policies if p not in ALL_POLICIES]
            if unknown:
                raise ConfigError(f"unknown policies: {', '.join(unknown)}")
            table = run_sweep(config, args.axis, _parse_values(args.values), seeds, policies, args.out)
            _print_table(table)
            if any(row["failed"] for row in table):
                return 3
        elif args.command == "gradcheck":
            errors = gradcheck_suite(nets=args.nets, eps=args.eps, seed=args.seed)
            worst = max(errors)
            status = "ok" if worst <= GRADCHECK_TOLERANCE else "FAILED"
            print(f"gradcheck {status}: nets={len(errors)} max_rel_error={worst:.3e} tolerance={GRADCHECK_TOLERANCE:g}")
            return 0 if worst <= GRADCHECK_TOLERANCE else 1
        elif args.command == "report":
            _print_table(report(args.path))
        elif args.command == "config":
            print(load_config(args).to_json())
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
