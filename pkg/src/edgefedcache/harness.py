"""Experiment execution: federated and baseline runs, sweeps, metrics files
and report tables."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .agent import AgentConfig, EpisodeStats, MHDQNAgent
from .baselines import make_policy, run_baseline_episode
from .config import CATALOG_KEY, INIT_KEY, ExperimentConfig, derived_int, derived_rng, server_rng
from .env import CacheEnv, RewardWeights
from .federation import Federation, FederationMode, LayerSplit, split_for_mode
from .neural import QNetwork, grad_check, random_probe
from .workload import ContentCatalog, ServerProfile, permuted_ranks, sample_catalog

log = logging.getLogger(__name__)

LEARNING_POLICIES = ("pf", "nonper", "nonfed")
BASELINE_POLICIES = ("lru", "lfu", "random")
ALL_POLICIES = LEARNING_POLICIES + BASELINE_POLICIES
SWEEP_AXES = ("personal_layers", "num_contents", "capacity_gb", "avg_users")
METRIC_FIELDS = [
    "run_id", "mode", "episode", "server_id", "chr", "replacement_cost",
    "penalties", "reward", "utility", "D_m",
]


# -- world construction ---------------------------------------------------------

def build_catalog(config: ExperimentConfig) -> ContentCatalog:
    cat = config.catalog
    rng = np.random.default_rng(cat.seed) if cat.seed is not None else derived_rng(config.seed, *CATALOG_KEY)
    return sample_catalog(cat.num_contents, cat.size_range, cat.payment_range, rng)


def build_profiles(config: ExperimentConfig) -> list[ServerProfile]:
    c = config.catalog.num_contents
    profiles = []
    for m, s in enumerate(config.servers, start=1):
        ranks = permuted_ranks(c, server_rng(config.seed, m, "ranks")) if config.per_server_ranks else None
        profiles.append(ServerProfile(m, s.plateau_q, s.zipf_k, s.num_users, s.capacity_gb, ranks))
    return profiles


def build_env(config: ExperimentConfig, catalog: ContentCatalog, profile: ServerProfile) -> CacheEnv:
    r = config.reward
    return CacheEnv(
        catalog,
        profile,
        RewardWeights(r.hit, r.cost, r.penalty_weight, r.penalty),
        window=config.ewma.window,
        decay=config.ewma.decay,
        rng=server_rng(config.seed, profile.server_id, "env"),
    )


def agent_config(config: ExperimentConfig) -> AgentConfig:
    return AgentConfig(**config.agent.model_dump())


def build_agent(config: ExperimentConfig, server_id: int) -> MHDQNAgent:
    """Every server starts from the same network, seeded from the master seed."""
    sched = config.schedule
    return MHDQNAgent(
        config.catalog.num_contents,
        agent_config(config),
        rng=server_rng(config.seed, server_id, "agent"),
        init_seed=derived_int(config.seed, *INIT_KEY),
        total_slots=sched.episodes * sched.slots,
    )


def config_digest(config: ExperimentConfig) -> str:
    """Hash of everything that affects results (not threads or checkpointing)."""
    data = config.model_dump(mode="json", exclude={"workers", "checkpoint_every"})
    return hashlib.sha1(json.dumps(data, sort_keys=True).encode()).hexdigest()[:10]


def make_run_id(config: ExperimentConfig, policy: str) -> str:
    return f"{policy}-seed{config.seed}-{config_digest(config)}"


# -- metrics rows -----------------------------------------------------------------

def episode_rows(run_id: str, mode: str, episode: int, stats: Sequence[EpisodeStats]) -> list[dict]:
    """One row per server, then a system row (CHR averaged, the rest summed)."""
    rows = []
    for server_id, s in enumerate(stats, start=1):
        rows.append({"run_id": run_id, "mode": mode, "episode": episode, "server_id": server_id, **_floats(s.as_row())})
    rows.append({
        "run_id": run_id,
        "mode": mode,
        "episode": episode,
        "server_id": "system",
        "chr": float(np.mean([s.chr for s in stats])),
        "replacement_cost": float(sum(s.cost for s in stats)),
        "penalties": int(sum(s.penalties for s in stats)),
        "reward": float(sum(s.reward for s in stats)),
        "utility": float(sum(s.utility for s in stats)),
        "D_m": int(sum(s.requests for s in stats)),
    })
    return rows


def _floats(row: dict) -> dict:
    return {k: (int(v) if k in ("penalties", "D_m") else float(v)) for k, v in row.items()}


def write_metrics(path: Path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["episode"] = int(row["episode"])
        for key in ("chr", "replacement_cost", "reward", "utility"):
            row[key] = float(row[key])
        row["penalties"] = int(row["penalties"])
        row["D_m"] = int(row["D_m"])
    return rows


def final_window_summary(rows: Sequence[dict], episodes: int, window: int) -> dict:
    start = episodes - window
    tail = [r for r in rows if r["episode"] >= start]
    by_server: dict = {}
    for r in tail:
        by_server.setdefault(str(r["server_id"]), []).append(r)
    out = {}
    for sid, rs in by_server.items():
        out[sid] = {
            key: float(np.mean([r[key] for r in rs]))
            for key in ("chr", "replacement_cost", "penalties", "reward", "utility")
        }
    return out


# -- runs -------------------------------------------------------------------------------

@dataclass
class RunResult:
    run_id: str
    policy: str
    config: ExperimentConfig
    rows: list[dict]
    summary: dict
    rounds: list = field(default_factory=list, repr=False)

    def system_series(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows if r["server_id"] == "system"])

    def server_series(self, server_id: int, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows if r["server_id"] == server_id])


def run_experiment(
    config: ExperimentConfig,
    out_dir=None,
    policy: Optional[str] = None,
    keep_rounds: bool = False,
) -> RunResult:
    """Run one policy end to end; deterministic given ``config.seed``.

    ``policy`` defaults to the configured federation mode and may also name a
    non-learning baseline ("lru", "lfu", "random").
    """
    policy = policy or config.federation.mode
    if policy not in ALL_POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {', '.join(ALL_POLICIES)}")
    if policy in LEARNING_POLICIES and policy != config.federation.mode:
        personal = config.federation.personal_layers if policy == "pf" else 0
        config = config.with_updates(**{"federation.mode": policy, "federation.personal_layers": personal})
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    run_id = make_run_id(config, policy)
    catalog = build_catalog(config)
    profiles = build_profiles(config)
    envs = [build_env(config, catalog, p) for p in profiles]
    sched = config.schedule
    rows: list[dict] = []
    rounds = []

    if policy in BASELINE_POLICIES:
        policies = [
            make_policy(policy, catalog.num_contents, server_rng(config.seed, p.server_id, "baseline"))
            for p in profiles
        ]
        for e in range(sched.episodes):
            stats = [run_baseline_episode(pol, env, sched.slots) for pol, env in zip(policies, envs)]
            rows.extend(episode_rows(run_id, policy, e, stats))
    else:
        agents = [build_agent(config, p.server_id) for p in profiles]
        split = split_for_mode(config.federation.mode, config.agent.num_layers, config.federation.personal_layers)
        fed = Federation(agents, envs, split, workers=config.workers)
        for e in range(sched.episodes):
            record = fed.round(sched.slots)
            rows.extend(episode_rows(run_id, policy, e, record.stats))
            if keep_rounds:
                rounds.append(record)
            if out is not None and config.checkpoint_every and (e + 1) % config.checkpoint_every == 0:
                write_checkpoint(out / "checkpoints" / f"round_{e + 1:05d}", fed, record)
        log.info("%s finished %d rounds", run_id, sched.episodes)

    summary = {
        "run_id": run_id,
        "policy": policy,
        "seed": config.seed,
        "episodes": sched.episodes,
        "slots": sched.slots,
        "final_window": sched.final_window,
        "final": final_window_summary(rows, sched.episodes, sched.final_window),
        "config": json.loads(config.to_json()),
    }
    if out is not None:
        write_metrics(out / "metrics.csv", rows)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return RunResult(run_id, policy, config, rows, summary, rounds)


def write_checkpoint(directory: Path, fed: Federation, record) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for m, agent in enumerate(fed.agents, start=1):
        (directory / f"server_{m}_online.npz").write_bytes(agent.online.to_bytes())
        (directory / f"server_{m}_target.npz").write_bytes(agent.target.to_bytes())
        meta = {"epsilon": agent.epsilon, "learn_steps": agent.learn_steps, "buffer": "omitted"}
        (directory / f"server_{m}_meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    if record.aggregated:
        arrays = {}
        for p in record.aggregated:
            arrays[f"w{p.layer_index}"] = p.weights
            arrays[f"b{p.layer_index}"] = p.biases
        np.savez(directory / "aggregate.npz", **arrays)


# -- sweeps ------------------------------------------------------------------------------

def apply_axis(config: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "personal_layers":
        n = int(value)
        mode = LayerSplit(config.agent.num_layers, n).mode
        return config.with_updates(**{"federation.mode": mode.value, "federation.personal_layers": n})
    if axis == "num_contents":
        return config.with_updates(**{"catalog.num_contents": int(value)})
    if axis == "capacity_gb":
        servers = [s.model_copy(update={"capacity_gb": float(value)}) for s in config.servers]
        return config.model_validate({**config.model_dump(), "servers": [s.model_dump() for s in servers]})
    if axis == "avg_users":
        users = np.array([s.num_users for s in config.servers], dtype=np.float64)
        scaled = np.maximum(1, np.rint(users * float(value) / users.mean())).astype(int)
        servers = [s.model_copy(update={"num_users": int(u)}) for s, u in zip(config.servers, scaled)]
        return config.model_validate({**config.model_dump(), "servers": [s.model_dump() for s in servers]})
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")


SWEEP_FIELDS = [
    "axis", "value", "policy", "seeds", "failed",
    "utility_mean", "utility_std", "chr_mean", "chr_std", "cost_mean", "cost_std",
]


def _mean_std(xs: Sequence[float]) -> tuple[float, float]:
    if not xs:
        return float("nan"), float("nan")
    arr = np.asarray(xs, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def run_sweep(
    base: ExperimentConfig,
    axis: str,
    values: Sequence,
    seeds: Sequence[int],
    policies: Optional[Sequence[str]] = None,
    out_dir=None,
) -> list[dict]:
    """Mean and spread of final-window system metrics per (value, policy).

    On the personal_layers axis the value itself selects the learning mode,
    so ``policies`` is ignored there. A failing run is logged and counted in
    the point's ``failed`` column; the sweep carries on.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")
    policies = list(policies or ALL_POLICIES)
    out = Path(out_dir) if out_dir is not None else None
    table = []
    for value in values:
        point = apply_axis(base, axis, value)
        point_policies = [point.federation.mode] if axis == "personal_layers" else policies
        for policy in point_policies:
            utils, chrs, costs, failed = [], [], [], 0
            for seed in seeds:
                cfg = point.with_updates(seed=int(seed))
                run_dir = out / "runs" / f"{axis}={value}" / policy / f"seed{seed}" if out is not None else None
                try:
                    res = run_experiment(cfg, run_dir, policy=policy)
                except Exception:
                    log.exception("sweep point %s=%s policy=%s seed=%s failed", axis, value, policy, seed)
                    failed += 1
                    continue
                system = res.summary["final"]["system"]
                utils.append(system["utility"])
                chrs.append(system["chr"])
                costs.append(system["replacement_cost"])
            u, us = _mean_std(utils)
            c, cs = _mean_std(chrs)
            k, ks = _mean_std(costs)
            table.append({
                "axis": axis, "value": value, "policy": policy, "seeds": len(utils), "failed": failed,
                "utility_mean": u, "utility_std": us, "chr_mean": c, "chr_std": cs,
                "cost_mean": k, "cost_std": ks,
            })
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(table)
    return table


# -- reports -----------------------------------------------------------------------------

def report(path) -> list[dict]:
    """Plot-ready rows from a sweep directory, a run directory, or a tree of runs.

    A sweep directory yields one row per sweep point. Otherwise every
    summary.json found below ``path`` yields one row per run.
    """
    path = Path(path)
    sweep_csv = path / "sweep.csv" if path.is_dir() else path
    if sweep_csv.name == "sweep.csv" and sweep_csv.exists():
        with open(sweep_csv, newline="") as fh:
            return list(csv.DictReader(fh))
    summaries = sorted(path.rglob("summary.json")) if path.is_dir() else [path]
    if not summaries:
        raise FileNotFoundError(f"no sweep.csv or summary.json under {path}")
    rows = []
    for s in summaries:
        data = json.loads(s.read_text())
        system = data["final"]["system"]
        rows.append({
            "run_id": data["run_id"],
            "policy": data["policy"],
            "seed": data["seed"],
            "utility": system["utility"],
            "chr": system["chr"],
            "replacement_cost": system["replacement_cost"],
            "penalties": system["penalties"],
        })
    return rows


# -- gradient verification ------------------------------------------------------------

def gradcheck_suite(
    nets: int = 20,
    num_contents: int = 4,
    hidden_width: int = 8,
    num_layers: int = 6,
    batch: int = 4,
    eps: float = 1e-5,
    seed: int = 0,
) -> list[float]:
    """Max relative gradient error for each of ``nets`` random small networks."""
    errors = []
    for k in range(nets):
        rng = derived_rng(seed, 1, k)
        net = QNetwork(num_contents, hidden_width, num_layers, rng=rng)
        states, actions, targets = random_probe(net, batch, rng)
        errors.append(grad_check(net, states, actions, targets, eps))
    return errors
