"""Layer-wise personalized federation of per-server DQN agents.

Each round every server trains one episode locally, then the input-side
"base" layers are averaged with weights proportional to the requests each
server saw, and written back into both the online and target networks of
every server. Output-side "personal" layers never leave their server.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .agent import EpisodeStats, MHDQNAgent, run_episode
from .env import CacheEnv
from .neural import LayerParams


class FederationMode(str, Enum):
    PF = "pf"
    NONPER = "nonper"
    NONFED = "nonfed"


@dataclass(frozen=True)
class LayerSplit:
    num_layers: int
    num_personal: int

    def __post_init__(self):
        if not 0 <= self.num_personal <= self.num_layers:
            raise ValueError(f"personal layer count must lie in 0..{self.num_layers}")

    @property
    def base(self) -> tuple[int, ...]:
        return tuple(range(self.num_layers - self.num_personal))

    @property
    def personal(self) -> tuple[int, ...]:
        return tuple(range(self.num_layers - self.num_personal, self.num_layers))

    @property
    def mode(self) -> FederationMode:
        if self.num_personal == 0:
            return FederationMode.NONPER
        if self.num_personal == self.num_layers:
            return FederationMode.NONFED
        return FederationMode.PF


def split_for_mode(mode, num_layers: int, personal_layers: int = 2) -> LayerSplit:
    mode = FederationMode(mode)
    if mode is FederationMode.NONPER:
        return LayerSplit(num_layers, 0)
    if mode is FederationMode.NONFED:
        return LayerSplit(num_layers, num_layers)
    if not 1 <= personal_layers <= num_layers - 1:
        raise ValueError(f"pf mode needs 1..{num_layers - 1} personal layers, got {personal_layers}")
    return LayerSplit(num_layers, personal_layers)


def aggregate_base(params_by_server: Sequence[Sequence[LayerParams]], weights: Sequence[float]) -> list[LayerParams]:
    """Request-weighted elementwise mean of each shared layer."""
    if len(params_by_server) == 0 or len(params_by_server) != len(weights):
        raise ValueError("need one weight per server")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not w.sum() > 0:
        raise ValueError("aggregation weights must be nonnegative with a positive total")
    w = w / w.sum()
    first = params_by_server[0]
    out = []
    for j, ref in enumerate(first):
        layers = [server[j] for server in params_by_server]
        if any(
            p.layer_index != ref.layer_index
            or p.weights.shape != ref.weights.shape
            or p.biases.shape != ref.biases.shape
            for p in layers
        ):
            raise ValueError(f"servers disagree on the shape of layer {ref.layer_index}")
        weights_sum = sum(wm * p.weights for wm, p in zip(w, layers))
        biases_sum = sum(wm * p.biases for wm, p in zip(w, layers))
        out.append(LayerParams(ref.layer_index, weights_sum, biases_sum))
    return out


def broadcast_sync(agents: Sequence[MHDQNAgent], aggregated: Optional[Sequence[LayerParams]], split: LayerSplit) -> None:
    """Overwrite base layers of every online and target network."""
    if not aggregated or not split.base:
        return
    if sorted(p.layer_index for p in aggregated) != list(split.base):
        raise ValueError("aggregated layers do not match the base split")
    for agent in agents:
        agent.online.import_layers(aggregated)
        agent.target.import_layers(aggregated)


@dataclass
class FederationRound:
    episode: int
    weights: list[int]
    aggregated: Optional[list[LayerParams]]
    stats: list[EpisodeStats]


class Federation:
    """Runs rounds over a fixed set of (agent, env) pairs, ordered by server id."""

    def __init__(self, agents: Sequence[MHDQNAgent], envs: Sequence[CacheEnv], split: LayerSplit, workers: int = 1):
        if len(agents) != len(envs) or not agents:
            raise ValueError("need one environment per agent")
        for a in agents:
            if a.online.num_layers != split.num_layers:
                raise ValueError("layer split does not match the agents' networks")
        self.agents = list(agents)
        self.envs = list(envs)
        self.split = split
        self.workers = max(1, int(workers))
        self.episode = 0

    @property
    def mode(self) -> FederationMode:
        return self.split.mode

    def _local_training(self, slots: int) -> list[EpisodeStats]:
        jobs = list(zip(self.agents, self.envs))
        if self.workers == 1 or len(jobs) == 1:
            return [run_episode(a, e, slots) for a, e in jobs]
        with ThreadPoolExecutor(max_workers=min(self.workers, len(jobs))) as pool:
            return list(pool.map(lambda job: run_episode(job[0], job[1], slots), jobs))

    def round(self, slots: int) -> FederationRound:
        stats = self._local_training(slots)
        weights = [s.requests for s in stats]
        aggregated = None
        if self.split.base:
            uploads = [a.online.export_layers(self.split.base) for a in self.agents]
            aggregated = aggregate_base(uploads, weights)
            broadcast_sync(self.agents, aggregated, self.split)
        record = FederationRound(self.episode, weights, aggregated, stats)
        self.episode += 1
        return record


def federated_round(federation: Federation, slots: int) -> FederationRound:
    return federation.round(slots)
