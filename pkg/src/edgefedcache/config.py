"""Experiment configuration (JSON) and seed derivation."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

DEFAULT_PLATEAU = [100.0, 200.0, 90.0, 40.0, 80.0]
DEFAULT_ZIPF = [0.60, 0.60, 0.75, 0.90, 0.90]
DEFAULT_USERS = [15, 25, 10, 20, 30]
DEFAULT_CAPACITY_GB = 50.0


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class CatalogConfig(_Strict):
    num_contents: int = Field(40, ge=1)
    size_range: tuple[float, float] = (1.0, 8.0)
    payment_range: tuple[float, float] = (0.05, 0.5)
    # None: derived from the master seed.
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _ranges(self):
        for name in ("size_range", "payment_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must satisfy 0 < low <= high")
        return self


class ServerConfig(_Strict):
    plateau_q: float = Field(ge=0, allow_inf_nan=False)
    zipf_k: float = Field(gt=0, allow_inf_nan=False)
    num_users: int = Field(ge=1)
    capacity_gb: float = Field(DEFAULT_CAPACITY_GB, gt=0, allow_inf_nan=False)


def _default_servers() -> list[ServerConfig]:
    return [
        ServerConfig(plateau_q=q, zipf_k=k, num_users=u, capacity_gb=DEFAULT_CAPACITY_GB)
        for q, k, u in zip(DEFAULT_PLATEAU, DEFAULT_ZIPF, DEFAULT_USERS)
    ]


class RewardConfig(_Strict):
    hit: float = Field(1.0, gt=0, allow_inf_nan=False)
    cost: float = Field(1.0, ge=0, allow_inf_nan=False)
    penalty_weight: float = Field(1.0, ge=0, allow_inf_nan=False)
    penalty: float = Field(1.0, ge=0, allow_inf_nan=False)


class EwmaConfig(_Strict):
    window: int = Field(5, ge=2)
    decay: float = Field(0.9, gt=0, lt=1)


class AgentSection(_Strict):
    gamma: float = Field(0.99, ge=0, lt=1)
    learning_rate: float = Field(0.002, gt=0)
    tau: float = Field(0.005, ge=0, le=1)
    eps_start: float = Field(1.0, ge=0, le=1)
    eps_end: float = Field(0.05, ge=0, le=1)
    # Fraction of all training slots after which epsilon reaches eps_end.
    eps_reach_fraction: float = Field(0.5, gt=0, le=1)
    batch_size: int = Field(64, ge=1)
    buffer_capacity: int = Field(10_000, ge=1)
    learn_start: int = Field(256, ge=1)
    hidden_width: int = Field(128, ge=1)
    num_layers: int = Field(6, ge=1)
    optimizer: Literal["sgd", "adam"] = "sgd"
    exploration: Literal["joint", "per_head"] = "joint"
    store_action: Literal["materialized", "raw"] = "materialized"

    @model_validator(mode="after")
    def _consistent(self):
        if self.eps_end > self.eps_start:
            raise ValueError("eps_end must not exceed eps_start")
        if self.learn_start < self.batch_size:
            raise ValueError("learn_start must be at least batch_size")
        if self.buffer_capacity < self.batch_size:
            raise ValueError("buffer_capacity must hold at least one batch")
        return self


class FederationConfig(_Strict):
    mode: Literal["pf", "nonper", "nonfed"] = "pf"
    personal_layers: int = Field(2, ge=0)


class ScheduleConfig(_Strict):
    episodes: int = Field(300, ge=1)
    slots: int = Field(50, ge=1)
    # Trailing episodes averaged into summaries.
    final_window: int = Field(50, ge=1)


class ExperimentConfig(_Strict):
    seed: int = Field(0, ge=0)
    catalog: CatalogConfig = Field(default_factory=CatalogConfig)
    servers: list[ServerConfig] = Field(default_factory=_default_servers, min_length=1)
    per_server_ranks: bool = False
    reward: RewardConfig = Field(default_factory=RewardConfig)
    ewma: EwmaConfig = Field(default_factory=EwmaConfig)
    agent: AgentSection = Field(default_factory=AgentSection)
    federation: FederationConfig = Field(default_factory=FederationConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    workers: int = Field(1, ge=1)
    checkpoint_every: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _consistent(self):
        layers = self.agent.num_layers
        p = self.federation.personal_layers
        if p > layers:
            raise ValueError(f"federation.personal_layers must lie in 0..{layers}")
        if self.federation.mode == "pf" and not 1 <= p <= layers - 1:
            raise ValueError(f"pf mode needs federation.personal_layers in 1..{layers - 1}")
        if self.schedule.final_window > self.schedule.episodes:
            raise ValueError("schedule.final_window exceeds schedule.episodes")
        return self

    @property
    def num_servers(self) -> int:
        return len(self.servers)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.model_validate_json(text)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def with_updates(self, **changes) -> "ExperimentConfig":
        """Copy with dotted-path overrides, revalidated."""
        data = self.model_dump(mode="json")
        for dotted, value in changes.items():
            node = data
            *parents, leaf = dotted.split(".")
            for key in parents:
                node = node[key]
            node[leaf] = value
        return type(self).model_validate(data)


# Seed derivation: every stream is keyed by a fixed path so that adding a
# server or a policy never shifts the draws of any other stream.
CATALOG_KEY = (0, 0)
INIT_KEY = (0, 1)


def seed_sequence(master: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=tuple(key))


def derived_rng(master: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master, *key))


def derived_int(master: int, *key: int) -> int:
    return int(seed_sequence(master, *key).generate_state(1, dtype=np.uint32)[0])


def server_rng(master: int, server_id: int, stream: str) -> np.random.Generator:
    streams = {"env": 0, "agent": 1, "baseline": 2, "ranks": 3}
    return derived_rng(master, server_id, streams[stream])
