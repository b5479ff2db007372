"""Multi-head DQN caching agent: factorized epsilon-greedy actions, replay,
per-head TD targets from a softly tracked target network."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .env import CacheEnv
from .neural import QNetwork, make_optimizer, soft_update


@dataclass
class AgentConfig:
    gamma: float = 0.99
    learning_rate: float = 0.002
    tau: float = 0.005
    eps_start: float = 1.0
    eps_end: float = 0.05
    # Per-slot multiplicative decay; None derives it from the training length
    # so that eps_end is reached after eps_reach_fraction of all slots.
    eps_decay: Optional[float] = None
    eps_reach_fraction: float = 0.5
    batch_size: int = 64
    buffer_capacity: int = 10_000
    learn_start: int = 256
    hidden_width: int = 128
    num_layers: int = 6
    optimizer: str = "sgd"
    store_action: str = "materialized"
    exploration: str = "joint"

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.eps_end <= self.eps_start <= 1.0):
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("buffer_capacity must hold at least one batch")
        if self.learn_start < self.batch_size:
            raise ValueError("learn_start must be at least batch_size")


def decay_for_schedule(eps_start: float, eps_end: float, total_slots: int, fraction: float = 0.5) -> float:
    """Per-slot factor that takes epsilon from start to end after ``fraction`` of training."""
    if eps_end <= 0 or eps_start <= 0 or eps_end >= eps_start:
        return 1.0
    steps = max(1, int(round(total_slots * fraction)))
    return (eps_end / eps_start) ** (1.0 / steps)


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray


@dataclass
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray

    def __len__(self) -> int:
        return self.rewards.shape[0]

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "TransitionBatch":
        if not transitions:
            raise ValueError("empty batch")
        return cls(
            np.stack([t.state for t in transitions]).astype(np.float64),
            np.stack([t.action for t in transitions]).astype(np.int64),
            np.array([t.reward for t in transitions], dtype=np.float64),
            np.stack([t.next_state for t in transitions]).astype(np.float64),
        )


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions backed by preallocated arrays."""

    def __init__(self, capacity: int, state_dim: int, num_contents: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, num_contents), dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, t: Transition) -> None:
        i = self._next
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def oldest_first(self) -> list[Transition]:
        start = self._next if self._size == self.capacity else 0
        idx = [(start + k) % self.capacity for k in range(self._size)]
        return [
            Transition(self.states[i].copy(), self.actions[i].copy(), float(self.rewards[i]), self.next_states[i].copy())
            for i in idx
        ]

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.choice(self._size, size=min(batch_size, self._size), replace=False)
        return TransitionBatch(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx])


def select_action(net: QNetwork, state, epsilon: float, rng: np.random.Generator, exploration: str = "joint") -> tuple[np.ndarray, np.ndarray]:
    """Epsilon-greedy joint action and the greedy per-head margins.

    The greedy pass always runs so the margins (Q_cache - Q_skip) are
    available to the capacity projection even on exploratory slots. Ties go
    to "skip".
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    q = net.forward(state)
    scores = q[:, 1] - q[:, 0]
    action = (scores > 0).astype(np.int8)
    if exploration == "per_head":
        mask = rng.random(net.num_contents) < epsilon
        action[mask] = rng.integers(0, 2, size=int(mask.sum()))
    elif rng.random() < epsilon:
        action = rng.integers(0, 2, size=net.num_contents).astype(np.int8)
    return action, scores


def td_targets(target_net: QNetwork, reward, next_state, gamma: float) -> np.ndarray:
    """y_c = r + gamma * max_a Qbar_c(s', a); batched when ``reward`` is a vector."""
    q_next = target_net.forward_batch(next_state)
    best = q_next.max(axis=2)
    reward = np.asarray(reward, dtype=np.float64)
    y = reward.reshape(-1, 1) + gamma * best
    return y[0] if reward.ndim == 0 else y


@dataclass
class EpisodeStats:
    chr: float
    cost: float
    penalties: int
    reward: float
    utility: float
    requests: int
    loss: float = float("nan")
    slots: int = 0

    def as_row(self) -> dict:
        return {
            "chr": self.chr,
            "replacement_cost": self.cost,
            "penalties": self.penalties,
            "reward": self.reward,
            "utility": self.utility,
            "D_m": self.requests,
        }


def summarize(outcomes, losses=()) -> EpisodeStats:
    n = len(outcomes)
    return EpisodeStats(
        chr=float(np.mean([o.chr for o in outcomes])),
        cost=float(np.mean([o.replacement_cost for o in outcomes])),
        penalties=int(sum(o.violated for o in outcomes)),
        reward=float(np.mean([o.reward for o in outcomes])),
        utility=float(np.mean([o.utility for o in outcomes])),
        requests=int(sum(o.requests for o in outcomes)),
        loss=float(np.mean(losses)) if len(losses) else float("nan"),
        slots=n,
    )


class MHDQNAgent:
    def __init__(
        self,
        num_contents: int,
        config: AgentConfig = AgentConfig(),
        rng: Optional[np.random.Generator] = None,
        init_seed: Optional[int] = 0,
        total_slots: Optional[int] = None,
    ):
        self.config = config
        self.num_contents = num_contents
        self.rng = rng if rng is not None else np.random.default_rng()
        self.online = QNetwork(num_contents, config.hidden_width, config.num_layers, seed=init_seed)
        self.target = self.online.copy()
        self.optimizer = make_optimizer(config.optimizer, config.learning_rate)
        self.buffer = ReplayBuffer(config.buffer_capacity, 2 * num_contents, num_contents)
        self.epsilon = config.eps_start
        if config.eps_decay is not None:
            self.eps_decay = config.eps_decay
        elif total_slots is not None:
            self.eps_decay = decay_for_schedule(
                config.eps_start, config.eps_end, total_slots, config.eps_reach_fraction
            )
        else:
            self.eps_decay = 1.0
        self.learn_steps = 0

    def act(self, state) -> tuple[np.ndarray, np.ndarray]:
        action, scores = select_action(self.online, state, self.epsilon, self.rng, self.config.exploration)
        self.epsilon = max(self.config.eps_end, self.epsilon * self.eps_decay)
        return action, scores

    def remember(self, state, action, reward: float, next_state) -> None:
        self.buffer.push(Transition(state, action, reward, next_state))

    def learn_step(self, batch: TransitionBatch) -> float:
        """One gradient step on the online net, then one soft target update.

        Returns the loss measured before the update.
        """
        if isinstance(batch, (list, tuple)):
            batch = TransitionBatch.from_transitions(batch)
        if len(batch) == 0:
            raise ValueError("empty batch")
        y = td_targets(self.target, batch.rewards, batch.next_states, self.config.gamma)
        loss, grads = self.online.backward(batch.states, batch.actions, y)
        if not math.isfinite(loss):
            raise FloatingPointError("non-finite TD loss; aborting run")
        self.optimizer.step(self.online, grads)
        soft_update(self.target, self.online, self.config.tau)
        self.learn_steps += 1
        return loss

    def maybe_learn(self) -> Optional[float]:
        if len(self.buffer) < self.config.learn_start:
            return None
        return self.learn_step(self.buffer.sample(self.config.batch_size, self.rng))


def run_episode(agent: MHDQNAgent, env: CacheEnv, slots: int) -> EpisodeStats:
    """observe -> act -> trim -> step -> store -> learn, ``slots`` times."""
    if slots < 1:
        raise ValueError("an episode needs at least one slot")
    state = env.reset()
    outcomes, losses = [], []
    for _ in range(slots):
        action, scores = agent.act(state)
        outcome = env.step(action, scores)
        next_state = env.observe()
        stored = env.state.cached if agent.config.store_action == "materialized" else action
        agent.remember(state, stored, outcome.reward, next_state)
        loss = agent.maybe_learn()
        if loss is not None:
            losses.append(loss)
        outcomes.append(outcome)
        state = next_state
    return summarize(outcomes, losses)
