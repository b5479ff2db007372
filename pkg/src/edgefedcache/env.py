"""Per-server caching MDP: placement under a storage budget, EWMA request
observations, and the hit-ratio / replacement-cost / penalty reward."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .workload import ContentCatalog, ServerProfile, generate_requests, mzipf_pmf


@dataclass(frozen=True)
class RewardWeights:
    hit: float = 1.0
    cost: float = 1.0
    penalty_weight: float = 1.0
    penalty: float = 1.0

    def __post_init__(self):
        values = (self.hit, self.cost, self.penalty_weight, self.penalty)
        if not all(np.isfinite(values)) or min(values) < 0:
            raise ValueError("reward weights must be finite and nonnegative")
        if self.hit <= 0:
            raise ValueError("hit weight must be positive")


@dataclass(frozen=True)
class CacheState:
    cached: np.ndarray
    used_gb: float

    @classmethod
    def build(cls, cached, sizes) -> "CacheState":
        cached = np.asarray(cached, dtype=np.int8)
        return cls(cached, float(cached @ np.asarray(sizes, dtype=np.float64)))

    @classmethod
    def empty(cls, num_contents: int) -> "CacheState":
        return cls(np.zeros(num_contents, dtype=np.int8), 0.0)


@dataclass(frozen=True)
class SlotOutcome:
    chr: float
    replacement_cost: float
    violated: bool
    reward: float
    utility: float
    requests: int


class RequestHistory:
    """The last ``window - 1`` request vectors, most recent first."""

    def __init__(self, num_contents: int, window: int = 5, decay: float = 0.9):
        if window < 2:
            raise ValueError("EWMA window must be at least 2")
        if not 0.0 < decay < 1.0:
            raise ValueError("EWMA decay must lie in (0, 1)")
        self.num_contents = num_contents
        self.window = window
        self.decay = decay
        self._ring: deque[np.ndarray] = deque(maxlen=window - 1)
        self._weights = decay ** np.arange(1, window, dtype=np.float64)

    def __len__(self) -> int:
        return len(self._ring)

    def push(self, requests) -> None:
        requests = np.asarray(requests, dtype=np.float64)
        if requests.shape != (self.num_contents,):
            raise ValueError(f"request vector must have length {self.num_contents}")
        self._ring.appendleft(requests.copy())

    def clear(self) -> None:
        self._ring.clear()

    def latest(self) -> np.ndarray:
        if not self._ring:
            return np.zeros(self.num_contents)
        return self._ring[0]

    def vectors(self) -> list[np.ndarray]:
        return list(self._ring)


def ewma_observation(history: RequestHistory) -> np.ndarray:
    """Decay-weighted mean of past requests; missing slots count as zeros."""
    total = np.zeros(history.num_contents)
    for weight, past in zip(history._weights, history.vectors()):
        total += weight * past
    return total / history._weights.sum()


def replacement_cost(a_new, a_prev, payments) -> float:
    """Payments for contents fetched this slot. Evictions are free."""
    if isinstance(payments, ContentCatalog):
        payments = payments.payments
    a_new = np.asarray(a_new)
    a_prev = np.asarray(a_prev)
    payments = np.asarray(payments, dtype=np.float64)
    if not (a_new.shape == a_prev.shape == payments.shape):
        raise ValueError("cache vectors and payments must share length C")
    fetched = (a_new == 1) & (a_prev == 0)
    return float(payments[fetched].sum())


def cache_hit_ratio(cached, requests) -> float:
    requests = np.asarray(requests, dtype=np.float64)
    total = requests.sum()
    if total <= 0:
        return 0.0
    return float(np.asarray(cached, dtype=np.float64) @ requests / total)


def project_feasible(raw_action, scores, sizes, capacity_gb: float) -> tuple[CacheState, bool]:
    """Trim an over-budget cache vector down to capacity.

    Cached items are dropped in ascending score order (ties: lowest
    content_id first) until the rest fits. Returns the materialized state and
    whether the raw action broke the budget.
    """
    if isinstance(sizes, ContentCatalog):
        sizes = sizes.sizes
    sizes = np.asarray(sizes, dtype=np.float64)
    cached = (np.asarray(raw_action) != 0).astype(np.int8)
    used = float(cached @ sizes)
    if used <= capacity_gb:
        return CacheState(cached, used), False

    scores = np.zeros(sizes.size) if scores is None else np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(sizes.size), scores))
    for c in order:
        if not cached[c]:
            continue
        cached[c] = 0
        used = float(cached @ sizes)
        if used <= capacity_gb:
            break
    return CacheState(cached, used), True


def slot_reward(chr_: float, cost: float, violated: bool, weights: RewardWeights) -> tuple[float, float]:
    """(reward, utility) of one slot; they differ only by the penalty term."""
    utility = weights.hit * chr_ - weights.cost * cost
    reward = utility - weights.penalty_weight * weights.penalty * (1.0 if violated else 0.0)
    return reward, utility


def env_step(
    prev: CacheState,
    raw_action,
    scores,
    requests,
    weights: RewardWeights,
    catalog: ContentCatalog,
    capacity_gb: float,
    history: Optional[RequestHistory] = None,
) -> tuple[CacheState, SlotOutcome]:
    requests = np.asarray(requests)
    raw_action = np.asarray(raw_action)
    c = catalog.num_contents
    if raw_action.shape != (c,) or requests.shape != (c,) or prev.cached.shape != (c,):
        raise ValueError(f"action, requests and cache must all have length {c}")
    nxt, violated = project_feasible(raw_action, scores, catalog.sizes, capacity_gb)
    cost = replacement_cost(nxt.cached, prev.cached, catalog.payments)
    hit = cache_hit_ratio(nxt.cached, requests)
    reward, utility = slot_reward(hit, cost, violated, weights)
    if history is not None:
        history.push(requests)
    return nxt, SlotOutcome(hit, cost, violated, reward, utility, int(requests.sum()))


class CacheEnv:
    """One edge server: owns its cache, request history and request stream.

    A slot runs placement (the given action, trimmed to capacity), then
    draws this slot's user requests and scores the placement against them.
    """

    def __init__(
        self,
        catalog: ContentCatalog,
        profile: ServerProfile,
        weights: RewardWeights = RewardWeights(),
        window: int = 5,
        decay: float = 0.9,
        rng: Optional[np.random.Generator] = None,
    ):
        self.catalog = catalog
        self.profile = profile
        self.weights = weights
        self.rng = rng if rng is not None else np.random.default_rng()
        self.pmf = mzipf_pmf(profile, catalog.num_contents)
        self.history = RequestHistory(catalog.num_contents, window, decay)
        self.state = CacheState.empty(catalog.num_contents)

    @property
    def num_contents(self) -> int:
        return self.catalog.num_contents

    @property
    def capacity_gb(self) -> float:
        return self.profile.capacity_gb

    def reset(self) -> np.ndarray:
        """Random start: a trimmed random cache and a freshly observed history."""
        self.history.clear()
        for _ in range(self.history.window - 1):
            self.history.push(self.draw_requests())
        bits = self.rng.integers(0, 2, size=self.num_contents)
        self.state, _ = project_feasible(bits, None, self.catalog.sizes, self.capacity_gb)
        return self.observe()

    def draw_requests(self) -> np.ndarray:
        return generate_requests(self.profile, self.pmf, self.rng)

    def observe(self) -> np.ndarray:
        return np.concatenate([ewma_observation(self.history), self.state.cached.astype(np.float64)])

    def step(self, raw_action, scores=None) -> SlotOutcome:
        requests = self.draw_requests()
        self.state, outcome = env_step(
            self.state, raw_action, scores, requests, self.weights, self.catalog,
            self.capacity_gb, self.history,
        )
        return outcome
