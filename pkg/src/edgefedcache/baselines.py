"""Non-learning cache policies: LRU, LFU and Random.

LRU and LFU are demand driven. Every content requested in the observed slot
but not cached is admitted (most requested first); room is made by evicting
cached contents that were *not* requested in that slot, oldest access (LRU)
or fewest cumulative requests (LFU) first. Ties go to the lowest content id.
A candidate that cannot fit even after evicting every evictable content is
skipped, and nothing is evicted for it.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .agent import EpisodeStats, summarize
from .env import CacheEnv, project_feasible


def _demand_admit(requests, cached, sizes, capacity_gb: float, evict_rank) -> np.ndarray:
    requests = np.asarray(requests)
    sizes = np.asarray(sizes, dtype=np.float64)
    cached = (np.asarray(cached) != 0).astype(np.int8)
    n = sizes.size
    if requests.shape != (n,) or cached.shape != (n,):
        raise ValueError(f"requests and cache must have length {n}")
    requested = requests > 0
    ids = np.arange(n)
    for c in np.lexsort((ids, -requests)):
        if not requested[c] or cached[c] or sizes[c] > capacity_gb:
            continue
        evictable = [i for i in ids if cached[i] and not requested[i]]
        if float(cached @ sizes) - float(sizes[evictable].sum()) + sizes[c] > capacity_gb:
            continue
        evictable.sort(key=lambda i: (evict_rank[i], i))
        for i in evictable:
            if float(cached @ sizes) + sizes[c] <= capacity_gb:
                break
            cached[i] = 0
        cached[c] = 1
    state, _ = project_feasible(cached, None, sizes, capacity_gb)
    return state.cached


class LRUPolicy:
    name = "lru"

    def __init__(self, num_contents: int):
        self.last_access = np.full(num_contents, -1, dtype=np.int64)
        self.slot = 0

    def decide(self, requests, cached, sizes, capacity_gb: float) -> np.ndarray:
        requests = np.asarray(requests)
        self.last_access[requests > 0] = self.slot
        self.slot += 1
        return _demand_admit(requests, cached, sizes, capacity_gb, self.last_access)


class LFUPolicy:
    name = "lfu"

    def __init__(self, num_contents: int):
        self.counts = np.zeros(num_contents, dtype=np.int64)

    def decide(self, requests, cached, sizes, capacity_gb: float) -> np.ndarray:
        requests = np.asarray(requests)
        self.counts += requests.astype(np.int64)
        return _demand_admit(requests, cached, sizes, capacity_gb, self.counts)


class RandomPolicy:
    name = "random"

    def __init__(self, num_contents: int, rng: Optional[np.random.Generator] = None):
        self.num_contents = num_contents
        self.rng = rng if rng is not None else np.random.default_rng()

    def decide(self, requests, cached, sizes, capacity_gb: float) -> np.ndarray:
        return random_decide(self.num_contents, sizes, capacity_gb, self.rng)


def lru_decide(state: LRUPolicy, requests, cache, catalog, capacity_gb: float) -> np.ndarray:
    return state.decide(requests, cache, catalog.sizes, capacity_gb)


def lfu_decide(state: LFUPolicy, requests, cache, catalog, capacity_gb: float) -> np.ndarray:
    return state.decide(requests, cache, catalog.sizes, capacity_gb)


def random_decide(num_contents: int, sizes, capacity_gb: float, rng: np.random.Generator) -> np.ndarray:
    bits = rng.integers(0, 2, size=num_contents)
    state, _ = project_feasible(bits, np.zeros(num_contents), sizes, capacity_gb)
    return state.cached


def make_policy(name: str, num_contents: int, rng: Optional[np.random.Generator] = None):
    if name == "lru":
        return LRUPolicy(num_contents)
    if name == "lfu":
        return LFUPolicy(num_contents)
    if name == "random":
        return RandomPolicy(num_contents, rng)
    raise ValueError(f"unknown baseline policy {name!r}")


def run_baseline_episode(policy, env: CacheEnv, slots: int) -> EpisodeStats:
    """Each slot, place the cache from the previous slot's observed requests."""
    if slots < 1:
        raise ValueError("an episode needs at least one slot")
    env.reset()
    outcomes = []
    for _ in range(slots):
        action = policy.decide(env.history.latest(), env.state.cached, env.catalog.sizes, env.capacity_gb)
        outcomes.append(env.step(action, None))
    return summarize(outcomes)
