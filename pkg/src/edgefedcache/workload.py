"""Content catalog and per-server request generation.

Popularity follows a Mandelbrot-Zipf law over content ranks; each user
issues exactly one request per slot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

DEFAULT_SIZE_RANGE = (1.0, 8.0)
DEFAULT_PAYMENT_RANGE = (0.05, 0.5)


class ContentItem(NamedTuple):
    content_id: int
    size_gb: float
    payment: float


@dataclass(frozen=True)
class ContentCatalog:
    """Sizes (GB) and download payments (HKD), indexed by ``content_id - 1``."""

    sizes: np.ndarray
    payments: np.ndarray

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=np.float64)
        payments = np.asarray(self.payments, dtype=np.float64)
        if sizes.ndim != 1 or sizes.shape != payments.shape or sizes.size == 0:
            raise ValueError("catalog needs equal-length, nonempty size and payment vectors")
        if not (np.all(np.isfinite(sizes)) and np.all(sizes > 0)):
            raise ValueError("content sizes must be positive and finite")
        if not (np.all(np.isfinite(payments)) and np.all(payments > 0)):
            raise ValueError("content payments must be positive and finite")
        sizes.setflags(write=False)
        payments.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "payments", payments)

    @property
    def num_contents(self) -> int:
        return int(self.sizes.size)

    @property
    def items(self) -> list[ContentItem]:
        return [
            ContentItem(c + 1, float(s), float(p))
            for c, (s, p) in enumerate(zip(self.sizes, self.payments))
        ]

    def to_dict(self) -> dict:
        return {"sizes": self.sizes.tolist(), "payments": self.payments.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "ContentCatalog":
        return cls(np.array(data["sizes"], dtype=np.float64), np.array(data["payments"], dtype=np.float64))


@dataclass(frozen=True)
class ServerProfile:
    """One edge server's popularity parameters, population and storage.

    ``rank_of[c - 1]`` is the popularity rank of content ``c``. ``None``
    means the identity ranking (content 1 is the most popular).
    """

    server_id: int
    plateau_q: float
    zipf_k: float
    num_users: int
    capacity_gb: float
    rank_of: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.server_id < 1:
            raise ValueError("server_id starts at 1")
        if not math.isfinite(self.plateau_q) or self.plateau_q < 0:
            raise ValueError("plateau_q must be finite and nonnegative")
        if not math.isfinite(self.zipf_k) or self.zipf_k <= 0:
            raise ValueError("zipf_k must be finite and positive")
        if self.num_users < 1:
            raise ValueError("num_users must be at least 1")
        if not math.isfinite(self.capacity_gb) or self.capacity_gb <= 0:
            raise ValueError("capacity_gb must be positive")
        if self.rank_of is not None:
            ranks = tuple(int(r) for r in self.rank_of)
            if sorted(ranks) != list(range(1, len(ranks) + 1)):
                raise ValueError("rank_of must be a permutation of 1..C")
            object.__setattr__(self, "rank_of", ranks)

    def ranks(self, num_contents: int) -> np.ndarray:
        if self.rank_of is None:
            return np.arange(1, num_contents + 1, dtype=np.float64)
        if len(self.rank_of) != num_contents:
            raise ValueError(f"rank_of covers {len(self.rank_of)} contents, expected {num_contents}")
        return np.array(self.rank_of, dtype=np.float64)


def mzipf_pmf(profile: ServerProfile, num_contents: int) -> np.ndarray:
    """Mandelbrot-Zipf request probabilities, indexed by ``content_id - 1``."""
    if num_contents < 1:
        raise ValueError("need at least one content")
    q, k = float(profile.plateau_q), float(profile.zipf_k)
    if not (math.isfinite(q) and math.isfinite(k)):
        raise ValueError("plateau and Zipf factors must be finite")
    weights = (profile.ranks(num_contents) + q) ** (-k)
    return weights / weights.sum()


def generate_requests(
    profile: ServerProfile,
    pmf: np.ndarray,
    rng: np.random.Generator,
    num_users: Optional[int] = None,
) -> np.ndarray:
    """Per-content request counts for one slot.

    Every user draws one content independently from ``pmf``, so the counts
    are multinomial and sum to the number of users. ``num_users`` overrides
    the profile's population (zero is allowed here).
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.ndim != 1 or np.any(pmf < 0) or not np.isclose(pmf.sum(), 1.0, rtol=0, atol=1e-9):
        raise ValueError("pmf must be a probability vector")
    users = profile.num_users if num_users is None else int(num_users)
    if users < 0:
        raise ValueError("num_users must be nonnegative")
    return rng.multinomial(users, pmf).astype(np.int64)


def _check_range(name: str, bounds: Sequence[float]) -> tuple[float, float]:
    if len(bounds) != 2:
        raise ValueError(f"{name} must be a (low, high) pair")
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo <= 0 or lo > hi:
        raise ValueError(f"{name} must satisfy 0 < low <= high, got {bounds!r}")
    return lo, hi


def sample_catalog(
    num_contents: int,
    size_range: Sequence[float] = DEFAULT_SIZE_RANGE,
    payment_range: Sequence[float] = DEFAULT_PAYMENT_RANGE,
    rng: Optional[np.random.Generator] = None,
) -> ContentCatalog:
    if num_contents < 1:
        raise ValueError("need at least one content")
    s_lo, s_hi = _check_range("size_range", size_range)
    p_lo, p_hi = _check_range("payment_range", payment_range)
    rng = rng if rng is not None else np.random.default_rng()
    sizes = rng.uniform(s_lo, s_hi, size=num_contents)
    payments = rng.uniform(p_lo, p_hi, size=num_contents)
    return ContentCatalog(sizes, payments)


def permuted_ranks(num_contents: int, rng: np.random.Generator) -> tuple[int, ...]:
    """A random popularity ranking, for servers whose favourite contents differ."""
    return tuple(int(r) for r in rng.permutation(num_contents) + 1)
