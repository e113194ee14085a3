"""Control layer: punishment lists, difficulty incentive, replay filtering, recommendation."""

from __future__ import annotations

import enum
import math
from collections import Counter, deque
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

from tbtm.errors import DomainError
from tbtm.trust import PAPER_KAPPA, TrustOffsetSplit, TrustState, WeightParams

DEFAULT_TAU = 1000


class EntityStatus(enum.Enum):
    NORMAL = "Normal"
    WARNING = "Warning"
    MALICIOUS = "Malicious"


@dataclass(frozen=True)
class Thresholds:
    mu: float = 0.08
    nu: float = 0.05
    epsilon: float = -0.01
    tau: int = DEFAULT_TAU

    def __post_init__(self) -> None:
        if not self.mu > self.nu:
            raise DomainError(f"warning threshold mu={self.mu} must exceed malicious threshold nu={self.nu}")
        if not self.epsilon < 0:
            raise DomainError(f"epsilon must be negative, got {self.epsilon}")
        if self.tau < 1:
            raise DomainError("tau must be >= 1")


def classify_entity(t: float, th: Thresholds) -> tuple[EntityStatus, float]:
    if t > th.mu:
        return EntityStatus.NORMAL, t
    if t > th.nu:
        return EntityStatus.WARNING, t + th.epsilon
    return EntityStatus.MALICIOUS, t


def dynamic_thresholds(global_trusts: Sequence[float], base: Thresholds = Thresholds()) -> Thresholds:
    """Derive ``mu = mean - std`` and ``nu = mean - 2 std`` from the latest trust values.

    Degenerate spreads (no variance, or both levels floored at 0) fall back to
    ``(0.9 c, 0.8 c)`` around the mean ``c``.
    """
    if not global_trusts:
        raise ValueError("need at least one trust value")
    n = len(global_trusts)
    mean = math.fsum(global_trusts) / n
    std = math.sqrt(max(0.0, math.fsum((t - mean) ** 2 for t in global_trusts) / n))
    mu = max(0.0, mean - std)
    nu = max(0.0, mean - 2 * std)
    if not mu > nu:
        mu, nu = 0.9 * mean, 0.8 * mean
    if not mu > nu:
        # Mean of zero or below: nothing sensible to track, keep the configured levels.
        return base
    return Thresholds(mu=mu, nu=nu, epsilon=base.epsilon, tau=base.tau)


def mining_difficulty(t: float, base: int = 20, scale: float = 16.0, floor: int = 4) -> int:
    """Leading-zero-bit target for a miner with trust ``t``: higher trust mines easier."""
    if not base >= floor >= 0:
        raise DomainError("need base >= floor >= 0")
    return min(base, max(floor, base - round(scale * t)))


class ReplayWindow:
    """Sliding window over the last ``tau`` accepted records.

    A record is a replay when an identical ``(s, o, e, score)`` tuple was
    accepted within the window; replays are not counted again.
    """

    def __init__(self, tau: int = DEFAULT_TAU) -> None:
        if tau < 1:
            raise DomainError("tau must be >= 1")
        self.tau = tau
        self._recent: deque[Hashable] = deque()
        self._counts: Counter = Counter()

    def is_replay(self, key: Hashable) -> bool:
        return self._counts[key] > 0

    def accept(self, key: Hashable) -> bool:
        """Return True and remember ``key`` unless it replays something in the window."""
        if self._counts[key] > 0:
            return False
        self._recent.append(key)
        self._counts[key] += 1
        if len(self._recent) > self.tau:
            old = self._recent.popleft()
            self._counts[old] -= 1
            if not self._counts[old]:
                del self._counts[old]
        return True


def detect_replay(record_key: Hashable, recent: Iterable[Hashable]) -> bool:
    """True when ``record_key`` already occurs in ``recent`` (the last ``tau`` accepted keys)."""
    return any(k == record_key for k in recent)


def filter_replays(keys: Iterable[Hashable], tau: int = DEFAULT_TAU) -> list[int]:
    """Indices of the records kept after replay filtering."""
    window = ReplayWindow(tau)
    return [i for i, key in enumerate(keys) if window.accept(key)]


@dataclass(frozen=True)
class Recommendation:
    o: str
    e: str
    predicted: float | None
    provider_trust: float


def recommend(
    candidates: Iterable[tuple[str, str]],
    s: str,
    states: Mapping[str, TrustState],
    k: int = 10,
    params: WeightParams = WeightParams(),
    kappa: float = PAPER_KAPPA,
    s_max: float = 10.0,
    statuses: Mapping[str, EntityStatus] | None = None,
) -> list[Recommendation]:
    """Rank candidate ``(o, e)`` pairs for requester ``s`` by predicted satisfaction.

    ``candidates`` and ``s`` are registry keys. The score of a future
    interaction is unknown, so each entity's mean historical offset stands in
    for ``S_x``. Pairs touching a Malicious entity are dropped; undefined
    predictions sort last; ties go to the higher provider trust, then the key.
    """
    from tbtm.predictor import predict_satisfaction

    statuses = statuses or {}
    state_s = states[s]
    ranked = []
    for o, e in candidates:
        if EntityStatus.MALICIOUS in (statuses.get(o), statuses.get(e)):
            continue
        state_o, state_e = states[o], states[e]
        offsets = TrustOffsetSplit(state_s.mean_offset, state_o.mean_offset, state_e.mean_offset)
        pred = predict_satisfaction(state_s, state_o, state_e, offsets, params, kappa, s_max)
        ranked.append(Recommendation(o, e, pred.value, state_o.last))
    ranked.sort(
        key=lambda r: (r.predicted is None, -(r.predicted or 0.0), -r.provider_trust, r.o, r.e)
    )
    return ranked[:k]
