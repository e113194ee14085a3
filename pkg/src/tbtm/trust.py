"""Computing layer: trust offsets, the four-statistic update and its convergence analysis.

Every entity carries running statistics over its trust history
``T_0, T_1, ..., T_n`` (count, last value, sum, sum of squares), so one update
costs O(1) regardless of history length::

    T_{n+1} = alpha*S + beta*T_n + gamma*mean(T) + delta*std(T)

with the population standard deviation. For a fixed score the sequence
settles near ``T'_n = sqrt(mean(T^2) - alpha^2 S^2 / delta^2)``; the gap
``lambda = T_n - T'_n`` is roughly proportional to the offset ``S``
(``lambda ~ kappa * S``).

Undefined results (a negative radicand, a zero offset in ``kappa``) are
returned as ``None`` rather than raised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from tbtm.errors import DomainError

PAPER_KAPPA = 0.05311685
BURN_IN = 1000


@dataclass(frozen=True)
class WeightParams:
    alpha: float = 0.05
    beta: float = 0.5
    gamma: float = 0.5
    delta: float = -0.5
    t0: float = 0.1

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise DomainError(f"alpha must be > 0, got {self.alpha}")
        if not (self.beta > 0 and self.gamma > 0):
            raise DomainError("beta and gamma must both be > 0")
        if abs(self.beta + self.gamma - 1.0) > 1e-12:
            raise DomainError(f"beta + gamma must equal 1, got {self.beta + self.gamma}")
        if not self.delta < 0:
            raise DomainError(f"delta must be < 0, got {self.delta}")


@dataclass(frozen=True)
class OffsetRatio:
    rs: int = 1
    ro: int = 3
    re: int = 2

    def __post_init__(self) -> None:
        if min(self.rs, self.ro, self.re) <= 0:
            raise DomainError("offset ratio parts must be positive")

    @classmethod
    def parse(cls, text: str) -> "OffsetRatio":
        parts = text.replace(",", ":").split(":")
        if len(parts) != 3:
            raise DomainError(f"ratio must look like 1:3:2, got {text!r}")
        return cls(*(int(p) for p in parts))

    def __str__(self) -> str:
        return f"{self.rs}:{self.ro}:{self.re}"


@dataclass(frozen=True)
class TrustOffsetSplit:
    s_s: float
    s_o: float
    s_e: float

    def __iter__(self):
        return iter((self.s_s, self.s_o, self.s_e))

    @property
    def total(self) -> float:
        return self.s_s + self.s_o + self.s_e


def split_offset(score: float, s_max: float, ratio: OffsetRatio = OffsetRatio()) -> TrustOffsetSplit:
    """Share the normalized score ``score / s_max`` among requester, provider and service."""
    if not s_max > 0:
        raise DomainError(f"s_max must be > 0, got {s_max}")
    if not 0 <= score <= s_max:
        raise DomainError(f"score {score} outside [0, {s_max}]")
    share = score / s_max
    total = ratio.rs + ratio.ro + ratio.re
    return TrustOffsetSplit(share * ratio.rs / total, share * ratio.ro / total, share * ratio.re / total)


@dataclass(frozen=True)
class TrustState:
    """Running statistics of one entity's trust history.

    ``sum`` and ``sum_sq`` give the mean and mean square. The standard
    deviation comes from Welford's running ``avg``/``m2`` pair instead of
    ``sum_sq - n*mean^2``, which cancels catastrophically on flat histories.
    ``offset_sum`` accumulates the offsets the entity has received; it only
    feeds the mean offset used when predicting an interaction whose score is
    not known yet.
    """

    n: int
    last: float
    sum: float
    sum_sq: float
    offset_sum: float = 0.0
    avg: float = 0.0
    m2: float = 0.0

    @classmethod
    def seed(cls, t0: float) -> "TrustState":
        return cls(n=1, last=t0, sum=t0, sum_sq=t0 * t0, avg=t0)

    @classmethod
    def from_history(cls, history: Sequence[float], offset_sum: float = 0.0) -> "TrustState":
        if not history:
            raise ValueError("history must contain at least T_0")
        state = cls.seed(history[0])
        for t in history[1:]:
            state = state.append(t)
        return TrustState(
            n=state.n,
            last=state.last,
            sum=math.fsum(history),
            sum_sq=math.fsum(t * t for t in history),
            offset_sum=offset_sum,
            avg=state.avg,
            m2=state.m2,
        )

    @property
    def mean(self) -> float:
        return self.sum / self.n

    @property
    def mean_sq(self) -> float:
        return self.sum_sq / self.n

    @property
    def std(self) -> float:
        # Clamped: m2 never goes negative in exact arithmetic.
        return math.sqrt(max(0.0, self.m2 / self.n))

    @property
    def mean_offset(self) -> float:
        """Average offset over the updates applied so far (0 before any update)."""
        updates = self.n - 1
        return self.offset_sum / updates if updates else 0.0

    def append(self, value: float, offset: float = 0.0) -> "TrustState":
        n = self.n + 1
        diff = value - self.avg
        avg = self.avg + diff / n
        return TrustState(
            n=n,
            last=value,
            sum=self.sum + value,
            sum_sq=self.sum_sq + value * value,
            offset_sum=self.offset_sum + offset,
            avg=avg,
            m2=self.m2 + diff * (value - avg),
        )


def next_trust(state: TrustState, offset: float, params: WeightParams) -> float:
    return (
        params.alpha * offset
        + params.beta * state.last
        + params.gamma * state.mean
        + params.delta * state.std
    )


def update_trust(state: TrustState, offset: float, params: WeightParams) -> tuple[TrustState, float]:
    """Apply one record's offset; returns the advanced state and ``T_{n+1}``."""
    if not 0.0 <= offset <= 1.0:
        raise DomainError(f"offset {offset} outside [0, 1]")
    value = next_trust(state, offset, params)
    return state.append(value, offset), value


def _convergence_radicand(state: TrustState, offset: float, params: WeightParams) -> float:
    return state.mean_sq - (params.alpha * offset / params.delta) ** 2


def convergence_value(state: TrustState, offset: float, params: WeightParams) -> float | None:
    """``T'_n = sqrt(mean(T^2) - alpha^2 S^2 / delta^2)``, or None if the radicand is negative."""
    rad = _convergence_radicand(state, offset, params)
    if rad < 0:
        return None
    return math.sqrt(rad)


def convergence_feasible(state: TrustState, offset: float, params: WeightParams) -> bool:
    """Whether ``sum(T_i^2) >= n alpha^2 S^2 / delta^2`` holds for this state."""
    return state.sum_sq >= state.n * (params.alpha * offset) ** 2 / params.delta**2


def offset_error(t_n: float, t_prime: float | None) -> float | None:
    if t_prime is None:
        return None
    return t_n - t_prime


def kappa_of(lam: float | None, offset: float) -> float | None:
    if lam is None or offset == 0:
        return None
    return lam / offset


@dataclass(frozen=True)
class ErrorStats:
    lam: float | None
    kappa: float | None

    @classmethod
    def of(cls, state: TrustState, offset: float, params: WeightParams) -> "ErrorStats":
        lam = offset_error(state.last, convergence_value(state, offset, params))
        return cls(lam, kappa_of(lam, offset))


def estimate_kappa(run: Iterable[tuple[float, float | None, float]], burn_in: int = BURN_IN) -> float:
    """Mean ``kappa`` over a run's ``(T_n, T'_n, offset)`` rows after the burn-in.

    Rows with an undefined ``T'_n`` or a zero offset carry no ``kappa`` and are
    skipped.
    """
    total = 0.0
    count = 0
    for i, (t_n, t_prime, offset) in enumerate(run):
        if i < burn_in:
            continue
        kappa = kappa_of(offset_error(t_n, t_prime), offset)
        if kappa is not None:
            total += kappa
            count += 1
    if count == 0:
        raise ValueError(f"no defined kappa after a burn-in of {burn_in} rows")
    return total / count


def kappa_or_default(run: Sequence[tuple[float, float | None, float]], burn_in: int = BURN_IN) -> float:
    """Run estimate of ``kappa`` when the run is long enough, else the published constant."""
    try:
        return estimate_kappa(run, burn_in)
    except ValueError:
        return PAPER_KAPPA
