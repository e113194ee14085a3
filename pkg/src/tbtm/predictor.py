"""Service-satisfaction prediction from the trust states of requester, provider and service.

For each role x the converged trust relation ``T_n - kappa*S_x = T'_n`` is
solved for the offset, giving::

    P = sum_x (-delta/alpha) * s_max * sqrt(mean(T_x^2) - (T_x,n - kappa*S_x)^2)

A negative radicand for any role leaves the prediction undefined; undefined
predictions are skipped by the error statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

from tbtm.trust import TrustOffsetSplit, TrustState, WeightParams


@dataclass(frozen=True)
class Prediction:
    value: float | None
    omega: float | None = None

    @property
    def defined(self) -> bool:
        return self.value is not None


def role_term(state: TrustState, offset: float, params: WeightParams, kappa: float, s_max: float) -> float | None:
    rad = state.mean_sq - (state.last - kappa * offset) ** 2
    if rad < 0:
        return None
    return -params.delta / params.alpha * s_max * math.sqrt(rad)


def predict_satisfaction(
    state_s: TrustState,
    state_o: TrustState,
    state_e: TrustState,
    offsets: TrustOffsetSplit,
    params: WeightParams,
    kappa: float,
    s_max: float,
) -> Prediction:
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    total = 0.0
    for state, offset in zip((state_s, state_o, state_e), offsets):
        term = role_term(state, offset, params, kappa, s_max)
        if term is None:
            return Prediction(None)
        total += term
    return Prediction(total)


def prediction_error(score: float, pred: Prediction) -> float | None:
    if pred.value is None:
        return None
    return score - pred.value


@dataclass
class ErrorSummary:
    """Aggregate of prediction errors; undefined predictions are counted but not used."""

    omegas: list[float] = field(default_factory=list)
    undefined: int = 0

    def add(self, omega: float | None) -> None:
        if omega is None:
            self.undefined += 1
        else:
            self.omegas.append(omega)

    @classmethod
    def of(cls, omegas: Iterable[float | None]) -> "ErrorSummary":
        summary = cls()
        for w in omegas:
            summary.add(w)
        return summary

    @property
    def defined(self) -> int:
        return len(self.omegas)

    def fraction_within(self, lo: float, hi: float) -> float:
        if not self.omegas:
            return float("nan")
        return sum(lo <= w <= hi for w in self.omegas) / len(self.omegas)

    @property
    def mean(self) -> float:
        return math.fsum(self.omegas) / len(self.omegas) if self.omegas else float("nan")

    @property
    def mean_abs(self) -> float:
        return math.fsum(abs(w) for w in self.omegas) / len(self.omegas) if self.omegas else float("nan")
