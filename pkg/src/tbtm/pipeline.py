"""Record-by-record orchestration of the three layers.

For every record, in ledger order: replay filter, register unseen entities,
split the score into offsets, advance the three trust states, chain the new
values into the registry, classify each entity, and optionally predict the
record's score from the updated states.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

from tbtm.cipher import KeySet, decrypt_field, encrypt_field
from tbtm.control import EntityStatus, ReplayWindow, Thresholds, classify_entity
from tbtm.errors import CipherError
from tbtm.predictor import ErrorSummary, predict_satisfaction, prediction_error
from tbtm.registry import DEFAULT_SECRET, ROLES, Registry, entity_key, split_key
from tbtm.tokenchain import AccessServiceRecord, EncryptedRecord, Ledger, read_records
from tbtm.trust import (
    PAPER_KAPPA,
    OffsetRatio,
    TrustState,
    WeightParams,
    convergence_value,
    next_trust,
    split_offset,
)

log = logging.getLogger(__name__)

TRAJECTORY_CAP = 100_000


@dataclass
class PipelineConfig:
    params: WeightParams = field(default_factory=WeightParams)
    ratio: OffsetRatio = field(default_factory=OffsetRatio)
    thresholds: Thresholds = field(default_factory=Thresholds)
    replay_filter: bool = True
    penalties: bool = True
    predict: bool = False
    kappa: float = PAPER_KAPPA
    track: bool = True
    trajectory_cap: int = TRAJECTORY_CAP
    secret: str = DEFAULT_SECRET


@dataclass(frozen=True)
class TrajectoryPoint:
    n: int
    t: float
    t_prime: float | None
    offset: float

    @property
    def lam(self) -> float | None:
        return None if self.t_prime is None else self.t - self.t_prime

    @property
    def kappa(self) -> float | None:
        lam = self.lam
        return None if lam is None or self.offset == 0 else lam / self.offset


@dataclass(frozen=True)
class PredictionRow:
    index: int
    keys: tuple[str, str, str]
    score: float
    predicted: float | None
    omega: float | None


class TrustPipeline:
    def __init__(self, config: PipelineConfig | None = None, keys: KeySet | None = None) -> None:
        self.config = config or PipelineConfig()
        self.keys = keys
        self.registry = Registry(replay=self._replay_history)
        self.states: dict[str, TrustState] = {}
        self.statuses: dict[str, EntityStatus] = {}
        self.trajectories: dict[str, list[TrajectoryPoint]] = {}
        self.predictions: list[PredictionRow] = []
        self.pairs: dict[tuple[str, str], int] = {}
        self.s_max: float | None = None
        self.processed = 0
        self.applied = 0
        self.replays = 0
        self.blocked = 0
        self._window = ReplayWindow(self.config.thresholds.tau) if self.config.replay_filter else None
        self._token_cache: dict[str, bytes] = {}
        self._applied_records: list[EncryptedRecord] = []
        self._replay_cache: tuple[int, dict[str, list[float]]] | None = None

    # -- input ---------------------------------------------------------------

    def _token(self, text: str) -> bytes:
        token = self._token_cache.get(text)
        if token is None:
            if self.keys is None:
                raise ValueError("plaintext records need a KeySet")
            token = self._token_cache[text] = encrypt_field(text, self.keys)
        return token

    def encrypt(self, record: AccessServiceRecord) -> EncryptedRecord:
        return EncryptedRecord(
            self._token(record.s), self._token(record.o), self._token(record.e), record.score, record.s_max
        )

    def run(self, records: Iterable[AccessServiceRecord | EncryptedRecord]) -> "TrustPipeline":
        for record in records:
            if isinstance(record, AccessServiceRecord):
                record = self.encrypt(record)
            self.process(record)
        return self

    def run_ledger(self, ledger: Ledger) -> "TrustPipeline":
        return self.run(read_records(ledger))

    # -- per record ----------------------------------------------------------

    def process(self, record: EncryptedRecord) -> bool:
        """Apply one record. Returns False when it was filtered as a replay or blocked."""
        cfg = self.config
        index = self.processed
        self.processed += 1
        if self._window is not None and not self._window.accept(record.tuple):
            self.replays += 1
            return False
        pks = (entity_key("s", record.cs), entity_key("o", record.co), entity_key("e", record.ce))
        if cfg.penalties and any(self.statuses.get(pk) is EntityStatus.MALICIOUS for pk in pks):
            self.blocked += 1
            return False
        for pk in pks:
            if pk not in self.states:
                self.registry.register_entity(pk, cfg.secret, cfg.params.t0)
                self.states[pk] = TrustState.seed(cfg.params.t0)
                self.statuses[pk] = EntityStatus.NORMAL
        if self.s_max is None:
            self.s_max = record.s_max
        offsets = split_offset(record.score, record.s_max, cfg.ratio)
        for pk, offset in zip(pks, offsets):
            state = self.states[pk]
            value = next_trust(state, offset, cfg.params)
            status, adjusted = classify_entity(value, cfg.thresholds)
            if cfg.penalties:
                value = adjusted
            state = state.append(value, offset)
            self.states[pk] = state
            self.statuses[pk] = status
            self.registry.store_trust(pk, value)
            if cfg.track:
                points = self.trajectories.setdefault(pk, [])
                if len(points) < cfg.trajectory_cap:
                    points.append(TrajectoryPoint(state.n - 1, value, convergence_value(state, offset, cfg.params), offset))
        self.pairs[(pks[1], pks[2])] = self.pairs.get((pks[1], pks[2]), 0) + 1
        self._applied_records.append(record)
        self.applied += 1
        if cfg.predict:
            pred = predict_satisfaction(
                *(self.states[pk] for pk in pks), offsets, cfg.params, cfg.kappa, record.s_max
            )
            self.predictions.append(
                PredictionRow(index, pks, record.score, pred.value, prediction_error(record.score, pred))
            )
        return True

    # -- repair source ------------------------------------------------------

    def _replay_history(self, pk: str) -> list[float]:
        """Authoritative history of ``pk``: re-derive every trust value from the applied records."""
        count = len(self._applied_records)
        if self._replay_cache is None or self._replay_cache[0] != count:
            cfg = self.config
            fresh = TrustPipeline(
                PipelineConfig(
                    params=cfg.params,
                    ratio=cfg.ratio,
                    thresholds=cfg.thresholds,
                    replay_filter=False,
                    penalties=cfg.penalties,
                    track=False,
                    secret=cfg.secret,
                )
            )
            fresh.run(self._applied_records)
            self._replay_cache = (count, {k: fresh.registry.get_history(k) for k in fresh.registry.entities()})
        return list(self._replay_cache[1][pk])

    # -- views ---------------------------------------------------------------

    def label(self, pk: str) -> str:
        """Plaintext identity behind ``pk`` when the keys are known, else the key itself."""
        role, token = split_key(pk)
        if self.keys is None:
            return pk
        try:
            return decrypt_field(token, self.keys).decode("utf-8")
        except (CipherError, UnicodeDecodeError):
            return pk

    def key_of(self, role: str, identity: str) -> str:
        return entity_key(role, self._token(identity))

    def role_entities(self, role: str) -> list[str]:
        return [pk for pk in self.states if pk.startswith(role + ":")]

    def prediction_summary(self) -> ErrorSummary:
        return ErrorSummary.of(row.omega for row in self.predictions)

    def run_rows(self, pk: str) -> list[tuple[float, float | None, float]]:
        return [(p.t, p.t_prime, p.offset) for p in self.trajectories.get(pk, [])]

    # -- export --------------------------------------------------------------

    def write_trajectories(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["role", "entity", "n", "T", "Tprime", "lambda", "kappa"])
            for pk in sorted(self.trajectories, key=lambda k: (ROLES.index(k[0]), self.label(k))):
                role, label = pk[0], self.label(pk)
                for p in self.trajectories[pk]:
                    w.writerow([role, label, p.n, _num(p.t), _num(p.t_prime), _num(p.lam), _num(p.kappa)])

    def write_predictions(self, out: str | Path | TextIO) -> None:
        if isinstance(out, (str, Path)):
            with open(out, "w", encoding="utf-8", newline="") as fh:
                self.write_predictions(fh)
            return
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["s", "o", "e", "score", "P", "omega"])
        for row in self.predictions:
            w.writerow([*(self.label(pk) for pk in row.keys), _num(row.score), _num(row.predicted), _num(row.omega)])

    def write_states(self, path: str | Path) -> None:
        payload = {
            "s_max": self.s_max,
            "kappa": self.config.kappa,
            "states": {
                pk: {
                    "n": st.n,
                    "last": st.last,
                    "sum": st.sum,
                    "sum_sq": st.sum_sq,
                    "offset_sum": st.offset_sum,
                    "avg": st.avg,
                    "m2": st.m2,
                    "status": self.statuses[pk].value,
                }
                for pk, st in sorted(self.states.items())
            },
            "pairs": sorted([o, e] for o, e in self.pairs),
        }
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def save(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.registry.save(out_dir / "registry")
        self.write_states(out_dir / "states.json")
        if self.config.track:
            self.write_trajectories(out_dir / "trajectories.csv")
        if self.config.predict:
            self.write_predictions(out_dir / "predictions.csv")


def load_states(path: str | Path) -> tuple[dict, dict[str, TrustState], dict[str, EntityStatus], list[tuple[str, str]]]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    states, statuses = {}, {}
    for pk, st in payload["states"].items():
        states[pk] = TrustState(
            st["n"], st["last"], st["sum"], st["sum_sq"], st["offset_sum"], st["avg"], st["m2"]
        )
        statuses[pk] = EntityStatus(st["status"])
    pairs = [tuple(p) for p in payload["pairs"]]
    return payload, states, statuses, pairs


def _num(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def run_pipeline(
    records: Iterable[AccessServiceRecord | EncryptedRecord],
    params: WeightParams | None = None,
    config: PipelineConfig | None = None,
    keys: KeySet | None = None,
) -> TrustPipeline:
    config = config or PipelineConfig()
    if params is not None:
        config.params = params
    return TrustPipeline(config, keys).run(records)
