"""Record generators for the simulated datasets, On-off attack streams and external corpora."""

from __future__ import annotations

import csv
import enum
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

from tbtm.errors import DomainError, IngestError
from tbtm.tokenchain import AccessServiceRecord

DEFAULT_N = 10_000
DEFAULT_PERIOD = 200
ON_SCORE = 10.0
OFF_SCORE = 1.0
MOVIELENS_S_MAX = 5.0
SENSOR_S_MAX = 24.0


class DatasetKind(enum.Enum):
    FIXED = "fixed"
    ONOFF = "onoff"
    SENSOR = "sensor"
    EXTERNAL = "external"


@dataclass(frozen=True)
class DatasetSpec:
    kind: DatasetKind
    n: int
    s_max: float
    score: float | None = None
    entities: tuple[str, str, str] = ("honestSR", "honestSP", "honestService")
    pattern: int | None = None
    period: int = DEFAULT_PERIOD

    def __post_init__(self) -> None:
        if self.n < 1:
            raise DomainError("a dataset needs at least one record")
        if self.score is not None and not 0 <= self.score <= self.s_max:
            raise DomainError(f"score {self.score} outside [0, {self.s_max}]")


PRESETS: dict[str, DatasetSpec] = {
    "dataset_1": DatasetSpec(DatasetKind.FIXED, DEFAULT_N, 10.0, 5.0, ("honestSR", "honestSP", "honestService")),
    "dataset_2_1": DatasetSpec(DatasetKind.FIXED, DEFAULT_N, 10.0, 1.0, ("maliciousSR", "honestSP", "honestService")),
    "dataset_2_2": DatasetSpec(
        DatasetKind.FIXED, DEFAULT_N, 10.0, 10.0, ("maliciousSR", "maliciousSP", "maliciousService")
    ),
}
ALIASES = {"d1": "dataset_1", "d2_1": "dataset_2_1", "d2_2": "dataset_2_2"}


def preset(name: str, n: int | None = None) -> DatasetSpec:
    spec = PRESETS[ALIASES.get(name, name)]
    if n is not None:
        spec = DatasetSpec(spec.kind, n, spec.s_max, spec.score, spec.entities)
    return spec


def gen_fixed(
    n: int, score: float, s_max: float, ids: tuple[str, str, str] = ("honestSR", "honestSP", "honestService")
) -> list[AccessServiceRecord]:
    if n < 1:
        raise DomainError("n must be >= 1")
    record = AccessServiceRecord(*ids, score, s_max)
    return [record] * n


def gen_preset(name: str, n: int = DEFAULT_N) -> list[AccessServiceRecord]:
    spec = preset(name, n)
    return gen_fixed(spec.n, spec.score, spec.s_max, spec.entities)


def onoff_states(pattern: int, n: int, period: int = DEFAULT_PERIOD, seed: int = 0) -> list[bool]:
    """On/off flags for the four On-off attack patterns.

    1: first half of every period on, second half off.
    2: the mirror of 1.
    3: 50 on/off pairs per period (blocks of period/100 records, 2 at the default period).
    4: random switch points, drawn per period from a seeded generator.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    if period < 2 or period % 2:
        raise DomainError("period must be an even count >= 2")
    half = period // 2
    if pattern == 1:
        return [i % period < half for i in range(n)]
    if pattern == 2:
        return [i % period >= half for i in range(n)]
    if pattern == 3:
        block = max(1, period // 100)
        return [(i // block) % 2 == 0 for i in range(n)]
    if pattern == 4:
        rng = random.Random(seed)
        flags: list[bool] = []
        state = rng.random() < 0.5
        while len(flags) < n:
            switches = set(rng.sample(range(period), rng.randint(1, half)))
            for k in range(period):
                if k in switches:
                    state = not state
                flags.append(state)
        return flags[:n]
    raise DomainError(f"unknown On-off pattern {pattern} (expected 1-4)")


def gen_onoff(
    pattern: int,
    period_c: int = DEFAULT_PERIOD,
    n: int = DEFAULT_N,
    s_max: float = 10.0,
    seed: int = 0,
    ids: tuple[str, str, str] = ("onoffSR", "onoffSP", "onoffService"),
) -> list[AccessServiceRecord]:
    on = AccessServiceRecord(*ids, ON_SCORE, s_max)
    off = AccessServiceRecord(*ids, OFF_SCORE, s_max)
    return [on if flag else off for flag in onoff_states(pattern, n, period_c, seed)]


def verify_onoff_params(a: int, b: int) -> bool:
    """Whether ``(1 + a) % b == 10`` and ``(10 + a) % b == 1``: the on/off scores swap under ``+a mod b``."""
    if b <= 0:
        raise DomainError("b must be positive")
    return (1 + a) % b == 10 and (10 + a) % b == 1


SENSOR_ROWS: tuple[tuple[str, str, str, float], ...] = (
    ("Energy-Saving Lamp", "Noise Class", "Sound Sensor", 18),
    ("Energy-Saving Lamp", "Light Class", "Light Sensor", 24),
    ("Crowd", "Space Class", "Distance Sensor", 18),
    ("Mobile Device", "Strength Class", "Gravity Sensor", 24),
    ("Mobile Device", "Space Class", "GPS", 24),
    ("Mobile Device", "Light Class", "Light Sensor", 24),
    ("Fan", "Temperature Class", "Temperature Sensor", 24),
    ("Null", "Humidity Class", "Humidity Sensor", 24),
    ("Camera", "Light Class", "Infrared Sensor", 24),
    ("Touchable Device", "Strength Class", "Pressure Sensor", 18),
    ("Crowd", "Image Class", "Image Sensor", 18),
    ("Camera", "Color Class", "Color Sensor", 24),
)


def gen_sensor_dataset() -> list[AccessServiceRecord]:
    """The 12-row sensor usage-time dataset (device/user, sensor class, sensor, hours)."""
    return [AccessServiceRecord(s, o, e, float(t), SENSOR_S_MAX) for s, o, e, t in SENSOR_ROWS]


@dataclass
class IngestResult:
    records: list[AccessServiceRecord] = field(default_factory=list)
    skipped_missing_metadata: int = 0
    rows_read: int = 0


def _read_movie_tags(movies_path: str | Path, tag_mode: str) -> dict[str, str]:
    if tag_mode != "genre":
        raise DomainError(f"unsupported tag mode {tag_mode!r}")
    tags: dict[str, str] = {}
    try:
        fh = open(movies_path, encoding="utf-8", newline="")
    except OSError as exc:
        raise IngestError(f"cannot read {movies_path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or "movieId" not in header or "genres" not in header:
            raise IngestError(f"{movies_path}: expected a movieId,...,genres header", 1)
        id_col, genre_col = header.index("movieId"), header.index("genres")
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise IngestError(f"{movies_path}: expected {len(header)} fields", lineno)
            first = row[genre_col].split("|")[0].strip()
            if first and first != "(no genres listed)":
                tags[row[id_col]] = first
    return tags


def ingest_movielens(
    ratings_path: str | Path,
    movies_path: str | Path,
    limit: int | None = None,
    tag_mode: str = "genre",
) -> IngestResult:
    """Map MovieLens ratings to ``(userId, first genre, movieId, rating)`` records with ``s_max = 5``.

    Ratings whose movie has no genre metadata are skipped and counted.
    Malformed rows and out-of-range ratings raise :class:`IngestError`.
    """
    tags = _read_movie_tags(movies_path, tag_mode)
    result = IngestResult()
    try:
        fh = open(ratings_path, encoding="utf-8", newline="")
    except OSError as exc:
        raise IngestError(f"cannot read {ratings_path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:3] != ["userId", "movieId", "rating"]:
            raise IngestError(f"{ratings_path}: expected a userId,movieId,rating,timestamp header", 1)
        for lineno, row in enumerate(reader, 2):
            if limit is not None and result.rows_read >= limit:
                break
            if not row:
                continue
            result.rows_read += 1
            if len(row) < 3:
                raise IngestError(f"expected userId,movieId,rating[,timestamp], got {row}", lineno)
            user, movie, rating = row[0], row[1], row[2]
            try:
                score = float(rating)
            except ValueError:
                raise IngestError(f"rating {rating!r} is not a number", lineno) from None
            if not 0 <= score <= MOVIELENS_S_MAX:
                raise IngestError(f"rating {score} outside [0, {MOVIELENS_S_MAX}]", lineno)
            tag = tags.get(movie)
            if tag is None:
                result.skipped_missing_metadata += 1
                continue
            if not user or not movie:
                raise IngestError("empty userId or movieId", lineno)
            result.records.append(AccessServiceRecord(user, tag, movie, score, MOVIELENS_S_MAX))
    return result


def write_records(
    records: Sequence[AccessServiceRecord], out: str | Path | TextIO, meta: dict | None = None
) -> None:
    """Write ``s,o,e,score`` rows behind a ``# s_max=<v> ...`` comment line."""
    if isinstance(out, (str, Path)):
        with open(out, "w", encoding="utf-8", newline="") as fh:
            write_records(records, fh, meta)
        return
    s_max = records[0].s_max if records else 0.0
    items = {"s_max": _fmt(s_max), **{k: v for k, v in (meta or {}).items()}}
    out.write("# " + " ".join(f"{k}={v}" for k, v in items.items()) + "\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["s", "o", "e", "score"])
    for r in records:
        writer.writerow([r.s, r.o, r.e, _fmt(r.score)])


def _fmt(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def entity_census(records: Iterable[AccessServiceRecord]) -> dict[str, set[str]]:
    roles: dict[str, set[str]] = {"s": set(), "o": set(), "e": set()}
    for r in records:
        roles["s"].add(r.s)
        roles["o"].add(r.o)
        roles["e"].add(r.e)
    return roles
