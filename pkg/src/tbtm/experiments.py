"""Experiment drivers: the G1-G8 parameter study, On-off suite, sensor run, global analysis, timing."""

from __future__ import annotations

import csv
import math
import random
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from tbtm.cipher import DEFAULT_KEYS_HEX, KeySet
from tbtm.datagen import entity_census, gen_onoff, gen_preset, gen_sensor_dataset, ingest_movielens
from tbtm.pipeline import PipelineConfig, TrajectoryPoint, TrustPipeline
from tbtm.registry import ROLES
from tbtm.tokenchain import AccessServiceRecord
from tbtm.trust import BURN_IN, PAPER_KAPPA, WeightParams, estimate_kappa

DEFAULT_KEYS = KeySet.from_hex(DEFAULT_KEYS_HEX)

GROUPS: dict[str, tuple[WeightParams, str]] = {
    "G1": (WeightParams(0.05, 0.5, 0.5, -0.5, 0.1), "dataset_1"),
    "G2": (WeightParams(0.01, 0.5, 0.5, -0.5, 0.1), "dataset_1"),
    "G3": (WeightParams(0.05, 0.5, 0.5, -1.0, 0.1), "dataset_1"),
    "G4": (WeightParams(0.05, 0.8, 0.2, -0.5, 0.1), "dataset_1"),
    "G5": (WeightParams(0.05, 0.2, 0.8, -0.5, 0.1), "dataset_1"),
    "G6": (WeightParams(0.05, 0.5, 0.5, -0.5, 0.4), "dataset_1"),
    "G7": (WeightParams(0.05, 0.5, 0.5, -0.5, 0.1), "dataset_2_1"),
    "G8": (WeightParams(0.05, 0.5, 0.5, -0.5, 0.1), "dataset_2_2"),
}


@dataclass
class RoleRun:
    """Trajectory of one role's entity and its post-burn-in statistics."""

    role: str
    points: list[TrajectoryPoint]
    burn_in: int = BURN_IN

    @property
    def tail(self) -> list[TrajectoryPoint]:
        return [p for p in self.points if p.n > self.burn_in]

    @property
    def offset(self) -> float:
        return self.points[-1].offset

    @property
    def tail_mean(self) -> float:
        return statistics.fmean(p.t for p in self.tail)

    @property
    def lam_mean(self) -> float:
        return statistics.fmean(p.lam for p in self.tail if p.lam is not None)

    @property
    def kappa_hat(self) -> float:
        return statistics.fmean(p.kappa for p in self.tail if p.kappa is not None)

    def sup_step(self, lo: int, hi: int) -> float:
        ts = {p.n: p.t for p in self.points}
        return max(abs(ts[n + 1] - ts[n]) for n in range(lo, hi) if n in ts and n + 1 in ts)

    def max_lambda_residual(self, kappa: float | None = None) -> float:
        """Largest ``|T_n - (T'_n + kappa S)|`` over the tail (run's own kappa by default)."""
        k = self.kappa_hat if kappa is None else kappa
        return max(abs(p.t - (p.t_prime + k * p.offset)) for p in self.tail if p.t_prime is not None)


@dataclass
class ExperimentResult:
    id: str
    params: WeightParams
    dataset: str
    roles: dict[str, RoleRun]
    pipeline: TrustPipeline = field(repr=False)

    def summary_rows(self) -> list[dict]:
        return [
            {
                "role": r,
                "offset": run.offset,
                "tail_mean": run.tail_mean,
                "lambda": run.lam_mean,
                "kappa": run.kappa_hat,
                "final_T": run.points[-1].t,
            }
            for r, run in self.roles.items()
        ]

    def write(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"{self.id}_trajectory.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["role", "n", "T", "Tprime", "lambda", "kappa"])
            for r, run in self.roles.items():
                for p in run.points:
                    w.writerow([r, p.n, _num(p.t), _num(p.t_prime), _num(p.lam), _num(p.kappa)])
        _write_rows(out_dir / f"{self.id}_summary.csv", self.summary_rows())


def _num(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def _write_rows(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _role_runs(pipe: TrustPipeline, record: AccessServiceRecord, burn_in: int) -> dict[str, RoleRun]:
    keys = {"s": pipe.key_of("s", record.s), "o": pipe.key_of("o", record.o), "e": pipe.key_of("e", record.e)}
    return {r: RoleRun(r, pipe.trajectories[keys[r]], burn_in) for r in ROLES}


def run_fixed(
    params: WeightParams,
    records: Sequence[AccessServiceRecord],
    keys: KeySet = DEFAULT_KEYS,
    burn_in: int = BURN_IN,
    predict: bool = False,
    kappa: float | None = None,
) -> tuple[TrustPipeline, dict[str, RoleRun]]:
    """Run a single-triple stream with replay filtering off (the stream repeats one tuple by design)."""
    config = PipelineConfig(params=params, replay_filter=False, predict=predict)
    if kappa is not None:
        config.kappa = kappa
    pipe = TrustPipeline(config, keys).run(records)
    return pipe, _role_runs(pipe, records[0], burn_in)


def run_experiment(exp_id: str, n: int = 10_000, keys: KeySet = DEFAULT_KEYS, burn_in: int = BURN_IN) -> ExperimentResult:
    params, dataset = GROUPS[exp_id]
    pipe, roles = run_fixed(params, gen_preset(dataset, n), keys, burn_in)
    return ExperimentResult(exp_id, params, dataset, roles, pipe)


def pooled_kappa(results: Iterable[ExperimentResult]) -> float:
    """Mean kappa over every post-burn-in point of every role of the given runs."""
    values = [p.kappa for res in results for run in res.roles.values() for p in run.tail if p.kappa is not None]
    return statistics.fmean(values)


# -- On-off ------------------------------------------------------------------


@dataclass
class OnOffRun:
    pattern: int
    roles: dict[str, RoleRun]
    period: int

    def band(self, role: str) -> tuple[float, float]:
        tail = [p.t for p in self.roles[role].tail]
        return min(tail), max(tail)

    def amplitude(self, role: str, periods: int = 5) -> float:
        """Mean peak-to-peak swing over the last ``periods`` full periods."""
        ts = [p.t for p in self.roles[role].points]
        swings = []
        for k in range(1, periods + 1):
            window = ts[len(ts) - k * self.period : len(ts) - (k - 1) * self.period]
            swings.append(max(window) - min(window))
        return statistics.fmean(swings)


def run_onoff_suite(
    n: int = 10_000,
    period: int = 200,
    seed: int = 0,
    params: WeightParams = WeightParams(),
    keys: KeySet = DEFAULT_KEYS,
    burn_in: int = BURN_IN,
) -> dict[int, OnOffRun]:
    runs = {}
    for pattern in (1, 2, 3, 4):
        records = gen_onoff(pattern, period, n, seed=seed)
        _, roles = run_fixed(params, records, keys, burn_in)
        runs[pattern] = OnOffRun(pattern, roles, period)
    return runs


def onoff_rows(runs: dict[int, OnOffRun]) -> list[dict]:
    rows = []
    for pattern, run in runs.items():
        for role in ROLES:
            lo, hi = run.band(role)
            rows.append(
                {"pattern": pattern, "role": role, "band_min": lo, "band_max": hi, "band_width": hi - lo,
                 "amplitude": run.amplitude(role)}
            )
    return rows


# -- sensor ------------------------------------------------------------------


@dataclass
class SensorResult:
    pipeline: TrustPipeline
    trust: dict[str, dict[str, float]]
    predicted_usage: dict[str, float]
    actual_usage: dict[str, float]

    @property
    def entity_count(self) -> int:
        return len(self.pipeline.registry)

    def top_tag(self) -> str:
        tags = self.trust["o"]
        return max(tags, key=tags.get)

    def top3_agree(self) -> bool:
        """Do predicted totals order the three heaviest users like the actual totals do?"""
        top = sorted(self.actual_usage, key=self.actual_usage.get, reverse=True)[:3]
        for i in range(len(top)):
            for j in range(i + 1, len(top)):
                a, b = top[i], top[j]
                actual = self.actual_usage[a] - self.actual_usage[b]
                predicted = self.predicted_usage[a] - self.predicted_usage[b]
                if actual * predicted <= 0:
                    return False
        return True


def run_sensor_experiment(params: WeightParams = WeightParams(), keys: KeySet = DEFAULT_KEYS) -> SensorResult:
    """Run the 12-row sensor dataset with per-record usage-time prediction.

    Usage is totalled per device/user (the ``s`` column): that is the role
    whose usage time each row measures.
    """
    records = gen_sensor_dataset()
    pipe = TrustPipeline(PipelineConfig(params=params, predict=True), keys).run(records)
    trust = {r: {pipe.label(pk): pipe.states[pk].last for pk in pipe.role_entities(r)} for r in ROLES}
    predicted: dict[str, float] = {}
    actual: dict[str, float] = {}
    for rec, row in zip(records, pipe.predictions):
        actual[rec.s] = actual.get(rec.s, 0.0) + rec.score
        predicted[rec.s] = predicted.get(rec.s, 0.0) + (row.predicted if row.predicted is not None else 0.0)
    return SensorResult(pipe, trust, predicted, actual)


# -- MovieLens ---------------------------------------------------------------


@dataclass
class MovieLensResult:
    pipeline: TrustPipeline
    kappa: float
    skipped_missing_metadata: int
    census: dict[str, set[str]]


def estimate_run_kappa(pipe: TrustPipeline, burn_in: int = BURN_IN) -> float:
    """Pool kappa over every entity's points past the burn-in; the published constant if none exist."""
    rows = [
        (p.t, p.t_prime, p.offset)
        for points in pipe.trajectories.values()
        for p in points
        if p.n > burn_in
    ]
    try:
        return estimate_kappa(rows, burn_in=0)
    except ValueError:
        return PAPER_KAPPA


def run_movielens(
    ratings: str | Path,
    movies: str | Path,
    limit: int | None = 100_000,
    params: WeightParams = WeightParams(),
    keys: KeySet = DEFAULT_KEYS,
    kappa: float | None = None,
) -> MovieLensResult:
    """Trust evaluation plus per-record prediction over a MovieLens slice.

    Without an explicit ``kappa`` a first pass estimates it from the slice
    itself; the second pass predicts every record with that value.
    """
    ingest = ingest_movielens(ratings, movies, limit=limit)
    if kappa is None:
        first = TrustPipeline(PipelineConfig(params=params), keys).run(ingest.records)
        kappa = estimate_run_kappa(first)
    config = PipelineConfig(params=params, predict=True, kappa=kappa)
    pipe = TrustPipeline(config, keys).run(ingest.records)
    return MovieLensResult(pipe, kappa, ingest.skipped_missing_metadata, entity_census(ingest.records))


# -- global analysis ---------------------------------------------------------


def analyze_global(
    pipe: TrustPipeline, census: dict[str, Iterable[str]] | None = None, t0: float | None = None
) -> list[dict]:
    """Latest trust of every entity per role.

    Entities listed in ``census`` (plaintext ids per role) but never evaluated
    are reported at the initial trust value.
    """
    t0 = pipe.config.params.t0 if t0 is None else t0
    rows = []
    seen: dict[str, set[str]] = {r: set() for r in ROLES}
    for role in ROLES:
        for pk in pipe.role_entities(role):
            label = pipe.label(pk)
            seen[role].add(label)
            rows.append({"role": role, "entity": label, "trust": pipe.states[pk].last, "evaluated": 1})
    for role, ids in (census or {}).items():
        for ident in sorted(set(ids) - seen[role]):
            rows.append({"role": role, "entity": ident, "trust": t0, "evaluated": 0})
    rows.sort(key=lambda r: (ROLES.index(r["role"]), r["entity"]))
    return rows


# -- timing ------------------------------------------------------------------


def gen_mixed(n: int, users: int = 1000, tags: int = 20, items: int = 2000, s_max: float = 5.0, seed: int = 0):
    """Random multi-entity stream with half-point scores, shaped like a rating dump."""
    rng = random.Random(seed)
    return [
        AccessServiceRecord(
            f"u{rng.randrange(users)}", f"t{rng.randrange(tags)}", f"m{rng.randrange(items)}",
            rng.randrange(1, int(2 * s_max) + 1) / 2, s_max,
        )
        for _ in range(n)
    ]


@dataclass
class BenchResult:
    rows: list[tuple[int, float]]
    slope: float
    intercept: float
    r2: float


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float]:
    slope, intercept = statistics.linear_regression(xs, ys)
    mean_y = statistics.fmean(ys)
    ss_tot = math.fsum((y - mean_y) ** 2 for y in ys)
    ss_res = math.fsum((y - (slope * x + intercept)) ** 2 for x, y in zip(xs, ys))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return slope, intercept, r2


def bench(
    record_counts: Sequence[int], repeats: int = 3, seed: int = 0, keys: KeySet = DEFAULT_KEYS
) -> BenchResult:
    """Best-of-``repeats`` wall time of the full pipeline per record count, with a least-squares line."""
    if list(record_counts) != sorted(record_counts):
        raise ValueError("record counts must be ascending")
    rows = []
    for count in record_counts:
        records = gen_mixed(count, seed=seed) if count else []
        best = math.inf
        for _ in range(repeats):
            start = time.perf_counter()
            TrustPipeline(PipelineConfig(), keys).run(records)
            best = min(best, time.perf_counter() - start)
        rows.append((count, best))
    fit = [(c, t) for c, t in rows if c > 0]
    if len(fit) >= 2:
        slope, intercept, r2 = linear_fit([c for c, _ in fit], [t for _, t in fit])
    else:
        slope, intercept, r2 = math.nan, math.nan, math.nan
    return BenchResult(rows, slope, intercept, r2)
