"""Acceptance criteria 1-12, each checked at its pinned tolerance.

Each test records one PASS/FAIL line (see conftest.report) before asserting,
so the summary lists every criterion even when some fail.
"""

import random
import statistics
import time
from pathlib import Path

import pytest

import des_reference as ref
from tbtm.cipher import KeySet, decrypt_field, des_decrypt_block, des_encrypt_block, encrypt_field
from tbtm.datagen import gen_preset, verify_onoff_params
from tbtm.experiments import (
    DEFAULT_KEYS,
    GROUPS,
    bench,
    gen_mixed,
    pooled_kappa,
    run_experiment,
    run_fixed,
    run_movielens,
    run_onoff_suite,
    run_sensor_experiment,
)
from tbtm.pipeline import TrustPipeline
from tbtm.tokenchain import Ledger, append_records, validate_chain
from tbtm.trust import PAPER_KAPPA, WeightParams

ML = Path(__file__).resolve().parents[1] / "data" / "movielens"
N = 10_000


@pytest.fixture(scope="module")
def groups():
    timings = {}
    results = {}
    for gid in GROUPS:
        start = time.perf_counter()
        results[gid] = run_experiment(gid, n=N)
        timings[gid] = time.perf_counter() - start
    return results, timings


def test_criterion_01_convergence(groups, report):
    results, timings = groups
    g1 = results["G1"]
    sup = max(run.sup_step(5000, N) for run in g1.roles.values())
    resid = max(run.max_lambda_residual() for run in g1.roles.values())
    ok = sup <= 1e-4 and resid <= 0.005 and timings["G1"] < 10
    report(1, ok, f"G1 sup|dT| over [5000,1e4] = {sup:.2e} (<= 1e-4), max tail |T-(T'+k S)| = {resid:.2e} (<= 0.005), runtime {timings['G1']:.2f}s (< 10s)")
    assert ok


def test_criterion_02_kappa_constant(groups, report):
    results, _ = groups
    runs = [results[g] for g in ("G1", "G7", "G8")]
    kappa = pooled_kappa(runs)
    ratios = {}
    for res in runs:
        lam = {r: run.lam_mean for r, run in res.roles.items()}
        ratios[res.id] = (lam["o"] / lam["s"], lam["e"] / lam["s"])
    ratios_ok = all(abs(o / 3 - 1) <= 0.15 and abs(e / 2 - 1) <= 0.15 for o, e in ratios.values())
    ok = abs(kappa - PAPER_KAPPA) <= 0.02 and ratios_ok
    shown = ", ".join(f"{g} 1:{o:.2f}:{e:.2f}" for g, (o, e) in ratios.items())
    report(2, ok, f"pooled kappa {kappa:.6f} (target {PAPER_KAPPA} +- 0.02); lambda ratios {shown} (1:3:2 within 15%)")
    assert ok


def test_criterion_03_parameter_monotonicity(groups, report):
    results, _ = groups
    t = {g: res.roles["o"].tail_mean for g, res in results.items()}
    checks = {
        "G2<G1": t["G2"] < t["G1"],
        "G3<G1": t["G3"] < t["G1"],
        "G5<G1<G4": t["G5"] < t["G1"] < t["G4"],
        "G7<G1<G8": t["G7"] < t["G1"] < t["G8"],
        "|G6-G1|<=1e-3": abs(t["G6"] - t["G1"]) <= 1e-3,
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    report(3, ok, f"role-o tail means { {g: round(v, 4) for g, v in t.items()} }; failing: {failed or 'none'}")
    assert ok


def test_criterion_04_role_ordering(groups, report):
    results, _ = groups
    violations = 0
    for res in results.values():
        s, o, e = (res.roles[r].points for r in ("s", "o", "e"))
        violations += sum(not (po.t > pe.t > ps.t) for ps, po, pe in zip(s, o, e))
    report(4, violations == 0, f"T_o > T_e > T_s violations over G1-G8 x {N} steps: {violations}")
    assert violations == 0


def test_criterion_05_feasibility(groups, report):
    results, _ = groups
    # T'_n is undefined exactly when sum(T_i^2) < n alpha^2 S^2 / delta^2.
    states = violations = 0
    for res in results.values():
        for run in res.roles.values():
            states += len(run.points)
            violations += sum(p.t_prime is None for p in run.points)
    report(5, violations == 0, f"infeasible states among {states}: {violations}")
    assert violations == 0


def test_criterion_06_prediction(report):
    _, roles = run_fixed(WeightParams(), gen_preset("d1", N), DEFAULT_KEYS)
    kappa = statistics.fmean(run.kappa_hat for run in roles.values())
    pipe, _ = run_fixed(WeightParams(), gen_preset("d1", N), DEFAULT_KEYS, predict=True, kappa=kappa)
    tail = [row.omega for row in pipe.predictions[1000:]]
    d1_ok = all(w is not None and abs(w) <= 1 for w in tail)
    d1_worst = max(abs(w) for w in tail if w is not None)
    if not (ML / "ratings.csv").exists():
        report(6, False, f"dataset_1 max |P-5| after burn-in {d1_worst:.3f}; MovieLens data absent (run scripts/fetch_movielens.py)")
        pytest.skip("MovieLens data not downloaded")
    ml = run_movielens(ML / "ratings.csv", ML / "movies.csv", limit=100_000)
    summary = ml.pipeline.prediction_summary()
    frac = summary.fraction_within(-2, 2)
    ok = d1_ok and frac >= 0.9
    report(
        6,
        ok,
        f"dataset_1 max |P-5| after burn-in {d1_worst:.3f} (<= 1); MovieLens 1e5: omega in [-2,2] for "
        f"{frac:.1%} of {summary.defined} defined (>= 90%), {summary.undefined} undefined, kappa {ml.kappa:.5f}",
    )
    assert d1_ok
    assert frac >= 0.9


def test_criterion_07_onoff_parameters(report):
    rng = random.Random(7)
    solutions = all(verify_onoff_params(a, 18) for a in (9, 27, 45))
    checked = wrong = 0
    while checked < 100:
        a, b = rng.randrange(0, 1000), rng.randrange(1, 100)
        # Independent characterization: 9 = -9 (mod b) with b > 10 forces b = 18, a = 9 (mod 18).
        if b == 18 and a % 18 == 9:
            continue
        checked += 1
        wrong += verify_onoff_params(a, b)
    ok = solutions and wrong == 0
    report(7, ok, f"(9,18), (27,18), (45,18) accepted: {solutions}; false positives among 100 non-solutions: {wrong}")
    assert ok


def test_criterion_08_onoff_resilience(groups, report):
    results, _ = groups
    runs = run_onoff_suite(n=N, period=200, seed=0)
    level = {r: results["G1"].roles[r].tail_mean for r in ("s", "o", "e")}
    widths = {p: {r: run.band(r)[1] - run.band(r)[0] for r in level} for p, run in runs.items()}
    bands_ok = all(widths[p][r] < 0.5 * level[r] for p in widths for r in level)
    amp = {p: runs[p].amplitude("o") for p in runs}
    ok = bands_ok and amp[3] < amp[1]
    worst = max(widths[p]["o"] for p in widths)
    report(8, ok, f"max role-o band width {worst:.4f} (< {0.5 * level['o']:.4f}); amplitude pattern 3 {amp[3]:.4f} < pattern 1 {amp[1]:.4f}")
    assert ok


def test_criterion_09_tamper_evidence(report):
    import dataclasses

    from tbtm.tokenchain import Block

    rng = random.Random(9)
    recs = gen_mixed(400, users=20, tags=5, items=40, seed=9)
    ledger = append_records(Ledger(difficulty=4), recs, DEFAULT_KEYS, block_size=20, clock=lambda: 1_700_000_000)
    assert validate_chain(ledger).valid
    ledger_hits = 0
    trials = 250
    for _ in range(trials):
        blocks = list(ledger.blocks)
        i = rng.randrange(len(blocks))
        j = rng.randrange(len(blocks[i].records))
        r = blocks[i].records[j]
        field = rng.choice(["cs", "co", "ce", "score"])
        if field == "score":
            new = dataclasses.replace(r, score=(r.score + rng.choice([0.5, 1.0, 2.5])) % 5.0)
        else:
            raw = bytearray(getattr(r, field))
            raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
            new = dataclasses.replace(r, **{field: bytes(raw)})
        records = list(blocks[i].records)
        records[j] = new
        blocks[i] = Block(blocks[i].header, tuple(records))
        ledger_hits += not validate_chain(Ledger(blocks, ledger.difficulty), check_nonce=False).valid

    pipe = TrustPipeline(keys=DEFAULT_KEYS).run(recs)
    keys = pipe.registry.entities()
    truth = {k: pipe.registry.get_history(k) for k in keys}
    detected = repaired = 0
    for _ in range(trials):
        k = rng.choice(keys)
        i = rng.randrange(len(truth[k]))
        pipe.registry.histories[k][i] = truth[k][i] + rng.choice([1e-6, -1e-6, 0.1])
        detected += not pipe.registry.hash_check(k)
        repaired += pipe.registry.hash_check(k) and pipe.registry.get_history(k) == truth[k]
    ok = ledger_hits == trials and detected == trials and repaired == trials
    report(9, ok, f"ledger tampers detected {ledger_hits}/{trials}; history tampers detected {detected}/{trials}, repaired {repaired}/{trials}")
    assert ok


def test_criterion_10_cipher(report):
    rng = random.Random(10)
    failures = 0
    for _ in range(10_000):
        while True:
            raw = [rng.randbytes(8) for _ in range(3)]
            if len(set(raw)) == 3:
                break
        keys = KeySet(*raw)
        pt = rng.randbytes(rng.randint(1, 48))
        failures += decrypt_field(encrypt_field(pt, keys), keys) != pt
    kat_mismatch = 0
    for _ in range(500):
        key, block = rng.randbytes(8), rng.randbytes(8)
        ct = ref.encrypt(key, block)
        kat_mismatch += des_encrypt_block(key, block) != ct or des_decrypt_block(key, ct) != block
    ok = failures == 0 and kat_mismatch == 0
    report(10, ok, f"roundtrip failures {failures}/10000; inner-cipher mismatches vs reference DES {kat_mismatch}/500")
    assert ok


def test_criterion_11_linearity(report):
    counts = [10_000, 20_000, 40_000, 80_000]
    result = bench(counts, repeats=3)
    largest = result.rows[-1][1]
    ok = result.r2 >= 0.98 and largest < 60
    times = ", ".join(f"{c}:{t:.2f}s" for c, t in result.rows)
    report(11, ok, f"R^2 {result.r2:.4f} (>= 0.98); {times}; 8e4-record run {largest:.2f}s (< 60s)")
    assert ok


def test_criterion_12_sensor(report):
    result = run_sensor_experiment()
    ok = result.entity_count == 26 and result.top_tag() == "Light Class" and result.top3_agree()
    report(12, ok, f"entities {result.entity_count}; top tag {result.top_tag()}; top-3 usage ordering agrees: {result.top3_agree()}")
    assert ok
