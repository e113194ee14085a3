import random
import statistics

import pytest
from hypothesis import given, strategies as st

from tbtm.control import (
    EntityStatus,
    ReplayWindow,
    Thresholds,
    classify_entity,
    detect_replay,
    dynamic_thresholds,
    filter_replays,
    mining_difficulty,
    recommend,
)
from tbtm.errors import DomainError
from tbtm.trust import TrustState, WeightParams, split_offset, update_trust

TH = Thresholds()


def test_classify_examples():
    assert classify_entity(0.09, TH) == (EntityStatus.NORMAL, 0.09)
    status, t = classify_entity(0.07, TH)
    assert status is EntityStatus.WARNING and t == pytest.approx(0.06)
    assert classify_entity(0.04, TH) == (EntityStatus.MALICIOUS, 0.04)
    assert classify_entity(0.08, TH)[0] is EntityStatus.WARNING
    assert classify_entity(0.05, TH)[0] is EntityStatus.MALICIOUS


@given(st.floats(-10, 10, allow_nan=False))
def test_classify_exhaustive_and_warning_lowers(t):
    status, adjusted = classify_entity(t, TH)
    expected = EntityStatus.NORMAL if t > TH.mu else EntityStatus.WARNING if t > TH.nu else EntityStatus.MALICIOUS
    assert status is expected
    if status is EntityStatus.WARNING:
        assert adjusted < t
    else:
        assert adjusted == t


def test_threshold_validation():
    with pytest.raises(DomainError):
        Thresholds(mu=0.05, nu=0.08)
    with pytest.raises(DomainError):
        Thresholds(epsilon=0.01)
    with pytest.raises(DomainError):
        Thresholds(tau=0)


def test_dynamic_thresholds():
    th = dynamic_thresholds([0.1, 0.2, 0.3])
    std = statistics.pstdev([0.1, 0.2, 0.3])
    assert std == pytest.approx(0.08165, abs=1e-5)
    assert th.mu == pytest.approx(0.2 - std) and th.nu == pytest.approx(0.2 - 2 * std)
    assert th.mu == pytest.approx(0.11835, abs=1e-5) and th.nu == pytest.approx(0.03670, abs=1e-5)
    flat = dynamic_thresholds([0.3] * 4)
    assert (flat.mu, flat.nu) == pytest.approx((0.27, 0.24))
    assert dynamic_thresholds([0.0, 0.0]) == TH
    with pytest.raises(ValueError):
        dynamic_thresholds([])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50))
def test_dynamic_thresholds_ordered(values):
    th = dynamic_thresholds(values)
    assert th.mu > th.nu >= 0


def test_mining_difficulty():
    assert mining_difficulty(0.0) == 20
    assert mining_difficulty(0.5) == 12
    assert mining_difficulty(5.0) == 4
    values = [mining_difficulty(t / 100) for t in range(-50, 200)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert all(4 <= v <= 20 for v in values)
    with pytest.raises(DomainError):
        mining_difficulty(0.1, base=2, floor=4)


def brute_force_filter(keys, tau):
    kept = []
    out = []
    for i, k in enumerate(keys):
        if k not in kept[-tau:]:
            kept.append(k)
            out.append(i)
    return out


def test_replay_window_examples():
    w = ReplayWindow(3)
    assert w.accept("a") and not w.accept("a") and w.is_replay("a")
    assert w.accept("b") and w.accept("c") and w.accept("d")
    assert not w.is_replay("a") and w.accept("a")
    assert detect_replay("x", ["y", "x"]) and not detect_replay("x", [])


def test_filter_matches_brute_force():
    rng = random.Random(12)
    for _ in range(50):
        keys = [rng.randrange(15) for _ in range(300)]
        tau = rng.randint(1, 20)
        assert filter_replays(keys, tau) == brute_force_filter(keys, tau)


def test_filter_idempotent():
    rng = random.Random(3)
    keys = [rng.randrange(10) for _ in range(500)]
    once = [keys[i] for i in filter_replays(keys, 5)]
    assert filter_replays(once, 5) == list(range(len(once)))


def test_duplicate_stream_counts_once_per_window():
    keys = [("maliciousSR", "maliciousSP", "maliciousService", 10.0)] * 5000
    assert filter_replays(keys, 1000) == [0]


def history_state(score, n=300, role=1):
    params = WeightParams()
    offset = tuple(split_offset(score, 10))[role]
    state = TrustState.seed(params.t0)
    for _ in range(n):
        state, _ = update_trust(state, offset, params)
    return state


def test_recommend_prefers_higher_offsets():
    states = {
        "s": history_state(5, role=0),
        "o_hi": history_state(10, role=1),
        "e_hi": history_state(10, role=2),
        "o_lo": history_state(1, role=1),
        "e_lo": history_state(1, role=2),
    }
    ranked = recommend([("o_lo", "e_lo"), ("o_hi", "e_hi")], "s", states, k=10)
    assert [(r.o, r.e) for r in ranked] == [("o_hi", "e_hi"), ("o_lo", "e_lo")]
    assert ranked[0].predicted > ranked[1].predicted
    assert recommend([("o_lo", "e_lo")], "s", states, k=5)[0].o == "o_lo"


def test_recommend_filters_malicious_and_truncates():
    states = {k: history_state(5) for k in ("s", "o1", "e1", "o2", "e2", "o3")}
    statuses = {"o2": EntityStatus.MALICIOUS}
    ranked = recommend([("o1", "e1"), ("o2", "e2"), ("o3", "e1")], "s", states, k=10, statuses=statuses)
    assert "o2" not in {r.o for r in ranked}
    assert len(recommend([("o1", "e1"), ("o3", "e1")], "s", states, k=1)) == 1


def test_recommend_ties_and_undefined_last():
    flat = TrustState.from_history([0.2, 0.2])
    states = {"s": flat, "a": flat, "b": flat, "e": flat, "bad": TrustState.from_history([0.0, 0.0, 0.9])}
    ranked = recommend([("bad", "e"), ("b", "e"), ("a", "e")], "s", states, k=3)
    assert [r.o for r in ranked] == ["a", "b", "bad"]
    assert ranked[-1].predicted is None
