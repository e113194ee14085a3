import dataclasses
import random
import statistics
import struct

import pytest

from tbtm.cipher import ZERO_DIGEST, KeySet, decrypt_field, digest
from tbtm.errors import DomainError, LedgerError, MiningError
from tbtm.tokenchain import (
    AccessServiceRecord,
    Block,
    EncryptedRecord,
    Ledger,
    append_records,
    csv_s_max,
    leading_zero_bits,
    merkle_root,
    mine_block,
    read_record_csv,
    read_records,
    validate_chain,
)

K = KeySet.from_hex("0123456789abcdef,23456789abcdef01,456789abcdef0123")


def fixed_clock():
    return 1_700_000_000


def records(n, seed=0):
    rng = random.Random(seed)
    return [
        AccessServiceRecord(f"u{rng.randrange(20)}", f"t{rng.randrange(5)}", f"m{rng.randrange(30)}", rng.randrange(11) / 2, 5.0)
        for _ in range(n)
    ]


def build(n=20, block_size=4, difficulty=4, seed=0):
    ledger = Ledger(difficulty=difficulty)
    return append_records(ledger, records(n, seed), K, block_size=block_size, clock=fixed_clock)


def test_record_validation():
    AccessServiceRecord("a", "b", "NULL", 0, 10)
    with pytest.raises(DomainError):
        AccessServiceRecord("a", "b", "c", 11, 10)
    with pytest.raises(DomainError):
        AccessServiceRecord("a", "b", "c", -1, 10)
    with pytest.raises(DomainError):
        AccessServiceRecord("", "b", "c", 1, 10)
    with pytest.raises(DomainError):
        AccessServiceRecord("a", "b", "c", 0, 0)


def test_merkle_small_trees():
    r1, r2, r3 = (EncryptedRecord.encrypt(r, K) for r in records(3))
    l1, l2, l3 = (digest(r.serialize()) for r in (r1, r2, r3))
    assert merkle_root([r1]) == l1
    assert merkle_root([r1, r2]) == digest(l1 + l2)
    assert merkle_root([r1, r2, r3]) == digest(digest(l1 + l2) + digest(l3 + l3))
    with pytest.raises(LedgerError):
        merkle_root([])


def test_merkle_detects_any_record_change():
    rng = random.Random(7)
    recs = [EncryptedRecord.encrypt(r, K) for r in records(9)]
    root = merkle_root(recs)
    for _ in range(100):
        i = rng.randrange(len(recs))
        r = recs[i]
        field = rng.choice(["cs", "co", "ce", "score"])
        if field == "score":
            changed = dataclasses.replace(r, score=r.score + rng.choice([0.5, -0.5, 1e-9]))
        else:
            raw = bytearray(getattr(r, field))
            raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
            changed = dataclasses.replace(r, **{field: bytes(raw)})
        assert merkle_root(recs[:i] + [changed] + recs[i + 1 :]) != root


def test_leading_zero_bits():
    assert leading_zero_bits(b"\x00\x00\xff") == 16
    assert leading_zero_bits(b"\x01") == 7
    assert leading_zero_bits(b"\x80") == 0
    assert leading_zero_bits(bytes(4)) == 32


def test_mining_targets():
    recs = [EncryptedRecord.encrypt(r, K) for r in records(2)]
    b0 = mine_block(recs, None, 0, fixed_clock)
    assert b0.header.nonce == 0 and b0.header.prev_hash == ZERO_DIGEST
    b8 = mine_block(recs, b0.header, 8, fixed_clock)
    assert b8.header.digest()[0] == 0
    assert b8.header.prev_hash == b0.header.digest()
    with pytest.raises(MiningError):
        mine_block(recs, None, 33, fixed_clock)
    with pytest.raises(MiningError):
        mine_block(recs, None, 20, fixed_clock, max_nonce=10)


@pytest.mark.parametrize("difficulty", [4, 8, 12])
def test_median_nonce_scales_with_difficulty(difficulty):
    recs = [EncryptedRecord.encrypt(r, K) for r in records(1)]
    nonces = []
    prev = None
    for i in range(50):
        block = mine_block(recs, prev, difficulty, clock=lambda: 1_700_000_000 + i)
        nonces.append(block.header.nonce)
        prev = block.header
    median = statistics.median(nonces)
    # Geometric with p = 2^-d: median is about 0.69 * 2^d.
    assert 2**difficulty / 4 <= median <= 2**difficulty * 4


def test_append_chunking_and_empty():
    ledger = build(10, block_size=4)
    assert [len(b.records) for b in ledger.blocks] == [4, 4, 2]
    before = list(ledger.blocks)
    append_records(ledger, [], K, clock=fixed_clock)
    assert ledger.blocks == before
    assert validate_chain(ledger).valid
    with pytest.raises(DomainError):
        append_records(ledger, records(1), K, block_size=0)


def test_fresh_ledger_valid_and_tamper_cases():
    ledger = build(20, block_size=4)
    assert len(ledger) == 5 and validate_chain(ledger).valid

    tampered = Ledger(list(ledger.blocks), ledger.difficulty)
    b2 = tampered.blocks[2]
    rec = dataclasses.replace(b2.records[0], score=(b2.records[0].score + 1) % 5)
    tampered.blocks[2] = Block(b2.header, (rec, *b2.records[1:]))
    report = validate_chain(tampered)
    assert [f.id for f in report.failures] == [2] and not report.failures[0].merkle_ok

    spliced = Ledger(list(ledger.blocks), ledger.difficulty)
    b3 = spliced.blocks[3]
    spliced.blocks[3] = Block(dataclasses.replace(b3.header, prev_hash=ZERO_DIGEST), b3.records)
    report = validate_chain(spliced)
    assert not report.blocks[3].linkage_ok
    assert "INVALID" in report.summary()


def test_difficulty_floor_enforced():
    ledger = build(4, block_size=4, difficulty=4)
    assert not validate_chain(Ledger(ledger.blocks, difficulty=8)).valid


def test_read_records_order_and_roundtrip():
    recs = records(7, seed=3)
    ledger = append_records(Ledger(difficulty=2), recs, K, block_size=3, clock=fixed_clock)
    out = list(read_records(ledger))
    assert len(out) == len(recs)
    for plain, enc in zip(recs, out):
        assert decrypt_field(enc.cs, K).decode() == plain.s
        assert decrypt_field(enc.co, K).decode() == plain.o
        assert decrypt_field(enc.ce, K).decode() == plain.e
        assert enc.score == plain.score


def test_read_records_refuses_invalid():
    ledger = build(4, block_size=2)
    b = ledger.blocks[0]
    ledger.blocks[0] = Block(dataclasses.replace(b.header, nonce=b.header.nonce + 1), b.records)
    with pytest.raises(LedgerError):
        list(read_records(ledger))


def test_append_only_prefix_stays_valid():
    ledger = build(8, block_size=4)
    prefix = Ledger(list(ledger.blocks), ledger.difficulty)
    append_records(ledger, records(6, seed=1), K, block_size=4, clock=fixed_clock)
    assert ledger.blocks[: len(prefix)] == prefix.blocks
    assert validate_chain(prefix).valid and validate_chain(ledger).valid


def test_save_load_roundtrip(tmp_path):
    ledger = build(9, block_size=4)
    path = tmp_path / "ledger.jsonl"
    ledger.save(path)
    loaded = Ledger.load(path)
    assert loaded.blocks == ledger.blocks and validate_chain(loaded).valid
    path.write_text(path.read_text() + "{not json\n")
    with pytest.raises(LedgerError):
        Ledger.load(path)


def _flip_int(x: int, bit: int) -> int:
    return x ^ (1 << bit)


def _flip_float(x: float, bit: int) -> float:
    (raw,) = struct.unpack("<Q", struct.pack("<d", x))
    return struct.unpack("<d", struct.pack("<Q", raw ^ (1 << bit)))[0]


def _flip_bytes(b: bytes, rng) -> bytes:
    raw = bytearray(b)
    raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
    return bytes(raw)


def mutate(ledger: Ledger, rng) -> Ledger:
    blocks = list(ledger.blocks)
    i = rng.randrange(len(blocks))
    block = blocks[i]
    if rng.random() < 0.5:
        j = rng.randrange(len(block.records))
        r = block.records[j]
        field = rng.choice(["cs", "co", "ce", "score", "s_max"])
        if field in ("score", "s_max"):
            value = _flip_float(getattr(r, field), rng.randrange(64))
        else:
            value = _flip_bytes(getattr(r, field), rng)
        recs = list(block.records)
        recs[j] = dataclasses.replace(r, **{field: value})
        blocks[i] = Block(block.header, tuple(recs))
    else:
        h = block.header
        field = rng.choice(["id", "prev_hash", "merkle_root", "nonce", "timestamp", "difficulty"])
        if field in ("prev_hash", "merkle_root"):
            value = _flip_bytes(getattr(h, field), rng)
        else:
            value = _flip_int(getattr(h, field), rng.randrange(6 if field == "difficulty" else 32))
        blocks[i] = Block(dataclasses.replace(h, **{field: value}), block.records)
    return Ledger(blocks, ledger.difficulty)


def test_single_bit_flips_detected():
    ledger = build(24, block_size=4, difficulty=6)
    rng = random.Random(2024)
    for _ in range(400):
        assert not validate_chain(mutate(ledger, rng)).valid


def test_record_csv(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("# s_max=10 dataset=d1\ns,o,e,score\na,b,c,5\na,b,NULL,2.5\n")
    assert csv_s_max(path) == 10.0
    recs = read_record_csv(path, 10.0)
    assert [r.tuple for r in recs] == [("a", "b", "c", 5.0), ("a", "b", "NULL", 2.5)]
    path.write_text("s,o,e,score\na,b,c,50\n")
    assert csv_s_max(path) is None
    with pytest.raises(LedgerError, match="row 2"):
        read_record_csv(path, 10.0)
