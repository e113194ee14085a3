"""Append-only ledger of encrypted access service records.

Blocks hold up to ``block_size`` records whose identities are encrypted field
by field. Each header commits to the predecessor's header digest, the Merkle
root of its records and a proof-of-work nonce. The score and its scale stay in
clear text: trust evaluation reads them without decrypting anything.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

from tbtm.cipher import ZERO_DIGEST, KeySet, digest, encrypt_field
from tbtm.errors import DomainError, LedgerError, MiningError

NULL_ENTITY = "NULL"
DEFAULT_BLOCK_SIZE = 100
DEFAULT_DIFFICULTY = 8
MAX_DIFFICULTY = 32
MAX_NONCE = 2**64 - 1

Clock = Callable[[], int]


def system_clock() -> int:
    return int(time.time())


@dataclass(frozen=True)
class AccessServiceRecord:
    s: str
    o: str
    e: str
    score: float
    s_max: float

    def __post_init__(self) -> None:
        if not self.s_max > 0:
            raise DomainError(f"s_max must be > 0, got {self.s_max}")
        if not 0 <= self.score <= self.s_max:
            raise DomainError(f"score {self.score} outside [0, {self.s_max}]")
        if not (self.s and self.o and self.e):
            raise DomainError("s, o and e must be non-empty (use 'NULL' for an absent service)")

    @property
    def tuple(self) -> tuple[str, str, str, float]:
        return (self.s, self.o, self.e, self.score)


def _canon_real(x: float) -> bytes:
    # Shortest round-trip repr: equal floats give equal octets and any bit change shows.
    return repr(float(x)).encode("ascii")


@dataclass(frozen=True)
class EncryptedRecord:
    cs: bytes
    co: bytes
    ce: bytes
    score: float
    s_max: float

    @classmethod
    def encrypt(cls, record: AccessServiceRecord, keys: KeySet) -> "EncryptedRecord":
        return cls(
            encrypt_field(record.s, keys),
            encrypt_field(record.o, keys),
            encrypt_field(record.e, keys),
            record.score,
            record.s_max,
        )

    def serialize(self) -> bytes:
        # '|' never occurs in hex, so the field boundaries are unambiguous.
        return b"|".join(
            (
                self.cs.hex().encode(),
                self.co.hex().encode(),
                self.ce.hex().encode(),
                _canon_real(self.score),
                _canon_real(self.s_max),
            )
        )

    @property
    def tuple(self) -> tuple[bytes, bytes, bytes, float]:
        return (self.cs, self.co, self.ce, self.score)

    def to_json(self) -> dict:
        return {
            "cs": self.cs.hex(),
            "co": self.co.hex(),
            "ce": self.ce.hex(),
            "score": self.score,
            "s_max": self.s_max,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EncryptedRecord":
        return cls(
            bytes.fromhex(obj["cs"]),
            bytes.fromhex(obj["co"]),
            bytes.fromhex(obj["ce"]),
            float(obj["score"]),
            float(obj["s_max"]),
        )


@dataclass(frozen=True)
class BlockHeader:
    id: int
    prev_hash: bytes
    merkle_root: bytes
    nonce: int
    timestamp: int
    difficulty: int = DEFAULT_DIFFICULTY

    def serialize(self) -> bytes:
        return (
            f"{self.id}|{self.prev_hash.hex()}|{self.merkle_root.hex()}|"
            f"{self.difficulty}|{self.timestamp}|{self.nonce}"
        ).encode()

    def digest(self) -> bytes:
        return digest(self.serialize())


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    records: tuple[EncryptedRecord, ...]

    def to_json(self) -> dict:
        h = self.header
        return {
            "id": h.id,
            "prev_hash": h.prev_hash.hex(),
            "merkle_root": h.merkle_root.hex(),
            "nonce": h.nonce,
            "timestamp": h.timestamp,
            "difficulty": h.difficulty,
            "records": [r.to_json() for r in self.records],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Block":
        header = BlockHeader(
            id=int(obj["id"]),
            prev_hash=bytes.fromhex(obj["prev_hash"]),
            merkle_root=bytes.fromhex(obj["merkle_root"]),
            nonce=int(obj["nonce"]),
            timestamp=int(obj["timestamp"]),
            difficulty=int(obj.get("difficulty", DEFAULT_DIFFICULTY)),
        )
        return cls(header, tuple(EncryptedRecord.from_json(r) for r in obj["records"]))


@dataclass
class Ledger:
    blocks: list[Block] = field(default_factory=list)
    difficulty: int = DEFAULT_DIFFICULTY

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def record_count(self) -> int:
        return sum(len(b.records) for b in self.blocks)

    @property
    def tip(self) -> BlockHeader | None:
        return self.blocks[-1].header if self.blocks else None

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for block in self.blocks:
                fh.write(json.dumps(block.to_json(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str | Path, difficulty: int | None = None) -> "Ledger":
        blocks = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    blocks.append(Block.from_json(json.loads(line)))
                except (KeyError, ValueError, TypeError) as exc:
                    raise LedgerError(f"{path}:{lineno}: malformed block: {exc}") from None
        if difficulty is None:
            difficulty = min((b.header.difficulty for b in blocks), default=DEFAULT_DIFFICULTY)
        return cls(blocks, difficulty)


def leading_zero_bits(data: bytes) -> int:
    bits = 0
    for byte in data:
        if byte == 0:
            bits += 8
            continue
        return bits + 8 - byte.bit_length()
    return bits


def merkle_root(records: Sequence[EncryptedRecord]) -> bytes:
    """Binary Merkle root over record digests; an odd level repeats its last node."""
    if not records:
        raise LedgerError("cannot build a Merkle root over zero records")
    level = [digest(r.serialize()) for r in records]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [digest(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def mine_block(
    pending: Sequence[EncryptedRecord],
    prev: BlockHeader | None,
    difficulty: int,
    clock: Clock = system_clock,
    max_nonce: int = MAX_NONCE,
) -> Block:
    """Find the smallest nonce whose header digest has ``difficulty`` leading zero bits."""
    if not pending:
        raise LedgerError("cannot mine an empty block")
    if not 0 <= difficulty <= MAX_DIFFICULTY:
        raise MiningError(f"difficulty must be in [0, {MAX_DIFFICULTY}], got {difficulty}")
    block_id = 0 if prev is None else prev.id + 1
    prev_hash = ZERO_DIGEST if prev is None else prev.digest()
    root = merkle_root(pending)
    timestamp = int(clock())
    prefix = f"{block_id}|{prev_hash.hex()}|{root.hex()}|{difficulty}|{timestamp}|".encode()
    nonce = 0
    while leading_zero_bits(digest(prefix + str(nonce).encode())) < difficulty:
        nonce += 1
        if nonce > max_nonce:
            raise MiningError(f"nonce space exhausted at difficulty {difficulty}")
    header = BlockHeader(block_id, prev_hash, root, nonce, timestamp, difficulty)
    return Block(header, tuple(pending))


def append_records(
    ledger: Ledger,
    records: Iterable[AccessServiceRecord],
    keys: KeySet,
    block_size: int = DEFAULT_BLOCK_SIZE,
    clock: Clock = system_clock,
    difficulty: int | None = None,
) -> Ledger:
    """Encrypt, batch and mine ``records`` onto ``ledger``; returns the same ledger."""
    if block_size < 1:
        raise DomainError("block_size must be >= 1")
    cache: dict[str, bytes] = {}

    def enc(text: str) -> bytes:
        token = cache.get(text)
        if token is None:
            token = cache[text] = encrypt_field(text, keys)
        return token

    batch: list[EncryptedRecord] = []

    def flush() -> None:
        block = mine_block(batch, ledger.tip, ledger.difficulty if difficulty is None else difficulty, clock)
        ledger.blocks.append(block)
        batch.clear()

    for rec in records:
        batch.append(EncryptedRecord(enc(rec.s), enc(rec.o), enc(rec.e), rec.score, rec.s_max))
        if len(batch) == block_size:
            flush()
    if batch:
        flush()
    return ledger


@dataclass
class BlockCheck:
    id: int
    linkage_ok: bool
    merkle_ok: bool
    difficulty_ok: bool

    @property
    def ok(self) -> bool:
        return self.linkage_ok and self.merkle_ok and self.difficulty_ok


@dataclass
class ValidationReport:
    blocks: list[BlockCheck]

    @property
    def valid(self) -> bool:
        return all(b.ok for b in self.blocks)

    @property
    def failures(self) -> list[BlockCheck]:
        return [b for b in self.blocks if not b.ok]

    def __bool__(self) -> bool:
        return self.valid

    def summary(self) -> str:
        if self.valid:
            return f"valid: {len(self.blocks)} blocks"
        lines = [f"INVALID: {len(self.failures)} of {len(self.blocks)} blocks fail"]
        for b in self.failures:
            what = [
                name
                for name, ok in (("linkage", b.linkage_ok), ("merkle", b.merkle_ok), ("difficulty", b.difficulty_ok))
                if not ok
            ]
            lines.append(f"  block {b.id}: {', '.join(what)}")
        return "\n".join(lines)


def _nonce_is_minimal(h: BlockHeader) -> bool:
    prefix = f"{h.id}|{h.prev_hash.hex()}|{h.merkle_root.hex()}|{h.difficulty}|{h.timestamp}|".encode()
    return all(leading_zero_bits(digest(prefix + str(n).encode())) < h.difficulty for n in range(h.nonce))


def validate_chain(ledger: Ledger, check_nonce: bool = True) -> ValidationReport:
    """Check linkage, Merkle roots and proof of work for every block.

    ``ledger.difficulty`` is the minimum a block may declare. With
    ``check_nonce`` the nonce must also be the smallest valid one, which the
    ascending search in :func:`mine_block` guarantees for honest blocks.
    """
    checks = []
    prev_digest = ZERO_DIGEST
    for index, block in enumerate(ledger.blocks):
        h = block.header
        linkage = h.prev_hash == prev_digest and h.id == index
        try:
            merkle = merkle_root(block.records) == h.merkle_root
        except LedgerError:
            merkle = False
        header_digest = h.digest()
        target = (
            ledger.difficulty <= h.difficulty <= MAX_DIFFICULTY
            and leading_zero_bits(header_digest) >= h.difficulty
            and (not check_nonce or _nonce_is_minimal(h))
        )
        checks.append(BlockCheck(h.id, linkage, merkle, target))
        prev_digest = header_digest
    return ValidationReport(checks)


def read_records(ledger: Ledger) -> Iterator[EncryptedRecord]:
    """Stream records in block order; refuses an invalid ledger."""
    report = validate_chain(ledger)
    if not report.valid:
        raise LedgerError(report.summary())
    for block in ledger.blocks:
        yield from block.records


def read_record_csv(source: str | Path | io.TextIOBase, s_max: float) -> list[AccessServiceRecord]:
    """Parse ``s,o,e,score`` rows (header line first, ``#`` lines are comments)."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8", newline="") as fh:
            return read_record_csv(fh, s_max)
    rows = (line for line in source if not line.startswith("#"))
    reader = csv.reader(rows)
    header = next(reader, None)
    if header is None:
        return []
    if [h.strip() for h in header[:4]] != ["s", "o", "e", "score"]:
        raise LedgerError(f"expected header s,o,e,score, got {','.join(header)}")
    records = []
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        if len(row) != 4:
            raise LedgerError(f"row {lineno}: expected 4 fields, got {len(row)}")
        s, o, e, score = row
        try:
            records.append(AccessServiceRecord(s, o, e, float(score), s_max))
        except (ValueError, DomainError) as exc:
            raise LedgerError(f"row {lineno}: {exc}") from None
    return records


def csv_s_max(path: str | Path) -> float | None:
    """Read the ``# s_max=<v>`` header comment of a generated record file, if any."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            for part in line[1:].split():
                key, _, value = part.partition("=")
                if key == "s_max" and value:
                    return float(value)
    return None
