"""Data layer: entity registration, the simulated DHT and the local trust histories.

The DHT record of an entity holds ``(PK, Hash(SK), T_0, Hash(T))`` under the
key ``digest(PK)``. The local history store keeps the full list
``[T_0, T_1, ...]`` per entity. ``Hash(T)`` chains every appended value, so a
hash check can tell whether the local list was edited and, if so, reload it
from an authoritative replay.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

from tbtm.cipher import chain_digest, digest, history_digest, trust_digest
from tbtm.errors import AlreadyRegistered, AuthenticationError, NotRegistered

DEFAULT_SECRET = "sk"
DEFAULT_T0 = 0.1
DHT_FILE = "dht.json"
HISTORY_FILE = "history.json"

ROLES = ("s", "o", "e")

ReplaySource = Callable[[str], list[float]]


def entity_key(role: str, token: bytes) -> str:
    """Registry key of an encrypted identity playing ``role`` (one of s, o, e)."""
    return f"{role}:{token.hex()}"


def split_key(pk: str) -> tuple[str, bytes]:
    role, _, hexed = pk.partition(":")
    return role, bytes.fromhex(hexed)


@dataclass
class EntityRecord:
    pk: str
    sk_digest: bytes
    t0: float
    check: bytes

    def to_json(self) -> dict:
        return {"pk": self.pk, "sk": self.sk_digest.hex(), "t0": self.t0, "check": self.check.hex()}

    @classmethod
    def from_json(cls, obj: dict) -> "EntityRecord":
        return cls(obj["pk"], bytes.fromhex(obj["sk"]), float(obj["t0"]), bytes.fromhex(obj["check"]))


class DhtStore:
    """In-process stand-in for a DHT: records addressed by the digest of their PK."""

    def __init__(self) -> None:
        self._data: dict[str, EntityRecord] = {}

    @staticmethod
    def key_for(pk: str) -> str:
        return digest(pk).hex()

    def get(self, pk: str) -> EntityRecord | None:
        return self._data.get(self.key_for(pk))

    def put(self, record: EntityRecord) -> None:
        self._data[self.key_for(record.pk)] = record

    def __contains__(self, pk: str) -> bool:
        return self.key_for(pk) in self._data

    def __len__(self) -> int:
        return len(self._data)

    def items(self):
        return self._data.items()

    def to_json(self) -> dict:
        return {k: self._data[k].to_json() for k in sorted(self._data)}

    @classmethod
    def from_json(cls, obj: dict) -> "DhtStore":
        store = cls()
        for key, rec in obj.items():
            record = EntityRecord.from_json(rec)
            if cls.key_for(record.pk) != key:
                raise ValueError(f"DHT key {key} does not address pk {record.pk}")
            store._data[key] = record
        return store


class HistoryStore:
    """Local per-entity trust lists ``pk -> [T_0, T_1, ...]``."""

    def __init__(self) -> None:
        self._data: dict[str, list[float]] = {}

    def __getitem__(self, pk: str) -> list[float]:
        return self._data[pk]

    def __setitem__(self, pk: str, values: list[float]) -> None:
        self._data[pk] = values

    def __contains__(self, pk: str) -> bool:
        return pk in self._data

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def to_json(self) -> dict:
        return {k: self._data[k] for k in sorted(self._data)}

    @classmethod
    def from_json(cls, obj: dict) -> "HistoryStore":
        store = cls()
        store._data = {k: [float(v) for v in vals] for k, vals in obj.items()}
        return store


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


class Registry:
    """Registration, trust storage and hash checking for every entity.

    ``replay`` maps a PK to its authoritative trust history; :meth:`hash_check`
    calls it to repair a tampered local list.
    """

    def __init__(self, replay: ReplaySource | None = None) -> None:
        self.dht = DhtStore()
        self.histories = HistoryStore()
        self.replay = replay
        self._lock = threading.RLock()

    def __contains__(self, pk: str) -> bool:
        return pk in self.histories

    def __len__(self) -> int:
        return len(self.histories)

    def entities(self) -> list[str]:
        return list(self.histories)

    def _record(self, pk: str) -> EntityRecord:
        record = self.dht.get(pk)
        if record is None:
            raise NotRegistered(pk)
        return record

    def register_entity(self, pk: str, secret: bytes | str = DEFAULT_SECRET, t0: float = DEFAULT_T0) -> EntityRecord:
        with self._lock:
            if pk in self.dht or pk in self.histories:
                raise AlreadyRegistered(pk)
            record = EntityRecord(pk=pk, sk_digest=digest(secret), t0=t0, check=trust_digest(t0))
            self.dht.put(record)
            self.histories[pk] = [t0]
            return record

    def store_trust(self, pk: str, new_trust: float) -> bytes:
        with self._lock:
            record = self._record(pk)
            self.histories[pk].append(new_trust)
            record.check = chain_digest(record.check, new_trust)
            return record.check

    def hash_check(self, pk: str) -> bool:
        """Recompute ``Hash(T)`` from the local history and compare with the DHT.

        On a mismatch the local history is reloaded from the replay source (when
        one is configured) and False is returned.
        """
        with self._lock:
            record = self._record(pk)
            if history_digest(self.histories[pk]) == record.check:
                return True
            if self.replay is not None:
                restored = list(self.replay(pk))
                if history_digest(restored) == record.check:
                    self.histories[pk] = restored
            return False

    def change_password(self, pk: str, old_secret: bytes | str, new_secret: bytes | str) -> None:
        with self._lock:
            record = self._record(pk)
            if digest(old_secret) != record.sk_digest:
                raise AuthenticationError(f"wrong secret for {pk}")
            record.sk_digest = digest(new_secret)

    def get_history(self, pk: str) -> list[float]:
        if pk not in self.histories:
            raise NotRegistered(pk)
        return list(self.histories[pk])

    def latest(self, pk: str) -> float:
        if pk not in self.histories:
            raise NotRegistered(pk)
        return self.histories[pk][-1]

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with self._lock:
            _dump(self.dht.to_json(), directory / DHT_FILE)
            _dump(self.histories.to_json(), directory / HISTORY_FILE)

    @classmethod
    def load(cls, directory: str | Path, replay: ReplaySource | None = None) -> "Registry":
        directory = Path(directory)
        registry = cls(replay)
        registry.dht = DhtStore.from_json(json.loads((directory / DHT_FILE).read_text(encoding="utf-8")))
        registry.histories = HistoryStore.from_json(
            json.loads((directory / HISTORY_FILE).read_text(encoding="utf-8"))
        )
        return registry
