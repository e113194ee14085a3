"""Field-level triple encryption and the hash primitives used by the ledger and registry.

Identities are encrypted with three-key EDE triple DES in ECB mode::

    C = E_k3(D_k2(E_k1(P)))        P = D_k1(E_k2(D_k3(C)))

Each field is padded PKCS#7-style to the 8-octet block size. Encryption is
deterministic, so equal identities yield equal tokens; the registry relies on
that to address entities by ciphertext without ever decrypting.
"""

from __future__ import annotations

import hashlib
import os
import secrets
import warnings
from dataclasses import dataclass
from functools import lru_cache

from cryptography.hazmat.decrepit.ciphers.algorithms import TripleDES
from cryptography.hazmat.primitives import padding
from cryptography.hazmat.primitives.ciphers import Cipher, modes

from tbtm.errors import CipherError, ConfigError

BLOCK_SIZE = 8
KEY_SIZE = 8
DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)
KEYS_ENV = "TBTM_KEYS"

# Reproducible default for demos and experiments; real deployments pass --keys.
DEFAULT_KEYS_HEX = "0123456789abcdef,23456789abcdef01,456789abcdef0123"


@dataclass(frozen=True)
class KeySet:
    k1: bytes
    k2: bytes
    k3: bytes
    allow_degenerate: bool = False

    def __post_init__(self) -> None:
        for name in ("k1", "k2", "k3"):
            key = getattr(self, name)
            if not isinstance(key, (bytes, bytearray)) or len(key) != KEY_SIZE:
                raise ConfigError(f"{name} must be {KEY_SIZE} octets")
        if len({self.k1, self.k2, self.k3}) < 3:
            # EDE with k1 == k2 or k2 == k3 collapses to single DES.
            if not self.allow_degenerate:
                raise ConfigError("keys must be pairwise distinct (pass allow_degenerate=True to override)")
            warnings.warn("repeated DES keys: triple encryption degrades", RuntimeWarning, stacklevel=2)

    @classmethod
    def from_hex(cls, text: str, allow_degenerate: bool = False) -> "KeySet":
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise ConfigError("expected three comma-separated hex keys")
        try:
            raw = [bytes.fromhex(p) for p in parts]
        except ValueError as exc:
            raise ConfigError(f"bad hex key: {exc}") from None
        return cls(*raw, allow_degenerate=allow_degenerate)

    @classmethod
    def from_env(cls, default: str | None = DEFAULT_KEYS_HEX) -> "KeySet":
        text = os.environ.get(KEYS_ENV, default)
        if text is None:
            raise ConfigError(f"{KEYS_ENV} is not set")
        return cls.from_hex(text)

    @classmethod
    def generate(cls) -> "KeySet":
        while True:
            keys = [secrets.token_bytes(KEY_SIZE) for _ in range(3)]
            if len(set(keys)) == 3:
                return cls(*keys)

    def to_hex(self) -> str:
        return ",".join(k.hex() for k in (self.k1, self.k2, self.k3))


@lru_cache(maxsize=64)
def _cipher(k1: bytes, k2: bytes, k3: bytes) -> Cipher:
    # The library's 24-octet key runs E_k1, D_k2, E_k3 in that order.
    return Cipher(TripleDES(k1 + k2 + k3), modes.ECB())


def des_encrypt_block(key: bytes, block: bytes) -> bytes:
    """Single DES on one 8-octet block (EDE with one repeated key)."""
    if len(key) != KEY_SIZE or len(block) != BLOCK_SIZE:
        raise ConfigError("DES needs an 8-octet key and an 8-octet block")
    enc = _cipher(key, key, key).encryptor()
    return enc.update(block) + enc.finalize()


def des_decrypt_block(key: bytes, block: bytes) -> bytes:
    if len(key) != KEY_SIZE or len(block) != BLOCK_SIZE:
        raise ConfigError("DES needs an 8-octet key and an 8-octet block")
    dec = _cipher(key, key, key).decryptor()
    return dec.update(block) + dec.finalize()


def encrypt_field(plaintext: bytes | str, keys: KeySet) -> bytes:
    """Pad and triple-encrypt one record field. Returns the ciphertext octets."""
    if isinstance(plaintext, str):
        plaintext = plaintext.encode("utf-8")
    if not plaintext:
        raise ValueError("plaintext must be non-empty")
    padder = padding.PKCS7(BLOCK_SIZE * 8).padder()
    padded = padder.update(plaintext) + padder.finalize()
    enc = _cipher(keys.k1, keys.k2, keys.k3).encryptor()
    return enc.update(padded) + enc.finalize()


def decrypt_field(token: bytes, keys: KeySet) -> bytes:
    if not token or len(token) % BLOCK_SIZE:
        raise CipherError(f"token length {len(token)} is not a positive multiple of {BLOCK_SIZE}")
    dec = _cipher(keys.k1, keys.k2, keys.k3).decryptor()
    padded = dec.update(token) + dec.finalize()
    unpadder = padding.PKCS7(BLOCK_SIZE * 8).unpadder()
    try:
        return unpadder.update(padded) + unpadder.finalize()
    except ValueError:
        raise CipherError("invalid padding after decryption (wrong keys or tampered token)") from None


def digest(data: bytes | str) -> bytes:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).digest()


def encode_trust(value: float) -> bytes:
    """Canonical octets for a trust value: fixed 12-digit decimal, no negative zero."""
    text = f"{value:.12f}"
    if text.startswith("-") and not text.strip("-0."):
        text = text[1:]
    return text.encode("ascii")


def trust_digest(value: float) -> bytes:
    return digest(encode_trust(value))


def chain_digest(prev: bytes, new_trust: float) -> bytes:
    """Advance a trust-history check value by one entry.

    ``Hash(T_{i+1}) = Hash(Hash(T_i) || Hash(T_{i+1}))`` with ``||`` octet concatenation.
    """
    if len(prev) != DIGEST_SIZE:
        raise ValueError(f"previous digest must be {DIGEST_SIZE} octets")
    return digest(prev + trust_digest(new_trust))


def history_digest(history) -> bytes:
    """Fold :func:`chain_digest` over a trust history ``[T_0, T_1, ...]``."""
    it = iter(history)
    try:
        check = trust_digest(next(it))
    except StopIteration:
        raise ValueError("history must contain at least T_0") from None
    for value in it:
        check = chain_digest(check, value)
    return check
