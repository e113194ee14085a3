"""TokenChain ledger and three-layer trust management (data, computing, control)."""

from tbtm.cipher import KeySet, chain_digest, decrypt_field, digest, encrypt_field
from tbtm.trust import (
    OffsetRatio,
    TrustOffsetSplit,
    TrustState,
    WeightParams,
    convergence_feasible,
    convergence_value,
    split_offset,
    update_trust,
)

__version__ = "0.1.0"

__all__ = [
    "KeySet",
    "OffsetRatio",
    "TrustOffsetSplit",
    "TrustState",
    "WeightParams",
    "chain_digest",
    "convergence_feasible",
    "convergence_value",
    "decrypt_field",
    "digest",
    "encrypt_field",
    "split_offset",
    "update_trust",
]
