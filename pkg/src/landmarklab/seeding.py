"""Deterministic sub-seed derivation.

All randomness in the package flows from one root seed through named
sub-streams, so adding a consumer never perturbs another's draws.
"""

from __future__ import annotations

import hashlib


def derive_seed(root: int, name: str) -> int:
    """Stable 63-bit seed for the named sub-stream of a root seed."""
    digest = hashlib.sha256(f"{int(root)}/{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1
