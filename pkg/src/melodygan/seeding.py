"""Deterministic derivation of named random streams from a base seed.

Every source of randomness in the package draws from a generator seeded via
`derive_seed`, so independent streams (one per attribute, per epoch, per
batch) can be reproduced individually without replaying global RNG state.
crc32 is used as a stable stringly-keyed hash; Python's builtin hash() is
salted per process and must not be used for this.
"""

from __future__ import annotations

import zlib

_SEPARATOR = "\x1f"


def derive_seed(*parts) -> int:
    """Collapse a tuple of labels/ints into a stable 32-bit seed."""
    text = _SEPARATOR.join(str(part) for part in parts)
    return zlib.crc32(text.encode("utf-8"))
