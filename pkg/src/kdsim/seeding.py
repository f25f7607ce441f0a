"""Deterministic derivation of nested RNG streams.

Every piece of randomness in the package flows through one of these
helpers. The builtin hash() is salted per process, so seeds are derived
with SHA-256 instead; the mapping from a tuple of plain values to a
63-bit seed is stable across processes, platforms and interpreter
versions.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 63) - 1


def stable_seed(*parts: int | float | str | bool) -> int:
    """Hash a tuple of ints, floats, bools and strings into a 63-bit seed."""
    digest = hashlib.sha256()
    for part in parts:
        if isinstance(part, bool):
            # bool is an int subclass; tag it separately so True != 1
            token = f"b:{part}"
        elif isinstance(part, (int, np.integer)):
            token = f"i:{int(part)}"
        elif isinstance(part, (float, np.floating)):
            token = f"f:{float(part)!r}"
        elif isinstance(part, str):
            token = f"s:{part}"
        else:
            raise TypeError(f"cannot derive a seed from {part!r}")
        digest.update(token.encode("utf-8"))
        digest.update(b"\x00")
    return int.from_bytes(digest.digest()[:8], "little") & _MASK


def rng_for(*parts: int | float | str | bool) -> np.random.Generator:
    """A fresh Generator for the stream named by `parts`."""
    return np.random.default_rng(stable_seed(*parts))
