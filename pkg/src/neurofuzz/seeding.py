"""Deterministic per-stage seed derivation from one master seed."""

import hashlib


def derive_seed(master: int, *keys) -> int:
    """Hash ``(master, *keys)`` into a non-negative 63-bit seed."""
    blob = repr((int(master),) + tuple(str(k) for k in keys)).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little") >> 1
