"""Deterministic seed splitting."""

import hashlib


def child_seed(master: int, *keys) -> int:
    """64-bit seed derived from ``master`` and a tuple of keys (ints or tags)."""
    payload = repr((int(master),) + tuple(keys)).encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")
