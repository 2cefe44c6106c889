"""Deterministic derivation of per-component seeds from a master seed."""

import hashlib


def derive_seed(master: int, *parts: object) -> int:
    """Derive a 64-bit seed from a master seed and a label path.

    Stable across processes and platforms. Each label path gets an
    independent stream, so adding a client or a round never perturbs the
    seeds derived for the others.
    """
    digest = hashlib.sha256()
    digest.update(str(int(master)).encode())
    for part in parts:
        digest.update(b"\x1f")
        digest.update(str(part).encode())
    return int.from_bytes(digest.digest()[:8], "little")
