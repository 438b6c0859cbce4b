"""Deterministic derivation of per-task random seeds from one master seed.

Every randomized stage of the pipeline (binarization tie-breaks, fold
assignment, weight init, shuffling, Monte-Carlo draws, ...) owns a
substream derived by stable hashing of the master seed plus a label path,
so serial and re-ordered runs produce identical results.
"""

import hashlib
import struct

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, *parts) -> int:
    """Hash a master seed and a label path into a 64-bit substream seed.

    ``parts`` may mix strings and integers; the encoding is unambiguous so
    ("a", 1) and ("a1",) derive different seeds.
    """
    h = hashlib.sha256()
    h.update(b"attrivis.seed.v1")
    h.update(struct.pack("<Q", master & _MASK64))
    for part in parts:
        if isinstance(part, str):
            raw = part.encode("utf-8")
            h.update(b"s" + struct.pack("<I", len(raw)) + raw)
        elif isinstance(part, (int,)):
            h.update(b"i" + struct.pack("<q", part))
        else:
            raise TypeError(f"seed parts must be str or int, got {type(part)!r}")
    return int.from_bytes(h.digest()[:8], "little")
