"""Named-substream seed derivation.

Every random draw in the package flows from one master seed through a
named substream, so adding or removing a stage never perturbs another
stage's draws.
"""

import hashlib


def substream_seed(master: int, *names: str) -> int:
    """Derive a 64-bit seed for the substream identified by `names`."""
    h = hashlib.sha256()
    h.update(str(int(master)).encode("utf-8"))
    for name in names:
        h.update(b"\x1f")
        h.update(name.encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big")
