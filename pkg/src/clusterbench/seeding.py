"""Named seed substreams: one root seed, independent child seeds per stage.

Child seeds are derived by hashing the root seed with a stream name, so
adding or reordering stages never perturbs another stage's random draws.
"""

from __future__ import annotations

import hashlib


def derive_seed(root_seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{root_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
