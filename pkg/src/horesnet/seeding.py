"""Root-seed splitting: every random stream is keyed by (root, tag, index)."""

import hashlib


def derive_seed(root: int, tag: str, index: int = 0) -> int:
    digest = hashlib.sha256(f"{int(root)}/{tag}/{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
