"""Named sub-seeds derived from one master seed."""
import hashlib


def derive_seed(seed: int, stage: str) -> int:
    """Stable 64-bit seed for ``stage``; independent of Python's hash salt."""
    digest = hashlib.sha256(f"{int(seed)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
