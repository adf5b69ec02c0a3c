"""Text payload <-> bit plane codec.

A message is turned into a 2-D binary plane the same size as the cover
image by tiling its 8-bit character codes, and recovered from a decoded
plane by majority vote over the tiled repetitions.
"""

import numpy as np


def expand_message(message: str, height: int, width: int) -> np.ndarray:
    """Tile ``message`` into an ``(height, width)`` uint8 bit plane.

    Characters are encoded as 8-bit codes, most significant bit first,
    concatenated, and repeated cyclically in row-major order until the
    plane is full.  The last repetition may be truncated.
    """
    if not message:
        raise ValueError("message must be non-empty")
    if height < 1 or width < 1:
        raise ValueError(f"plane dimensions must be positive, got {height}x{width}")
    try:
        codes = np.frombuffer(message.encode("latin-1"), dtype=np.uint8)
    except UnicodeEncodeError as exc:
        raise ValueError(f"message characters must fit in 8-bit codes: {exc}") from exc
    bits = np.unpackbits(codes)  # MSB first
    total = height * width
    reps = -(-total // bits.size)
    plane = np.tile(bits, reps)[:total]
    return plane.reshape(height, width)


def contract_message(plane: np.ndarray, message_length: int) -> str:
    """Recover a ``message_length``-character string from a bit plane.

    Each payload bit position is decided by majority vote over all
    complete repetitions present in the plane (partial trailing
    repetitions are ignored; ties decode as 0).
    """
    if plane.ndim != 2:
        raise ValueError(f"plane must be 2-D, got shape {plane.shape}")
    if message_length < 1:
        raise ValueError("message_length must be positive")
    period = message_length * 8
    total = plane.size
    reps = total // period
    if reps < 1:
        raise ValueError(
            f"plane holds {total} bits, fewer than one repetition of {period}"
        )
    flat = np.asarray(plane, dtype=np.int64).reshape(-1)[: reps * period]
    votes = flat.reshape(reps, period).sum(axis=0)
    decided = (2 * votes > reps).astype(np.uint8)
    return np.packbits(decided).tobytes().decode("latin-1")


def payload_bit_accuracy(decoded: np.ndarray, reference: np.ndarray) -> float:
    """Fraction of matching bits between two equally shaped bit planes."""
    if decoded.shape != reference.shape:
        raise ValueError(f"shape mismatch: {decoded.shape} vs {reference.shape}")
    return float(np.mean(decoded.astype(np.uint8) == reference.astype(np.uint8)))
