"""
Flat binary policy checkpoints

Layout: b'HRLP', little-endian int64 (V, F, version), row-major little-endian
float64 weights, frozen mask packed with little-endian bit order.
"""
import logging
from pathlib import Path

import numpy as np

from .engine import PolicyParams

logger = logging.getLogger(__name__)

MAGIC = b'HRLP'
_HEADER = np.dtype('<i8')
_WEIGHT = np.dtype('<f8')


def to_bytes(params: PolicyParams) -> bytes:
    header = np.array([params.vocab_size, params.feature_dim, params.version], dtype=_HEADER)
    weights = np.ascontiguousarray(params.weights, dtype=_WEIGHT)
    mask = np.packbits(params.frozen_mask.ravel(), bitorder='little')
    return MAGIC + header.tobytes() + weights.tobytes() + mask.tobytes()


def from_bytes(blob: bytes) -> PolicyParams:
    if blob[:len(MAGIC)] != MAGIC:
        raise ValueError("Not a policy checkpoint: bad magic")
    offset = len(MAGIC)
    header_size = 3 * _HEADER.itemsize
    if len(blob) < offset + header_size:
        raise ValueError("Truncated checkpoint header")
    vocab_size, feature_dim, version = (int(v) for v in np.frombuffer(blob, dtype=_HEADER, count=3, offset=offset))
    offset += header_size

    n_entries = vocab_size * feature_dim
    mask_size = (n_entries + 7) // 8
    expected = offset + n_entries * _WEIGHT.itemsize + mask_size
    if vocab_size < 1 or feature_dim < 1 or len(blob) != expected:
        raise ValueError(
            f"Checkpoint size {len(blob)} does not match header V={vocab_size}, F={feature_dim} (expected {expected})"
        )

    weights = np.frombuffer(blob, dtype=_WEIGHT, count=n_entries, offset=offset)
    offset += n_entries * _WEIGHT.itemsize
    packed = np.frombuffer(blob, dtype=np.uint8, count=mask_size, offset=offset)
    mask = np.unpackbits(packed, count=n_entries, bitorder='little').astype(bool)

    return PolicyParams(
        weights=weights.astype(np.float64).reshape(vocab_size, feature_dim),
        frozen_mask=mask.reshape(vocab_size, feature_dim),
        version=version,
    )


def save_checkpoint(params: PolicyParams, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(params))
    logger.info(f"Saved policy checkpoint v{params.version} ({params.vocab_size}x{params.feature_dim}) to {path}")
    return path


def load_checkpoint(path) -> PolicyParams:
    params = from_bytes(Path(path).read_bytes())
    logger.info(f"Loaded policy checkpoint v{params.version} from {path}")
    return params
