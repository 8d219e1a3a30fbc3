"""Content hashing and the 64-bit DCT perceptual hash.

The perceptual hash is pinned bit-exactly so stored hashes stay
comparable across versions:

1. decode, convert to 8-bit grayscale (ITU-R 601-2 luma),
2. bilinear resize to 32x32,
3. 2-D type-II DCT (unnormalized) in float64,
4. keep the top-left 8x8 low-frequency block (DC included),
5. threshold each coefficient against the median of the 64,
6. pack row-major, most significant bit first, into one 64-bit integer.
"""

from __future__ import annotations

import hashlib
import io

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.fft import dctn

from .errors import UndecodableImageError

PHASH_BITS = 64
_DCT_SIZE = 32
_BLOCK = 8


def content_hash(data: bytes) -> str:
    """SHA-256 hex digest of the raw payload bytes."""
    return hashlib.sha256(data).hexdigest()


def decode_image(data: bytes) -> Image.Image:
    """Decode payload bytes to a PIL image or raise UndecodableImageError."""
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
        return img
    except (UnidentifiedImageError, OSError) as exc:
        raise UndecodableImageError(f"payload does not decode as an image: {exc}") from exc


def perceptual_hash(image: Image.Image | bytes) -> int:
    """64-bit DCT hash of an image (see module docstring for the procedure)."""
    if isinstance(image, bytes):
        image = decode_image(image)
    gray = image.convert("L").resize((_DCT_SIZE, _DCT_SIZE), Image.Resampling.BILINEAR)
    pixels = np.asarray(gray, dtype=np.float64)
    coeffs = dctn(pixels, type=2)
    block = coeffs[:_BLOCK, :_BLOCK]
    median = np.median(block)
    bits = (block > median).flatten()
    value = 0
    for bit in bits:
        value = (value << 1) | int(bit)
    return value


def hamming_distance(a: int, b: int) -> int:
    """Number of differing bits between two 64-bit hashes."""
    return ((a ^ b) & (2**PHASH_BITS - 1)).bit_count()
