"""64-bit DCT perceptual hash and greedy Hamming deduplication.

Construction: area-average the luma plane to 32x32, take the unnormalised
type-II DCT along both axes, keep the top-left 8x8 block, drop the DC term and
set bit ``i`` when AC coefficient ``i`` (row-major) is strictly greater than the
median of the 63 AC coefficients. Bit 63 is padding and always 0. Bit 0 is the
most significant bit of the packed integer.
"""

import io
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

SIDE = 32
BLOCK = 8
LUMA = (0.299, 0.587, 0.114)


class ImageDecodeError(ValueError):
    pass


@dataclass(frozen=True)
class PerceptualHash:
    bits: int

    def __post_init__(self):
        if not 0 <= self.bits < 1 << 64:
            raise ValueError("hash must fit in 64 bits")

    def __str__(self) -> str:
        return f"{self.bits:016x}"

    def __sub__(self, other: "PerceptualHash") -> int:
        return hamming(self, other)

    @classmethod
    def from_hex(cls, s: str) -> "PerceptualHash":
        return cls(int(s, 16))

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "PerceptualHash":
        if len(bits) != 64:
            raise ValueError("need exactly 64 bits")
        value = 0
        for b in bits:
            value = (value << 1) | (1 if b else 0)
        return cls(value)

    def bit_list(self) -> list[int]:
        return [(self.bits >> (63 - i)) & 1 for i in range(64)]


def hamming(a: PerceptualHash, b: PerceptualHash) -> int:
    return (a.bits ^ b.bits).bit_count()


def to_luma(image) -> np.ndarray:
    """Float luma plane from a PIL image, an ndarray (HxW, HxWx3/4) or encoded bytes."""
    if isinstance(image, (bytes, bytearray, memoryview)):
        try:
            image = Image.open(io.BytesIO(bytes(image)))
            image.load()
        except (UnidentifiedImageError, OSError) as e:
            raise ImageDecodeError(f"cannot decode image: {e}") from None
    if isinstance(image, Image.Image):
        if image.mode in ("L", "I", "F", "I;16"):
            arr = np.asarray(image, dtype=np.float64)
        else:
            arr = np.asarray(image.convert("RGB"), dtype=np.float64)
    else:
        arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[2] == 1:
            arr = arr[:, :, 0]
        elif arr.shape[2] in (3, 4):
            arr = arr[:, :, 0] * LUMA[0] + arr[:, :, 1] * LUMA[1] + arr[:, :, 2] * LUMA[2]
        else:
            raise ImageDecodeError(f"unsupported channel count {arr.shape[2]}")
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ImageDecodeError(f"unsupported raster shape {arr.shape}")
    return arr


@lru_cache(maxsize=64)
def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i averages input cells overlapping [i, i+1) * n_in / n_out."""
    scale = n_in / n_out
    lo = np.arange(n_out)[:, None] * scale
    hi = lo + scale
    j = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, j + 1) - np.maximum(lo, j), 0, None)
    return overlap / scale


def area_resize(plane: np.ndarray, size: int = SIDE) -> np.ndarray:
    h, w = plane.shape
    return _area_matrix(h, size) @ plane @ _area_matrix(w, size).T


@lru_cache(maxsize=4)
def _dct_rows(n: int, k: int) -> np.ndarray:
    u = np.arange(k)[:, None]
    x = np.arange(n)[None, :]
    return np.cos(np.pi * u * (2 * x + 1) / (2 * n))


def low_frequency_block(image) -> np.ndarray:
    """The 8x8 top-left DCT-II block of the 32x32 luma plane."""
    small = area_resize(to_luma(image))
    # removing the mean only changes the DC term and makes flat images exactly zero
    small = small - small.mean()
    c = _dct_rows(SIDE, BLOCK)
    block = c @ small @ c.T
    tol = 1e-9 * (1.0 + np.abs(small).max()) * SIDE * SIDE
    block[np.abs(block) < tol] = 0.0
    return block


def phash(image) -> PerceptualHash:
    ac = low_frequency_block(image).ravel()[1:]
    median = np.median(ac)
    bits = [int(v > median) for v in ac] + [0]
    return PerceptualHash.from_bits(bits)


def dedup(entries: Sequence[tuple], threshold: int = 10) -> list[tuple]:
    """Greedy scan keeping an entry iff it is farther than ``threshold`` from every kept one.

    ``entries`` are ``(ref, PerceptualHash)`` pairs; the first (primary) is always kept.
    """
    kept: list[tuple] = []
    for i, entry in enumerate(entries):
        h = entry[1]
        if i == 0 or all(hamming(h, k[1]) > threshold for k in kept):
            kept.append(entry)
    return kept
