"""Clip/normalize/quantize tables for attribute storage.

Every attribute is clipped to its range, normalized to [0, 1], and either
uniformly quantized to ``levels`` codes (integer plane) or stored as a
normalized float32 plane. The (lo, hi, levels) triple travels in the
segment header so dequantization is deterministic; the worst-case
round-trip error for in-range inputs is (hi - lo) / (2 * (levels - 1)).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantEntry:
    lo: float
    hi: float
    levels: int | None  # None: lossless float32 of the normalized value

    def __post_init__(self):
        if self.hi <= self.lo:
            raise ValueError(f"invalid clip range [{self.lo}, {self.hi}]")
        if self.levels is not None and self.levels < 2:
            raise ValueError("levels must be >= 2")

    @property
    def max_error(self) -> float:
        if self.levels is None:
            return 0.0
        return (self.hi - self.lo) / (2.0 * (self.levels - 1))


def observed_entry(values: np.ndarray, levels: int | None) -> QuantEntry:
    """Clip range from the data itself (position/scale/features)."""
    lo = float(np.min(values))
    hi = float(np.max(values))
    if hi - lo < 1e-12:
        hi = lo + 1.0  # constant attribute reconstructs exactly at code 0
    return QuantEntry(lo, hi, levels)


def default_quant_spec(gaussians) -> dict:
    """Per-attribute table per the compression defaults.

    Rotation [-1, 2] @ 2^7 codes, opacity [-4, 4] @ 2^6, color [0, 4]
    lossless, scale observed-range @ 2^6, position observed-range lossless.
    """
    from .. import autodiff as ad

    return {
        "positions": observed_entry(ad.val(gaussians.positions), None),
        "scales": observed_entry(ad.val(gaussians.scales), 2**6),
        "rotations": QuantEntry(-1.0, 2.0, 2**7),
        "opacities": QuantEntry(-4.0, 4.0, 2**6),
        "base_colors": QuantEntry(0.0, 4.0, None),
    }


def quantize_attribute(values: np.ndarray, entry: QuantEntry) -> np.ndarray:
    """Clip, normalize, and (optionally) round to integer codes."""
    v = np.clip(np.asarray(values, dtype=np.float64), entry.lo, entry.hi)
    v = (v - entry.lo) / (entry.hi - entry.lo)
    if entry.levels is None:
        return v.astype(np.float32)
    codes = np.rint(v * (entry.levels - 1))
    dtype = np.uint8 if entry.levels <= 256 else np.uint16
    return codes.astype(dtype)


def dequantize_attribute(stored: np.ndarray, entry: QuantEntry) -> np.ndarray:
    v = stored.astype(np.float64)
    if entry.levels is not None:
        v = v / (entry.levels - 1)
    return entry.lo + v * (entry.hi - entry.lo)
