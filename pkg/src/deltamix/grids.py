"""Uniform asymmetric quantization grids, one per matrix row.

A grid maps a real value to an integer code in ``[0, 2^bits - 1]`` via
``code = clamp(round(x / scale) + zero_point)`` and back via
``value = (code - zero_point) * scale``. Rounding is half-away-from-zero so
codes are identical across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import UnsupportedBitWidthError
from .validation import as_vector


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest with ties away from zero (numpy rounds ties to even)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class GridParams:
    """Per-row grid: ``bits == 0`` degenerates to the constant 0 (row dropped).

    ``constant`` is set only for degenerate ranges (``max == min``); those rows
    dequantize to the stored constant regardless of code.
    """

    bits: int
    scale: float = 1.0
    zero_point: int = 0
    constant: float | None = None

    @property
    def n_codes(self) -> int:
        return 1 << self.bits if self.bits > 0 else 1

    def quantize(self, x: np.ndarray) -> np.ndarray:
        """Map values to integer codes (int64)."""
        x = np.asarray(x, dtype=np.float64)
        if self.bits == 0 or self.constant is not None:
            return np.zeros(x.shape, dtype=np.int64)
        codes = round_half_away(x / self.scale) + self.zero_point
        return np.clip(codes, 0, self.n_codes - 1).astype(np.int64)

    def dequantize(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes)
        if self.bits == 0:
            return np.zeros(codes.shape, dtype=np.float64)
        if self.constant is not None:
            return np.full(codes.shape, self.constant, dtype=np.float64)
        return (codes.astype(np.float64) - self.zero_point) * self.scale


def fit_grid(row, bits: int) -> GridParams:
    """Fit an asymmetric min-max grid to a row at the given bit width.

    ``scale = (max - min) / (2^bits - 1)`` and
    ``zero_point = round(-min / scale)`` clamped to the code range. Rows that
    do not straddle zero have their range extended to include it so the
    clamped zero point stays representable. A zero bit width drops the row; a
    flat row falls back to the stored-constant path.
    """
    bits = int(bits)
    if bits < 0 or bits == 1:
        raise UnsupportedBitWidthError(f"bit width {bits} is not supported (use 0 or >= 2)")
    if bits == 0:
        return GridParams(bits=0)
    row = as_vector(row, "row")
    if float(np.max(row)) == float(np.min(row)):
        return GridParams(bits=bits, scale=1.0, zero_point=0, constant=float(row[0]))
    lo = min(float(np.min(row)), 0.0)
    hi = max(float(np.max(row)), 0.0)
    scale = (hi - lo) / (2**bits - 1)
    zero_point = int(np.clip(round_half_away(np.float64(-lo / scale)), 0, 2**bits - 1))
    return GridParams(bits=bits, scale=scale, zero_point=zero_point)
