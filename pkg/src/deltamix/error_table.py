"""Per-row, per-bit quantization error table for the allocator.

For row i of the right factor quantized at candidate bit b, the recorded
error is ``sigma_i**2 * d @ g @ d.T`` with ``d`` the row's quantization
difference and ``g`` the calibration Gram matrix: a "scaling" part driven by
the singular value and a "difference" part driven by grid resolution and
data. Entries are kept raw (never normalized); the allocator consumes them
as-is.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeError
from .gptq import HessianContext, sim_quant
from .linalg import GramMatrix
from .validation import as_matrix, as_vector, check_candidate_bits


@dataclass(frozen=True)
class ErrorTable:
    """``errors[i, k]``: cost of quantizing row i at ``candidates[k]`` bits.

    ``differences`` holds the data-driven factor alone, so that
    ``errors[i, k] == scaling[i] * differences[i, k]`` with
    ``scaling[i] == sigma[i]**2``.
    """

    candidates: tuple[int, ...]
    sigma: np.ndarray
    differences: np.ndarray
    errors: np.ndarray

    @property
    def rows(self) -> int:
        return self.errors.shape[0]

    @property
    def scaling(self) -> np.ndarray:
        return self.sigma**2

    def decompose(self, row: int, bit_index: int) -> tuple[float, float]:
        """Return (scaling, difference) whose product is the table entry."""
        if not 0 <= row < self.rows:
            raise ShapeError(f"row {row} out of range 0..{self.rows - 1}")
        if not 0 <= bit_index < len(self.candidates):
            raise ShapeError(f"bit index {bit_index} out of range")
        return float(self.sigma[row] ** 2), float(self.differences[row, bit_index])

    def to_csv(self) -> str:
        """Dump as ``row,bit,scaling,difference,error`` lines."""
        buf = io.StringIO()
        buf.write("row,bit,scaling,difference,error\n")
        for i in range(self.rows):
            s = float(self.sigma[i] ** 2)
            for k, b in enumerate(self.candidates):
                buf.write(
                    f"{i},{b},{s:.17g},{self.differences[i, k]:.17g},"
                    f"{self.errors[i, k]:.17g}\n"
                )
        return buf.getvalue()


def calc_loss(v, v_hat, sigma, gram: GramMatrix):
    """Per-row errors and differences of one quantized candidate.

    Returns ``(errors, differences)`` with
    ``differences[i] = d_i @ g @ d_i.T`` and ``errors[i] = sigma_i**2 *
    differences[i]`` for ``d_i = v_i - v_hat_i``.
    """
    v = as_matrix(v, "v")
    v_hat = as_matrix(v_hat, "v_hat")
    sigma = as_vector(sigma, "sigma")
    if v.shape != v_hat.shape:
        raise ShapeError(f"v {v.shape} and v_hat {v_hat.shape} differ in shape")
    if sigma.size != v.shape[0]:
        raise ShapeError(f"sigma has {sigma.size} entries for {v.shape[0]} rows")
    if v.shape[1] != gram.dim:
        raise ShapeError(f"v has {v.shape[1]} columns, gram expects {gram.dim}")
    delta = v - v_hat
    differences = np.sum((delta @ gram.g) * delta, axis=1)
    return sigma**2 * differences, differences


def build_error_table(
    v,
    sigma,
    gram: GramMatrix,
    candidates,
    damp_rel: float = 0.01,
) -> ErrorTable:
    """Simulate every candidate bit width and collect the loss table.

    Bit 0 is analytic (the quantized row is exactly zero), so it costs no
    engine run; the remaining candidates share one Hessian factorization.
    """
    q = check_candidate_bits(candidates)
    v = as_matrix(v, "v")
    sigma = as_vector(sigma, "sigma")
    rows = v.shape[0]
    errors = np.zeros((rows, len(q)))
    differences = np.zeros((rows, len(q)))
    ctx = None
    if any(b != 0 for b in q):
        ctx = HessianContext.from_gram(gram, damp_rel=damp_rel)
    for k, b in enumerate(q):
        v_hat = np.zeros_like(v) if b == 0 else sim_quant(v, b, gram, ctx=ctx)
        errors[:, k], differences[:, k] = calc_loss(v, v_hat, sigma, gram)
    return ErrorTable(candidates=q, sigma=sigma.copy(), differences=differences, errors=errors)
