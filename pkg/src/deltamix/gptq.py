"""Row-wise error-compensated quantization.

Each row is quantized column by column in natural order; the residual of a
quantized column is redistributed onto the not-yet-quantized columns through
the upper Cholesky factor of the damped inverse Hessian. All rows of a matrix
share one Hessian factorization, so the whole matrix is processed in a single
vectorized pass over columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import IllConditionedHessianError, ShapeError
from .grids import GridParams, fit_grid, round_half_away
from .linalg import GramMatrix
from .validation import as_matrix, as_vector, check_symmetric

_DAMP_RETRIES = 3


class HessianContext:
    """Shared, immutable Hessian state for quantizing the rows of one matrix.

    Holds the raw Hessian ``h`` (used for error reporting) and the upper
    triangular factor ``t`` with ``inv(h + damp * I) = t.T @ t``, where
    ``damp = damp_rel * mean(diag(h))``. Damping escalates by 10x up to three
    times if the factorization fails.
    """

    def __init__(self, h, damp_rel: float = 0.01):
        h = np.asarray(h, dtype=np.float64)
        check_symmetric(h, "hessian", rel_tol=1e-8)
        self.h = h
        self.dim = h.shape[0]
        mean_diag = float(np.trace(h)) / self.dim
        base = damp_rel * mean_diag if mean_diag > 0 else max(damp_rel, 1e-12)
        last_exc: Exception | None = None
        for attempt in range(_DAMP_RETRIES + 1):
            damp = base * 10.0**attempt
            m = h + damp * np.eye(self.dim)
            try:
                chol = scipy.linalg.cho_factor(m, lower=True, check_finite=False)
                m_inv = scipy.linalg.cho_solve(chol, np.eye(self.dim), check_finite=False)
                self.t = scipy.linalg.cholesky(m_inv, lower=False, check_finite=False)
            except scipy.linalg.LinAlgError as exc:
                last_exc = exc
                continue
            self.damp_rel = damp_rel
            self.damp = damp
            return
        raise IllConditionedHessianError(
            f"hessian ({self.dim}x{self.dim}) could not be factorized after "
            f"{_DAMP_RETRIES} damping escalations"
        ) from last_exc

    @classmethod
    def from_gram(cls, gram: GramMatrix, damp_rel: float = 0.01) -> "HessianContext":
        return cls(2.0 * gram.g, damp_rel=damp_rel)

    def validate(self, tol: float = 1e-6) -> None:
        m = self.h + self.damp * np.eye(self.dim)
        resid = m @ (self.t.T @ self.t) - np.eye(self.dim)
        worst = float(np.max(np.abs(resid)))
        if worst > tol:
            raise IllConditionedHessianError(
                f"inverse factor residual {worst:g} exceeds {tol:g}"
            )


@dataclass
class QuantizedFactor:
    """Quantization result for one factor matrix.

    ``axis == "row"``: one bit width (and one grid) per row.
    ``axis == "column"``: one bit width per column; each row carries one grid
    per active bit class, fit over that row's entries in the class.
    """

    axis: str
    codes: np.ndarray
    dequantized: np.ndarray
    bits: np.ndarray
    row_grids: list[GridParams] | None
    class_bits: tuple[int, ...] | None
    class_grids: list[list[GridParams]] | None
    row_errors: np.ndarray
    total_error: float


class _CellGrids:
    """Dense per-cell grid parameters for the vectorized column loop."""

    def __init__(self, shape):
        self.scale = np.ones(shape)
        self.zero_point = np.zeros(shape)
        self.max_code = np.zeros(shape)
        self.dropped = np.zeros(shape, dtype=bool)
        self.constant = np.zeros(shape)
        self.has_constant = np.zeros(shape, dtype=bool)

    def assign(self, i, j, g: GridParams) -> None:
        """Fill the cells at (row selector i, column selector j) from one grid."""
        if g.bits == 0:
            self.dropped[i, j] = True
        elif g.constant is not None:
            self.has_constant[i, j] = True
            self.constant[i, j] = g.constant
        else:
            self.scale[i, j] = g.scale
            self.zero_point[i, j] = g.zero_point
            self.max_code[i, j] = g.n_codes - 1


def _quadratic_row_errors(delta: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Per-row ``0.5 * d @ h @ d.T`` evaluated against the raw Hessian."""
    return 0.5 * np.sum((delta @ h) * delta, axis=1)


def _compensated_quantize(w: np.ndarray, t: np.ndarray, cg: _CellGrids):
    """Vectorized column loop; returns (codes, dequantized)."""
    work = w.copy()
    codes = np.zeros(w.shape, dtype=np.int64)
    deq = np.zeros_like(w)
    d = w.shape[1]
    for j in range(d):
        col = work[:, j]
        q = np.zeros_like(col)
        cj = np.zeros(col.shape, dtype=np.int64)
        sel = ~cg.dropped[:, j] & ~cg.has_constant[:, j]
        if np.any(sel):
            raw = round_half_away(col[sel] / cg.scale[sel, j]) + cg.zero_point[sel, j]
            c = np.clip(raw, 0, cg.max_code[sel, j]).astype(np.int64)
            cj[sel] = c
            q[sel] = (c - cg.zero_point[sel, j]) * cg.scale[sel, j]
        flat = cg.has_constant[:, j]
        if np.any(flat):
            q[flat] = cg.constant[flat, j]
        codes[:, j] = cj
        deq[:, j] = q
        if j + 1 < d:
            err = (col - q) / t[j, j]
            work[:, j + 1 :] -= np.outer(err, t[j, j + 1 :])
    return codes, deq


def quantize_row(row, ctx: HessianContext, col_bits, grids: dict[int, GridParams]):
    """Quantize one row with per-column bit widths.

    ``grids`` maps each nonzero bit class appearing in ``col_bits`` to the
    grid to use; a zero bit forces the value 0 ("dropped"). Returns
    ``(codes, dequantized, error)`` with ``error = 0.5 * d @ h @ d.T`` for the
    final difference ``d = row - dequantized``.
    """
    row = as_vector(row, "row")
    col_bits = np.asarray(col_bits, dtype=np.int64)
    if row.size != col_bits.size or row.size != ctx.dim:
        raise ShapeError(
            f"row ({row.size}), col_bits ({col_bits.size}) and hessian "
            f"({ctx.dim}) dimensions disagree"
        )
    cg = _CellGrids((1, row.size))
    for b in np.unique(col_bits):
        cols = np.flatnonzero(col_bits == b)
        if b == 0:
            g = GridParams(bits=0)
        elif int(b) in grids:
            g = grids[int(b)]
        else:
            raise ShapeError(f"no grid supplied for bit class {int(b)}")
        cg.assign(0, cols, g)
    codes, deq = _compensated_quantize(row.reshape(1, -1), ctx.t, cg)
    error = float(_quadratic_row_errors(row.reshape(1, -1) - deq, ctx.h)[0])
    return codes[0], deq[0], error


def quantize_matrix_rows(
    m,
    ctx: HessianContext,
    bits,
    axis: str = "row",
    row_weights=None,
) -> QuantizedFactor:
    """Quantize every row of ``m`` independently under a shared Hessian.

    ``axis == "row"``: ``bits`` assigns one bit width per row (each row is
    uniform across columns). ``axis == "column"``: ``bits`` assigns one bit
    width per column, applied identically inside every row.

    ``row_weights`` optionally scales the reported per-row errors (quantized
    codes are unaffected); the V path passes squared singular values here.
    """
    m = as_matrix(m, "factor matrix")
    rows, cols = m.shape
    if cols != ctx.dim:
        raise ShapeError(f"matrix has {cols} columns, hessian expects {ctx.dim}")
    bits = np.asarray(bits, dtype=np.int64)

    cg = _CellGrids(m.shape)
    row_grids: list[GridParams] | None = None
    class_bits: tuple[int, ...] | None = None
    class_grids: list[list[GridParams]] | None = None

    if axis == "row":
        if bits.size != rows:
            raise ShapeError(f"scheme assigns {bits.size} bits for {rows} rows")
        row_grids = [fit_grid(m[i], int(bits[i])) for i in range(rows)]
        for i, g in enumerate(row_grids):
            cg.assign(i, slice(None), g)
    elif axis == "column":
        if bits.size != cols:
            raise ShapeError(f"scheme assigns {bits.size} bits for {cols} columns")
        class_bits = tuple(sorted({int(b) for b in bits if b != 0}))
        class_cols = {b: np.flatnonzero(bits == b) for b in class_bits}
        cg.dropped[:, np.flatnonzero(bits == 0)] = True
        class_grids = []
        for i in range(rows):
            per_class = [fit_grid(m[i, class_cols[b]], b) for b in class_bits]
            class_grids.append(per_class)
            for b, g in zip(class_bits, per_class):
                cg.assign(i, class_cols[b], g)
    else:
        raise ShapeError(f"axis must be 'row' or 'column', got {axis!r}")

    codes, deq = _compensated_quantize(m, ctx.t, cg)
    row_errors = _quadratic_row_errors(m - deq, ctx.h)
    if row_weights is not None:
        row_errors = row_errors * as_vector(row_weights, "row_weights")
    return QuantizedFactor(
        axis=axis,
        codes=codes,
        dequantized=deq,
        bits=bits.copy(),
        row_grids=row_grids,
        class_bits=class_bits,
        class_grids=class_grids,
        row_errors=row_errors,
        total_error=float(np.sum(row_errors)),
    )


def sim_quant(v, bits: int, gram: GramMatrix, ctx: HessianContext | None = None) -> np.ndarray:
    """Quantize every row of ``v`` at one bit width for error estimation.

    Uses the shared Hessian ``2 * gram.g``; a zero bit width returns the zero
    matrix without running the engine. ``ctx`` may carry a prebuilt
    factorization to share across candidate bit widths.
    """
    v = as_matrix(v, "v")
    if v.shape[1] != gram.dim:
        raise ShapeError(f"v has {v.shape[1]} columns, gram expects {gram.dim}")
    if bits == 0:
        return np.zeros_like(v)
    if ctx is None:
        ctx = HessianContext.from_gram(gram)
    return quantize_matrix_rows(v, ctx, np.full(v.shape[0], bits), axis="row").dequantized
