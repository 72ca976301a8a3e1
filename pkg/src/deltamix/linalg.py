"""Dense matrix factorizations and calibration statistics.

Everything downstream runs in float64. The SVD is a one-sided Jacobi
iteration with a deterministic sign convention so that repeated runs on the
same input produce bit-identical factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import FactorizationError, ShapeError, SingularMatrixError
from .validation import as_matrix, check_square, check_symmetric

_JACOBI_MAX_SWEEPS = 100
_JACOBI_SIN_TOL = 1e-12


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD ``w = u @ diag(sigma) @ v``.

    ``u`` is (h_out, r), ``sigma`` is descending and nonnegative of length
    r = min(h_out, h_in), and ``v`` is (r, h_in) whose rows are the right
    singular vectors.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return self.sigma.size

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v


class GramMatrix:
    """Streaming accumulator for ``sum_batches X @ X.T`` over calibration batches.

    Batches are summed in submission order; within a batch the product is a
    single dense GEMM, so results are reproducible for a fixed input sequence.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ShapeError(f"Gram dimension must be >= 1, got {dim}")
        self.dim = int(dim)
        self.g = np.zeros((dim, dim), dtype=np.float64)
        self.n_samples = 0

    def accumulate(self, x_batch) -> "GramMatrix":
        x = as_matrix(x_batch, "activation batch")
        if x.shape[0] != self.dim:
            raise ShapeError(
                f"activation batch has {x.shape[0]} rows, expected {self.dim}"
            )
        self.g += x @ x.T
        self.n_samples += x.shape[1]
        return self

    @classmethod
    def from_activations(cls, x) -> "GramMatrix":
        x = as_matrix(x, "activations")
        return cls(x.shape[0]).accumulate(x)

    def validate(self, rel_tol: float = 1e-10) -> None:
        """Check symmetry and that the spectrum is nonnegative up to roundoff."""
        check_symmetric(self.g, "gram matrix", rel_tol)
        if self.dim > 0 and self.n_samples > 0:
            floor = -1e-8 * float(np.trace(self.g)) / self.dim
            lo = float(np.min(scipy.linalg.eigvalsh(self.g)))
            if lo < floor:
                raise ShapeError(f"gram matrix has eigenvalue {lo:g} below {floor:g}")


def accumulate_gram(acc: GramMatrix, x_batch) -> GramMatrix:
    """Functional alias for :meth:`GramMatrix.accumulate`."""
    return acc.accumulate(x_batch)


def _jacobi_orthogonalize(a: np.ndarray):
    """One-sided Jacobi on the columns of ``a`` (rows >= cols assumed helpful).

    Returns (b, v_acc) where b has pairwise-orthogonal columns and
    ``a = b @ v_acc.T`` with ``v_acc`` orthogonal.
    """
    m, n = a.shape
    b = a.copy()
    v_acc = np.eye(n)
    for _ in range(_JACOBI_MAX_SWEEPS):
        max_sin = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                cpq = float(b[:, p] @ b[:, q])
                if cpq == 0.0:
                    continue
                app = float(b[:, p] @ b[:, p])
                aqq = float(b[:, q] @ b[:, q])
                # Symmetric 2x2 eigen rotation zeroing the cross term.
                tau = (aqq - app) / (2.0 * cpq)
                t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau)) if tau != 0.0 else 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                if abs(s) < _JACOBI_SIN_TOL:
                    continue
                bp = b[:, p].copy()
                b[:, p] = c * bp - s * b[:, q]
                b[:, q] = s * bp + c * b[:, q]
                vp = v_acc[:, p].copy()
                v_acc[:, p] = c * vp - s * v_acc[:, q]
                v_acc[:, q] = s * vp + c * v_acc[:, q]
                max_sin = max(max_sin, abs(s))
        if max_sin < _JACOBI_SIN_TOL:
            return b, v_acc
    raise FactorizationError(
        f"Jacobi SVD did not converge within {_JACOBI_MAX_SWEEPS} sweeps "
        f"for a {m}x{n} matrix"
    )


def svd(w) -> SvdFactors:
    """Full thin SVD of a dense matrix; no truncation.

    Rank selection is the allocator's job downstream (a zero bit drops a
    singular vector), so every singular triple is returned, including exact
    zeros. The largest-magnitude entry of each left singular vector is forced
    nonnegative to make the factorization deterministic.
    """
    w = as_matrix(w, "weight matrix")
    m, n = w.shape
    transposed = m < n
    b, v_acc = _jacobi_orthogonalize(w.T if transposed else w)

    norms = np.sqrt(np.sum(b * b, axis=0))
    order = np.argsort(-norms, kind="stable")
    sigma = norms[order]
    b = b[:, order]
    v_acc = v_acc[:, order]

    u_tall = np.zeros_like(b)
    nonzero = sigma > 0
    u_tall[:, nonzero] = b[:, nonzero] / sigma[nonzero]
    # Zero singular values get canonical unit columns; they carry no weight.
    for j in np.flatnonzero(~nonzero):
        u_tall[:, j] = 0.0
        u_tall[j % u_tall.shape[0], j] = 1.0

    if transposed:
        u, v = v_acc, u_tall.T
    else:
        u, v = u_tall, v_acc.T

    # Sign convention: largest-|entry| of each u column nonnegative.
    for j in range(sigma.size):
        k = int(np.argmax(np.abs(u[:, j])))
        if u[k, j] < 0:
            u[:, j] = -u[:, j]
            v[j, :] = -v[j, :]

    return SvdFactors(u=u, sigma=sigma, v=v)


def ridge_solve(a, b, eps_rel: float = 0.0) -> np.ndarray:
    """Solve ``(a + eps_rel * mean(diag(a)) * I) @ z = b`` via Cholesky.

    ``a`` must be symmetric with a nonnegative spectrum (up to roundoff);
    ``eps_rel >= 0``. Raises :class:`SingularMatrixError` when the (possibly
    regularized) matrix cannot be factorized.
    """
    a = np.asarray(a, dtype=np.float64)
    check_symmetric(a, "ridge system matrix")
    if eps_rel < 0:
        raise ShapeError(f"eps_rel must be >= 0, got {eps_rel}")
    b = np.asarray(b, dtype=np.float64)
    rhs = b.reshape(-1, 1) if b.ndim == 1 else b
    if rhs.shape[0] != a.shape[0]:
        raise ShapeError(f"rhs has {rhs.shape[0]} rows, expected {a.shape[0]}")

    dim = a.shape[0]
    m = a if eps_rel == 0.0 else a + (eps_rel * float(np.trace(a)) / dim) * np.eye(dim)
    try:
        factor = scipy.linalg.cho_factor(m, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        cond = float(np.linalg.cond(m))
        raise SingularMatrixError(
            f"symmetric solve failed (cond ~ {cond:.3e}); "
            "pass eps_rel > 0 to regularize"
        ) from exc
    z = scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    return z.ravel() if b.ndim == 1 else z
