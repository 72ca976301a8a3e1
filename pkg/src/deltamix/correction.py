"""Closed-form correction of the left factor before it is quantized.

Quantizing the right factor first moves the reconstruction target away from
the original product. The left factor is therefore replaced by the
least-squares minimizer of the calibration-weighted gap between the original
product and the product built on the quantized right factor:

    u_tilde = (u @ diag(sigma) @ v) @ g @ a.T @ inv(a @ g @ a.T),
    a = diag(sigma) @ v_hat

Rows of ``v_hat`` that were dropped (all-zero, or with a zero singular
value) are removed from the solve; the corresponding columns of the result
are zeroed, since they multiply zero rows and cannot affect the product.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError
from .linalg import SvdFactors, GramMatrix, ridge_solve
from .validation import as_matrix

DEFAULT_EPS_REL = 1e-8


def correct_u(
    svd: SvdFactors,
    v_hat,
    gram: GramMatrix,
    eps_rel: float = DEFAULT_EPS_REL,
) -> np.ndarray:
    """Least-squares replacement for ``svd.u`` against the quantized ``v_hat``.

    With ``eps_rel == 0`` and a full-rank reduced normal matrix the gradient
    of the calibration objective at the result is exactly zero. A singular
    normal matrix at ``eps_rel == 0`` raises
    :class:`~deltamix.exceptions.SingularMatrixError`; dropped rows make this
    common, so a small ridge is the default.
    """
    v_hat = as_matrix(v_hat, "v_hat")
    r = svd.rank
    if v_hat.shape != svd.v.shape:
        raise ShapeError(f"v_hat {v_hat.shape} must match v {svd.v.shape}")
    if v_hat.shape[1] != gram.dim:
        raise ShapeError(f"v_hat has {v_hat.shape[1]} columns, gram expects {gram.dim}")

    a = svd.sigma[:, None] * v_hat
    active = np.flatnonzero(np.any(a != 0.0, axis=1))
    u_tilde = np.zeros_like(svd.u)
    if active.size == 0:
        return u_tilde

    a_act = a[active]
    target = svd.reconstruct()
    normal = a_act @ gram.g @ a_act.T
    rhs = target @ gram.g @ a_act.T
    u_tilde[:, active] = ridge_solve(normal, rhs.T, eps_rel).T
    return u_tilde
