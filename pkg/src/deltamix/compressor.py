"""Estimator-style front end for compressing one delta matrix.

Follows the scikit-learn contract: constructor only stores hyperparameters,
``fit`` learns the compressed representation from a delta matrix and its
calibration activations, fitted state lives in trailing-underscore
attributes, and ``get_params``/``set_params``/``clone`` work out of the box.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import container as container_mod
from .calibration import synth_activations
from .exceptions import ShapeError
from .pipeline import CompressionConfig, LayerJob, compress_layer
from .validation import as_matrix


class DeltaCompressor(BaseEstimator):
    """Mixed-precision SVD compressor for a dense delta weight matrix.

    Parameters
    ----------
    alpha : compressed/original size ratio of a ``source_bits`` source matrix.
    bits : candidate bit widths the allocator may assign per singular vector
        (0 drops the vector).
    f_max : maximum number of distinct bit widths in one scheme.
    damp_rel : relative Hessian damping for the quantization engine.
    eps_rel : relative ridge for the left-factor correction solve.
    use_rtc : correct the left factor against the quantized right factor
        before quantizing it.
    seed : seed for synthetic calibration when ``fit`` gets no activations.

    Attributes (after ``fit``)
    --------------------------
    scheme_ : per-singular-vector bit assignment.
    sigma_ : singular values of the fitted delta.
    payload_bits_, budget_bits_ : storage accounting.
    error_ : calibration-weighted squared reconstruction error.
    result_ : the full per-layer result object.
    """

    def __init__(
        self,
        alpha: float = 1.0 / 16.0,
        source_bits: int = 16,
        bits: tuple[int, ...] = (0, 2, 3, 4, 5, 6, 7, 8),
        f_max: int = 4,
        damp_rel: float = 0.01,
        eps_rel: float = 1e-8,
        use_rtc: bool = True,
        seed: int = 0,
        calib_samples: int = 256,
    ):
        self.alpha = alpha
        self.source_bits = source_bits
        self.bits = bits
        self.f_max = f_max
        self.damp_rel = damp_rel
        self.eps_rel = eps_rel
        self.use_rtc = use_rtc
        self.seed = seed
        self.calib_samples = calib_samples

    def _config(self) -> CompressionConfig:
        return CompressionConfig(
            candidates=tuple(self.bits),
            alpha=self.alpha,
            source_bits=self.source_bits,
            f_max=self.f_max,
            damp_rel=self.damp_rel,
            eps_rel=self.eps_rel,
            use_rtc=self.use_rtc,
            seed=self.seed,
        )

    def fit(self, delta, activations=None, name: str = "delta"):
        """Compress ``delta`` (h_out x h_in) against calibration activations.

        ``activations`` is (h_in, n_samples); when omitted, a seeded Gaussian
        calibration set of ``calib_samples`` columns is generated.
        """
        delta = as_matrix(delta, "delta")
        if activations is None:
            activations = synth_activations(
                delta.shape[1], self.calib_samples, "gaussian", seed=self.seed
            )
        job = LayerJob(
            name=name, delta=delta, config=self._config(), activations=activations
        )
        self.result_ = compress_layer(job)
        self.scheme_ = self.result_.scheme.assignment.copy()
        self.active_bits_ = self.result_.scheme.active_bits
        self.sigma_ = self.result_.sigma.copy()
        self.payload_bits_ = self.result_.payload_bits
        self.budget_bits_ = self.result_.budget_bits
        self.error_ = self.result_.error_end_to_end
        self.n_features_in_ = delta.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise ShapeError("this DeltaCompressor instance is not fitted yet")

    def reconstruct(self) -> np.ndarray:
        """Dense approximation of the fitted delta."""
        self._check_fitted()
        return self.result_.reconstruct()

    def transform(self, activations) -> np.ndarray:
        """Apply the compressed delta as a linear map to new activations."""
        self._check_fitted()
        x = as_matrix(activations, "activations")
        if x.shape[0] != self.n_features_in_:
            raise ShapeError(
                f"activations have {x.shape[0]} rows, expected {self.n_features_in_}"
            )
        return self.reconstruct() @ x

    def to_bytes(self) -> bytes:
        """Serialize the fitted layer as a single-layer container."""
        self._check_fitted()
        return container_mod.pack(self.result_)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())
