"""End-to-end compression of one delta matrix and of a list of layers.

Per layer: factorize, simulate candidate bit widths, solve the allocation,
quantize the right factor, correct and quantize the left factor, then score
the result on the calibration statistics. Layers are independent; results
are ordered deterministically by layer name.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .allocation import AllocProblem, BitScheme, budget_from_alpha, solve, storage_per_row
from .correction import DEFAULT_EPS_REL, correct_u
from .error_table import ErrorTable, build_error_table
from .exceptions import ConfigError, ShapeError
from .gptq import HessianContext, QuantizedFactor, quantize_matrix_rows
from .linalg import GramMatrix, SvdFactors, svd
from .validation import as_matrix, check_candidate_bits

DEFAULT_CANDIDATES = (0, 2, 3, 4, 5, 6, 7, 8)
OUTLIER_FRACTION = 0.01


@dataclass(frozen=True)
class CompressionConfig:
    """Knobs for one compression run.

    Either ``alpha`` (compressed/original size ratio of a ``source_bits``
    matrix) or ``g_bits`` (average payload bits per original parameter) sets
    the budget; ``g_bits`` wins when both are given.
    """

    candidates: tuple[int, ...] = DEFAULT_CANDIDATES
    alpha: float | None = 1.0 / 16.0
    g_bits: float | None = None
    source_bits: int = 16
    f_max: int = 4
    damp_rel: float = 0.01
    eps_rel: float = DEFAULT_EPS_REL
    use_rtc: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "candidates", check_candidate_bits(self.candidates))
        if self.g_bits is None and self.alpha is None:
            raise ConfigError("one of alpha or g_bits must be set")

    def budget_bits(self, h_in: int, h_out: int) -> float:
        if self.g_bits is not None:
            if self.g_bits < 0:
                raise ConfigError(f"g_bits must be >= 0, got {self.g_bits}")
            return float(self.g_bits) * h_in * h_out
        return budget_from_alpha(self.alpha, self.source_bits, h_in, h_out)


@dataclass
class LayerJob:
    """One unit of work: a named delta matrix plus its calibration data.

    ``activations`` (h_in x n_samples) feeds both the Gram accumulation and
    the outlier diagnostics; a precomputed ``gram`` may be passed instead, in
    which case outlier statistics are unavailable.
    """

    name: str
    delta: np.ndarray
    config: CompressionConfig = field(default_factory=CompressionConfig)
    activations: np.ndarray | None = None
    gram: GramMatrix | None = None

    def resolved_gram(self) -> GramMatrix:
        if self.gram is not None:
            return self.gram
        if self.activations is None:
            raise ConfigError(f"layer {self.name!r} has neither activations nor gram")
        return GramMatrix.from_activations(self.activations)


@dataclass
class LayerResult:
    name: str
    config: CompressionConfig
    factors: SvdFactors
    table: ErrorTable | None
    scheme: BitScheme
    v_quant: QuantizedFactor
    u_quant: QuantizedFactor
    budget_bits: float
    payload_bits: int
    error_v: float
    error_u: float
    error_end_to_end: float
    error_relative: float
    error_all_mean: float | None
    error_outlier_mean: float | None
    timings: dict[str, float]

    @property
    def sigma(self) -> np.ndarray:
        return self.factors.sigma

    def reconstruct(self) -> np.ndarray:
        """Dense approximation ``u_hat @ diag(sigma) @ v_hat``."""
        return (self.u_quant.dequantized * self.sigma) @ self.v_quant.dequantized


def payload_bits_for_scheme(assignment, h_in: int, h_out: int) -> int:
    """Code payload of a scheme: ``(h_in + h_out) * bits`` per active row."""
    bits = np.asarray(assignment, dtype=np.int64)
    return int((h_in + h_out) * np.sum(bits))


def outlier_column_mask(x: np.ndarray, fraction: float = OUTLIER_FRACTION) -> np.ndarray:
    """Boolean mask of the top-``fraction`` calibration columns by max |entry|."""
    n = x.shape[1]
    n_out = max(1, math.ceil(fraction * n))
    magnitude = np.max(np.abs(x), axis=0)
    order = np.argsort(-magnitude, kind="stable")
    mask = np.zeros(n, dtype=bool)
    mask[order[:n_out]] = True
    return mask


def _stage(timings: dict, name: str):
    class _Timer:
        def __enter__(self):
            self.t0 = time.perf_counter()

        def __exit__(self, exc_type, exc, tb):
            timings[name] = time.perf_counter() - self.t0
            if exc is not None and not hasattr(exc, "stage"):
                exc.stage = name
            return False

    return _Timer()


def compress_with_scheme(
    name: str,
    factors: SvdFactors,
    gram: GramMatrix,
    scheme: BitScheme,
    config: CompressionConfig,
    activations: np.ndarray | None = None,
    table: ErrorTable | None = None,
    timings: dict | None = None,
) -> LayerResult:
    """Quantize both factors under a fixed scheme and score the result.

    This is the tail of :func:`compress_layer`; ablations and baseline
    schemes (uniform bits, no correction) reuse it directly.
    """
    timings = {} if timings is None else timings
    h_out = factors.u.shape[0]
    h_in = factors.v.shape[1]
    budget = config.budget_bits(h_in, h_out)
    payload = payload_bits_for_scheme(scheme.assignment, h_in, h_out)
    if payload > budget:
        raise ConfigError(
            f"layer {name!r}: scheme payload {payload} exceeds budget {budget:g}"
        )

    with _stage(timings, "quantize_v"):
        ctx_v = HessianContext.from_gram(gram, damp_rel=config.damp_rel)
        v_quant = quantize_matrix_rows(
            factors.v,
            ctx_v,
            scheme.assignment,
            axis="row",
            row_weights=factors.sigma**2,
        )

    with _stage(timings, "rtc"):
        if config.use_rtc:
            u_base = correct_u(factors, v_quant.dequantized, gram, config.eps_rel)
        else:
            u_base = factors.u

    with _stage(timings, "quantize_u"):
        a = factors.sigma[:, None] * v_quant.dequantized
        h_u = 2.0 * (a @ gram.g @ a.T)
        ctx_u = HessianContext(h_u, damp_rel=config.damp_rel)
        u_quant = quantize_matrix_rows(u_base, ctx_u, scheme.assignment, axis="column")

    with _stage(timings, "evaluate"):
        target = factors.reconstruct()
        approx = (u_quant.dequantized * factors.sigma) @ v_quant.dequantized
        diff = target - approx
        e2e = float(np.sum((diff @ gram.g) * diff))
        base = float(np.sum((target @ gram.g) * target))
        relative = math.sqrt(max(e2e, 0.0) / base) if base > 0 else 0.0
        all_mean = out_mean = None
        if activations is not None:
            x = as_matrix(activations, "activations")
            dx = diff @ x
            all_mean = float(np.sum(dx * dx)) / x.shape[1]
            mask = outlier_column_mask(x)
            dxo = dx[:, mask]
            out_mean = float(np.sum(dxo * dxo)) / int(np.sum(mask))

    return LayerResult(
        name=name,
        config=config,
        factors=factors,
        table=table,
        scheme=scheme,
        v_quant=v_quant,
        u_quant=u_quant,
        budget_bits=budget,
        payload_bits=payload,
        error_v=v_quant.total_error,
        error_u=u_quant.total_error,
        error_end_to_end=e2e,
        error_relative=relative,
        error_all_mean=all_mean,
        error_outlier_mean=out_mean,
        timings=timings,
    )


def scheme_from_bits(assignment, table: ErrorTable, h_in: int, h_out: int) -> BitScheme:
    """Wrap a raw per-row bit vector as a BitScheme scored against a table."""
    bits = np.asarray(assignment, dtype=np.int64)
    if bits.size != table.rows:
        raise ShapeError(f"scheme has {bits.size} bits for {table.rows} rows")
    bit_to_k = {b: k for k, b in enumerate(table.candidates)}
    try:
        cols = np.asarray([bit_to_k[int(b)] for b in bits])
    except KeyError as exc:
        raise ConfigError(f"scheme uses bit {exc.args[0]} outside the candidate set") from exc
    objective = float(np.sum(table.errors[np.arange(table.rows), cols]))
    spent = payload_bits_for_scheme(bits, h_in, h_out)
    return BitScheme(
        assignment=bits,
        active_bits=tuple(sorted(set(int(b) for b in bits))),
        objective=objective,
        spent=spent,
    )


def compress_layer(job: LayerJob, scheme: BitScheme | None = None) -> LayerResult:
    """Run the full per-layer flow; ``scheme`` overrides the solver when given."""
    timings: dict[str, float] = {}
    try:
        delta = as_matrix(job.delta, f"delta[{job.name}]")
        h_out, h_in = delta.shape

        with _stage(timings, "gram"):
            gram = job.resolved_gram()
            if gram.dim != h_in:
                raise ShapeError(
                    f"layer {job.name!r}: gram dim {gram.dim} != delta columns {h_in}"
                )

        with _stage(timings, "svd"):
            factors = svd(delta)

        with _stage(timings, "error_table"):
            table = build_error_table(
                factors.v, factors.sigma, gram, job.config.candidates, job.config.damp_rel
            )

        with _stage(timings, "solve"):
            if scheme is None:
                problem = AllocProblem(
                    table=table,
                    storage_per_row=storage_per_row(job.config.candidates, h_in, h_out),
                    budget=job.config.budget_bits(h_in, h_out),
                    f_max=job.config.f_max,
                )
                scheme = solve(problem)

        return compress_with_scheme(
            job.name,
            factors,
            gram,
            scheme,
            job.config,
            activations=job.activations,
            table=table,
            timings=timings,
        )
    except Exception as exc:
        if not hasattr(exc, "layer"):
            exc.layer = job.name
        raise


@dataclass
class GroupStats:
    names: list[str]
    mean_end_to_end: float | None
    mean_all: float | None
    mean_outlier: float | None


@dataclass
class ModelSummary:
    groups: dict[str, GroupStats]
    mean_end_to_end: float
    total_payload_bits: int
    total_budget_bits: float


@dataclass
class ModelRun:
    results: list[LayerResult]
    summary: ModelSummary
    failures: list[tuple[str, str, str]]  # (layer, stage, message)


def _group_stats(results: list[LayerResult]) -> GroupStats:
    if not results:
        return GroupStats(names=[], mean_end_to_end=None, mean_all=None, mean_outlier=None)
    alls = [r.error_all_mean for r in results if r.error_all_mean is not None]
    outs = [r.error_outlier_mean for r in results if r.error_outlier_mean is not None]
    return GroupStats(
        names=[r.name for r in results],
        mean_end_to_end=float(np.mean([r.error_end_to_end for r in results])),
        mean_all=float(np.mean(alls)) if alls else None,
        mean_outlier=float(np.mean(outs)) if outs else None,
    )


def summarize(results: list[LayerResult]) -> ModelSummary:
    """Aggregate per-layer errors into front/middle/back thirds of the stack."""
    n = len(results)
    n_low = n // 3
    n_mid = n // 3
    groups = {
        "low": _group_stats(results[:n_low]),
        "mid": _group_stats(results[n_low : n_low + n_mid]),
        "high": _group_stats(results[n_low + n_mid :]),
    }
    return ModelSummary(
        groups=groups,
        mean_end_to_end=float(np.mean([r.error_end_to_end for r in results])) if results else 0.0,
        total_payload_bits=int(sum(r.payload_bits for r in results)),
        total_budget_bits=float(sum(r.budget_bits for r in results)),
    )


def compress_model(jobs: list[LayerJob], strict: bool = True) -> ModelRun:
    """Compress a list of layers independently; results ordered by layer name.

    In strict mode the first failing layer aborts the run; in lenient mode
    failures are recorded and the remaining layers still complete.
    """
    names = [job.name for job in jobs]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ConfigError(f"duplicate layer names: {dupes}")
    results: list[LayerResult] = []
    failures: list[tuple[str, str, str]] = []
    for job in sorted(jobs, key=lambda j: j.name):
        try:
            results.append(compress_layer(job))
        except Exception as exc:
            if strict:
                raise
            failures.append(
                (job.name, getattr(exc, "stage", "unknown"), f"{type(exc).__name__}: {exc}")
            )
    return ModelRun(results=results, summary=summarize(results), failures=failures)
