"""Mixed-precision SVD compression of delta weight matrices.

The compression pipeline factorizes a dense delta, simulates quantization of
the right factor at every candidate bit width against calibration
statistics, solves an exact 0/1 program for the per-singular-vector bit
assignment under a storage budget, then quantizes both factors with
error-compensated rounding and a closed-form correction of the left factor.
"""

from .allocation import (
    AllocProblem,
    BitScheme,
    budget_from_alpha,
    solve,
    storage_per_row,
)
from .calibration import (
    load_activations,
    load_matrix,
    save_activations,
    save_matrix,
    synth_activations,
    synth_delta,
)
from .compressor import DeltaCompressor
from .container import (
    CompressedDelta,
    LayerRecord,
    pack,
    read_container,
    reconstruct,
    unpack,
    write_container,
)
from .correction import correct_u
from .error_table import ErrorTable, build_error_table, calc_loss
from .exceptions import (
    ConfigError,
    CorruptContainerError,
    DeltamixError,
    FactorizationError,
    IllConditionedHessianError,
    InfeasibleBudgetError,
    NumericalError,
    ShapeError,
    SingularMatrixError,
    UnknownLayerError,
    UnsupportedBitWidthError,
)
from .gptq import HessianContext, QuantizedFactor, quantize_matrix_rows, quantize_row, sim_quant
from .grids import GridParams, fit_grid
from .linalg import GramMatrix, SvdFactors, accumulate_gram, ridge_solve, svd
from .pipeline import (
    CompressionConfig,
    LayerJob,
    LayerResult,
    ModelRun,
    compress_layer,
    compress_model,
    compress_with_scheme,
    scheme_from_bits,
)

__version__ = "0.1.0"

__all__ = [
    "AllocProblem",
    "BitScheme",
    "CompressedDelta",
    "CompressionConfig",
    "ConfigError",
    "CorruptContainerError",
    "DeltaCompressor",
    "DeltamixError",
    "ErrorTable",
    "FactorizationError",
    "GramMatrix",
    "GridParams",
    "HessianContext",
    "IllConditionedHessianError",
    "InfeasibleBudgetError",
    "LayerJob",
    "LayerRecord",
    "LayerResult",
    "ModelRun",
    "NumericalError",
    "QuantizedFactor",
    "ShapeError",
    "SingularMatrixError",
    "SvdFactors",
    "UnknownLayerError",
    "UnsupportedBitWidthError",
    "accumulate_gram",
    "budget_from_alpha",
    "build_error_table",
    "calc_loss",
    "compress_layer",
    "compress_model",
    "compress_with_scheme",
    "correct_u",
    "fit_grid",
    "load_activations",
    "load_matrix",
    "pack",
    "quantize_matrix_rows",
    "quantize_row",
    "read_container",
    "reconstruct",
    "ridge_solve",
    "save_activations",
    "save_matrix",
    "scheme_from_bits",
    "sim_quant",
    "solve",
    "storage_per_row",
    "svd",
    "synth_activations",
    "synth_delta",
    "unpack",
    "write_container",
]
