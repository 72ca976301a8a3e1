"""Calibration activations: raw-file ingestion and synthetic generation.

Raw tensor files ("CALX") carry one dense matrix, column-major:

    magic "CALX" | version u16 | dtype u8 (0 = f32, 1 = f64)
    | d u32 | n u32 | payload d*n values, column-major, little-endian

Activations store samples as columns (d features x n samples), matching
their role in the Gram product; delta weight matrices reuse the same
container with d = output rows and n = input columns.
"""

from __future__ import annotations

import re
import struct

import numpy as np

from .exceptions import ConfigError, CorruptContainerError, ShapeError

MAGIC = b"CALX"
VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8"}
_DTYPE_TAGS = {"f32": 0, "f64": 1}

DISTRIBUTIONS = ("gaussian", "heavy_tail", "low_rank")


def save_matrix(path, x, dtype: str = "f64") -> None:
    """Write a dense matrix in CALX layout (column-major payload)."""
    if dtype not in _DTYPE_TAGS:
        raise ConfigError(f"dtype must be one of {sorted(_DTYPE_TAGS)}, got {dtype!r}")
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"matrix must be 2-D, got shape {a.shape}")
    tag = _DTYPE_TAGS[dtype]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HBII", VERSION, tag, a.shape[0], a.shape[1]))
        fh.write(np.asfortranarray(a.astype(_DTYPES[tag])).tobytes(order="F"))


def load_matrix(path, expected_dim: int | None = None) -> np.ndarray:
    """Read a CALX file back as float64, optionally checking the row count."""
    with open(path, "rb") as fh:
        data = fh.read()
    header = struct.calcsize("<HBII") + 4
    if len(data) < header or data[:4] != MAGIC:
        raise CorruptContainerError(f"{path}: not a CALX file")
    version, tag, d, n = struct.unpack("<HBII", data[4:header])
    if version != VERSION:
        raise CorruptContainerError(f"{path}: unsupported CALX version {version}")
    if tag not in _DTYPES:
        raise CorruptContainerError(f"{path}: unknown dtype tag {tag}")
    if n < 1 or d < 1:
        raise ShapeError(f"{path}: at least 1 sample required (got {d}x{n})")
    if expected_dim is not None and d != expected_dim:
        raise ShapeError(f"{path}: has {d} rows, expected {expected_dim}")
    itemsize = np.dtype(_DTYPES[tag]).itemsize
    expected_bytes = header + itemsize * d * n
    if len(data) != expected_bytes:
        raise CorruptContainerError(
            f"{path}: payload is {len(data) - header} bytes, expected {expected_bytes - header}"
        )
    flat = np.frombuffer(data[header:], dtype=_DTYPES[tag])
    return flat.reshape((d, n), order="F").astype(np.float64)


# Activations are just matrices with samples as columns.
save_activations = save_matrix
load_activations = load_matrix


def synth_activations(
    dim: int,
    n: int,
    distribution: str = "gaussian",
    seed: int = 0,
    tail_alpha: float = 1.5,
    rank: int = 1,
) -> np.ndarray:
    """Deterministic synthetic calibration matrix (dim x n).

    ``heavy_tail`` draws Student-t with ``tail_alpha`` degrees of freedom to
    exercise outlier-activation diagnostics; ``low_rank`` multiplies two
    Gaussian factors with inner dimension ``rank``.
    """
    if dim < 1 or n < 1:
        raise ShapeError(f"dim and n must be >= 1, got {dim}, {n}")
    rng = np.random.default_rng(seed)
    if distribution == "gaussian":
        return rng.standard_normal((dim, n))
    if distribution == "heavy_tail":
        if tail_alpha <= 0:
            raise ConfigError(f"heavy_tail alpha must be > 0, got {tail_alpha}")
        return rng.standard_t(tail_alpha, size=(dim, n))
    if distribution == "low_rank":
        if not 1 <= rank:
            raise ConfigError(f"low_rank rank must be >= 1, got {rank}")
        a = rng.standard_normal((dim, rank))
        b = rng.standard_normal((rank, n))
        return a @ b
    raise ConfigError(
        f"unknown distribution {distribution!r}; choose from {DISTRIBUTIONS}"
    )


def synth_delta(h_out: int, h_in: int, decay: float = 0.85, seed: int = 0) -> np.ndarray:
    """Random dense delta with geometrically decaying singular values."""
    if h_out < 1 or h_in < 1:
        raise ShapeError(f"dims must be >= 1, got {h_out}x{h_in}")
    if not 0 < decay <= 1:
        raise ConfigError(f"decay must be in (0, 1], got {decay}")
    rng = np.random.default_rng(seed)
    r = min(h_out, h_in)
    q1, _ = np.linalg.qr(rng.standard_normal((h_out, r)))
    q2, _ = np.linalg.qr(rng.standard_normal((h_in, r)))
    sigma = decay ** np.arange(r)
    return (q1 * sigma) @ q2.T


_SYNTH_RE = re.compile(
    r"^synth:(?P<dist>[a-z_]+)(?:\((?P<param>[0-9.eE+-]+)\))?:(?P<n>\d+)$"
)


def parse_synth_spec(spec: str) -> dict:
    """Parse ``synth:<dist>[(<param>)]:<n>`` into synth_activations kwargs.

    Examples: ``synth:gaussian:256``, ``synth:heavy_tail(1.5):128``,
    ``synth:low_rank(4):64``.
    """
    m = _SYNTH_RE.match(spec)
    if not m:
        raise ConfigError(
            f"bad synthetic calibration spec {spec!r}; expected "
            "'synth:<dist>[(<param>)]:<n>'"
        )
    dist = m.group("dist")
    if dist not in DISTRIBUTIONS:
        raise ConfigError(f"unknown distribution {dist!r}; choose from {DISTRIBUTIONS}")
    kwargs: dict = {"distribution": dist, "n": int(m.group("n"))}
    param = m.group("param")
    if param is not None:
        if dist == "heavy_tail":
            kwargs["tail_alpha"] = float(param)
        elif dist == "low_rank":
            kwargs["rank"] = int(float(param))
        else:
            raise ConfigError(f"distribution {dist!r} takes no parameter")
    return kwargs
