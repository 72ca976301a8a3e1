"""Binary container for compressed deltas.

Layout (all integers little-endian):

    file   := magic "DMIX" | version u16 | layer_count u32 | layer*
    layer  := record_len u32 | record
    record := name_len u16 | name utf-8
            | h_out u32 | h_in u32 | r u32
            | n_classes u8 | class bits u8 * n_classes   (nonzero, ascending)
            | payload_bits u64
            | sigma f64 * r
            | scheme u8 * r
            | V grid  (scale f32, zero_point i32) per active row, ascending
            | V codes per active row: h_in codes at scheme[i] bits,
              MSB-first, padded to a byte boundary per row
            | U grids (scale f32, zero_point i32) per left-factor row x class
            | U codes per left-factor row: entries at active columns in
              ascending column order, each at its column's bit width,
              MSB-first, padded to a byte boundary per row
            | crc32 u32 over all preceding record bytes

A ``zero_point`` of -1 marks a degenerate (flat-row) grid whose constant
value is carried in the scale field. Code payload accounting counts exactly
``(h_in + h_out) * bits`` per active row; per-row byte padding and all grid
and header bytes are reported separately as metadata.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .exceptions import CorruptContainerError, UnknownLayerError
from .grids import GridParams
from .pipeline import LayerResult

MAGIC = b"DMIX"
VERSION = 1
_CONSTANT_SENTINEL = -1


def pack_bits(values, widths) -> bytes:
    """Pack unsigned integers MSB-first at per-value widths, zero-padded to a byte."""
    acc = 0
    nbits = 0
    out = bytearray()
    for v, w in zip(values, widths):
        w = int(w)
        acc = (acc << w) | (int(v) & ((1 << w) - 1))
        nbits += w
        while nbits >= 8:
            nbits -= 8
            out.append((acc >> nbits) & 0xFF)
            acc &= (1 << nbits) - 1
    if nbits:
        out.append((acc << (8 - nbits)) & 0xFF)
    return bytes(out)


def unpack_bits(data: bytes, widths) -> np.ndarray:
    """Inverse of :func:`pack_bits` for a known width sequence."""
    total = sum(int(w) for w in widths)
    if len(data) * 8 < total:
        raise CorruptContainerError(
            f"bit stream truncated: {len(data) * 8} bits < {total} required"
        )
    acc = int.from_bytes(data, "big")
    nbits = len(data) * 8
    values = np.zeros(len(widths), dtype=np.int64)
    pos = 0
    for i, w in enumerate(widths):
        w = int(w)
        pos += w
        values[i] = (acc >> (nbits - pos)) & ((1 << w) - 1)
    return values


def _encode_grid(g: GridParams) -> bytes:
    if g.constant is not None:
        return struct.pack("<fi", np.float32(g.constant), _CONSTANT_SENTINEL)
    return struct.pack("<fi", np.float32(g.scale), int(g.zero_point))


def _decode_grid(scale: float, zero_point: int, bits: int) -> GridParams:
    if zero_point == _CONSTANT_SENTINEL:
        return GridParams(bits=bits, scale=1.0, zero_point=0, constant=float(scale))
    return GridParams(bits=bits, scale=float(scale), zero_point=int(zero_point))


@dataclass
class LayerRecord:
    """Decoded per-layer record; sufficient to rebuild the dense approximation."""

    name: str
    h_out: int
    h_in: int
    r: int
    sigma: np.ndarray
    scheme: np.ndarray
    class_bits: tuple[int, ...]
    v_grids: dict[int, GridParams]  # active row index -> grid
    v_codes: dict[int, np.ndarray]  # active row index -> h_in codes
    u_grids: list[list[GridParams]]  # [u row][class index]
    u_codes: np.ndarray  # (h_out, n_active) codes, active columns ascending
    payload_bits: int

    @property
    def active_rows(self) -> np.ndarray:
        return np.flatnonzero(self.scheme > 0)

    def expected_payload_bits(self) -> int:
        return int((self.h_in + self.h_out) * np.sum(self.scheme[self.scheme > 0]))

    def metadata_bits(self) -> int:
        """Bits spent on everything except code payload and row padding."""
        n_active = int(np.sum(self.scheme > 0))
        n_classes = len(self.class_bits)
        header = 2 + len(self.name.encode()) + 12 + 1 + n_classes + 8
        body = 8 * self.r + self.r + 8 * n_active + 8 * self.h_out * n_classes + 4
        return 8 * (header + body)

    def padding_bits(self) -> int:
        active_bits = self.scheme[self.scheme > 0].astype(int)
        v_pad = int(sum(-(self.h_in * b) % 8 for b in active_bits))
        row_bits = int(np.sum(active_bits))
        u_pad = self.h_out * (-row_bits % 8)
        return v_pad + u_pad

    def dequantize_v(self) -> np.ndarray:
        v = np.zeros((self.r, self.h_in))
        for i in self.active_rows:
            v[i] = self.v_grids[int(i)].dequantize(self.v_codes[int(i)])
        return v

    def dequantize_u(self) -> np.ndarray:
        u = np.zeros((self.h_out, self.r))
        active = self.active_rows
        for k, b in enumerate(self.class_bits):
            pos = np.flatnonzero(self.scheme[active] == b)
            cols = active[pos]
            for j in range(self.h_out):
                u[j, cols] = self.u_grids[j][k].dequantize(self.u_codes[j, pos])
        return u

    def reconstruct(self) -> np.ndarray:
        return (self.dequantize_u() * self.sigma) @ self.dequantize_v()


class CompressedDelta:
    """An ordered collection of layer records, as read from or written to disk."""

    def __init__(self, records: list[LayerRecord]):
        self.records = records
        self.by_name = {rec.name: rec for rec in records}

    @property
    def layer_names(self) -> list[str]:
        return [rec.name for rec in self.records]

    def __getitem__(self, name: str) -> LayerRecord:
        try:
            return self.by_name[name]
        except KeyError:
            raise UnknownLayerError(f"layer {name!r} not in container") from None

    def reconstruct(self, name: str) -> np.ndarray:
        return self[name].reconstruct()


def record_from_result(res: LayerResult) -> LayerRecord:
    """Snapshot a pipeline result with grid parameters narrowed to 32-bit."""
    h_out, r = res.u_quant.dequantized.shape
    h_in = res.v_quant.dequantized.shape[1]
    scheme = res.scheme.assignment.astype(np.int64)
    active = np.flatnonzero(scheme > 0)
    class_bits = tuple(sorted(set(int(b) for b in scheme[active])))

    def narrow(g: GridParams) -> GridParams:
        if g.constant is not None:
            return GridParams(bits=g.bits, scale=1.0, zero_point=0,
                              constant=float(np.float32(g.constant)))
        return GridParams(bits=g.bits, scale=float(np.float32(g.scale)),
                          zero_point=g.zero_point)

    v_grids = {int(i): narrow(res.v_quant.row_grids[int(i)]) for i in active}
    v_codes = {int(i): res.v_quant.codes[int(i)].copy() for i in active}

    cls_of = {b: k for k, b in enumerate(res.u_quant.class_bits or ())}
    u_grids = [
        [narrow(res.u_quant.class_grids[j][cls_of[b]]) for b in class_bits]
        for j in range(h_out)
    ]
    u_codes = res.u_quant.codes[:, active].copy()

    return LayerRecord(
        name=res.name,
        h_out=h_out,
        h_in=h_in,
        r=r,
        sigma=res.sigma.copy(),
        scheme=scheme,
        class_bits=class_bits,
        v_grids=v_grids,
        v_codes=v_codes,
        u_grids=u_grids,
        u_codes=u_codes,
        payload_bits=res.payload_bits,
    )


def _encode_record(rec: LayerRecord) -> bytes:
    buf = io.BytesIO()
    name = rec.name.encode()
    buf.write(struct.pack("<H", len(name)))
    buf.write(name)
    buf.write(struct.pack("<III", rec.h_out, rec.h_in, rec.r))
    buf.write(struct.pack("<B", len(rec.class_bits)))
    buf.write(bytes(rec.class_bits))
    buf.write(struct.pack("<Q", rec.payload_bits))
    buf.write(np.asarray(rec.sigma, dtype="<f8").tobytes())
    buf.write(rec.scheme.astype(np.uint8).tobytes())
    active = rec.active_rows
    for i in active:
        buf.write(_encode_grid(rec.v_grids[int(i)]))
    for i in active:
        b = int(rec.scheme[i])
        buf.write(pack_bits(rec.v_codes[int(i)], [b] * rec.h_in))
    for j in range(rec.h_out):
        for g in rec.u_grids[j]:
            buf.write(_encode_grid(g))
    col_widths = [int(rec.scheme[i]) for i in active]
    for j in range(rec.h_out):
        buf.write(pack_bits(rec.u_codes[j], col_widths))
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptContainerError(
                f"container truncated at byte {self.pos} (need {n} more)"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _decode_record(body: bytes) -> LayerRecord:
    if len(body) < 4:
        raise CorruptContainerError("record too short for checksum")
    payload, crc_stored = body[:-4], struct.unpack("<I", body[-4:])[0]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise CorruptContainerError("record checksum mismatch (payload tampered?)")
    rd = _Reader(payload)
    (name_len,) = rd.unpack("<H")
    name = rd.take(name_len).decode()
    h_out, h_in, r = rd.unpack("<III")
    (n_classes,) = rd.unpack("<B")
    class_bits = tuple(rd.take(n_classes))
    (payload_bits,) = rd.unpack("<Q")
    sigma = np.frombuffer(rd.take(8 * r), dtype="<f8").copy()
    scheme = np.frombuffer(rd.take(r), dtype=np.uint8).astype(np.int64)
    active = np.flatnonzero(scheme > 0)
    v_grids = {}
    for i in active:
        scale, zp = rd.unpack("<fi")
        v_grids[int(i)] = _decode_grid(scale, zp, int(scheme[i]))
    v_codes = {}
    for i in active:
        b = int(scheme[i])
        raw = rd.take((h_in * b + 7) // 8)
        v_codes[int(i)] = unpack_bits(raw, [b] * h_in)
    u_grids = []
    for _ in range(h_out):
        per_class = []
        for b in class_bits:
            scale, zp = rd.unpack("<fi")
            per_class.append(_decode_grid(scale, zp, int(b)))
        u_grids.append(per_class)
    col_widths = [int(scheme[i]) for i in active]
    row_bits = sum(col_widths)
    u_codes = np.zeros((h_out, len(active)), dtype=np.int64)
    for j in range(h_out):
        raw = rd.take((row_bits + 7) // 8)
        u_codes[j] = unpack_bits(raw, col_widths)
    if rd.pos != len(payload):
        raise CorruptContainerError(f"{len(payload) - rd.pos} unread bytes in record")
    rec = LayerRecord(
        name=name,
        h_out=h_out,
        h_in=h_in,
        r=r,
        sigma=sigma,
        scheme=scheme,
        class_bits=class_bits,
        v_grids=v_grids,
        v_codes=v_codes,
        u_grids=u_grids,
        u_codes=u_codes,
        payload_bits=payload_bits,
    )
    if rec.expected_payload_bits() != payload_bits:
        raise CorruptContainerError(
            f"declared payload {payload_bits} bits != recomputed "
            f"{rec.expected_payload_bits()} bits"
        )
    return rec


def pack(results) -> bytes:
    """Serialize results or decoded records (one or a list) into container bytes."""
    if isinstance(results, (LayerResult, LayerRecord)):
        results = [results]
    records = [
        res if isinstance(res, LayerRecord) else record_from_result(res)
        for res in results
    ]
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(records)))
    for rec in records:
        body = _encode_record(rec)
        buf.write(struct.pack("<I", len(body)))
        buf.write(body)
    return buf.getvalue()


def unpack(data: bytes) -> CompressedDelta:
    rd = _Reader(data)
    if rd.take(4) != MAGIC:
        raise CorruptContainerError("bad magic (not a DMIX container)")
    version, count = rd.unpack("<HI")
    if version != VERSION:
        raise CorruptContainerError(f"unsupported container version {version}")
    records = []
    for _ in range(count):
        (rec_len,) = rd.unpack("<I")
        records.append(_decode_record(rd.take(rec_len)))
    if rd.pos != len(data):
        raise CorruptContainerError(f"{len(data) - rd.pos} trailing bytes in container")
    return CompressedDelta(records)


def write_container(path, results) -> None:
    with open(path, "wb") as fh:
        fh.write(pack(results))


def read_container(path) -> CompressedDelta:
    with open(path, "rb") as fh:
        return unpack(fh.read())


def reconstruct(container: CompressedDelta, name: str) -> np.ndarray:
    """Densify one layer: ``u_hat @ diag(sigma) @ v_hat`` from stored codes."""
    return container.reconstruct(name)
