import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltamix import (
    CompressionConfig,
    CorruptContainerError,
    LayerJob,
    UnknownLayerError,
    compress_layer,
    pack,
    synth_activations,
    synth_delta,
    unpack,
)
from deltamix.container import pack_bits, record_from_result, unpack_bits


def compressed(seed=0, dim=16, alpha=1 / 16, name="layer"):
    delta = synth_delta(dim, dim, decay=0.85, seed=seed)
    x = synth_activations(dim, 4 * dim, seed=seed + 1)
    cfg = CompressionConfig(candidates=(0, 2, 3, 4, 8), alpha=alpha, f_max=3, seed=seed)
    return compress_layer(LayerJob(name, delta, cfg, activations=x))


class TestBitPacking:
    @settings(max_examples=60, deadline=None)
    @given(
        data=st.lists(
            st.tuples(st.integers(1, 16), st.integers(0, 2**16 - 1)),
            min_size=0,
            max_size=64,
        )
    )
    def test_roundtrip(self, data):
        widths = [w for w, _ in data]
        values = [v & ((1 << w) - 1) for w, v in data]
        packed = pack_bits(values, widths)
        assert len(packed) == (sum(widths) + 7) // 8
        out = unpack_bits(packed, widths)
        assert np.array_equal(out, values)

    @settings(max_examples=40, deadline=None)
    @given(
        widths=st.lists(st.integers(1, 12), min_size=1, max_size=40),
        seed=st.integers(0, 2**31),
    )
    def test_position_exact_against_naive_reader(self, widths, seed):
        rng = np.random.default_rng(seed)
        values = [int(rng.integers(0, 1 << w)) for w in widths]
        packed = pack_bits(values, widths)

        def bit_at(k):  # independent per-bit reader
            return (packed[k // 8] >> (7 - k % 8)) & 1

        pos = 0
        for v, w in zip(values, widths):
            got = 0
            for _ in range(w):
                got = (got << 1) | bit_at(pos)
                pos += 1
            assert got == v
        # padding bits are zero
        for k in range(pos, len(packed) * 8):
            assert bit_at(k) == 0

    def test_truncated_stream_rejected(self):
        packed = pack_bits([3, 1], [2, 2])
        with pytest.raises(CorruptContainerError):
            unpack_bits(packed[:0], [2, 2])


class TestContainerRoundtrip:
    def test_pack_unpack_code_exact(self):
        res = compressed(seed=3)
        rec = unpack(pack(res))["layer"]
        assert np.array_equal(rec.scheme, res.scheme.assignment)
        assert np.array_equal(rec.sigma, res.sigma)
        active = np.flatnonzero(res.scheme.assignment > 0)
        for i in active:
            assert np.array_equal(rec.v_codes[int(i)], res.v_quant.codes[int(i)])
        assert np.array_equal(rec.u_codes, res.u_quant.codes[:, active])

    def test_reconstruction_close_to_memory(self):
        res = compressed(seed=4)
        rec = unpack(pack(res))["layer"]
        mem = res.reconstruct()
        disk = rec.reconstruct()
        denom = max(np.linalg.norm(mem), 1e-30)
        assert np.linalg.norm(mem - disk) / denom <= 1e-6

    def test_pack_unpack_pack_byte_identical(self):
        res = compressed(seed=5)
        raw = pack(res)
        assert pack(unpack(raw).records) == raw

    def test_multi_layer_order_preserved(self):
        results = [compressed(seed=s, name=f"l{s}") for s in (1, 2, 3)]
        c = unpack(pack(results))
        assert c.layer_names == ["l1", "l2", "l3"]

    def test_declared_payload_matches_formula(self):
        res = compressed(seed=6)
        rec = unpack(pack(res))["layer"]
        bits = rec.scheme[rec.scheme > 0]
        assert rec.payload_bits == (rec.h_in + rec.h_out) * int(np.sum(bits))
        assert rec.payload_bits == res.payload_bits

    def test_all_dropped_layer_has_empty_payload(self, rng):
        x = rng.standard_normal((8, 16))
        cfg = CompressionConfig(candidates=(0, 2), alpha=1 / 16, f_max=2)
        res = compress_layer(LayerJob("z", np.zeros((8, 8)), cfg, activations=x))
        rec = unpack(pack(res))["z"]
        assert rec.payload_bits == 0
        assert rec.active_rows.size == 0
        assert np.array_equal(rec.reconstruct(), np.zeros((8, 8)))

    def test_compression_ratio_bound(self):
        alpha = 1 / 16
        res = compressed(seed=7, dim=64, alpha=alpha)
        rec = unpack(pack(res))["layer"]
        assert rec.payload_bits / (16 * rec.h_in * rec.h_out) <= alpha
        # 64x64 at alpha=1/16: payload fits in 512 bytes before padding.
        assert rec.payload_bits <= 4096

    def test_metadata_bits_match_hand_count(self):
        res = compressed(seed=8, dim=8, name="ab")
        rec = record_from_result(res)
        n_active = int(np.sum(rec.scheme > 0))
        n_classes = len(rec.class_bits)
        hand = 8 * (
            2 + 2          # name length + "ab"
            + 12           # h_out, h_in, r
            + 1 + n_classes
            + 8            # payload bits
            + 8 * rec.r    # sigma
            + rec.r        # scheme
            + 8 * n_active             # right-factor grids
            + 8 * rec.h_out * n_classes  # left-factor grids
            + 4            # checksum
        )
        assert rec.metadata_bits() == hand

    def test_deterministic_bytes_across_runs(self):
        a = pack(compressed(seed=9))
        b = pack(compressed(seed=9))
        assert a == b

    @pytest.mark.parametrize("shape", [(1, 1), (1, 8), (8, 1), (2, 3), (3, 2)])
    def test_degenerate_shapes_roundtrip(self, shape):
        h_out, h_in = shape
        rng = np.random.default_rng(7)
        delta = rng.standard_normal(shape)
        x = rng.standard_normal((h_in, 4 * h_in + 4))
        cfg = CompressionConfig(candidates=(0, 2, 4, 8), alpha=0.5, f_max=2, seed=0)
        res = compress_layer(LayerJob("edge", delta, cfg, activations=x))
        raw = pack(res)
        rec = unpack(raw)["edge"]
        denom = max(np.linalg.norm(res.reconstruct()), 1e-30)
        assert np.linalg.norm(res.reconstruct() - rec.reconstruct()) / denom <= 1e-6
        assert pack(rec) == raw


class TestContainerValidation:
    def test_bad_magic(self):
        with pytest.raises(CorruptContainerError, match="magic"):
            unpack(b"NOPE" + bytes(10))

    def test_truncated(self):
        raw = pack(compressed(seed=10))
        with pytest.raises(CorruptContainerError):
            unpack(raw[: len(raw) // 2])

    def test_trailing_garbage(self):
        raw = pack(compressed(seed=10))
        with pytest.raises(CorruptContainerError, match="trailing"):
            unpack(raw + b"\x00")

    def test_tampered_payload_detected(self):
        raw = bytearray(pack(compressed(seed=11)))
        raw[-10] ^= 0x40  # flip a bit inside the last record's code section
        with pytest.raises(CorruptContainerError, match="checksum"):
            unpack(bytes(raw))

    def test_unknown_layer(self):
        c = unpack(pack(compressed(seed=12)))
        with pytest.raises(UnknownLayerError):
            c.reconstruct("missing")
