import numpy as np
import pytest
from sklearn.base import clone

from deltamix import DeltaCompressor, ShapeError, synth_activations, synth_delta, unpack


@pytest.fixture
def fitted():
    delta = synth_delta(16, 16, decay=0.85, seed=0)
    x = synth_activations(16, 64, seed=1)
    return DeltaCompressor(alpha=1 / 8, bits=(0, 2, 4, 8), f_max=3).fit(delta, x), delta, x


class TestEstimatorContract:
    def test_get_set_params_roundtrip(self):
        est = DeltaCompressor(alpha=1 / 32, f_max=2)
        params = est.get_params()
        assert params["alpha"] == 1 / 32
        est.set_params(f_max=5)
        assert est.get_params()["f_max"] == 5

    def test_clone_preserves_params(self):
        est = DeltaCompressor(alpha=1 / 8, bits=(0, 4), seed=3)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()
        assert not hasattr(cloned, "result_")

    def test_constructor_does_no_work(self):
        est = DeltaCompressor(bits=(1, 7))  # invalid, but only fit validates
        with pytest.raises(Exception):
            est.fit(np.eye(4))


class TestFit:
    def test_fitted_attributes(self, fitted):
        est, delta, _ = fitted
        assert est.scheme_.shape == (16,)
        assert set(est.active_bits_) <= {0, 2, 4, 8}
        assert est.payload_bits_ <= est.budget_bits_
        assert est.error_ >= 0
        assert est.n_features_in_ == 16

    def test_default_synthetic_calibration(self):
        delta = synth_delta(8, 8, decay=0.8, seed=2)
        a = DeltaCompressor(alpha=1 / 8, bits=(0, 4), f_max=2, seed=9).fit(delta)
        b = DeltaCompressor(alpha=1 / 8, bits=(0, 4), f_max=2, seed=9).fit(delta)
        assert np.array_equal(a.reconstruct(), b.reconstruct())

    def test_reconstruct_and_transform(self, fitted):
        est, delta, x = fitted
        approx = est.reconstruct()
        assert approx.shape == delta.shape
        y = est.transform(x)
        assert np.allclose(y, approx @ x)

    def test_transform_shape_check(self, fitted):
        est, _, _ = fitted
        with pytest.raises(ShapeError):
            est.transform(np.zeros((7, 3)))

    def test_unfitted_raises(self):
        with pytest.raises(ShapeError, match="not fitted"):
            DeltaCompressor().transform(np.zeros((4, 2)))

    def test_container_export(self, fitted, tmp_path):
        est, _, _ = fitted
        c = unpack(est.to_bytes())
        assert c.layer_names == ["delta"]
        assert np.allclose(c.reconstruct("delta"), est.reconstruct(), atol=1e-6)
        est.save(tmp_path / "one.dmix")
        assert (tmp_path / "one.dmix").read_bytes() == est.to_bytes()
