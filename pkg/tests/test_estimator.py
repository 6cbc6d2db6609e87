import numpy as np
import pytest
from sklearn.base import clone

from hygroflow.errors import InvalidParameterError
from hygroflow.estimator import HuberTVFlow
from hygroflow.synth import AnalyticFlow, endpoint_error, render_pair, wood_texture


@pytest.fixture(scope="module")
def fitted():
    tex = wood_texture(64, 64, 17)
    pair = render_pair(tex, AnalyticFlow.translation(0.5, 0.0))
    mask = np.zeros((64, 64), bool)
    mask[8:-8, 8:-8] = True
    est = HuberTVFlow(warps=4, pd_iters=40)
    est.fit((pair.i1, pair.i2), mask=mask)
    return est, pair, mask


class TestSklearnProtocol:
    def test_get_set_params_round_trip(self):
        est = HuberTVFlow()
        params = est.get_params()
        assert params["data_weight"] == 10.0
        assert params["illum_scale"] == 0.04
        est.set_params(data_weight=5.0, warps=3)
        assert est.get_params()["data_weight"] == 5.0
        assert est.get_params()["warps"] == 3

    def test_clone_keeps_params_drops_state(self, fitted):
        est, _, _ = fitted
        dup = clone(est)
        assert dup.get_params() == est.get_params()
        assert not hasattr(dup, "flow_")

    def test_repr_shows_nondefault_params(self):
        text = repr(HuberTVFlow(data_weight=3.0))
        assert "HuberTVFlow" in text and "data_weight=3.0" in text


class TestFit:
    def test_fit_estimates_shift(self, fitted):
        est, pair, mask = fitted
        assert est.flow_.vx[mask].mean() == pytest.approx(0.5, abs=0.1)
        mean_epe, _ = endpoint_error(est.flow_, pair.true_flow, mask)
        assert mean_epe < 0.15
        assert np.isfinite(est.energy_)

    def test_fit_accepts_stacked_array(self):
        tex = wood_texture(32, 32, 18)
        pair = render_pair(tex, AnalyticFlow.translation(0.2, 0.0))
        est = HuberTVFlow(warps=2, pd_iters=20, levels=1)
        est.fit(np.stack([pair.i1, pair.i2]))
        assert est.flow_.shape == (32, 32)

    def test_bad_input_shape_rejected(self):
        with pytest.raises(InvalidParameterError):
            HuberTVFlow().fit(np.zeros((3, 8, 8)))

    def test_transform_registers_second_image(self, fitted):
        est, pair, mask = fitted
        warped = est.transform(pair.i2)
        before = np.abs(pair.i2 - pair.i1)[mask].mean()
        after = np.abs(warped - pair.i1)[mask].mean()
        assert after < before

    def test_transform_before_fit_rejected(self):
        with pytest.raises(InvalidParameterError):
            HuberTVFlow().transform(np.zeros((8, 8)))

    def test_fit_transform_returns_warped(self):
        tex = wood_texture(32, 32, 19)
        pair = render_pair(tex, AnalyticFlow.translation(0.3, 0.0))
        est = HuberTVFlow(warps=2, pd_iters=20, levels=1)
        out = est.fit_transform((pair.i1, pair.i2))
        assert out.shape == (32, 32)
        assert np.array_equal(out, est.result_.warped)

    def test_strain_accessor(self, fitted):
        est, _, _ = fitted
        fields = est.strain()
        assert fields.eps11.shape == est.flow_.shape
