import numpy as np
import pytest

from mmfusion import tensor as T
from mmfusion.errors import ConfigError, DataError
from mmfusion.gradcheck import gradcheck
from mmfusion.tensor import Tensor
from mmfusion.vision_encoder import (
    VisionEncoderConfig,
    VisionEncoderState,
    encode_batch,
    encode_image,
)

TINY = VisionEncoderConfig(widths=(2, 4), resolution=8)


def test_config_validation():
    with pytest.raises(ConfigError):
        VisionEncoderConfig(widths=())
    with pytest.raises(ConfigError):
        VisionEncoderConfig(widths=(16, 8), resolution=32)
    with pytest.raises(ConfigError):
        VisionEncoderConfig(widths=(4, 8), resolution=10)
    with pytest.raises(ConfigError):
        VisionEncoderConfig(widths=(4, 8), resolution=8, blocks_per_stage=0)


def test_output_dim_is_last_width():
    for widths, res in [((2, 4), 8), ((3, 3, 6), 16), ((5,), 4)]:
        cfg = VisionEncoderConfig(widths=widths, resolution=res)
        state = VisionEncoderState.build(cfg, seed=0)
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3, res, res)).astype(np.float32))
        out = encode_batch(x, state)
        assert out.shape == (2, widths[-1])
        assert cfg.d_visual == widths[-1]


def test_deterministic():
    state = VisionEncoderState.build(TINY, seed=1)
    x = Tensor(np.random.default_rng(1).standard_normal((1, 3, 8, 8)).astype(np.float32))
    a = encode_batch(x, state).data
    b = encode_batch(x, state).data
    np.testing.assert_array_equal(a, b)


def test_build_reproducible():
    s1 = VisionEncoderState.build(TINY, seed=5)
    s2 = VisionEncoderState.build(TINY, seed=5)
    for name in s1.params:
        np.testing.assert_array_equal(s1.params[name].data, s2.params[name].data)


def test_single_image_matches_batch_row():
    state = VisionEncoderState.build(TINY, seed=2)
    rng = np.random.default_rng(3)
    imgs = rng.standard_normal((4, 3, 8, 8)).astype(np.float32)
    batch = encode_batch(Tensor(imgs), state).data
    for i in range(4):
        single = encode_image(imgs[i], state).data
        np.testing.assert_allclose(single, batch[i], atol=1e-6)


def test_wrong_resolution_rejected():
    state = VisionEncoderState.build(TINY, seed=0)
    with pytest.raises(DataError):
        encode_batch(Tensor(np.zeros((1, 3, 16, 16), dtype=np.float32)), state)
    with pytest.raises(DataError):
        encode_batch(Tensor(np.zeros((1, 1, 8, 8), dtype=np.float32)), state)


def test_finite_under_intensity_scaling():
    state = VisionEncoderState.build(TINY, seed=4)
    base = np.random.default_rng(5).standard_normal((1, 3, 8, 8)).astype(np.float32)
    for s in (0.1, 1.0, 10.0, -10.0):
        out = encode_batch(Tensor(base * s), state).data
        assert np.isfinite(out).all()


def test_all_zero_image_finite_and_reproducible():
    state = VisionEncoderState.build(TINY, seed=6)
    x = Tensor(np.zeros((1, 3, 8, 8), dtype=np.float32))
    a = encode_batch(x, state).data
    b = encode_batch(x, state).data
    assert np.isfinite(a).all()
    np.testing.assert_array_equal(a, b)


def test_encoder_gradcheck_tiny():
    state = VisionEncoderState.build(TINY, seed=7)
    names = list(state.params)
    rng = np.random.default_rng(8)
    img = rng.standard_normal((1, 3, 8, 8)) * 0.5
    readout = rng.standard_normal((1, 4))

    def f(xs):
        st = VisionEncoderState(TINY, dict(zip(names, xs[:-1])))
        feats = encode_batch(xs[-1], st)
        return T.tsum(T.mul(feats, Tensor(readout, dtype=np.float64)))

    arrays = [state.params[n].data.astype(np.float64) for n in names] + [img]
    result = gradcheck(f, arrays, name="vision_encoder", step=1e-5, threshold=1e-4)
    assert result.passed, str(result)
