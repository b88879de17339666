import math

import numpy as np
import pytest

from mmfusion import tensor as T
from mmfusion.errors import ConfigError, DataError
from mmfusion.fusion import (
    FusionConfig,
    FusionState,
    batch_cross_entropy,
    classify,
    cross_entropy,
    forward_logits,
    fuse,
)
from mmfusion.tensor import Tape, Tensor


def zero_state(cfg):
    state = FusionState.build(cfg, seed=0)
    for t in state.params.values():
        t.data[...] = 0.0
    return state


def test_fuse_paper_scale_dims():
    ft = Tensor(np.zeros(768, dtype=np.float32))
    fv = Tensor(np.zeros(2048, dtype=np.float32))
    joint = fuse(ft, fv)
    assert joint.shape == (2816,)


def test_fuse_zero_vectors():
    joint = fuse(Tensor(np.zeros(3)), Tensor(np.zeros(5)))
    np.testing.assert_array_equal(joint.data, np.zeros(8))


def test_fuse_slice_roundtrip_exact():
    rng = np.random.default_rng(0)
    ft = Tensor(rng.standard_normal(6).astype(np.float32))
    fv = Tensor(rng.standard_normal(9).astype(np.float32))
    joint = fuse(ft, fv)
    back_t = T.narrow(joint, 0, 0, 6).data
    back_v = T.narrow(joint, 0, 6, 9).data
    np.testing.assert_array_equal(back_t, ft.data)
    np.testing.assert_array_equal(back_v, fv.data)


def test_fuse_checks_config_dims():
    cfg = FusionConfig(d_text=4, d_visual=6)
    with pytest.raises(ConfigError):
        fuse(Tensor(np.zeros(5)), Tensor(np.zeros(6)), cfg)


def test_fuse_batched():
    joint = fuse(Tensor(np.zeros((2, 3))), Tensor(np.ones((2, 4))))
    assert joint.shape == (2, 7)
    np.testing.assert_array_equal(joint.data[:, 3:], 1.0)


def test_zero_weights_uniform_prediction():
    cfg = FusionConfig(d_text=4, d_visual=4, hidden=(8,), n_classes=9)
    state = zero_state(cfg)
    pred = classify(Tensor(np.random.default_rng(1).standard_normal(8).astype(np.float32)),
                    state)
    np.testing.assert_allclose(pred.probabilities.data, np.full(9, 1 / 9), atol=1e-7)
    assert pred.predicted_class == 0  # tie broken toward lowest index


def test_bias_only_softmax_closed_form():
    cfg = FusionConfig(d_text=2, d_visual=2, hidden=(), n_classes=9)
    state = zero_state(cfg)
    state.params["out.b"].data[0] = 10.0
    pred = classify(Tensor(np.ones(4, dtype=np.float32)), state)
    expect = 1.0 / (1.0 + 8.0 * math.exp(-10.0))
    assert abs(pred.probabilities.data[0] - expect) < 1e-6
    assert pred.predicted_class == 0


def test_no_hidden_is_single_affine():
    cfg = FusionConfig(d_text=2, d_visual=1, hidden=(), n_classes=3)
    state = FusionState.build(cfg, seed=2)
    assert set(state.params) == {"out.w", "out.b"}
    x = Tensor(np.array([1.0, -1.0, 2.0], dtype=np.float32))
    logits = forward_logits(T.reshape(x, (1, 3)), state).data[0]
    manual = x.data @ state.params["out.w"].data + state.params["out.b"].data
    np.testing.assert_allclose(logits, manual, atol=1e-6)


def test_probabilities_sum_to_one():
    cfg = FusionConfig(d_text=3, d_visual=3, hidden=(5,), n_classes=4)
    state = FusionState.build(cfg, seed=3)
    pred = classify(Tensor(np.random.default_rng(2).standard_normal(6).astype(np.float32)),
                    state)
    assert abs(pred.probabilities.data.sum() - 1.0) < 1e-6


def test_inference_deterministic_despite_dropout_config():
    cfg = FusionConfig(d_text=3, d_visual=3, hidden=(5,), dropout_rate=0.5)
    state = FusionState.build(cfg, seed=4)
    x = Tensor(np.random.default_rng(3).standard_normal(6).astype(np.float32))
    a = classify(x, state, training=False).probabilities.data
    b = classify(x, state, training=False).probabilities.data
    np.testing.assert_array_equal(a, b)


def test_uniform_probabilities_loss_ln9():
    cfg = FusionConfig(d_text=2, d_visual=2, hidden=(), n_classes=9)
    state = zero_state(cfg)
    pred = classify(Tensor(np.zeros(4, dtype=np.float32)), state)
    for label in (0, 5, 8):
        loss = cross_entropy(pred, label)
        assert abs(loss.item() - math.log(9.0)) < 1e-6


def test_near_certain_prediction_near_zero_loss():
    cfg = FusionConfig(d_text=1, d_visual=1, hidden=(), n_classes=3)
    state = zero_state(cfg)
    state.params["out.b"].data[:] = [50.0, 0.0, 0.0]
    pred = classify(Tensor(np.zeros(2, dtype=np.float32)), state)
    assert cross_entropy(pred, 0).item() < 1e-6
    assert cross_entropy(pred, 0).item() >= 0.0


def test_cross_entropy_label_range():
    cfg = FusionConfig(d_text=1, d_visual=1, hidden=(), n_classes=3)
    pred = classify(Tensor(np.zeros(2, dtype=np.float32)), zero_state(cfg))
    with pytest.raises(DataError):
        cross_entropy(pred, 3)
    with pytest.raises(DataError):
        cross_entropy(pred, -1)


def test_loss_gradient_is_softmax_minus_onehot():
    cfg = FusionConfig(d_text=2, d_visual=2, hidden=(), n_classes=5)
    state = FusionState.build(cfg, seed=5)
    x = Tensor(np.random.default_rng(4).standard_normal((3, 4)).astype(np.float32))
    labels = np.array([1, 4, 0])
    with Tape() as tape:
        logits = forward_logits(x, state)
        loss = batch_cross_entropy(logits, labels)
    tape.backward(loss)
    z = logits.data
    sm = np.exp(z - z.max(axis=1, keepdims=True))
    sm /= sm.sum(axis=1, keepdims=True)
    onehot = np.eye(5, dtype=np.float32)[labels]
    np.testing.assert_allclose(logits.grad, (sm - onehot) / 3, atol=1e-5)


def test_logit_shift_invariance():
    cfg = FusionConfig(d_text=2, d_visual=2, hidden=(), n_classes=4)
    state = FusionState.build(cfg, seed=6)
    x = Tensor(np.random.default_rng(5).standard_normal(4).astype(np.float32))
    pred = classify(x, state)
    shifted = Prediction_like_shift(pred, 4.0)
    np.testing.assert_allclose(pred.probabilities.data,
                               shifted.probabilities.data, atol=1e-6)
    assert pred.predicted_class == shifted.predicted_class
    a = cross_entropy(pred, 2).item()
    b = cross_entropy(shifted, 2).item()
    assert abs(a - b) < 1e-6


def Prediction_like_shift(pred, c):
    from mmfusion.fusion import Prediction
    logits = Tensor(pred.logits.data + np.float32(c))
    probs = T.softmax(logits, axis=-1)
    return Prediction(probabilities=probs,
                      predicted_class=int(np.argmax(probs.data)), logits=logits)


def test_config_validation():
    with pytest.raises(ConfigError):
        FusionConfig(d_text=0, d_visual=4)
    with pytest.raises(ConfigError):
        FusionConfig(d_text=4, d_visual=4, n_classes=1)
    with pytest.raises(ConfigError):
        FusionConfig(d_text=4, d_visual=4, dropout_rate=1.0)
