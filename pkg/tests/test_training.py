import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmfusion.datasets import PreparedDataset
from mmfusion.errors import ConfigError, DataError, DivergenceError
from mmfusion.model import ClassifierModel
from mmfusion.tensor import Tape, Tensor, backward
from mmfusion.text_encoder import TextEncoderConfig
from mmfusion.training import (Adam, OptimizerSpec, SplitSpec, adam_step,
                               clip_gradients, evaluate_split, group_of,
                               largest_remainder, stratified_split, train)

# class sizes from the captioned-disaster corpus used as a sizing fixture
CLASS_SIZES = [800, 650, 450, 400, 600, 500, 300, 400, 937]


class TestLargestRemainder:
    def test_even_ten(self):
        assert largest_remainder(10, [0.7, 0.1, 0.2]) == [7, 1, 2]

    def test_remainders_favor_largest(self):
        # 937: quotas 655.9 / 93.7 / 187.4 -> leftovers go to the two
        # largest fractional parts
        assert largest_remainder(937, [0.7, 0.1, 0.2]) == [656, 94, 187]

    def test_ties_break_toward_lower_index(self):
        assert largest_remainder(1, [0.5, 0.5]) == [1, 0]

    def test_zero_total(self):
        assert largest_remainder(0, [0.7, 0.1, 0.2]) == [0, 0, 0]

    def test_rejects_bad_weights(self):
        with pytest.raises(ConfigError):
            largest_remainder(5, [])
        with pytest.raises(ConfigError):
            largest_remainder(5, [0.5, -0.1])
        with pytest.raises(ConfigError):
            largest_remainder(5, [0.0, 0.0])
        with pytest.raises(ConfigError):
            largest_remainder(-1, [1.0])

    @given(st.integers(0, 10_000),
           st.lists(st.floats(0.0, 10.0), min_size=1, max_size=6))
    @settings(max_examples=100)
    def test_sums_and_stays_within_one_of_quota(self, total, weights):
        if sum(weights) <= 0:
            weights = weights + [1.0]
        counts = largest_remainder(total, weights)
        assert sum(counts) == total
        denom = sum(weights)
        for c, w in zip(counts, weights):
            assert abs(c - total * w / denom) < 1.0 + 1e-9


class TestSplitSpec:
    def test_defaults(self):
        spec = SplitSpec()
        assert spec.fractions == (0.70, 0.10, 0.20)
        assert spec.stratified

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            SplitSpec(train_fraction=0.8, val_fraction=0.1, test_fraction=0.2)

    def test_fractions_must_be_non_negative(self):
        with pytest.raises(ConfigError):
            SplitSpec(train_fraction=1.1, val_fraction=0.1, test_fraction=-0.2)


class TestStratifiedSplit:
    def _labels(self):
        return np.repeat(np.arange(len(CLASS_SIZES)), CLASS_SIZES)

    def test_corpus_sizes(self):
        split = stratified_split(self._labels(), SplitSpec(seed=0))
        assert split.sizes() == (3526, 504, 1007)

    def test_corpus_per_class_counts(self):
        labels = self._labels()
        split = stratified_split(labels, SplitSpec(seed=0))
        train_counts = np.bincount(labels[split.train], minlength=9)
        val_counts = np.bincount(labels[split.val], minlength=9)
        test_counts = np.bincount(labels[split.test], minlength=9)
        assert train_counts.tolist() == [560, 455, 315, 280, 420, 350, 210, 280, 656]
        assert val_counts.tolist() == [80, 65, 45, 40, 60, 50, 30, 40, 94]
        assert test_counts.tolist() == [160, 130, 90, 80, 120, 100, 60, 80, 187]

    def test_disjoint_and_exhaustive(self):
        labels = self._labels()
        split = stratified_split(labels, SplitSpec(seed=3))
        merged = np.concatenate([split.train, split.val, split.test])
        assert len(merged) == len(labels)
        assert len(np.unique(merged)) == len(labels)

    def test_ten_samples_single_class(self):
        split = stratified_split(np.zeros(10, dtype=np.int64), SplitSpec(seed=1))
        assert split.sizes() == (7, 1, 2)

    def test_small_class_rejected(self):
        labels = np.array([0, 0, 0, 1, 1])
        with pytest.raises(DataError, match="class 1"):
            stratified_split(labels, SplitSpec())

    def test_empty_labels_rejected(self):
        with pytest.raises(DataError):
            stratified_split(np.array([]), SplitSpec())

    def test_seed_changes_membership_not_counts(self):
        labels = self._labels()
        a = stratified_split(labels, SplitSpec(seed=0))
        b = stratified_split(labels, SplitSpec(seed=1))
        assert a.sizes() == b.sizes()
        assert not np.array_equal(a.train, b.train)

    def test_deterministic(self):
        labels = self._labels()
        a = stratified_split(labels, SplitSpec(seed=4))
        b = stratified_split(labels, SplitSpec(seed=4))
        assert np.array_equal(a.train, b.train)
        assert np.array_equal(a.val, b.val)
        assert np.array_equal(a.test, b.test)

    def test_unstratified_sizes(self):
        split = stratified_split(self._labels(),
                                 SplitSpec(stratified=False, seed=0))
        assert split.sizes() == (3526, 504, 1007)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_per_class_within_one_of_quota(self, seed):
        rng = np.random.default_rng(seed)
        sizes = rng.integers(3, 40, size=4)
        labels = np.repeat(np.arange(4), sizes)
        split = stratified_split(labels, SplitSpec(seed=seed))
        for part, frac in ((split.train, 0.7), (split.val, 0.1), (split.test, 0.2)):
            counts = np.bincount(labels[part], minlength=4)
            for c, n in zip(counts, sizes):
                assert abs(c - n * frac) < 1.0 + 1e-9


class TestOptimizerSpec:
    def test_defaults(self):
        spec = OptimizerSpec()
        assert spec.lr_encoder == 1e-5
        assert spec.lr_fusion == 3e-5
        assert (spec.beta1, spec.beta2) == (0.9, 0.999)
        assert spec.epsilon == 1e-8
        assert spec.batch_size == 32
        assert spec.patience == 5
        assert spec.clip_norm == 5.0

    def test_validation(self):
        with pytest.raises(ConfigError):
            OptimizerSpec(lr_encoder=0.0)
        with pytest.raises(ConfigError):
            OptimizerSpec(lr_fusion=-1e-5)
        with pytest.raises(ConfigError):
            OptimizerSpec(patience=0)
        with pytest.raises(ConfigError):
            OptimizerSpec(batch_size=0)
        with pytest.raises(ConfigError):
            OptimizerSpec(beta1=1.0)
        with pytest.raises(ConfigError):
            OptimizerSpec(algorithm="sgd")


class TestAdam:
    def test_hand_computed_first_step(self):
        w = np.zeros(1, dtype=np.float64)
        g = np.ones(1, dtype=np.float64)
        m = np.zeros(1, dtype=np.float64)
        v = np.zeros(1, dtype=np.float64)
        w2, m2, v2 = adam_step(w, g, m, v, t=1, lr=1e-3)
        # bias correction makes the first step exactly lr / (1 + eps)
        assert abs(w2[0] - (-1e-3 / (1.0 + 1e-8))) < 1e-18
        assert m2[0] == pytest.approx(0.1)
        assert v2[0] == pytest.approx(0.001)

    def test_step_count_starts_at_one(self):
        z = np.zeros(1)
        with pytest.raises(ConfigError):
            adam_step(z, z, z, z, t=0, lr=1e-3)

    def test_zero_gradient_leaves_parameter_unchanged(self):
        p = Tensor(np.array([1.5, -2.0], dtype=np.float32), requires_grad=True)
        p.grad = np.zeros(2, dtype=np.float32)
        opt = Adam({"fusion.w": p}, OptimizerSpec())
        opt.step()
        assert np.array_equal(p.data, np.array([1.5, -2.0], dtype=np.float32))

    def test_missing_gradient_treated_as_zero(self):
        p = Tensor(np.array([3.0], dtype=np.float32), requires_grad=True)
        p.grad = None
        opt = Adam({"text.w": p}, OptimizerSpec())
        opt.step()
        assert p.data[0] == 3.0

    def test_group_assignment(self):
        assert group_of("fusion.out.w") == "fusion"
        assert group_of("text.embed.table") == "encoder"
        assert group_of("vision.stem.conv") == "encoder"

    def test_group_rates_applied(self):
        enc = Tensor(np.zeros(1, dtype=np.float64), requires_grad=True)
        head = Tensor(np.zeros(1, dtype=np.float64), requires_grad=True)
        enc.grad = np.ones(1)
        head.grad = np.ones(1)
        spec = OptimizerSpec(lr_encoder=1e-5, lr_fusion=3e-5)
        opt = Adam({"vision.w": enc, "fusion.w": head}, spec)
        opt.step()
        assert head.data[0] == pytest.approx(3.0 * enc.data[0], rel=1e-9)


class TestClipping:
    def test_large_gradient_scaled_to_max_norm(self):
        p = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
        p.grad = np.array([3.0, 4.0, 0.0], dtype=np.float32)
        norm = clip_gradients({"w": p}, 2.5)
        assert norm == pytest.approx(5.0)
        assert np.linalg.norm(p.grad) == pytest.approx(2.5, rel=1e-6)

    def test_small_gradient_untouched(self):
        p = Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
        g = np.array([0.3, 0.4], dtype=np.float32)
        p.grad = g.copy()
        norm = clip_gradients({"w": p}, 5.0)
        assert norm == pytest.approx(0.5)
        assert np.array_equal(p.grad, g)

    def test_norm_spans_parameters(self):
        a = Tensor(np.zeros(1), requires_grad=True)
        b = Tensor(np.zeros(1), requires_grad=True)
        a.grad = np.array([3.0])
        b.grad = np.array([4.0])
        assert clip_gradients({"a": a, "b": b}, 100.0) == pytest.approx(5.0)


TOY_CFG = TextEncoderConfig(vocab_size=8, d_model=8, n_heads=2, n_layers=1,
                            d_ff=16, max_len=4, dropout_rate=0.0)


def toy_text_data(n=50, flip=False, seed=0):
    """Linearly separable two-class captions: disjoint token pools."""
    rng = np.random.default_rng(seed)
    labels = np.array([i % 2 for i in range(n)], dtype=np.int64)
    ids = np.zeros((n, 4), dtype=np.int64)
    for i, c in enumerate(labels):
        pool = (4, 5) if c == 0 else (6, 7)
        ids[i] = rng.choice(pool, size=4)
    mask = np.ones((n, 4), dtype=np.int64)
    return PreparedDataset(labels=(1 - labels if flip else labels),
                           sample_ids=np.arange(n, dtype=np.int64),
                           token_ids=ids, token_mask=mask)


def toy_model(seed=1):
    return ClassifierModel.build("text", text_config=TOY_CFG, hidden=(8,),
                                 head_dropout=0.0, n_classes=2, seed=seed)


class TestTrainLoop:
    def test_separable_data_reaches_full_accuracy(self):
        data = toy_text_data()
        model = toy_model()
        spec = OptimizerSpec(lr_encoder=1e-2, lr_fusion=1e-2, batch_size=10,
                             max_epochs=50, patience=50)
        result = train(model, data, data, spec, seed=3)
        _, acc = evaluate_split(model, data)
        assert acc == 1.0
        assert len(result.history) <= 50

    def test_loss_strictly_decreases_first_five_steps(self):
        model = toy_model()
        params = model.parameters()
        opt = Adam(params, OptimizerSpec(lr_encoder=1e-3, lr_fusion=1e-3))
        batch = toy_text_data().batch(np.arange(20))
        losses = []
        for step in range(5):
            opt.zero_grad()
            with Tape() as tape:
                loss = model.forward_loss(batch, training=True, step=step)
            backward(loss, tape)
            clip_gradients(params, 5.0)
            opt.step()
            losses.append(loss.item())
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_patience_one_stops_after_two_epochs(self):
        # validation labels are flipped, so fitting the training set makes
        # validation loss strictly worse every epoch
        model = toy_model()
        spec = OptimizerSpec(lr_encoder=1e-2, lr_fusion=1e-2, batch_size=10,
                             max_epochs=20, patience=1)
        result = train(model, toy_text_data(), toy_text_data(flip=True),
                       spec, seed=3)
        assert len(result.history) == 2
        assert result.stopped_early
        assert result.best_epoch == 0

    def test_best_checkpoint_restored_not_final(self):
        model = toy_model()
        spec = OptimizerSpec(lr_encoder=1e-2, lr_fusion=1e-2, batch_size=10,
                             max_epochs=20, patience=1)
        val = toy_text_data(flip=True)
        result = train(model, toy_text_data(), val, spec, seed=3)
        assert result.history[-1].val_loss > result.history[0].val_loss
        # restored model reproduces the recorded best validation loss
        loss, acc = evaluate_split(model, val)
        assert loss == result.best_val_loss
        assert acc == result.best_val_accuracy

    def test_epoch_cap_without_early_stop(self):
        model = toy_model()
        spec = OptimizerSpec(lr_encoder=1e-4, lr_fusion=1e-4, batch_size=25,
                             max_epochs=3, patience=10)
        result = train(model, toy_text_data(), toy_text_data(), spec, seed=0)
        assert len(result.history) == 3
        assert not result.stopped_early
        assert result.steps == 6

    def test_bit_identical_reruns(self):
        data = toy_text_data()
        spec = OptimizerSpec(lr_encoder=1e-3, lr_fusion=1e-3, batch_size=10,
                             max_epochs=3, patience=10)
        runs = []
        for _ in range(2):
            model = toy_model(seed=2)
            result = train(model, data, data, spec, seed=5)
            runs.append((result.history_csv(), model.snapshot()))
        assert runs[0][0] == runs[1][0]
        for name in runs[0][1]:
            assert np.array_equal(runs[0][1][name], runs[1][1][name])

    def test_history_rows_and_csv_shape(self):
        model = toy_model()
        spec = OptimizerSpec(lr_encoder=1e-3, lr_fusion=1e-3, batch_size=25,
                             max_epochs=2, patience=10)
        result = train(model, toy_text_data(), toy_text_data(), spec, seed=0)
        csv = result.history_csv()
        lines = csv.strip().split("\n")
        assert lines[0] == "epoch,train_loss,val_loss,val_accuracy"
        assert len(lines) == 3
        assert lines[1].startswith("0,")
        for row in result.history:
            assert math.isfinite(row.train_loss)
            assert 0.0 <= row.val_accuracy <= 1.0

    def test_divergence_names_the_step(self):
        model = toy_model()
        first = next(iter(model.parameters().values()))
        first.data[...] = np.nan
        spec = OptimizerSpec(lr_encoder=1e-3, lr_fusion=1e-3, batch_size=10,
                             max_epochs=2, patience=10)
        with pytest.raises(DivergenceError, match="step 0"):
            train(model, toy_text_data(), toy_text_data(), spec, seed=0)

    def test_empty_split_rejected(self):
        empty = PreparedDataset(labels=np.array([], dtype=np.int64),
                                sample_ids=np.array([], dtype=np.int64))
        with pytest.raises(DataError):
            train(toy_model(), empty, empty, OptimizerSpec())
