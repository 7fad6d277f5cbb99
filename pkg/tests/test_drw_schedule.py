import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from margin_forge.classifier import init_network
from margin_forge.drw_schedule import (
    EPOCH_COLUMNS,
    Sampler,
    TrainConfig,
    WeightNorm,
    class_weights,
    lr_at,
    train,
    write_epoch_log,
)
from margin_forge.errors import ConfigurationError, InvalidInputError, TrainingDivergedError
from margin_forge.imbalance_data import gaussian_mixture
from margin_forge.margin_losses import LossSpec, MarginMode, MarginParams

FULL = TrainConfig()


class TestLearningRate:
    @pytest.mark.parametrize("epoch,expected", [
        (0, 0.02), (2, 0.06), (4, 0.1), (5, 0.1), (100, 0.1), (159, 0.1),
        (160, 1e-3), (165, 1e-3), (179, 1e-3), (180, 1e-5), (185, 1e-5), (199, 1e-5),
    ])
    def test_full_schedule(self, epoch, expected):
        assert lr_at(epoch, FULL) == pytest.approx(expected, rel=1e-12)

    def test_no_warmup(self):
        cfg = TrainConfig(total_epochs=10, switch_epoch=8, warmup_epochs=0, decay_points=((8, 0.1),))
        assert lr_at(0, cfg) == 0.1 and lr_at(8, cfg) == pytest.approx(0.01)

    def test_scaled(self):
        cfg = TrainConfig.scaled(50)
        assert cfg.switch_epoch == 40
        assert cfg.decay_points == ((40, 0.01), (45, 0.01))


class TestConfigValidation:
    @pytest.mark.parametrize("kwargs", [
        dict(switch_epoch=250),
        dict(warmup_epochs=170),
        dict(decay_points=((160, 1.5),)),
        dict(decay_points=((160, 0.0),)),
        dict(batch_size=0),
        dict(cb_beta=1.0),
    ])
    def test_rejected(self, kwargs):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kwargs)


class TestClassWeights:
    def test_stage_one_uniform(self):
        np.testing.assert_array_equal(class_weights(10, FULL, [100, 10], [0, 1]), [1.0, 1.0])

    def test_raw_inverse(self):
        cfg = TrainConfig(weight_norm_mode=WeightNorm.RAW_INVERSE)
        np.testing.assert_allclose(class_weights(160, cfg, [100, 10]), [0.01, 0.1], rtol=1e-15)

    def test_batch_mean_one(self):
        w = class_weights(170, FULL, [100, 10], [0, 1])
        np.testing.assert_allclose(w, [0.18181818181818182, 1.8181818181818183], rtol=1e-14)

    def test_cb_effective(self):
        cfg = TrainConfig(weight_norm_mode="cb_effective", cb_beta=0.9)
        w = class_weights(160, cfg, [1, 2], [0, 1])
        raw = np.array([0.1 / 0.1, 0.1 / 0.19])
        np.testing.assert_allclose(w, raw / raw.mean(), rtol=1e-14)

    def test_empty_batch(self):
        with pytest.raises(ConfigurationError):
            class_weights(170, FULL, [100, 10], [])

    @pytest.mark.parametrize("epoch", range(0, 200, 7))
    def test_stage_boundary(self, epoch):
        w = class_weights(epoch, FULL, [500, 50, 5], [0, 1, 2, 2])
        if epoch < FULL.switch_epoch:
            assert np.all(w == 1.0)
        else:
            assert w[2] > w[1] > w[0]

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(1, 5000), min_size=2, max_size=10), st.data())
    def test_batch_mean_is_one(self, counts, data):
        labels = data.draw(st.lists(st.integers(0, len(counts) - 1), min_size=1, max_size=128))
        w = class_weights(FULL.switch_epoch, FULL, counts, labels)
        assert abs(w[labels].mean() - 1.0) < 1e-12


def _blobs(sep=8.0, counts=(60, 40), seed=0):
    return gaussian_mixture(len(counts), 4, list(counts), sep, seed)


SHORT = TrainConfig(total_epochs=6, switch_epoch=4, warmup_epochs=1, decay_points=((4, 0.1),),
                    batch_size=16, seed=3)


class TestTrain:
    def test_zero_epochs(self):
        model = init_network(4, 2, seed=1)
        cfg = TrainConfig(total_epochs=0, switch_epoch=0, decay_points=(), warmup_epochs=0)
        params, log = train(_blobs(), model, LossSpec("erm"), cfg)
        assert log == []
        for a, b in zip(params.arrays(), model.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_input_model_untouched(self):
        model = init_network(4, 2, seed=1)
        before = [a.copy() for a in model.arrays()]
        train(_blobs(), model, LossSpec("mm"), SHORT)
        for a, b in zip(model.arrays(), before):
            np.testing.assert_array_equal(a, b)

    def test_separable_reaches_zero_error(self):
        data = _blobs(sep=6.0, counts=(100, 100), seed=5)
        cfg = TrainConfig.scaled(50, batch_size=32)
        params, log = train(data, init_network(4, 2, seed=0), LossSpec("erm"), cfg)
        from margin_forge.metrics import evaluate

        assert evaluate(params, data).overall_error == 0.0
        assert log[-1].train_error == 0.0

    def test_none_margin_trajectory_identical_to_ce(self):
        data = _blobs(sep=1.0, seed=2)
        model = init_network(4, 2, seed=7)
        a, la = train(data, model, LossSpec("erm"), SHORT)
        b, lb = train(data, model, LossSpec("mm", MarginParams(margin_mode=MarginMode.NONE)), SHORT)
        for x, y in zip(a.arrays(), b.arrays()):
            np.testing.assert_array_equal(x, y)
        assert la == lb

    def test_large_delta_trajectory_matches_ce(self):
        # exp(-30) ~ 1e-13 still perturbs the last bits, so agreement is to ~1e-10, not bitwise
        data = _blobs(sep=1.0, seed=2)
        model = init_network(4, 2, seed=7)
        a, _ = train(data, model, LossSpec("erm"), SHORT)
        b, _ = train(data, model, LossSpec("mm", MarginParams(delta_neg=30.0, beta=1.0)), SHORT)
        for x, y in zip(a.arrays(), b.arrays()):
            np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-10)

    def test_deterministic(self):
        data = _blobs(sep=1.5)
        model = init_network(4, 2, seed=0)
        _, la = train(data, model, LossSpec("mm"), SHORT)
        _, lb = train(data, model, LossSpec("mm"), SHORT)
        assert la == lb

    def test_stage_column(self):
        _, log = train(_blobs(), init_network(4, 2), LossSpec("erm"), SHORT)
        assert [r.stage for r in log] == [1, 1, 1, 1, 2, 2]
        assert [r.lr for r in log] == [lr_at(e, SHORT) for e in range(6)]

    def test_divergence(self):
        cfg = TrainConfig(total_epochs=3, switch_epoch=3, base_lr=1e308, warmup_epochs=0,
                          decay_points=(), batch_size=16)
        with pytest.raises(TrainingDivergedError, match="epoch"):
            train(_blobs(sep=0.5), init_network(4, 2), LossSpec("erm"), cfg)

    def test_class_mismatch(self):
        with pytest.raises(InvalidInputError):
            train(_blobs(), init_network(4, 3), LossSpec("erm"), SHORT)

    def test_inverse_sampler_balances_classes(self):
        from margin_forge.drw_schedule import _epoch_order
        from margin_forge.margin_losses import ClassCounts

        labels = np.repeat([0, 1], [900, 100])
        order = _epoch_order(np.random.default_rng(0), labels, ClassCounts((900, 100)), Sampler.INVERSE)
        frac = np.mean(labels[order] == 1)
        assert frac == pytest.approx(0.5, abs=0.05)

    def test_epoch_csv(self, tmp_path):
        _, log = train(_blobs(), init_network(4, 2), LossSpec("erm"), SHORT)
        write_epoch_log(log, tmp_path / "e.csv")
        rows = list(csv.reader(open(tmp_path / "e.csv")))
        assert tuple(rows[0]) == EPOCH_COLUMNS
        assert len(rows) == 7
