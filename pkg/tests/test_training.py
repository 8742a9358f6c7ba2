import numpy as np
import pytest

from conftest import build_tiny_model
from rulnet import CheckpointError, ConfigurationError, ContractError, Tape, Tensor
from rulnet import autodiff as ad
from rulnet.checkpoint import load_bundle, save_bundle
from rulnet.data import ConditionModel, WindowedSample
from rulnet.training import AdamState, TrainConfig, adam_step, fit, mse_loss, split_units


class TestMseLoss:
    def test_zero_when_equal(self):
        p = Tensor(np.array([1.0, 2.0, 3.0]), dtype=np.float64)
        assert mse_loss(p, p).item() == 0.0

    def test_single_element(self):
        p = Tensor(np.array([0.0]), dtype=np.float64)
        t = Tensor(np.array([2.0]), dtype=np.float64)
        assert mse_loss(p, t).item() == 4.0

    def test_direct_arithmetic(self):
        p = Tensor(np.array([1.0, 2.0]), dtype=np.float64)
        t = Tensor(np.array([3.0, 6.0]), dtype=np.float64)
        assert mse_loss(p, t).item() == 10.0

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            mse_loss(Tensor(np.zeros(2)), Tensor(np.zeros(3)))

    def test_batch_loss_equals_mean_of_per_sample_losses(self):
        rng = np.random.default_rng(0)
        p = rng.standard_normal(9)
        t = rng.standard_normal(9)
        batch = mse_loss(Tensor(p, dtype=np.float64), Tensor(t, dtype=np.float64)).item()
        per_sample = [
            mse_loss(Tensor(p[i : i + 1], dtype=np.float64), Tensor(t[i : i + 1], dtype=np.float64)).item()
            for i in range(9)
        ]
        assert abs(batch - np.mean(per_sample)) < 1e-12

    def test_differentiable(self):
        p = Tensor(np.array([1.0, 5.0]), requires_grad=True, dtype=np.float64)
        t = Tensor(np.array([0.0, 0.0]), dtype=np.float64)
        with Tape() as tape:
            loss = mse_loss(p, t)
        tape.backward(loss)
        np.testing.assert_allclose(p.grad, [1.0, 5.0])  # d/dp mean((p-t)^2) = 2(p-t)/N


class TestAdam:
    def test_zero_gradient_leaves_parameters_unchanged(self):
        p = Tensor(np.array([1.5, -2.0]), requires_grad=True, dtype=np.float64)
        p.grad = np.zeros(2)
        state = AdamState([p])
        adam_step([p], state, lr=0.1)
        np.testing.assert_array_equal(p.data, [1.5, -2.0])

    def test_missing_gradient_skipped(self):
        p = Tensor(np.array([1.0]), requires_grad=True, dtype=np.float64)
        adam_step([p], AdamState([p]), lr=0.1)
        assert p.data[0] == 1.0

    def test_hand_evaluated_first_step(self):
        # m=0.1, v=0.001 -> m_hat=1, v_hat=1 -> p -= lr/(1+eps)
        p = Tensor(np.array([0.0]), requires_grad=True, dtype=np.float64)
        p.grad = np.array([1.0])
        state = AdamState([p])
        adam_step([p], state, lr=0.0002)
        expected = -0.0002 * 1.0 / (1.0 + 1e-8)
        assert abs(p.data[0] - expected) < 1e-12

    def test_two_identical_steps_move_monotonically(self):
        p = Tensor(np.array([0.0]), requires_grad=True, dtype=np.float64)
        positions = [0.0]
        state = AdamState([p])
        for _ in range(2):
            p.grad = np.array([1.0])
            adam_step([p], state, lr=0.01)
            positions.append(float(p.data[0]))
        assert positions[2] < positions[1] < positions[0]

    def test_shape_mismatch_rejected(self):
        p = Tensor(np.zeros(3), requires_grad=True, dtype=np.float64)
        p.grad = np.zeros(2)
        with pytest.raises(ContractError):
            adam_step([p], AdamState([p]), lr=0.1)


class TestTrainConfig:
    def test_defaults_match_published_setup(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 0.0002
        assert cfg.batch_size == 128
        assert cfg.early_stop_patience == 50
        assert cfg.window == 30
        assert cfg.r_max == 125.0
        assert (cfg.feature_heads, cfg.sequence_heads) == (5, 4)

    def test_invalid_values_rejected(self):
        with pytest.raises(ContractError):
            TrainConfig(batch_size=0)
        with pytest.raises(ContractError):
            TrainConfig(validation_fraction=1.0)
        with pytest.raises(ContractError):
            TrainConfig(early_stop_patience=0)


def tiny_samples(n_units=6, length=24, window=6, seed=0):
    rng = np.random.default_rng(seed)
    samples = []
    for unit in range(1, n_units + 1):
        # Simple decaying signal so a tiny model can fit quickly.
        base = rng.standard_normal((4, 1))
        for end in range(window, length + 1):
            t = np.arange(end - window, end, dtype=np.float64)
            matrix = (base + np.sin(t / 6.0) + t / length).astype(np.float32)
            samples.append(
                WindowedSample(
                    matrix=matrix,
                    label=float(min(20.0, length - end)),
                    unit_id=unit,
                    end_cycle=end,
                )
            )
    return samples


def tiny_fit_config(**overrides):
    defaults = dict(
        learning_rate=0.01,
        batch_size=32,
        early_stop_patience=10,
        max_epochs=6,
        validation_fraction=0.2,
        r_max=20.0,
        window=6,
        feature_heads=2,
        sequence_heads=2,
        seed=0,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


class TestSplitUnits:
    def test_no_unit_in_both_sides(self):
        units = np.repeat(np.arange(1, 21), 5)
        train, val = split_units(units, 0.1, seed=4)
        assert not set(train) & set(val)
        assert set(train) | set(val) == set(range(1, 21))
        assert len(val) == 2

    def test_at_least_one_each_side(self):
        train, val = split_units(np.array([1, 1, 2]), 0.01, seed=0)
        assert len(train) >= 1 and len(val) >= 1

    def test_deterministic(self):
        units = np.arange(30)
        assert split_units(units, 0.25, seed=7) == split_units(units, 0.25, seed=7)
        assert split_units(units, 0.25, seed=7) != split_units(units, 0.25, seed=8)


class TestFit:
    def test_empty_set_rejected(self, tiny_model):
        with pytest.raises(ContractError):
            fit(tiny_model, [], tiny_fit_config())

    def test_deterministic_replay(self):
        samples = tiny_samples()

        def run():
            model, _ = build_tiny_model(seed=1, dtype=np.float32, dropout=0.5)
            fit(model, samples, tiny_fit_config(max_epochs=3))
            return model.state_arrays()

        first = run()
        second = run()
        for (n1, a1), (n2, a2) in zip(first, second):
            assert n1 == n2
            assert np.array_equal(a1, a2), n1

    def test_loss_decreases_on_learnable_signal(self):
        model, _ = build_tiny_model(seed=2, dtype=np.float32)
        result = fit(model, tiny_samples(), tiny_fit_config(max_epochs=5))
        losses = [r.train_loss for r in result.log]
        assert len(losses) == 5
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_patience_one_with_frozen_metric_stops_after_two_epochs(self):
        model, _ = build_tiny_model(seed=3, dtype=np.float32)
        config = tiny_fit_config(learning_rate=0.0, early_stop_patience=1, max_epochs=50)
        result = fit(model, tiny_samples(), config)
        assert result.epochs_run == 2
        assert result.stopped_early

    def test_restores_best_validation_weights(self):
        samples = tiny_samples()
        model, _ = build_tiny_model(seed=4, dtype=np.float32)
        config = tiny_fit_config(max_epochs=8, early_stop_patience=50)
        result = fit(model, samples, config)
        from rulnet.data import windows_to_arrays
        from rulnet.training import predict_batched

        x, y, units, _ = windows_to_arrays(samples)
        in_val = np.isin(units, result.val_units)
        pred = predict_batched(model, x[in_val])
        restored_rmse = float(np.sqrt(np.mean((pred - y[in_val]) ** 2)))
        best_logged = min(r.val_rmse for r in result.log)
        assert abs(restored_rmse - best_logged) < 1e-4
        assert result.best_val_rmse == best_logged

    def test_unit_level_leakage_guard(self):
        model, _ = build_tiny_model(seed=5, dtype=np.float32)
        result = fit(model, tiny_samples(), tiny_fit_config(max_epochs=1))
        assert not set(result.train_units) & set(result.val_units)

    def test_epoch_touches_every_window_once(self):
        # The batch partition property, checked on the shuffled index math
        # the loop uses: consecutive batch_size slices of one permutation.
        rng = np.random.default_rng(0)
        order = rng.permutation(100)
        batches = [order[s : s + 32] for s in range(0, 100, 32)]
        seen = np.concatenate(batches)
        assert len(seen) == 100
        assert sorted(seen.tolist()) == list(range(100))


class TestCheckpoint:
    @staticmethod
    def _bundle_parts():
        model, rng = build_tiny_model(seed=6, dtype=np.float32)
        cm = ConditionModel(
            centroids=rng.standard_normal((2, 3)),
            means=rng.standard_normal((2, 24)),
            stds=np.abs(rng.standard_normal((2, 24))) + 0.5,
        )
        config = {"window": 6, "r_max": 20.0, "mode": "F+T", "clip_test_rul": True}
        return model, cm, config, rng

    def test_round_trip_bit_identical_predictions(self, tmp_path):
        model, cm, config, rng = self._bundle_parts()
        x = rng.standard_normal((4, 6)).astype(np.float32)
        before = model.predict(x)
        path = tmp_path / "bundle.bin"
        save_bundle(path, model, cm, config)
        loaded = load_bundle(path)
        assert np.array_equal(loaded.model.predict(x), before)
        np.testing.assert_array_equal(loaded.condition_model.centroids, cm.centroids)
        np.testing.assert_array_equal(loaded.condition_model.stds, cm.stds)
        assert loaded.config == config

    def test_truncated_file_rejected(self, tmp_path):
        model, cm, config, _ = self._bundle_parts()
        path = tmp_path / "bundle.bin"
        save_bundle(path, model, cm, config)
        blob = path.read_bytes()
        for cut in (4, 15, len(blob) // 2, len(blob) - 3):
            trimmed = tmp_path / f"cut{cut}.bin"
            trimmed.write_bytes(blob[:cut])
            with pytest.raises(CheckpointError):
                load_bundle(trimmed)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTRIGHT" + b"\x00" * 64)
        with pytest.raises(CheckpointError):
            load_bundle(path)

    def test_wrong_version_rejected(self, tmp_path):
        model, cm, config, _ = self._bundle_parts()
        path = tmp_path / "bundle.bin"
        save_bundle(path, model, cm, config)
        blob = bytearray(path.read_bytes())
        blob[8] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError):
            load_bundle(path)

    def test_records_window_and_refuses_mismatch(self, tmp_path):
        model, cm, config, _ = self._bundle_parts()
        path = tmp_path / "bundle.bin"
        save_bundle(path, model, cm, config)
        bundle = load_bundle(path)
        assert bundle.window == 6
        assert bundle.r_max == 20.0
        bundle.require_window(6)
        with pytest.raises(ConfigurationError):
            bundle.require_window(30)
