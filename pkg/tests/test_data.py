import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rulnet import ClusteringError, ContractError, IntegrityError, ParseError
from rulnet import data as D
from rulnet.synthetic import generate_dataset


def make_row(unit, cycle, rng=None, fill=0.5):
    values = [unit, cycle] + [fill] * 24 if rng is None else \
        [unit, cycle] + list(np.round(rng.uniform(-5, 5, 24), 4))
    return " ".join(str(v) for v in values)


class TestParseCmapss:
    def test_minimal_two_line_file(self):
        text = make_row(1, 1) + "\n" + make_row(1, 2) + "\n"
        trajs = D.parse_cmapss(io.StringIO(text))
        assert len(trajs) == 1
        assert trajs[0].unit_id == 1
        assert len(trajs[0]) == 2
        assert trajs[0].channels.shape == (2, 24)

    def test_trailing_whitespace_tolerated(self):
        text = make_row(1, 1) + "   \n\n" + make_row(1, 2) + "  \n"
        assert len(D.parse_cmapss(io.StringIO(text))[0]) == 2

    def test_wrong_column_count_reports_line(self):
        text = make_row(1, 1) + "\n1 2 3\n"
        with pytest.raises(ParseError) as err:
            D.parse_cmapss(io.StringIO(text))
        assert "line 2" in str(err.value)
        assert err.value.line == 2

    def test_non_numeric_field(self):
        bad = make_row(1, 1).replace("0.5", "abc", 1)
        with pytest.raises(ParseError):
            D.parse_cmapss(io.StringIO(bad + "\n"))

    def test_non_monotone_cycles(self):
        text = make_row(1, 1) + "\n" + make_row(1, 3) + "\n"
        with pytest.raises(IntegrityError):
            D.parse_cmapss(io.StringIO(text))

    def test_cycles_must_start_at_one(self):
        with pytest.raises(IntegrityError):
            D.parse_cmapss(io.StringIO(make_row(1, 2) + "\n"))

    def test_units_in_first_appearance_order(self):
        text = "\n".join([make_row(2, 1), make_row(2, 2), make_row(1, 1)]) + "\n"
        trajs = D.parse_cmapss(io.StringIO(text))
        assert [t.unit_id for t in trajs] == [2, 1]

    def test_round_trip(self, tmp_path, synth1):
        path = tmp_path / "round.txt"
        D.write_cmapss(synth1["train"], path)
        again = D.parse_cmapss(path)
        assert len(again) == len(synth1["train"])
        for a, b in zip(again, synth1["train"]):
            assert a.unit_id == b.unit_id
            np.testing.assert_array_equal(a.channels, b.channels)


class TestParseTruth:
    def test_single_zero(self):
        assert D.parse_rul_truth(io.StringIO("0\n")) == [0]

    def test_values_in_order(self):
        assert D.parse_rul_truth(io.StringIO("112\n98\n20\n")) == [112, 98, 20]

    def test_negative_rejected(self):
        with pytest.raises(ParseError):
            D.parse_rul_truth(io.StringIO("-3\n"))

    def test_non_integer_rejected(self):
        with pytest.raises(ParseError):
            D.parse_rul_truth(io.StringIO("12.5\n"))

    def test_count_mismatch_with_test_set(self, synth1):
        with pytest.raises(IntegrityError):
            D.pair_test_truth(synth1["test"], [])


class TestClusterConditions:
    def test_recovers_synthetic_centers(self):
        rng = np.random.default_rng(0)
        centers = np.array([[0, 0, 0], [10, 0, 0], [0, 10, 0], [0, 0, 10], [7, 7, 7], [-5, 5, 0]], dtype=float)
        rows = np.vstack([c + rng.normal(0, 0.01, size=(40, 3)) for c in centers])
        traj = D.RawTrajectory(unit_id=1, settings=rows, sensors=np.zeros((len(rows), 21)))
        cm = D.cluster_conditions([traj], k=6, seed=1)
        # Brute-force oracle: each generated point's nearest true center.
        found = sorted(tuple(np.round(c, 1)) for c in cm.centroids)
        expected = []
        for c in centers:
            members = rows[np.linalg.norm(rows - c, axis=1) < 5]
            expected.append(tuple(np.round(members.mean(axis=0), 1)))
        assert found == sorted(expected)

    def test_k1_equals_global_stats(self, synth1):
        cm = D.cluster_conditions(synth1["train"], k=1, seed=0)
        channels = np.vstack([t.channels for t in synth1["train"]])
        np.testing.assert_allclose(cm.means[0], channels.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(cm.stds[0], channels.std(axis=0), atol=1e-12)
        np.testing.assert_allclose(cm.centroids[0], channels[:, :3].mean(axis=0), atol=1e-9)

    def test_deterministic_under_seed(self, synth6):
        cm1 = D.cluster_conditions(synth6["train"], k=6, seed=3)
        cm2 = D.cluster_conditions(synth6["train"], k=6, seed=3)
        assert np.array_equal(cm1.centroids, cm2.centroids)
        assert np.array_equal(cm1.means, cm2.means)

    def test_six_tight_separated_clusters(self, synth6):
        cm = D.cluster_conditions(synth6["train"], k=6, seed=0)
        settings = np.vstack([t.settings for t in synth6["train"]])
        assignment = cm.assign(settings)
        assert np.all(np.bincount(assignment, minlength=6) > 0)
        span = np.linalg.norm(settings.max(axis=0) - settings.min(axis=0))
        dist = np.linalg.norm(settings - cm.centroids[assignment], axis=1)
        assert dist.max() <= 1e-3 * span

    def test_too_few_distinct_points(self):
        traj = D.RawTrajectory(
            unit_id=1, settings=np.zeros((50, 3)), sensors=np.zeros((50, 21))
        )
        with pytest.raises(ClusteringError):
            D.cluster_conditions([traj], k=2, seed=0)

    def test_assignment_tie_breaks_to_lowest_index(self):
        cm = D.ConditionModel(
            centroids=np.array([[0.0, 0, 0], [2.0, 0, 0]]),
            means=np.zeros((2, 24)),
            stds=np.ones((2, 24)),
        )
        assert cm.assign(np.array([[1.0, 0, 0]]))[0] == 0  # equidistant

    def test_text_round_trip(self, tmp_path, synth6):
        cm = D.cluster_conditions(synth6["train"], k=6, seed=0)
        path = tmp_path / "cm.txt"
        cm.save_text(path)
        loaded = D.ConditionModel.load_text(path)
        np.testing.assert_array_equal(loaded.centroids, cm.centroids)
        np.testing.assert_array_equal(loaded.means, cm.means)
        np.testing.assert_array_equal(loaded.stds, cm.stds)
        np.testing.assert_array_equal(loaded.constant_mask, cm.constant_mask)


class TestNormalize:
    def test_constant_channel_maps_to_zero(self, synth1):
        cm = D.cluster_conditions(synth1["train"], k=1, seed=0)
        normed = D.normalize(synth1["train"][0], cm)
        constant_cols = np.where(cm.constant_mask[0])[0]
        assert len(constant_cols) >= 2
        for col in constant_cols:
            np.testing.assert_array_equal(normed.channels[:, col], 0.0)

    def test_channel_equal_to_mean_maps_to_zero(self):
        settings = np.tile([1.0, 2.0, 3.0], (10, 1))
        sensors = np.arange(210, dtype=float).reshape(10, 21)
        traj = D.RawTrajectory(unit_id=1, settings=settings, sensors=sensors)
        cm = D.cluster_conditions([traj], k=1, seed=0)
        sensors_at_mean = np.tile(sensors.mean(axis=0), (10, 1))
        at_mean = D.RawTrajectory(unit_id=1, settings=settings, sensors=sensors_at_mean)
        normed = D.normalize(at_mean, cm)
        np.testing.assert_allclose(normed.sensors, 0.0, atol=1e-12)

    def test_k1_is_global_zscore(self, synth1):
        cm = D.cluster_conditions(synth1["train"], k=1, seed=0)
        traj = synth1["train"][0]
        normed = D.normalize(traj, cm)
        chans = traj.channels
        sigma = cm.stds[0].copy()
        mask = cm.constant_mask[0]
        sigma[mask] = 1.0
        expected = (chans - cm.means[0]) / sigma
        expected[:, mask] = 0.0
        np.testing.assert_allclose(normed.channels, expected, atol=1e-12)

    def test_fit_then_normalize_gives_unit_stats(self, synth6):
        cm = D.cluster_conditions(synth6["train"], k=6, seed=0)
        normed = np.vstack([D.normalize(t, cm).channels for t in synth6["train"]])
        assignment = cm.assign(np.vstack([t.settings for t in synth6["train"]]))
        for j in range(6):
            rows = normed[assignment == j]
            for i in range(24):
                if cm.constant_mask[j, i]:
                    continue
                assert abs(rows[:, i].mean()) < 1e-5
                assert abs(rows[:, i].std() - 1.0) < 1e-3

    def test_per_condition_normalization_recovers_trend(self, synth6):
        """Linear-drift fit: conditional z-scores expose the degradation
        trend that global z-scores leave buried in regime noise."""
        train = synth6["train"]
        cm6 = D.cluster_conditions(train, k=6, seed=0)
        cm1 = D.cluster_conditions(train, k=1, seed=0)

        def mean_r2(channels):
            t = np.arange(channels.shape[0], dtype=np.float64)
            a = np.vstack([t, np.ones_like(t)]).T
            scores = []
            for col in range(3, channels.shape[1]):
                y = channels[:, col]
                if y.std() < 1e-12:
                    continue
                coef, *_ = np.linalg.lstsq(a, y, rcond=None)
                resid = y - a @ coef
                scores.append(1.0 - (resid**2).sum() / ((y - y.mean()) ** 2).sum())
            return float(np.mean(scores))

        traj = train[0]
        r2_conditional = mean_r2(D.normalize(traj, cm6).channels)
        r2_global = mean_r2(D.normalize(traj, cm1).channels)
        assert r2_conditional > r2_global + 0.2


class TestPiecewiseRul:
    def test_capped(self):
        assert D.piecewise_rul(300, 100, 125) == 125

    def test_linear_region(self):
        assert D.piecewise_rul(300, 250, 125) == 50

    def test_end_of_life(self):
        assert D.piecewise_rul(300, 300, 125) == 0

    def test_cycle_beyond_end_rejected(self):
        with pytest.raises(ContractError):
            D.piecewise_rul(300, 301, 125)

    @given(total=st.integers(1, 500), r_max=st.integers(1, 200), t=st.integers(1, 500))
    @settings(max_examples=60, deadline=None)
    def test_always_bounded(self, total, r_max, t):
        if t > total:
            return
        value = D.piecewise_rul(total, t, r_max)
        assert 0 <= value <= r_max


def brute_force_window_count(total, window):
    """Enumerate every end position a stride-1 window can occupy."""
    if window > total:
        return 1
    return sum(1 for end in range(window, total + 1))


class TestWindowSplit:
    @staticmethod
    def _traj(total):
        rng = np.random.default_rng(total)
        return D.RawTrajectory(
            unit_id=1,
            settings=rng.standard_normal((total, 3)),
            sensors=rng.standard_normal((total, 21)),
        )

    def test_spec_count_192_30(self):
        samples = D.window_split(self._traj(192), 30, 125)
        assert len(samples) == 163

    def test_boundary_equal_lengths(self):
        assert len(D.window_split(self._traj(30), 30, 125)) == 1

    def test_short_sequence_forward_fill(self):
        traj = self._traj(20)
        samples = D.window_split(traj, 30, 125)
        assert len(samples) == 1
        matrix = samples[0].matrix
        first_real = matrix[:, 10]
        for col in range(10):
            np.testing.assert_array_equal(matrix[:, col], first_real)
        np.testing.assert_allclose(matrix[:, 10:], traj.channels.T.astype(np.float32))

    @given(total=st.integers(1, 300), window=st.integers(1, 60), r_max=st.integers(50, 150))
    @settings(max_examples=50, deadline=None)
    def test_count_matches_formula_and_enumerator(self, total, window, r_max):
        samples = D.window_split(self._traj(total), window, r_max)
        assert len(samples) == D.expected_sample_count(total, window)
        assert len(samples) == brute_force_window_count(total, window)

    @given(total=st.integers(2, 300), window=st.integers(1, 40))
    @settings(max_examples=30, deadline=None)
    def test_labels_non_increasing_and_capped(self, total, window):
        samples = D.window_split(self._traj(total), window, 125)
        labels = [s.label for s in samples]
        assert all(a >= b for a, b in zip(labels, labels[1:]))
        assert all(0 <= l <= 125 for l in labels)
        assert samples[-1].label == 0.0

    def test_window_columns_are_consecutive_cycles(self):
        traj = self._traj(40)
        samples = D.window_split(traj, 5, 125)
        chosen = samples[10]
        end = chosen.end_cycle
        np.testing.assert_allclose(
            chosen.matrix,
            traj.channels[end - 5 : end].T.astype(np.float32),
        )

    def test_test_mode_single_final_window(self):
        traj = self._traj(50)
        samples = D.window_split(traj, 30, 125, is_test=True, test_rul=140)
        assert len(samples) == 1
        assert samples[0].end_cycle == 50
        assert samples[0].label == 125.0
        unclipped = D.window_split(traj, 30, 125, is_test=True, test_rul=140, clip_test_label=False)
        assert unclipped[0].label == 140.0

    def test_test_mode_requires_truth(self):
        with pytest.raises(ContractError):
            D.window_split(self._traj(10), 5, 125, is_test=True)

    def test_windows_file_round_trip(self, tmp_path):
        samples = D.window_split(self._traj(45), 8, 125)
        path = tmp_path / "w.txt"
        D.save_windows(samples, path)
        loaded = D.load_windows(path)
        assert len(loaded) == len(samples)
        for a, b in zip(loaded, samples):
            assert (a.unit_id, a.end_cycle, a.label) == (b.unit_id, b.end_cycle, b.label)
            np.testing.assert_array_equal(a.matrix, b.matrix)


class TestSyntheticGenerator:
    def test_counts_and_format(self, tmp_path):
        ds = generate_dataset(tmp_path, name="X", n_train=7, n_test=4, n_conditions=2, seed=1)
        assert len(D.parse_cmapss(ds.train_path)) == 7
        test = D.parse_cmapss(ds.test_path)
        truth = D.parse_rul_truth(ds.truth_path)
        assert len(test) == 4 and len(truth) == 4

    def test_deterministic(self, tmp_path):
        a = generate_dataset(tmp_path / "a", name="X", n_train=3, n_test=2, seed=9)
        b = generate_dataset(tmp_path / "b", name="X", n_train=3, n_test=2, seed=9)
        assert a.train_path.read_text() == b.train_path.read_text()
        assert a.truth_path.read_text() == b.truth_path.read_text()
