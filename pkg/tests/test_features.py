import numpy as np
import pytest
from scipy import stats

from pdmotor import features, ingest, synth
from pdmotor.errors import InsufficientData, InvalidSpec, LayoutMismatch

LAYOUT = features.feature_layout()
NAMES = features.feature_names()


def idx(sensor, band, stat):
    return LAYOUT.index((sensor, band, stat))


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def windows_from(acc, gyr, subject="S01", pd_class="balanced", severity=0):
    n = len(acc)
    t = np.arange(n) / 60.0
    rec = ingest.ImuRecording(subject, t, acc, gyr)
    minutes = n // 3600
    ann = ingest.AnnotationSequence(subject, [ingest.Annotation(k, pd_class, severity, "sitting") for k in range(minutes)])
    return ingest.build_windows(rec, ann)[0]


@pytest.fixture(scope="module")
def tremor_minutes():
    parts = [synth.synth_minute("tremor", 3, "sitting", seed=s) for s in range(3)]
    return np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts])


class TestLayout:
    def test_length(self):
        assert len(LAYOUT) == 132 == features.N_FEATURES
        assert len(set(LAYOUT)) == 132

    def test_order(self):
        assert LAYOUT[0] == ("acc", "raw", "std")
        assert LAYOUT[107] == ("gyr", "level9", "d_rms")
        assert LAYOUT[108] == ("acc", "rest_1min", "lt_0.1")
        assert LAYOUT[109] == ("acc", "rest_5min", "lt_0.1")
        assert LAYOUT[128:] == [("acc", "spectral", "peak_power"), ("acc", "spectral", "mean_power_at_peak"),
                                ("gyr", "spectral", "peak_power"), ("gyr", "spectral", "mean_power_at_peak")]

    def test_thresholds_ascending(self):
        assert list(features.ACC_THRESHOLDS_G) == sorted(features.ACC_THRESHOLDS_G)
        assert list(features.GYR_THRESHOLDS_DPS) == sorted(features.GYR_THRESHOLDS_DPS)


class TestBandStatistics:
    def test_alternating(self):
        s = features.band_statistics([1, -1, 1, -1])
        np.testing.assert_allclose(s.values[:4], [1, 2, 1, 1])
        assert s.skewness == 0.0
        assert s.kurtosis == 1.0

    def test_zeros(self):
        s = features.band_statistics(np.zeros(8))
        assert s.values == (0, 0, 0, 0, 0, 0)
        assert s.zero_variance

    def test_constant_flags_zero_variance(self):
        s = features.band_statistics(np.full(10, 3.0))
        assert s.zero_variance and s.kurtosis == 0.0 and s.skewness == 0.0
        assert s.max == 3.0

    def test_gaussian_moments(self):
        x = np.random.default_rng(0).standard_normal(256)
        s = features.band_statistics(x)
        assert abs(s.kurtosis - 3.0) <= 0.5
        np.testing.assert_allclose(s.kurtosis, stats.kurtosis(x, fisher=True) + 3.0, rtol=1e-12)
        np.testing.assert_allclose(s.skewness, stats.skew(x), rtol=1e-12)
        np.testing.assert_allclose(s.std, np.std(x), rtol=1e-12)

    def test_max_is_absolute(self):
        assert features.band_statistics([0.1, -5.0, 2.0, 0.0]).max == 5.0

    def test_too_short(self):
        with pytest.raises(InsufficientData):
            features.band_statistics([1, 2, 3])


class TestDiffStatistics:
    def test_ramp(self):
        np.testing.assert_allclose(features.diff_statistics([0, 1, 2, 3]), [0, np.sqrt(3), 1], atol=1e-15)

    def test_constant(self):
        assert features.diff_statistics([4, 4, 4]) == (0.0, 0.0, 0.0)

    def test_alternating(self):
        d = np.array([2.0, -2.0, 2.0])
        np.testing.assert_allclose(features.diff_statistics([0, 2, 0, 2]), [np.std(d), 2 * np.sqrt(3), 2])

    def test_too_short(self):
        with pytest.raises(InsufficientData):
            features.diff_statistics([1])


class TestLogScale:
    def test_gyro_std(self):
        assert features.log_scale(np.e - 1e-12, "std", "gyr") == pytest.approx(1.0, abs=1e-15)

    def test_acc_plain_max_unscaled(self):
        assert features.log_scale(5.0, "max", "acc") == 5.0

    def test_acc_diff_logged(self):
        assert features.log_scale(1.0, "d_rms", "acc") == pytest.approx(np.log(1.0 + 1e-12))

    def test_skewness_passes(self):
        assert features.log_scale(-0.4, "skewness", "gyr") == -0.4
        assert features.log_scale(2.5, "kurtosis", "gyr") == 2.5

    def test_zero_guarded(self):
        assert features.log_scale(0.0, "norm", "gyr") == np.log(1e-12)


class TestRestFraction:
    def test_all_below(self):
        assert features.rest_fraction(np.full(100, 0.05), 0.1) == 1.0

    def test_half(self):
        assert features.rest_fraction(np.r_[np.full(50, 0.05), np.full(50, 0.5)], 0.1) == 0.5

    def test_strict(self):
        assert features.rest_fraction(np.full(10, 0.1), 0.1) == 0.0

    def test_empty(self):
        with pytest.raises(InsufficientData):
            features.rest_fraction([], 0.1)

    def test_nonpositive_threshold(self):
        with pytest.raises(InvalidSpec):
            features.rest_fraction([1.0], 0.0)

    def test_monotone_fuzz(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            sig = np.abs(rng.standard_normal(rng.integers(1, 200))) * rng.uniform(0.01, 2.0)
            c1, c2 = np.sort(rng.uniform(1e-3, 3.0, 2))
            if c1 == c2:
                continue
            f1, f2 = features.rest_fraction(sig, c1), features.rest_fraction(sig, c2)
            assert 0.0 <= f1 <= f2 <= 1.0


class TestSpectralPeak:
    def test_tone(self):
        t = np.arange(3600) / 60.0
        x = np.column_stack([np.sin(2 * np.pi * 2.0 * t), np.zeros_like(t), np.zeros_like(t)])
        peak, mean = features.spectral_peak_features(x)
        assert 0 < mean <= peak

    def test_zero(self):
        assert features.spectral_peak_features(np.zeros((3600, 3))) == (0.0, 0.0)

    def test_high_tone_filtered(self):
        t = np.arange(3600) / 60.0
        base = np.sin(2 * np.pi * 2.0 * t)
        x1 = np.column_stack([base, 0 * t, 0 * t])
        x2 = np.column_stack([base + 0.3 * np.sin(2 * np.pi * 10.0 * t), 0 * t, 0 * t])
        p1, _ = features.spectral_peak_features(x1)
        p2, _ = features.spectral_peak_features(x2)
        assert abs(p2 - p1) < 0.05 * p1


class TestFeatureVector:
    def test_length_and_finite(self, tremor_minutes):
        for w in windows_from(*tremor_minutes):
            v = features.build_feature_vector(w)
            assert v.shape == (132,)
            assert np.all(np.isfinite(v))

    def test_rest_entries_in_unit_interval(self, tremor_minutes):
        v = features.build_feature_vector(windows_from(*tremor_minutes)[1])
        rest = [i for i, (_, band, _) in enumerate(LAYOUT) if band.startswith("rest")]
        assert len(rest) == 20
        assert np.all((v[rest] >= 0) & (v[rest] <= 1))

    def test_zero_window(self):
        w = windows_from(np.zeros((3600, 3)), np.zeros((3600, 3)))[0]
        v = features.build_feature_vector(w)
        for i, (sensor, band, stat) in enumerate(LAYOUT):
            if band.startswith("rest"):
                assert v[i] == 1.0, NAMES[i]
            elif band == "spectral":
                assert v[i] == 0.0, NAMES[i]
            elif features.log_scale(0.0, stat, sensor) != 0.0:
                assert v[i] == np.log(1e-12), NAMES[i]
            else:
                assert v[i] == 0.0, NAMES[i]

    def test_rotation_invariance(self, tremor_minutes):
        acc, gyr = tremor_minutes
        ref = features.build_feature_vector(windows_from(acc, gyr)[1])
        rng = np.random.default_rng(2)
        for _ in range(20):
            q = random_rotation(rng)
            v = features.build_feature_vector(windows_from(acc @ q.T, gyr @ q.T)[1])
            np.testing.assert_allclose(v, ref, rtol=1e-9, atol=1e-9)

    def test_deterministic(self, tremor_minutes):
        w = windows_from(*tremor_minutes)[0]
        assert features.build_feature_vector(w).tobytes() == features.build_feature_vector(w).tobytes()

    def test_scale_response(self, tremor_minutes):
        acc, gyr = tremor_minutes
        w1 = windows_from(acc, gyr)[1]
        w10 = windows_from(10 * acc, 10 * gyr)[1]
        v1, v10 = features.build_feature_vector(w1), features.build_feature_vector(w10)
        grows = [i for i, (_, band, st) in enumerate(LAYOUT)
                 if band in features.BANDS and st in ("std", "norm", "max", "rms", "d_std", "d_norm", "d_rms")]
        assert np.all(v10[grows] > v1[grows])

    def test_scale_keeps_quiet_rest(self):
        rng = np.random.default_rng(3)
        acc = 1e-4 * rng.standard_normal((3600, 3))
        gyr = 1e-3 * rng.standard_normal((3600, 3))
        rest = [i for i, (_, band, _) in enumerate(LAYOUT) if band.startswith("rest")]
        v1 = features.build_feature_vector(windows_from(acc, gyr)[0])
        v10 = features.build_feature_vector(windows_from(10 * acc, 10 * gyr)[0])
        np.testing.assert_array_equal(v1[rest], 1.0)
        np.testing.assert_array_equal(v10[rest], v1[rest])

    def test_five_minute_context_differs(self):
        quiet = np.zeros((3600, 3))
        acc = np.vstack([quiet, quiet, synth.synth_minute("dyskinesia", 4, "sitting", seed=1)[0]])
        gyr = np.zeros_like(acc)
        w = windows_from(acc, gyr)[0]
        v = features.build_feature_vector(w)
        assert v[idx("acc", "rest_1min", "lt_0.1")] == 1.0
        assert v[idx("acc", "rest_5min", "lt_0.1")] < 1.0

    def test_tremor_energy_at_level_three(self, tremor_minutes):
        v = features.build_feature_vector(windows_from(*tremor_minutes)[1])
        energies = {b: v[idx("acc", b, "norm")] for b in features.BANDS[1:]}
        assert max(energies, key=energies.get) == "level3"


class TestReduce:
    def test_tremor_full(self):
        assert features.reduce_features(np.zeros(132), "tremor").shape == (132,)

    @pytest.mark.parametrize("kind, removed, kept", [
        ("dyskinesia", {"level1", "level9"}, {"raw", "level3", "level5", "level7"}),
        ("bradykinesia", {"level1", "level7"}, {"raw", "level3", "level5", "level9"}),
    ])
    def test_layer_two(self, kind, removed, kept):
        keep = features.retained_indices(kind)
        assert len(keep) == 96
        bands = {LAYOUT[i][1] for i in keep}
        assert not bands & removed
        assert kept <= bands
        assert sum(1 for i in keep if LAYOUT[i][1] in features.BANDS) == 2 * 4 * 9
        assert list(keep) == sorted(keep)
        x = np.arange(132.0)
        np.testing.assert_array_equal(features.reduce_features(x, kind), x[keep])

    def test_projection(self):
        x = np.random.default_rng(4).standard_normal(132)
        for kind in features.MODEL_KINDS:
            keep = features.retained_indices(kind)
            once = np.zeros(132)
            once[keep] = features.reduce_features(x, kind)
            twice = np.zeros(132)
            twice[keep] = features.reduce_features(once, kind)
            np.testing.assert_array_equal(once, twice)

    def test_matrix_input(self):
        assert features.reduce_features(np.zeros((5, 132)), "bradykinesia").shape == (5, 96)

    def test_unknown_kind(self):
        with pytest.raises(InvalidSpec):
            features.reduce_features(np.zeros(132), "chorea")

    def test_wrong_length(self):
        with pytest.raises(LayoutMismatch):
            features.reduce_features(np.zeros(96), "tremor")


class TestFeatureStore:
    def test_round_trip(self, tmp_path, tremor_minutes):
        table = features.featurize_windows(windows_from(*tremor_minutes, pd_class="tremor", severity=3))
        table.X[0, 5] = 1.234567890123456789e-7
        path, sidecar = features.write_feature_store(table, tmp_path / "store.csv")
        assert sidecar.exists()
        back = features.read_feature_store(path)
        np.testing.assert_allclose(back.X, table.X, rtol=1e-15, atol=0)
        assert back.subject_ids == table.subject_ids
        assert back.pd_classes == ["tremor"] * 3
        np.testing.assert_array_equal(back.severities, table.severities)

    def test_layout_mismatch(self, tmp_path, tremor_minutes):
        import json
        table = features.featurize_windows(windows_from(*tremor_minutes)[:1])
        path, sidecar = features.write_feature_store(table, tmp_path / "store.csv")
        meta = json.loads(sidecar.read_text())
        meta["layout_version"] = "other-layout"
        sidecar.write_text(json.dumps(meta))
        with pytest.raises(LayoutMismatch):
            features.read_feature_store(path)

    def test_subset(self, tremor_minutes):
        table = features.featurize_windows(windows_from(*tremor_minutes))
        sub = table.subset(np.array([True, False, True]))
        assert len(sub) == 2
        np.testing.assert_array_equal(sub.window_indices, [0, 2])
