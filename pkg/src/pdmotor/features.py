"""Per-window feature vector (132 entries) and per-model feature reduction.

Layout, in order:

* 2 sensors x 6 bands x 9 statistics = 108 entries. Bands are the
  undecomposed norm signal (``raw``) and db3 detail levels 1, 3, 5, 7, 9.
  Statistics are std, norm, max, rms, kurtosis, skewness of the band plus
  std, norm, rms of its first difference.
* 2 sensors x 5 thresholds x {1 min, 5 min} rest fractions = 20 entries.
* 2 sensors x {peak_power, mean_power_at_peak} spectral entries = 4.
"""
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import dsp
from .errors import (
    FeatureComputationFailed,
    InsufficientData,
    InvalidSpec,
    LayoutMismatch,
)

LAYOUT_VERSION = "pdmotor-132-v1"
SENSORS = ("acc", "gyr")
BANDS = ("raw", "level1", "level3", "level5", "level7", "level9")
STATS = ("std", "norm", "max", "rms", "kurtosis", "skewness", "d_std", "d_norm", "d_rms")
HORIZONS = ("1min", "5min")
SPECTRAL = ("peak_power", "mean_power_at_peak")
ACC_THRESHOLDS_G = (0.10, 0.15, 0.20, 0.25, 0.30)
GYR_THRESHOLDS_DPS = (1.00, 1.25, 1.50, 1.75, 2.00)
LOG_EPS = 1e-12
N_FEATURES = 132
MODEL_KINDS = ("tremor", "bradykinesia", "dyskinesia")

# detail levels removed before the layer-2 models see the vector
_REMOVED_LEVELS = {
    "tremor": (),
    "bradykinesia": ("level1", "level7"),
    "dyskinesia": ("level1", "level9"),
}
_POSITIVE_STATS = {"std", "norm", "max", "rms", "d_std", "d_norm", "d_rms"}


@dataclass(frozen=True)
class FeatureConfig:
    rate_hz: float = 60.0
    bandpass: dsp.BandpassSpec = dsp.BandpassSpec(0.1, 20.0, 4)
    spectral_band: dsp.BandpassSpec = dsp.BandpassSpec(0.2, 4.0, 4)
    wavelet_depth: int = 9
    wavelet_mode: str = "symmetric"
    acc_thresholds: tuple = ACC_THRESHOLDS_G
    gyr_thresholds: tuple = GYR_THRESHOLDS_DPS
    psd_segment_s: float = 4.0
    peak_halfwidth_hz: float = 0.25

    def thresholds(self, sensor):
        return self.acc_thresholds if sensor == "acc" else self.gyr_thresholds


def feature_layout(cfg=None):
    """List of ``(sensor, band, stat)`` triples, index-aligned with the vector."""
    cfg = cfg or FeatureConfig()
    layout = [(s, b, st) for s in SENSORS for b in BANDS for st in STATS]
    for s in SENSORS:
        for c in cfg.thresholds(s):
            for h in HORIZONS:
                layout.append((s, f"rest_{h}", f"lt_{c:g}"))
    layout += [(s, "spectral", k) for s in SENSORS for k in SPECTRAL]
    return layout


def feature_names(cfg=None):
    return [".".join(t) for t in feature_layout(cfg)]


class BandStats(NamedTuple):
    std: float
    norm: float
    max: float
    rms: float
    kurtosis: float
    skewness: float
    zero_variance: bool = False

    @property
    def values(self):
        return (self.std, self.norm, self.max, self.rms, self.kurtosis, self.skewness)


def band_statistics(coeffs):
    """Population statistics of a coefficient sequence.

    ``max`` is the largest absolute value; kurtosis is the non-excess
    standardized fourth moment. A sequence without spread yields kurtosis
    and skewness of 0 and ``zero_variance=True``.
    """
    c = np.asarray(coeffs, dtype=float)
    if len(c) < 4:
        raise InsufficientData(f"need at least 4 coefficients, got {len(c)}")
    norm = float(np.sqrt(np.dot(c, c)))
    rms = norm / np.sqrt(len(c))
    peak = float(np.max(np.abs(c)))
    centered = c - c.mean()
    m2 = float(np.mean(centered ** 2))
    std = np.sqrt(m2)
    if std <= 1e-12 * max(peak, 1e-300) or m2 == 0.0:
        return BandStats(float(std), norm, peak, float(rms), 0.0, 0.0, True)
    skew = float(np.mean(centered ** 3) / m2 ** 1.5)
    kurt = float(np.mean(centered ** 4) / m2 ** 2)
    return BandStats(float(std), norm, peak, float(rms), kurt, skew)


def diff_statistics(coeffs):
    """(std, norm, rms) of the index-wise first difference."""
    c = np.asarray(coeffs, dtype=float)
    if len(c) < 2:
        raise InsufficientData(f"need at least 2 coefficients, got {len(c)}")
    d = np.diff(c)
    norm = float(np.sqrt(np.dot(d, d)))
    return float(np.std(d)), norm, norm / np.sqrt(len(d))


def log_scale(value, stat, sensor):
    """Natural log for gyroscope features and differentiated accelerometer features.

    Only non-negative statistics are logged; kurtosis and skewness pass
    through unchanged.
    """
    if stat not in _POSITIVE_STATS:
        return value
    if sensor == "gyr" or stat.startswith("d_"):
        return float(np.log(value + LOG_EPS))
    return value


def rest_fraction(sig, c):
    sig = np.asarray(sig, dtype=float)
    if sig.size == 0:
        raise InsufficientData("rest fraction of an empty signal")
    if c <= 0:
        raise InvalidSpec(f"rest threshold must be positive, got {c}")
    return float(np.count_nonzero(sig < c) / sig.size)


def filtered_norm(xyz, rate_hz, spec):
    """Band-pass each axis of an (n, 3) array, then take the Euclidean norm."""
    xyz = np.asarray(xyz, dtype=float)
    cols = [dsp.butterworth_bandpass(xyz[:, i], rate_hz, spec) for i in range(3)]
    return dsp.vector_norm(*cols)


def spectral_peak_features(xyz, rate_hz=60.0, cfg=None):
    """(peak PSD, mean PSD within +-halfwidth of the peak) of the 0.2-4 Hz norm signal."""
    cfg = cfg or FeatureConfig(rate_hz=rate_hz)
    sig = filtered_norm(xyz, rate_hz, cfg.spectral_band)
    est = dsp.psd(sig, rate_hz, cfg.psd_segment_s)
    if not np.any(est.power > 0):
        return 0.0, 0.0
    i = int(np.argmax(est.power))
    near = np.abs(est.freqs_hz - est.freqs_hz[i]) <= cfg.peak_halfwidth_hz + 1e-9
    return float(est.power[i]), float(np.mean(est.power[near]))


def _band_block(sig, sensor, cfg):
    dec = dsp.dwt_db3(sig, cfg.wavelet_depth, cfg.wavelet_mode)
    out = []
    for band in BANDS:
        coeffs = sig if band == "raw" else dec.details[int(band[5:])]
        values = band_statistics(coeffs).values + diff_statistics(coeffs)
        out.extend(log_scale(v, st, sensor) for v, st in zip(values, STATS))
    return out


def window_norms(acc, gyr, cfg):
    """Filtered norm signals (delta_acc, delta_gyr) of one minute of samples."""
    return (
        filtered_norm(acc, cfg.rate_hz, cfg.bandpass),
        filtered_norm(gyr, cfg.rate_hz, cfg.bandpass),
    )


def build_feature_vector(window, cfg=None, norm_cache=None):
    """Compute the 132-entry feature vector of a :class:`~pdmotor.ingest.Window`.

    ``norm_cache`` maps ``(subject_id, minute)`` to precomputed filtered
    norms so batch featurization filters each minute once.
    """
    cfg = cfg or FeatureConfig(rate_hz=window.rate_hz)
    if norm_cache is None:
        norm_cache = {}

    def norms_of(minute, acc, gyr):
        key = (window.subject_id, minute)
        if key not in norm_cache:
            norm_cache[key] = window_norms(acc, gyr, cfg)
        return norm_cache[key]

    own = norms_of(window.window_index, window.acc, window.gyr)
    context = [norms_of(k, a, g) for k, a, g in window.context] or [own]

    values = []
    for si, sensor in enumerate(SENSORS):
        values.extend(_band_block(own[si], sensor, cfg))
    for si, sensor in enumerate(SENSORS):
        long_sig = np.concatenate([c[si] for c in context])
        for c in cfg.thresholds(sensor):
            values.append(rest_fraction(own[si], c))
            values.append(rest_fraction(long_sig, c))
    for raw in (window.acc, window.gyr):
        values.extend(spectral_peak_features(raw, cfg.rate_hz, cfg))

    vec = np.asarray(values, dtype=float)
    bad = np.flatnonzero(~np.isfinite(vec))
    if len(bad):
        raise FeatureComputationFailed(int(bad[0]), feature_names(cfg)[bad[0]])
    return vec


def retained_indices(model_kind):
    if model_kind not in _REMOVED_LEVELS:
        raise InvalidSpec(f"unknown model kind {model_kind!r}")
    removed = set(_REMOVED_LEVELS[model_kind])
    return np.array([i for i, (_, band, _) in enumerate(feature_layout()) if band not in removed])


def reduce_features(features, model_kind):
    """Select the entries a model kind uses (132 for tremor, 96 otherwise).

    Works on a single vector or on a (n, 132) matrix.
    """
    features = np.asarray(features, dtype=float)
    if features.shape[-1] != N_FEATURES:
        raise LayoutMismatch(f"expected {N_FEATURES} features, got {features.shape[-1]}")
    return features[..., retained_indices(model_kind)]


# ---------------------------------------------------------------------------
# feature store


@dataclass
class FeatureTable:
    subject_ids: list
    window_indices: np.ndarray
    activities: list
    pd_classes: list
    severities: np.ndarray
    X: np.ndarray
    layout_version: str = LAYOUT_VERSION
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.subject_ids)

    def subset(self, mask):
        mask = np.asarray(mask)
        idx = np.flatnonzero(mask) if mask.dtype == bool else mask
        return FeatureTable(
            [self.subject_ids[i] for i in idx],
            self.window_indices[idx],
            [self.activities[i] for i in idx],
            [self.pd_classes[i] for i in idx],
            self.severities[idx],
            self.X[idx],
            self.layout_version,
        )

    @property
    def subjects(self):
        return sorted(set(self.subject_ids))


def featurize_windows(windows, cfg=None):
    """Build a :class:`FeatureTable` from labeled windows."""
    cfg = cfg or FeatureConfig()
    cache = {}
    rows = [build_feature_vector(w, cfg, cache) for w in windows]
    return FeatureTable(
        subject_ids=[w.subject_id for w in windows],
        window_indices=np.array([w.window_index for w in windows], dtype=int),
        activities=[w.annotation.activity for w in windows],
        pd_classes=[w.annotation.pd_class for w in windows],
        severities=np.array([w.annotation.severity for w in windows], dtype=int),
        X=np.vstack(rows) if rows else np.empty((0, N_FEATURES)),
    )


STORE_META = ("subject_id", "window_index", "activity", "pd_class", "severity")


def layout_sidecar(cfg=None):
    return {
        "layout_version": LAYOUT_VERSION,
        "n_features": N_FEATURES,
        "features": [
            {"index": i, "sensor": s, "band": b, "stat": st}
            for i, (s, b, st) in enumerate(feature_layout(cfg))
        ],
    }


def write_feature_store(table, path, cfg=None):
    """Write the CSV store plus a ``<stem>.layout.json`` sidecar."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(STORE_META) + [f"f_{i}" for i in range(N_FEATURES)])
        for i in range(len(table)):
            w.writerow(
                [table.subject_ids[i], int(table.window_indices[i]), table.activities[i],
                 table.pd_classes[i], int(table.severities[i])]
                + [repr(float(v)) for v in table.X[i]]
            )
    sidecar = path.with_suffix(".layout.json")
    sidecar.write_text(json.dumps(layout_sidecar(cfg), indent=1), encoding="utf-8")
    return path, sidecar


def read_feature_store(path):
    path = Path(path)
    sidecar = path.with_suffix(".layout.json")
    version = LAYOUT_VERSION
    if sidecar.exists():
        version = json.loads(sidecar.read_text(encoding="utf-8"))["layout_version"]
    if version != LAYOUT_VERSION:
        raise LayoutMismatch(f"feature store layout {version!r} != code layout {LAYOUT_VERSION!r}")
    with path.open(encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, rows = rows[0], rows[1:]
    if len(header) != len(STORE_META) + N_FEATURES:
        raise LayoutMismatch(f"{path}: expected {N_FEATURES} feature columns")
    return FeatureTable(
        subject_ids=[r[0] for r in rows],
        window_indices=np.array([int(r[1]) for r in rows], dtype=int),
        activities=[r[2] for r in rows],
        pd_classes=[r[3] for r in rows],
        severities=np.array([int(r[4]) for r in rows], dtype=int),
        X=np.array([[float(v) for v in r[5:]] for r in rows], dtype=float).reshape(-1, N_FEATURES),
        layout_version=version,
    )
