"""Seeded synthetic cohort of labeled wrist IMU recordings.

Every minute is composed of an activity base motion plus a class overlay:

* sitting / standing: broadband 1-10 Hz motion; lying: the same, nearly
  quiescent; walking: a ~2.5 Hz gait fundamental with harmonics; other:
  louder broadband motion.
* bradykinesia attenuates the base motion and inserts rest intervals,
  dyskinesia adds 1-4 Hz band noise, tremor adds a narrowband 4-6 Hz
  oscillation (about 7 Hz while lying).

Relative 1-4 Hz accelerometer power per class severity follows the
``PSD_LEVELS`` table for sitting subjects. Gyroscope channels are the time
derivative of a latent orientation that tracks the acceleration motion;
dyskinetic movement couples into it more strongly, and tremor adds a
rotational oscillation at the tremor frequency.
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .errors import DataError, InvalidLabel
from .ingest import (
    ACC_RANGE_G,
    ACTIVITIES,
    GYR_RANGE_DPS,
    Annotation,
    AnnotationSequence,
    ImuRecording,
    validate_label,
    write_annotations_csv,
    write_imu_csv,
)

RATE_HZ = 60.0
SAMPLES_PER_MINUTE = 3600

# average 1-4 Hz accelerometer PSD per class severity (relative units)
PSD_LEVELS = {
    ("balanced", 0): 6.461217535556324,
    ("bradykinesia", 1): 4.266250140432615,
    ("bradykinesia", 2): 3.958840302585484,
    ("bradykinesia", 3): 3.073362068250275,
    ("bradykinesia", 4): 0.0631,
    ("dyskinesia", 1): 11.463456247185030,
    ("dyskinesia", 2): 21.792863393697388,
    ("dyskinesia", 3): 23.004734240549325,
    ("dyskinesia", 4): 28.137935307698860,
}
PSD_UNIT = 3e-4  # G^2/Hz per relative unit, summed over the three axes
BK_REST_FRACTION = {1: 0.05, 2: 0.10, 3: 0.20, 4: 0.85}
BK_REST_RUNS = (1, 3)  # rest intervals per bradykinetic block, inclusive range
TREMOR_AMPLITUDE_G = {1: 0.16, 2: 0.27, 3: 0.46, 4: 0.79}
ORIENTATION_DEG_PER_G = 1.0
# rest tremor is mostly pronation/supination: peak angular rate per severity
TREMOR_GYRO_DPS = {1: 20.0, 2: 35.0, 3: 60.0, 4: 100.0}
DYSKINESIA_DEG_PER_G = 4.0
DYSKINESIA_BURSTINESS = 1.0
DYSKINESIA_ENVELOPE_HZ = (0.05, 0.5)

ACTIVITY_GAIN = {"sitting": 1.0, "standing": 1.1, "lying": 0.15, "walking": 0.6, "other": 1.25}

DEFAULT_CLASS_MIX = {"balanced": 0.3595, "bradykinesia": 0.3870, "dyskinesia": 0.2113, "tremor": 0.0422}
DEFAULT_SEVERITY_MIX = {
    "bradykinesia": (0.25, 0.25, 0.25, 0.25),
    "dyskinesia": (0.25, 0.25, 0.25, 0.25),
    "tremor": (0.25, 0.25, 0.25, 0.25),
}
DEFAULT_ACTIVITY_MIX = {"sitting": 0.4158, "walking": 0.12, "standing": 0.12, "lying": 0.14, "other": 0.2042}


@dataclass(frozen=True)
class SubjectTraits:
    """Per-subject motion idiosyncrasies (all multiplicative gains)."""

    base_gain: float = 1.0
    tremor_hz: float = 5.0
    tremor_gain: float = 1.0
    dyskinesia_gain: float = 1.0
    gait_hz: float = 2.5
    minute_jitter: float = 0.03

    @classmethod
    def draw(cls, rng, spread=1.0):
        return cls(
            base_gain=float(np.exp(rng.normal(0.0, 0.15 * spread))),
            tremor_hz=float(rng.uniform(4.3, 5.7)),
            tremor_gain=float(np.exp(rng.normal(0.0, 0.10 * spread))),
            dyskinesia_gain=float(np.exp(rng.normal(0.0, 0.10 * spread))),
            gait_hz=float(rng.uniform(2.3, 2.7)),
        )


@dataclass
class SubjectProfile:
    subject_id: str
    minutes: int = 120
    class_mix: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_MIX))
    severity_mix: dict = field(default_factory=lambda: dict(DEFAULT_SEVERITY_MIX))
    activity_mix: dict = field(default_factory=lambda: dict(DEFAULT_ACTIVITY_MIX))
    seed: int = 0
    persistence: float = 0.0
    drop_rate: float = 0.0
    min_coverage: float = 0.5  # labeled class occupies a fraction in [min_coverage, 1]
    episode_rate: float = 0.25  # chance a balanced minute holds a minor severity-1 episode
    max_episode: float = 0.45

    def __post_init__(self):
        if not self.subject_id:
            raise DataError("subject_id must be non-empty")
        if self.minutes < 5:
            raise DataError(f"{self.subject_id}: need at least 5 minutes, got {self.minutes}")
        for name, mix in (("class_mix", self.class_mix), ("activity_mix", self.activity_mix)):
            if abs(sum(mix.values()) - 1.0) > 1e-9 or min(mix.values()) < 0:
                raise DataError(f"{self.subject_id}: {name} must be a probability vector")
        for cls, mix in self.severity_mix.items():
            if len(mix) != 4 or abs(sum(mix) - 1.0) > 1e-9:
                raise DataError(f"{self.subject_id}: severity_mix[{cls}] must have 4 probabilities")
        unknown = set(self.activity_mix) - set(ACTIVITIES)
        if unknown:
            raise InvalidLabel(f"unknown activities {sorted(unknown)}")
        if not 0.0 <= self.persistence < 1.0 or not 0.0 <= self.drop_rate < 1.0:
            raise DataError("persistence and drop_rate must lie in [0, 1)")
        if not 0.5 <= self.min_coverage <= 1.0:
            raise DataError("min_coverage must lie in [0.5, 1] (the label is the predominant state)")
        if not 0.0 <= self.episode_rate <= 1.0 or not 0.0 <= self.max_episode < 0.5:
            raise DataError("episode_rate must lie in [0, 1] and max_episode in [0, 0.5)")


def band_noise(n, rate_hz, lo_hz, hi_hz, density, rng, axes=3):
    """Gaussian noise with flat one-sided PSD ``density`` inside [lo_hz, hi_hz]."""
    white = rng.standard_normal((n, axes))
    spec = np.fft.rfft(white, axis=0)
    f = np.fft.rfftfreq(n, 1.0 / rate_hz)
    spec[(f < lo_hz) | (f > hi_hz)] = 0.0
    # unit-variance white noise has one-sided density 2 / fs
    return np.fft.irfft(spec, n=n, axis=0) * np.sqrt(density * rate_hz / 2.0)


def _unit(rng):
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def _rest_mask(n, fraction, rng):
    """Boolean mask with ``round(fraction * n)`` samples in ``BK_REST_RUNS`` contiguous rest runs."""
    total = int(round(fraction * n))
    mask = np.zeros(n, dtype=bool)
    if total == 0:
        return mask
    pieces = int(rng.integers(BK_REST_RUNS[0], BK_REST_RUNS[1] + 1))
    cuts = np.sort(rng.choice(np.arange(1, total), size=min(pieces - 1, total - 1), replace=False))
    lengths = np.diff(np.concatenate([[0], cuts, [total]]))
    free = n - total
    gaps = np.diff(np.concatenate([[0], np.sort(rng.integers(0, free + 1, len(lengths))), [free]]))
    pos = 0
    for gap, length in zip(gaps[:-1], lengths):
        pos += gap
        mask[pos:pos + length] = True
        pos += length
    return mask


def _burst_envelope(n, rng, sigma=DYSKINESIA_BURSTINESS):
    """Slow log-normal amplitude envelope with unit mean square (irregular bursts)."""
    slow = band_noise(n, RATE_HZ, *DYSKINESIA_ENVELOPE_HZ, 1.0, rng, axes=1)[:, 0]
    env = np.exp(sigma * slow / slow.std())
    return env / np.sqrt(np.mean(env ** 2))


def _base_motion(activity, n, rng, traits):
    density = PSD_LEVELS[("balanced", 0)] * PSD_UNIT / 3.0
    if activity == "walking":
        t = np.arange(n) / RATE_HZ
        gait = traits.gait_hz * (1.0 + 0.01 * rng.standard_normal())
        phase = 2 * np.pi * gait * t + 0.2 * np.cumsum(rng.standard_normal(n)) / np.sqrt(RATE_HZ)
        swing = 0.40 * np.sin(phase) + 0.15 * np.sin(2 * phase + 0.5) + 0.06 * np.sin(3 * phase + 1.1)
        return ACTIVITY_GAIN[activity] * (
            np.outer(swing, _unit(rng)) + band_noise(n, RATE_HZ, 1.0, 10.0, density, rng)
        )
    if activity == "other":
        return ACTIVITY_GAIN[activity] * band_noise(n, RATE_HZ, 0.5, 12.0, density, rng)
    return ACTIVITY_GAIN[activity] * band_noise(n, RATE_HZ, 1.0, 10.0, density, rng)


def _block(n, fraction, rng, ramp=30):
    """Contiguous 0/1 gate covering ``fraction`` of ``n`` samples, with short cosine ramps."""
    length = int(round(fraction * n))
    gate = np.zeros(n)
    if length == 0:
        return gate
    start = int(rng.integers(0, n - length + 1))
    gate[start:start + length] = 1.0
    r = min(ramp, length // 2)
    if r > 0 and length < n:
        edge = 0.5 - 0.5 * np.cos(np.pi * (np.arange(r) + 0.5) / r)
        if start > 0:
            gate[start:start + r] = edge
        if start + length < n:
            gate[start + length - r:start + length] = edge[::-1]
    return gate


def min_bradykinesia_coverage(severity):
    """Smallest minute fraction at which a bradykinesia block can still hit its PSD level."""
    level = PSD_LEVELS[("bradykinesia", severity)] / PSD_LEVELS[("balanced", 0)]
    return 1.0 - 0.9 * level


def _overlay(pd_class, severity, activity, coverage, rng, traits, motion, orientation, spin, scale):
    n = len(motion)
    if pd_class == "bradykinesia":
        coverage = max(coverage, min_bradykinesia_coverage(severity))
        rest = BK_REST_FRACTION[severity]
        level = PSD_LEVELS[("bradykinesia", severity)] / PSD_LEVELS[("balanced", 0)]
        # (1 - f) * 1 + f * gain**2 * (1 - rest) = level
        gain = np.sqrt((level - (1.0 - coverage)) / (coverage * (1.0 - rest)))
        block = _block(n, coverage, rng, ramp=0) > 0
        still = np.zeros(n, dtype=bool)
        still[block] = _rest_mask(int(block.sum()), rest, rng)
        motion[block] *= gain
        orientation[block] *= gain
        motion[still] = 0.0
        orientation[still] = 0.0
        return
    gate = _block(n, coverage, rng)[:, None]
    if pd_class == "dyskinesia":
        extra = PSD_LEVELS[("dyskinesia", severity)] - PSD_LEVELS[("balanced", 0)]
        density = extra * PSD_UNIT / 3.0 * traits.dyskinesia_gain ** 2
        choreic = band_noise(n, RATE_HZ, 1.0, 4.0, density, rng) * scale
        choreic *= _burst_envelope(n, rng)[:, None] * gate
        motion += choreic
        orientation += DYSKINESIA_DEG_PER_G * choreic @ _random_rotation(rng)
    elif pd_class == "tremor":
        t = np.arange(n) / RATE_HZ
        f0 = 7.0 + 0.3 * (traits.tremor_hz - 5.0) if activity == "lying" else traits.tremor_hz
        drift = 0.3 * np.cumsum(rng.standard_normal(n)) / RATE_HZ
        envelope = 1.0 + 0.1 * np.sin(2 * np.pi * rng.uniform(0.05, 0.2) * t + rng.uniform(0, 2 * np.pi))
        amp = TREMOR_AMPLITUDE_G[severity] * traits.tremor_gain * envelope
        # elliptical oscillation: major axis plus a weaker quadrature component
        u, v = _unit(rng), _unit(rng)
        phase = 2 * np.pi * f0 * t + 2 * np.pi * drift + rng.uniform(0, 2 * np.pi)
        osc = (amp * np.sin(phase))[:, None] * u + (0.3 * amp * np.cos(phase))[:, None] * v
        motion += osc * gate
        rate = TREMOR_GYRO_DPS[severity] * traits.tremor_gain * envelope
        spin += (rate * np.cos(phase))[:, None] * _unit(rng) * gate


def synth_minute(pd_class, severity, activity, seed, traits=None, coverage=1.0, episode=None):
    """One minute (3600 samples at 60 Hz) of 6-axis data.

    ``coverage`` is the fraction of the minute occupied by the labeled PD
    class (the rest is balanced motion). ``episode`` optionally adds a
    minor ``(pd_class, severity, fraction)`` block to a balanced minute, as
    happens when the annotation reports only the predominant state.
    Returns ``(acc, gyr)`` arrays of shape (3600, 3) in G and dps.
    """
    validate_label(0, pd_class, severity, activity)
    if not 0.0 < coverage <= 1.0:
        raise DataError(f"coverage must lie in (0, 1], got {coverage}")
    traits = traits or SubjectTraits()
    rng = np.random.default_rng(seed)
    n = SAMPLES_PER_MINUTE
    jitter = float(np.exp(traits.minute_jitter * rng.standard_normal()))
    scale = traits.base_gain * jitter
    motion = _base_motion(activity, n, rng, traits) * scale
    # latent orientation (degrees) and extra angular rate (dps) from class overlays
    orientation = ORIENTATION_DEG_PER_G * motion @ _random_rotation(rng)
    spin = np.zeros((n, 3))

    if pd_class != "balanced":
        _overlay(pd_class, severity, activity, coverage, rng, traits, motion, orientation, spin, scale)
    elif episode is not None:
        ep_class, ep_severity, fraction = episode
        validate_label(0, ep_class, ep_severity, activity)
        if fraction > 0:
            _overlay(ep_class, ep_severity, activity, fraction, rng, traits, motion, orientation, spin, scale)

    gravity = _unit(rng) * 1.0
    acc = motion + gravity + 0.003 * rng.standard_normal((n, 3))
    gyr = np.gradient(orientation, 1.0 / RATE_HZ, axis=0) + spin + 0.05 * rng.standard_normal((n, 3))
    return np.clip(acc, -ACC_RANGE_G, ACC_RANGE_G), np.clip(gyr, -GYR_RANGE_DPS, GYR_RANGE_DPS)


def _random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _draw(rng, mix):
    keys = list(mix)
    return keys[int(rng.choice(len(keys), p=[mix[k] for k in keys]))]


def draw_labels(profile, rng):
    """Per-minute (class, severity, activity) labels for one subject."""
    labels = []
    state = None
    for _ in range(profile.minutes):
        if state is None or rng.random() >= profile.persistence:
            cls = _draw(rng, profile.class_mix)
            sev = 0 if cls == "balanced" else 1 + int(rng.choice(4, p=profile.severity_mix[cls]))
            state = (cls, sev, _draw(rng, profile.activity_mix))
        labels.append(state)
    return labels


def synth_subject(profile, trait_spread=1.0):
    rng = np.random.default_rng(profile.seed)
    traits = SubjectTraits.draw(rng, trait_spread)
    labels = draw_labels(profile, rng)
    minor = {c: p for c, p in profile.class_mix.items() if c != "balanced" and p > 0}
    accs, gyrs, annotations = [], [], []
    for k, (cls, sev, act) in enumerate(labels):
        coverage, episode = 1.0, None
        if cls != "balanced":
            coverage = float(rng.uniform(profile.min_coverage, 1.0))
        elif minor and rng.random() < profile.episode_rate:
            total = sum(minor.values())
            ep_class = _draw(rng, {c: p / total for c, p in minor.items()})
            episode = (ep_class, 1, float(rng.uniform(0.0, profile.max_episode)))
        minute_seed = np.random.SeedSequence([profile.seed, k])
        acc, gyr = synth_minute(cls, sev, act, minute_seed, traits, coverage, episode)
        accs.append(acc)
        gyrs.append(gyr)
        annotations.append(Annotation(k, cls, sev, act))
    acc = np.vstack(accs)
    gyr = np.vstack(gyrs)
    t = np.arange(len(acc)) / RATE_HZ
    if profile.drop_rate > 0:
        keep = rng.random(len(t)) >= profile.drop_rate
        t, acc, gyr = t[keep], acc[keep], gyr[keep]
    rec = ImuRecording(profile.subject_id, t, acc, gyr, nominal_rate_hz=RATE_HZ)
    return rec, AnnotationSequence(profile.subject_id, annotations)


def synth_cohort(profiles, trait_spread=1.0):
    """Generate ``(ImuRecording, AnnotationSequence)`` pairs, one per profile."""
    if len(profiles) < 2:
        raise DataError("a cohort needs at least 2 subject profiles")
    ids = [p.subject_id for p in profiles]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate subject ids in {ids}")
    return [synth_subject(p, trait_spread) for p in profiles]


def default_profiles(n_subjects=10, minutes=120, seed=0, **overrides):
    return [
        SubjectProfile(subject_id=f"S{i + 1:02d}", minutes=minutes, seed=seed * 1000 + i, **overrides)
        for i in range(n_subjects)
    ]


def separated_profiles(n_subjects=10, minutes=120, seed=0, **overrides):
    """Profiles whose minutes are purely their labeled state: full coverage, no minor episodes."""
    return default_profiles(n_subjects, minutes, seed, **{"min_coverage": 1.0, "episode_rate": 0.0, **overrides})


def accelerometer_psd(acc, rate_hz=RATE_HZ, segment_s=4.0):
    """Sum of per-axis Welch PSDs of raw acceleration (gravity removed by detrending)."""
    ests = [dsp.psd(acc[:, i], rate_hz, segment_s) for i in range(3)]
    return dsp.PsdEstimate(ests[0].freqs_hz, sum(e.power for e in ests))


def band_mean_power(est, lo_hz=1.0, hi_hz=4.0):
    sel = (est.freqs_hz >= lo_hz) & (est.freqs_hz <= hi_hz)
    return float(np.mean(est.power[sel]))


def write_cohort(cohort, profiles, out_dir, trait_spread=1.0):
    """Write ``<id>_imu.csv`` / ``<id>_annotations.csv`` per subject and ``manifest.json``."""
    out_dir = Path(out_dir)
    files = []
    for rec, ann in cohort:
        imu = out_dir / f"{rec.subject_id}_imu.csv"
        lab = out_dir / f"{rec.subject_id}_annotations.csv"
        write_imu_csv(rec, imu)
        write_annotations_csv(ann, lab)
        files.append({"subject_id": rec.subject_id, "imu": imu.name, "annotations": lab.name})
    manifest = {
        "generator": "pdmotor.synth",
        "rate_hz": RATE_HZ,
        "trait_spread": trait_spread,
        "profiles": [asdict(p) for p in profiles],
        "files": files,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return out_dir / "manifest.json"
