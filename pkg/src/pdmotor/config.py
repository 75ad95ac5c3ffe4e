"""Run configuration: one JSON file whose keys name every pipeline constant.

Unknown keys are rejected so that a typo never silently falls back to a
default. Command-line flags override file values.
"""
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import dsp, gp, hierarchy
from .errors import ConfigError
from .features import LAYOUT_VERSION, MODEL_KINDS, FeatureConfig
from .ingest import MIN_WINDOW_SAMPLES


def _default_theta0():
    return {k: list(hierarchy.PRESETS[k].as_array()) for k in MODEL_KINDS}


def _default_train():
    return asdict(hierarchy.DEFAULT_TRAIN_OPTIONS)


@dataclass
class RunConfig:
    data_dir: str = "data"
    output_dir: str = "out"
    # synthetic cohort
    seed: int = 0
    n_subjects: int = 10
    minutes: int = 120
    trait_spread: float = 1.0
    drop_rate: float = 0.0
    separated: bool = False  # minutes hold only their labeled state (no partial coverage or episodes)
    # preprocessing and features
    rate_hz: float = 60.0
    bandpass_lo_hz: float = 0.1
    bandpass_hi_hz: float = 20.0
    filter_order: int = 4
    spectral_lo_hz: float = 0.2
    spectral_hi_hz: float = 4.0
    min_window_samples: int = MIN_WINDOW_SAMPLES
    layout_version: str = LAYOUT_VERSION
    # model
    theta0: dict = field(default_factory=_default_theta0)
    train: dict = field(default_factory=_default_train)
    standardize: bool = True
    restart: bool = True
    gate_threshold: float = hierarchy.GATE_THRESHOLD
    decision_threshold: float = hierarchy.DECISION_THRESHOLD
    # evaluation
    loso: bool = True
    folds: int = None
    n_jobs: int = 1

    def validate(self):
        if self.layout_version != LAYOUT_VERSION:
            raise ConfigError(f"layout {self.layout_version!r} != supported {LAYOUT_VERSION!r}")
        if set(self.theta0) != set(MODEL_KINDS):
            raise ConfigError(f"theta0 needs exactly the kinds {MODEL_KINDS}, got {sorted(self.theta0)}")
        for kind, values in self.theta0.items():
            if len(values) != 3 or min(values) <= 0:
                raise ConfigError(f"theta0[{kind}] must be three positive numbers, got {values}")
        for name in ("gate_threshold", "decision_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < hierarchy.MAX_SEVERITY:
                raise ConfigError(f"{name} must lie in (0, {hierarchy.MAX_SEVERITY}), got {v}")
        if self.n_subjects < 2 or self.minutes < 5:
            raise ConfigError("need n_subjects >= 2 and minutes >= 5")
        if self.folds is not None and self.folds < 1:
            raise ConfigError(f"folds must be >= 1, got {self.folds}")
        if self.n_jobs < 1:
            raise ConfigError(f"n_jobs must be >= 1, got {self.n_jobs}")
        self.feature_config()
        self.train_options()
        return self

    def feature_config(self):
        cfg = FeatureConfig(
            rate_hz=self.rate_hz,
            bandpass=dsp.BandpassSpec(self.bandpass_lo_hz, self.bandpass_hi_hz, self.filter_order),
            spectral_band=dsp.BandpassSpec(self.spectral_lo_hz, self.spectral_hi_hz, self.filter_order),
        )
        cfg.bandpass.validate(self.rate_hz)
        cfg.spectral_band.validate(self.rate_hz)
        return cfg

    def train_options(self):
        try:
            return gp.TrainOptions(**self.train)
        except TypeError as exc:
            raise ConfigError(f"bad train options: {exc}") from exc

    def theta0_hyperparameters(self):
        return {k: gp.Hyperparameters(*map(float, v)) for k, v in self.theta0.items()}

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        base = cls()
        if "train" in d:
            d = {**d, "train": {**base.train, **d["train"]}}
        if "theta0" in d:
            d = {**d, "theta0": {**base.theta0, **d["theta0"]}}
        return replace(base, **d).validate()

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def with_overrides(self, **kw):
        """Copy with the non-``None`` keyword values applied."""
        return replace(self, **{k: v for k, v in kw.items() if v is not None}).validate()

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
