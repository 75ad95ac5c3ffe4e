"""Three-layer symptom model: tremor gate, parallel BK/DK regressors, decision.

Layer 1 regresses tremor severity on the full 132-d feature vector. If its
mean reaches ``gate_threshold`` the window is tremor. Otherwise layer 2
regresses bradykinesia and dyskinesia severity on their 96-d reductions,
and layer 3 reports balanced when both stay below ``decision_threshold``,
else the larger of the two.

Each layer standardizes its inputs with statistics of its own training
subset (z-score divided by sqrt(d), so a typical pairwise distance is of
order one) and stores them alongside the GP.
"""
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from . import gp
from .errors import (
    ConfigError,
    DimensionMismatch,
    InsufficientTrainingData,
    LayoutMismatch,
    NonFiniteValue,
)
from .features import LAYOUT_VERSION, MODEL_KINDS, N_FEATURES, reduce_features, retained_indices

log = logging.getLogger(__name__)

PRESETS = {
    "tremor": gp.Hyperparameters(96.83, 0.23, 0.50),
    "bradykinesia": gp.Hyperparameters(96302550.0, 826659.0, 0.65),
    "dyskinesia": gp.Hyperparameters(128741.0, 2.26, 0.83),
}
GATE_THRESHOLD = 0.5
DECISION_THRESHOLD = 0.5
MAX_SEVERITY = 4
BUNDLE_FORMAT = "pdmotor-bundle-v1"

# the noise floor keeps the regressors from interpolating integer ratings exactly
DEFAULT_TRAIN_OPTIONS = gp.TrainOptions(max_iters=150, min_hyperparam=0.1, subsample_cap=4000)


def input_dim(kind):
    return len(retained_indices(kind))


# ---------------------------------------------------------------------------
# targets and subsets


@dataclass(frozen=True)
class SeverityTargets:
    model_kind: str
    index: np.ndarray  # positions of the windows the target is defined on
    y: np.ndarray


def _check_kind(kind):
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def _labels(labels):
    """Accept Annotations, FeatureTable-like pairs or (class, severity) tuples."""
    out = []
    for lab in labels:
        if hasattr(lab, "pd_class"):
            out.append((lab.pd_class, int(lab.severity)))
        else:
            out.append((lab[0], int(lab[1])))
    return out


def build_targets(labels, model_kind):
    """Severity targets of one model kind.

    Tremor targets cover every window; bradykinesia and dyskinesia targets
    cover the non-tremor windows only. A window's target is its severity
    when its class matches the kind and 0 otherwise.
    """
    _check_kind(model_kind)
    pairs = _labels(labels)
    index = [i for i, (c, _) in enumerate(pairs) if model_kind == "tremor" or c != "tremor"]
    y = [pairs[i][1] if pairs[i][0] == model_kind else 0 for i in index]
    return SeverityTargets(model_kind, np.array(index, dtype=int), np.array(y, dtype=float))


def select_training_subset(labels, model_kind):
    """Positions of the balanced windows plus the windows of ``model_kind``."""
    _check_kind(model_kind)
    pairs = _labels(labels)
    index = np.array([i for i, (c, _) in enumerate(pairs) if c in ("balanced", model_kind)], dtype=int)
    if len(index) < 2:
        raise InsufficientTrainingData(
            f"{model_kind}: training subset has {len(index)} window(s), need at least 2"
        )
    return index


# ---------------------------------------------------------------------------
# per-layer models


@dataclass(frozen=True)
class InputScaler:
    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X, standardize=True):
        X = np.asarray(X, dtype=float)
        d = X.shape[1]
        if not standardize:
            return cls(np.zeros(d), np.ones(d))
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        return cls(X.mean(axis=0), sd * np.sqrt(d))

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.center) / self.scale

    def to_dict(self):
        return {"center": gp._encode(self.center), "scale": gp._encode(self.scale)}

    @classmethod
    def from_dict(cls, d):
        return cls(gp._decode(d["center"]), gp._decode(d["scale"]))


@dataclass
class LayerModel:
    kind: str
    gp_model: gp.GpModel
    scaler: InputScaler

    @property
    def d(self):
        return self.gp_model.d

    def predict_mean(self, X_reduced):
        return gp.predict_batch(self.gp_model, self.scaler.transform(X_reduced), return_var=False)


def heuristic_theta(Z, y, seed=0):
    """Data-scaled starting point: amplitude std(y), median distance, quarter of var(y)."""
    y = np.asarray(y, dtype=float)
    rows = gp.subsample(len(Z), 500, seed)
    dist = pdist(Z[rows]) if len(rows) > 1 else np.array([1.0])
    dist = dist[dist > 0]
    ell = float(np.median(dist)) if len(dist) else 1.0
    spread = float(np.std(y)) or 1.0
    return gp.Hyperparameters(spread, ell, max(0.25 * spread ** 2, 1e-3))


def train_layer(X_reduced, y, kind, theta0=None, opts=None, standardize=True, restart=True, meta=None):
    """Fit one layer from ``theta0`` (and a data-scaled restart); keep the lower NLML."""
    _check_kind(kind)
    theta0 = theta0 or PRESETS[kind]
    opts = opts or DEFAULT_TRAIN_OPTIONS
    scaler = InputScaler.fit(X_reduced, standardize)
    Z = scaler.transform(X_reduced)
    starts = [("theta0", theta0)]
    if restart:
        starts.append(("heuristic", heuristic_theta(Z, y, opts.seed)))
    fits = []
    for name, start in starts:
        try:
            model = gp.train(Z, y, start, opts, meta={"start": name})
        except gp.NumericalBreakdown as exc:
            log.warning("%s: start %s failed: %s", kind, name, exc)
            continue
        fits.append(model)
    if not fits:
        raise gp.NumericalBreakdown(f"{kind}: every training start broke down")
    best = min(fits, key=lambda m: m.meta["nlml"])
    info = dict(meta or {})
    info.update(best.meta)
    info.update({
        "kind": kind,
        "standardize": bool(standardize),
        "starts": {m.meta["start"]: {"nlml": m.meta["nlml"], "theta": m.theta.as_array().tolist()} for m in fits},
    })
    return LayerModel(kind, replace(best, meta=info), scaler)


# ---------------------------------------------------------------------------
# decision layers


@dataclass(frozen=True)
class Prediction:
    pd_class: str
    severity: int
    y_tm: float
    y_bk: float = None
    y_dk: float = None

    def __post_init__(self):
        if (self.pd_class == "balanced") != (self.severity == 0):
            raise ValueError(f"inconsistent prediction {self.pd_class}/{self.severity}")


def round_severity(value):
    """Nearest integer (ties away from zero) clamped to 0..4."""
    value = float(value)
    if not np.isfinite(value):
        raise NonFiniteValue(f"cannot round non-finite prediction {value}")
    r = np.sign(value) * np.floor(abs(value) + 0.5)
    return int(min(MAX_SEVERITY, max(0, r)))


def decide_layer2(y_bk, y_dk, decision_threshold=DECISION_THRESHOLD):
    """Layer 3 on layer-2 outputs; an exact tie goes to dyskinesia."""
    if y_bk < decision_threshold and y_dk < decision_threshold:
        return "balanced", 0
    if y_dk >= y_bk:
        return "dyskinesia", max(1, round_severity(y_dk))
    return "bradykinesia", max(1, round_severity(y_bk))


def decide(y_tm, y_bk, y_dk, gate_threshold=GATE_THRESHOLD, decision_threshold=DECISION_THRESHOLD):
    """Full decision on three layer outputs. ``y_bk``/``y_dk`` are ignored when the gate fires."""
    if y_tm >= gate_threshold:
        return Prediction("tremor", max(1, round_severity(y_tm)), float(y_tm))
    cls, sev = decide_layer2(y_bk, y_dk, decision_threshold)
    return Prediction(cls, sev, float(y_tm), float(y_bk), float(y_dk))


@dataclass
class MultiLayerModel:
    tremor: LayerModel
    bradykinesia: LayerModel
    dyskinesia: LayerModel
    gate_threshold: float = GATE_THRESHOLD
    decision_threshold: float = DECISION_THRESHOLD
    layout_version: str = LAYOUT_VERSION
    meta: dict = field(default_factory=dict)
    counters: Counter = field(default_factory=Counter, repr=False, compare=False)

    def __post_init__(self):
        for name in ("gate_threshold", "decision_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < MAX_SEVERITY:
                raise ConfigError(f"{name} must lie in (0, 4), got {v}")
        for kind in MODEL_KINDS:
            layer = self.layer(kind)
            if layer.d != input_dim(kind):
                raise DimensionMismatch(f"{kind} layer has {layer.d} inputs, expected {input_dim(kind)}")

    def layer(self, kind):
        _check_kind(kind)
        return getattr(self, kind)

    @property
    def layers(self):
        return {k: self.layer(k) for k in MODEL_KINDS}


def _feature_matrix(model, features):
    X = np.asarray(features, dtype=float)
    X = X[None, :] if X.ndim == 1 else X
    if X.shape[1] != N_FEATURES:
        raise DimensionMismatch(
            f"expected {N_FEATURES} features (layout {model.layout_version}), got {X.shape[1]}"
        )
    return X


def layer_outputs(model, features):
    """Raw means of all three layers on every row (no gating)."""
    X = _feature_matrix(model, features)
    return tuple(model.layer(k).predict_mean(reduce_features(X, k)) for k in MODEL_KINDS)


def predict_batch(model, features):
    """Gated predictions; layer 2 runs only on rows the tremor gate let through."""
    X = _feature_matrix(model, features)
    y_tm = model.tremor.predict_mean(reduce_features(X, "tremor"))
    open_rows = np.flatnonzero(y_tm < model.gate_threshold)
    y_bk = np.full(len(X), np.nan)
    y_dk = np.full(len(X), np.nan)
    if len(open_rows):
        y_bk[open_rows] = model.bradykinesia.predict_mean(reduce_features(X[open_rows], "bradykinesia"))
        y_dk[open_rows] = model.dyskinesia.predict_mean(reduce_features(X[open_rows], "dyskinesia"))
    model.counters["windows"] += len(X)
    model.counters["gate_fired"] += len(X) - len(open_rows)
    model.counters["layer2_evaluated"] += len(open_rows)
    out = []
    for i in range(len(X)):
        if np.isnan(y_bk[i]):
            out.append(decide(y_tm[i], None, None, model.gate_threshold, model.decision_threshold))
        else:
            out.append(decide(y_tm[i], y_bk[i], y_dk[i], model.gate_threshold, model.decision_threshold))
    return out


def predict_window(model, features):
    return predict_batch(model, np.asarray(features, dtype=float).ravel())[0]


# ---------------------------------------------------------------------------
# training


def _table_labels(table):
    return list(zip(table.pd_classes, table.severities))


def train_multilayer(table, theta0=None, opts=None, standardize=True, restart=True,
                     gate_threshold=GATE_THRESHOLD, decision_threshold=DECISION_THRESHOLD, meta=None):
    """Train the three layers on a :class:`~pdmotor.features.FeatureTable`.

    Each layer sees its own subset: balanced windows plus windows of its
    class. ``theta0`` maps kind to starting hyperparameters and defaults to
    :data:`PRESETS`.
    """
    if table.layout_version != LAYOUT_VERSION:
        raise LayoutMismatch(f"table layout {table.layout_version!r} != {LAYOUT_VERSION!r}")
    classes = set(table.pd_classes)
    if len(classes) < 2:
        raise InsufficientTrainingData(f"training windows span a single class {sorted(classes)}")
    theta0 = {**PRESETS, **(theta0 or {})}
    labels = _table_labels(table)
    layers = {}
    for kind in MODEL_KINDS:
        rows = select_training_subset(labels, kind)
        targets = build_targets([labels[i] for i in rows], kind)
        X = reduce_features(table.X[rows][targets.index], kind)
        layers[kind] = train_layer(
            X, targets.y, kind, theta0[kind], opts, standardize, restart,
            meta={**(meta or {}), "n_subset": int(len(rows))},
        )
        log.info("trained %s layer: theta=%s", kind, layers[kind].gp_model.theta)
    return MultiLayerModel(
        layers["tremor"], layers["bradykinesia"], layers["dyskinesia"],
        gate_threshold, decision_threshold, LAYOUT_VERSION,
        meta={**(meta or {}), "theta0": {k: v.as_array().tolist() for k, v in theta0.items()}},
    )


# ---------------------------------------------------------------------------
# bundle


def save_bundle(model, directory):
    """Write ``manifest.json`` plus one JSON file per layer into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layers = {}
    for kind, layer in model.layers.items():
        name = f"{kind}.json"
        gp.save_model(
            layer.gp_model, directory / name,
            kind=kind, layout_version=model.layout_version, scaler=layer.scaler.to_dict(),
        )
        layers[kind] = {"file": name, "input_dim": layer.d}
    manifest = {
        "format": BUNDLE_FORMAT,
        "layout_version": model.layout_version,
        "gate_threshold": model.gate_threshold,
        "decision_threshold": model.decision_threshold,
        "layers": layers,
        "meta": model.meta,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return directory / "manifest.json"


def load_bundle(directory, expected_layout=LAYOUT_VERSION):
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.exists():
        raise ConfigError(f"no model bundle manifest at {path}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format") != BUNDLE_FORMAT:
        raise ConfigError(f"unsupported bundle format {manifest.get('format')!r}")
    if manifest["layout_version"] != expected_layout:
        raise LayoutMismatch(
            f"bundle layout {manifest['layout_version']!r} != feature layout {expected_layout!r}"
        )
    layers = {}
    for kind in MODEL_KINDS:
        d = json.loads((directory / manifest["layers"][kind]["file"]).read_text(encoding="utf-8"))
        if d.get("kind") != kind or d.get("layout_version") != manifest["layout_version"]:
            raise LayoutMismatch(f"{kind} layer file does not match the bundle manifest")
        layers[kind] = LayerModel(kind, gp.model_from_dict(d), InputScaler.from_dict(d["scaler"]))
    return MultiLayerModel(
        layers["tremor"], layers["bradykinesia"], layers["dyskinesia"],
        float(manifest["gate_threshold"]), float(manifest["decision_threshold"]),
        manifest["layout_version"], manifest.get("meta", {}),
    )
