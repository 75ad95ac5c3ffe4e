"""Leave-one-subject-out evaluation of the three-layer model.

Accuracies are percentages. Every fold is scored on its own first (which
normalizes for how much data each test subject contributes) and the
report holds the unweighted mean and standard deviation across folds.
"""
import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hierarchy
from .errors import InsufficientTrainingData, PdMotorError
from .features import MODEL_KINDS
from .ingest import ACTIVITIES, PD_CLASSES

log = logging.getLogger(__name__)

REPORT_ACTIVITIES = ("other", "sitting", "walking", "standing", "lying", "all")
PRESENCE_THRESHOLD = 0.5
DUMP_HEADER = (
    "subject_id", "window_index", "activity", "label_class", "label_severity",
    "y_tm", "y_bk", "y_dk", "pred_class", "pred_severity",
)


@dataclass(frozen=True)
class Fold:
    test_subject: str
    train_subjects: tuple


def loso_folds(subjects):
    subjects = sorted(set(subjects))
    if len(subjects) < 2:
        raise InsufficientTrainingData(f"leave-one-subject-out needs >= 2 subjects, got {subjects}")
    return [Fold(s, tuple(o for o in subjects if o != s)) for s in subjects]


# ---------------------------------------------------------------------------
# metrics on aligned arrays


def _cells(activities):
    activities = np.asarray(activities)
    cells = {a: activities == a for a in ACTIVITIES}
    cells["all"] = np.ones(len(activities), dtype=bool)
    return cells


def _accuracy_pair(hit, near):
    if len(hit) == 0:
        return None
    return 100.0 * float(np.mean(hit)), 100.0 * float(np.mean(near))


def layer_accuracy(pred_severity, label_severity, activities):
    """Per-activity (accuracy, ±1 accuracy) of one layer on its own severity scale.

    Cells without windows are ``None`` (absent, not zero).
    """
    pred = np.asarray(pred_severity, dtype=int)
    lab = np.asarray(label_severity, dtype=int)
    diff = np.abs(pred - lab)
    return {a: _accuracy_pair(diff[m] == 0, diff[m] <= 1) for a, m in _cells(activities).items()}


def total_accuracy(pred_class, pred_severity, label_class, label_severity, activities):
    """Contingent accuracy per labeled class and activity.

    A hit needs the right class and the exact severity; the ±1 variant
    needs the right class and a severity at most one level off.
    """
    pc = np.asarray(pred_class)
    lc = np.asarray(label_class)
    diff = np.abs(np.asarray(pred_severity, dtype=int) - np.asarray(label_severity, dtype=int))
    same = pc == lc
    out = {}
    for cls in PD_CLASSES:
        rows = lc == cls
        out[cls] = {
            a: _accuracy_pair((same & (diff == 0))[rows & m], (same & (diff <= 1))[rows & m])
            for a, m in _cells(activities).items()
        }
    return out


def confusion(pred_severity, label_severity):
    """5x5 counts, rows = labeled severity, columns = predicted severity."""
    m = np.zeros((5, 5), dtype=int)
    np.add.at(m, (np.asarray(label_severity, int), np.asarray(pred_severity, int)), 1)
    return m


@dataclass(frozen=True)
class FnFp:
    fn: int
    fp: int

    @property
    def ratio(self):
        """FN / FP; +inf when there are no false positives."""
        return math.inf if self.fp == 0 else self.fn / self.fp

    def __add__(self, other):
        return FnFp(self.fn + other.fn, self.fp + other.fp)

    def to_dict(self):
        r = self.ratio
        return {"fn": self.fn, "fp": self.fp, "ratio": "inf" if math.isinf(r) else r}


def fn_fp_ratio(predictions, label_severity, threshold=PRESENCE_THRESHOLD):
    """False negatives and positives for class presence on one kind's scale.

    Present means label severity >= 1; predicted present means the raw
    layer output reaches ``threshold``.
    """
    y = np.asarray(predictions, dtype=float)
    present = np.asarray(label_severity) >= 1
    asserted = y >= threshold
    return FnFp(int(np.sum(present & ~asserted)), int(np.sum(~present & asserted)))


def summary_metrics(pred_class, pred_severity, label_class, label_severity, y_tm, y_bk, y_dk,
                    gate_threshold=PRESENCE_THRESHOLD, decision_threshold=PRESENCE_THRESHOLD):
    """Headline figures of a pooled prediction set, as fractions.

    * ``tremor_detection``: tremor vs non-tremor accuracy over all windows.
    * ``tremor_pm1``: over tremor windows, predicted tremor with severity within one level.
    * ``bk_dk_discrimination``: over BK and DK windows, share predicted as the right class.
    * ``both_asserted``: gated windows where both layer-2 outputs reach the threshold.
    """
    pc, lc = np.asarray(pred_class), np.asarray(label_class)
    diff = np.abs(np.asarray(pred_severity, int) - np.asarray(label_severity, int))
    tremor = lc == "tremor"
    layer2 = np.isin(lc, ["bradykinesia", "dyskinesia"])
    gated = np.asarray(y_tm) < gate_threshold
    both = gated & (np.asarray(y_bk) >= decision_threshold) & (np.asarray(y_dk) >= decision_threshold)
    nan = float("nan")
    return {
        "tremor_detection": float(np.mean((pc == "tremor") == tremor)) if len(lc) else nan,
        "tremor_pm1": float(np.mean((pc[tremor] == "tremor") & (diff[tremor] <= 1))) if tremor.any() else nan,
        "bk_dk_discrimination": float(np.mean(pc[layer2] == lc[layer2])) if layer2.any() else nan,
        "both_asserted": int(both.sum()),
    }


# ---------------------------------------------------------------------------
# per-fold scoring


@dataclass
class WindowPredictions:
    subject_ids: list
    window_indices: np.ndarray
    activities: list
    label_classes: list
    label_severities: np.ndarray
    y_tm: np.ndarray
    y_bk: np.ndarray
    y_dk: np.ndarray
    pred_classes: list
    pred_severities: np.ndarray

    def __len__(self):
        return len(self.subject_ids)

    def raw(self, kind):
        return {"tremor": self.y_tm, "bradykinesia": self.y_bk, "dyskinesia": self.y_dk}[kind]

    def scope(self, kind):
        """Windows a layer is scored on: all for tremor, non-tremor for BK/DK."""
        if kind == "tremor":
            return np.ones(len(self), dtype=bool)
        return np.asarray(self.label_classes) != "tremor"

    def kind_labels(self, kind):
        lc = np.asarray(self.label_classes)
        return np.where(lc == kind, self.label_severities, 0)

    def summary(self, gate_threshold=PRESENCE_THRESHOLD, decision_threshold=PRESENCE_THRESHOLD):
        return summary_metrics(
            self.pred_classes, self.pred_severities, self.label_classes, self.label_severities,
            self.y_tm, self.y_bk, self.y_dk, gate_threshold, decision_threshold,
        )

    def rows(self):
        for i in range(len(self)):
            yield (
                self.subject_ids[i], int(self.window_indices[i]), self.activities[i],
                self.label_classes[i], int(self.label_severities[i]),
                float(self.y_tm[i]), float(self.y_bk[i]), float(self.y_dk[i]),
                self.pred_classes[i], int(self.pred_severities[i]),
            )


def predict_table(model, table):
    """Layer outputs for every window plus the gated decision."""
    y_tm, y_bk, y_dk = hierarchy.layer_outputs(model, table.X)
    preds = [
        hierarchy.decide(a, b, c, model.gate_threshold, model.decision_threshold)
        for a, b, c in zip(y_tm, y_bk, y_dk)
    ]
    return WindowPredictions(
        list(table.subject_ids), np.asarray(table.window_indices), list(table.activities),
        list(table.pd_classes), np.asarray(table.severities), y_tm, y_bk, y_dk,
        [p.pd_class for p in preds], np.array([p.severity for p in preds], dtype=int),
    )


@dataclass
class FoldResult:
    test_subject: str
    layer: dict  # kind -> activity -> (acc, pm1) or None
    total: dict  # class -> activity -> (acc, pm1) or None
    fn_fp: dict  # kind -> FnFp
    confusion: dict  # kind -> 5x5 list
    both_asserted: int
    n_windows: int
    theta: dict = field(default_factory=dict)


def score_fold(test_subject, wp, gate_threshold=hierarchy.GATE_THRESHOLD,
               decision_threshold=hierarchy.DECISION_THRESHOLD, theta=None):
    layer, fn_fp, conf = {}, {}, {}
    for kind in MODEL_KINDS:
        # each layer is scored on the whole test set, other classes counting as severity 0
        y = wp.raw(kind)
        sev = np.array([hierarchy.round_severity(v) for v in y], dtype=int)
        labels = wp.kind_labels(kind)
        layer[kind] = layer_accuracy(sev, labels, wp.activities)
        conf[kind] = confusion(sev, labels).tolist()
        # presence errors only where the layer makes decisions: BK/DK sit behind the gate
        m = wp.scope(kind)
        threshold = gate_threshold if kind == "tremor" else decision_threshold
        fn_fp[kind] = fn_fp_ratio(y[m], labels[m], threshold)
    total = total_accuracy(wp.pred_classes, wp.pred_severities, wp.label_classes,
                           wp.label_severities, wp.activities)
    gated = wp.y_tm >= gate_threshold
    both = int(np.sum(~gated & (wp.y_bk >= decision_threshold) & (wp.y_dk >= decision_threshold)))
    return FoldResult(test_subject, layer, total, fn_fp, conf, both, len(wp), theta or {})


# ---------------------------------------------------------------------------
# aggregation


def _aggregate_cells(per_fold):
    """per_fold: list of {activity: (acc, pm1) or None} -> {activity: summary or None}."""
    out = {}
    for a in REPORT_ACTIVITIES:
        vals = [c[a] for c in per_fold if c.get(a) is not None]
        if not vals:
            out[a] = None
            continue
        arr = np.array(vals)
        out[a] = {
            "acc_mean": float(arr[:, 0].mean()), "acc_std": float(arr[:, 0].std()),
            "pm1_mean": float(arr[:, 1].mean()), "pm1_std": float(arr[:, 1].std()),
            "n_folds": len(vals),
        }
    return out


@dataclass
class EvaluationReport:
    layer: dict
    total: dict
    fn_fp: dict  # kind -> pooled FnFp
    fn_fp_per_fold: dict  # kind -> list of FnFp
    both_asserted: int
    folds: list
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "layer": self.layer,
            "total": self.total,
            "fn_fp": {k: v.to_dict() for k, v in self.fn_fp.items()},
            "fn_fp_per_fold": {k: [v.to_dict() for v in vs] for k, vs in self.fn_fp_per_fold.items()},
            "both_asserted": self.both_asserted,
            "folds": self.folds,
            "meta": self.meta,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        def fnfp(x):
            return FnFp(int(x["fn"]), int(x["fp"]))
        return cls(
            layer=d["layer"], total=d["total"],
            fn_fp={k: fnfp(v) for k, v in d["fn_fp"].items()},
            fn_fp_per_fold={k: [fnfp(v) for v in vs] for k, vs in d["fn_fp_per_fold"].items()},
            both_asserted=int(d["both_asserted"]), folds=list(d["folds"]), meta=d.get("meta", {}),
        )


def aggregate_folds(results):
    if not results:
        raise InsufficientTrainingData("no fold results to aggregate")
    layer = {k: _aggregate_cells([r.layer[k] for r in results]) for k in MODEL_KINDS}
    total = {c: _aggregate_cells([r.total[c] for r in results]) for c in PD_CLASSES}
    per_fold = {k: [r.fn_fp[k] for r in results] for k in MODEL_KINDS}
    pooled = {k: sum(v, FnFp(0, 0)) for k, v in per_fold.items()}
    return EvaluationReport(
        layer, total, pooled, per_fold,
        both_asserted=sum(r.both_asserted for r in results),
        folds=[r.test_subject for r in results],
    )


# ---------------------------------------------------------------------------
# LOSO driver


class FoldFailed(PdMotorError):
    def __init__(self, fold, cause):
        super().__init__(f"fold with test subject {fold!r} failed: {cause}")
        self.fold = fold
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)

    def __reduce__(self):
        return FoldFailed, (self.fold, self.cause)


def run_fold(table, fold, theta0=None, opts=None, standardize=True, restart=True,
             gate_threshold=hierarchy.GATE_THRESHOLD, decision_threshold=hierarchy.DECISION_THRESHOLD):
    subjects = np.asarray(table.subject_ids)
    train = table.subset(subjects != fold.test_subject)
    test = table.subset(subjects == fold.test_subject)
    try:
        model = hierarchy.train_multilayer(
            train, theta0, opts, standardize, restart, gate_threshold, decision_threshold,
            meta={"fold": fold.test_subject},
        )
        wp = predict_table(model, test)
    except PdMotorError as exc:
        raise FoldFailed(fold.test_subject, exc) from exc
    theta = {k: layer.gp_model.theta.as_array().tolist() for k, layer in model.layers.items()}
    return score_fold(fold.test_subject, wp, gate_threshold, decision_threshold, theta), wp


def concat_predictions(parts):
    def cat(name):
        vals = [getattr(p, name) for p in parts]
        return np.concatenate(vals) if isinstance(vals[0], np.ndarray) else sum(vals, [])
    return WindowPredictions(*(cat(n) for n in WindowPredictions.__dataclass_fields__))


def _run_fold_star(args):
    return run_fold(*args)


def run_loso(table, theta0=None, opts=None, max_folds=None, standardize=True, restart=True,
             gate_threshold=hierarchy.GATE_THRESHOLD, decision_threshold=hierarchy.DECISION_THRESHOLD,
             n_jobs=1):
    """Train and test every fold; returns ``(report, predictions)``.

    Folds are independent, so ``n_jobs > 1`` runs them in worker processes;
    results keep fold order either way.
    """
    folds = loso_folds(table.subject_ids)
    if max_folds is not None:
        folds = folds[:max_folds]
    args = (theta0, opts, standardize, restart, gate_threshold, decision_threshold)
    if n_jobs > 1 and len(folds) > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, len(folds))) as pool:
            outs = list(pool.map(_run_fold_star, [(table, f) + args for f in folds]))
    else:
        outs = []
        for fold in folds:
            log.info("fold %s: training on %d subjects", fold.test_subject, len(fold.train_subjects))
            outs.append(run_fold(table, fold, *args))
    results = [r for r, _ in outs]
    parts = [wp for _, wp in outs]
    report = aggregate_folds(results)
    wp = concat_predictions(parts)
    report.meta["theta"] = {r.test_subject: r.theta for r in results}
    report.meta["summary"] = wp.summary(gate_threshold, decision_threshold)
    return report, wp


# ---------------------------------------------------------------------------
# files


def write_predictions(wp, path):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DUMP_HEADER)
        for row in wp.rows():
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_predictions(path):
    with Path(path).open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    col = lambda k, f=str: [f(r[k]) for r in rows]  # noqa: E731
    return WindowPredictions(
        col("subject_id"), np.array(col("window_index", int), dtype=int), col("activity"),
        col("label_class"), np.array(col("label_severity", int), dtype=int),
        np.array(col("y_tm", float)), np.array(col("y_bk", float)), np.array(col("y_dk", float)),
        col("pred_class"), np.array(col("pred_severity", int), dtype=int),
    )


def report_from_predictions(wp, gate_threshold=hierarchy.GATE_THRESHOLD,
                            decision_threshold=hierarchy.DECISION_THRESHOLD):
    """Recompute the report from a prediction dump, one fold per subject."""
    subjects = np.asarray(wp.subject_ids)
    results = []
    for s in sorted(set(wp.subject_ids)):
        m = subjects == s
        part = WindowPredictions(*(
            (np.asarray(v)[m] if isinstance(v, np.ndarray) else [x for x, k in zip(v, m) if k])
            for v in (getattr(wp, n) for n in WindowPredictions.__dataclass_fields__)
        ))
        results.append(score_fold(s, part, gate_threshold, decision_threshold))
    report = aggregate_folds(results)
    report.meta["summary"] = wp.summary(gate_threshold, decision_threshold)
    return report


def _fmt(cell, key):
    if cell is None:
        return "-"
    return f"{cell[key + '_mean']:.1f}±{cell[key + '_std']:.1f}"


def format_tables(report):
    """Plain-text tables: per-layer accuracies, contingent accuracies, FN/FP."""
    head = f"{'':14s}" + "".join(f"{a:>14s}" for a in REPORT_ACTIVITIES)
    lines = []
    for title, block, rows in (
        ("Individual layer accuracy [%] (mean±std over folds)", report.layer, MODEL_KINDS),
        ("Total accuracy [%] (class and severity correct)", report.total, PD_CLASSES),
    ):
        for key, label in (("acc", "standard"), ("pm1", "±1")):
            lines.append(f"{title}, {label}")
            lines.append(head)
            for r in rows:
                lines.append(f"{r:14s}" + "".join(f"{_fmt(block[r][a], key):>14s}" for a in REPORT_ACTIVITIES))
            lines.append("")
    lines.append("FN/FP (pooled over folds)")
    for k in MODEL_KINDS:
        v = report.fn_fp[k]
        ratio = "inf" if math.isinf(v.ratio) else f"{v.ratio:.2f}"
        lines.append(f"{k:14s}  FN={v.fn:<5d} FP={v.fp:<5d} ratio={ratio}")
    lines.append(f"windows with both BK and DK asserted: {report.both_asserted}")
    summary = report.meta.get("summary")
    if summary:
        lines.append("")
        lines.append("Pooled summary")
        for k, v in summary.items():
            lines.append(f"{k:22s} {v:.4f}" if isinstance(v, float) else f"{k:22s} {v}")
    return "\n".join(lines) + "\n"


def write_report(report, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "report.json").write_text(report.to_json(indent=2), encoding="utf-8")
    (directory / "report.txt").write_text(format_tables(report), encoding="utf-8")
    return directory / "report.json", directory / "report.txt"

