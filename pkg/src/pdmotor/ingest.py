"""Sensor and annotation parsing, and assembly of one-minute windows."""
import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateWindow,
    EmptyDataset,
    EmptyRecording,
    InvalidLabel,
    MalformedRow,
    NonMonotoneTimestamps,
    SubjectMismatch,
)

log = logging.getLogger(__name__)

PD_CLASSES = ("balanced", "tremor", "bradykinesia", "dyskinesia")
ACTIVITIES = ("sitting", "walking", "standing", "lying", "other")
IMU_HEADER = ("t", "ax", "ay", "az", "gx", "gy", "gz")
ANNOTATION_HEADER = ("window_index", "pd_class", "severity", "activity")

ACC_RANGE_G = 8.0
GYR_RANGE_DPS = 1000.0
WINDOW_SECONDS = 60.0
MIN_WINDOW_SAMPLES = 360  # 10 % of 60 Hz x 60 s


@dataclass
class ImuRecording:
    """Time-stamped 6-axis samples of one subject.

    ``acc`` is in G, ``gyr`` in degrees per second, both shaped (n, 3).
    ``clamped`` counts values that were clipped to the sensor range on
    parse.
    """

    subject_id: str
    t: np.ndarray
    acc: np.ndarray
    gyr: np.ndarray
    nominal_rate_hz: float = 60.0
    clamped: int = 0

    def __post_init__(self):
        if not self.subject_id:
            raise EmptyRecording("subject_id must be non-empty")
        self.t = np.asarray(self.t, dtype=float)
        self.acc = np.asarray(self.acc, dtype=float).reshape(-1, 3)
        self.gyr = np.asarray(self.gyr, dtype=float).reshape(-1, 3)
        if len(self.t) == 0:
            raise EmptyRecording(f"recording {self.subject_id} has no samples")
        if not (len(self.t) == len(self.acc) == len(self.gyr)):
            raise MalformedRow(self.subject_id, None, "time, accelerometer and gyroscope lengths differ")
        if self.nominal_rate_hz <= 0:
            raise ValueError("nominal_rate_hz must be positive")

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True)
class Annotation:
    window_index: int
    pd_class: str
    severity: int
    activity: str

    def __post_init__(self):
        validate_label(self.window_index, self.pd_class, self.severity, self.activity)


def validate_label(window_index, pd_class, severity, activity):
    if window_index < 0:
        raise InvalidLabel(f"window_index must be non-negative, got {window_index}")
    if pd_class not in PD_CLASSES:
        raise InvalidLabel(f"unknown pd_class {pd_class!r}")
    if activity not in ACTIVITIES:
        raise InvalidLabel(f"unknown activity {activity!r}")
    if pd_class == "balanced" and severity != 0:
        raise InvalidLabel(f"balanced window {window_index} must have severity 0, got {severity}")
    if pd_class != "balanced" and severity not in (1, 2, 3, 4):
        raise InvalidLabel(f"{pd_class} window {window_index} needs severity 1-4, got {severity}")


@dataclass
class AnnotationSequence:
    subject_id: str
    annotations: list

    def __post_init__(self):
        seen = set()
        for a in self.annotations:
            if a.window_index in seen:
                raise DuplicateWindow(f"{self.subject_id}: duplicate window_index {a.window_index}")
            seen.add(a.window_index)
        self.annotations = sorted(self.annotations, key=lambda a: a.window_index)

    def by_index(self):
        return {a.window_index: a for a in self.annotations}


@dataclass
class Window:
    """One annotated minute of samples plus its +-2 minute rest context.

    ``context`` holds ``(minute_index, acc, gyr)`` for every minute in
    ``k-2 .. k+2`` (the window itself included) that exists in the
    recording and has at least the minimum sample count.
    """

    subject_id: str
    window_index: int
    t: np.ndarray
    acc: np.ndarray
    gyr: np.ndarray
    annotation: Annotation = None
    context: tuple = ()
    rate_hz: float = 60.0

    @property
    def sample_count(self):
        return len(self.t)


@dataclass
class DropReport:
    subject_id: str
    dropped: list = field(default_factory=list)  # (window_index, sample_count)
    missing: list = field(default_factory=list)  # annotated minutes without any sample

    def to_dict(self):
        return {
            "subject_id": self.subject_id,
            "dropped": [{"window_index": int(k), "sample_count": int(n)} for k, n in self.dropped],
            "missing": [int(k) for k in self.missing],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def _subject_from_path(path, suffix):
    stem = Path(path).stem
    return stem[: -len(suffix)] if stem.endswith(suffix) else stem


def _read_text(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return path.read_text(encoding="utf-8-sig")


def _check_header(path, line, expected):
    got = tuple(h.strip() for h in line.split(","))
    if got != expected:
        raise MalformedRow(path, 1, f"expected header {','.join(expected)}, got {line.strip()!r}")


def _find_bad_imu_row(path, lines):
    for i, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(IMU_HEADER):
            raise MalformedRow(path, i, f"expected {len(IMU_HEADER)} fields, got {len(parts)}")
        try:
            values = [float(p) for p in parts]
        except ValueError:
            raise MalformedRow(path, i, f"non-numeric field in {line.strip()!r}") from None
        if not all(np.isfinite(values)):
            raise MalformedRow(path, i, "non-finite value")
        if values[0] < 0:
            raise MalformedRow(path, i, f"negative timestamp {values[0]}")
    raise MalformedRow(path, None, "unparseable content")


def parse_imu_csv(path, subject_id=None, nominal_rate_hz=60.0):
    """Read ``t,ax,ay,az,gx,gy,gz`` rows into an :class:`ImuRecording`.

    Rows are stable-sorted by time. Exact duplicate rows are dropped; two
    rows sharing a timestamp with different values raise
    :class:`NonMonotoneTimestamps`. Values outside +-8 G / +-1000 dps are
    clipped and counted in ``recording.clamped``.
    """
    text = _read_text(path)
    lines = text.splitlines()
    if not lines:
        raise EmptyRecording(f"{path}: file is empty")
    _check_header(path, lines[0], IMU_HEADER)
    body = [ln for ln in lines[1:] if ln.strip()]
    if not body:
        raise EmptyRecording(f"{path}: no samples after header")
    try:
        data = np.loadtxt(io.StringIO("\n".join(body)), delimiter=",", ndmin=2)
    except ValueError:
        _find_bad_imu_row(path, lines[1:])
    if data.shape[1] != len(IMU_HEADER) or not np.all(np.isfinite(data)) or np.any(data[:, 0] < 0):
        _find_bad_imu_row(path, lines[1:])

    order = np.argsort(data[:, 0], kind="stable")
    data = data[order]
    same_t = np.flatnonzero(np.diff(data[:, 0]) == 0)
    if len(same_t):
        identical = np.all(data[same_t] == data[same_t + 1], axis=1)
        if not np.all(identical):
            bad = data[same_t[~identical][0], 0]
            raise NonMonotoneTimestamps(f"{path}: conflicting samples at t={bad}")
        data = np.delete(data, same_t + 1, axis=0)

    acc, gyr = data[:, 1:4], data[:, 4:7]
    clamped = int(np.sum(np.abs(acc) > ACC_RANGE_G) + np.sum(np.abs(gyr) > GYR_RANGE_DPS))
    if clamped:
        log.info("%s: clamped %d out-of-range values", path, clamped)
    return ImuRecording(
        subject_id=subject_id or _subject_from_path(path, "_imu"),
        t=data[:, 0],
        acc=np.clip(acc, -ACC_RANGE_G, ACC_RANGE_G),
        gyr=np.clip(gyr, -GYR_RANGE_DPS, GYR_RANGE_DPS),
        nominal_rate_hz=nominal_rate_hz,
        clamped=clamped,
    )


def parse_annotations_csv(path, subject_id=None):
    text = _read_text(path)
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise EmptyRecording(f"{path}: file is empty")
    _check_header(path, ",".join(rows[0]), ANNOTATION_HEADER)
    annotations = []
    seen = set()
    for i, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != len(ANNOTATION_HEADER):
            raise MalformedRow(path, i, f"expected {len(ANNOTATION_HEADER)} fields, got {len(row)}")
        idx, cls, sev, act = (f.strip() for f in row)
        try:
            idx, sev = int(idx), int(sev)
        except ValueError:
            raise MalformedRow(path, i, "window_index and severity must be integers") from None
        if idx in seen:
            raise DuplicateWindow(f"{path}: row {i}: duplicate window_index {idx}")
        seen.add(idx)
        try:
            annotations.append(Annotation(idx, cls, sev, act))
        except InvalidLabel as exc:
            raise InvalidLabel(f"{path}: row {i}: {exc}") from None
    return AnnotationSequence(subject_id or _subject_from_path(path, "_annotations"), annotations)


def minute_bounds(rec):
    """Map minute index -> (start, stop) sample slice for every non-empty minute."""
    minutes = np.floor(rec.t / WINDOW_SECONDS).astype(np.int64)
    keys, starts = np.unique(minutes, return_index=True)
    stops = np.append(starts[1:], len(minutes))
    return {int(k): (int(a), int(b)) for k, a, b in zip(keys, starts, stops)}


def segment_minutes(rec, annotations=None, min_samples=MIN_WINDOW_SAMPLES, context_radius=2):
    """Cut a recording into minute windows.

    Without annotations every minute with at least ``min_samples`` samples
    becomes an unlabeled window. Returns ``(windows, report)``.
    """
    bounds = minute_bounds(rec)
    usable = {k for k, (a, b) in bounds.items() if b - a >= min_samples}
    report = DropReport(rec.subject_id)
    if annotations is None:
        wanted = sorted(bounds)
        labels = {}
    else:
        labels = annotations.by_index()
        wanted = sorted(labels)

    windows = []
    for k in wanted:
        if k not in bounds:
            report.missing.append(k)
            continue
        a, b = bounds[k]
        if k not in usable:
            report.dropped.append((k, b - a))
            continue
        context = []
        for j in range(k - context_radius, k + context_radius + 1):
            if j in usable:
                ja, jb = bounds[j]
                context.append((j, rec.acc[ja:jb], rec.gyr[ja:jb]))
        windows.append(Window(
            subject_id=rec.subject_id,
            window_index=k,
            t=rec.t[a:b],
            acc=rec.acc[a:b],
            gyr=rec.gyr[a:b],
            annotation=labels.get(k),
            context=tuple(context),
            rate_hz=rec.nominal_rate_hz,
        ))
    return windows, report


def build_windows(rec, ann, min_samples=MIN_WINDOW_SAMPLES, context_radius=2):
    """Assemble labeled one-minute windows; returns ``(windows, drop_report)``.

    Minutes with fewer than ``min_samples`` samples are dropped and listed
    in the report; annotated minutes with no samples at all are listed as
    missing. Raises :class:`EmptyDataset` when nothing survives.
    """
    if rec.subject_id != ann.subject_id:
        raise SubjectMismatch(f"recording {rec.subject_id!r} vs annotations {ann.subject_id!r}")
    windows, report = segment_minutes(rec, ann, min_samples, context_radius)
    if report.missing:
        log.info("%s: %d annotated minutes have no samples", rec.subject_id, len(report.missing))
    if not windows:
        raise EmptyDataset(f"{rec.subject_id}: no window has >= {min_samples} samples")
    return windows, report


def write_imu_csv(rec, path):
    path = Path(path)
    data = np.column_stack([rec.t, rec.acc, rec.gyr])
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(IMU_HEADER) + "\n")
        np.savetxt(fh, data, delimiter=",", fmt="%.10g")


def write_annotations_csv(ann, path):
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_HEADER)
        for a in ann.annotations:
            w.writerow([a.window_index, a.pd_class, a.severity, a.activity])
