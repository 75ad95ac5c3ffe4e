"""Command-line entry point: ``pdmotor <subcommand> [options]``.

Subcommands: synth, featurize, train, predict, evaluate, report. Every
subcommand reads an optional ``--config`` JSON file (see
:class:`~pdmotor.config.RunConfig`) and lets flags override it. Set
``PDMOTOR_LOG_LEVEL`` (e.g. ``DEBUG``) for more output.

Exit codes: 0 success, 1 data or validation error, 2 configuration or
compatibility error, 3 numerical failure.
"""
import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, features, hierarchy, ingest, synth
from .config import RunConfig
from .errors import ConfigError, DataError, EmptyDataset, PdMotorError

log = logging.getLogger("pdmotor")

LOG_ENV = "PDMOTOR_LOG_LEVEL"
PREDICTION_HEADER = ("subject_id", "window_index", "y_tm", "y_bk", "y_dk", "pred_class", "pred_severity")


def _refuse_existing(path, force):
    if Path(path).exists() and not force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg, args):
    out = Path(args.out or cfg.data_dir)
    if not out.is_dir():
        if not args.create:
            raise ConfigError(f"output directory {out} does not exist; pass --create")
        out.mkdir(parents=True)
    _refuse_existing(out / "manifest.json", args.force)
    make = synth.separated_profiles if cfg.separated else synth.default_profiles
    profiles = make(cfg.n_subjects, cfg.minutes, cfg.seed, drop_rate=cfg.drop_rate)
    cohort = synth.synth_cohort(profiles, cfg.trait_spread)
    manifest = synth.write_cohort(cohort, profiles, out, cfg.trait_spread)
    print(f"wrote {len(cohort)} subjects to {out} ({manifest.name})")


def discover_cohort(data_dir):
    """``(imu_path, annotation_path)`` pairs, from ``manifest.json`` when present."""
    data_dir = Path(data_dir)
    manifest = data_dir / "manifest.json"
    if manifest.exists():
        files = json.loads(manifest.read_text(encoding="utf-8"))["files"]
        pairs = [(data_dir / f["imu"], data_dir / f["annotations"]) for f in files]
    else:
        pairs = [
            (p, p.with_name(p.name.replace("_imu.csv", "_annotations.csv")))
            for p in sorted(data_dir.glob("*_imu.csv"))
        ]
    if not pairs:
        raise EmptyDataset(f"no *_imu.csv recordings found in {data_dir}")
    for imu, lab in pairs:
        if not lab.exists():
            raise DataError(f"{imu} has no annotation file {lab.name}")
    return pairs


def cmd_featurize(cfg, args):
    data_dir = Path(args.data or cfg.data_dir)
    store = Path(args.out or Path(cfg.output_dir) / "features.csv")
    _refuse_existing(store, args.force)
    fcfg = cfg.feature_config()
    windows, reports = [], []
    for imu, lab in discover_cohort(data_dir):
        rec = ingest.parse_imu_csv(imu, nominal_rate_hz=cfg.rate_hz)
        ann = ingest.parse_annotations_csv(lab, rec.subject_id)
        w, report = ingest.build_windows(rec, ann, cfg.min_window_samples)
        windows += w
        reports.append(report.to_dict())
        log.info("%s: %d windows, %d dropped", rec.subject_id, len(w), len(report.dropped))
    table = features.featurize_windows(windows, fcfg)
    store.parent.mkdir(parents=True, exist_ok=True)
    features.write_feature_store(table, store, fcfg)
    drops = store.with_suffix(".drops.json")
    drops.write_text(json.dumps(reports, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(table)} feature rows to {store}")


def cmd_train(cfg, args):
    store = Path(args.store or Path(cfg.output_dir) / "features.csv")
    out = Path(args.out or Path(cfg.output_dir) / "model")
    _refuse_existing(out / "manifest.json", args.force)
    table = features.read_feature_store(store)
    model = hierarchy.train_multilayer(
        table, cfg.theta0_hyperparameters(), cfg.train_options(), cfg.standardize, cfg.restart,
        cfg.gate_threshold, cfg.decision_threshold, meta={"store": str(store)},
    )
    hierarchy.save_bundle(model, out)
    for kind, layer in model.layers.items():
        print(f"{kind}: theta={layer.gp_model.theta.as_array().tolist()}")
    print(f"wrote model bundle to {out}")


def predict_recording(model, rec, cfg):
    """Unlabeled windows of one recording -> list of prediction rows."""
    windows, report = ingest.segment_minutes(rec, None, cfg.min_window_samples)
    if report.dropped:
        log.info("%s: dropped %d short minutes", rec.subject_id, len(report.dropped))
    if not windows:
        return []
    fcfg = cfg.feature_config()
    cache = {}
    X = np.vstack([features.build_feature_vector(w, fcfg, cache) for w in windows])
    y_tm, y_bk, y_dk = hierarchy.layer_outputs(model, X)
    preds = hierarchy.predict_batch(model, X)
    return [
        (w.subject_id, w.window_index, float(a), float(b), float(c), p.pd_class, p.severity)
        for w, a, b, c, p in zip(windows, y_tm, y_bk, y_dk, preds)
    ]


def cmd_predict(cfg, args):
    model = hierarchy.load_bundle(args.model)
    out = Path(args.out)
    _refuse_existing(out, args.force)
    rec = ingest.parse_imu_csv(args.imu, nominal_rate_hz=cfg.rate_hz)
    rows = predict_recording(model, rec, cfg)
    if not rows:
        log.warning("%s: no window has >= %d samples; writing an empty prediction file",
                    args.imu, cfg.min_window_samples)
    with out.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    print(f"wrote {len(rows)} predictions to {out}")


def cmd_evaluate(cfg, args):
    store = Path(args.store or Path(cfg.output_dir) / "features.csv")
    out = Path(args.out or Path(cfg.output_dir) / "evaluation")
    _refuse_existing(out / "report.json", args.force)
    table = features.read_feature_store(store)
    report, wp = evaluation.run_loso(
        table, cfg.theta0_hyperparameters(), cfg.train_options(), cfg.folds, cfg.standardize,
        cfg.restart, cfg.gate_threshold, cfg.decision_threshold, n_jobs=cfg.n_jobs,
    )
    report.meta["config"] = cfg.to_dict()
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_predictions(wp, out / "predictions.csv")
    evaluation.write_report(report, out)
    print(evaluation.format_tables(report), end="")
    print(f"wrote {len(report.folds)} folds to {out}")


def cmd_report(cfg, args):
    wp = evaluation.read_predictions(args.predictions)
    report = evaluation.report_from_predictions(wp, cfg.gate_threshold, cfg.decision_threshold)
    if args.out:
        out = Path(args.out)
        _refuse_existing(out / "report.json", args.force)
        evaluation.write_report(report, out)
    print(evaluation.format_tables(report), end="")


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(prog="pdmotor", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a seeded synthetic cohort")
    p.add_argument("--out", help="output directory (default: data_dir)")
    p.add_argument("--create", action="store_true", help="create the output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--subjects", type=int, dest="n_subjects")
    p.add_argument("--minutes", type=int)
    p.add_argument("--separated", action="store_const", const=True,
                   help="every minute holds only its labeled state")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", parents=[common], help="build the feature store of a cohort")
    p.add_argument("--data", help="cohort directory (default: data_dir)")
    p.add_argument("--out", help="feature store CSV (default: output_dir/features.csv)")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", parents=[common], help="train the three layers on a feature store")
    p.add_argument("--store")
    p.add_argument("--out", help="model bundle directory (default: output_dir/model)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict class and severity per minute")
    p.add_argument("--model", required=True, help="model bundle directory")
    p.add_argument("--imu", required=True, help="IMU CSV recording")
    p.add_argument("--out", required=True, help="prediction CSV")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="leave-one-subject-out evaluation")
    p.add_argument("--store")
    p.add_argument("--out", help="report directory (default: output_dir/evaluation)")
    p.add_argument("--folds", type=int, help="run only the first N folds")
    p.add_argument("--jobs", type=int, dest="n_jobs", help="parallel fold workers")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="recompute a report from a prediction dump")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", help="directory for report.json / report.txt")
    p.set_defaults(func=cmd_report)
    return parser


CONFIG_FLAGS = ("seed", "n_subjects", "minutes", "separated", "folds", "n_jobs")


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get(LOG_ENV, "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        cfg = cfg.with_overrides(**{k: getattr(args, k, None) for k in CONFIG_FLAGS})
        args.func(cfg, args)
    except PdMotorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
