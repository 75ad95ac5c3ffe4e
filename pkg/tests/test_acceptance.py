"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
terminal summary. The end-to-end criteria share one leave-one-subject-out
run on a seeded 10-subject, 120-minute synthetic cohort and are marked slow.
"""
import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from pdmotor import dsp, evaluation, features, gp, hierarchy, ingest, synth

import oracles
from acceptance_log import record

RATE = 60.0
BAND = dsp.BandpassSpec(0.1, 20.0, 4)


def random_instance(rng):
    n = int(rng.integers(2, 21))
    d = int(rng.integers(1, 6))
    theta = gp.Hyperparameters(rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0), rng.uniform(0.01, 0.5))
    return rng.standard_normal((n, d)), rng.standard_normal(n), theta


def tone(f_hz, seconds=60.0):
    return np.sin(2 * np.pi * f_hz * np.arange(int(seconds * RATE)) / RATE)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def test_gp_oracle_equivalence():
    rng = np.random.default_rng(100)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        X, y, th = random_instance(rng)
        Xs = rng.standard_normal((5, X.shape[1]))
        mean, var = gp.predict_batch(gp.condition(X, y, th), Xs)
        m_ref, v_ref = oracles.gp_dense_posterior(X, y, Xs, *th.as_array())
        worst = max(worst, np.max(np.abs(mean - m_ref)), np.max(np.abs(var - v_ref)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 10.0
    assert record("GP oracle equivalence", ok, f"max abs error {worst:.2e} (<= 1e-8), {elapsed:.2f} s (< 10 s)")


def test_gradient_check():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        X, y, th = random_instance(rng)
        g = gp.nlml_gradient(X, y, th)
        fd = oracles.central_difference(lambda t: oracles.gp_dense_nlml(X, y, *t), th.as_array())
        scale = np.maximum(np.abs(g), np.abs(fd))
        rel = np.where(scale > 1e-9, np.abs(g - fd) / np.maximum(scale, 1e-300), 0.0)
        worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 30.0
    assert record("Gradient check", ok, f"max relative error {worst:.2e} (<= 1e-4), {elapsed:.2f} s (< 30 s)")


def test_dwt_correctness():
    rng = np.random.default_rng(102)
    recon = 0.0
    for n in (256, 512, 1024, 2048, 4096):
        x = rng.standard_normal(n)
        rec = dsp.idwt_db3(dsp.dwt_db3(x, 6, "periodization"))
        recon = max(recon, np.linalg.norm(rec - x) / np.linalg.norm(x))
    const = max(np.max(np.abs(d)) for d in dsp.dwt_db3(np.full(3600, 7.0), 9).details.values())
    x = tone(5.0)
    ref_details, _ = oracles.periodized_dwt(x, 9, oracles.db3_taps_by_conditions())
    ref = {k: np.sum(v ** 2) for k, v in ref_details.items()}
    got = {k: np.sum(v ** 2) for k, v in dsp.dwt_db3(x, 9, "periodization").details.items()}
    frac = got[3] / sum(got.values())
    ref_frac = ref[3] / sum(ref.values())
    ok = recon <= 1e-8 and const <= 1e-9 and frac >= 0.8 and abs(frac - ref_frac) <= 1e-10
    assert record("DWT correctness", ok,
                  f"reconstruction {recon:.1e}, constant details {const:.1e}, "
                  f"5 Hz level-3 share {frac:.4f} (reference {ref_frac:.4f})")


def test_filter_correctness():
    x = np.random.default_rng(103).standard_normal(3600)
    y = dsp.butterworth_bandpass(x, RATE, BAND)
    phase = np.max(np.abs(y - dsp.butterworth_bandpass(x[::-1], RATE, BAND)[::-1]))
    mid = slice(900, 2700)
    amp = np.max(np.abs(dsp.butterworth_bandpass(tone(5.0), RATE, BAND)[mid]))
    stop = tone(25.0)
    out = dsp.butterworth_bandpass(stop, RATE, BAND)
    ratio = np.sqrt(np.mean(out[mid] ** 2) / np.mean(stop[mid] ** 2))
    designed = float(oracles.butterworth_two_pass_gain(4, 0.1, 20.0, RATE, 25.0))
    ok = phase <= 1e-10 and abs(amp - 1.0) <= 0.02 and abs(ratio - designed) <= 0.1 * designed
    assert record("Filter correctness", ok,
                  f"zero-phase {phase:.1e}, 5 Hz gain {amp:.4f}, 25 Hz gain {ratio:.4f} vs designed {designed:.4f}")


def _windows(acc, gyr):
    n = len(acc)
    rec = ingest.ImuRecording("S01", np.arange(n) / RATE, acc, gyr)
    ann = ingest.AnnotationSequence("S01", [ingest.Annotation(k, "tremor", 3, "sitting") for k in range(n // 3600)])
    return ingest.build_windows(rec, ann)[0]


def test_feature_invariants():
    parts = [synth.synth_minute("tremor", 3, "sitting", seed=s) for s in range(3)]
    acc, gyr = np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts])
    ref = features.build_feature_vector(_windows(acc, gyr)[1])
    rng = np.random.default_rng(104)
    rot = 0.0
    for _ in range(20):
        q = random_rotation(rng)
        v = features.build_feature_vector(_windows(acc @ q.T, gyr @ q.T)[1])
        rot = max(rot, float(np.max(np.abs(v - ref) / np.maximum(1.0, np.abs(ref)))))
    violations = 0
    for _ in range(1000):
        sig = np.abs(rng.standard_normal(int(rng.integers(1, 200)))) * rng.uniform(0.01, 2.0)
        c1, c2 = np.sort(rng.uniform(1e-3, 3.0, 2))
        f1, f2 = features.rest_fraction(sig, c1), features.rest_fraction(sig, c2)
        violations += not (0.0 <= f1 <= f2 <= 1.0)
    layout = features.feature_layout()
    blocks_ok = True
    for kind, removed in (("bradykinesia", {"level1", "level7"}), ("dyskinesia", {"level1", "level9"})):
        kept = features.retained_indices(kind)
        blocks_ok &= len(kept) == 96 and {layout[i][1] for i in kept}.isdisjoint(removed)
        blocks_ok &= features.reduce_features(ref, kind).shape == (96,)
    ok = rot <= 1e-9 and violations == 0 and len(ref) == 132 and blocks_ok
    assert record("Feature invariants", ok,
                  f"rotation deviation {rot:.1e}, monotonicity violations {violations}/1000, "
                  f"length {len(ref)}, reductions 96 with correct blocks: {blocks_ok}")


def flowchart(tm, bk, dk):
    def sev(v):
        return min(4, max(1, int(np.floor(v + 0.5)) if v >= 0 else 0))
    if tm >= 0.5:
        return "tremor", sev(tm)
    if bk < 0.5 and dk < 0.5:
        return "balanced", 0
    return ("dyskinesia", sev(dk)) if dk >= bk else ("bradykinesia", sev(bk))


def test_decision_truth_table():
    grid = np.round(np.arange(-10, 51) / 10.0, 10)
    mismatches = 0
    for tm in grid:
        for bk in grid:
            for dk in grid:
                p = hierarchy.decide(tm, bk, dk)
                mismatches += (p.pd_class, p.severity) != flowchart(tm, bk, dk)
    clamps = hierarchy.round_severity(-0.7) == 0 and hierarchy.round_severity(4.9) == 4
    ok = mismatches == 0 and clamps
    assert record("Decision-layer truth table", ok,
                  f"{len(grid) ** 3} grid points, {mismatches} mismatches, clamps -0.7->0 and 4.9->4: {clamps}")


def test_psd_ordering():
    order = [("bradykinesia", s) for s in (4, 3, 2, 1)] + [("balanced", 0)] + [("dyskinesia", s) for s in (1, 2, 3, 4)]
    rng = np.random.default_rng(105)
    traits = [synth.SubjectTraits.draw(rng) for _ in range(10)]
    levels = []
    for k, (cls, sev) in enumerate(order):
        vals = [
            synth.band_mean_power(synth.accelerometer_psd(
                synth.synth_minute(cls, sev, "sitting", seed=[k, j], traits=traits[j % 10])[0]))
            for j in range(60)
        ]
        levels.append(float(np.mean(vals)))
    ok = all(a < b for a, b in zip(levels, levels[1:]))
    names = " < ".join(f"{c[:2].upper()}{s}={v / synth.PSD_UNIT:.2f}" for (c, s), v in zip(order, levels))
    assert record("Synthetic PSD ordering", ok, f"60 windows per level: {names}")


def test_serialization_round_trip(tmp_path):
    from tables import make_table
    table = make_table()
    model = hierarchy.train_multilayer(table, opts=gp.TrainOptions(max_iters=10, min_hyperparam=0.1))
    hierarchy.save_bundle(model, tmp_path / "bundle")
    back = hierarchy.load_bundle(tmp_path / "bundle")
    drift = max(np.max(np.abs(a - b)) for a, b in zip(hierarchy.layer_outputs(model, table.X),
                                                        hierarchy.layer_outputs(back, table.X)))
    same = hierarchy.predict_batch(model, table.X) == hierarchy.predict_batch(back, table.X)
    table.X[0, :4] = [1.234567890123456789e-7, np.pi, -np.e * 1e5, 1.0 / 3.0]
    features.write_feature_store(table, tmp_path / "store.csv")
    stored = features.read_feature_store(tmp_path / "store.csv").X
    digits = float(np.min(-np.log10(np.maximum(np.abs(stored - table.X) / np.abs(table.X), 1e-300))))
    ok = drift <= 1e-12 and same and digits >= 15
    assert record("Serialization round-trip", ok,
                  f"bundle prediction drift {drift:.1e} (<= 1e-12), feature store digits {min(digits, 99):.0f} (>= 15)")


# ---------------------------------------------------------------------------
# end to end


@pytest.fixture(scope="module")
def loso_run():
    t0 = time.perf_counter()
    windows = []
    for rec, ann in synth.synth_cohort(synth.separated_profiles(10, 120, seed=0)):
        windows += ingest.build_windows(rec, ann)[0]
    table = features.featurize_windows(windows)
    opts = replace(hierarchy.DEFAULT_TRAIN_OPTIONS, subsample_cap=2000)
    n_jobs = min(8, os.cpu_count() or 1)
    report, wp = evaluation.run_loso(table, opts=opts, n_jobs=n_jobs)
    return report, wp, time.perf_counter() - t0, len(table)


@pytest.mark.slow
def test_end_to_end_loso(loso_run):
    report, wp, elapsed, n = loso_run
    s = report.meta["summary"]
    ok = (s["tremor_detection"] >= 0.9 and s["tremor_pm1"] >= 0.9 and s["bk_dk_discrimination"] >= 0.75
          and s["both_asserted"] == 0 and elapsed <= 15 * 60)
    assert record("End-to-end synthetic LOSO", ok,
                  f"{len(report.folds)} folds, {n} windows, tremor detection {100 * s['tremor_detection']:.1f}% (>= 90), "
                  f"tremor +-1 {100 * s['tremor_pm1']:.1f}% (>= 90), BK/DK discrimination "
                  f"{100 * s['bk_dk_discrimination']:.1f}% (>= 75), windows with both BK and DK asserted "
                  f"{s['both_asserted']} (== 0), {elapsed / 60:.1f} min (<= 15)")


@pytest.mark.slow
def test_fn_fp_ratio(loso_run):
    report, _, _, _ = loso_run
    parts = []
    ok = True
    for kind in hierarchy.MODEL_KINDS:
        ratios = [v.ratio for v in report.fn_fp_per_fold[kind]]
        inside = sum(0.5 <= r <= 2.0 for r in ratios)
        ok &= inside == len(ratios)
        pooled = report.fn_fp[kind]
        shown = "inf" if math.isinf(pooled.ratio) else f"{pooled.ratio:.2f}"
        parts.append(f"{kind} {inside}/{len(ratios)} folds in range, pooled FN={pooled.fn} FP={pooled.fp} ratio={shown}")
    assert record("FN/FP initialization property", ok, "; ".join(parts) + " (reference 1.16 / 0.98 / 0.87)")
