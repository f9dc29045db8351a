"""Release gate: one test per shipping criterion, one verdict line each
under pytest -v.

Every expected value here travels an independent route: closed-form shape
arithmetic for phantom truths, 50-digit arithmetic for the regression
formulas, adaptive quadrature for perimeters, per-pixel double-loop scans
for morphology, and hand mean-squares for the agreement statistics. None
of it calls back into the code path under test.
"""

import csv
import io
import json
import math
import time

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate, stats

from conftest import make_phantom_spec
from fetalbiometry import (
    classification_report,
    dice,
    dice_loss,
    ellipse_perimeter,
    estimate_efw,
    estimate_ga,
    fit_ellipse_lsq,
    iou,
    load_study,
    median_smooth13,
    open_cross5,
)
from fetalbiometry.agreement import RatingsTable, anova_oneway, icc, intra_observer
from fetalbiometry.backend import (
    FixtureScorer,
    PhantomScorer,
    spec_to_dict,
    write_phantom_study,
)
from fetalbiometry.cli import main as cli_main
from fetalbiometry.ingest import FrameSequence, StudyMeta
from fetalbiometry.pipeline import (
    StudyReport,
    analyze_study,
    analyze_study_full,
    report_json,
)

# conftest phantom geometry, in px on a (480, 640) canvas at 0.3 mm/px
HEAD_AB = (100.0, 60.0)
ABD_AB = (90.0, 80.0)
FEM_LENGTH = 180.0
SPACING = 0.3
PX_CM = SPACING / 10.0  # one pixel expressed in cm


def seq_for(spec):
    meta = StudyMeta(
        study_id=spec.study_id,
        pixel_spacing_mm=spec.pixel_spacing_mm,
        native_size=spec.native_size,
        frame_count=len(spec.frames),
        mask_regions=(),
    )
    return FrameSequence(meta=meta, frames=tuple(np.zeros(spec.native_size) for _ in spec.frames))


def ramanujan_cm(a_px, b_px):
    a, b = a_px * SPACING, b_px * SPACING
    h = ((a - b) / (a + b)) ** 2
    return math.pi * (a + b) * (1.0 + 3.0 * h / (10.0 + math.sqrt(4.0 - 3.0 * h))) / 10.0


TRUTH = {
    "hc_cm": ramanujan_cm(*HEAD_AB),
    "bpd_cm": 2.0 * HEAD_AB[1] * SPACING / 10.0,
    "ac_cm": ramanujan_cm(*ABD_AB),
    "fl_cm": FEM_LENGTH * SPACING / 10.0,
}


# ---------------------------------------------------------------- criterion 1


def test_c1_phantom_end_to_end_accuracy_and_runtime():
    spec = make_phantom_spec(
        n_frames=30, part_slots={4: "head", 14: "abdomen", 24: "femur"}
    )
    t0 = time.perf_counter()
    report = analyze_study(seq_for(spec), PhantomScorer(spec, seed=0))
    elapsed = time.perf_counter() - t0

    bio = report.biometry
    for key, budget_px in (("hc_cm", 1.0), ("bpd_cm", 1.0), ("ac_cm", 1.0), ("fl_cm", 2.0)):
        err_px = abs(bio[key] - TRUTH[key]) / PX_CM
        assert err_px < budget_px, (key, err_px)
    assert elapsed < 5.0
    print(f"c1 ok: max budget use within tolerance, {elapsed:.2f}s for 30 frames")


# ---------------------------------------------------------------- criterion 2


def test_c2_noise_robustness_over_50_seeds():
    spec = make_phantom_spec(sigma=0.2)
    errors_px = []
    crashes = []
    for seed in range(50):
        try:
            report = analyze_study(seq_for(spec), PhantomScorer(spec, seed))
        except Exception as exc:  # any escape counts as a crash
            crashes.append((seed, repr(exc)))
            continue
        for key, truth in TRUTH.items():
            value = report.biometry[key]
            assert value is not None, (seed, key)
            errors_px.append(abs(value - truth) / PX_CM)
    assert crashes == []
    p95 = float(np.percentile(errors_px, 95))
    assert p95 < 5.0, p95
    print(f"c2 ok: p95 error {p95:.2f} px over 50 seeds, 0 crashes")


# ---------------------------------------------------------------- criterion 3


def test_c3_ellipse_fit_recovery_and_perimeter_oracle():
    for i in range(100):
        rng = np.random.default_rng(7000 + i)
        a = rng.uniform(5.0, 60.0)
        ratio = rng.uniform(0.2, 1.0)
        b = a * ratio
        theta = rng.uniform(0.0, math.pi)
        cx, cy = rng.uniform(-50.0, 50.0, 2)

        t = np.linspace(0.0, 2.0 * math.pi, 40, endpoint=False)
        x = cx + a * np.cos(t) * math.cos(theta) - b * np.sin(t) * math.sin(theta)
        y = cy + a * np.cos(t) * math.sin(theta) + b * np.sin(t) * math.cos(theta)
        e = fit_ellipse_lsq(np.column_stack([x, y]))

        assert e.a == pytest.approx(a, rel=1e-6)
        assert e.b == pytest.approx(b, rel=1e-6)
        assert math.hypot(e.center[0] - cx, e.center[1] - cy) < 1e-6 * a
        if ratio <= 0.98:  # orientation stops being identifiable as b -> a
            d = abs(e.theta - theta) % math.pi
            assert min(d, math.pi - d) < 1e-6

        quarter, quad_err = integrate.quad(
            lambda s: math.sqrt((a * math.sin(s)) ** 2 + (b * math.cos(s)) ** 2),
            0.0,
            math.pi / 2.0,
        )
        perim = 4.0 * quarter
        assert quad_err < 1e-7 * perim  # quadrature itself must be trustworthy
        assert abs(ellipse_perimeter(e) - perim) <= 1e-4 * perim
    print("c3 ok: 100 random ellipses recovered, perimeter within 1e-4 of quadrature")


# ---------------------------------------------------------------- criterion 4

CROSS_SE = np.zeros((5, 5), dtype=bool)
CROSS_SE[2, :] = True
CROSS_SE[:, 2] = True


def loop_open(m):
    # outside the grid counts as background for both passes
    h, w = m.shape
    eroded = np.zeros_like(m)
    pad = np.pad(m, 2)
    for i in range(h):
        for j in range(w):
            eroded[i, j] = 1 if pad[i : i + 5, j : j + 5][CROSS_SE].min() == 1 else 0
    out = np.zeros_like(m)
    pad = np.pad(eroded, 2)
    for i in range(h):
        for j in range(w):
            out[i, j] = 1 if pad[i : i + 5, j : j + 5][CROSS_SE].max() == 1 else 0
    return out


def loop_median(m):
    # edge replication, majority of the 169 samples
    h, w = m.shape
    pad = np.pad(m, 6, mode="edge")
    out = np.zeros_like(m)
    for i in range(h):
        for j in range(w):
            out[i, j] = 1 if int(pad[i : i + 13, j : j + 13].sum()) >= 85 else 0
    return out


def test_c4_morphology_matches_double_loop_oracles():
    for k in range(200):
        rng = np.random.default_rng(9000 + k)
        fill = 0.15 + 0.7 * (k % 8) / 7.0
        m = (rng.random((64, 64)) < fill).astype(np.uint8)
        assert np.array_equal(open_cross5(m), loop_open(m)), k
        assert np.array_equal(median_smooth13(m), loop_median(m)), k
    print("c4 ok: open/median exact on 200 random 64x64 masks")


# ---------------------------------------------------------------- criterion 5


def oracle_ga(hc, bpd, ac, fl):
    with mp.workdps(50):
        hc, bpd, ac, fl = (mp.mpf(v) for v in (hc, bpd, ac, fl))
        c = lambda s: mp.mpf(s)
        return float(
            c("10.6")
            - c("0.168") * bpd
            + c("0.045") * hc
            + c("0.03") * ac
            + c("0.058") * fl
            + c("0.002") * bpd * bpd
            + c("0.002") * fl * fl
            + c("0.0005") * bpd * ac
            - c("0.005") * bpd * fl
            - c("0.0002") * hc * ac
            + c("0.0008") * hc * fl
            + c("0.0005") * ac * fl
        )


def oracle_efw(hc, ac, fl):
    with mp.workdps(50):
        hc, ac, fl = (mp.mpf(v) for v in (hc, ac, fl))
        c = lambda s: mp.mpf(s)
        expo = c("1.326") - c("0.00326") * ac * fl + c("0.0107") * hc + c("0.0438") * ac + c("0.158") * fl
        return float(mp.power(10, expo))


def test_c5_growth_formulas_pinned_to_high_precision_oracle():
    rng = np.random.default_rng(5)
    for _ in range(100):
        hc = float(rng.uniform(10.0, 40.0))
        bpd = float(rng.uniform(3.0, 11.0))
        ac = float(rng.uniform(10.0, 40.0))
        fl = float(rng.uniform(1.0, 8.0))
        ga = estimate_ga(hc, bpd, ac, fl).weeks
        assert abs(ga - oracle_ga(hc, bpd, ac, fl)) <= 1e-12 * max(1.0, ga)
        efw = estimate_efw(hc, ac, fl).grams
        assert abs(efw - oracle_efw(hc, ac, fl)) <= 1e-12 * efw

    # golden vectors, oracle-first: the constants below reproduce the oracle
    assert oracle_ga(26.0, 7.0, 24.0, 5.0) == pytest.approx(11.7002, abs=1e-12)
    assert estimate_ga(26.0, 7.0, 24.0, 5.0).weeks == pytest.approx(11.7002, abs=1e-9)
    gold_efw = oracle_efw(26.0, 24.0, 5.0)
    assert gold_efw == pytest.approx(10.0 ** 3.0542, rel=1e-9)
    assert abs(gold_efw - 1132.9) < 0.05
    assert estimate_efw(26.0, 24.0, 5.0).grams == pytest.approx(gold_efw, rel=1e-12)

    # weight must grow with each measurement inside the regression's domain
    for hc in (10.0, 15.0, 22.0, 30.0, 35.0):
        assert estimate_efw(hc + 0.5, 24.0, 5.0).grams > estimate_efw(hc, 24.0, 5.0).grams
    for fl in (1.0, 4.0, 8.0):
        for ac in (10.0, 20.0, 30.0, 37.0):
            assert estimate_efw(26.0, ac + 0.5, fl).grams > estimate_efw(26.0, ac, fl).grams
    for ac in (10.0, 24.0, 38.0):
        for fl in (1.0, 3.0, 5.0, 7.5):
            assert estimate_efw(26.0, ac, fl + 0.25).grams > estimate_efw(26.0, ac, fl).grams
    print("c5 ok: formulas match 50-digit oracle at 1e-12, goldens and monotonicity hold")


# ---------------------------------------------------------------- criterion 6


def test_c6_metric_identities_and_brute_force_report():
    rng = np.random.default_rng(66)
    for _ in range(1000):
        fa, fb = rng.uniform(0.05, 0.95, 2)
        a = rng.random((24, 24)) < fa
        b = rng.random((24, 24)) < fb
        i = iou(a, b)
        assert abs(dice(a, b) - 2.0 * i / (1.0 + i)) <= 1e-12
    for _ in range(100):
        a = rng.random((24, 24)) < 0.5
        b = rng.random((24, 24)) < 0.5
        assert abs(dice_loss(a, b, eps=1e-12) - (1.0 - dice(a, b))) <= 1e-9

    names = ("head", "abdomen", "femur", "background")
    for s in range(100):
        rng2 = np.random.default_rng(6600 + s)
        n = int(rng2.integers(5, 40))
        preds = [names[v] for v in rng2.integers(0, 4, n)]
        labels = [names[v] for v in rng2.integers(0, 4, n)]
        rep = classification_report(preds, labels)
        classes = sorted(set(preds) | set(labels))
        assert rep["classes"] == classes
        sums = {"accuracy": 0.0, "precision": 0.0, "recall": 0.0, "f1": 0.0}
        for cls in classes:
            tp = sum(1 for p, t in zip(preds, labels) if t == cls and p == cls)
            fn = sum(1 for p, t in zip(preds, labels) if t == cls and p != cls)
            fp = sum(1 for p, t in zip(preds, labels) if t != cls and p == cls)
            tn = n - tp - fn - fp
            got = rep["per_class"][cls]
            assert (got["tp"], got["fp"], got["tn"], got["fn"]) == (tp, fp, tn, fn)
            acc = (tp + tn) / n
            prec = tp / (tp + fp) if tp + fp else 0.0
            rec = tp / (tp + fn) if tp + fn else 0.0
            f1 = 2.0 * prec * rec / (prec + rec) if prec + rec else 0.0
            for key, want in (("accuracy", acc), ("precision", prec), ("recall", rec), ("f1", f1)):
                assert got[key] == pytest.approx(want, abs=1e-12)
                sums[key] += want
        for key, total in sums.items():
            assert rep["macro"][key] == pytest.approx(total / len(classes), abs=1e-12)
    print("c6 ok: dice identity x1000, report equals brute-force tally x100")


# ---------------------------------------------------------------- criterion 7

READER_TABLE = [  # 6 cases x 4 readers
    [10.0, 10.4, 9.8, 10.1],
    [12.3, 12.0, 12.6, 12.1],
    [8.7, 8.9, 8.6, 9.0],
    [11.2, 11.0, 11.4, 11.3],
    [9.5, 9.9, 9.4, 9.6],
    [10.8, 10.5, 11.0, 10.9],
]


def table_from(matrix):
    return RatingsTable.from_records(
        [
            (f"r{j}", f"c{i}", 1, matrix[i][j])
            for i in range(len(matrix))
            for j in range(len(matrix[0]))
        ]
    )


def hand_mean_squares(matrix):
    m = np.asarray(matrix, dtype=float)
    n, k = m.shape
    grand = m.mean()
    msr = k * ((m.mean(axis=1) - grand) ** 2).sum() / (n - 1)
    msc = n * ((m.mean(axis=0) - grand) ** 2).sum() / (k - 1)
    resid = m - m.mean(axis=1)[:, None] - m.mean(axis=0)[None, :] + grand
    mse = (resid**2).sum() / ((n - 1) * (k - 1))
    return msr, msc, mse


def test_c7_agreement_statistics_match_hand_oracles():
    n, k = 6, 4
    msr, msc, mse = hand_mean_squares(READER_TABLE)
    want = (msr - mse) / (msr + (k - 1) * mse + k * (msc - mse) / n)
    assert abs(icc(table_from(READER_TABLE), 1) - want) <= 1e-9

    groups = [list(col) for col in zip(*READER_TABLE)]
    grand = sum(v for g in groups for v in g) / (n * k)
    ssb = sum(len(g) * (sum(g) / len(g) - grand) ** 2 for g in groups)
    ssw = sum((v - sum(g) / len(g)) ** 2 for g in groups for v in g)
    f_hand = (ssb / (k - 1)) / (ssw / (k * (n - 1)))
    res = anova_oneway(groups)
    assert res.df == (k - 1, k * (n - 1))
    assert abs(res.f - f_hand) <= 1e-9
    assert abs(res.p - stats.f.sf(f_hand, *res.df)) <= 1e-9

    flat = anova_oneway([[5.0, 5.0, 5.0], [5.0, 5.0, 5.0]])
    assert flat.f == 0.0 and flat.p == 1.0

    unanimous = [[row[0]] * 4 for row in READER_TABLE]
    assert icc(table_from(unanimous), 1) == 1.0

    # a reader who repeats every value across readings deviates from
    # themselves by exactly nothing
    records = []
    for i, v in enumerate([26.0, 24.5, 27.2]):
        for reading in (1, 2):
            records.append(("model", f"c{i}", reading, v))
    assert intra_observer(RatingsTable.from_records(records), "model") == (0.0, 0.0)
    print("c7 ok: icc/anova within 1e-9 of hand oracles, degenerate cases exact")


# ---------------------------------------------------------------- criterion 8

ENGINEERED_SCORES = [
    (0, 0.97, 0.01, 0.01, 0.01),
    (1, 0.95, 0.02, 0.02, 0.01),
    (2, 0.90, 0.04, 0.03, 0.03),  # sits exactly on the gate
    (3, 0.01, 0.96, 0.02, 0.01),
    (4, 0.02, 0.01, 0.91, 0.06),
    (5, 0.01, 0.01, 0.93, 0.05),
]


def engineered_study(tmp_path):
    spec = make_phantom_spec(
        part_slots={0: "head", 1: "head", 2: "head", 3: "abdomen", 4: "femur", 5: "femur"}
    )
    d = tmp_path / "study"
    write_phantom_study(spec, seed=0, out_dir=d)
    lines = ["frame_index,p_head,p_abdomen,p_femur,p_background"]
    lines += [",".join(str(v) for v in row) for row in ENGINEERED_SCORES]
    (d / "scores.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return d


def test_c8_selection_is_gated_argmax_and_thread_invariant(tmp_path):
    d = engineered_study(tmp_path)
    report, frames_csv = analyze_study_full(load_study(d), FixtureScorer(d))

    rows = list(csv.reader(io.StringIO(frames_csv)))[1:]
    best = {}
    for frame, part, *_rest, gated, _meas, comp in rows:
        if gated == "1" and comp:
            cand = (float(comp), -int(frame))
            if part not in best or cand > best[part]:
                best[part] = cand
    expect = {part: -neg for part, (_c, neg) in best.items()}
    assert expect == {"head": 0, "abdomen": 3, "femur": 5}
    assert {p: w["frame_index"] for p, w in report.winners.items()} == expect

    boundary = rows[2]
    assert boundary[1] == "head" and boundary[6] == "0" and boundary[8] == ""

    outputs = []
    for threads in ("1", "4", "16"):
        out = tmp_path / f"r{threads}.json"
        code = cli_main(
            [
                "analyze",
                "--input", str(d),
                "--backend", f"fixture:{d}",
                "--output", str(out),
                "--threads", threads,
                "--quiet",
            ]
        )
        assert code == 0
        obj = json.loads(out.read_text(encoding="utf-8"))
        obj.pop("timing_ms")
        outputs.append(json.dumps(obj, sort_keys=True))
    assert outputs[0] == outputs[1] == outputs[2]
    print("c8 ok: winners equal brute-force gated argmax, 0.9 excluded, thread invariant")


# ---------------------------------------------------------------- criterion 9


def test_c9_every_command_is_deterministic_and_report_round_trips(tmp_path):
    # serve is the only command with no machine output to compare; the four
    # below cover every file the tool can produce
    spec_file = tmp_path / "spec.json"
    spec_file.write_text(
        json.dumps(spec_to_dict(make_phantom_spec(sigma=0.15))), encoding="utf-8"
    )

    pa, pb = tmp_path / "pa", tmp_path / "pb"
    for out in (pa, pb):
        code = cli_main(
            ["phantom", "--spec", str(spec_file), "--out", str(out), "--seed", "5", "--quiet"]
        )
        assert code == 0
    names = sorted(p.name for p in pa.iterdir())
    assert names == sorted(p.name for p in pb.iterdir()) and len(names) == 16
    for name in names:
        assert (pa / name).read_bytes() == (pb / name).read_bytes(), name

    reports, csvs = [], []
    for tag in ("1", "2"):
        rp, cp = tmp_path / f"rep{tag}.json", tmp_path / f"frames{tag}.csv"
        code = cli_main(
            [
                "analyze",
                "--input", str(pa),
                "--backend", f"fixture:{pa}",
                "--output", str(rp),
                "--frames-csv", str(cp),
                "--quiet",
            ]
        )
        assert code == 0
        reports.append(rp.read_text(encoding="utf-8"))
        csvs.append(cp.read_bytes())
    strip = lambda text: json.dumps(
        {k: v for k, v in json.loads(text).items() if k != "timing_ms"}, sort_keys=True
    )
    assert strip(reports[0]) == strip(reports[1])
    assert csvs[0] == csvs[1]

    # the written report parses back into an equal report object
    assert report_json(StudyReport.from_dict(json.loads(reports[0]))) == reports[0]

    ratings = tmp_path / "ratings.csv"
    lines = ["reader,case,reading,kind,value_cm"]
    for i, v in enumerate([26.0, 24.5, 27.2, 25.1]):
        for reader in ("model", "es1"):
            for reading in (1, 2):
                lines.append(f"{reader},c{i},{reading},HC,{v + (0.1 if reader == 'es1' else 0.0)}")
    ratings.write_text("\n".join(lines) + "\n", encoding="utf-8")
    agree_out = []
    for tag in ("1", "2"):
        sp = tmp_path / f"stats{tag}.json"
        code = cli_main(
            ["agree", "--ratings", str(ratings), "--reference", "model", "--out", str(sp), "--quiet"]
        )
        assert code == 0
        agree_out.append(sp.read_bytes())
    assert agree_out[0] == agree_out[1]

    eval_out = []
    for tag in ("1", "2"):
        ep = tmp_path / f"metrics{tag}.json"
        code = cli_main(
            [
                "evaluate",
                "--backend", f"fixture:{pa}",
                "--truth", str(pa),
                "--out", str(ep),
                "--quiet",
            ]
        )
        assert code == 0
        eval_out.append(ep.read_bytes())
    assert eval_out[0] == eval_out[1]
    print("c9 ok: phantom/analyze/agree/evaluate byte-stable, report round-trips")
