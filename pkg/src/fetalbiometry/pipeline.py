"""Study orchestration: score, gate, postprocess, measure, select, estimate.

Per-frame work (scoring, mask cleanup, measurement) runs in a thread pool;
the reduction to winners and the report is single-threaded and canonical,
so the report is byte-identical for any thread count. A scorer failure on
one frame downgrades to a warning and the frame is skipped; the study only
fails when every frame does.
"""

from __future__ import annotations

import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from . import metrics as metrics_mod
from .backend import FixtureScorer, FrameScorer
from .biometry import (
    BiometrySet,
    BodyPart,
    MeasureKind,
    measure_abdomen,
    measure_femur,
    measure_head,
)
from .errors import (
    AllFramesFailed,
    BadConfig,
    BadFixture,
    FetalBiometryError,
    Unmeasurable,
)
from .estimation import complete_or_skip, ga_is_implausible
from .ingest import FrameSequence, load_study, resize_to_model
from .morphology import median_smooth13, open_cross5, threshold, upsample_mask
from .planes import (
    CandidateFrame,
    FrameScore,
    PlaneSelection,
    finalize_candidates,
    measure_candidate,
    winners,
)

REPORT_SCHEMA = 1

FRAMES_CSV_HEADER = "frame,part,p_head,p_abd,p_fem,p_bg,gated,measurement_cm,composite"


@dataclass(frozen=True)
class AnalysisConfig:
    """Tunable constants of the analysis chain.

    threads controls execution only and is deliberately excluded from the
    report's config echo: reports must be identical for any thread count.
    """

    gate_threshold: float = 0.9
    mask_threshold: float = 0.6
    rdp_eps_rel: float = 0.0
    femur_weights: tuple[float, float] = (0.5, 0.5)
    ellipse_weights: tuple[float, float, float] = (0.4, 0.3, 0.3)
    dice_eps: float = 1e-6
    threads: int | None = None

    def __post_init__(self) -> None:
        for name in ("gate_threshold", "mask_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise BadConfig(f"{name} must lie in (0, 1), got {v}")
        if not 0.0 <= self.rdp_eps_rel < 1.0:
            raise BadConfig(f"rdp_eps_rel must lie in [0, 1), got {self.rdp_eps_rel}")
        if len(self.femur_weights) != 2 or len(self.ellipse_weights) != 3:
            raise BadConfig("femur weights need 2 entries, ellipse weights 3")
        for name in ("femur_weights", "ellipse_weights"):
            w = getattr(self, name)
            if any(v < 0 for v in w):
                raise BadConfig(f"{name} must be non-negative, got {w}")
            if abs(sum(w) - 1.0) > 1e-9:
                raise BadConfig(f"{name} must sum to 1 within 1e-9, got {sum(w)}")
        if self.dice_eps <= 0:
            raise BadConfig(f"dice_eps must be positive, got {self.dice_eps}")
        if self.threads is not None and self.threads < 1:
            raise BadConfig(f"threads must be >= 1, got {self.threads}")

    def echo(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "threads":
                continue
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


@dataclass(frozen=True)
class FrameOutcome:
    """Everything the reduce step needs from one frame."""

    frame_index: int
    probs: tuple[float, float, float, float] | None = None
    candidate: CandidateFrame | None = None
    error: str | None = None  # scorer/validation failure (counts toward all-failed)
    skip_reason: str | None = None  # gated but unmeasurable


@dataclass(frozen=True)
class StudyReport:
    study_id: str
    schema: int
    config: dict
    winners: dict  # part name -> winner summary dict
    biometry: dict
    warnings: tuple[str, ...]
    timing_ms: float

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "study_id": self.study_id,
            "config": dict(self.config),
            "winners": json.loads(json.dumps(self.winners)),
            "biometry": dict(self.biometry),
            "warnings": list(self.warnings),
            "timing_ms": self.timing_ms,
        }

    @staticmethod
    def from_dict(obj: Mapping) -> "StudyReport":
        return StudyReport(
            study_id=obj["study_id"],
            schema=int(obj["schema"]),
            config=dict(obj["config"]),
            winners=dict(obj["winners"]),
            biometry=dict(obj["biometry"]),
            warnings=tuple(obj["warnings"]),
            timing_ms=float(obj["timing_ms"]),
        )


def report_json(report: StudyReport) -> str:
    """Canonical serialization: sorted keys, two-space indent, trailing newline."""
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def _validate_scorer_output(
    probs: np.ndarray, grid: np.ndarray, mask_size: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (4,):
        raise BadFixture(f"scorer returned {p.shape} probabilities, expected (4,)")
    if (p < 0).any() or (p > 1).any():
        raise BadFixture(f"scorer probabilities outside [0, 1]: {p}")
    total = float(p.sum())
    if abs(total - 1.0) > 1e-3:
        raise BadFixture(f"scorer probabilities sum to {total}")
    g = np.asarray(grid, dtype=np.float64)
    if g.shape != tuple(mask_size):
        raise BadFixture(f"scorer grid shape {g.shape}, declared {tuple(mask_size)}")
    if float(g.min()) < 0.0 or float(g.max()) > 1.0:
        raise BadFixture("scorer grid values outside [0, 1]")
    return p / total, g


def _process_frame(
    idx: int,
    seq: FrameSequence,
    scorer: FrameScorer,
    config: AnalysisConfig,
) -> FrameOutcome:
    try:
        frame_224 = resize_to_model(seq.frames[idx])
        probs, grid = scorer.score(idx, frame_224)
        probs, grid = _validate_scorer_output(probs, grid, scorer.info.mask_size)
    except FetalBiometryError as exc:
        return FrameOutcome(frame_index=idx, error=f"{exc} [{exc.kind}]")
    score = FrameScore(frame_index=idx, class_probs=tuple(float(v) for v in probs))
    native = upsample_mask(grid, seq.meta.native_size)
    raw_mask = threshold(native, config.mask_threshold)
    clean = median_smooth13(open_cross5(raw_mask))
    try:
        candidate = measure_candidate(
            score,
            clean,
            seq.meta.pixel_spacing_mm,
            raw_mask=raw_mask,
            gate_threshold=config.gate_threshold,
            rdp_eps_rel=config.rdp_eps_rel,
        )
    except Unmeasurable as exc:
        return FrameOutcome(frame_index=idx, probs=score.class_probs, skip_reason=str(exc))
    return FrameOutcome(frame_index=idx, probs=score.class_probs, candidate=candidate)


def _run_frames(
    seq: FrameSequence, scorer: FrameScorer, config: AnalysisConfig
) -> list[FrameOutcome]:
    indices = range(len(seq))
    workers = config.threads or os.cpu_count() or 1
    if not scorer.info.parallel_safe:
        workers = 1
    if workers == 1:
        return [_process_frame(i, seq, scorer, config) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda i: _process_frame(i, seq, scorer, config), indices))


def _winner_entry(c: CandidateFrame) -> dict:
    values = {c.measurement.kind.value: c.measurement.value_cm}
    if c.companion is not None:
        values[c.companion.kind.value] = c.companion.value_cm
    return {
        "frame_index": c.frame_index,
        "class_score": c.class_score,
        "ellipse_similarity": c.ellipse_similarity,
        "norm_measurement": c.norm_measurement,
        "composite": c.composite,
        "values_cm": values,
    }


def _selection_to_biometry(selection: PlaneSelection) -> BiometrySet:
    hc = bpd = ac = fl = None
    if selection.head is not None:
        hc = selection.head.measurement.value_cm
        bpd = selection.head.companion.value_cm if selection.head.companion else None
    if selection.abdomen is not None:
        ac = selection.abdomen.measurement.value_cm
    if selection.femur is not None:
        fl = selection.femur.measurement.value_cm
    return BiometrySet(hc_cm=hc, bpd_cm=bpd, ac_cm=ac, fl_cm=fl)


def analyze_study_full(
    seq: FrameSequence, scorer: FrameScorer, config: AnalysisConfig | None = None
) -> tuple[StudyReport, str]:
    """Analyze one study; returns (report, per-frame CSV text).

    The CSV has one row per frame with the raw class probabilities, the
    gate outcome, and the candidate measurement/composite when present.
    """
    cfg = config or AnalysisConfig()
    t0 = time.perf_counter()
    expected = scorer.info.frame_count
    if expected is not None and expected != len(seq):
        raise BadFixture(
            f"backend provides {expected} frames, study has {len(seq)}"
        )

    outcomes = _run_frames(seq, scorer, cfg)
    warnings: list[str] = []
    failed = [o for o in outcomes if o.error is not None]
    if len(failed) == len(outcomes):
        raise AllFramesFailed(
            f"all {len(outcomes)} frames failed scoring; first error: {failed[0].error}"
        )
    for o in outcomes:
        if o.error is not None:
            warnings.append(f"frame {o.frame_index}: scoring failed: {o.error}")
        elif o.skip_reason is not None:
            warnings.append(f"frame {o.frame_index}: gated but unmeasurable: {o.skip_reason}")

    raw_candidates = [o.candidate for o in outcomes if o.candidate is not None]
    candidates = finalize_candidates(raw_candidates, cfg.femur_weights, cfg.ellipse_weights)
    selection = winners(candidates)
    if selection.head is None and selection.abdomen is None and selection.femur is None:
        warnings.append("no standard planes found: no frame passed the gate")

    bio = complete_or_skip(_selection_to_biometry(selection))
    if bio.ga_weeks is not None and ga_is_implausible(bio.ga_weeks, bio.bpd_cm):
        warnings.append(
            f"estimated GA {bio.ga_weeks:.2f} weeks is implausible for BPD "
            f"{bio.bpd_cm:.2f} cm; the printed regression is known to read low"
        )

    report = StudyReport(
        study_id=seq.meta.study_id,
        schema=REPORT_SCHEMA,
        config=cfg.echo(),
        winners={
            part.value: _winner_entry(c)
            for part, c in (
                (BodyPart.HEAD, selection.head),
                (BodyPart.ABDOMEN, selection.abdomen),
                (BodyPart.FEMUR, selection.femur),
            )
            if c is not None
        },
        biometry={
            "hc_cm": bio.hc_cm,
            "bpd_cm": bio.bpd_cm,
            "ac_cm": bio.ac_cm,
            "fl_cm": bio.fl_cm,
            "ga_weeks": bio.ga_weeks,
            "efw_g": bio.efw_g,
            "efw_percentile": None,  # reserved for a growth-chart lookup
        },
        warnings=tuple(warnings),
        timing_ms=(time.perf_counter() - t0) * 1000.0,
    )

    by_index = {c.frame_index: c for c in candidates}
    buf = io.StringIO()
    buf.write(FRAMES_CSV_HEADER + "\n")
    for o in outcomes:
        if o.probs is None:
            buf.write(f"{o.frame_index},error,,,,,0,,\n")
            continue
        part = BodyPart(
            ("head", "abdomen", "femur", "background")[int(np.argmax(o.probs))]
        )
        cand = by_index.get(o.frame_index)
        gated = 1 if (cand is not None or o.skip_reason is not None) else 0
        meas = repr(cand.measurement.value_cm) if cand is not None else ""
        comp = repr(cand.composite) if cand is not None else ""
        probs_txt = ",".join(repr(p) for p in o.probs)
        buf.write(f"{o.frame_index},{part.value},{probs_txt},{gated},{meas},{comp}\n")
    return report, buf.getvalue()


def analyze_study(
    seq: FrameSequence, scorer: FrameScorer, config: AnalysisConfig | None = None
) -> StudyReport:
    """Analyze one study and return its report."""
    return analyze_study_full(seq, scorer, config)[0]


def evaluate_backend(
    scorer: FrameScorer,
    truth_dir: str | Path,
    config: AnalysisConfig | None = None,
) -> dict:
    """Score a backend against a ground-truth directory.

    The truth directory is fixture-shaped (scores.csv + mask PNGs),
    optionally with study.json (frames, pixel spacing) or ground_truth.json
    (spacing fallback). Truth measurements are read by running the truth
    masks through the same measurement chain as predictions, so a backend
    replaying the truth exactly scores 0 mm error by construction; the
    analytic-vs-pipeline gap of a phantom is a property of the pipeline,
    tested elsewhere, not a property of the backend under evaluation.
    Emits per-class IoU/Dice, a classification report, and the mean
    absolute measurement error per part in mm.
    """
    cfg = config or AnalysisConfig()
    root = Path(truth_dir)
    truth = FixtureScorer(root)
    n = truth.info.frame_count
    if scorer.info.frame_count is not None and scorer.info.frame_count != n:
        raise BadFixture(
            f"backend provides {scorer.info.frame_count} frames, truth has {n}"
        )

    spacing = (1.0, 1.0)
    gt_path = root / "ground_truth.json"
    if gt_path.is_file():
        gt = json.loads(gt_path.read_text(encoding="utf-8"))
        spacing = tuple(float(v) for v in gt["pixel_spacing_mm"])
    seq: FrameSequence | None = None
    if (root / "study.json").is_file():
        seq = load_study(root)
        spacing = seq.meta.pixel_spacing_mm

    part_names = ("head", "abdomen", "femur", "background")
    preds: list[str] = []
    labels: list[str] = []
    seg: dict[str, list[tuple[float, float]]] = {p: [] for p in part_names[:3]}
    err_mm: dict[str, list[float]] = {"HC": [], "BPD": [], "AC": [], "FL": []}
    unmeasured = 0

    measurers = {
        "head": lambda m: {
            k.value: v
            for k, v in zip(
                (MeasureKind.HC, MeasureKind.BPD),
                [
                    x.value_cm
                    for x in measure_head(m, spacing, rdp_eps_rel=cfg.rdp_eps_rel)
                ],
            )
        },
        "abdomen": lambda m: {
            "AC": measure_abdomen(m, spacing, rdp_eps_rel=cfg.rdp_eps_rel).value_cm
        },
        "femur": lambda m: {"FL": measure_femur(m, spacing).value_cm},
    }

    for idx in range(n):
        if seq is not None:
            frame = resize_to_model(seq.frames[idx])
        else:
            frame = np.zeros((224, 224))
        t_probs, t_grid = truth.score(idx, frame)
        p_probs, p_grid = scorer.score(idx, frame)
        p_probs, p_grid = _validate_scorer_output(p_probs, p_grid, scorer.info.mask_size)

        true_part = part_names[int(np.argmax(t_probs))]
        pred_part = part_names[int(np.argmax(p_probs))]
        labels.append(true_part)
        preds.append(pred_part)

        t_mask = threshold(t_grid, 0.5)
        p_native = upsample_mask(p_grid, t_mask.shape)
        p_mask = threshold(p_native, cfg.mask_threshold)
        if true_part != "background":
            seg[true_part].append(
                (metrics_mod.iou(p_mask, t_mask), metrics_mod.dice(p_mask, t_mask))
            )
            try:
                truth_vals: dict[str, float] | None = measurers[true_part](
                    median_smooth13(open_cross5(t_mask))
                )
            except Unmeasurable:
                truth_vals = None
            if truth_vals:
                try:
                    pred_vals = measurers[true_part](
                        median_smooth13(open_cross5(p_mask))
                    )
                except Unmeasurable:
                    pred_vals = None
                    unmeasured += 1
                if pred_vals is not None:
                    for kind, tv in truth_vals.items():
                        if kind in pred_vals:
                            err_mm[kind].append(abs(pred_vals[kind] - tv) * 10.0)

    seg_out = {}
    ious, dices = [], []
    for part in part_names[:3]:
        pairs = seg[part]
        if pairs:
            pi = [x[0] for x in pairs]
            pd = [x[1] for x in pairs]
            seg_out[part] = {
                "iou": float(np.mean(pi)),
                "dice": float(np.mean(pd)),
                "n": len(pairs),
            }
            ious.extend(pi)
            dices.extend(pd)
        else:
            seg_out[part] = {"iou": None, "dice": None, "n": 0}

    return {
        "schema": REPORT_SCHEMA,
        "frames": n,
        "classification": json.loads(json.dumps(metrics_mod.classification_report(preds, labels))),
        "segmentation": {
            "per_class": seg_out,
            "mean_iou": float(np.mean(ious)) if ious else None,
            "mean_dice": float(np.mean(dices)) if dices else None,
        },
        "measurement_error_mm": {
            kind: (float(np.mean(v)) if v else None) for kind, v in err_mm.items()
        },
        "measurement_counts": {kind: len(v) for kind, v in err_mm.items()},
        "unmeasured_frames": unmeasured,
    }
