"""Gating, similarity, composite scoring, winner selection."""

import math
import random

import numpy as np
import pytest

from fetalbiometry import (
    BadConfig,
    BadInput,
    BodyPart,
    EllipseParams,
    FrameScore,
    Measurement,
    MeasureKind,
    RotRect,
    Unmeasurable,
    composite_score,
    gate_frame,
)
from fetalbiometry.planes import (
    ellipse_similarity,
    finalize_candidates,
    measure_candidate,
    select_best,
    winners,
)

from conftest import raster_bar, raster_ellipse

SPACING = (0.5, 0.5)


def head_score(idx, p):
    rest = (1.0 - p) / 3.0
    return FrameScore(frame_index=idx, class_probs=(p, rest, rest, rest))


def femur_score(idx, p):
    rest = (1.0 - p) / 3.0
    return FrameScore(frame_index=idx, class_probs=(rest, rest, p, rest))


def bg_score(idx):
    return FrameScore(frame_index=idx, class_probs=(0.1, 0.1, 0.1, 0.7))


# ------------------------------------------------------------------- gating


def test_gate_passes_dominant_head():
    s = FrameScore(0, (0.95, 0.02, 0.02, 0.01))
    assert gate_frame(s) is BodyPart.HEAD


def test_gate_boundary_is_strict():
    s = FrameScore(0, (0.90, 0.05, 0.03, 0.02))
    assert gate_frame(s) is None


def test_gate_background_never_passes():
    assert gate_frame(bg_score(0)) is None
    # even overwhelming background probability does not gate
    assert gate_frame(FrameScore(0, (0.01, 0.01, 0.01, 0.97))) is None


def test_gate_respects_configured_threshold():
    s = FrameScore(0, (0.85, 0.05, 0.05, 0.05))
    assert gate_frame(s) is None
    assert gate_frame(s, gate_threshold=0.8) is BodyPart.HEAD


def test_gate_monotone_in_probability():
    below = FrameScore(0, (0.9, 0.04, 0.03, 0.03))
    above = FrameScore(0, (0.91, 0.03, 0.03, 0.03))
    assert gate_frame(below) is None
    assert gate_frame(above) is BodyPart.HEAD


def test_gate_rejects_bad_threshold():
    with pytest.raises(BadConfig):
        gate_frame(head_score(0, 0.95), gate_threshold=1.5)


def test_frame_score_validation():
    with pytest.raises(BadInput):
        FrameScore(0, (0.5, 0.5, 0.5, 0.5))  # sum 2
    with pytest.raises(BadInput):
        FrameScore(0, (1.2, -0.2, 0.0, 0.0))
    with pytest.raises(BadInput):
        FrameScore(0, (0.5, 0.5))
    assert FrameScore(0, (0.2, 0.5, 0.2, 0.1)).part is BodyPart.ABDOMEN


# --------------------------------------------------------------- similarity


def test_similarity_of_exact_raster_is_near_one():
    e = EllipseParams(center=(80.0, 60.0), a=40.0, b=25.0, theta=0.5)
    mask = raster_ellipse(120, 160, a=40, b=25, theta=0.5, cx=80, cy=60)
    assert ellipse_similarity(mask, e) >= 0.98


def test_similarity_disjoint_is_zero():
    e = EllipseParams(center=(30.0, 30.0), a=10.0, b=8.0, theta=0.0)
    mask = np.zeros((120, 160), dtype=np.uint8)
    mask[100:110, 120:140] = 1
    assert ellipse_similarity(mask, e) == 0.0


def test_similarity_empty_mask_is_zero():
    e = EllipseParams(center=(30.0, 30.0), a=10.0, b=8.0, theta=0.0)
    assert ellipse_similarity(np.zeros((60, 60), dtype=np.uint8), e) == 0.0


def test_similarity_penalizes_spur():
    e = EllipseParams(center=(80.0, 60.0), a=40.0, b=25.0, theta=0.0)
    mask = raster_ellipse(120, 160, a=40, b=25, theta=0.0, cx=80, cy=60)
    spurred = mask.copy()
    spurred[55:65, 120:155] = 1  # spur sticking out of the ellipse
    assert ellipse_similarity(spurred, e) < ellipse_similarity(mask, e)


# ---------------------------------------------------------------- composite


def test_composite_femur_upper_bound():
    assert composite_score(1.0, 1.0, None, BodyPart.FEMUR) == pytest.approx(1.0, abs=1e-12)


def test_composite_head_default_weights_arithmetic():
    got = composite_score(1.0, 0.95, 0.9, BodyPart.HEAD)
    assert got == pytest.approx(0.4 * 0.95 + 0.3 * 1.0 + 0.3 * 0.9, abs=1e-12)
    assert got == pytest.approx(0.95, abs=1e-12)


def test_composite_custom_weights():
    got = composite_score(0.5, 0.8, 0.6, BodyPart.ABDOMEN, ellipse_weights=(0.6, 0.2, 0.2))
    assert got == pytest.approx(0.6 * 0.8 + 0.2 * 0.5 + 0.2 * 0.6, abs=1e-12)


def test_composite_rejects_bad_weights():
    with pytest.raises(BadConfig):
        composite_score(1.0, 1.0, None, BodyPart.FEMUR, femur_weights=(0.5, 0.6))
    with pytest.raises(BadConfig):
        composite_score(1.0, 1.0, 0.5, BodyPart.HEAD, ellipse_weights=(0.4, 0.3))
    with pytest.raises(BadConfig):
        composite_score(1.0, 1.0, 0.5, BodyPart.HEAD, ellipse_weights=(0.7, 0.6, -0.3))


def test_composite_head_requires_similarity():
    with pytest.raises(BadInput):
        composite_score(1.0, 0.95, None, BodyPart.HEAD)


def test_composite_background_rejected():
    with pytest.raises(BadInput):
        composite_score(1.0, 1.0, None, BodyPart.BACKGROUND)


# ------------------------------------------------------------ candidates


def test_measure_candidate_below_gate_is_none():
    mask = raster_ellipse(120, 160, a=30, b=20, theta=0.0, cx=80, cy=60)
    assert measure_candidate(head_score(4, 0.88), mask, SPACING) is None


def test_measure_candidate_head_carries_bpd_and_similarity():
    mask = raster_ellipse(120, 160, a=30, b=20, theta=0.0, cx=80, cy=60)
    c = measure_candidate(head_score(4, 0.93), mask, SPACING)
    assert c.part is BodyPart.HEAD
    assert c.measurement.kind is MeasureKind.HC
    assert c.companion is not None and c.companion.kind is MeasureKind.BPD
    assert 0.0 <= c.ellipse_similarity <= 1.0
    assert c.composite is None  # set by finalization, not here


def test_measure_candidate_gated_empty_mask_raises():
    with pytest.raises(Unmeasurable):
        measure_candidate(head_score(0, 0.95), np.zeros((60, 60), dtype=np.uint8), SPACING)


# ---------------------------------------------------------------- selection


def oracle_selection(cands, femur_w=(0.5, 0.5), ell_w=(0.4, 0.3, 0.3)):
    """Brute-force scoring: independent normalization, composite, argmax."""
    best = {}
    for part in {c.part for c in cands}:
        group = [c for c in cands if c.part == part]
        mx = max(c.measurement.value_cm for c in group)
        scored = []
        for c in group:
            norm = c.measurement.value_cm / mx
            if part is BodyPart.FEMUR:
                comp = femur_w[0] * c.class_score + femur_w[1] * norm
            else:
                comp = ell_w[0] * c.class_score + ell_w[1] * norm + ell_w[2] * c.ellipse_similarity
            scored.append((comp, -c.frame_index, c.frame_index))
        best[part] = max(scored)[2]
    return best


def build_video():
    """20 frames; frame 17 dominates head on every composite term."""
    frames = []
    for idx in range(20):
        if idx == 17:
            mask = raster_ellipse(120, 160, a=45, b=30, theta=0.2, cx=80, cy=60)
            frames.append((head_score(idx, 0.96), mask))
        elif idx % 3 == 0:
            a = 25 + idx // 3
            mask = raster_ellipse(120, 160, a=a, b=a - 8, theta=0.1, cx=80, cy=60)
            frames.append((head_score(idx, 0.92), mask))
        elif idx % 3 == 1:
            mask = raster_bar(120, 160, length=70 + idx, width=10, theta=0.4, cx=80, cy=60)
            frames.append((femur_score(idx, 0.93), mask))
        else:
            mask = np.zeros((120, 160), dtype=np.uint8)
            frames.append((bg_score(idx), mask))
    return frames


def test_select_best_empty_when_nothing_gates():
    frames = [(bg_score(i), np.zeros((60, 60), dtype=np.uint8)) for i in range(5)]
    sel = select_best(frames, SPACING)
    assert sel.head is None and sel.abdomen is None and sel.femur is None


def test_select_best_matches_brute_force_oracle():
    frames = build_video()
    cands = [measure_candidate(s, m, SPACING) for s, m in frames]
    cands = [c for c in cands if c is not None]
    oracle = oracle_selection(cands)
    sel = select_best(frames, SPACING)
    assert sel.head.frame_index == oracle[BodyPart.HEAD] == 17
    assert sel.femur.frame_index == oracle[BodyPart.FEMUR]
    assert sel.abdomen is None


def test_select_best_deterministic_under_shuffle():
    frames = build_video()
    sel0 = select_best(frames, SPACING)
    shuffled = frames[:]
    random.Random(42).shuffle(shuffled)
    sel1 = select_best(shuffled, SPACING)
    assert sel1.head.frame_index == sel0.head.frame_index
    assert sel1.femur.frame_index == sel0.femur.frame_index
    assert sel1.head.composite == sel0.head.composite


def test_tie_breaks_to_lowest_frame_index():
    mask = raster_ellipse(120, 160, a=30, b=20, theta=0.0, cx=80, cy=60)
    # identical probabilities and masks at indices 3 and 9: equal composites
    frames = [(head_score(3, 0.94), mask), (head_score(9, 0.94), mask)]
    sel = select_best(frames, SPACING)
    assert sel.head.frame_index == 3


def test_winner_invariant_under_affine_composite_rescale():
    from dataclasses import replace

    frames = build_video()
    cands = [c for s, m in frames if (c := measure_candidate(s, m, SPACING)) is not None]
    final = finalize_candidates(cands)
    base = winners(final)
    scaled = [replace(c, composite=3.0 * c.composite + 0.2) for c in final]
    assert winners(scaled).head.frame_index == base.head.frame_index
    assert winners(scaled).femur.frame_index == base.femur.frame_index


def test_winners_requires_finalized_candidates():
    mask = raster_ellipse(120, 160, a=30, b=20, theta=0.0, cx=80, cy=60)
    c = measure_candidate(head_score(0, 0.95), mask, SPACING)
    with pytest.raises(BadInput):
        winners([c])


def test_select_best_respects_custom_weights():
    mask_small = raster_ellipse(120, 160, a=26, b=18, theta=0.0, cx=80, cy=60)
    mask_big = raster_ellipse(120, 160, a=44, b=30, theta=0.0, cx=80, cy=60)
    # frame 0: higher class score, small structure; frame 1: bigger structure
    frames = [(head_score(0, 0.97), mask_small), (head_score(1, 0.92), mask_big)]
    by_class = select_best(frames, SPACING, ellipse_weights=(1.0, 0.0, 0.0))
    by_size = select_best(frames, SPACING, ellipse_weights=(0.0, 1.0, 0.0))
    assert by_class.head.frame_index == 0
    assert by_size.head.frame_index == 1
