"""Standard-plane gating and best-frame selection.

A frame becomes a candidate when one of the three body-part probabilities
strictly exceeds the gate threshold. Every candidate gets measured, and the
winner per part maximizes a composite score:

    femur:          0.5 * class_score + 0.5 * normalized measurement
    head/abdomen:   0.4 * class_score + 0.3 * normalized measurement
                    + 0.3 * ellipse-mask similarity

Measurements are normalized to (0, 1] by the per-video maximum within the
same part. Ties break to the lowest frame index. The similarity term is the
IoU between the fitted ellipse raster and the thresholded segmentation
before morphology: an irregular, spur-laden mask can match the ellipse in
raw area but not in overlap, which is exactly what the term penalizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .biometry import (
    BodyPart,
    Measurement,
    measure_abdomen,
    measure_femur,
    measure_head,
)
from .errors import BadConfig, BadInput
from .geometry import EllipseParams

PART_ORDER = (BodyPart.HEAD, BodyPart.ABDOMEN, BodyPart.FEMUR, BodyPart.BACKGROUND)

DEFAULT_GATE = 0.9
DEFAULT_FEMUR_WEIGHTS = (0.5, 0.5)
DEFAULT_ELLIPSE_WEIGHTS = (0.4, 0.3, 0.3)


@dataclass(frozen=True)
class FrameScore:
    """Per-frame class probabilities over (head, abdomen, femur, background)."""

    frame_index: int
    class_probs: tuple[float, float, float, float]

    def __post_init__(self) -> None:
        p = self.class_probs
        if len(p) != 4:
            raise BadInput(f"class_probs must have 4 entries, got {len(p)}")
        if any(not (0.0 <= v <= 1.0) for v in p):
            raise BadInput(f"class_probs must lie in [0, 1], got {p}")
        if abs(sum(p) - 1.0) > 1e-6:
            raise BadInput(f"class_probs must sum to 1 within 1e-6, got sum {sum(p)}")

    @property
    def part(self) -> BodyPart:
        return PART_ORDER[int(np.argmax(self.class_probs))]


@dataclass(frozen=True)
class CandidateFrame:
    """A gated frame with its measurement and composite score."""

    frame_index: int
    part: BodyPart
    class_score: float
    measurement: Measurement
    companion: Measurement | None = None  # BPD alongside HC for head frames
    ellipse_similarity: float | None = None
    norm_measurement: float | None = None
    composite: float | None = None

    def __post_init__(self) -> None:
        wants_sim = self.part in (BodyPart.HEAD, BodyPart.ABDOMEN)
        if wants_sim != (self.ellipse_similarity is not None):
            raise BadInput(
                f"ellipse_similarity must be present iff part is head/abdomen, "
                f"part={self.part.value}"
            )


@dataclass(frozen=True)
class PlaneSelection:
    head: CandidateFrame | None = None
    abdomen: CandidateFrame | None = None
    femur: CandidateFrame | None = None

    def winner(self, part: BodyPart) -> CandidateFrame | None:
        return {
            BodyPart.HEAD: self.head,
            BodyPart.ABDOMEN: self.abdomen,
            BodyPart.FEMUR: self.femur,
        }[part]


def gate_frame(score: FrameScore, gate_threshold: float = DEFAULT_GATE) -> BodyPart | None:
    """The body part whose probability strictly exceeds the gate, if any.

    Background cannot gate; a probability equal to the threshold does not
    pass (strict inequality).
    """
    if not 0.0 < gate_threshold < 1.0:
        raise BadConfig(f"gate threshold must lie in (0, 1), got {gate_threshold}")
    for part, p in zip(PART_ORDER[:3], score.class_probs[:3]):
        if p > gate_threshold:
            return part
    return None


def ellipse_similarity(mask: np.ndarray, e: EllipseParams) -> float:
    """IoU between the filled ellipse raster and the mask; 0 for an empty mask."""
    m = np.asarray(mask) != 0
    if m.ndim != 2:
        raise BadInput(f"expected 2D mask, got shape {m.shape}")
    if not m.any():
        return 0.0
    h, w = m.shape
    yy, xx = np.ogrid[:h, :w]
    dx = xx - e.center[0]
    dy = yy - e.center[1]
    c, s = math.cos(e.theta), math.sin(e.theta)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    raster = (u / e.a) ** 2 + (v / e.b) ** 2 <= 1.0
    inter = int(np.count_nonzero(raster & m))
    union = int(np.count_nonzero(raster | m))
    if union == 0:
        return 0.0
    return inter / union


def _check_weights(weights: Sequence[float], n: int, name: str) -> None:
    if len(weights) != n:
        raise BadConfig(f"{name} needs {n} weights, got {len(weights)}")
    if any(w < 0 for w in weights):
        raise BadConfig(f"{name} must be non-negative, got {tuple(weights)}")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise BadConfig(f"{name} must sum to 1 within 1e-9, got sum {sum(weights)}")


def composite_score(
    norm_measurement: float,
    class_score: float,
    similarity: float | None,
    part: BodyPart,
    femur_weights: Sequence[float] = DEFAULT_FEMUR_WEIGHTS,
    ellipse_weights: Sequence[float] = DEFAULT_ELLIPSE_WEIGHTS,
) -> float:
    """Weighted average of gating score, normalized measurement, similarity."""
    if part is BodyPart.FEMUR:
        _check_weights(femur_weights, 2, "femur weights")
        return femur_weights[0] * class_score + femur_weights[1] * norm_measurement
    if part in (BodyPart.HEAD, BodyPart.ABDOMEN):
        _check_weights(ellipse_weights, 3, "ellipse-part weights")
        if similarity is None:
            raise BadInput(f"{part.value} composite needs an ellipse similarity")
        return (
            ellipse_weights[0] * class_score
            + ellipse_weights[1] * norm_measurement
            + ellipse_weights[2] * similarity
        )
    raise BadInput(f"no composite for part {part.value}")


def measure_candidate(
    score: FrameScore,
    clean_mask: np.ndarray,
    spacing: tuple[float, float],
    raw_mask: np.ndarray | None = None,
    gate_threshold: float = DEFAULT_GATE,
    rdp_eps_rel: float = 0.0,
) -> CandidateFrame | None:
    """Gate one frame and measure it; None when the gate does not pass.

    Raises Unmeasurable when the frame gates but its mask yields no usable
    geometry. norm_measurement/composite stay unset until finalization.
    """
    part = gate_frame(score, gate_threshold)
    if part is None:
        return None
    idx = score.frame_index
    class_score = float(score.class_probs[PART_ORDER.index(part)])
    sim_mask = clean_mask if raw_mask is None else raw_mask
    if part is BodyPart.HEAD:
        hc, bpd = measure_head(clean_mask, spacing, idx, rdp_eps_rel)
        sim = ellipse_similarity(sim_mask, hc.ellipse)
        return CandidateFrame(idx, part, class_score, hc, bpd, sim)
    if part is BodyPart.ABDOMEN:
        ac = measure_abdomen(clean_mask, spacing, idx, rdp_eps_rel)
        sim = ellipse_similarity(sim_mask, ac.ellipse)
        return CandidateFrame(idx, part, class_score, ac, None, sim)
    fl = measure_femur(clean_mask, spacing, idx)
    return CandidateFrame(idx, part, class_score, fl, None, None)


def finalize_candidates(
    candidates: Sequence[CandidateFrame],
    femur_weights: Sequence[float] = DEFAULT_FEMUR_WEIGHTS,
    ellipse_weights: Sequence[float] = DEFAULT_ELLIPSE_WEIGHTS,
) -> list[CandidateFrame]:
    """Fill norm_measurement and composite using per-part video maxima."""
    maxima: dict[BodyPart, float] = {}
    for c in candidates:
        maxima[c.part] = max(maxima.get(c.part, 0.0), c.measurement.value_cm)
    out = []
    for c in candidates:
        norm = c.measurement.value_cm / maxima[c.part]
        comp = composite_score(
            norm, c.class_score, c.ellipse_similarity, c.part,
            femur_weights, ellipse_weights,
        )
        out.append(replace(c, norm_measurement=norm, composite=comp))
    return out


def winners(candidates: Sequence[CandidateFrame]) -> PlaneSelection:
    """Max-composite candidate per part; equal composites go to the lower index."""
    best: dict[BodyPart, CandidateFrame] = {}
    for c in candidates:
        if c.composite is None:
            raise BadInput("candidates must be finalized before selection")
        cur = best.get(c.part)
        if cur is None or (c.composite, -c.frame_index) > (cur.composite, -cur.frame_index):
            best[c.part] = c
    return PlaneSelection(
        head=best.get(BodyPart.HEAD),
        abdomen=best.get(BodyPart.ABDOMEN),
        femur=best.get(BodyPart.FEMUR),
    )


def select_best(
    frames: Sequence[tuple[FrameScore, np.ndarray]],
    spacing: tuple[float, float],
    raw_masks: Sequence[np.ndarray] | None = None,
    gate_threshold: float = DEFAULT_GATE,
    femur_weights: Sequence[float] = DEFAULT_FEMUR_WEIGHTS,
    ellipse_weights: Sequence[float] = DEFAULT_ELLIPSE_WEIGHTS,
    rdp_eps_rel: float = 0.0,
) -> PlaneSelection:
    """Best frame per body part for one video.

    `frames` pairs each FrameScore with its clean mask; `raw_masks`
    optionally supplies the pre-morphology masks for the similarity term.
    Frames that gate but cannot be measured propagate Unmeasurable; the
    pipeline catches those per frame (fail-soft), library callers see them.
    """
    candidates = []
    for i, (score, mask) in enumerate(frames):
        raw = raw_masks[i] if raw_masks is not None else None
        cand = measure_candidate(
            score, mask, spacing, raw, gate_threshold, rdp_eps_rel
        )
        if cand is not None:
            candidates.append(cand)
    return winners(finalize_candidates(candidates, femur_weights, ellipse_weights))
