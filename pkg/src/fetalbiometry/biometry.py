"""Physical measurements from clean body-part masks.

Ellipses are fitted in pixel space, debiased for the known curvature
shrinkage of the median smoothing step, then mapped to mm exactly (an
affine image of an ellipse is an ellipse), so anisotropic pixels are
handled without an after-the-fact scale fudge. The ellipse/rectangle
attached to a Measurement is in pixel coordinates. Femur rectangles are
fitted to mm-scaled contour points directly; their edges are straight, so
the median filter does not bias them and no debias applies.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import BadInput, DegenerateFit, Unmeasurable
from .geometry import (
    Contour,
    EllipseParams,
    RotRect,
    default_rdp_eps,
    ellipse_mm_axes,
    ellipse_perimeter,
    extract_contours,
    fit_ellipse_lsq,
    min_area_rect,
    rdp_simplify,
)
from .morphology import MEDIAN13_SHRINK_PX2


class BodyPart(enum.Enum):
    HEAD = "head"
    ABDOMEN = "abdomen"
    FEMUR = "femur"
    BACKGROUND = "background"


class MeasureKind(enum.Enum):
    HC = "HC"
    BPD = "BPD"
    AC = "AC"
    FL = "FL"


@dataclass(frozen=True)
class Measurement:
    part: BodyPart
    kind: MeasureKind
    value_cm: float
    frame_index: int = -1
    ellipse: EllipseParams | None = None
    rect: RotRect | None = None

    def __post_init__(self) -> None:
        if not (self.value_cm > 0 and math.isfinite(self.value_cm)):
            raise BadInput(f"value_cm must be positive, got {self.value_cm}")
        if self.kind in (MeasureKind.HC, MeasureKind.BPD) and self.ellipse is None:
            raise BadInput(f"{self.kind.value} requires the fitted ellipse")
        if self.kind is MeasureKind.FL and self.rect is None:
            raise BadInput("FL requires the fitted rectangle")


@dataclass(frozen=True)
class BiometrySet:
    """The four biometrics in cm plus the derived estimates; fields absent as None."""

    hc_cm: float | None = None
    bpd_cm: float | None = None
    ac_cm: float | None = None
    fl_cm: float | None = None
    ga_weeks: float | None = None
    efw_g: float | None = None

    @property
    def complete(self) -> bool:
        return all(
            v is not None and v > 0
            for v in (self.hc_cm, self.bpd_cm, self.ac_cm, self.fl_cm)
        )


def px_to_cm(
    px: float,
    spacing: tuple[float, float],
    direction: tuple[float, float] | None = None,
) -> float:
    """Convert a pixel length to cm using the effective spacing along a direction.

    A segment of length L along unit direction (ux, uy) in pixel space maps to
    length L * sqrt((ux*col_s)^2 + (uy*row_s)^2) in mm. With no direction the
    spacing must be isotropic.
    """
    if px < 0:
        raise BadInput(f"length must be >= 0, got {px}")
    row_s, col_s = spacing
    if row_s <= 0 or col_s <= 0:
        raise BadInput(f"spacing must be positive, got {spacing}")
    if direction is None:
        if row_s != col_s:
            raise BadInput("anisotropic spacing needs an explicit direction")
        eff = row_s
    else:
        ux, uy = direction
        norm = math.hypot(ux, uy)
        if norm == 0:
            raise BadInput("direction must be non-zero")
        eff = math.hypot(ux / norm * col_s, uy / norm * row_s)
    return px * eff / 10.0


def _points_to_mm(points: np.ndarray, spacing: tuple[float, float]) -> np.ndarray:
    row_s, col_s = spacing
    return points * np.array([col_s, row_s], dtype=np.float64)


def _largest_contour(mask: np.ndarray) -> Contour:
    contours = extract_contours(mask)
    if not contours:
        raise Unmeasurable("mask has no foreground component")
    return contours[0]


def _debias_ellipse(e: EllipseParams) -> EllipseParams:
    """Undo the median filter's curvature shrinkage on the fitted axes.

    A majority filter moves a convex boundary inward by roughly
    curvature * window^2/24 px, so the fitted semi-axes come out short by
    the calibrated constant times the curvature at the respective axis end
    (a/b^2 for the major end, b/a^2 for the minor). First-order inverse;
    preserves a >= b since a^3 >= b^3.
    """
    a = e.a + MEDIAN13_SHRINK_PX2 * e.a / e.b**2
    b = e.b + MEDIAN13_SHRINK_PX2 * e.b / e.a**2
    return EllipseParams(center=e.center, a=a, b=b, theta=e.theta)


def _fit_ellipse(
    mask: np.ndarray, spacing: tuple[float, float], rdp_eps_rel: float
) -> tuple[float, float, EllipseParams, Contour]:
    """Largest contour -> RDP -> px ellipse fit -> debias -> exact mm axes.

    Returns (a_mm, b_mm, debiased px-space fit, simplified contour). The mm
    axes carry the measurement; the px fit is what gets reported and
    rasterized.
    """
    contour = _largest_contour(mask)
    simplified = rdp_simplify(contour, default_rdp_eps(contour, rdp_eps_rel))
    try:
        e_px = _debias_ellipse(fit_ellipse_lsq(simplified.points))
    except DegenerateFit as exc:
        raise Unmeasurable(f"ellipse fit failed: {exc}") from exc
    a_mm, b_mm = ellipse_mm_axes(e_px, spacing)
    return a_mm, b_mm, e_px, simplified


def _axes_perimeter_mm(a_mm: float, b_mm: float) -> float:
    return ellipse_perimeter(EllipseParams(center=(0.0, 0.0), a=a_mm, b=b_mm, theta=0.0))


def measure_head(
    mask: np.ndarray,
    spacing: tuple[float, float],
    frame_index: int = -1,
    rdp_eps_rel: float = 0.0,
) -> tuple[Measurement, Measurement]:
    """HC and BPD from the largest head component.

    HC is the Ramanujan perimeter of the fitted ellipse; BPD is the full
    short axis 2b (outer-outer, skull edge to skull edge).
    """
    a_mm, b_mm, e_px, _ = _fit_ellipse(mask, spacing, rdp_eps_rel)
    hc = Measurement(
        part=BodyPart.HEAD,
        kind=MeasureKind.HC,
        value_cm=_axes_perimeter_mm(a_mm, b_mm) / 10.0,
        frame_index=frame_index,
        ellipse=e_px,
    )
    bpd = Measurement(
        part=BodyPart.HEAD,
        kind=MeasureKind.BPD,
        value_cm=2.0 * b_mm / 10.0,
        frame_index=frame_index,
        ellipse=e_px,
    )
    return hc, bpd


def measure_abdomen(
    mask: np.ndarray,
    spacing: tuple[float, float],
    frame_index: int = -1,
    rdp_eps_rel: float = 0.0,
) -> Measurement:
    """AC: Ramanujan perimeter of the ellipse fitted to the largest component."""
    a_mm, b_mm, e_px, _ = _fit_ellipse(mask, spacing, rdp_eps_rel)
    return Measurement(
        part=BodyPart.ABDOMEN,
        kind=MeasureKind.AC,
        value_cm=_axes_perimeter_mm(a_mm, b_mm) / 10.0,
        frame_index=frame_index,
        ellipse=e_px,
    )


def measure_femur(
    mask: np.ndarray,
    spacing: tuple[float, float],
    frame_index: int = -1,
) -> Measurement:
    """FL: length of the minimum-area rotated rectangle around the largest component.

    The rectangle is fitted to the raw contour (no RDP): simplification can
    only shave staircase corners off the hull and bias the caliper length low.
    """
    contour = _largest_contour(mask)
    try:
        rect_mm = min_area_rect(_points_to_mm(contour.points, spacing))
        rect_px = min_area_rect(contour.points)
    except DegenerateFit as exc:
        raise Unmeasurable(f"rectangle fit failed: {exc}") from exc
    return Measurement(
        part=BodyPart.FEMUR,
        kind=MeasureKind.FL,
        value_cm=rect_mm.length / 10.0,
        frame_index=frame_index,
        rect=rect_px,
    )
