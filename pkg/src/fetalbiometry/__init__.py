"""Fetal ultrasound biometry from per-frame segmentations and class scores.

Core flow: a scorer backend maps frames to (class probabilities, mask
probability grid); the pipeline cleans masks, extracts contours, fits
ellipses and rotated rectangles, selects the best standard plane per body
part, converts to HC/BPD/AC/FL in cm, and estimates gestational age and
fetal weight. The service subpackage exposes the same operations over
HTTP; the CLI is a thin client for both.
"""

from .agreement import RatingsTable, anova_oneway, icc, intra_observer, mae_matrix
from .backend import (
    BarShape,
    EllipseShape,
    FixtureScorer,
    FrameScorer,
    PhantomFrame,
    PhantomScorer,
    PhantomSpec,
    ScorerInfo,
    load_phantom_spec,
    phantom_truth,
    write_phantom_study,
)
from .biometry import (
    BiometrySet,
    BodyPart,
    Measurement,
    MeasureKind,
    measure_abdomen,
    measure_femur,
    measure_head,
    px_to_cm,
)
from .errors import (
    AllFramesFailed,
    BadConfig,
    BadFixture,
    BadImage,
    BadInput,
    BadMetadata,
    BadSize,
    BadSpec,
    BadThreshold,
    DegenerateFit,
    EmptyOverlap,
    FetalBiometryError,
    IncompleteBiometry,
    InfiniteLoss,
    Insufficient,
    MissingFrame,
    Unmeasurable,
)
from .estimation import FetalWeight, GestAge, estimate_efw, estimate_ga
from .geometry import (
    Contour,
    EllipseParams,
    RotRect,
    ellipse_perimeter,
    extract_contours,
    fit_ellipse_lsq,
    min_area_rect,
    rdp_simplify,
)
from .ingest import FrameSequence, StudyMeta, load_study, resize_to_model
from .metrics import classification_report, dice, dice_loss, iou
from .morphology import clean_mask, median_smooth13, open_cross5, threshold, upsample_mask
from .pipeline import (
    REPORT_SCHEMA,
    AnalysisConfig,
    StudyReport,
    analyze_study,
    analyze_study_full,
    evaluate_backend,
    report_json,
)
from .planes import FrameScore, PlaneSelection, composite_score, gate_frame, select_best
from .version import __version__

__all__ = [
    "AllFramesFailed",
    "AnalysisConfig",
    "BadConfig",
    "BadFixture",
    "BadImage",
    "BadInput",
    "BadMetadata",
    "BadSize",
    "BadSpec",
    "BadThreshold",
    "BarShape",
    "BiometrySet",
    "BodyPart",
    "Contour",
    "DegenerateFit",
    "EllipseParams",
    "EllipseShape",
    "EmptyOverlap",
    "FetalBiometryError",
    "IncompleteBiometry",
    "InfiniteLoss",
    "Insufficient",
    "MissingFrame",
    "Unmeasurable",
    "FetalWeight",
    "FixtureScorer",
    "FrameScore",
    "FrameScorer",
    "FrameSequence",
    "GestAge",
    "Measurement",
    "MeasureKind",
    "PhantomFrame",
    "PhantomScorer",
    "PhantomSpec",
    "PlaneSelection",
    "RatingsTable",
    "REPORT_SCHEMA",
    "RotRect",
    "ScorerInfo",
    "StudyMeta",
    "StudyReport",
    "analyze_study",
    "analyze_study_full",
    "anova_oneway",
    "classification_report",
    "clean_mask",
    "composite_score",
    "dice",
    "dice_loss",
    "ellipse_perimeter",
    "estimate_efw",
    "estimate_ga",
    "evaluate_backend",
    "extract_contours",
    "fit_ellipse_lsq",
    "gate_frame",
    "icc",
    "intra_observer",
    "iou",
    "load_phantom_spec",
    "load_study",
    "mae_matrix",
    "measure_abdomen",
    "measure_femur",
    "measure_head",
    "median_smooth13",
    "min_area_rect",
    "open_cross5",
    "phantom_truth",
    "px_to_cm",
    "rdp_simplify",
    "report_json",
    "resize_to_model",
    "select_best",
    "threshold",
    "upsample_mask",
    "write_phantom_study",
    "__version__",
]
