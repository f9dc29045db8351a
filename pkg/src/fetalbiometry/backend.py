"""Pluggable frame scorers and the synthetic phantom generator.

A FrameScorer maps (frame_index, 224x224 frame) to a 4-class probability
vector over (head, abdomen, femur, background) plus a segmentation
probability grid of its declared size. Two scorers ship here:

- FixtureScorer replays stored outputs from `scores.csv` + `mask_%06d.png`;
- PhantomScorer rasterizes shapes from a PhantomSpec and also provides the
  analytic ground-truth measurements, computed from the shape parameters
  and never from pixels, so it can serve as a measurement oracle.

A real neural-network backend is an extension point behind the same
interface and deliberately absent.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
from PIL import Image

from .biometry import BiometrySet, BodyPart
from .errors import BadFixture, BadSpec
from .geometry import EllipseParams, ellipse_mm_axes, ellipse_perimeter
from .ingest import StudyMeta

SCORES_HEADER = ["frame_index", "p_head", "p_abdomen", "p_femur", "p_background"]

PART_BY_NAME = {p.value: p for p in BodyPart}


@dataclass(frozen=True)
class ScorerInfo:
    """Capability descriptor a scorer publishes to the pipeline."""

    classes: tuple[str, str, str, str] = ("head", "abdomen", "femur", "background")
    mask_size: tuple[int, int] = (224, 224)
    frame_count: int | None = None  # None: any length accepted
    parallel_safe: bool = True


@runtime_checkable
class FrameScorer(Protocol):
    @property
    def info(self) -> ScorerInfo: ...

    def score(self, frame_index: int, frame: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (class probability 4-vector, segmentation probability grid)."""
        ...


class FixtureScorer:
    """Replay scorer: stored class probabilities and mask PNGs per frame.

    Validation happens at construction: contiguous frame indices 0..N-1,
    one mask per row, a single shared mask size, probabilities within
    [0, 1] summing to 1 within 1e-3 (renormalized to exactly 1).
    """

    def __init__(self, fixture_dir: str | Path):
        root = Path(fixture_dir)
        scores_path = root / "scores.csv"
        if not scores_path.is_file():
            raise BadFixture(f"{scores_path} not found")
        rows: dict[int, np.ndarray] = {}
        with scores_path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise BadFixture(f"{scores_path}: empty file") from None
            if header != SCORES_HEADER:
                raise BadFixture(
                    f"{scores_path}: header must be {','.join(SCORES_HEADER)}, got {header}"
                )
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 5:
                    raise BadFixture(f"{scores_path}:{lineno}: expected 5 columns")
                try:
                    idx = int(row[0])
                    probs = np.array([float(v) for v in row[1:]], dtype=np.float64)
                except ValueError as exc:
                    raise BadFixture(f"{scores_path}:{lineno}: {exc}") from exc
                if idx in rows:
                    raise BadFixture(f"{scores_path}:{lineno}: duplicate frame {idx}")
                rows[idx] = self._normalize_probs(probs, f"{scores_path}:{lineno}")
        if not rows:
            raise BadFixture(f"{scores_path}: no data rows")
        expected = set(range(len(rows)))
        if set(rows) != expected:
            raise BadFixture(
                f"{scores_path}: frame indices must be 0..{len(rows) - 1}, got {sorted(rows)}"
            )

        masks = []
        mask_size: tuple[int, int] | None = None
        for idx in range(len(rows)):
            mask_path = root / f"mask_{idx:06d}.png"
            if not mask_path.is_file():
                raise BadFixture(f"missing mask file {mask_path}")
            with Image.open(mask_path) as img:
                if img.mode != "L":
                    raise BadFixture(f"{mask_path}: expected 8-bit grayscale, got {img.mode}")
                arr = np.asarray(img, dtype=np.uint8)
            if mask_size is None:
                mask_size = arr.shape
            elif arr.shape != mask_size:
                raise BadFixture(
                    f"{mask_path}: size {arr.shape} differs from first mask {mask_size}"
                )
            masks.append(arr.astype(np.float64) / 255.0)
        on_disk = sorted(
            int(m.group(1))
            for p in root.glob("mask_*.png")
            if (m := re.fullmatch(r"mask_(\d{6})\.png", p.name)) is not None
        )
        if on_disk != list(range(len(rows))):
            raise BadFixture(
                f"mask files {on_disk} do not match score rows 0..{len(rows) - 1}"
            )

        self._probs = [rows[i] for i in range(len(rows))]
        self._masks = masks
        self._info = ScorerInfo(
            mask_size=mask_size, frame_count=len(rows), parallel_safe=True
        )

    @staticmethod
    def _normalize_probs(probs: np.ndarray, where: str) -> np.ndarray:
        if (probs < 0).any() or (probs > 1).any():
            raise BadFixture(f"{where}: probabilities outside [0, 1]: {probs}")
        total = float(probs.sum())
        if abs(total - 1.0) > 1e-3:
            raise BadFixture(f"{where}: probabilities sum to {total}, beyond 1e-3 tolerance")
        return probs / total

    @property
    def info(self) -> ScorerInfo:
        return self._info

    def score(self, frame_index: int, frame: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= frame_index < len(self._probs):
            raise BadFixture(f"fixture has no frame {frame_index}")
        return self._probs[frame_index].copy(), self._masks[frame_index].copy()


@dataclass(frozen=True)
class EllipseShape:
    a: float  # semi-major, px
    b: float  # semi-minor, px
    theta: float  # radians
    center: tuple[float, float]  # (cx, cy) px

    def __post_init__(self) -> None:
        if not (self.a >= self.b > 0):
            raise BadSpec(f"ellipse needs a >= b > 0, got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class BarShape:
    length: float  # px
    width: float  # px
    theta: float  # radians
    center: tuple[float, float]

    def __post_init__(self) -> None:
        if not (self.length >= self.width > 0):
            raise BadSpec(
                f"bar needs length >= width > 0, got {self.length}, {self.width}"
            )


@dataclass(frozen=True)
class PhantomFrame:
    part: BodyPart
    shape: EllipseShape | BarShape | None
    class_probs: tuple[float, float, float, float]
    noise_sigma: float = 0.0

    def __post_init__(self) -> None:
        if (self.part is BodyPart.BACKGROUND) != (self.shape is None):
            raise BadSpec("background frames have no shape; body-part frames need one")
        if self.part in (BodyPart.HEAD, BodyPart.ABDOMEN) and not isinstance(
            self.shape, EllipseShape
        ):
            raise BadSpec(f"{self.part.value} frame needs an ellipse shape")
        if self.part is BodyPart.FEMUR and not isinstance(self.shape, BarShape):
            raise BadSpec("femur frame needs a bar shape")
        if not 0.0 <= self.noise_sigma < 0.5:
            raise BadSpec(f"noise_sigma must lie in [0, 0.5), got {self.noise_sigma}")
        p = self.class_probs
        if len(p) != 4 or any(v < 0 for v in p) or abs(sum(p) - 1.0) > 1e-6:
            raise BadSpec(f"class_probs must be a 4-simplex, got {p}")


@dataclass(frozen=True)
class PhantomSpec:
    study_id: str
    native_size: tuple[int, int]  # (h, w)
    pixel_spacing_mm: tuple[float, float]  # (row, col)
    frames: tuple[PhantomFrame, ...]

    def __post_init__(self) -> None:
        h, w = self.native_size
        if h <= 0 or w <= 0:
            raise BadSpec(f"native_size must be positive, got {self.native_size}")
        rs, cs = self.pixel_spacing_mm
        if rs <= 0 or cs <= 0:
            raise BadSpec(f"pixel_spacing_mm must be positive, got {self.pixel_spacing_mm}")
        if not self.frames:
            raise BadSpec("phantom needs at least one frame")
        for i, f in enumerate(self.frames):
            if f.shape is not None:
                self._check_bounds(i, f.shape)

    def _check_bounds(self, idx: int, shape: EllipseShape | BarShape) -> None:
        h, w = self.native_size
        cx, cy = shape.center
        if isinstance(shape, EllipseShape):
            # axis-aligned extents of the rotated ellipse
            rx = math.hypot(shape.a * math.cos(shape.theta), shape.b * math.sin(shape.theta))
            ry = math.hypot(shape.a * math.sin(shape.theta), shape.b * math.cos(shape.theta))
        else:
            rx = (abs(shape.length * math.cos(shape.theta)) + abs(shape.width * math.sin(shape.theta))) / 2.0
            ry = (abs(shape.length * math.sin(shape.theta)) + abs(shape.width * math.cos(shape.theta))) / 2.0
        if cx - rx < 0 or cx + rx > w - 1 or cy - ry < 0 or cy + ry > h - 1:
            raise BadSpec(f"frame {idx}: shape extends outside the {h}x{w} grid")


@dataclass(frozen=True)
class FrameTruth:
    """Analytic ground truth for one phantom frame (from parameters, not pixels)."""

    part: BodyPart
    values_cm: dict[str, float]  # kind -> cm


@dataclass(frozen=True)
class PhantomTruth:
    frames: tuple[FrameTruth, ...]
    biometry: BiometrySet


def _mm_semi_axes(shape: EllipseShape, spacing: tuple[float, float]) -> tuple[float, float]:
    """Semi-axes of the ellipse image under the px->mm diagonal map."""
    theta = shape.theta % math.pi
    if theta >= math.pi:  # % can round up to pi for tiny negative angles
        theta = 0.0
    e = EllipseParams(center=(0.0, 0.0), a=shape.a, b=shape.b, theta=theta)
    return ellipse_mm_axes(e, spacing)


def _mm_bar_rect(shape: BarShape, spacing: tuple[float, float]) -> tuple[float, float]:
    """(length, width) of the min-area rectangle around the mm-space bar.

    Under anisotropic scaling the rotated bar becomes a parallelogram; the
    minimal enclosing rectangle is flush with one of its two edge
    directions, so both candidates are evaluated in closed form.
    """
    row_s, col_s = spacing
    c, s = math.cos(shape.theta), math.sin(shape.theta)
    e1 = np.array([col_s * c * shape.length, row_s * s * shape.length])
    e2 = np.array([-col_s * s * shape.width, row_s * c * shape.width])

    def candidate(u: np.ndarray, v: np.ndarray) -> tuple[float, float, float]:
        lu = float(np.hypot(*u))
        uhat = u / lu
        nhat = np.array([-uhat[1], uhat[0]])
        along = lu + abs(float(v @ uhat))
        across = abs(float(v @ nhat))
        return along * across, along, across

    cands = [candidate(e1, e2), candidate(e2, e1)]
    _, along, across = min(cands, key=lambda t: t[0])
    return max(along, across), min(along, across)


def frame_truth(frame: PhantomFrame, spacing: tuple[float, float]) -> FrameTruth:
    """Analytic measurement values for one frame, in cm."""
    if frame.part is BodyPart.BACKGROUND:
        return FrameTruth(part=frame.part, values_cm={})
    if isinstance(frame.shape, EllipseShape):
        a_mm, b_mm = _mm_semi_axes(frame.shape, spacing)
        perim_cm = ellipse_perimeter(EllipseParams(center=(0.0, 0.0), a=a_mm, b=b_mm, theta=0.0)) / 10.0
        if frame.part is BodyPart.HEAD:
            return FrameTruth(
                part=frame.part,
                values_cm={"HC": perim_cm, "BPD": 2.0 * b_mm / 10.0},
            )
        return FrameTruth(part=frame.part, values_cm={"AC": perim_cm})
    length_mm, _ = _mm_bar_rect(frame.shape, spacing)
    return FrameTruth(part=frame.part, values_cm={"FL": length_mm / 10.0})


def phantom_truth(spec: PhantomSpec) -> PhantomTruth:
    """Ground truth for every frame plus the study-level BiometrySet.

    The study-level value per part is the largest analytic measurement among
    that part's frames, which matches the pipeline winner whenever class
    scores and similarities tie across those frames (always true for specs
    with one frame per part). Specs mixing unequal class scores within one
    part should compare against per-frame truth instead.
    """
    frames = tuple(frame_truth(f, spec.pixel_spacing_mm) for f in spec.frames)

    def best(kind: str) -> float | None:
        vals = [t.values_cm[kind] for t in frames if kind in t.values_cm]
        return max(vals) if vals else None

    hc = best("HC")
    bpd_candidates = [
        t.values_cm["BPD"]
        for t in frames
        if "HC" in t.values_cm and t.values_cm["HC"] == hc
    ]
    bio = BiometrySet(
        hc_cm=hc,
        bpd_cm=bpd_candidates[0] if bpd_candidates else None,
        ac_cm=best("AC"),
        fl_cm=best("FL"),
    )
    return PhantomTruth(frames=frames, biometry=bio)


def _rasterize(frame: PhantomFrame, native_size: tuple[int, int]) -> np.ndarray:
    h, w = native_size
    if frame.shape is None:
        return np.zeros((h, w), dtype=np.float64)
    yy, xx = np.ogrid[:h, :w]
    cx, cy = frame.shape.center
    dx = xx - cx
    dy = yy - cy
    c, s = math.cos(frame.shape.theta), math.sin(frame.shape.theta)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    if isinstance(frame.shape, EllipseShape):
        inside = (u / frame.shape.a) ** 2 + (v / frame.shape.b) ** 2 <= 1.0
    else:
        inside = (np.abs(u) <= frame.shape.length / 2.0) & (
            np.abs(v) <= frame.shape.width / 2.0
        )
    return inside.astype(np.float64)


def _frame_rng(seed: int, frame_index: int) -> np.random.Generator:
    # per-frame stream: independent of thread count and evaluation order
    return np.random.default_rng([seed, frame_index])


class PhantomScorer:
    """Deterministic scorer rasterizing a PhantomSpec at native resolution."""

    def __init__(self, spec: PhantomSpec, seed: int = 0):
        self._spec = spec
        self._seed = int(seed)
        self._info = ScorerInfo(
            mask_size=spec.native_size,
            frame_count=len(spec.frames),
            parallel_safe=True,
        )

    @property
    def info(self) -> ScorerInfo:
        return self._info

    @property
    def spec(self) -> PhantomSpec:
        return self._spec

    def grid_for(self, frame_index: int) -> np.ndarray:
        frame = self._spec.frames[frame_index]
        grid = _rasterize(frame, self._spec.native_size)
        if frame.noise_sigma > 0.0:
            rng = _frame_rng(self._seed, frame_index)
            grid = grid + rng.normal(0.0, frame.noise_sigma, grid.shape)
            grid = np.clip(grid, 0.0, 1.0)
        return grid

    def score(self, frame_index: int, frame: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= frame_index < len(self._spec.frames):
            raise BadSpec(f"phantom has no frame {frame_index}")
        probs = np.asarray(self._spec.frames[frame_index].class_probs, dtype=np.float64)
        return probs, self.grid_for(frame_index)


def phantom_scorer(spec: PhantomSpec, seed: int = 0) -> tuple[PhantomScorer, PhantomTruth]:
    """Scorer plus analytic ground truth for a phantom spec."""
    return PhantomScorer(spec, seed), phantom_truth(spec)


# --- PhantomSpec JSON (de)serialization -------------------------------------

def _shape_to_dict(shape: EllipseShape | BarShape | None) -> dict | None:
    if shape is None:
        return None
    if isinstance(shape, EllipseShape):
        return {
            "kind": "ellipse",
            "a": shape.a,
            "b": shape.b,
            "theta_deg": math.degrees(shape.theta),
            "center": list(shape.center),
        }
    return {
        "kind": "bar",
        "length": shape.length,
        "width": shape.width,
        "theta_deg": math.degrees(shape.theta),
        "center": list(shape.center),
    }


def _shape_from_dict(obj: dict | None) -> EllipseShape | BarShape | None:
    if obj is None:
        return None
    try:
        kind = obj["kind"]
        theta = math.radians(float(obj.get("theta_deg", 0.0)))
        center = (float(obj["center"][0]), float(obj["center"][1]))
        if kind == "ellipse":
            return EllipseShape(a=float(obj["a"]), b=float(obj["b"]), theta=theta, center=center)
        if kind == "bar":
            return BarShape(
                length=float(obj["length"]), width=float(obj["width"]),
                theta=theta, center=center,
            )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise BadSpec(f"malformed shape entry: {exc}") from exc
    raise BadSpec(f"unknown shape kind {obj.get('kind')!r}")


def spec_to_dict(spec: PhantomSpec) -> dict:
    return {
        "study_id": spec.study_id,
        "native_size": list(spec.native_size),
        "pixel_spacing_mm": list(spec.pixel_spacing_mm),
        "frames": [
            {
                "part": f.part.value,
                "shape": _shape_to_dict(f.shape),
                "class_probs": list(f.class_probs),
                "noise_sigma": f.noise_sigma,
            }
            for f in spec.frames
        ],
    }


def spec_from_dict(obj: dict) -> PhantomSpec:
    try:
        frames = tuple(
            PhantomFrame(
                part=PART_BY_NAME[f["part"]],
                shape=_shape_from_dict(f.get("shape")),
                class_probs=tuple(float(v) for v in f["class_probs"]),
                noise_sigma=float(f.get("noise_sigma", 0.0)),
            )
            for f in obj["frames"]
        )
        return PhantomSpec(
            study_id=str(obj["study_id"]),
            native_size=(int(obj["native_size"][0]), int(obj["native_size"][1])),
            pixel_spacing_mm=(
                float(obj["pixel_spacing_mm"][0]),
                float(obj["pixel_spacing_mm"][1]),
            ),
            frames=frames,
        )
    except BadSpec:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise BadSpec(f"malformed phantom spec: {exc}") from exc


def load_phantom_spec(path: str | Path) -> PhantomSpec:
    p = Path(path)
    if not p.is_file():
        raise BadSpec(f"phantom spec not found: {p}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BadSpec(f"cannot parse {p}: {exc}") from exc
    return spec_from_dict(obj)


def _write_png(path: Path, values: np.ndarray) -> None:
    arr = np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def _dump_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_phantom_study(
    spec: PhantomSpec, seed: int, out_dir: str | Path
) -> tuple[PhantomTruth, list[str]]:
    """Materialize a phantom as a complete on-disk study.

    Writes frame PNGs, study.json, scores.csv, mask PNGs, ground_truth.json
    and phantom.json; the directory is loadable by the analyze pipeline with
    a fixture backend and usable as evaluation truth. Deterministic per
    (spec, seed): identical bytes on every call.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    scorer, truth = phantom_scorer(spec, seed)
    h, w = spec.native_size
    written: list[str] = []

    for idx, frame in enumerate(spec.frames):
        # frame image: dim background, bright structure, deterministic
        raster = _rasterize(frame, spec.native_size)
        image = 0.1 + 0.75 * raster
        name = f"frame_{idx:06d}.png"
        _write_png(root / name, image)
        written.append(name)
        mask_name = f"mask_{idx:06d}.png"
        _write_png(root / mask_name, scorer.grid_for(idx))
        written.append(mask_name)

    meta = StudyMeta(
        study_id=spec.study_id,
        pixel_spacing_mm=spec.pixel_spacing_mm,
        native_size=spec.native_size,
        frame_count=len(spec.frames),
        mask_regions=(),
    )
    _dump_json(
        root / "study.json",
        {
            "study_id": meta.study_id,
            "pixel_spacing_mm": list(meta.pixel_spacing_mm),
            "native_size": [h, w],
            "frame_count": meta.frame_count,
            "mask_regions": [],
        },
    )
    written.append("study.json")

    with (root / "scores.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORES_HEADER)
        for idx, frame in enumerate(spec.frames):
            writer.writerow([idx] + [repr(float(p)) for p in frame.class_probs])
    written.append("scores.csv")

    _dump_json(
        root / "ground_truth.json",
        {
            "pixel_spacing_mm": list(spec.pixel_spacing_mm),
            "frames": [
                {"part": t.part.value, "values_cm": t.values_cm} for t in truth.frames
            ],
            "biometry": {
                "hc_cm": truth.biometry.hc_cm,
                "bpd_cm": truth.biometry.bpd_cm,
                "ac_cm": truth.biometry.ac_cm,
                "fl_cm": truth.biometry.fl_cm,
            },
        },
    )
    written.append("ground_truth.json")

    _dump_json(root / "phantom.json", spec_to_dict(spec))
    written.append("phantom.json")
    return truth, written
