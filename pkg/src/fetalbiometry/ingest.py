"""Study loading: sidecar metadata, frame PNGs, privacy masking.

A study directory holds `study.json` plus frames `frame_%06d.png` numbered
0..N-1. Frames are 8-bit single-channel PNGs scaled to [0, 1] on load;
regions listed in `mask_regions` are blanked to exactly 0.0 (burnt-in
patient annotations). Pixel spacing is stored per axis (row, col) in mm/px
because ultrasound pixels need not be square.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import BadImage, BadMetadata, MissingFrame
from .morphology import bilinear_resize

MODEL_SIZE = (224, 224)

_FRAME_RE = re.compile(r"^frame_(\d{6})\.png$")


@dataclass(frozen=True)
class StudyMeta:
    """Per-study sidecar metadata.

    mask_regions are axis-aligned (x, y, w, h) rectangles in native pixel
    coordinates, blanked to 0.0 at load time.
    """

    study_id: str
    pixel_spacing_mm: tuple[float, float]
    native_size: tuple[int, int]
    frame_count: int
    mask_regions: tuple[tuple[int, int, int, int], ...] = ()

    def __post_init__(self) -> None:
        if not self.study_id:
            raise BadMetadata("study_id must be non-empty")
        rs, cs = self.pixel_spacing_mm
        if not (rs > 0 and cs > 0):
            raise BadMetadata(f"pixel_spacing_mm must be positive, got {self.pixel_spacing_mm}")
        h, w = self.native_size
        if not (isinstance(h, int) and isinstance(w, int) and h > 0 and w > 0):
            raise BadMetadata(f"native_size must be positive integers, got {self.native_size}")
        if not (isinstance(self.frame_count, int) and self.frame_count > 0):
            raise BadMetadata(f"frame_count must be a positive integer, got {self.frame_count}")
        for rect in self.mask_regions:
            x, y, rw, rh = rect
            if rw < 0 or rh < 0 or x < 0 or y < 0 or x + rw > w or y + rh > h:
                raise BadMetadata(f"mask_region {rect} outside native bounds {self.native_size}")


@dataclass(frozen=True)
class FrameSequence:
    """Ordered frames of one study; read-only after construction."""

    meta: StudyMeta
    frames: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.frames) != self.meta.frame_count:
            raise BadMetadata(
                f"frame count mismatch: metadata says {self.meta.frame_count}, "
                f"got {len(self.frames)}"
            )
        for f in self.frames:
            if f.shape != self.meta.native_size:
                raise BadImage(f"frame shape {f.shape} != native_size {self.meta.native_size}")

    def __len__(self) -> int:
        return len(self.frames)


def _parse_meta(obj: dict) -> StudyMeta:
    try:
        spacing = obj["pixel_spacing_mm"]
        native = obj["native_size"]
        regions = obj.get("mask_regions", [])
        if len(spacing) != 2 or len(native) != 2:
            raise BadMetadata("pixel_spacing_mm and native_size must be pairs")
        return StudyMeta(
            study_id=str(obj["study_id"]),
            pixel_spacing_mm=(float(spacing[0]), float(spacing[1])),
            native_size=(int(native[0]), int(native[1])),
            frame_count=int(obj["frame_count"]),
            mask_regions=tuple(
                (int(r[0]), int(r[1]), int(r[2]), int(r[3])) for r in regions
            ),
        )
    except BadMetadata:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise BadMetadata(f"malformed study.json: {exc}") from exc


def load_frame_png(path: Path) -> np.ndarray:
    """Load one 8-bit grayscale PNG as float64 in [0, 1]."""
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise BadImage(f"{path.name}: expected 8-bit grayscale, got mode {img.mode}")
            arr = np.asarray(img, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise BadImage(f"{path.name}: not a readable image") from exc
    return arr.astype(np.float64) / 255.0


def load_study(path: str | Path) -> FrameSequence:
    """Load a study directory into a FrameSequence.

    Frames are loaded in index order, scaled by 1/255, and mask_regions are
    blanked to 0.0. Missing or extra frame indices are rejected: the frame
    set on disk must be exactly 0..frame_count-1.
    """
    root = Path(path)
    meta_path = root / "study.json"
    if not meta_path.is_file():
        raise BadMetadata(f"{meta_path} not found")
    try:
        obj = json.loads(meta_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BadMetadata(f"cannot parse {meta_path}: {exc}") from exc
    meta = _parse_meta(obj)

    on_disk = {
        int(m.group(1))
        for p in root.iterdir()
        if (m := _FRAME_RE.match(p.name)) is not None
    }
    expected = set(range(meta.frame_count))
    if on_disk != expected:
        missing = sorted(expected - on_disk)
        extra = sorted(on_disk - expected)
        raise MissingFrame(f"frame index mismatch: missing {missing}, extra {extra}")

    frames = []
    for idx in range(meta.frame_count):
        frame = load_frame_png(root / f"frame_{idx:06d}.png")
        if frame.shape != meta.native_size:
            raise BadImage(
                f"frame_{idx:06d}.png has shape {frame.shape}, "
                f"native_size is {meta.native_size}"
            )
        for x, y, w, h in meta.mask_regions:
            frame[y : y + h, x : x + w] = 0.0
        frame.flags.writeable = False
        frames.append(frame)
    return FrameSequence(meta=meta, frames=tuple(frames))


def resize_to_model(frame: np.ndarray) -> np.ndarray:
    """Resize a frame to the 224x224 backend input size (aspect not preserved)."""
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim != 2 or f.size == 0:
        raise BadImage(f"expected non-empty 2D frame, got shape {f.shape}")
    return bilinear_resize(f, MODEL_SIZE)
