"""Shared raster and phantom-spec helpers for the test suite."""

from __future__ import annotations

import math

import numpy as np
import pytest

from fetalbiometry.backend import BarShape, EllipseShape, PhantomFrame, PhantomSpec
from fetalbiometry.biometry import BodyPart


def raster_ellipse(h, w, a, b, theta, cx, cy):
    """Boolean mask of pixel centers inside the ellipse (the phantom convention)."""
    yy, xx = np.ogrid[:h, :w]
    c, s = math.cos(theta), math.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def raster_bar(h, w, length, width, theta, cx, cy):
    yy, xx = np.ogrid[:h, :w]
    c, s = math.cos(theta), math.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (np.abs(u) <= length / 2.0) & (np.abs(v) <= width / 2.0)


BG_PROBS = (0.01, 0.01, 0.01, 0.97)
HEAD_PROBS = (0.97, 0.01, 0.01, 0.01)
ABD_PROBS = (0.01, 0.97, 0.01, 0.01)
FEM_PROBS = (0.01, 0.01, 0.97, 0.01)

HEAD_SHAPE = EllipseShape(a=100.0, b=60.0, theta=math.radians(20), center=(320.0, 240.0))
ABD_SHAPE = EllipseShape(a=90.0, b=80.0, theta=math.radians(100), center=(300.0, 250.0))
FEM_SHAPE = BarShape(length=180.0, width=14.0, theta=math.radians(-35), center=(320.0, 240.0))


def make_phantom_spec(
    study_id="study01",
    sigma=0.0,
    n_frames=6,
    part_slots=None,
    spacing=(0.3, 0.3),
    native=(480, 640),
):
    """A study of background frames with one head/abdomen/femur frame each.

    part_slots maps frame index -> one of the three part frames; default
    places them at 1, 3, 4 for the 6-frame layout used in most tests.
    """
    if part_slots is None:
        part_slots = {1: "head", 3: "abdomen", 4: "femur"}
    bg = PhantomFrame(part=BodyPart.BACKGROUND, shape=None, class_probs=BG_PROBS, noise_sigma=sigma)
    by_name = {
        "head": PhantomFrame(part=BodyPart.HEAD, shape=HEAD_SHAPE, class_probs=HEAD_PROBS, noise_sigma=sigma),
        "abdomen": PhantomFrame(part=BodyPart.ABDOMEN, shape=ABD_SHAPE, class_probs=ABD_PROBS, noise_sigma=sigma),
        "femur": PhantomFrame(part=BodyPart.FEMUR, shape=FEM_SHAPE, class_probs=FEM_PROBS, noise_sigma=sigma),
    }
    frames = [bg] * n_frames
    for idx, name in part_slots.items():
        frames[idx] = by_name[name]
    return PhantomSpec(
        study_id=study_id,
        native_size=native,
        pixel_spacing_mm=spacing,
        frames=tuple(frames),
    )


@pytest.fixture
def phantom_spec():
    return make_phantom_spec()


@pytest.fixture
def study_dir(tmp_path, phantom_spec):
    """A rendered phantom study directory (frames, masks, scores, metadata)."""
    from fetalbiometry.backend import write_phantom_study

    out = tmp_path / "study"
    out.mkdir()
    write_phantom_study(phantom_spec, 0, out)
    return out
