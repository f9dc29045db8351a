"""Contours and geometric fits that measurements are read from.

Contour convention: boundaries trace pixel *edges*, not pixel centers.
Pixel (row i, col j) occupies the square [j-0.5, j+0.5] x [i-0.5, i+0.5] in
(x, y) coordinates, so contour vertices sit on half-integer corners and the
shoelace area of a traced polygon equals the exact pixel count of its
component (holes filled). Center-based tracing would inscribe the region by
half a pixel
per side and bias every fitted perimeter low; this convention keeps raster
phantoms unbiased. Components are 4-connected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BadInput, DegenerateFit


@dataclass(frozen=True)
class Contour:
    """Closed polygon of (x, y) vertices; first point not repeated at the end."""

    points: np.ndarray
    area_px: float

    def __post_init__(self) -> None:
        if self.points.ndim != 2 or self.points.shape[1] != 2 or len(self.points) < 3:
            raise BadInput(f"contour needs >= 3 (x, y) points, got shape {self.points.shape}")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class EllipseParams:
    center: tuple[float, float]
    a: float  # semi-major, px
    b: float  # semi-minor, px
    theta: float  # rotation of the major axis, radians in [0, pi)

    def __post_init__(self) -> None:
        if not (self.a >= self.b > 0):
            raise DegenerateFit(f"need a >= b > 0, got a={self.a}, b={self.b}")
        if not (0.0 <= self.theta < math.pi):
            raise BadInput(f"theta must lie in [0, pi), got {self.theta}")


@dataclass(frozen=True)
class RotRect:
    center: tuple[float, float]
    length: float  # longer side, px
    width: float  # shorter side, px
    rotation: float  # orientation of the length side, radians in [0, pi)

    def __post_init__(self) -> None:
        if not (self.length >= self.width > 0):
            raise DegenerateFit(f"need length >= width > 0, got {self.length}, {self.width}")


# Direction vectors for the crack walk, screen coordinates (y grows down).
# right_of(d) = (-dy, dx); left_of(d) = (dy, -dx).
def _trace_component(labels: np.ndarray, lab: int, start: tuple[int, int]) -> np.ndarray:
    """Trace the outer crack boundary of one labeled component.

    Walks corner to corner keeping the component on the right-hand side,
    starting at the top-left corner of the first pixel in scan order and
    emitting only direction-change corners, so an axis-aligned rectangle
    yields exactly its 4 geometric corners.
    """
    h, w = labels.shape

    def inside(px: float, py: float) -> bool:
        j, i = int(px), int(py)
        return 0 <= i < h and 0 <= j < w and labels[i, j] == lab

    i0, j0 = start
    start_corner = (j0 - 0.5, i0 - 0.5)
    start_dir = (1, 0)  # along the top edge of the start pixel

    points: list[tuple[float, float]] = [start_corner]
    cx, cy = start_corner
    dx, dy = start_dir
    while True:
        cx += dx
        cy += dy
        # pixels ahead of the corner: right of travel and left of travel
        rx, ry = -dy, dx
        lx, ly = dy, -dx
        ahead_right = inside(cx + (dx + rx) * 0.5, cy + (dy + ry) * 0.5)
        ahead_left = inside(cx + (dx + lx) * 0.5, cy + (dy + ly) * 0.5)
        if not ahead_right:
            ndx, ndy = rx, ry  # convex corner: turn right
        elif ahead_left:
            ndx, ndy = lx, ly  # concave corner: turn left
        else:
            continue  # straight edge, corner not a vertex
        if (cx, cy) == start_corner and (ndx, ndy) == start_dir:
            break
        points.append((cx, cy))
        dx, dy = ndx, ndy
    return np.asarray(points, dtype=np.float64)


def _shoelace(points: np.ndarray) -> float:
    x = points[:, 0]
    y = points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def extract_contours(mask: np.ndarray) -> list[Contour]:
    """Outer contour of every 4-connected component, largest area first."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise BadInput(f"expected 2D mask, got shape {m.shape}")
    if not m.any():
        return []
    labels, count = ndimage.label(m != 0)  # default structure is 4-connected
    contours = []
    for lab in range(1, count + 1):
        rows, cols = np.nonzero(labels == lab)
        first = int(np.argmin(rows * labels.shape[1] + cols))  # scan order
        pts = _trace_component(labels, lab, (int(rows[first]), int(cols[first])))
        contours.append(Contour(points=pts, area_px=_shoelace(pts)))
    contours.sort(key=lambda c: -abs(c.area_px))
    return contours


def _point_line_dist(pts: np.ndarray, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    """Perpendicular distance of each point to the line through p0-p1."""
    d = p1 - p0
    norm = math.hypot(d[0], d[1])
    if norm == 0.0:
        return np.hypot(pts[:, 0] - p0[0], pts[:, 1] - p0[1])
    return np.abs((pts[:, 0] - p0[0]) * d[1] - (pts[:, 1] - p0[1]) * d[0]) / norm


def _rdp_open(points: np.ndarray, eps: float) -> np.ndarray:
    """Iterative RDP on an open polyline; keeps both endpoints."""
    n = len(points)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        seg = points[lo + 1 : hi]
        dists = _point_line_dist(seg, points[lo], points[hi])
        k = int(np.argmax(dists))
        if dists[k] > eps:
            mid = lo + 1 + k
            keep[mid] = True
            stack.append((lo, mid))
            stack.append((mid, hi))
    return points[keep]


def rdp_simplify(contour: Contour, eps: float) -> Contour:
    """Ramer-Douglas-Peucker simplification of a closed contour.

    The ring is split at vertex 0 and at the vertex farthest from it, and
    each arc is simplified independently; split endpoints always survive.
    eps = 0 returns the input unchanged.
    """
    if eps < 0:
        raise BadInput(f"eps must be >= 0, got {eps}")
    pts = contour.points
    if eps == 0 or len(pts) <= 3:
        return contour
    far = int(np.argmax(np.hypot(pts[:, 0] - pts[0, 0], pts[:, 1] - pts[0, 1])))
    if far == 0:  # all points coincide; nothing to simplify
        return contour
    arc1 = _rdp_open(pts[: far + 1], eps)
    arc2 = _rdp_open(np.vstack([pts[far:], pts[:1]]), eps)
    out = np.vstack([arc1[:-1], arc2[:-1]])
    if len(out) < 3:
        # simplification collapsed the ring; keep the unsimplified contour
        return contour
    return Contour(points=out, area_px=_shoelace(out))


def default_rdp_eps(contour: Contour, eps_rel: float) -> float:
    """Scale-relative epsilon: eps_rel times the polygon perimeter."""
    pts = contour.points
    seg = np.diff(np.vstack([pts, pts[:1]]), axis=0)
    return float(eps_rel * np.hypot(seg[:, 0], seg[:, 1]).sum())


def fit_ellipse_lsq(points: np.ndarray) -> EllipseParams:
    """Direct least-squares ellipse fit (algebraic distance, ellipse-constrained).

    Numerically stabilized partitioned-scatter-matrix formulation: the
    quadratic and linear design blocks are reduced separately so the
    eigenproblem is 3x3 and well-conditioned for near-circular data. Points
    are centered and scaled before fitting; the conic is mapped back to the
    original frame and converted to geometric parameters.

    Raises DegenerateFit for < 6 points or data admitting no ellipse.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise BadInput(f"expected (n, 2) points, got shape {pts.shape}")
    if len(pts) < 6:
        raise DegenerateFit(f"ellipse fit needs >= 6 points, got {len(pts)}")

    centroid = pts.mean(axis=0)
    shifted = pts - centroid
    scale = float(np.hypot(shifted[:, 0], shifted[:, 1]).mean())
    if scale <= 0.0 or not np.isfinite(scale):
        raise DegenerateFit("all points coincide")
    x = shifted[:, 0] / scale
    y = shifted[:, 1] / scale

    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError as exc:
        raise DegenerateFit("degenerate point scatter") from exc
    m = s1 + s2 @ t
    # premultiply by inv(C) for constraint 4AC - B^2 = 1
    reduced = np.vstack([m[2] / 2.0, -m[1], m[0] / 2.0])
    eigval, eigvec = np.linalg.eig(reduced)
    if np.iscomplexobj(eigvec):
        # a complex pair can never carry the ellipse solution; keep real columns
        real_cols = (np.abs(eigvec.imag).max(axis=0) < 1e-9) & (np.abs(eigval.imag) < 1e-9)
        eigvec = eigvec.real
    else:
        real_cols = np.ones(3, dtype=bool)
    cond = 4.0 * eigvec[0] * eigvec[2] - eigvec[1] ** 2
    cond[~real_cols] = -np.inf
    candidates = np.nonzero(cond > 0)[0]
    if len(candidates) == 0:
        raise DegenerateFit("no ellipse satisfies the constraint")
    k = int(candidates[np.argmax(cond[candidates])])
    a1 = eigvec[:, k]
    conic_n = np.concatenate([a1, t @ a1])  # (A, B, C, D, E, F), normalized frame

    # undo normalization: substitute x -> (X - cx)/s, y -> (Y - cy)/s
    A, B, C, D, E, F = conic_n
    s = scale
    cx0, cy0 = centroid
    A2 = A / s**2
    B2 = B / s**2
    C2 = C / s**2
    D2 = -(2 * A * cx0 + B * cy0) / s**2 + D / s
    E2 = -(B * cx0 + 2 * C * cy0) / s**2 + E / s
    F2 = (A * cx0**2 + B * cx0 * cy0 + C * cy0**2) / s**2 - (D * cx0 + E * cy0) / s + F
    return _conic_to_ellipse(A2, B2, C2, D2, E2, F2)


def _conic_to_ellipse(A: float, B: float, C: float, D: float, E: float, F: float) -> EllipseParams:
    den = B * B - 4.0 * A * C
    if den >= 0.0:
        raise DegenerateFit("conic is not an ellipse")
    cx = (2.0 * C * D - B * E) / den
    cy = (2.0 * A * E - B * D) / den
    # value G with (p - c)^T M2 (p - c) = G on the ellipse
    G = A * cx * cx + B * cx * cy + C * cy * cy + D * cx + E * cy + F
    G = -G
    m2 = np.array([[A, B / 2.0], [B / 2.0, C]])
    evals, evecs = np.linalg.eigh(m2)
    axes = []
    for lam in evals:
        if lam == 0.0 or G / lam <= 0.0:
            raise DegenerateFit("conic is not a real ellipse")
        axes.append(math.sqrt(G / lam))
    # smaller eigenvalue of m2 owns the larger axis
    if axes[0] >= axes[1]:
        a, b = axes[0], axes[1]
        major_vec = evecs[:, 0]
    else:
        a, b = axes[1], axes[0]
        major_vec = evecs[:, 1]
    theta = math.atan2(major_vec[1], major_vec[0]) % math.pi
    if theta >= math.pi:  # fold the float edge where x % pi rounds to pi
        theta = 0.0
    if not (np.isfinite(a) and np.isfinite(b) and a > 0 and b > 0):
        raise DegenerateFit("non-finite ellipse parameters")
    return EllipseParams(center=(float(cx), float(cy)), a=float(a), b=float(b), theta=float(theta))


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices in CCW order (math sense)."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) < 3:
        raise DegenerateFit(f"hull needs >= 3 distinct points, got {len(pts)}")
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.asarray(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        raise DegenerateFit("points are collinear")
    return hull


def min_area_rect(points: np.ndarray) -> RotRect:
    """Smallest-area enclosing rotated rectangle of a point set.

    The minimum rectangle is flush with some convex-hull edge, so hull edges
    enumerate every candidate orientation; each candidate is the bounding box
    in the frame rotated to that edge. Equal-area ties resolve to the smaller
    canonical rotation angle for determinism.
    """
    hull = convex_hull(points)
    edges = np.diff(np.vstack([hull, hull[:1]]), axis=0)
    angles = np.arctan2(edges[:, 1], edges[:, 0]) % math.pi

    best: tuple[float, float, float, float, tuple[float, float]] | None = None
    for ang in angles:
        c, s = math.cos(ang), math.sin(ang)
        u = hull[:, 0] * c + hull[:, 1] * s  # along edge direction
        v = -hull[:, 0] * s + hull[:, 1] * c  # normal direction
        du = float(u.max() - u.min())
        dv = float(v.max() - v.min())
        area = du * dv
        # canonical form: length >= width, rotation = long-side angle in [0, pi)
        if du >= dv:
            length, width, rot = du, dv, ang % math.pi
        else:
            length, width, rot = dv, du, (ang + math.pi / 2.0) % math.pi
        if rot >= math.pi:  # float edge of the modulo
            rot = 0.0
        mu = (u.max() + u.min()) / 2.0
        mv = (v.max() + v.min()) / 2.0
        center = (mu * c - mv * s, mu * s + mv * c)
        cand = (area, rot, length, width, center)
        if best is None or cand[:2] < best[:2]:
            best = cand
    assert best is not None
    area, rot, length, width, center = best
    if width <= 0.0:
        raise DegenerateFit("points are collinear")
    return RotRect(center=(float(center[0]), float(center[1])),
                   length=length, width=width, rotation=rot)


def ellipse_perimeter(e: EllipseParams) -> float:
    """Ramanujan's second approximation to the ellipse perimeter."""
    a, b = e.a, e.b
    h = ((a - b) / (a + b)) ** 2
    return math.pi * (a + b) * (1.0 + 3.0 * h / (10.0 + math.sqrt(4.0 - 3.0 * h)))


def ellipse_mm_axes(e: EllipseParams, spacing: tuple[float, float]) -> tuple[float, float]:
    """Semi-axes in mm of a pixel-space ellipse under (row, col) mm/px spacing.

    The physical image of the ellipse is itself an ellipse: the parametric
    form is a linear map of the unit circle, so composing it with
    diag(col_s, row_s) and taking singular values gives the exact mm
    semi-axes, anisotropy included. Returns (major, minor).
    """
    row_s, col_s = spacing
    if row_s <= 0 or col_s <= 0:
        raise BadInput(f"spacing must be positive, got {spacing}")
    c, s = math.cos(e.theta), math.sin(e.theta)
    m = np.array(
        [[col_s * c * e.a, -col_s * s * e.b], [row_s * s * e.a, row_s * c * e.b]]
    )
    sv = np.linalg.svd(m, compute_uv=False)
    return float(sv[0]), float(sv[1])
