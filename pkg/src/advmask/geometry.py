"""Landmark-driven face masking geometry.

The masking pipeline triangulates facial landmarks, warps each template
triangle onto the corresponding target triangle with a per-triangle affine
map, extracts the lower-face polygon (jaw contour plus nose landmark), and
composites the warped pattern onto the original image inside that region.

Coordinate conventions: landmark (x, y) are pixel coordinates with origin at
the top-left; pixel (row r, column c) has its center at (c + 0.5, r + 0.5).
A pixel belongs to a polygon when its center passes the even-odd containment
test.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import (
    DegenerateInput,
    DegenerateTriangle,
    DimensionMismatch,
    MeshMismatch,
    SchemeMissingIndices,
)

logger = logging.getLogger(__name__)

# Triangles below this area (px^2) are treated as degenerate.
DEGENERATE_AREA = 1e-8

# Default faced-mask color used when solid-masking (a repo choice).
MEDICAL_BLUE = (0.45, 0.62, 0.78)


@dataclass(frozen=True)
class LandmarkScheme:
    """Index layout of a landmark convention.

    contour_indices are the lower-face contour landmarks in connection
    order; nose_index is appended to close the faced-mask polygon.
    """

    name: str
    contour_indices: tuple[int, ...]
    nose_index: int


# 68-point convention: jawline points 2..14 (0-based) plus nose tip 30.
SCHEMES: dict[str, LandmarkScheme] = {
    "ibug68": LandmarkScheme("ibug68", tuple(range(2, 15)), 30),
}


def register_scheme(scheme: LandmarkScheme) -> None:
    SCHEMES[scheme.name] = scheme


@dataclass
class LandmarkSet:
    """Ordered 2-D facial landmarks; index i corresponds across images."""

    points: np.ndarray
    scheme: str = "ibug68"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise DimensionMismatch(f"landmarks must be (N, 2), got {pts.shape}")
        if pts.shape[0] < 3:
            raise DegenerateInput("landmark set needs at least 3 points")
        if not np.all(np.isfinite(pts)):
            raise DegenerateInput("landmark coordinates must be finite")
        self.points = pts

    def __len__(self) -> int:
        return len(self.points)


def triangle_area(tri: np.ndarray) -> float:
    """Unsigned area of a triangle given as a (3, 2) array."""
    a, b, c = np.asarray(tri, dtype=np.float64)
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def delaunay_triangulate(landmarks: LandmarkSet) -> np.ndarray:
    """Delaunay triangulation of the landmark points.

    Returns an (T, 3) int array of vertex-index triples in canonical order
    (each triple sorted, triples sorted lexicographically), so identical
    inputs yield identical meshes. Every triangle's circumcircle is empty of
    other input points.
    """
    pts = landmarks.points
    if len(pts) < 3:
        raise DegenerateInput("need at least 3 points")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise DegenerateInput(f"points cannot be triangulated: {exc}") from exc
    simplices = tri.simplices
    keep = [t for t in simplices if triangle_area(pts[t]) > DEGENERATE_AREA]
    if not keep:
        raise DegenerateInput("all points collinear")
    mesh = np.sort(np.asarray(keep, dtype=np.int64), axis=1)
    order = np.lexsort((mesh[:, 2], mesh[:, 1], mesh[:, 0]))
    return mesh[order]


def fit_affine(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Affine map (2x3 matrix) sending each src vertex to its dst vertex."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if triangle_area(src) < DEGENERATE_AREA or triangle_area(dst) < DEGENERATE_AREA:
        raise DegenerateTriangle("triangle area below degeneracy threshold")
    system = np.column_stack([src, np.ones(3)])
    coeffs = np.linalg.solve(system, dst)  # (3, 2): columns are x', y'
    return coeffs.T  # rows: [a, b, c], [d, e, f]


def apply_affine(transform: np.ndarray, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return points @ transform[:, :2].T + transform[:, 2]


def bilinear_sample(image: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Sample image at continuous positions; out-of-bounds clamps to the edge.

    Positions are in the continuous pixel-center convention: pixel (r, c)
    sits at (c + 0.5, r + 0.5).
    """
    h, w = image.shape[:2]
    xf = np.clip(xy[:, 0] - 0.5, 0.0, w - 1.0)
    yf = np.clip(xy[:, 1] - 0.5, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(xf), w - 2).astype(np.int64) if w > 1 else np.zeros(len(xf), np.int64)
    y0 = np.minimum(np.floor(yf), h - 2).astype(np.int64) if h > 1 else np.zeros(len(yf), np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (xf - x0)[:, None]
    wy = (yf - y0)[:, None]
    top = image[y0, x0] * (1.0 - wx) + image[y0, x1] * wx
    bot = image[y1, x0] * (1.0 - wx) + image[y1, x1] * wx
    return top * (1.0 - wy) + bot * wy


def warp_mesh(
    template: np.ndarray,
    template_landmarks: LandmarkSet,
    target_landmarks: LandmarkSet,
    mesh: np.ndarray,
    size: tuple[int, int] | None = None,
) -> np.ndarray:
    """Warp the template onto the target landmark geometry, triangle by triangle.

    For each mesh triangle, pixels whose centers fall inside the target-space
    triangle are inverse-mapped to template space via the per-triangle affine
    transform and bilinearly sampled. Pixels covered by no triangle are 0.
    ``size`` is the (height, width) of the output; defaults to the template's.
    Degenerate triangles are skipped with a warning.
    """
    if len(template_landmarks) != len(target_landmarks):
        raise MeshMismatch(
            f"landmark counts differ: {len(template_landmarks)} vs {len(target_landmarks)}"
        )
    if template.size == 0:
        raise DimensionMismatch("template image is empty")
    out_h, out_w = size if size is not None else template.shape[:2]
    out = np.zeros((out_h, out_w, 3), dtype=np.float64)
    src_pts = template_landmarks.points
    dst_pts = target_landmarks.points

    for tri in np.asarray(mesh, dtype=np.int64):
        if tri.max() >= len(src_pts) or tri.min() < 0:
            raise MeshMismatch(f"mesh index {tri} out of range for {len(src_pts)} landmarks")
        src = src_pts[tri]
        dst = dst_pts[tri]
        if triangle_area(dst) < DEGENERATE_AREA or triangle_area(src) < DEGENERATE_AREA:
            logger.warning("skipping degenerate triangle %s", tri.tolist())
            continue
        inv = fit_affine(dst, src)  # target -> template

        x_lo = max(int(np.floor(dst[:, 0].min() - 0.5)), 0)
        x_hi = min(int(np.ceil(dst[:, 0].max() + 0.5)), out_w)
        y_lo = max(int(np.floor(dst[:, 1].min() - 0.5)), 0)
        y_hi = min(int(np.ceil(dst[:, 1].max() + 0.5)), out_h)
        if x_lo >= x_hi or y_lo >= y_hi:
            continue
        cols, rows = np.meshgrid(np.arange(x_lo, x_hi), np.arange(y_lo, y_hi))
        centers = np.column_stack([cols.ravel() + 0.5, rows.ravel() + 0.5])

        inside = _barycentric_inside(dst, centers)
        if not inside.any():
            continue
        hit = centers[inside]
        sampled = bilinear_sample(template, apply_affine(inv, hit))
        out[rows.ravel()[inside], cols.ravel()[inside]] = sampled
    return out


def _barycentric_inside(tri: np.ndarray, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    a, b, c = tri
    v0 = b - a
    v1 = c - a
    denom = v0[0] * v1[1] - v0[1] * v1[0]
    d = points - a
    l1 = (d[:, 0] * v1[1] - d[:, 1] * v1[0]) / denom
    l2 = (v0[0] * d[:, 1] - v0[1] * d[:, 0]) / denom
    return (l1 >= -tol) & (l2 >= -tol) & (l1 + l2 <= 1.0 + tol)


def rasterize_polygon(vertices: np.ndarray, height: int, width: int) -> np.ndarray:
    """Binary mask of pixels whose centers pass even-odd polygon containment."""
    vertices = np.asarray(vertices, dtype=np.float64)
    px = np.arange(width, dtype=np.float64) + 0.5
    py = np.arange(height, dtype=np.float64) + 0.5
    inside = np.zeros((height, width), dtype=bool)
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        if y1 == y2:
            continue
        straddle = (y1 > py) != (y2 > py)  # (H,)
        xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)  # (H,)
        inside ^= straddle[:, None] & (px[None, :] < xint[:, None])
    return inside.astype(np.float64)


def lower_face_region(
    landmarks: LandmarkSet,
    height: int,
    width: int,
    scheme: LandmarkScheme | None = None,
    feather: float = 0.0,
) -> np.ndarray:
    """Faced-mask region: the polygon closing the lower-face contour through the nose landmark.

    Returns an (H, W) float mask, binary unless ``feather`` > 0 (a linear
    ramp of that pixel radius, for visual output only).
    """
    if scheme is None:
        scheme = SCHEMES.get(landmarks.scheme)
        if scheme is None:
            raise SchemeMissingIndices(f"unknown landmark scheme {landmarks.scheme!r}")
    idx = list(scheme.contour_indices) + [scheme.nose_index]
    if max(idx) >= len(landmarks) or min(idx) < 0:
        raise SchemeMissingIndices(
            f"scheme {scheme.name!r} needs index {max(idx)} but only {len(landmarks)} landmarks given"
        )
    polygon = landmarks.points[idx]
    if _polygon_area(polygon) < 1e-9:
        logger.warning("lower-face contour is degenerate (zero area); returning empty mask")
    mask = rasterize_polygon(polygon, height, width)
    if feather > 0:
        from scipy.ndimage import distance_transform_edt

        mask = np.clip(distance_transform_edt(mask) / feather, 0.0, 1.0)
    return mask


def _polygon_area(vertices: np.ndarray) -> float:
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def composite(original: np.ndarray, mask_image: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Blend: region*mask_image + (1-region)*original, per channel."""
    if original.shape != mask_image.shape:
        raise DimensionMismatch(f"image shapes differ: {original.shape} vs {mask_image.shape}")
    if region.shape != original.shape[:2]:
        raise DimensionMismatch(f"region {region.shape} does not match image {original.shape[:2]}")
    r = region[:, :, None]
    return r * mask_image + (1.0 - r) * original


def build_faced_mask(
    original: np.ndarray,
    original_landmarks: LandmarkSet,
    template: np.ndarray,
    template_landmarks: LandmarkSet,
) -> tuple[np.ndarray, np.ndarray]:
    """Warp the template's face onto the original's geometry; return (mask image, region).

    Triangulation connectivity is computed on the original's landmarks and
    reused by index for the template. The region is the lower-face polygon of
    the original's landmarks; compositing is left to the caller.
    """
    if original_landmarks.scheme != template_landmarks.scheme:
        raise MeshMismatch(
            f"landmark schemes differ: {original_landmarks.scheme!r} vs {template_landmarks.scheme!r}"
        )
    if len(original_landmarks) != len(template_landmarks):
        raise MeshMismatch(
            f"landmark counts differ: {len(original_landmarks)} vs {len(template_landmarks)}"
        )
    h, w = original.shape[:2]
    mesh = delaunay_triangulate(original_landmarks)
    warped = warp_mesh(template, template_landmarks, original_landmarks, mesh, size=(h, w))
    region = lower_face_region(original_landmarks, h, w)
    return warped, region


def delaunay_mask(
    original: np.ndarray,
    original_landmarks: LandmarkSet,
    template: np.ndarray,
    template_landmarks: LandmarkSet,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full masking step: returns (masked image, warped mask image, region)."""
    warped, region = build_faced_mask(original, original_landmarks, template, template_landmarks)
    return composite(original, warped, region), warped, region
