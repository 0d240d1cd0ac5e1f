"""Frustum extraction and orthographic pseudo-view rendering.

A pseudo-view is a fit-to-raster orthographic projection of a point
subset along one axis of a step frame, with an exact affine pixel <->
local-coordinate mapping kept alongside the raster. Front views map
local (a1, a2) to (u, v) with a3 as depth; side views map (a3, a2) to
(u, v) with a1 as depth, so the two views share the a2 (v) dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateExtent, EmptyAfterPrune, EmptyFrustum
from .geometry import (
    AxesTriad,
    CameraIntrinsics,
    Detection2D,
    OrientedBox3D,
    PointCloud,
    RigidTransform,
)

MIN_EXTENT_M = 1e-3           # coarse-box degenerate clamp
MIN_PLANE_EXTENT_M = 1e-6     # below this the raster cannot be built


@dataclass(frozen=True)
class StepFrame:
    """Projection coordinate system of one recursion step (parent coords)."""

    axes: AxesTriad
    origin: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64)
        if o.shape != (3,) or not np.isfinite(o).all():
            raise ValueError("origin must be a finite 3-vector")
        o = np.ascontiguousarray(o)
        o.setflags(write=False)
        object.__setattr__(self, "origin", o)

    @classmethod
    def identity(cls) -> "StepFrame":
        return cls(AxesTriad.identity(), np.zeros(3))

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.origin) @ self.axes.matrix

    def to_parent(self, points_local: np.ndarray) -> np.ndarray:
        return np.asarray(points_local, dtype=np.float64) @ self.axes.matrix.T + self.origin

    def as_transform(self) -> RigidTransform:
        """Rigid transform mapping local coordinates into the parent frame."""
        return RigidTransform(self.axes.matrix, self.origin)


@dataclass(frozen=True)
class RenderConfig:
    max_side: int = 640
    margin: int = 8
    splat_radius: int = 1

    def __post_init__(self):
        if self.max_side <= 2 * self.margin + 1:
            raise ValueError("max_side must exceed twice the margin")
        if self.splat_radius < 0:
            raise ValueError("splat_radius must be >= 0")


@dataclass(frozen=True)
class PseudoView:
    """Orthographic raster plus the affine map back to local coordinates.

    For every rendered point i (aligned with `indices`), point_pixels[i]
    is its integer (u, v) pixel. Back-mapping (u - offset_u) / scale and
    (v - offset_v) / scale recovers the two in-plane local coordinates to
    within half a pixel. pixel_owner holds the winning point's position
    in `indices` per pixel (-1 = background), enabling oracle detection.
    """

    kind: str
    image: np.ndarray
    scale: float
    offset_u: float
    offset_v: float
    frame: StepFrame
    indices: np.ndarray
    point_pixels: np.ndarray
    pixel_owner: np.ndarray
    splat_radius: int = 1

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]

    def pixel_to_plane(self, u, v) -> tuple:
        """Map pixel coordinates to (in-plane-1, in-plane-2) meters."""
        return ((np.asarray(u) - self.offset_u) / self.scale,
                (np.asarray(v) - self.offset_v) / self.scale)


def extract_frustum(cloud: PointCloud, intr: CameraIntrinsics,
                    seed: Detection2D) -> np.ndarray:
    """Indices of points with z > 0 projecting inside the seed rectangle."""
    if len(cloud) == 0:
        raise EmptyFrustum("empty cloud")
    pos = cloud.positions
    z = pos[:, 2]
    ahead = z > 0
    u = np.full(len(cloud), -1.0)
    v = np.full(len(cloud), -1.0)
    u[ahead] = intr.fx * pos[ahead, 0] / z[ahead] + intr.cx
    v[ahead] = intr.fy * pos[ahead, 1] / z[ahead] + intr.cy
    inside = ahead & seed.contains(u, v)
    idx = np.flatnonzero(inside)
    if idx.size == 0:
        raise EmptyFrustum(f"seed rect {seed.rect} covers no geometry")
    return idx


def coarse_box(points: np.ndarray, frame: StepFrame,
               class_label: str = "", score: float = 0.0) -> OrientedBox3D:
    """Axis-aligned bounding box of the points in the frame's axes."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("coarse_box needs at least one point")
    local = frame.to_local(pts)
    lo, hi = local.min(axis=0), local.max(axis=0)
    extent = np.maximum(hi - lo, MIN_EXTENT_M)
    center_local = (lo + hi) / 2.0
    pose = RigidTransform(frame.axes.matrix, frame.to_parent(center_local))
    return OrientedBox3D(pose=pose, extent=extent, class_label=class_label,
                         score=score, converged=False, steps=0)


# Local in-plane axes per view kind: (u source column, v source column,
# depth column) of the frame-local coordinates.
_VIEW_COLS = {"front": (0, 1, 2), "side": (2, 1, 0)}


def _splat_offsets(radius: int) -> np.ndarray:
    if radius == 0:
        return np.array([[0, 0]], dtype=np.int64)
    r = int(radius)
    du, dv = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1))
    keep = du ** 2 + dv ** 2 <= r ** 2
    return np.stack([du[keep], dv[keep]], axis=1)


def render_pseudo_view(cloud: PointCloud, indices: np.ndarray, frame: StepFrame,
                       kind: str, cfg: RenderConfig = RenderConfig()) -> PseudoView:
    """Rasterize the selected points orthographically along one frame axis.

    Nearest point per pixel wins; exact depth ties are broken by local
    coordinates then color, so the raster is invariant to point order.
    """
    if kind not in _VIEW_COLS:
        raise ValueError(f"kind must be 'front' or 'side', got {kind!r}")
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise ValueError("render_pseudo_view needs a nonempty index set")

    local = frame.to_local(cloud.positions[indices])
    cu, cv, cd = _VIEW_COLS[kind]
    x, y, depth = local[:, cu], local[:, cv], local[:, cd]

    x0, x1 = x.min(), x.max()
    y0, y1 = y.min(), y.max()
    span_x, span_y = x1 - x0, y1 - y0
    if min(span_x, span_y) < MIN_PLANE_EXTENT_M and indices.size > 1:
        raise DegenerateExtent(
            f"{kind} view in-plane extent {span_x:.2e} x {span_y:.2e} m")
    if max(span_x, span_y) < MIN_PLANE_EXTENT_M:
        if indices.size > 1:
            raise DegenerateExtent("all points coincide in plane")
        span_x = span_y = MIN_PLANE_EXTENT_M  # single point: 1px raster

    m = cfg.margin
    scale = (cfg.max_side - 2 * m - 1) / max(span_x, span_y)
    width = int(np.ceil(span_x * scale)) + 2 * m + 1
    height = int(np.ceil(span_y * scale)) + 2 * m + 1
    offset_u = m - scale * x0
    offset_v = m - scale * y0

    u = np.rint(scale * x + offset_u).astype(np.int64)
    v = np.rint(scale * y + offset_v).astype(np.int64)
    # rounding can land one past the computed size at the far edge
    u = np.clip(u, 0, width - 1)
    v = np.clip(v, 0, height - 1)

    offsets = _splat_offsets(cfg.splat_radius)
    n, k = indices.size, offsets.shape[0]
    cand_u = (u[:, None] + offsets[None, :, 0]).reshape(-1)
    cand_v = (v[:, None] + offsets[None, :, 1]).reshape(-1)
    cand_pt = np.repeat(np.arange(n), k)
    ok = (cand_u >= 0) & (cand_u < width) & (cand_v >= 0) & (cand_v < height)
    cand_u, cand_v, cand_pt = cand_u[ok], cand_v[ok], cand_pt[ok]

    # winner per pixel: smallest depth, ties by local coords then color
    colors = cloud.colors[indices]
    pix = cand_v * width + cand_u
    c = colors[cand_pt]
    order = np.lexsort((c[:, 2], c[:, 1], c[:, 0],
                        local[cand_pt, 2], local[cand_pt, 1], local[cand_pt, 0],
                        depth[cand_pt], pix))
    pix_sorted = pix[order]
    first = np.ones(pix_sorted.size, dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win_pix = pix_sorted[first]
    win_pt = cand_pt[order][first]

    image = np.zeros((height, width, 3), dtype=np.uint8)
    image.reshape(-1, 3)[win_pix] = colors[win_pt]
    owner = np.full(height * width, -1, dtype=np.int64)
    owner[win_pix] = win_pt
    owner = owner.reshape(height, width)

    image.setflags(write=False)
    owner.setflags(write=False)
    point_pixels = np.stack([u, v], axis=1)
    point_pixels.setflags(write=False)
    idx_frozen = indices.copy()
    idx_frozen.setflags(write=False)
    return PseudoView(kind=kind, image=image, scale=float(scale),
                      offset_u=float(offset_u), offset_v=float(offset_v),
                      frame=frame, indices=idx_frozen,
                      point_pixels=point_pixels, pixel_owner=owner,
                      splat_radius=cfg.splat_radius)


def prune_by_boxes(indices: np.ndarray, front: PseudoView, side: PseudoView,
                   det_front: Detection2D, det_side: Detection2D) -> np.ndarray:
    """Retain indices whose pixels fall inside both detection rectangles."""
    indices = np.asarray(indices, dtype=np.int64)
    if not (np.array_equal(front.indices, indices)
            and np.array_equal(side.indices, indices)):
        raise ValueError("views were not rendered over the given index set")
    fu, fv = front.point_pixels[:, 0], front.point_pixels[:, 1]
    su, sv = side.point_pixels[:, 0], side.point_pixels[:, 1]
    keep = det_front.contains(fu, fv) & det_side.contains(su, sv)
    out = indices[keep]
    if out.size == 0:
        raise EmptyAfterPrune("detections retain no common points")
    return out
