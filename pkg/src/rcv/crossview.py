"""Synthesize an oriented 3D box from front + side 2D detections.

Two orthographic views of a box determine it: the front view fixes the
a1 and a2 intervals, the side view fixes a3 and a2. The shared a2 (v)
intervals must overlap; their intersection is used as the box height,
matching the conjunctive point pruning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InconsistentViews
from .geometry import Detection2D, OrientedBox3D, RigidTransform
from .views import PseudoView


@dataclass(frozen=True)
class BoxPair:
    """A front and a side detection believed to be the same object."""

    front: Detection2D
    side: Detection2D
    pair_quality: float

    def __post_init__(self):
        if self.front.class_label != self.side.class_label:
            raise ValueError("paired detections must share a class label")
        if not self.pair_quality > 0:
            raise ValueError("pair_quality must be positive")


def _interval(lo_px: float, hi_px: float, offset: float, scale: float,
              splat: int) -> tuple[float, float]:
    # a half-open rect [u0, u1) covers pixel indices u0 .. u1-1; pixel
    # indices back-map like point pixels, which keeps interval endpoints
    # unbiased estimates of the extreme points' plane coordinates. Rects
    # are drawn on the splatted raster, which pads every point by the
    # splat radius, so that padding is deflated here.
    lo = (lo_px + splat - offset) / scale
    hi = (hi_px - 1.0 - splat - offset) / scale
    if hi - lo < 1.0 / scale:
        mid = (lo + hi) / 2.0
        lo, hi = mid - 0.5 / scale, mid + 0.5 / scale
    return lo, hi


def _u_interval(view: PseudoView, det: Detection2D) -> tuple[float, float]:
    return _interval(det.rect[0], det.rect[2], view.offset_u, view.scale,
                     view.splat_radius)


def _v_interval(view: PseudoView, det: Detection2D) -> tuple[float, float]:
    return _interval(det.rect[1], det.rect[3], view.offset_v, view.scale,
                     view.splat_radius)


def _same_frame(a: PseudoView, b: PseudoView) -> bool:
    return (np.array_equal(a.frame.axes.matrix, b.frame.axes.matrix)
            and np.array_equal(a.frame.origin, b.frame.origin))


def cross_view(pair: BoxPair, front_view: PseudoView,
               side_view: PseudoView, score: float = 0.0) -> OrientedBox3D:
    """Back-map the two rectangles to local intervals and build the box.

    Front gives the a1 interval and one a2 interval; side gives the a3
    interval and the other a2 interval; the a2 intervals are intersected.
    The returned pose rotation equals the step-frame axes exactly.
    """
    if front_view.kind != "front" or side_view.kind != "side":
        raise ValueError("cross_view expects a front view and a side view")
    if not _same_frame(front_view, side_view):
        raise ValueError("views must share the same step frame")

    ix = _u_interval(front_view, pair.front)
    iy_f = _v_interval(front_view, pair.front)
    iz = _u_interval(side_view, pair.side)
    iy_s = _v_interval(side_view, pair.side)
    iy = (max(iy_f[0], iy_s[0]), min(iy_f[1], iy_s[1]))
    if not iy[0] < iy[1]:
        raise InconsistentViews(
            f"shared-v intervals {iy_f} and {iy_s} do not overlap")

    lo = np.array([ix[0], iy[0], iz[0]])
    hi = np.array([ix[1], iy[1], iz[1]])
    frame = front_view.frame
    center = frame.to_parent((lo + hi) / 2.0)
    pose = RigidTransform(frame.axes.matrix, center)
    return OrientedBox3D(pose=pose, extent=hi - lo,
                         class_label=pair.front.class_label, score=score,
                         converged=False, steps=0)


def shared_v_iou(front_view: PseudoView, side_view: PseudoView,
                 det_front: Detection2D, det_side: Detection2D) -> float:
    """IoU of the two detections' v intervals, in meters."""
    f = _v_interval(front_view, det_front)
    s = _v_interval(side_view, det_side)
    inter = min(f[1], s[1]) - max(f[0], s[0])
    if inter <= 0:
        return 0.0
    union = (f[1] - f[0]) + (s[1] - s[0]) - inter
    return inter / union if union > 0 else 0.0


def pair_boxes(front_dets: list[Detection2D], side_dets: list[Detection2D],
               front_view: PseudoView, side_view: PseudoView,
               min_quality: float = 0.25) -> list[BoxPair]:
    """Greedy one-to-one matching of detections across the two views.

    Cross pairs are ranked by shared-v interval IoU (descending); pairs
    below min_quality are dropped. Per-frustum detection counts are tiny,
    so greedy matching is both deterministic and sufficient.
    """
    labels = {d.class_label for d in front_dets} | {d.class_label for d in side_dets}
    if len(labels) > 1:
        raise ValueError("pair_boxes expects a single class label")
    scored = []
    for i, df in enumerate(front_dets):
        for j, ds in enumerate(side_dets):
            q = shared_v_iou(front_view, side_view, df, ds)
            if q >= min_quality and q > 0:
                scored.append((q, i, j))
    scored.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_f: set[int] = set()
    used_s: set[int] = set()
    pairs = []
    for q, i, j in scored:
        if i in used_f or j in used_s:
            continue
        used_f.add(i)
        used_s.add(j)
        pairs.append(BoxPair(front_dets[i], side_dets[j], q))
    return pairs
