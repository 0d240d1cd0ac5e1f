"""Oriented-box geometry and detection metrics.

iou3d clips one box's polytope against the other's six half-spaces and
integrates the clipped volume with the divergence theorem, so arbitrary
SO(3) poses are handled exactly (no yaw-only shortcut). NMS is greedy
and class-wise. AP supports exact all-point integration and the 40-point
recall-interpolated variant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import OrientedBox3D

# Corner indices (binary sign order) of the six faces, wound so the face
# normal points outward.
_FACE_LOOPS = (
    (4, 6, 7, 5),   # +x
    (0, 1, 3, 2),   # -x
    (2, 3, 7, 6),   # +y
    (0, 4, 5, 1),   # -y
    (1, 5, 7, 3),   # +z
    (0, 2, 6, 4),   # -z
)


def _box_faces(box: OrientedBox3D) -> list[np.ndarray]:
    corners = box.corners()[:3].T
    return [corners[list(loop)] for loop in _FACE_LOOPS]


def _box_halfspaces(box: OrientedBox3D):
    """Six (normal, offset) pairs with inside = {x : n.x <= d}."""
    r, c, e = box.pose.rotation, box.center, box.extent / 2.0
    for k in range(3):
        n = r[:, k]
        base = float(n @ c)
        yield n, base + e[k]
        yield -n, -(base - e[k])


def _clip_face(face: np.ndarray, n: np.ndarray, d: float, eps: float):
    """Sutherland-Hodgman clip of a 3D polygon against n.x <= d."""
    dist = face @ n - d
    if (dist <= eps).all():
        return face
    if (dist >= -eps).all():
        return None
    out = []
    m = len(face)
    for i in range(m):
        j = (i + 1) % m
        p, q = face[i], face[j]
        dp, dq = dist[i], dist[j]
        if dp <= eps:
            out.append(p)
        if (dp < -eps and dq > eps) or (dp > eps and dq < -eps):
            t = dp / (dp - dq)
            out.append(p + t * (q - p))
    return np.asarray(out) if len(out) >= 3 else None


def _cap_face(points: list[np.ndarray], n: np.ndarray, eps: float):
    """Assemble the polygon closing a planar cut, wound outward along n."""
    if len(points) < 3:
        return None
    uniq: list[np.ndarray] = []
    for p in points:
        if all(np.abs(p - q).max() > eps for q in uniq):
            uniq.append(p)
    if len(uniq) < 3:
        return None
    pts = np.asarray(uniq)
    u = pts[1] - pts[0]
    nu = np.linalg.norm(u)
    if nu < eps:
        return None
    u = u / nu
    v = np.cross(n, u)
    center = pts.mean(axis=0)
    rel = pts - center
    ang = np.arctan2(rel @ v, rel @ u)
    return pts[np.argsort(ang)]


def _polytope_volume(faces: list[np.ndarray]) -> float:
    """Divergence theorem over an outward-oriented closed surface."""
    vol = 0.0
    for face in faces:
        a = face[0]
        for i in range(1, len(face) - 1):
            vol += float(np.dot(a, np.cross(face[i], face[i + 1])))
    return vol / 6.0


def intersection_volume(a: OrientedBox3D, b: OrientedBox3D) -> float:
    """Exact volume of the intersection of two oriented boxes."""
    scale = max(1.0, float(np.abs(a.center).max()), float(np.abs(b.center).max()),
                float(a.extent.max()), float(b.extent.max()))
    eps = 1e-12 * scale
    faces = _box_faces(a)
    for n, d in _box_halfspaces(b):
        new_faces = []
        cut_points: list[np.ndarray] = []
        modified = False
        for face in faces:
            clipped = _clip_face(face, n, d, eps)
            if clipped is None:
                modified = True
                continue
            if clipped is not face:
                modified = True
            new_faces.append(clipped)
            on_plane = np.abs(clipped @ n - d) <= 2 * eps
            for p in clipped[on_plane]:
                cut_points.append(p)
        # a cap is only needed when the plane actually removed geometry;
        # a plane merely touching a face must not add a duplicate face
        if modified:
            cap = _cap_face(cut_points, n, 10 * eps)
            if cap is not None:
                new_faces.append(cap)
        faces = new_faces
        if not faces:
            return 0.0
    return max(0.0, _polytope_volume(faces))


def _corner_key(box: OrientedBox3D) -> bytes:
    return np.ascontiguousarray(box.corners()[:3]).tobytes()


def iou3d(a: OrientedBox3D, b: OrientedBox3D) -> float:
    """Exact intersection-over-union of two oriented boxes, in [0, 1]."""
    gap = a.center - b.center
    reach = (np.linalg.norm(a.extent) + np.linalg.norm(b.extent)) / 2.0
    if float(gap @ gap) > reach * reach:
        return 0.0
    # canonical operand order makes iou3d(a, b) bitwise symmetric
    if _corner_key(a) <= _corner_key(b):
        inter = intersection_volume(a, b)
    else:
        inter = intersection_volume(b, a)
    union = a.volume() + b.volume() - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def _sort_key(box: OrientedBox3D):
    c = box.center
    e = box.extent
    return (-box.score, c[0], c[1], c[2], e[0], e[1], e[2], box.class_label)


def nms3d(boxes: list[OrientedBox3D], tau: float = 0.25) -> list[OrientedBox3D]:
    """Greedy class-wise suppression of boxes overlapping a kept box.

    Boxes of different classes never suppress each other. Output keeps
    the visit order: descending score, ties by center then extent.
    """
    kept: list[OrientedBox3D] = []
    for box in sorted(boxes, key=_sort_key):
        if all(other.class_label != box.class_label
               or iou3d(box, other) < tau for other in kept):
            kept.append(box)
    return kept


@dataclass(frozen=True)
class MatchResult:
    """Greedy score-descending matching of detections to ground truth."""

    matched_gt: list[int | None]   # per detection, in score-descending order
    ious: list[float]
    precision: np.ndarray
    recall: np.ndarray
    num_gt: int
    num_pred: int


def match_detections(preds: list[OrientedBox3D], gts: list[OrientedBox3D],
                     iou_thresh: float) -> MatchResult:
    order = sorted(range(len(preds)), key=lambda i: _sort_key(preds[i]))
    taken = [False] * len(gts)
    matched: list[int | None] = []
    ious: list[float] = []
    tp = 0
    precision, recall = [], []
    for rank, i in enumerate(order, start=1):
        best_j, best_iou = None, 0.0
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            v = iou3d(preds[i], gt)
            if v > best_iou:
                best_j, best_iou = j, v
        if best_j is not None and best_iou >= iou_thresh:
            taken[best_j] = True
            matched.append(best_j)
            tp += 1
        else:
            matched.append(None)
        ious.append(best_iou)
        precision.append(tp / rank)
        recall.append(tp / len(gts) if gts else 0.0)
    return MatchResult(matched_gt=matched, ious=ious,
                       precision=np.asarray(precision),
                       recall=np.asarray(recall),
                       num_gt=len(gts), num_pred=len(preds))


def _interpolated(precision: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(precision[::-1])[::-1]


def pooled_pr(groups: list[tuple[list[OrientedBox3D], list[OrientedBox3D]]],
              iou_thresh: float) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Precision/recall over several (preds, gts) groups (e.g. scenes).

    Matching runs inside each group; the pooled curve ranks all
    detections by score across groups.
    """
    scored: list[tuple[float, tuple, bool]] = []
    num_gt = 0
    num_pred = 0
    for preds, gts in groups:
        num_gt += len(gts)
        num_pred += len(preds)
        m = match_detections(preds, gts, iou_thresh)
        order = sorted(range(len(preds)), key=lambda i: _sort_key(preds[i]))
        for pos, i in enumerate(order):
            scored.append((preds[i].score, _sort_key(preds[i]),
                           m.matched_gt[pos] is not None))
    scored.sort(key=lambda t: (-t[0], t[1]))
    tp = 0
    precision, recall = [], []
    for rank, (_, _, is_tp) in enumerate(scored, start=1):
        tp += is_tp
        precision.append(tp / rank)
        recall.append(tp / num_gt if num_gt else 0.0)
    return (np.asarray(precision), np.asarray(recall), num_gt, num_pred)


def _ap_from_pr(precision: np.ndarray, recall: np.ndarray, mode: str) -> float:
    if len(precision) == 0:
        return 0.0
    interp = _interpolated(precision)
    if mode == "allpoint":
        ap = 0.0
        prev_r = 0.0
        for p, r in zip(interp, recall):
            if r > prev_r:
                ap += (r - prev_r) * p
                prev_r = r
        return ap
    total = 0.0
    for lv in np.arange(1, 41) / 40.0:
        mask = recall >= lv - 1e-12
        total += float(interp[mask][0]) if mask.any() else 0.0
    return total / 40.0


def average_precision(preds: list[OrientedBox3D], gts: list[OrientedBox3D],
                      iou_thresh: float = 0.15,
                      mode: str = "allpoint") -> float | None:
    """AP of one class. Returns None when there is no ground truth.

    allpoint integrates the monotone precision-recall staircase exactly;
    R40 averages interpolated precision at recalls 1/40 .. 40/40.
    """
    return pooled_average_precision([(preds, gts)], iou_thresh, mode)


def pooled_average_precision(
        groups: list[tuple[list[OrientedBox3D], list[OrientedBox3D]]],
        iou_thresh: float = 0.15, mode: str = "allpoint") -> float | None:
    if mode not in ("allpoint", "R40"):
        raise ValueError(f"unknown AP mode {mode!r}")
    if not any(gts for _, gts in groups):
        return None
    precision, recall, _, _ = pooled_pr(groups, iou_thresh)
    return _ap_from_pr(precision, recall, mode)


def evaluate_classwise(preds: list[OrientedBox3D], gts: list[OrientedBox3D],
                       iou_thresh: float = 0.15,
                       mode: str = "allpoint") -> list[dict]:
    """Per-class eval reports; classes with no GT are reported as absent."""
    return evaluate_classwise_grouped([(preds, gts)], iou_thresh, mode)


def evaluate_classwise_grouped(
        groups: list[tuple[list[OrientedBox3D], list[OrientedBox3D]]],
        iou_thresh: float = 0.15, mode: str = "allpoint") -> list[dict]:
    classes: set[str] = set()
    for preds, gts in groups:
        classes |= {b.class_label for b in preds} | {b.class_label for b in gts}
    reports = []
    for cls in sorted(classes):
        sub = [([b for b in preds if b.class_label == cls],
                [b for b in gts if b.class_label == cls])
               for preds, gts in groups]
        ap = pooled_average_precision(sub, iou_thresh, mode)
        reports.append({"class": cls, "iou_thresh": float(iou_thresh),
                        "mode": mode, "ap": ap,
                        "num_gt": sum(len(g) for _, g in sub),
                        "num_pred": sum(len(p) for p, _ in sub)})
    return reports
