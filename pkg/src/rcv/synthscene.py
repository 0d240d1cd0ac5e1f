"""Deterministic synthetic RGB-D scenes with exact ground truth.

Objects are textured cuboids sampled on their faces; a z-buffer at the
camera resolution provides both the seed image / instance map and the
optional partial-view culling, so the pixel map always agrees with the
retained cloud. Everything is a pure function of the spec's seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxops import intersection_volume
from .detect import InstancePixelMap
from .errors import InfeasibleSpec
from .geometry import CameraIntrinsics, OrientedBox3D, PointCloud, RigidTransform

DEFAULT_INTRINSICS = CameraIntrinsics(fx=260.0, fy=260.0, cx=160.0, cy=120.0,
                                      width=320, height=240)

DEFAULT_CLASSES = {
    "crate": ((0.28, 0.55), (0.28, 0.55), (0.28, 0.55)),
}

# saturated per-face palette; distinct faces help human labeling
_FACE_COLORS = np.array([
    [230, 70, 60], [60, 170, 230], [70, 200, 90],
    [240, 200, 60], [180, 90, 220], [240, 140, 50],
], dtype=np.float64)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_objects: tuple[int, int] = (1, 3)
    classes: dict = field(default_factory=lambda: dict(DEFAULT_CLASSES))
    orientation_mode: str = "upright"      # upright | full_so3
    partial_view: bool = True
    clutter_density: float = 150.0         # points per m^2 on the floor
    occluder_prob: float = 0.0
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    points_per_m2: float = 2500.0
    floor_y: float = 1.1                   # y grows downward
    z_range: tuple[float, float] = (1.8, 3.4)
    image_margin_px: float = 12.0
    min_image_gap_px: float = 6.0
    max_place_attempts: int = 1000

    def __post_init__(self):
        if self.orientation_mode not in ("upright", "full_so3"):
            raise ValueError(f"unknown orientation_mode {self.orientation_mode!r}")
        if self.n_objects[0] < 0 or self.n_objects[1] < self.n_objects[0]:
            raise ValueError("n_objects must be a non-negative (lo, hi) range")
        for cls, ranges in self.classes.items():
            for lo, hi in ranges:
                if not 0 < lo <= hi:
                    raise ValueError(f"bad size range for class {cls!r}")
        if self.clutter_density < 0 or self.points_per_m2 <= 0:
            raise ValueError("densities must be positive")


@dataclass(frozen=True)
class SceneFrame:
    cloud: PointCloud
    image: np.ndarray
    image_instances: InstancePixelMap
    gt_boxes: list[OrientedBox3D]
    intrinsics: CameraIntrinsics

    @property
    def instance_classes(self) -> dict[int, str]:
        return self.image_instances.classes


def _rot_y(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _project_rect(intr: CameraIntrinsics, box: OrientedBox3D):
    corners = box.corners()[:3].T
    if (corners[:, 2] <= 0.05).any():
        return None
    uv = intr.project(corners)
    return uv[:, 0].min(), uv[:, 1].min(), uv[:, 0].max(), uv[:, 1].max()


def _rects_gap(a, b) -> float:
    du = max(a[0] - b[2], b[0] - a[2])
    dv = max(a[1] - b[3], b[1] - a[3])
    return max(du, dv)


def _place_objects(spec: SceneSpec, rng: np.random.Generator) -> list[OrientedBox3D]:
    count = int(rng.integers(spec.n_objects[0], spec.n_objects[1] + 1))
    names = sorted(spec.classes)
    intr = spec.intrinsics
    boxes: list[OrientedBox3D] = []
    rects: list = []
    for _ in range(count):
        cls = names[int(rng.integers(len(names)))]
        ranges = spec.classes[cls]
        placed = False
        for _ in range(spec.max_place_attempts):
            extent = np.array([rng.uniform(lo, hi) for lo, hi in ranges])
            if spec.orientation_mode == "upright":
                rot = _rot_y(rng.uniform(0, 2 * np.pi))
            else:
                rot = _random_rotation(rng)
            z = rng.uniform(*spec.z_range)
            u = rng.uniform(spec.image_margin_px + 30,
                            intr.width - spec.image_margin_px - 30)
            x = (u - intr.cx) * z / intr.fx
            if spec.orientation_mode == "upright":
                y = spec.floor_y - extent[1] / 2
            else:
                y = rng.uniform(0.3, 0.8) * spec.floor_y
            box = OrientedBox3D(RigidTransform(rot, [x, y, z]), extent,
                                class_label=cls, score=1.0,
                                converged=True, steps=0)
            rect = _project_rect(intr, box)
            if rect is None:
                continue
            m = spec.image_margin_px
            if not (rect[0] >= m and rect[1] >= m
                    and rect[2] <= intr.width - m and rect[3] <= intr.height - m):
                continue
            if any(intersection_volume(box, other) > 1e-9 for other in boxes):
                continue
            if spec.min_image_gap_px > 0 and any(
                    _rects_gap(rect, r) < spec.min_image_gap_px for r in rects):
                continue
            boxes.append(box)
            rects.append(rect)
            placed = True
            break
        if not placed:
            raise InfeasibleSpec(
                f"could not place object {len(boxes) + 1} of {count} "
                f"after {spec.max_place_attempts} attempts")
    return boxes


def _sample_box_surface(box: OrientedBox3D, density: float,
                        rng: np.random.Generator, base_color: np.ndarray):
    """Uniform points on all six faces plus the exact face corners."""
    e = box.extent
    half = e / 2.0
    pts_local = []
    colors = []
    # faces: (fixed axis, sign); in-plane axes are the other two
    for fi, (axis, sign) in enumerate(((0, 1), (0, -1), (1, 1),
                                       (1, -1), (2, 1), (2, -1))):
        others = [k for k in range(3) if k != axis]
        area = e[others[0]] * e[others[1]]
        n = max(4, int(round(area * density)))
        uv = rng.uniform(-1, 1, (n, 2)) * half[others]
        corner_uv = np.array([[su * half[others[0]], sv * half[others[1]]]
                              for su in (-1, 1) for sv in (-1, 1)])
        uv = np.vstack([uv, corner_uv])
        face = np.empty((len(uv), 3))
        face[:, axis] = sign * half[axis]
        face[:, others[0]] = uv[:, 0]
        face[:, others[1]] = uv[:, 1]
        pts_local.append(face)
        shade = 0.6 + 0.4 * (fi % 2)
        c = np.clip(_FACE_COLORS[fi] * shade * (base_color / 255.0), 0, 255)
        colors.append(np.tile(c, (len(uv), 1)))
    pts_local = np.vstack(pts_local)
    world = pts_local @ box.pose.rotation.T + box.center
    return world, np.vstack(colors).astype(np.uint8)


def _occluder_points(target: OrientedBox3D, rng: np.random.Generator):
    z = float(target.center[2]) * rng.uniform(0.45, 0.65)
    scale = z / float(target.center[2])
    center = np.array([target.center[0] * scale + rng.uniform(-0.15, 0.15),
                       target.center[1] * scale + rng.uniform(-0.1, 0.1), z])
    extent = np.array([rng.uniform(0.15, 0.3), rng.uniform(0.2, 0.4), 0.02])
    slab = OrientedBox3D(RigidTransform(np.eye(3), center), extent)
    pts, _ = _sample_box_surface(slab, 2500.0, rng,
                                 np.array([120.0, 120.0, 120.0]))
    colors = np.tile(np.array([70, 70, 75], dtype=np.uint8), (len(pts), 1))
    return pts, colors


def _zbuffer_visibility(positions: np.ndarray, intr: CameraIntrinsics):
    """Winner point index per pixel; -1 where nothing projects."""
    z = positions[:, 2]
    ahead = z > 1e-6
    u = np.full(len(positions), -1, dtype=np.int64)
    v = np.full(len(positions), -1, dtype=np.int64)
    u[ahead] = np.floor(intr.fx * positions[ahead, 0] / z[ahead] + intr.cx).astype(np.int64)
    v[ahead] = np.floor(intr.fy * positions[ahead, 1] / z[ahead] + intr.cy).astype(np.int64)
    valid = ahead & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    idx = np.flatnonzero(valid)
    pix = v[idx] * intr.width + u[idx]
    order = np.lexsort((idx, z[idx], pix))
    pix_sorted = pix[order]
    first = np.ones(pix_sorted.size, dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    owner = np.full(intr.height * intr.width, -1, dtype=np.int64)
    owner[pix_sorted[first]] = idx[order][first]
    return owner.reshape(intr.height, intr.width)


def generate_scene(spec: SceneSpec) -> SceneFrame:
    """Build one frame; bit-identical for equal specs."""
    rng = np.random.default_rng(spec.seed)
    gt_boxes = _place_objects(spec, rng)

    pts_list, color_list, id_list = [], [], []
    for i, box in enumerate(gt_boxes, start=1):
        base = rng.uniform(140, 255, 3)
        pts, colors = _sample_box_surface(box, spec.points_per_m2, rng, base)
        pts_list.append(pts)
        color_list.append(colors)
        id_list.append(np.full(len(pts), i, dtype=np.int32))

    if spec.clutter_density > 0:
        x0, x1 = -2.2, 2.2
        z0, z1 = max(0.6, spec.z_range[0] - 0.6), spec.z_range[1] + 0.8
        n = int(round((x1 - x0) * (z1 - z0) * spec.clutter_density))
        ground = np.empty((n, 3))
        ground[:, 0] = rng.uniform(x0, x1, n)
        ground[:, 1] = spec.floor_y
        ground[:, 2] = rng.uniform(z0, z1, n)
        shade = rng.uniform(60, 110, (n, 1))
        pts_list.append(ground)
        color_list.append(np.tile(shade, (1, 3)).astype(np.uint8))
        id_list.append(np.zeros(n, dtype=np.int32))

    for box in gt_boxes:
        if rng.random() < spec.occluder_prob:
            pts, colors = _occluder_points(box, rng)
            pts_list.append(pts)
            color_list.append(colors)
            id_list.append(np.zeros(len(pts), dtype=np.int32))

    if pts_list:
        positions = np.vstack(pts_list)
        colors = np.vstack(color_list)
        ids = np.concatenate(id_list)
    else:
        positions = np.zeros((0, 3))
        colors = np.zeros((0, 3), dtype=np.uint8)
        ids = np.zeros(0, dtype=np.int32)

    intr = spec.intrinsics
    owner = _zbuffer_visibility(positions, intr)

    image = np.zeros((intr.height, intr.width, 3), dtype=np.uint8)
    inst = np.zeros((intr.height, intr.width), dtype=np.int32)
    hit = owner >= 0
    image[hit] = colors[owner[hit]]
    inst[hit] = ids[owner[hit]]
    image.setflags(write=False)

    if spec.partial_view:
        visible = np.zeros(len(positions), dtype=bool)
        visible[owner[hit]] = True
        positions, colors, ids = positions[visible], colors[visible], ids[visible]

    classes = {i + 1: b.class_label for i, b in enumerate(gt_boxes)}
    cloud = PointCloud(positions, colors, instance_ids=ids)
    return SceneFrame(cloud=cloud, image=image,
                      image_instances=InstancePixelMap(inst, classes),
                      gt_boxes=gt_boxes, intrinsics=intr)
