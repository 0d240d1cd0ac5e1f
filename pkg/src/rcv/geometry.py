"""Core geometric types: point clouds, rigid transforms, oriented boxes.

All rotations are 3x3 orthonormal matrices with determinant +1, validated
at construction. Boxes are stored as pose + full extents; the homogeneous
4x8 corner matrix is derived on demand. Corner columns follow a fixed
binary sign order over (x, y, z): (---, --+, -+-, -++, +--, +-+, ++-, +++).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROT_TOL = 1e-9

# Sign patterns for the 8 corners, one column per corner, binary order.
_CORNER_SIGNS = np.array(
    [[-1, -1, -1, -1, 1, 1, 1, 1],
     [-1, -1, 1, 1, -1, -1, 1, 1],
     [-1, 1, -1, 1, -1, 1, -1, 1]],
    dtype=np.float64,
)


def _as_array(x, shape, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
    return a


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    """Colored point cloud in the sensor frame.

    positions: (N, 3) float64, meters. colors: (N, 3) uint8.
    instance_ids: optional (N,) int32, 0 = background (synthetic GT only).
    """

    positions: np.ndarray
    colors: np.ndarray
    instance_ids: np.ndarray | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {pos.shape}")
        col = np.asarray(self.colors, dtype=np.uint8)
        if col.shape != pos.shape:
            raise ValueError("colors must match positions shape")
        if not np.isfinite(pos).all():
            raise ValueError("positions contain non-finite values")
        object.__setattr__(self, "positions", _freeze(pos))
        object.__setattr__(self, "colors", _freeze(col))
        if self.instance_ids is not None:
            ids = np.asarray(self.instance_ids, dtype=np.int32)
            if ids.shape != (pos.shape[0],):
                raise ValueError("instance_ids must be (N,)")
            if (ids < 0).any():
                raise ValueError("instance_ids must be non-negative")
            object.__setattr__(self, "instance_ids", _freeze(ids))

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model: u = fx*x/z + cx, v = fy*y/z + cy."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project (N, 3) camera-frame points to (N, 2) pixel coordinates."""
        pts = np.asarray(points, dtype=np.float64)
        z = pts[:, 2]
        u = self.fx * pts[:, 0] / z + self.cx
        v = self.fy * pts[:, 1] / z + self.cy
        return np.stack([u, v], axis=1)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]),
                   cy=float(d["cy"]), width=int(d["width"]), height=int(d["height"]))


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion p -> rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _as_array(self.rotation, (3, 3), "rotation")
        t = _as_array(self.translation, (3,), "translation")
        if not np.isfinite(r).all() or not np.isfinite(t).all():
            raise ValueError("transform has non-finite entries")
        if np.abs(r @ r.T - np.eye(3)).max() > ROT_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ROT_TOL:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", _freeze(r))
        object.__setattr__(self, "translation", _freeze(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to one 3-vector or an (N, 3) stack."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def invert(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation))

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def compose(outer: RigidTransform, inner: RigidTransform) -> RigidTransform:
    """Transform equal to applying inner first, then outer."""
    return RigidTransform(outer.rotation @ inner.rotation,
                          outer.rotation @ inner.translation + outer.translation)


@dataclass(frozen=True)
class AxesTriad:
    """Right-handed orthonormal projection axes, columns a1, a2, a3."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _as_array(self.matrix, (3, 3), "axes matrix")
        a1, a2, a3 = m[:, 0], m[:, 1], m[:, 2]
        for v in (a1, a2, a3):
            if abs(np.linalg.norm(v) - 1.0) > 1e-9:
                raise ValueError("axes must be unit vectors")
        if max(abs(a1 @ a2), abs(a1 @ a3), abs(a2 @ a3)) > 1e-9:
            raise ValueError("axes must be pairwise orthogonal")
        if np.abs(np.cross(a1, a2) - a3).max() > 1e-9:
            raise ValueError("axes must be right-handed (a1 x a2 = a3)")
        object.__setattr__(self, "matrix", _freeze(m))

    @classmethod
    def from_columns(cls, a1, a2, a3) -> "AxesTriad":
        return cls(np.stack([a1, a2, a3], axis=1))

    @classmethod
    def identity(cls) -> "AxesTriad":
        return cls(np.eye(3))

    @property
    def a1(self) -> np.ndarray:
        return self.matrix[:, 0]

    @property
    def a2(self) -> np.ndarray:
        return self.matrix[:, 1]

    @property
    def a3(self) -> np.ndarray:
        return self.matrix[:, 2]


@dataclass(frozen=True)
class OrientedBox3D:
    """Cuboid with full SO(3) pose, side lengths in meters."""

    pose: RigidTransform
    extent: np.ndarray
    class_label: str = ""
    score: float = 0.0
    converged: bool = True
    steps: int = 0

    def __post_init__(self):
        e = _as_array(self.extent, (3,), "extent")
        if (e <= 0).any():
            raise ValueError("extent components must be positive")
        object.__setattr__(self, "extent", _freeze(e))
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must be in [0, 1]")

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation

    def volume(self) -> float:
        return float(np.prod(self.extent))

    def corners(self) -> np.ndarray:
        """Homogeneous 4x8 corner matrix, columns in binary sign order."""
        local = _CORNER_SIGNS * (self.extent[:, None] / 2.0)
        world = self.pose.rotation @ local + self.pose.translation[:, None]
        return np.vstack([world, np.ones((1, 8))])

    def replace(self, **kw) -> "OrientedBox3D":
        args = {"pose": self.pose, "extent": self.extent,
                "class_label": self.class_label, "score": self.score,
                "converged": self.converged, "steps": self.steps}
        args.update(kw)
        return OrientedBox3D(**args)


def box_to_corners(box: OrientedBox3D) -> np.ndarray:
    return box.corners()


def chain_to_origin(box_n: OrientedBox3D, chain: list[RigidTransform]) -> OrientedBox3D:
    """Map a box from the last recursion frame back to the sensor frame.

    chain holds the step-to-step transforms in order (frame 1 -> frame 0
    first); an empty chain returns the box unchanged. Class, score and
    convergence flags are preserved.
    """
    total = RigidTransform.identity()
    for t in chain:
        total = compose(total, t)
    return box_n.replace(pose=compose(total, box_n.pose))


def box_to_json(box: OrientedBox3D) -> dict:
    """Serialize to the repo-wide box JSON schema."""
    return {
        "class": box.class_label,
        "score": float(box.score),
        "center": [float(x) for x in box.center],
        "rotation": [float(x) for x in box.pose.rotation.reshape(-1)],
        "extent": [float(x) for x in box.extent],
        "corners": [[float(x) for x in c] for c in box.corners()[:3].T],
        "converged": bool(box.converged),
        "steps": int(box.steps),
    }


def box_from_json(d: dict) -> OrientedBox3D:
    pose = RigidTransform(np.array(d["rotation"], dtype=np.float64).reshape(3, 3),
                          np.array(d["center"], dtype=np.float64))
    return OrientedBox3D(pose=pose,
                         extent=np.array(d["extent"], dtype=np.float64),
                         class_label=str(d["class"]),
                         score=float(d["score"]),
                         converged=bool(d.get("converged", True)),
                         steps=int(d.get("steps", 0)))


@dataclass(frozen=True)
class Detection2D:
    """Axis-aligned pixel rectangle with class and confidence.

    Rect is (u0, v0, u1, v1), half-open: a pixel (u, v) is inside iff
    u0 <= u < u1 and v0 <= v < v1.
    """

    class_label: str
    score: float
    rect: tuple[float, float, float, float]

    def __post_init__(self):
        u0, v0, u1, v1 = self.rect
        if not (u0 < u1 and v0 < v1):
            raise ValueError(f"rect must have positive area, got {self.rect}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must be in [0, 1]")
        object.__setattr__(self, "rect", (float(u0), float(v0), float(u1), float(v1)))

    def clamped(self, width: int, height: int) -> "Detection2D":
        u0, v0, u1, v1 = self.rect
        u0, u1 = max(0.0, u0), min(float(width), u1)
        v0, v1 = max(0.0, v0), min(float(height), v1)
        if not (u0 < u1 and v0 < v1):
            raise ValueError("rect lies outside the raster")
        return Detection2D(self.class_label, self.score, (u0, v0, u1, v1))

    def contains(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        u0, v0, u1, v1 = self.rect
        return (u >= u0) & (u < u1) & (v >= v0) & (v < v1)
