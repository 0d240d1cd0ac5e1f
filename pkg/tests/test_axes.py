import numpy as np
import pytest

from rcv.axes import (
    AxesConfig,
    axes_camera,
    axes_normals,
    axes_pca,
    compute_axes,
    estimate_normals,
    kmeans_unit_vectors,
)
from rcv.errors import DegenerateCloud
from rcv.geometry import AxesTriad

from conftest import random_rotation


def angle_deg(a, b):
    return np.degrees(np.arccos(np.clip(abs(np.dot(a, b)), -1, 1)))


class TestCameraAxes:
    def test_identity(self):
        t = axes_camera()
        assert np.array_equal(t.matrix, np.eye(3))

    def test_satisfies_triad_invariants(self):
        t = axes_camera()
        assert np.allclose(np.cross(t.a1, t.a2), t.a3)


class TestCameraStepZero:
    def test_camera_frame_renders_along_sensor_axes(self, rng):
        # step-0 frame built from axes_camera() must reproduce a plain
        # sensor-axis projection (cross-module check with the renderer)
        from rcv.geometry import PointCloud
        from rcv.views import RenderConfig, StepFrame, render_pseudo_view

        n = 120
        pos = rng.uniform(-1, 1, (n, 3)) + [0, 0, 3]
        cloud = PointCloud(pos, rng.integers(0, 256, (n, 3), dtype=np.uint8))
        frame = StepFrame(axes_camera(), np.zeros(3))
        view = render_pseudo_view(cloud, np.arange(n), frame, "front",
                                  RenderConfig(max_side=128, margin=4))
        px, py = view.pixel_to_plane(view.point_pixels[:, 0],
                                     view.point_pixels[:, 1])
        half = 0.5 / view.scale
        assert np.abs(px - pos[:, 0]).max() <= half + 1e-12
        assert np.abs(py - pos[:, 1]).max() <= half + 1e-12


class TestPca:
    def test_dominant_axis_on_jittered_segment(self, rng):
        n = 400
        pts = np.zeros((n, 3))
        pts[:, 0] = rng.uniform(-1, 1, n)
        pts[:, 1] = rng.uniform(-1e-3, 1e-3, n)
        pts[:, 2] = rng.uniform(-1e-4, 1e-4, n)
        t = axes_pca(pts)
        assert angle_deg(t.a1, [1, 0, 0]) < np.degrees(1e-2)

    def test_diagonalizes_covariance(self, rng):
        pts = rng.normal(size=(500, 3)) * [3.0, 1.5, 0.4]
        pts = pts @ random_rotation(rng).T
        t = axes_pca(pts)
        centered = pts - pts.mean(axis=0)
        cov = centered.T @ centered / len(pts)
        d = t.matrix.T @ cov @ t.matrix
        off = d - np.diag(np.diag(d))
        assert np.abs(off).max() / np.abs(np.diag(d)).max() < 1e-9

    def test_rotation_equivariance(self, rng):
        pts = rng.normal(size=(300, 3)) * [2.5, 1.2, 0.5]
        base = axes_pca(pts)
        for _ in range(10):
            r = random_rotation(rng)
            rotated = axes_pca(pts @ r.T)
            expected = r @ base.matrix
            for j in range(3):
                assert angle_deg(rotated.matrix[:, j], expected[:, j]) < np.degrees(1e-6)

    def test_collinear_raises(self, rng):
        pts = np.zeros((50, 3))
        pts[:, 0] = np.linspace(0, 1, 50)
        with pytest.raises(DegenerateCloud):
            axes_pca(pts)

    def test_sign_continuity_with_prev(self, rng):
        pts = rng.normal(size=(300, 3)) * [2.0, 1.0, 0.5]
        prev = axes_pca(pts)
        nudged = pts + rng.normal(scale=1e-3, size=pts.shape)
        t = axes_pca(nudged, prev=prev)
        assert all(float(t.matrix[:, j] @ prev.matrix[:, j]) > 0 for j in range(3))


def plane_points(rng, normal, n=400, side=1.0, noise=0.0):
    normal = np.asarray(normal, dtype=float)
    normal = normal / np.linalg.norm(normal)
    b1 = np.cross(normal, [0.0, 0.0, 1.0])
    if np.linalg.norm(b1) < 1e-6:
        b1 = np.cross(normal, [0.0, 1.0, 0.0])
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(normal, b1)
    uv = rng.uniform(-side / 2, side / 2, (n, 2))
    pts = uv[:, :1] * b1 + uv[:, 1:] * b2
    if noise:
        pts = pts + rng.normal(scale=noise, size=(n, 1)) * normal
    return pts


class TestNormals:
    def test_flat_plane(self, rng):
        pts = plane_points(rng, [0, 0, 1])
        normals = estimate_normals(pts, 16, viewpoint=np.array([0, 0, 5.0]))
        angles = np.degrees(np.arccos(np.clip(normals @ [0, 0, 1], -1, 1)))
        assert angles.max() < np.degrees(1e-3) + 1e-6

    def test_orientation_rule_toward_viewpoint(self, rng):
        # hemisphere sample, viewpoint far along +z
        n = 500
        z = rng.uniform(0, 1, n)
        phi = rng.uniform(0, 2 * np.pi, n)
        r = np.sqrt(1 - z ** 2)
        pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        vp = np.array([0, 0, 10.0])
        normals = estimate_normals(pts, 12, viewpoint=vp)
        dots = np.einsum("ni,ni->n", normals, vp - pts)
        assert (dots >= 0).all()

    def test_analytic_plane_oracle(self, rng):
        for _ in range(5):
            true_n = rng.normal(size=3)
            true_n /= np.linalg.norm(true_n)
            pts = plane_points(rng, true_n, noise=1e-4)
            vp = true_n * 4.0
            normals = estimate_normals(pts, 16, viewpoint=vp)
            mean = normals.mean(axis=0)
            mean /= np.linalg.norm(mean)
            assert angle_deg(mean, true_n) < 2.0
            assert float(mean @ true_n) > 0  # resolved to the viewpoint side

    def test_too_few_points(self, rng):
        with pytest.raises(DegenerateCloud):
            estimate_normals(rng.normal(size=(10, 3)), 16, np.zeros(3))


class TestKMeans:
    def test_objective_non_increasing(self, rng):
        v = rng.normal(size=(300, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        _, _, history = kmeans_unit_vectors(v, 4, 25, seed=3)
        assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))

    def test_deterministic(self, rng):
        v = rng.normal(size=(200, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        a1, c1, h1 = kmeans_unit_vectors(v, 4, 25, seed=7)
        a2, c2, h2 = kmeans_unit_vectors(v, 4, 25, seed=7)
        assert np.array_equal(a1, a2) and np.array_equal(c1, c2) and h1 == h2

    def test_two_well_separated_clusters(self, rng):
        a = np.array([0, 0, 1.0]) + rng.normal(scale=0.02, size=(70, 3))
        b = np.array([1.0, 0, 0]) + rng.normal(scale=0.02, size=(30, 3))
        v = np.vstack([a, b])
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        assign, cents, _ = kmeans_unit_vectors(v, 2, 25, seed=0)
        counts = np.bincount(assign, minlength=2)
        major = cents[np.argmax(counts)]
        major /= np.linalg.norm(major)
        assert angle_deg(major, [0, 0, 1]) < 5.0


class TestAxesNormals:
    def test_single_face_camera_facing(self, rng):
        # flat face with normal (0,0,-1) seen head-on from the camera
        pts = plane_points(rng, [0, 0, -1], noise=1e-5) + [0, 0, 3.0]
        cfg = AxesConfig(method="normals", seed=1)
        t = axes_normals(pts, cfg, prev=axes_camera(), viewpoint=np.zeros(3))
        assert angle_deg(t.a3, [0, 0, 1]) < 1.0
        assert float(t.a3 @ np.array([0, 0, 1.0])) > 0

    def test_two_faces_majority_wins(self, rng):
        n_major = plane_points(rng, [0, 0, -1], n=700, noise=1e-5) + [0, 0, 3.0]
        minor_normal = np.array([1.0, 0, 0])
        n_minor = plane_points(rng, minor_normal, n=300, noise=1e-5) + [0.5, 0, 3.0]
        pts = np.vstack([n_major, n_minor])
        cfg = AxesConfig(method="normals", seed=1)
        t = axes_normals(pts, cfg, prev=axes_camera(), viewpoint=np.zeros(3))
        assert angle_deg(t.a3, [0, 0, 1]) < 3.0

    def test_deterministic(self, rng):
        pts = rng.normal(size=(300, 3))
        cfg = AxesConfig(method="normals", seed=5)
        vp = np.array([0, 0, -4.0])
        t1 = axes_normals(pts, cfg, prev=None, viewpoint=vp)
        t2 = axes_normals(pts, cfg, prev=None, viewpoint=vp)
        assert np.array_equal(t1.matrix, t2.matrix)

    def test_second_cluster_pins_inplane_rotation(self, rng):
        # two orthogonal faces of a box rotated about z: a1/a2 should align
        # with the face normals, not with the camera axes
        yaw = np.radians(30.0)
        r = np.array([[np.cos(yaw), -np.sin(yaw), 0],
                      [np.sin(yaw), np.cos(yaw), 0],
                      [0, 0, 1.0]])
        n1 = r @ np.array([0, 0, -1.0])   # dominant face
        n2 = r @ np.array([-1.0, 0, 0])   # second face
        pts = np.vstack([
            plane_points(rng, n1, n=700, noise=1e-5),
            plane_points(rng, n2, n=350, noise=1e-5) + n2 * 0.0,
        ]) + [0, 0, 3.0]
        cfg = AxesConfig(method="normals", seed=2)
        t = axes_normals(pts, cfg, prev=axes_camera(), viewpoint=np.zeros(3))
        box_axes = [n1, n2, np.cross(n1, n2)]
        for col in (t.a1, t.a2, t.a3):
            best = min(angle_deg(col, ax) for ax in box_axes)
            assert best < 3.0

    def test_triad_invariants_hold(self, rng):
        for seed in range(5):
            pts = rng.normal(size=(200, 3)) * [1.5, 1.0, 0.6]
            cfg = AxesConfig(method="normals", seed=seed)
            t = axes_normals(pts, cfg, prev=None, viewpoint=np.array([0, 0, -5.0]))
            assert isinstance(t, AxesTriad)  # constructor enforces invariants


class TestComputeAxes:
    def test_dispatch_camera(self, rng):
        t = compute_axes(rng.normal(size=(50, 3)), AxesConfig(method="camera"),
                         None, np.zeros(3))
        assert np.array_equal(t.matrix, np.eye(3))

    def test_small_cloud_falls_back(self, rng):
        pts = rng.normal(size=(5, 3))
        t = compute_axes(pts, AxesConfig(method="normals", knn_k=16), None, np.zeros(3))
        assert isinstance(t, AxesTriad)

    def test_degenerate_cloud_falls_back_to_camera(self):
        pts = np.zeros((40, 3))
        pts[:, 0] = np.linspace(0, 1, 40)
        t = compute_axes(pts, AxesConfig(method="pca"), None, np.zeros(3))
        assert np.array_equal(t.matrix, np.eye(3))
