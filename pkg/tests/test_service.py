import json
import os

import numpy as np
import pytest
from fastapi.testclient import TestClient

from rcv.boxops import iou3d
from rcv.config import PipelineConfig
from rcv.geometry import Detection2D, box_from_json
from rcv.recursion import RecursionConfig
from rcv.axes import AxesConfig
from rcv.sceneio import load_boxes_json, write_scene_dir
from rcv.service import create_app
from rcv.synthscene import SceneSpec, generate_scene
from rcv.views import RenderConfig


@pytest.fixture
def scene(tmp_path):
    frame = generate_scene(SceneSpec(seed=31, n_objects=(1, 1),
                                     points_per_m2=2000.0,
                                     clutter_density=80.0))
    manifest = write_scene_dir(frame, str(tmp_path / "scene"))
    return frame, manifest


@pytest.fixture
def client(tmp_path):
    cfg = PipelineConfig(recursion=RecursionConfig(
        axes=AxesConfig(method="normals", seed=0),
        render=RenderConfig(max_side=256, margin=6)))
    app = create_app(cfg, data_dir=str(tmp_path / "data"))
    return TestClient(app)


def seed_rect(frame):
    ids = frame.image_instances.ids
    rows, cols = np.nonzero(ids == 1)
    return [float(cols.min()), float(rows.min()),
            float(cols.max()) + 1, float(rows.max()) + 1]


def engine_replay(manifest: str, seed_rect_px, rounds: int, label="crate"):
    """Drive the same steps through the engine modules directly.

    Returns the per-round oracle-tight (front, side) rects a careful
    human would draw plus the per-round boxes, using the manifest-loaded
    cloud so floats match the service bit for bit.
    """
    from rcv.crossview import BoxPair, cross_view
    from rcv.detect import oracle_detect
    from rcv.geometry import AxesTriad, RigidTransform, compose
    from rcv.recursion import _view_instances
    from rcv.sceneio import load_manifest
    from rcv.views import (StepFrame, extract_frustum, prune_by_boxes,
                           render_pseudo_view)
    from rcv.axes import compute_axes

    data = load_manifest(manifest)
    cloud, intr = data["cloud"], data["intrinsics"]
    classes = data["instance_classes"]
    rcfg = RenderConfig(max_side=256, margin=6)
    acfg = AxesConfig(method="normals", seed=0)
    seed = Detection2D(label, 1.0, tuple(seed_rect_px)).clamped(
        intr.width, intr.height)
    idx = extract_frustum(cloud, intr, seed)
    cum = RigidTransform.identity()
    rects, boxes = [], []
    for _ in range(rounds):
        fr = StepFrame(AxesTriad(cum.rotation), cum.translation)
        front = render_pseudo_view(cloud, idx, fr, "front", rcfg)
        side = render_pseudo_view(cloud, idx, fr, "side", rcfg)
        det_f = oracle_detect(_view_instances(front, cloud, classes), label)[0]
        det_s = oracle_detect(_view_instances(side, cloud, classes), label)[0]
        rects.append((list(det_f.rect), list(det_s.rect)))
        kept = prune_by_boxes(idx, front, side, det_f, det_s)
        boxes.append(cross_view(BoxPair(det_f, det_s, 1.0), front, side,
                                score=1.0))
        pts_local = cum.invert().apply(cloud.positions[kept])
        axes = compute_axes(pts_local, acfg, prev=AxesTriad.identity(),
                            viewpoint=cum.invert().apply(np.zeros(3)))
        cum = compose(cum, RigidTransform(axes.matrix, pts_local.mean(axis=0)))
        idx = kept
    return rects, boxes


class TestSessionLifecycle:
    def test_create_and_image(self, client, scene):
        frame, manifest = scene
        r = client.post("/sessions", json={"path": manifest})
        assert r.status_code == 201
        sid = r.json()["session_id"]
        assert r.json()["intrinsics"]["width"] == frame.intrinsics.width
        img = client.get(f"/sessions/{sid}/image")
        assert img.status_code == 200
        assert img.headers["content-type"] == "image/png"

    def test_unknown_ids_404(self, client):
        assert client.get("/sessions/nope/image").status_code == 404
        assert client.post("/frustums/nope/labels",
                           json={"front_rect": [0, 0, 1, 1],
                                 "side_rect": [0, 0, 1, 1]}).status_code == 404

    def test_export_empty_session(self, client, scene):
        _, manifest = scene
        sid = client.post("/sessions", json={"path": manifest}).json()["session_id"]
        r = client.post(f"/sessions/{sid}/export")
        assert r.status_code == 200
        path = r.json()["path"]
        assert json.load(open(os.path.join(path, "boxes.json"))) == []


class TestLabelingFlow:
    def _start(self, client, scene):
        frame, manifest = scene
        sid = client.post("/sessions", json={"path": manifest}).json()["session_id"]
        r = client.post(f"/sessions/{sid}/frustums",
                        json={"class": "crate", "rect": seed_rect(frame)})
        assert r.status_code == 201
        return frame, sid, r.json()

    def test_scripted_session_two_labels_converges(self, client, scene):
        frame, manifest = scene
        rects, _ = engine_replay(manifest, seed_rect(frame), rounds=2)
        frame, sid, fr = self._start(client, scene)
        fid = fr["frustum_id"]
        # round 1: oracle-tight rects on the step-0 views
        r1 = client.post(f"/frustums/{fid}/labels", json={
            "front_rect": rects[0][0], "side_rect": rects[0][1]})
        assert r1.status_code == 200
        body1 = r1.json()
        assert body1["converged"] is False
        assert "next_pseudo_views" in body1
        # round 2: oracle-tight rects on the refined views
        r2 = client.post(f"/frustums/{fid}/labels", json={
            "front_rect": rects[1][0], "side_rect": rects[1][1]})
        assert r2.status_code == 200
        body2 = r2.json()
        assert body2["converged"] is True
        box = box_from_json(body2["box"])
        assert iou3d(box, frame.gt_boxes[0]) >= 0.9
        # labeling a converged frustum -> 409
        r3 = client.post(f"/frustums/{fid}/labels", json={
            "front_rect": [0, 0, 10, 10], "side_rect": [0, 0, 10, 10]})
        assert r3.status_code == 409
        # export round-trips byte-identically
        from rcv.geometry import box_to_json
        exp = client.post(f"/sessions/{sid}/export").json()["path"]
        listed = client.get(f"/sessions/{sid}/boxes").json()
        with open(os.path.join(exp, "boxes.json")) as f:
            exported = json.load(f)
        assert exported == listed
        reloaded = load_boxes_json(os.path.join(exp, "boxes.json"))
        assert [box_to_json(b) for b in reloaded] == exported

    def test_disjoint_rects_422(self, client, scene):
        frame, sid, fr = self._start(client, scene)
        fid = fr["frustum_id"]
        views = {v["kind"]: v for v in fr["pseudo_views"]}
        h_f, h_s = views["front"]["height"], views["side"]["height"]
        w_f, w_s = views["front"]["width"], views["side"]["width"]
        r = client.post(f"/frustums/{fid}/labels", json={
            "front_rect": [0, 0, w_f, max(2, h_f // 4)],
            "side_rect": [0, int(h_s * 0.75), w_s, h_s]})
        assert r.status_code == 422
        assert "redraw" in r.json()["detail"] or "inconsistent" in r.json()["detail"]

    def test_auto_completes(self, client, scene):
        frame, sid, fr = self._start(client, scene)
        fid = fr["frustum_id"]
        r = client.post(f"/frustums/{fid}/auto", json={"detector": "oracle"})
        assert r.status_code == 200
        body = r.json()
        assert body["converged"] is True
        box = box_from_json(body["box"])
        assert iou3d(box, frame.gt_boxes[0]) >= 0.9

    def test_zero_area_seed_rejected(self, client, scene):
        frame, sid, _ = self._start(client, scene)
        r = client.post(f"/sessions/{sid}/frustums",
                        json={"class": "crate", "rect": [10, 10, 10, 30]})
        assert r.status_code == 422

    def test_session_info_rehydrates(self, client, scene):
        frame, sid, fr = self._start(client, scene)
        info = client.get(f"/sessions/{sid}").json()
        assert info["frustums"][0]["frustum_id"] == fr["frustum_id"]
        assert info["frustums"][0]["status"] == "awaiting_labels"
        assert len(info["frustums"][0]["pseudo_views"]) == 2


class TestSessionIsolation:
    def test_interleaved_sessions_do_not_share_state(self, client, scene):
        frame, manifest = scene
        rect = seed_rect(frame)
        rects, _ = engine_replay(manifest, rect, rounds=2)
        sid_a = client.post("/sessions", json={"path": manifest}).json()["session_id"]
        sid_b = client.post("/sessions", json={"path": manifest}).json()["session_id"]
        fa = client.post(f"/sessions/{sid_a}/frustums",
                         json={"class": "crate", "rect": rect}).json()["frustum_id"]
        fb = client.post(f"/sessions/{sid_b}/frustums",
                         json={"class": "crate", "rect": rect}).json()["frustum_id"]
        # interleave: advance A, then B, then A again
        client.post(f"/frustums/{fa}/labels", json={
            "front_rect": rects[0][0], "side_rect": rects[0][1]})
        client.post(f"/frustums/{fb}/labels", json={
            "front_rect": rects[0][0], "side_rect": rects[0][1]})
        ra = client.post(f"/frustums/{fa}/labels", json={
            "front_rect": rects[1][0], "side_rect": rects[1][1]}).json()
        rb = client.post(f"/frustums/{fb}/labels", json={
            "front_rect": rects[1][0], "side_rect": rects[1][1]}).json()
        assert ra["converged"] and rb["converged"]
        assert ra["box"] == rb["box"]  # same inputs, independent state
        assert client.get(f"/sessions/{sid_a}/boxes").json() == \
            client.get(f"/sessions/{sid_b}/boxes").json()
        assert len(client.get(f"/sessions/{sid_a}/boxes").json()) == 1


class TestGoldenPathEquivalence:
    def test_service_steps_match_engine_modules(self, client, scene):
        """HTTP results equal direct module calls on the same inputs."""
        frame, manifest = scene
        rect = seed_rect(frame)
        rects, boxes = engine_replay(manifest, rect, rounds=2)
        sid = client.post("/sessions", json={"path": manifest}).json()["session_id"]
        fr = client.post(f"/sessions/{sid}/frustums",
                         json={"class": "crate", "rect": rect}).json()
        fid = fr["frustum_id"]
        for k in range(2):
            r = client.post(f"/frustums/{fid}/labels", json={
                "front_rect": rects[k][0], "side_rect": rects[k][1]}).json()
            got = box_from_json(r["box"])
            assert np.abs(got.corners() - boxes[k].corners()).max() < 1e-9
