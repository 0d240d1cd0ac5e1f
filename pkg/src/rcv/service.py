"""HTTP session API for semi-automatic 3D annotation.

A session wraps one RGB-D frame. Each frustum task is seeded by a 2D
box on the raw image, serves front/side pseudo-views for labeling, and
advances one recursion step per submitted label pair; `auto` hands the
remaining steps to a detector. The service holds no geometry of its
own: every step is the same prune / cross-view / axes code the batch
engine runs.
"""

from __future__ import annotations

import io
import json
import os
import threading
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.responses import JSONResponse
from PIL import Image

from .axes import compute_axes
from .config import PipelineConfig, build_detector
from .crossview import BoxPair, cross_view, shared_v_iou
from .detect import OracleDetector
from .errors import EmptyAfterPrune, EmptyFrustum, InconsistentViews, RcvError
from .geometry import (
    AxesTriad,
    Detection2D,
    OrientedBox3D,
    RigidTransform,
    box_to_json,
    compose,
)
from .recursion import _best_detection, _detect_on_view
from .sceneio import load_manifest, write_boxes_json, write_ply, write_png
from .views import (
    StepFrame,
    coarse_box,
    extract_frustum,
    prune_by_boxes,
    render_pseudo_view,
)


@dataclass
class FrustumTask:
    id: str
    session_id: str
    seed: Detection2D
    indices: np.ndarray
    pending_step: int                     # step index of the views below
    cum: RigidTransform                   # local -> sensor for pending views
    chain: tuple[RigidTransform, ...]     # len == pending_step
    views: tuple                          # (front, side) awaiting labels
    prev_cum: RigidTransform | None = None
    prev_box: OrientedBox3D | None = None
    last_box: OrientedBox3D | None = None  # sensor frame, after last labels
    status: str = "awaiting_labels"        # awaiting_labels | converged | failed
    trace: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    pngs: dict = field(default_factory=dict)   # (step, kind) -> bytes


@dataclass
class Session:
    id: str
    image: np.ndarray
    cloud: object
    intrinsics: object
    image_instances: object
    instance_classes: dict
    frustum_ids: list = field(default_factory=list)


def _png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def _view_descriptor(task_id: str, step: int, view) -> dict:
    return {
        "kind": view.kind,
        "url": f"/frustums/{task_id}/views/{step}/{view.kind}.png",
        "width": view.width,
        "height": view.height,
        "scale": view.scale,
        "offset_u": view.offset_u,
        "offset_v": view.offset_v,
        "step": step,
    }


def _axes_angle_deg(a: RigidTransform, b: RigidTransform) -> float:
    dots = np.abs((a.rotation * b.rotation).sum(axis=0))
    return float(np.degrees(np.arccos(np.clip(dots.min(), -1.0, 1.0))))


def _box_shift_m(a: OrientedBox3D, b: OrientedBox3D) -> float:
    d = a.corners()[:3] - b.corners()[:3]
    return float(np.sqrt((d ** 2).sum(axis=0)).max())


def create_app(cfg: PipelineConfig, data_dir: str,
               ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="rcv annotation service")
    sessions: dict[str, Session] = {}
    tasks: dict[str, FrustumTask] = {}
    registry_lock = threading.Lock()
    counter = {"session": 0, "frustum": 0}
    rcfg = cfg.recursion

    def new_id(kind: str) -> str:
        with registry_lock:
            counter[kind] += 1
            return f"{kind[0]}{counter[kind]}"

    def get_session(sid: str) -> Session:
        s = sessions.get(sid)
        if s is None:
            raise HTTPException(404, f"unknown session {sid}")
        return s

    def get_task(fid: str) -> FrustumTask:
        t = tasks.get(fid)
        if t is None:
            raise HTTPException(404, f"unknown frustum {fid}")
        return t

    def render_pair(session: Session, indices, cum):
        frame = StepFrame(AxesTriad(cum.rotation), cum.translation)
        front = render_pseudo_view(session.cloud, indices, frame, "front",
                                   rcfg.render)
        side = render_pseudo_view(session.cloud, indices, frame, "side",
                                  rcfg.render)
        return front, side

    def stash_pngs(task: FrustumTask):
        front, side = task.views
        task.pngs[(task.pending_step, "front")] = _png_bytes(front.image)
        task.pngs[(task.pending_step, "side")] = _png_bytes(side.image)

    # -- sessions --------------------------------------------------------

    @app.post("/sessions", status_code=201)
    def create_session(payload: dict):
        if "path" in payload:
            data = load_manifest(payload["path"])
        else:
            tmp = os.path.join(data_dir, "tmp_manifest.json")
            os.makedirs(data_dir, exist_ok=True)
            with open(tmp, "w") as f:
                json.dump(payload, f)
            data = load_manifest(tmp)
        sid = new_id("session")
        sessions[sid] = Session(
            id=sid, image=data["image"], cloud=data["cloud"],
            intrinsics=data["intrinsics"],
            image_instances=data["image_instances"],
            instance_classes=data["instance_classes"])
        return {"session_id": sid,
                "intrinsics": sessions[sid].intrinsics.to_dict(),
                "image": {"width": sessions[sid].intrinsics.width,
                          "height": sessions[sid].intrinsics.height}}

    @app.get("/sessions/{sid}")
    def session_info(sid: str):
        s = get_session(sid)
        return {
            "session_id": s.id,
            "intrinsics": s.intrinsics.to_dict(),
            "frustums": [{
                "frustum_id": fid,
                "class": tasks[fid].seed.class_label,
                "status": tasks[fid].status,
                "step": tasks[fid].pending_step,
                "box": box_to_json(tasks[fid].last_box)
                if tasks[fid].last_box else None,
                "pseudo_views": [
                    _view_descriptor(fid, tasks[fid].pending_step, v)
                    for v in tasks[fid].views]
                if tasks[fid].status == "awaiting_labels" else [],
            } for fid in s.frustum_ids],
        }

    @app.get("/sessions/{sid}/image")
    def session_image(sid: str):
        return Response(content=_png_bytes(get_session(sid).image),
                        media_type="image/png")

    # -- frustums --------------------------------------------------------

    @app.post("/sessions/{sid}/frustums", status_code=201)
    def create_frustum(sid: str, payload: dict):
        s = get_session(sid)
        try:
            rect = tuple(float(x) for x in payload["rect"])
            label = str(payload["class"])
        except (KeyError, TypeError, ValueError):
            raise HTTPException(422, "body must carry class and rect [u0,v0,u1,v1]")
        try:
            seed = Detection2D(label, 1.0, rect).clamped(
                s.intrinsics.width, s.intrinsics.height)
            indices = extract_frustum(s.cloud, s.intrinsics, seed)
        except (ValueError, EmptyFrustum) as e:
            raise HTTPException(422, f"seed box covers no geometry: {e}")
        fid = new_id("frustum")
        cum = RigidTransform.identity()
        task = FrustumTask(id=fid, session_id=sid, seed=seed, indices=indices,
                           pending_step=0, cum=cum, chain=(), views=())
        task.views = render_pair(s, indices, cum)
        stash_pngs(task)
        tasks[fid] = task
        s.frustum_ids.append(fid)
        resp = {
            "frustum_id": fid,
            "n_points": int(indices.size),
            "pseudo_views": [_view_descriptor(fid, 0, v) for v in task.views],
        }
        if rcfg.emit_coarse_box:
            cb = coarse_box(s.cloud.positions[indices], StepFrame.identity(),
                            class_label=seed.class_label, score=seed.score)
            resp["coarse_box"] = box_to_json(cb)
        return resp

    @app.get("/frustums/{fid}/views/{step}/{kind}.png")
    def frustum_view_png(fid: str, step: int, kind: str):
        task = get_task(fid)
        png = task.pngs.get((step, kind))
        if png is None:
            raise HTTPException(404, f"no {kind} view at step {step}")
        return Response(content=png, media_type="image/png")

    def advance(task: FrustumTask, det_front: Detection2D,
                det_side: Detection2D) -> dict:
        """One recursion step from human or detector rectangles."""
        s = get_session(task.session_id)
        front, side = task.views
        quality = shared_v_iou(front, side, det_front, det_side)
        if quality <= 0:
            raise HTTPException(
                422, "views disagree on the shared height interval; "
                     "redraw one of the rectangles")
        try:
            kept = prune_by_boxes(task.indices, front, side, det_front, det_side)
            box_sensor = cross_view(BoxPair(det_front, det_side, quality),
                                    front, side, score=task.seed.score)
        except (InconsistentViews, EmptyAfterPrune) as e:
            raise HTTPException(422, f"inconsistent rectangles: {e}")
        step = task.pending_step
        box_sensor = box_sensor.replace(class_label=task.seed.class_label,
                                        steps=step)

        pts_local = task.cum.invert().apply(s.cloud.positions[kept])
        viewpoint = task.cum.invert().apply(np.zeros(3))
        axes = compute_axes(pts_local, rcfg.axes, prev=AxesTriad.identity(),
                            viewpoint=viewpoint)
        t_step = RigidTransform(axes.matrix, pts_local.mean(axis=0))
        cum_next = compose(task.cum, t_step)

        conv_axes = _axes_angle_deg(task.cum, cum_next) < rcfg.eps_axes_deg
        conv_box = (task.last_box is not None
                    and _box_shift_m(task.last_box, box_sensor) < rcfg.eps_box_m)
        genuine = conv_axes or conv_box
        capped = step + 1 >= rcfg.max_steps

        task.prev_cum = task.cum
        task.prev_box = task.last_box
        task.last_box = box_sensor.replace(converged=genuine)
        task.indices = kept
        task.trace.append({"step": step, "front_rect": list(det_front.rect),
                           "side_rect": list(det_side.rect),
                           "box": box_to_json(task.last_box)})
        if genuine or capped:
            task.status = "converged"
            return {"box": box_to_json(task.last_box), "converged": True}
        task.pending_step = step + 1
        task.cum = cum_next
        task.chain = task.chain + (t_step,)
        task.views = render_pair(s, kept, cum_next)
        stash_pngs(task)
        return {"box": box_to_json(task.last_box), "converged": False,
                "next_pseudo_views": [
                    _view_descriptor(task.id, step + 1, v)
                    for v in task.views]}

    @app.post("/frustums/{fid}/labels")
    def submit_labels(fid: str, payload: dict):
        task = get_task(fid)
        with task.lock:
            if task.status == "converged":
                raise HTTPException(409, "frustum already converged")
            try:
                fr = tuple(float(x) for x in payload["front_rect"])
                sr = tuple(float(x) for x in payload["side_rect"])
                front, side = task.views
                det_f = Detection2D(task.seed.class_label, 1.0, fr).clamped(
                    front.width, front.height)
                det_s = Detection2D(task.seed.class_label, 1.0, sr).clamped(
                    side.width, side.height)
            except (KeyError, TypeError, ValueError) as e:
                raise HTTPException(422, f"bad label rectangles: {e}")
            return advance(task, det_f, det_s)

    @app.post("/frustums/{fid}/auto")
    def auto_finish(fid: str, payload: dict | None = None):
        task = get_task(fid)
        with task.lock:
            if task.status == "converged":
                raise HTTPException(409, "frustum already converged")
            s = get_session(task.session_id)
            choice = (payload or {}).get("detector")
            if choice == "oracle":
                detector = OracleDetector()
            elif choice == "external":
                if cfg.detector_pv.get("kind") != "external":
                    raise HTTPException(422, "no external detector configured")
                detector = build_detector(cfg.detector_pv, cfg.scratch_dir)
            else:
                detector = build_detector(cfg.detector_pv, cfg.scratch_dir)
            if (isinstance(detector, OracleDetector)
                    and s.cloud.instance_ids is None):
                raise HTTPException(
                    422, "oracle detector needs a synthetic frame with "
                         "instance ids")
            last = None
            while task.status == "awaiting_labels":
                front, side = task.views
                best_f = _best_detection(_detect_on_view(
                    detector, front, s.cloud, task.seed.class_label,
                    s.instance_classes))
                best_s = _best_detection(_detect_on_view(
                    detector, side, s.cloud, task.seed.class_label,
                    s.instance_classes))
                if best_f is None or best_s is None:
                    if rcfg.on_detector_miss == "drop" or task.last_box is None:
                        task.status = "failed"
                        raise HTTPException(
                            422, "detector found nothing in the pseudo-views")
                    task.status = "converged"
                    return {"box": box_to_json(task.last_box),
                            "converged": True, "detector_miss": True}
                try:
                    last = advance(task, best_f, best_s)
                except HTTPException:
                    task.status = "failed"
                    raise
            return last

    # -- session outputs -------------------------------------------------

    def session_boxes(s: Session) -> list[OrientedBox3D]:
        out = []
        for fid in s.frustum_ids:
            t = tasks[fid]
            if t.last_box is not None:
                out.append(t.last_box)
        return out

    @app.get("/sessions/{sid}/boxes")
    def list_boxes(sid: str):
        return [box_to_json(b) for b in session_boxes(get_session(sid))]

    @app.post("/sessions/{sid}/export")
    def export_session(sid: str):
        s = get_session(sid)
        out_dir = os.path.abspath(os.path.join(data_dir, "exports", sid))
        os.makedirs(out_dir, exist_ok=True)
        write_png(os.path.join(out_dir, "image.png"), s.image)
        write_ply(os.path.join(out_dir, "cloud.ply"), s.cloud)
        write_boxes_json(os.path.join(out_dir, "boxes.json"), session_boxes(s))
        return {"path": out_dir}

    @app.exception_handler(RcvError)
    def rcv_error_handler(request, exc: RcvError):
        return JSONResponse(status_code=422, content={
            "error": type(exc).__name__, "detail": str(exc)})

    if ui_dir and os.path.isdir(ui_dir):
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
