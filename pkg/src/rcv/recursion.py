"""Recursive project-detect-prune-refine engine.

Each frustum starts from the camera axes (step 0), detects on front and
side pseudo-views, and may branch into several objects. From step 1 on
a branch re-estimates projection axes on its retained points, renders,
keeps the single best same-class detection per view, prunes, and
rebuilds the box, until axes and box variation fall below threshold or
the step cap hits. Step-to-step transforms are chained so the final box
is mapped back into the sensor frame through the accumulated product.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .axes import AxesConfig, compute_axes
from .boxops import nms3d
from .crossview import BoxPair, cross_view, pair_boxes, shared_v_iou
from .detect import InstancePixelMap
from .errors import (
    DegenerateExtent,
    EmptyAfterPrune,
    EmptyFrustum,
    InconsistentViews,
    RcvError,
)
from .geometry import (
    AxesTriad,
    CameraIntrinsics,
    Detection2D,
    OrientedBox3D,
    PointCloud,
    RigidTransform,
    box_to_json,
    chain_to_origin,
    compose,
)
from .views import (
    PseudoView,
    RenderConfig,
    StepFrame,
    coarse_box,
    extract_frustum,
    prune_by_boxes,
    render_pseudo_view,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecursionConfig:
    axes: AxesConfig = AxesConfig()
    max_steps: int = 8
    eps_axes_deg: float = 3.0
    eps_box_m: float = 0.02
    emit_coarse_box: bool = False
    on_detector_miss: str = "return_last"   # return_last | drop
    render: RenderConfig = RenderConfig()
    pair_min_quality: float = 0.25

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.eps_axes_deg <= 0 or self.eps_box_m <= 0:
            raise ValueError("convergence thresholds must be positive")
        if self.on_detector_miss not in ("return_last", "drop"):
            raise ValueError("on_detector_miss must be return_last or drop")

    def to_dict(self) -> dict:
        return {"axes": self.axes.to_dict(), "max_steps": self.max_steps,
                "eps_axes_deg": self.eps_axes_deg, "eps_box_m": self.eps_box_m,
                "emit_coarse_box": self.emit_coarse_box,
                "on_detector_miss": self.on_detector_miss,
                "render": {"max_side": self.render.max_side,
                           "margin": self.render.margin,
                           "splat_radius": self.render.splat_radius},
                "pair_min_quality": self.pair_min_quality}

    @classmethod
    def from_dict(cls, d: dict) -> "RecursionConfig":
        kw = dict(d)
        if "axes" in kw:
            kw["axes"] = AxesConfig.from_dict(kw["axes"])
        if "render" in kw:
            kw["render"] = RenderConfig(**kw["render"])
        return cls(**kw)


@dataclass(frozen=True)
class RecursionState:
    """One branch's position in the recursion.

    frame holds this step's axes/origin in the previous frame's
    coordinates; cum is the accumulated local -> sensor transform; box
    is the current estimate in local (this step's) coordinates and
    box_sensor its sensor-frame image. len(chain) == step always.
    """

    step: int
    indices: np.ndarray
    frame: StepFrame
    chain: tuple[RigidTransform, ...]
    cum: RigidTransform
    box: OrientedBox3D | None
    box_sensor: OrientedBox3D | None
    trace: tuple[dict, ...] = ()


def converged(prev: RecursionState, cur: RecursionState,
              cfg: RecursionConfig) -> bool:
    """Stop test: small axes variation OR small box variation OR step cap."""
    return (cur.step >= cfg.max_steps
            or _axes_converged(prev, cur, cfg)
            or _box_converged(prev, cur, cfg))


def _axes_converged(prev: RecursionState, cur: RecursionState,
                    cfg: RecursionConfig) -> bool:
    rp, rc = prev.cum.rotation, cur.cum.rotation
    dots = np.abs((rp * rc).sum(axis=0))        # per-column sign-aligned dots
    max_angle = float(np.degrees(np.arccos(np.clip(dots.min(), -1.0, 1.0))))
    return max_angle < cfg.eps_axes_deg


def _box_converged(prev: RecursionState, cur: RecursionState,
                   cfg: RecursionConfig) -> bool:
    if prev.box_sensor is None or cur.box_sensor is None:
        return False
    d = prev.box_sensor.corners()[:3] - cur.box_sensor.corners()[:3]
    return float(np.sqrt((d ** 2).sum(axis=0)).max()) < cfg.eps_box_m


def _view_instances(view: PseudoView, cloud: PointCloud,
                    classes: dict[int, str] | None) -> InstancePixelMap | None:
    if cloud.instance_ids is None or classes is None:
        return None
    owner = view.pixel_owner
    ids = np.zeros(owner.shape, dtype=np.int32)
    hit = owner >= 0
    ids[hit] = cloud.instance_ids[view.indices[owner[hit]]]
    return InstancePixelMap(ids, classes)


def _detect_on_view(detector, view: PseudoView, cloud: PointCloud,
                    class_filter: str | None,
                    classes: dict[int, str] | None) -> list[Detection2D]:
    instances = _view_instances(view, cloud, classes)
    dets = detector.detect(view.image, class_filter, instances=instances)
    if class_filter is not None:
        dets = [d for d in dets if d.class_label == class_filter]
    return dets


def _best_detection(dets: list[Detection2D]) -> Detection2D | None:
    if not dets:
        return None
    def area(d):
        return (d.rect[2] - d.rect[0]) * (d.rect[3] - d.rect[1])
    return min(dets, key=lambda d: (-d.score, -area(d), d.rect))


def _trace_record(step: int, cum: RigidTransform, n_points: int,
                  box_sensor: OrientedBox3D | None, front=None, side=None,
                  extra: dict | None = None) -> dict:
    rec = {
        "step": step,
        "axes": [[float(x) for x in row] for row in cum.rotation],
        "origin": [float(x) for x in cum.translation],
        "n_points": n_points,
        "box": box_to_json(box_sensor) if box_sensor else None,
    }
    if front is not None:
        rec["front_rect"] = list(front.rect)
    if side is not None:
        rec["side_rect"] = list(side.rect)
    if extra:
        rec.update(extra)
    return rec


def _finalize(state: RecursionState, seed: Detection2D,
              genuinely_converged: bool) -> OrientedBox3D:
    out = chain_to_origin(state.box, list(state.chain))
    return out.replace(class_label=seed.class_label, score=seed.score,
                       converged=genuinely_converged, steps=state.step)


def _refine_branch(cloud: PointCloud, state: RecursionState,
                   seed: Detection2D, detector, cfg: RecursionConfig,
                   classes: dict[int, str] | None
                   ) -> tuple[OrientedBox3D | None, tuple[dict, ...]]:
    """Run one branch to convergence; box is None when dropped on a miss."""
    positions = cloud.positions
    while True:
        def miss(reason: str) -> tuple[OrientedBox3D | None, tuple[dict, ...]]:
            log.debug("branch miss at step %d: %s", state.step + 1, reason)
            if cfg.on_detector_miss == "drop":
                return None, state.trace
            return _finalize(state, seed, genuinely_converged=False), state.trace

        pts_local = state.cum.invert().apply(positions[state.indices])
        viewpoint = state.cum.invert().apply(np.zeros(3))
        axes = compute_axes(pts_local, cfg.axes, prev=AxesTriad.identity(),
                            viewpoint=viewpoint)
        t_step = RigidTransform(axes.matrix, pts_local.mean(axis=0))
        cum = compose(state.cum, t_step)
        frame_sensor = StepFrame(AxesTriad(cum.rotation), cum.translation)
        try:
            front = render_pseudo_view(cloud, state.indices, frame_sensor,
                                       "front", cfg.render)
            side = render_pseudo_view(cloud, state.indices, frame_sensor,
                                      "side", cfg.render)
        except DegenerateExtent as e:
            return miss(str(e))
        best_f = _best_detection(_detect_on_view(
            detector, front, cloud, seed.class_label, classes))
        best_s = _best_detection(_detect_on_view(
            detector, side, cloud, seed.class_label, classes))
        if best_f is None or best_s is None:
            return miss("detector returned nothing in one view")
        quality = shared_v_iou(front, side, best_f, best_s)
        if quality <= 0:
            return miss("front/side detections do not share the v interval")
        try:
            kept = prune_by_boxes(state.indices, front, side, best_f, best_s)
            box_sensor = cross_view(BoxPair(best_f, best_s, quality),
                                    front, side, score=seed.score)
        except (EmptyAfterPrune, InconsistentViews) as e:
            return miss(str(e))
        box_local = box_sensor.replace(
            pose=compose(cum.invert(), box_sensor.pose))
        nxt = RecursionState(
            step=state.step + 1, indices=kept,
            frame=StepFrame(axes, t_step.translation),
            chain=state.chain + (t_step,), cum=cum,
            box=box_local, box_sensor=box_sensor,
            trace=state.trace + (_trace_record(
                state.step + 1, cum, int(kept.size), box_sensor,
                front=best_f, side=best_s),))
        genuine = _axes_converged(state, nxt, cfg) or _box_converged(state, nxt, cfg)
        if genuine or nxt.step >= cfg.max_steps:
            return _finalize(nxt, seed, genuinely_converged=genuine), nxt.trace
        state = nxt


def run_frustum(cloud: PointCloud, frustum_indices: np.ndarray,
                seed: Detection2D, detector, cfg: RecursionConfig,
                instance_classes: dict[int, str] | None = None,
                trace_sink: list | None = None) -> list[OrientedBox3D]:
    """Detect every same-class object inside one frustum.

    Step 0 projects along the camera axes and may branch into one
    sub-recursion per paired detection; each branch then refines
    independently and reports a sensor-frame box.
    """
    frustum_indices = np.asarray(frustum_indices, dtype=np.int64)
    if frustum_indices.size == 0:
        raise EmptyFrustum("run_frustum needs a nonempty index set")
    # canonical point order: float reductions (means, covariances) must not
    # see the caller's point order, or bitwise determinism breaks
    pos = cloud.positions[frustum_indices]
    col = cloud.colors[frustum_indices]
    order = np.lexsort((col[:, 2], col[:, 1], col[:, 0],
                        pos[:, 2], pos[:, 1], pos[:, 0]))
    frustum_indices = frustum_indices[order]

    frame0 = StepFrame.identity()
    front0 = render_pseudo_view(cloud, frustum_indices, frame0, "front", cfg.render)
    side0 = render_pseudo_view(cloud, frustum_indices, frame0, "side", cfg.render)
    dets_f = _detect_on_view(detector, front0, cloud, seed.class_label,
                             instance_classes)
    dets_s = _detect_on_view(detector, side0, cloud, seed.class_label,
                             instance_classes)
    if not dets_f or not dets_s:
        return []   # seed miss: early stop before any box exists
    pairs = pair_boxes(dets_f, dets_s, front0, side0,
                       min_quality=cfg.pair_min_quality)
    if not pairs:
        return []

    trace0_extra = {}
    if cfg.emit_coarse_box:
        cb = coarse_box(cloud.positions[frustum_indices], frame0,
                        class_label=seed.class_label, score=seed.score)
        trace0_extra["coarse_box"] = box_to_json(cb)

    results: list[OrientedBox3D] = []
    for pair in pairs:
        try:
            kept = prune_by_boxes(frustum_indices, front0, side0,
                                  pair.front, pair.side)
            box0 = cross_view(pair, front0, side0, score=seed.score)
        except (EmptyAfterPrune, InconsistentViews) as e:
            log.debug("branch seeding failed: %s", e)
            continue
        state0 = RecursionState(
            step=0, indices=kept, frame=frame0, chain=(),
            cum=RigidTransform.identity(), box=box0, box_sensor=box0,
            trace=(_trace_record(0, RigidTransform.identity(), int(kept.size),
                                 box0, front=pair.front, side=pair.side,
                                 extra=trace0_extra),))
        out, trace = _refine_branch(cloud, state0, seed, detector, cfg,
                                    instance_classes)
        if trace_sink is not None:
            trace_sink.append(trace)
        if out is not None:
            results.append(out)
    return results


@dataclass(frozen=True)
class FrameData:
    """One RGB-D frame as consumed by detect_scene."""

    image: np.ndarray
    cloud: PointCloud
    intrinsics: CameraIntrinsics
    image_instances: InstancePixelMap | None = None

    @property
    def instance_classes(self) -> dict[int, str] | None:
        return self.image_instances.classes if self.image_instances else None


def detect_scene(frame: FrameData, rgb_detector, pv_detector,
                 cfg: RecursionConfig, nms_tau: float = 0.25,
                 parallelism: int = 1) -> list[OrientedBox3D]:
    """Full-frame detection: seeds, frustums, recursion, 3D NMS.

    Frustums are independent work units; the merge is order-independent
    because results are gathered in seed order and NMS sorting is total.
    """
    seeds = rgb_detector.detect(frame.image, None,
                                instances=frame.image_instances)
    if not seeds:
        return []

    def work(seed: Detection2D) -> list[OrientedBox3D]:
        try:
            seed = seed.clamped(frame.intrinsics.width, frame.intrinsics.height)
            idx = extract_frustum(frame.cloud, frame.intrinsics, seed)
            return run_frustum(frame.cloud, idx, seed, pv_detector, cfg,
                               frame.instance_classes)
        except RcvError as e:
            log.info("frustum skipped (%s): %s", seed.class_label, e)
            return []
        except ValueError as e:
            log.info("frustum skipped (%s): %s", seed.class_label, e)
            return []

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            chunks = list(pool.map(work, seeds))
    else:
        chunks = [work(s) for s in seeds]
    boxes = [b for chunk in chunks for b in chunk]
    return nms3d(boxes, nms_tau)
