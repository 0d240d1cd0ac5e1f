"""3D detection and annotation from 2D detections on pseudo-views."""

from .axes import AxesConfig
from .boxops import average_precision, iou3d, nms3d
from .detect import DetectorNoise, ExternalDetector, OracleDetector
from .geometry import (
    AxesTriad,
    CameraIntrinsics,
    Detection2D,
    OrientedBox3D,
    PointCloud,
    RigidTransform,
    box_from_json,
    box_to_json,
    chain_to_origin,
    compose,
)
from .recursion import FrameData, RecursionConfig, detect_scene, run_frustum
from .synthscene import SceneSpec, generate_scene
from .views import RenderConfig, StepFrame, extract_frustum, render_pseudo_view

__version__ = "0.1.0"

__all__ = [
    "AxesConfig", "AxesTriad", "CameraIntrinsics", "Detection2D",
    "DetectorNoise", "ExternalDetector", "FrameData", "OracleDetector",
    "OrientedBox3D", "PointCloud", "RecursionConfig", "RenderConfig",
    "RigidTransform", "SceneSpec", "StepFrame", "average_precision",
    "box_from_json", "box_to_json", "chain_to_origin", "compose",
    "detect_scene", "extract_frustum", "generate_scene", "iou3d", "nms3d",
    "render_pseudo_view", "run_frustum",
]
