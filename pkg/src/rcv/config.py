"""Pipeline configuration file handling.

One JSON file covers the engine, both detector handles, NMS, evaluation
defaults and the synthetic-scene generator. Flat dotted keys can be
overridden from the command line (--set recursion.max_steps=4); values
parse as JSON literals with a plain-string fallback.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass, field

from .detect import DetectorNoise, ExternalDetector, OracleDetector
from .errors import ConfigError
from .geometry import CameraIntrinsics
from .recursion import RecursionConfig
from .synthscene import SceneSpec

DEFAULT_EVAL = {"iou_thresh": 0.15, "mode": "allpoint"}


@dataclass
class PipelineConfig:
    recursion: RecursionConfig = field(default_factory=RecursionConfig)
    detector_rgb: dict = field(default_factory=lambda: {"kind": "oracle"})
    detector_pv: dict = field(default_factory=lambda: {"kind": "oracle"})
    nms_tau: float = 0.25
    eval: dict = field(default_factory=lambda: dict(DEFAULT_EVAL))
    scratch_dir: str | None = None
    parallelism: int = 1
    scene: dict = field(default_factory=dict)

    def scene_spec(self, seed: int, **overrides) -> SceneSpec:
        kw = dict(self.scene)
        kw.update(overrides)
        kw["seed"] = seed
        if "intrinsics" in kw and isinstance(kw["intrinsics"], dict):
            kw["intrinsics"] = CameraIntrinsics.from_dict(kw["intrinsics"])
        if "classes" in kw:
            kw["classes"] = {
                name: tuple(tuple(float(x) for x in r) for r in ranges)
                for name, ranges in kw["classes"].items()}
        for key in ("n_objects", "z_range"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return SceneSpec(**kw)


def _set_dotted(tree: dict, dotted: str, raw: str) -> None:
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override {dotted}: {k} is not a section")
    node[keys[-1]] = value


def load_config(path: str | None = None,
                overrides: list[str] | None = None) -> PipelineConfig:
    tree: dict = {}
    if path is not None:
        try:
            with open(path) as f:
                tree = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(
                f"config {path} line {e.lineno}: {e.msg}") from e
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set_dotted(tree, key.strip(), raw.strip())

    cfg = PipelineConfig()
    if "recursion" in tree:
        try:
            cfg.recursion = RecursionConfig.from_dict(tree["recursion"])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad recursion section: {e}") from e
    for name in ("detector_rgb", "detector_pv"):
        if name in tree:
            setattr(cfg, name, tree[name])
    if "nms_tau" in tree:
        cfg.nms_tau = float(tree["nms_tau"])
    if "eval" in tree:
        cfg.eval = {**DEFAULT_EVAL, **tree["eval"]}
    if "scratch_dir" in tree:
        cfg.scratch_dir = tree["scratch_dir"]
    if "parallelism" in tree:
        cfg.parallelism = int(tree["parallelism"])
    if "scene" in tree:
        cfg.scene = tree["scene"]
    if os.environ.get("RCV_SCRATCH"):
        cfg.scratch_dir = os.environ["RCV_SCRATCH"]
    _validate(cfg)
    return cfg


def _validate(cfg: PipelineConfig) -> None:
    for name in ("detector_rgb", "detector_pv"):
        section = getattr(cfg, name)
        kind = section.get("kind", "oracle")
        if kind == "oracle":
            try:
                DetectorNoise.from_dict(section.get("noise", {}))
            except (TypeError, ValueError) as e:
                raise ConfigError(f"{name}.noise: {e}") from e
        elif kind == "external":
            command = section.get("command")
            if not command:
                raise ConfigError(f"{name}: external detector needs a command")
            exe = command[0] if isinstance(command, list) else command.split()[0]
            if shutil.which(exe) is None and not os.path.exists(exe):
                raise ConfigError(f"{name}: command not found: {exe}")
        else:
            raise ConfigError(f"{name}.kind must be oracle or external")
    if cfg.eval.get("mode") not in ("allpoint", "R40"):
        raise ConfigError("eval.mode must be allpoint or R40")
    if cfg.parallelism < 1:
        raise ConfigError("parallelism must be >= 1")


def build_detector(section: dict, scratch_dir: str | None):
    kind = section.get("kind", "oracle")
    if kind == "oracle":
        return OracleDetector(DetectorNoise.from_dict(section.get("noise", {})))
    return ExternalDetector(section["command"], scratch_dir or "/tmp/rcv-scratch")
