"""Scene directory layout and file formats.

scene_<k>/
  image.png        8-bit RGB seed image
  cloud.ply        binary little-endian, float32 xyz + uchar rgb
                   (+ ushort instance when ids are present)
  instances.png    16-bit per-pixel instance ids (0 = background)
  gt_boxes.json    box JSON schema array
  manifest.json    intrinsics + relative paths + instance class table

The manifest's minimal contract (image, cloud, intrinsics) is what real
RGB-D recordings must provide; the other keys exist only on synthetic
scenes.
"""

from __future__ import annotations

import json
import os

import numpy as np
from PIL import Image

from .detect import InstancePixelMap
from .geometry import (
    CameraIntrinsics,
    OrientedBox3D,
    PointCloud,
    box_from_json,
    box_to_json,
)
from .synthscene import SceneFrame

_PLY_TYPES = {"float": ("<f4", 4), "uchar": ("u1", 1), "ushort": ("<u2", 2)}


def write_ply(path: str, cloud: PointCloud) -> None:
    n = len(cloud)
    props = ["property float x", "property float y", "property float z",
             "property uchar red", "property uchar green", "property uchar blue"]
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
              ("red", "u1"), ("green", "u1"), ("blue", "u1")]
    if cloud.instance_ids is not None:
        props.append("property ushort instance")
        fields.append(("instance", "<u2"))
    header = "\n".join([
        "ply", "format binary_little_endian 1.0", f"element vertex {n}",
        *props, "end_header", ""])
    rec = np.zeros(n, dtype=fields)
    rec["x"], rec["y"], rec["z"] = cloud.positions.astype(np.float32).T
    rec["red"], rec["green"], rec["blue"] = cloud.colors.T
    if cloud.instance_ids is not None:
        rec["instance"] = cloud.instance_ids.astype(np.uint16)
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(rec.tobytes())


def read_ply(path: str) -> PointCloud:
    with open(path, "rb") as f:
        data = f.read()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    lines = data[:end].decode("ascii").splitlines()
    if lines[0] != "ply" or "format binary_little_endian 1.0" not in lines[1]:
        raise ValueError(f"unsupported PLY header in {path}")
    n = 0
    fields = []
    for line in lines:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts and parts[0] == "property":
            if parts[1] not in _PLY_TYPES:
                raise ValueError(f"unsupported PLY property type {parts[1]}")
            fields.append((parts[2], _PLY_TYPES[parts[1]][0]))
    rec = np.frombuffer(data[end:], dtype=fields, count=n)
    positions = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    colors = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1)
    names = [f[0] for f in fields]
    ids = rec["instance"].astype(np.int32) if "instance" in names else None
    return PointCloud(positions, colors, instance_ids=ids)


def write_png(path: str, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)


def read_png(path: str) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def write_instance_png(path: str, ids: np.ndarray) -> None:
    Image.fromarray(ids.astype(np.uint16)).save(path)


def read_instance_png(path: str) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.int32)


def write_scene_dir(frame: SceneFrame, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    write_png(os.path.join(out_dir, "image.png"), frame.image)
    write_ply(os.path.join(out_dir, "cloud.ply"), frame.cloud)
    write_instance_png(os.path.join(out_dir, "instances.png"),
                       frame.image_instances.ids)
    with open(os.path.join(out_dir, "gt_boxes.json"), "w") as f:
        json.dump([box_to_json(b) for b in frame.gt_boxes], f, indent=1)
    manifest = {
        "image": "image.png",
        "cloud": "cloud.ply",
        "instances": "instances.png",
        "gt_boxes": "gt_boxes.json",
        "intrinsics": frame.intrinsics.to_dict(),
        "instance_classes": {str(k): v for k, v in
                             sorted(frame.instance_classes.items())},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1)
    return path


def load_manifest(path: str) -> dict:
    """Resolve a manifest into loaded arrays and objects.

    Returns a dict with image, cloud, intrinsics and, when present,
    image_instances (InstancePixelMap) and gt_boxes.
    """
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as f:
        m = json.load(f)

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    out = {
        "image": read_png(resolve(m["image"])),
        "cloud": read_ply(resolve(m["cloud"])),
        "intrinsics": CameraIntrinsics.from_dict(m["intrinsics"]),
        "gt_boxes": None,
        "image_instances": None,
    }
    classes = {int(k): v for k, v in m.get("instance_classes", {}).items()}
    if "gt_boxes" in m:
        with open(resolve(m["gt_boxes"])) as f:
            out["gt_boxes"] = [box_from_json(d) for d in json.load(f)]
        if not classes:
            classes = {i + 1: b.class_label for i, b in enumerate(out["gt_boxes"])}
    if "instances" in m:
        ids = read_instance_png(resolve(m["instances"]))
        out["image_instances"] = InstancePixelMap(ids, classes)
    out["instance_classes"] = classes
    return out


def load_boxes_json(path: str) -> list[OrientedBox3D]:
    with open(path) as f:
        return [box_from_json(d) for d in json.load(f)]


def write_boxes_json(path: str, boxes: list[OrientedBox3D]) -> None:
    with open(path, "w") as f:
        json.dump([box_to_json(b) for b in boxes], f, indent=1)
