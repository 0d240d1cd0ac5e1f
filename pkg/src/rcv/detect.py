"""Pluggable 2D detector boundary.

Two implementations of the same detect(image, class_filter) contract:
an oracle that reads synthetic per-pixel instance maps (optionally
corrupted by a seeded noise model), and an adapter that drives a real
detector in a child process over newline-delimited JSON, with images
passed by file path.
"""

from __future__ import annotations

import hashlib
import json
import os
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .errors import DetectorUnavailable, ProtocolError
from .geometry import Detection2D

FALSE_POSITIVE_SCORE = 0.3
TRUE_SCORE_JITTER = 0.01


@dataclass(frozen=True)
class DetectorNoise:
    """Failure model for the oracle detector."""

    jitter_sigma_px: float = 0.0
    miss_prob: float = 0.0
    false_positive_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.jitter_sigma_px < 0:
            raise ValueError("jitter_sigma_px must be >= 0")
        if not 0.0 <= self.miss_prob <= 1.0:
            raise ValueError("miss_prob must be in [0, 1]")
        if self.false_positive_rate < 0:
            raise ValueError("false_positive_rate must be >= 0")

    @property
    def is_zero(self) -> bool:
        return (self.jitter_sigma_px == 0 and self.miss_prob == 0
                and self.false_positive_rate == 0)

    def to_dict(self) -> dict:
        return {"jitter_sigma_px": self.jitter_sigma_px,
                "miss_prob": self.miss_prob,
                "false_positive_rate": self.false_positive_rate,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorNoise":
        return cls(**{k: d[k] for k in ("jitter_sigma_px", "miss_prob",
                                        "false_positive_rate", "seed") if k in d})


@dataclass(frozen=True)
class InstancePixelMap:
    """Per-pixel instance id (0 = background) aligned with one raster."""

    ids: np.ndarray
    classes: dict[int, str]

    def __post_init__(self):
        ids = np.asarray(self.ids)
        if ids.ndim != 2:
            raise ValueError("ids must be a 2D array")
        ids = np.ascontiguousarray(ids.astype(np.int32))
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]


def _call_rng(noise: DetectorNoise, map_: InstancePixelMap,
              class_filter: str | None) -> np.random.Generator:
    # noise draws are a pure function of (seed, image content, filter), so
    # repeated calls reproduce and the image permutation cannot leak in
    h = hashlib.blake2s(map_.ids.tobytes())
    h.update(str(map_.ids.shape).encode())
    h.update((class_filter or "").encode())
    digest = int.from_bytes(h.digest()[:8], "little")
    return np.random.default_rng([noise.seed & 0xFFFFFFFF, digest])


def _sanitize_rect(u0, v0, u1, v1, width, height):
    u0 = float(np.clip(u0, 0, width - 1))
    v0 = float(np.clip(v0, 0, height - 1))
    u1 = float(np.clip(u1, u0 + 1, width))
    v1 = float(np.clip(v1, v0 + 1, height))
    return u0, v0, u1, v1


def oracle_detect(map_: InstancePixelMap, class_filter: str | None,
                  noise: DetectorNoise = DetectorNoise()) -> list[Detection2D]:
    """Tight per-instance rectangles, corrupted by the seeded noise model.

    Rectangles are half-open in pixels: an instance occupying pixel
    columns 10..20 yields u0=10, u1=21. With zero noise the output is
    exactly the tight boxes with score 1.0.
    """
    rng = _call_rng(noise, map_, class_filter)
    present = np.unique(map_.ids)
    present = present[present > 0]
    dets: list[Detection2D] = []
    for inst in present.tolist():
        label = map_.classes.get(inst, "")
        rows, cols = np.nonzero(map_.ids == inst)
        # draws happen for every instance so the stream stays aligned
        # across noise settings (common random numbers for sweeps)
        miss_draw = rng.random()
        jitter = rng.normal(size=4)
        score_draw = rng.random()
        if class_filter is not None and label != class_filter:
            continue
        if miss_draw < noise.miss_prob:
            continue
        u0, v0 = float(cols.min()), float(rows.min())
        u1, v1 = float(cols.max()) + 1, float(rows.max()) + 1
        if noise.jitter_sigma_px > 0:
            u0, v0, u1, v1 = _sanitize_rect(
                u0 + noise.jitter_sigma_px * jitter[0],
                v0 + noise.jitter_sigma_px * jitter[1],
                u1 + noise.jitter_sigma_px * jitter[2],
                v1 + noise.jitter_sigma_px * jitter[3],
                map_.width, map_.height)
        score = 1.0 if noise.is_zero else 1.0 - TRUE_SCORE_JITTER * score_draw
        dets.append(Detection2D(label, score, (u0, v0, u1, v1)))
    n_fp = int(rng.poisson(noise.false_positive_rate)) \
        if noise.false_positive_rate > 0 else 0
    labels = sorted(set(map_.classes.values()))
    for _ in range(n_fp):
        label = class_filter if class_filter is not None else \
            (labels[int(rng.integers(len(labels)))] if labels else "")
        u = np.sort(rng.uniform(0, map_.width, 2))
        v = np.sort(rng.uniform(0, map_.height, 2))
        rect = _sanitize_rect(u[0], v[0], u[1], v[1], map_.width, map_.height)
        dets.append(Detection2D(label, FALSE_POSITIVE_SCORE, rect))
    dets.sort(key=lambda d: (-d.score, d.rect))
    return dets


class OracleDetector:
    """Detector that reads instance maps instead of running a network."""

    def __init__(self, noise: DetectorNoise = DetectorNoise(),
                 instances: InstancePixelMap | None = None):
        self.noise = noise
        self.instances = instances

    def detect(self, image: np.ndarray, class_filter: str | None = None,
               instances: InstancePixelMap | None = None) -> list[Detection2D]:
        map_ = instances if instances is not None else self.instances
        if map_ is None:
            raise DetectorUnavailable("oracle detector needs an instance map")
        if map_.ids.shape != image.shape[:2]:
            raise ValueError("instance map does not match the raster")
        return oracle_detect(map_, class_filter, self.noise)


# --- wire protocol -----------------------------------------------------

def encode_request(req_id: int, image_path: str,
                   class_filter: str | None) -> str:
    return json.dumps({"id": req_id, "image": image_path,
                       "class_filter": class_filter}) + "\n"


def decode_request(line: str) -> dict:
    try:
        d = json.loads(line)
        return {"id": int(d["id"]), "image": str(d["image"]),
                "class_filter": d.get("class_filter")}
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ProtocolError(f"bad request line: {line!r}") from e


def encode_response(req_id: int, dets: list[Detection2D]) -> str:
    boxes = [{"class": d.class_label, "score": d.score,
              "rect": list(d.rect)} for d in dets]
    return json.dumps({"id": req_id, "boxes": boxes}) + "\n"


def decode_response(line: str) -> tuple[int, list[Detection2D]]:
    try:
        d = json.loads(line)
        req_id = int(d["id"])
        dets = [Detection2D(str(b["class"]), float(b["score"]),
                            tuple(float(x) for x in b["rect"]))
                for b in d["boxes"]]
        return req_id, dets
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ProtocolError(f"bad response line: {line!r}") from e


class ExternalDetector:
    """Adapter around a detector child process.

    One request line per image; responses echo the id and may arrive out
    of order. The child is spawned lazily and requests are serialized,
    so a single handle is safe to share across branches.
    """

    def __init__(self, command: list[str] | str, scratch_dir: str):
        self.command = command
        self.scratch_dir = scratch_dir
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()
        self._next_id = 0
        self._pending: dict[int, list[Detection2D]] = {}

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            cmd = self.command if isinstance(self.command, list) \
                else self.command.split()
            self._proc = subprocess.Popen(
                cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
        return self._proc

    def detect(self, image: np.ndarray, class_filter: str | None = None,
               instances=None) -> list[Detection2D]:
        from PIL import Image

        with self._lock:
            os.makedirs(self.scratch_dir, exist_ok=True)
            self._next_id += 1
            req_id = self._next_id
            path = os.path.join(self.scratch_dir, f"det_{os.getpid()}_{req_id}.png")
            Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)
            proc = self._ensure_proc()
            try:
                proc.stdin.write(encode_request(req_id, path, class_filter))
                proc.stdin.flush()
                while req_id not in self._pending:
                    line = proc.stdout.readline()
                    if not line:
                        raise DetectorUnavailable("detector process closed its pipe")
                    rid, dets = decode_response(line)
                    self._pending[rid] = dets
            except (BrokenPipeError, OSError) as e:
                raise DetectorUnavailable(str(e)) from e
            finally:
                try:
                    os.remove(path)
                except OSError:
                    pass
            return self._pending.pop(req_id)

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)
        self._proc = None
