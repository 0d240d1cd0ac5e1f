#!/usr/bin/env python3
"""Produce the scripted-session fixture for the UI end-to-end test.

Given a synthetic scene manifest, computes the seed rectangle on the
raw image plus two rounds of oracle-tight front/side label rectangles
(what a careful human would draw), using the same engine defaults the
server runs with. Prints JSON to stdout.
"""
import json
import sys

import numpy as np

from rcv.axes import AxesConfig, compute_axes
from rcv.crossview import BoxPair, cross_view
from rcv.detect import oracle_detect
from rcv.geometry import AxesTriad, Detection2D, RigidTransform, box_to_json, compose
from rcv.recursion import _view_instances
from rcv.sceneio import load_manifest
from rcv.views import (
    RenderConfig,
    StepFrame,
    extract_frustum,
    prune_by_boxes,
    render_pseudo_view,
)


def main(manifest_path: str, rounds: int = 2) -> None:
    data = load_manifest(manifest_path)
    cloud, intr = data["cloud"], data["intrinsics"]
    classes = data["instance_classes"]
    label = classes[1]

    ids = data["image_instances"].ids
    rows, cols = np.nonzero(ids == 1)
    seed_rect = [float(cols.min()), float(rows.min()),
                 float(cols.max()) + 1, float(rows.max()) + 1]

    rcfg = RenderConfig()            # server defaults
    acfg = AxesConfig()
    seed = Detection2D(label, 1.0, tuple(seed_rect)).clamped(
        intr.width, intr.height)
    idx = extract_frustum(cloud, intr, seed)
    cum = RigidTransform.identity()
    out_rounds = []
    boxes = []
    for _ in range(rounds):
        frame = StepFrame(AxesTriad(cum.rotation), cum.translation)
        front = render_pseudo_view(cloud, idx, frame, "front", rcfg)
        side = render_pseudo_view(cloud, idx, frame, "side", rcfg)
        det_f = oracle_detect(_view_instances(front, cloud, classes), label)[0]
        det_s = oracle_detect(_view_instances(side, cloud, classes), label)[0]
        out_rounds.append({"front": list(det_f.rect), "side": list(det_s.rect)})
        kept = prune_by_boxes(idx, front, side, det_f, det_s)
        boxes.append(cross_view(BoxPair(det_f, det_s, 1.0), front, side,
                                score=1.0))
        pts_local = cum.invert().apply(cloud.positions[kept])
        axes = compute_axes(pts_local, acfg, prev=AxesTriad.identity(),
                            viewpoint=cum.invert().apply(np.zeros(3)))
        cum = compose(cum, RigidTransform(axes.matrix, pts_local.mean(axis=0)))
        idx = kept

    print(json.dumps({
        "class": label,
        "seed_rect": seed_rect,
        "rounds": out_rounds,
        "expected_boxes": [box_to_json(b) for b in boxes],
    }))


if __name__ == "__main__":
    main(sys.argv[1], int(sys.argv[2]) if len(sys.argv) > 2 else 2)
