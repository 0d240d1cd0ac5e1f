"""Command-line front end: rcv synth | detect | eval | sweep | serve."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .boxops import evaluate_classwise_grouped, iou3d, pooled_pr
from .config import PipelineConfig, build_detector, load_config
from .detect import DetectorNoise, OracleDetector
from .errors import ConfigError, RcvError
from .recursion import FrameData, detect_scene
from .sceneio import load_boxes_json, load_manifest, write_boxes_json, write_scene_dir
from .synthscene import generate_scene

SCENE_SEED_STRIDE = 100003  # scene k of base seed S uses S * stride + k


def _scene_name(path: str) -> str:
    p = os.path.abspath(path)
    if os.path.basename(p) == "manifest.json":
        p = os.path.dirname(p)
    return os.path.basename(p.rstrip("/"))


def _manifest_path(path: str) -> str:
    if os.path.isdir(path):
        return os.path.join(path, "manifest.json")
    return path


def _frame_from_manifest(path: str) -> tuple[FrameData, list]:
    data = load_manifest(_manifest_path(path))
    frame = FrameData(image=data["image"], cloud=data["cloud"],
                      intrinsics=data["intrinsics"],
                      image_instances=data["image_instances"])
    return frame, data["gt_boxes"] or []


def _detect_frame(frame: FrameData, cfg: PipelineConfig):
    rgb = build_detector(cfg.detector_rgb, cfg.scratch_dir)
    pv = build_detector(cfg.detector_pv, cfg.scratch_dir)
    return detect_scene(frame, rgb, pv, cfg.recursion,
                        nms_tau=cfg.nms_tau, parallelism=cfg.parallelism)


def cmd_synth(args, cfg: PipelineConfig) -> int:
    os.makedirs(args.out, exist_ok=True)
    for k in range(args.scenes):
        spec = cfg.scene_spec(seed=args.seed * SCENE_SEED_STRIDE + k)
        frame = generate_scene(spec)
        write_scene_dir(frame, os.path.join(args.out, f"scene_{k:03d}"))
    print(f"wrote {args.scenes} scenes to {args.out}")
    return 0


def cmd_detect(args, cfg: PipelineConfig) -> int:
    os.makedirs(args.out, exist_ok=True)
    for scene in args.scenes:
        frame, _ = _frame_from_manifest(scene)
        boxes = _detect_frame(frame, cfg)
        out_path = os.path.join(args.out, f"{_scene_name(scene)}.boxes.json")
        write_boxes_json(out_path, boxes)
        print(f"{_scene_name(scene)}: {len(boxes)} boxes -> {out_path}")
    return 0


def cmd_eval(args, cfg: PipelineConfig) -> int:
    iou_thresh = float(cfg.eval["iou_thresh"])
    mode = cfg.eval["mode"]
    groups = []
    for scene in args.scenes:
        data = load_manifest(_manifest_path(scene))
        gts = data["gt_boxes"] or []
        pred_path = os.path.join(args.pred, f"{_scene_name(scene)}.boxes.json")
        preds = load_boxes_json(pred_path) if os.path.exists(pred_path) else []
        groups.append((preds, gts))
    reports = evaluate_classwise_grouped(groups, iou_thresh, mode)

    out_dir = args.out or args.pred
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "eval_report.json"), "w") as f:
        json.dump(reports, f, indent=1)

    print(f"{'class':<12} {'AP':>8} {'num_gt':>7} {'num_pred':>9}   "
          f"(IoU>={iou_thresh}, {mode})")
    aps = []
    for r in reports:
        ap_str = "absent" if r["ap"] is None else f"{r['ap']:.4f}"
        print(f"{r['class']:<12} {ap_str:>8} {r['num_gt']:>7} {r['num_pred']:>9}")
        if r["ap"] is not None:
            aps.append(r["ap"])
    if aps:
        print(f"{'mAP':<12} {sum(aps) / len(aps):>8.4f}")

    curves = {}
    for r in reports:
        cls = r["class"]
        sub = [([b for b in p if b.class_label == cls],
                [b for b in g if b.class_label == cls]) for p, g in groups]
        precision, recall, _, _ = pooled_pr(sub, iou_thresh)
        if len(precision):
            curves[cls] = (recall, precision)
    from .report import save_pr_curves
    save_pr_curves(curves, os.path.join(out_dir, "pr_curves.png"))
    return 0


def _sweep_point(frames, gt_lists, cfg: PipelineConfig,
                 sigma: float, miss: float) -> dict:
    noise_rgb = DetectorNoise(jitter_sigma_px=sigma, miss_prob=miss,
                              seed=int(cfg.detector_rgb.get("noise", {}).get("seed", 0)))
    noise_pv = DetectorNoise(jitter_sigma_px=sigma, miss_prob=miss,
                             seed=int(cfg.detector_pv.get("noise", {}).get("seed", 0)))
    rgb = OracleDetector(noise_rgb)
    pv = OracleDetector(noise_pv)
    ious, steps, conv, total = [], [], 0, 0
    for frame, gts in zip(frames, gt_lists):
        boxes = detect_scene(frame, rgb, pv, cfg.recursion,
                             nms_tau=cfg.nms_tau, parallelism=cfg.parallelism)
        for gt in gts:
            ious.append(max((iou3d(b, gt) for b in boxes), default=0.0))
        steps += [b.steps for b in boxes]
        conv += sum(1 for b in boxes if b.converged)
        total += len(boxes)
    return {
        "jitter_sigma_px": sigma,
        "miss_prob": miss,
        "mean_iou": float(np.mean(ious)) if ious else 0.0,
        "convergence_rate": conv / total if total else 0.0,
        "mean_steps": float(np.mean(steps)) if steps else 0.0,
    }


def cmd_sweep(args, cfg: PipelineConfig) -> int:
    sigmas = [float(s) for s in args.sigmas.split(",")]
    frames, gt_lists = [], []
    for k in range(args.scenes):
        spec = cfg.scene_spec(seed=args.seed * SCENE_SEED_STRIDE + k)
        sf = generate_scene(spec)
        frames.append(FrameData(sf.image, sf.cloud, sf.intrinsics,
                                sf.image_instances))
        gt_lists.append(sf.gt_boxes)

    rows = [_sweep_point(frames, gt_lists, cfg, sigma, args.miss_prob)
            for sigma in sigmas]
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "sweep.csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=[
            "jitter_sigma_px", "miss_prob", "mean_iou",
            "convergence_rate", "mean_steps"])
        writer.writeheader()
        writer.writerows(rows)
    from .report import save_sweep_curves
    save_sweep_curves(rows, os.path.join(args.out, "sweep.png"))
    for r in rows:
        print(f"sigma={r['jitter_sigma_px']:<4} miss={r['miss_prob']:<4} "
              f"mean_iou={r['mean_iou']:.4f} conv={r['convergence_rate']:.3f} "
              f"steps={r['mean_steps']:.2f}")
    print(f"wrote {csv_path}")
    return 0


def cmd_serve(args, cfg: PipelineConfig) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(cfg, data_dir=args.data, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcv",
        description="3D detection and annotation from 2D detections on "
                    "orthographic pseudo-views")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                        help="override a dotted config key")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=lambda **kw: argparse.ArgumentParser(
                                    parents=[common], **kw))

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", help="run detection over scene manifests")
    p.add_argument("scenes", nargs="+", help="scene dirs or manifest paths")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("scenes", nargs="+")
    p.add_argument("--pred", required=True, help="dir with <scene>.boxes.json")
    p.add_argument("--out", help="report dir (default: --pred)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="detector-noise sweep, CSV + figure")
    p.add_argument("--scenes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--sigmas", default="0,1,2,4,8")
    p.add_argument("--miss-prob", type=float, default=0.0)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="launch the annotation service")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data", required=True, help="dir for exports and scratch")
    p.add_argument("--ui", help="static UI assets dir (frontend/dist)")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        return args.func(args, cfg)
    except (RcvError, ConfigError) as e:
        sys.stderr.write(json.dumps(
            {"error": type(e).__name__, "detail": str(e)}) + "\n")
        return 2
    except OSError as e:
        sys.stderr.write(json.dumps(
            {"error": "OSError", "detail": str(e)}) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
