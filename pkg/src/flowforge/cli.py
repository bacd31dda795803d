"""Command-line front end. Metrics go to stdout as JSON, diagnostics to stderr.

Exit codes: 0 success, 1 contract/shape/usage errors, 2 I/O errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import formats
from .errors import FlowForgeError
from .flow import FlowField
from .losses import (LossWeights, adversarial_loss, epe, l1_loss, perceptual_loss, ssim,
                     total_loss)
from .pipeline import generate_dataset, synthesize
from .pose import encode_heatmap
from .scene import ArticulatedScene, make_scene, merge_config
from .warp import bilinear_warp, blend, visibility_gate

log = logging.getLogger("flowforge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("FLOWFORGE_THREADS", "1")))
    except ValueError:
        return 1


def _load_config(path, args) -> dict:
    cfg = {}
    if path:
        cfg = json.loads(Path(path).read_text())
        if not isinstance(cfg, dict):
            raise FlowForgeError(f"{path}: config must be a JSON object")
    if getattr(args, "detail", None) is not None:
        cfg["detail"] = args.detail
    if getattr(args, "size", None):
        w, h = _parse_size(args.size)
        cfg["width"], cfg["height"] = w, h
    if getattr(args, "occlusion", None):
        cfg["occlusion"] = args.occlusion
    return merge_config(cfg)


def _parse_size(text: str):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise FlowForgeError(f"size must look like WxH, got {text!r}") from exc


def _emit(obj):
    sys.stdout.write(json.dumps(obj) + "\n")


def cmd_scene_gen(args):
    cfg = _load_config(args.config, args)
    scene = make_scene(cfg, args.seed)
    Path(args.out).write_text(scene.dumps())


def cmd_dataset_gen(args):
    cfg = _load_config(args.config, args)
    manifest = generate_dataset(cfg, args.count, args.out, workers=args.workers, seed_base=args.seed_base)
    _emit({"samples": len(manifest["samples"]), "config_hash": manifest["config_hash"]})


def cmd_flow_compute(args):
    scene = ArticulatedScene.loads(Path(args.scene).read_text())
    syn = synthesize(scene, occlusion=args.occlusion)
    formats.write_flo(args.out_flow, syn.flow)
    formats.write_vis_png(args.out_vis, syn.vis)
    if args.preview:
        formats.write_vis_preview(args.preview, syn.vis)


def cmd_warp_apply(args):
    image = formats.read_png(args.image)
    flow = formats.read_flo(args.flow)
    formats.write_png(args.out, bilinear_warp(image, flow))


def cmd_gate_apply(args):
    tensor = formats.read_ten(args.tensor)
    vis = formats.read_vis_png(args.vis)
    formats.write_ten(args.out, visibility_gate(tensor, vis))


def cmd_blend(args):
    warped = formats.read_png(args.warped)
    generated = formats.read_png(args.generated)
    weight = formats.read_ten(args.weight, role="weight")
    formats.write_png(args.out, blend(warped, generated, weight))


def cmd_pose_heatmap(args):
    keypoints = formats.read_keypoints(args.keypoints, args.set)
    w, h = _parse_size(args.size)
    formats.write_ten(args.out, encode_heatmap(keypoints, w, h, args.radius))


def cmd_eval_epe(args):
    vis = formats.read_vis_png(args.vis) if args.vis else None
    pred = formats.read_flo(args.pred, vis)
    truth = formats.read_flo(args.truth, vis)
    value = epe(pred, truth, vis, masked=vis is not None)
    _emit({"epe": value})


def cmd_eval_ssim(args):
    _emit({"ssim": ssim(formats.read_png(args.a), formats.read_png(args.b))})


def _operand(value, base: Path):
    """A loss operand: a number, a nested list, or a path to a .ten/.png/.flo file."""
    if isinstance(value, str):
        path = (base / value) if not Path(value).is_absolute() else Path(value)
        if path.suffix == ".ten":
            return formats.read_ten(path).data
        if path.suffix == ".png":
            return formats.read_png(path).data
        if path.suffix == ".flo":
            return formats.read_flo(path)
        raise FlowForgeError(f"unsupported operand file {value!r}")
    return np.asarray(value, dtype=np.float64)


def evaluate_loss_spec(spec: dict, base: Path) -> dict:
    """Evaluate whichever loss terms a JSON spec provides; ``weights`` adds the total."""
    out = {}
    if "adversarial" in spec:
        s = spec["adversarial"]
        out["adversarial"] = adversarial_loss(_operand(s["d_real"], base), _operand(s["d_fake"], base))
    if "l1" in spec:
        s = spec["l1"]
        out["l1"] = l1_loss(_operand(s["generated"], base), _operand(s["target"], base))
    if "perceptual" in spec:
        s = spec["perceptual"]
        out["perceptual"] = perceptual_loss([_operand(v, base) for v in s["features_a"]],
                                            [_operand(v, base) for v in s["features_b"]])
    if "ssim" in spec:
        s = spec["ssim"]
        out["ssim"] = ssim(_operand(s["a"], base), _operand(s["b"], base))
    if "weights" in spec:
        w = spec["weights"]
        weights = LossWeights(*w) if isinstance(w, list) else LossWeights(**w)
        out["total"] = total_loss(out.get("adversarial", 0.0), out.get("l1", 0.0),
                                  out.get("perceptual", 0.0), weights)
    return out


def cmd_eval_losses(args):
    path = Path(args.json)
    spec = json.loads(path.read_text())
    try:
        _emit(evaluate_loss_spec(spec, path.parent))
    except (KeyError, TypeError) as exc:
        raise FlowForgeError(f"malformed loss spec: {exc!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flowforge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="group", required=True, parser_class=_Parser)

    def scene_opts(sp):
        sp.add_argument("--config")
        sp.add_argument("--detail", type=int)
        sp.add_argument("--size", help="WxH")
        sp.add_argument("--occlusion", choices=("face", "point"))

    g = sub.add_parser("scene").add_subparsers(dest="action", required=True, parser_class=_Parser)
    sp = g.add_parser("gen")
    scene_opts(sp)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_scene_gen)

    g = sub.add_parser("dataset").add_subparsers(dest="action", required=True, parser_class=_Parser)
    sp = g.add_parser("gen")
    scene_opts(sp)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--workers", type=int, default=_default_workers())
    sp.add_argument("--seed-base", type=int, default=0)
    sp.set_defaults(func=cmd_dataset_gen)

    g = sub.add_parser("flow").add_subparsers(dest="action", required=True, parser_class=_Parser)
    sp = g.add_parser("compute")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--out-flow", required=True)
    sp.add_argument("--out-vis", required=True)
    sp.add_argument("--preview")
    sp.add_argument("--occlusion", choices=("face", "point"), default="face")
    sp.set_defaults(func=cmd_flow_compute)

    g = sub.add_parser("warp").add_subparsers(dest="action", required=True, parser_class=_Parser)
    sp = g.add_parser("apply")
    sp.add_argument("--image", required=True)
    sp.add_argument("--flow", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_warp_apply)

    g = sub.add_parser("gate").add_subparsers(dest="action", required=True, parser_class=_Parser)
    sp = g.add_parser("apply")
    sp.add_argument("--tensor", required=True)
    sp.add_argument("--vis", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gate_apply)

    sp = sub.add_parser("blend")
    sp.add_argument("--warped", required=True)
    sp.add_argument("--generated", required=True)
    sp.add_argument("--weight", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_blend)

    g = sub.add_parser("pose").add_subparsers(dest="action", required=True, parser_class=_Parser)
    sp = g.add_parser("heatmap")
    sp.add_argument("--keypoints", required=True)
    sp.add_argument("--set", help="named set inside the keypoint file (e.g. p1)")
    sp.add_argument("--size", required=True, help="WxH")
    sp.add_argument("--radius", type=float, default=8.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_pose_heatmap)

    g = sub.add_parser("eval").add_subparsers(dest="action", required=True, parser_class=_Parser)
    sp = g.add_parser("epe")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--vis")
    sp.set_defaults(func=cmd_eval_epe)
    sp = g.add_parser("ssim")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.set_defaults(func=cmd_eval_ssim)
    sp = g.add_parser("losses")
    sp.add_argument("--json", required=True)
    sp.set_defaults(func=cmd_eval_losses)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except FlowForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
