"""End-to-end data path: scene pair -> renders -> ground-truth flow -> warped/blended output -> metrics."""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats
from .errors import ConfigError, ShapeError
from .flow import FlowField, VisibilityMap, compute_flow
from .losses import epe, ssim
from .pose import KeypointSet, encode_heatmap, keypoints_from_scene
from .raster import GBuffer, face_visibility, rasterize, render_color
from .scene import ArticulatedScene, make_scene, merge_config
from .tensor import ImageTensor
from .warp import blend, bilinear_warp

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SAMPLE_FILES = ("x1.png", "x2.png", "p1.ten", "p2.ten", "flow.flo", "vis.png",
                "keypoints.json", "scene.json")


@dataclass(frozen=True, eq=False)
class Synthesis:
    """Everything rendered from one scene pair; view a is the source, view b the target."""

    scene: ArticulatedScene
    gbuffer_a: GBuffer
    gbuffer_b: GBuffer
    x1: ImageTensor
    x2: ImageTensor
    flow: FlowField
    vis: VisibilityMap


def synthesize(scene: ArticulatedScene, occlusion: str = "face", background=(0.0, 0.0, 0.0),
               workers: int = 1) -> Synthesis:
    mesh_a, mesh_b = scene.mesh_a(), scene.mesh_b()
    ga = rasterize(mesh_a, scene.camera_a, workers)
    gb = rasterize(mesh_b, scene.camera_b, workers)
    x1 = render_color(ga, mesh_a, background)
    x2 = render_color(gb, mesh_b, background)
    seen = face_visibility(ga, mesh_a.face_count)
    flow, vis = compute_flow(gb, mesh_a, mesh_b, scene.camera_a, seen,
                             occlusion=occlusion, gbuffer_source=ga)
    return Synthesis(scene, ga, gb, x1, x2, flow, vis)


@dataclass(frozen=True, eq=False)
class SamplePair:
    scene: ArticulatedScene
    x1: ImageTensor
    x2: ImageTensor
    p1: ImageTensor
    p2: ImageTensor
    flow: FlowField
    vis: VisibilityMap
    keypoints_1: KeypointSet
    keypoints_2: KeypointSet

    def write(self, directory) -> list[str]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        formats.write_png(d / "x1.png", self.x1)
        formats.write_png(d / "x2.png", self.x2)
        formats.write_ten(d / "p1.ten", self.p1)
        formats.write_ten(d / "p2.ten", self.p2)
        formats.write_flo(d / "flow.flo", self.flow)
        formats.write_vis_png(d / "vis.png", self.vis)
        formats.write_keypoints(d / "keypoints.json", p1=self.keypoints_1, p2=self.keypoints_2)
        (d / "scene.json").write_text(self.scene.dumps())
        return list(SAMPLE_FILES)


def generate_sample(config: dict | None, seed: int, workers: int = 1) -> SamplePair:
    cfg = merge_config(config)
    scene = make_scene(cfg, seed)
    syn = synthesize(scene, cfg.get("occlusion", "face"), cfg.get("background", (0.0, 0.0, 0.0)), workers)
    k1 = keypoints_from_scene(scene, "a")
    k2 = keypoints_from_scene(scene, "b")
    w, h = scene.camera_b.width, scene.camera_b.height
    p1 = encode_heatmap(k1, scene.camera_a.width, scene.camera_a.height)
    p2 = encode_heatmap(k2, w, h)
    return SamplePair(scene, syn.x1, syn.x2, p1, p2, syn.flow, syn.vis, k1, k2)


def config_hash(config: dict | None) -> str:
    canon = json.dumps(merge_config(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


class SampleWriteError(OSError):
    pass


def sample_dirname(seed: int) -> str:
    return f"sample_{seed}"


def _is_complete(directory: Path) -> bool:
    return all((directory / name).is_file() for name in SAMPLE_FILES)


def _write_one(args):
    config, seed, directory = args
    try:
        generate_sample(config, seed).write(directory)
    except OSError as exc:
        raise SampleWriteError(f"sample seed {seed}: {exc}") from exc
    return seed


def generate_dataset(config: dict | None, count: int, out_dir, workers: int = 1,
                     seed_base: int = 0) -> dict:
    """Write ``count`` samples (seeds seed_base, seed_base + 1, ...) plus manifest.json.

    Complete sample directories are left untouched, so an interrupted run can be resumed.
    """
    if count < 0:
        raise ConfigError(f"count must be >= 0, got {count}")
    out = Path(out_dir)
    cfg = merge_config(config)
    chash = config_hash(cfg)
    manifest_path = out / "manifest.json"
    try:
        out.mkdir(parents=True, exist_ok=True)
        if manifest_path.exists():
            old = json.loads(manifest_path.read_text())
            if old.get("config_hash") != chash:
                raise ConfigError(f"{out} holds samples generated from a different config")
    except OSError as exc:
        raise SampleWriteError(f"cannot prepare {out}: {exc}") from exc

    seeds = [seed_base + i for i in range(count)]
    todo = [(cfg, s, out / sample_dirname(s)) for s in seeds if not _is_complete(out / sample_dirname(s))]
    log.info("%d of %d samples to generate in %s", len(todo), count, out)
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for seed in pool.map(_write_one, todo):
                log.debug("wrote sample %d", seed)
    else:
        for job in todo:
            _write_one(job)

    manifest = {
        "version": MANIFEST_VERSION,
        "config_hash": chash,
        "samples": [
            {"seed": s, "dir": sample_dirname(s),
             "files": [f"{sample_dirname(s)}/{name}" for name in SAMPLE_FILES]}
            for s in seeds
        ],
    }
    try:
        formats._atomic_write(manifest_path, json.dumps(manifest, indent=1).encode())
    except OSError as exc:
        raise SampleWriteError(f"cannot write manifest: {exc}") from exc
    return manifest


def masked_l1(a: ImageTensor, b: ImageTensor, vis: VisibilityMap) -> float:
    if a.shape != b.shape or a.shape[:2] != vis.labels.shape:
        raise ShapeError("masked L1 inputs disagree in shape")
    m = vis.foreground
    if not m.any():
        return 0.0
    return float(np.abs(a.data - b.data)[m].mean())


def run_transfer(sample: SamplePair, generated: ImageTensor | None = None,
                 weight: ImageTensor | None = None):
    """Pixel warping and blending with externally supplied network stand-ins.

    Defaults: ``generated`` is the warped image itself and ``weight`` is all ones.
    Returns (x_w, x_hat, metrics).
    """
    x_w = bilinear_warp(sample.x1, sample.flow)
    if generated is None:
        generated = x_w
    if weight is None:
        weight = ImageTensor(np.ones(sample.x1.shape[:2] + (1,)), "weight")
    elif weight.role != "weight":
        weight = weight.with_role("weight")
    x_hat = blend(x_w, generated, weight)
    zero = FlowField.zeros(sample.flow.height, sample.flow.width)
    metrics = {
        "ssim": ssim(x_hat, sample.x2),
        "masked_l1": masked_l1(x_hat, sample.x2, sample.vis),
        "epe_zero_flow": epe(zero, sample.flow, sample.vis),
    }
    return x_w, x_hat, metrics
