"""Ground-truth appearance flow and visibility between two renders of one mesh topology."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConsistencyError, ShapeError
from .raster import GBuffer
from .scene import BodyMesh, Camera

BACKGROUND, VISIBLE, INVISIBLE = 0, 1, 2
LABELS = (BACKGROUND, VISIBLE, INVISIBLE)
OCCLUSION_MODES = ("face", "point")


@dataclass(frozen=True, eq=False)
class VisibilityMap:
    labels: np.ndarray  # (H, W) uint8

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ShapeError(f"visibility map must be 2-D, got shape {labels.shape}")
        if labels.size and not np.isin(labels, LABELS).all():
            raise ConsistencyError("visibility labels must be 0, 1 or 2")
        labels = labels.astype(np.uint8)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def foreground(self) -> np.ndarray:
        return self.labels != BACKGROUND

    @classmethod
    def filled(cls, height: int, width: int, label: int) -> "VisibilityMap":
        return cls(np.full((height, width), label, dtype=np.uint8))


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement (dx, dy) from a target pixel to its source location."""

    vectors: np.ndarray  # (H, W, 2)
    defined: np.ndarray  # (H, W) bool

    def __post_init__(self):
        vec = np.array(self.vectors)
        if vec.ndim != 3 or vec.shape[2] != 2:
            raise ShapeError(f"flow must be H x W x 2, got shape {vec.shape}")
        if not np.issubdtype(vec.dtype, np.floating):
            vec = vec.astype(np.float64)
        defined = np.array(self.defined, dtype=bool)
        if defined.shape != vec.shape[:2]:
            raise ShapeError("defined-flag shape does not match flow")
        if not np.all(np.isfinite(vec)):
            raise ConsistencyError("flow contains NaN or Inf")
        vec[~defined] = 0.0
        vec.setflags(write=False)
        defined.setflags(write=False)
        object.__setattr__(self, "vectors", vec)
        object.__setattr__(self, "defined", defined)

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def dense(cls, vectors) -> "FlowField":
        vectors = np.asarray(vectors)
        return cls(vectors, np.ones(vectors.shape[:2], dtype=bool))

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls.dense(np.zeros((height, width, 2)))

    def same_as(self, other: "FlowField") -> bool:
        return (np.array_equal(self.vectors, other.vectors)
                and np.array_equal(self.defined, other.defined))


def pixel_grid(height: int, width: int) -> np.ndarray:
    """(H, W, 2) pixel-center coordinates (x, y) = (j, i)."""
    ys, xs = np.mgrid[0:height, 0:width]
    return np.stack([xs, ys], axis=-1).astype(np.float64)


def compute_flow(gbuffer_target: GBuffer, mesh_source: BodyMesh, mesh_target: BodyMesh,
                 camera_source: Camera, source_face_visible: np.ndarray,
                 occlusion: str = "face", gbuffer_source: GBuffer | None = None,
                 depth_tolerance: float = 0.5):
    """Flow from each covered target pixel to the source-view projection of the same surface point.

    The surface point is the barycentric combination of the covering face's source
    vertices. Visibility is decided per face by default; ``occlusion="point"`` instead
    compares the point's source depth against ``gbuffer_source`` at the nearest pixel.
    """
    if occlusion not in OCCLUSION_MODES:
        raise ConfigError(f"occlusion must be one of {OCCLUSION_MODES}, got {occlusion!r}")
    if not np.array_equal(mesh_source.faces, mesh_target.faces):
        raise ConsistencyError("source and target meshes do not share topology")
    if gbuffer_target.face_count != mesh_target.face_count:
        raise ConsistencyError("target gbuffer was not rasterized from the target mesh")
    source_face_visible = np.asarray(source_face_visible, dtype=bool)
    if source_face_visible.shape != (mesh_source.face_count,):
        raise ConsistencyError("source_face_visible must hold one flag per face")

    H, W = gbuffer_target.height, gbuffer_target.width
    cov = gbuffer_target.covered
    fid = gbuffer_target.face_id[cov]
    b = gbuffer_target.bary[cov]
    points = np.einsum("nk,nkd->nd", b, mesh_source.vertices[mesh_source.faces[fid]])
    proj = camera_source.project(points)
    uv_src = proj[:, :2]
    grid = pixel_grid(H, W)[cov]

    vectors = np.zeros((H, W, 2))
    vectors[cov] = uv_src - grid

    in_frame = camera_source.in_frame(uv_src)
    if occlusion == "face":
        seen = source_face_visible[fid]
    else:
        if gbuffer_source is None:
            raise ConfigError("point occlusion needs the source gbuffer")
        seen = np.zeros(len(fid), dtype=bool)
        ii = np.clip(np.floor(uv_src[:, 1] + 0.5).astype(np.int64), 0, gbuffer_source.height - 1)
        jj = np.clip(np.floor(uv_src[:, 0] + 0.5).astype(np.int64), 0, gbuffer_source.width - 1)
        hit = gbuffer_source.covered[ii, jj]
        front = np.where(hit, gbuffer_source.depth[ii, jj], np.inf)
        seen = hit & (proj[:, 2] <= front + depth_tolerance)
    labels = np.zeros((H, W), dtype=np.uint8)
    labels[cov] = np.where(seen & in_frame, VISIBLE, INVISIBLE)
    return FlowField(vectors, cov), VisibilityMap(labels)


def _majority(block: np.ndarray) -> np.ndarray:
    """block: (..., 4) labels -> majority label, ties broken VISIBLE > INVISIBLE > BACKGROUND."""
    counts = np.stack([(block == lab).sum(axis=-1) for lab in (VISIBLE, INVISIBLE, BACKGROUND)], axis=-1)
    winner = np.argmax(counts, axis=-1)  # argmax takes the first maximum, i.e. the priority order
    return np.array([VISIBLE, INVISIBLE, BACKGROUND], dtype=np.uint8)[winner]


def downsample_flow(flow: FlowField, vis: VisibilityMap, levels: int):
    """Pyramid [(F_0, V_0), ..., (F_levels, V_levels)] with level k at 1/2^k resolution."""
    H, W = flow.height, flow.width
    if (vis.height, vis.width) != (H, W):
        raise ShapeError("flow and visibility map sizes differ")
    if levels < 0 or H % (1 << levels) or W % (1 << levels):
        raise ShapeError(f"{H}x{W} is not divisible by 2^{levels}")
    out = [(flow, vis)]
    vec, lab = flow.vectors, vis.labels
    for _ in range(levels):
        h, w = lab.shape[0] // 2, lab.shape[1] // 2
        lb = lab.reshape(h, 2, w, 2).transpose(0, 2, 1, 3).reshape(h, w, 4)
        vb = vec.reshape(h, 2, w, 2, 2).transpose(0, 2, 1, 3, 4).reshape(h, w, 4, 2)
        fg = (lb != BACKGROUND)
        n = fg.sum(axis=-1)
        total = (vb * fg[..., None]).sum(axis=2)
        mean = np.divide(total, n[..., None], out=np.zeros_like(total), where=n[..., None] > 0)
        lab = _majority(lb)
        level = FlowField(mean * 0.5, lab != BACKGROUND)
        out.append((level, VisibilityMap(lab)))
        vec = level.vectors
    return out
