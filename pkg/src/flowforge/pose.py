"""18-keypoint sets and their binary disk heatmaps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .scene import JOINT_NAMES, NUM_JOINTS, ArticulatedScene, project_keypoints
from .tensor import ImageTensor

DEFAULT_RADIUS = 8.0


@dataclass(frozen=True, eq=False)
class KeypointSet:
    points: np.ndarray  # (18, 2) pixel (x, y)
    present: np.ndarray  # (18,) bool

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        present = np.array(self.present, dtype=bool)
        if pts.shape != (NUM_JOINTS, 2) or present.shape != (NUM_JOINTS,):
            raise ShapeError(f"keypoint set needs {NUM_JOINTS} (x, y) entries")
        pts.setflags(write=False)
        present.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "present", present)

    def to_json(self) -> list:
        return [
            {"name": name, "x": float(x), "y": float(y), "present": bool(p)}
            for name, (x, y), p in zip(JOINT_NAMES, self.points, self.present)
        ]

    @classmethod
    def from_json(cls, entries: list) -> "KeypointSet":
        if len(entries) != NUM_JOINTS:
            raise ShapeError(f"expected {NUM_JOINTS} keypoints, got {len(entries)}")
        for e, name in zip(entries, JOINT_NAMES):
            if e.get("name", name) != name:
                raise ContractError(f"keypoint {e.get('name')!r} out of canonical order (expected {name!r})")
        pts = [(float(e["x"]), float(e["y"])) for e in entries]
        return cls(np.array(pts), np.array([bool(e.get("present", True)) for e in entries]))

    def permuted(self, order) -> "KeypointSet":
        order = list(order)
        return KeypointSet(self.points[order], self.present[order])


def encode_heatmap(keypoints: KeypointSet, width: int, height: int,
                   radius: float = DEFAULT_RADIUS) -> ImageTensor:
    """Channel c is 1 at pixel centers within ``radius`` (inclusive) of keypoint c."""
    if radius < 0:
        raise ContractError(f"radius must be >= 0, got {radius}")
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    heat = np.zeros((height, width, NUM_JOINTS))
    r2 = float(radius) ** 2
    for c in range(NUM_JOINTS):
        if not keypoints.present[c]:
            continue
        x, y = keypoints.points[c]
        heat[:, :, c] = ((xs - x) ** 2 + (ys - y) ** 2) <= r2
    return ImageTensor(heat, "heatmap")


def keypoints_from_scene(scene: ArticulatedScene, view: str = "a") -> KeypointSet:
    """Rendered keypoints of view "a" (source) or "b" (target); off-frame joints are absent."""
    if view == "a":
        pose, camera = scene.pose_a, scene.camera_a
    elif view == "b":
        pose, camera = scene.pose_b, scene.camera_b
    else:
        raise ContractError(f"view must be 'a' or 'b', got {view!r}")
    uv, inside = project_keypoints(scene.skeleton, pose, camera)
    return KeypointSet(uv, inside)
