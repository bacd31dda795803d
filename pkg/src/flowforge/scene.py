"""Procedural articulated body: skeleton, pose sampling, capsule mesh and weak-perspective camera.

Coordinates are body units with x to the image right, y down (towards the feet) and
z away from the camera, so smaller z is closer.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError

JOINT_NAMES = (
    "nose", "neck",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
    "r_eye", "l_eye", "r_ear", "l_ear",
)
NUM_JOINTS = len(JOINT_NAMES)
MIN_DETAIL = 3


def mirror_name(name: str) -> str:
    if name.startswith("l_"):
        return "r_" + name[2:]
    if name.startswith("r_"):
        return "l_" + name[2:]
    return name


MIRROR_INDEX = tuple(JOINT_NAMES.index(mirror_name(n)) for n in JOINT_NAMES)

# name, parent, rest offset from parent, radius of the bone ending here, rotation limit
_DEFAULT_JOINTS = [
    ("neck", None, (0.0, 0.0, 0.0), 0.0, (0.15, 0.8, 0.15)),
    ("nose", "neck", (0.0, -0.26, -0.06), 0.11, (0.25, 0.4, 0.15)),
    ("r_shoulder", "neck", (-0.19, 0.03, 0.0), 0.065, (0.3, 0.3, 0.3)),
    ("r_elbow", "r_shoulder", (-0.06, 0.29, 0.0), 0.05, (0.7, 0.6, 1.1)),
    ("r_wrist", "r_elbow", (-0.02, 0.26, 0.0), 0.042, (0.0, 0.0, 0.0)),
    ("l_shoulder", "neck", (0.19, 0.03, 0.0), 0.065, (0.3, 0.3, 0.3)),
    ("l_elbow", "l_shoulder", (0.06, 0.29, 0.0), 0.05, (0.7, 0.6, 1.1)),
    ("l_wrist", "l_elbow", (0.02, 0.26, 0.0), 0.042, (0.0, 0.0, 0.0)),
    ("r_hip", "neck", (-0.1, 0.56, 0.0), 0.11, (0.6, 0.3, 0.35)),
    ("r_knee", "r_hip", (-0.01, 0.42, 0.0), 0.075, (0.9, 0.1, 0.15)),
    ("r_ankle", "r_knee", (0.0, 0.4, 0.0), 0.06, (0.0, 0.0, 0.0)),
    ("l_hip", "neck", (0.1, 0.56, 0.0), 0.11, (0.6, 0.3, 0.35)),
    ("l_knee", "l_hip", (0.01, 0.42, 0.0), 0.075, (0.9, 0.1, 0.15)),
    ("l_ankle", "l_knee", (0.0, 0.4, 0.0), 0.06, (0.0, 0.0, 0.0)),
    ("r_eye", "nose", (-0.035, -0.04, 0.03), 0.02, (0.0, 0.0, 0.0)),
    ("l_eye", "nose", (0.035, -0.04, 0.03), 0.02, (0.0, 0.0, 0.0)),
    ("r_ear", "r_eye", (-0.05, 0.02, 0.06), 0.025, (0.0, 0.0, 0.0)),
    ("l_ear", "l_eye", (0.05, 0.02, 0.06), 0.025, (0.0, 0.0, 0.0)),
]


def default_config() -> dict:
    """A fresh copy of the built-in scene configuration."""
    return {
        "joints": [
            {"name": n, "parent": p, "offset": list(o), "radius": r, "limit": list(lim)}
            for n, p, o, r, lim in _DEFAULT_JOINTS
        ],
        "translation_limit": [0.15, 0.08, 0.3],
        "detail": 20,
        "width": 256,
        "height": 256,
        "camera": {"scale": 100.0, "tx": 128.0, "ty": 76.0},
        "camera_jitter": 0.0,
        "background": [0.0, 0.0, 0.0],
        "occlusion": "face",
        "same_pose": False,
    }


def merge_config(overrides: dict | None) -> dict:
    cfg = default_config()
    if overrides:
        for key, value in overrides.items():
            if key == "camera" and isinstance(value, dict):
                cfg["camera"].update(value)
            else:
                cfg[key] = copy.deepcopy(value)
    return cfg


@dataclass(frozen=True, eq=False)
class Skeleton:
    """18 joints in canonical keypoint order with a rooted parent tree."""

    names: tuple
    parents: tuple  # -1 marks the root
    offsets: np.ndarray  # (18, 3) rest offset from parent; root offset is its rest position
    radii: np.ndarray  # (18,) radius of the bone ending at each joint
    limits: np.ndarray  # (18, 3) per-component axis-angle bound, radians
    translation_limit: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def root(self) -> int:
        return self.parents.index(-1)

    @property
    def bones(self) -> list[int]:
        """Child joint index of every bone, in joint order."""
        return [j for j, p in enumerate(self.parents) if p >= 0]

    def topological_order(self) -> list[int]:
        order, seen = [], set()
        for j in range(len(self.names)):
            chain = []
            k = j
            while k >= 0 and k not in seen:
                chain.append(k)
                k = self.parents[k]
            for k in reversed(chain):
                seen.add(k)
                order.append(k)
        return order

    def to_json(self) -> dict:
        return {
            "joints": [
                {
                    "name": n,
                    "parent": None if p < 0 else self.names[p],
                    "offset": [float(v) for v in self.offsets[i]],
                    "radius": float(self.radii[i]),
                    "limit": [float(v) for v in self.limits[i]],
                }
                for i, (n, p) in enumerate(zip(self.names, self.parents))
            ],
            "translation_limit": [float(v) for v in self.translation_limit],
        }

    def __eq__(self, other):
        if not isinstance(other, Skeleton):
            return NotImplemented
        return (
            self.names == other.names
            and self.parents == other.parents
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.radii, other.radii)
            and np.array_equal(self.limits, other.limits)
            and np.array_equal(self.translation_limit, other.translation_limit)
        )


def build_skeleton(config: dict) -> Skeleton:
    joints = config.get("joints")
    if not isinstance(joints, list) or len(joints) != NUM_JOINTS:
        n = len(joints) if isinstance(joints, list) else None
        raise ConfigError(f"skeleton needs exactly {NUM_JOINTS} joints, got {n}")
    by_name = {}
    for joint in joints:
        name = joint.get("name")
        if name in by_name:
            raise ConfigError(f"duplicate joint {name!r}")
        by_name[name] = joint
    if set(by_name) != set(JOINT_NAMES):
        missing = sorted(set(JOINT_NAMES) - set(by_name))
        extra = sorted(set(by_name) - set(JOINT_NAMES))
        raise ConfigError(f"joint names mismatch: missing {missing}, unexpected {extra}")

    parents = []
    for name in JOINT_NAMES:
        parent = by_name[name].get("parent")
        if parent is None:
            parents.append(-1)
        elif parent in by_name and parent != name:
            parents.append(JOINT_NAMES.index(parent))
        else:
            raise ConfigError(f"joint {name!r} has invalid parent {parent!r}")
    if parents.count(-1) != 1:
        raise ConfigError(f"skeleton needs exactly one root, found {parents.count(-1)}")
    for start in range(NUM_JOINTS):
        k, steps = start, 0
        while parents[k] >= 0:
            k = parents[k]
            steps += 1
            if steps > NUM_JOINTS:
                raise ConfigError(f"parent cycle through joint {JOINT_NAMES[start]!r}")

    try:
        offsets = np.array([by_name[n]["offset"] for n in JOINT_NAMES], dtype=np.float64)
        radii = np.array([by_name[n].get("radius", 0.0) for n in JOINT_NAMES], dtype=np.float64)
        limits = np.array([by_name[n].get("limit", [0, 0, 0]) for n in JOINT_NAMES], dtype=np.float64)
        tlim = np.array(config.get("translation_limit", [0.0, 0.0, 0.0]), dtype=np.float64)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"malformed joint record: {exc}") from exc
    if offsets.shape != (NUM_JOINTS, 3) or limits.shape != (NUM_JOINTS, 3) or tlim.shape != (3,):
        raise ConfigError("offsets, limits and translation_limit must be 3-vectors")
    if np.any(limits < 0) or np.any(tlim < 0) or not np.all(np.isfinite(offsets)):
        raise ConfigError("limits must be non-negative and offsets finite")
    for j, p in enumerate(parents):
        if p >= 0 and radii[j] <= 0:
            raise ConfigError(f"bone ending at {JOINT_NAMES[j]!r} needs a positive radius")

    mirror = np.array([-1.0, 1.0, 1.0])
    for j, m in enumerate(MIRROR_INDEX):
        if not np.allclose(offsets[j] * mirror, offsets[m], atol=1e-12, rtol=0):
            raise ConfigError(f"offsets of {JOINT_NAMES[j]!r}/{JOINT_NAMES[m]!r} are not mirror-symmetric")
        if not np.array_equal(radii[j], radii[m]) or not np.array_equal(limits[j], limits[m]):
            raise ConfigError(f"radius/limit of {JOINT_NAMES[j]!r} differ from its mirror")

    for arr in (offsets, radii, limits, tlim):
        arr.setflags(write=False)
    return Skeleton(JOINT_NAMES, tuple(parents), offsets, radii, limits, tlim)


@dataclass(frozen=True, eq=False)
class PoseParams:
    rotations: np.ndarray  # (18, 3) axis-angle, radians
    translation: np.ndarray  # (3,)
    seed: int | None = None

    def to_json(self) -> dict:
        return {
            "rotations": [[float(v) for v in r] for r in self.rotations],
            "translation": [float(v) for v in self.translation],
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PoseParams":
        return cls(np.array(d["rotations"], dtype=np.float64),
                   np.array(d["translation"], dtype=np.float64), d.get("seed"))

    def mirrored(self) -> "PoseParams":
        """Left/right swapped pose whose body is the x-reflection of this one."""
        rot = self.rotations[list(MIRROR_INDEX)] * np.array([1.0, -1.0, -1.0])
        trans = self.translation * np.array([-1.0, 1.0, 1.0])
        return PoseParams(rot, trans, self.seed)

    def __eq__(self, other):
        if not isinstance(other, PoseParams):
            return NotImplemented
        return (np.array_equal(self.rotations, other.rotations)
                and np.array_equal(self.translation, other.translation)
                and self.seed == other.seed)


def rest_pose(skeleton: Skeleton) -> PoseParams:
    return PoseParams(np.zeros((len(skeleton.names), 3)), np.zeros(3), None)


def sample_pose(skeleton: Skeleton, seed: int) -> PoseParams:
    rng = np.random.default_rng(seed)
    rot = rng.uniform(-1.0, 1.0, size=skeleton.limits.shape) * skeleton.limits + 0.0
    trans = rng.uniform(-1.0, 1.0, size=3) * skeleton.translation_limit + 0.0
    return PoseParams(rot, trans, int(seed))


def axis_angle_matrix(v: np.ndarray) -> np.ndarray:
    """Rodrigues rotation matrix for an axis-angle vector."""
    theta = float(np.sqrt(v @ v))
    if theta == 0.0:
        return np.eye(3)
    k = v / theta
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def forward_kinematics(skeleton: Skeleton, pose: PoseParams):
    """Global joint rotations (18, 3, 3) and positions (18, 3)."""
    n = len(skeleton.names)
    G = np.zeros((n, 3, 3))
    P = np.zeros((n, 3))
    for j in skeleton.topological_order():
        p = skeleton.parents[j]
        local = axis_angle_matrix(pose.rotations[j])
        if p < 0:
            G[j] = local
            P[j] = skeleton.offsets[j] + pose.translation
        else:
            G[j] = G[p] @ local
            P[j] = P[p] + G[p] @ skeleton.offsets[j]
    return G, P


def cap_rings(detail: int) -> int:
    return max(1, detail // 4)


def capsule_rings(detail: int) -> int:
    """Number of vertex rings along one capsule (excluding the two poles)."""
    return 2 * cap_rings(detail) + detail - 1


def _capsule_profile(length: float, radius: float, detail: int):
    """(axial position, ring radius) for each ring, from the start pole to the end pole."""
    m = cap_rings(detail)
    prof = []
    for j in range(1, m + 1):
        phi = 0.5 * np.pi * j / m
        prof.append((-radius * np.cos(phi), radius * np.sin(phi)))
    for k in range(1, detail):
        prof.append((length * k / detail, radius))
    for j in range(m, 0, -1):
        phi = 0.5 * np.pi * j / m
        prof.append((length + radius * np.cos(phi), radius * np.sin(phi)))
    return prof


def _ring_frame(d: np.ndarray):
    ref = np.array([0.0, 0.0, 1.0])
    if abs(d @ ref) > 0.99:
        ref = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return e1, e2


@dataclass(frozen=True, eq=False)
class BodyMesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int64
    colors: np.ndarray  # (V, 3) in [0, 1]
    joint_ids: np.ndarray  # (V,) child joint of the owning bone

    @property
    def face_count(self) -> int:
        return len(self.faces)


# per-bone base colors, cycled
_PALETTE = np.array([
    [0.85, 0.35, 0.30], [0.30, 0.65, 0.85], [0.40, 0.80, 0.35], [0.90, 0.75, 0.30],
    [0.70, 0.40, 0.85], [0.35, 0.80, 0.75], [0.90, 0.55, 0.70], [0.60, 0.60, 0.30],
])
CHECKER_CONTRAST = 0.35


def checker_period(detail: int) -> int:
    """Vertices per checker cell, so the pattern's surface scale does not shrink with detail."""
    return max(1, detail // 5)


def _rest_template(skeleton: Skeleton, detail: int):
    """Rest-pose vertices, faces, colors and owning joint per vertex; depends only on (skeleton, detail)."""
    _, rest_pos = forward_kinematics(skeleton, rest_pose(skeleton))
    n = detail
    angles = 0.5 * np.pi + 2.0 * np.pi * np.arange(n) / n
    cos_a, sin_a = np.cos(angles), np.sin(angles)
    verts, faces, colors, owner, frame_joint = [], [], [], [], []
    base = 0
    for b, j in enumerate(skeleton.bones):
        p = skeleton.parents[j]
        a, c = rest_pos[p], rest_pos[j]
        axis = c - a
        length = float(np.linalg.norm(axis))
        d = axis / length if length > 0 else np.array([0.0, 1.0, 0.0])
        e1, e2 = _ring_frame(d)
        r = float(skeleton.radii[j])
        prof = _capsule_profile(length, r, detail)
        R = len(prof)
        bv = [a - r * d]
        for t, rho in prof:
            ring = a + t * d + rho * (np.outer(cos_a, e1) + np.outer(sin_a, e2))
            bv.extend(ring)
        bv.append(a + (length + r) * d)
        bv = np.array(bv)
        # 0 = start pole, ring i vertex k = 1 + i*n + k, end pole = 1 + R*n
        end_pole = 1 + R * n
        bf = []
        for k in range(n):
            k1 = (k + 1) % n
            bf.append((0, 1 + k1, 1 + k))
        for i in range(R - 1):
            for k in range(n):
                k1 = (k + 1) % n
                v00, v01 = 1 + i * n + k, 1 + i * n + k1
                v10, v11 = 1 + (i + 1) * n + k, 1 + (i + 1) * n + k1
                bf.append((v00, v01, v11))
                bf.append((v00, v11, v10))
        for k in range(n):
            k1 = (k + 1) % n
            bf.append((end_pole, 1 + (R - 1) * n + k, 1 + (R - 1) * n + k1))
        period = checker_period(detail)
        base_color = _PALETTE[b % len(_PALETTE)]
        bc = np.empty((len(bv), 3))
        bc[0] = bc[-1] = base_color
        for i in range(R):
            for k in range(n):
                bright = 1.0 if (i // period + k // period) % 2 == 0 else 1.0 - CHECKER_CONTRAST
                bc[1 + i * n + k] = base_color * bright
        verts.append(bv)
        faces.append(np.array(bf, dtype=np.int64) + base)
        colors.append(bc)
        owner.append(np.full(len(bv), j, dtype=np.int64))
        frame_joint.append(np.full(len(bv), p, dtype=np.int64))
        base += len(bv)
    return (np.concatenate(verts), np.concatenate(faces), np.concatenate(colors),
            np.concatenate(owner), np.concatenate(frame_joint), rest_pos)


def mesh_face_count(skeleton: Skeleton, detail: int) -> int:
    return len(skeleton.bones) * 2 * detail * capsule_rings(detail)


def pose_mesh(skeleton: Skeleton, pose: PoseParams, detail: int) -> BodyMesh:
    """Rigidly skinned capsule body; each bone follows its parent joint's frame."""
    if int(detail) != detail or detail < MIN_DETAIL:
        raise ConfigError(f"tessellation detail must be an integer >= {MIN_DETAIL}, got {detail}")
    detail = int(detail)
    rest_v, faces, colors, owner, frame_joint, rest_pos = _rest_template(skeleton, detail)
    G, P = forward_kinematics(skeleton, pose)
    local = rest_v - rest_pos[frame_joint]
    verts = P[frame_joint] + np.einsum("vij,vj->vi", G[frame_joint], local)
    for arr in (verts, faces, colors, owner):
        arr.setflags(write=False)
    return BodyMesh(verts, faces, colors, owner)


@dataclass(frozen=True)
class Camera:
    """Weak perspective: u = scale * x + tx, v = scale * y + ty, depth = scale * z."""

    scale: float
    tx: float
    ty: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.scale > 0) or not np.isfinite(self.scale):
            raise ConfigError(f"camera scale must be positive, got {self.scale}")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ConfigError("camera width and height must be >= 1")

    def project(self, points: np.ndarray) -> np.ndarray:
        """(N, 3) body points -> (N, 3) of (u, v, depth)."""
        points = np.asarray(points, dtype=np.float64)
        out = np.empty(points.shape[:-1] + (3,))
        out[..., 0] = self.scale * points[..., 0] + self.tx
        out[..., 1] = self.scale * points[..., 1] + self.ty
        out[..., 2] = self.scale * points[..., 2]
        return out

    def in_frame(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv)
        return ((uv[..., 0] >= 0) & (uv[..., 0] < self.width)
                & (uv[..., 1] >= 0) & (uv[..., 1] < self.height))

    def translated(self, dx: float, dy: float) -> "Camera":
        return Camera(self.scale, self.tx + dx, self.ty + dy, self.width, self.height)

    def to_json(self) -> dict:
        return {"scale": float(self.scale), "tx": float(self.tx), "ty": float(self.ty),
                "width": int(self.width), "height": int(self.height)}

    @classmethod
    def from_json(cls, d: dict) -> "Camera":
        return cls(float(d["scale"]), float(d["tx"]), float(d["ty"]), int(d["width"]), int(d["height"]))


def project_keypoints(skeleton: Skeleton, pose: PoseParams, camera: Camera):
    """2D pixel positions (18, 2) of the posed joints and their in-frame flags."""
    _, P = forward_kinematics(skeleton, pose)
    uv = camera.project(P)[:, :2]
    return uv, camera.in_frame(uv)


@dataclass(frozen=True, eq=False)
class ArticulatedScene:
    skeleton: Skeleton
    pose_a: PoseParams
    pose_b: PoseParams
    camera_a: Camera
    camera_b: Camera
    detail: int
    seed: int | None = None

    def mesh_a(self) -> BodyMesh:
        return pose_mesh(self.skeleton, self.pose_a, self.detail)

    def mesh_b(self) -> BodyMesh:
        return pose_mesh(self.skeleton, self.pose_b, self.detail)

    def to_json(self) -> dict:
        return {
            "skeleton": self.skeleton.to_json(),
            "pose_a": self.pose_a.to_json(),
            "pose_b": self.pose_b.to_json(),
            "camera_a": self.camera_a.to_json(),
            "camera_b": self.camera_b.to_json(),
            "detail": self.detail,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ArticulatedScene":
        try:
            return cls(
                build_skeleton(d["skeleton"]),
                PoseParams.from_json(d["pose_a"]),
                PoseParams.from_json(d["pose_b"]),
                Camera.from_json(d["camera_a"]),
                Camera.from_json(d["camera_b"]),
                int(d["detail"]),
                d.get("seed"),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed scene document: {exc!r}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "ArticulatedScene":
        return cls.from_json(json.loads(text))


def make_scene(config: dict | None, seed: int) -> ArticulatedScene:
    """Scene pair for one sample; both poses are drawn from ``seed``."""
    cfg = merge_config(config)
    skeleton = build_skeleton(cfg)
    ss = np.random.SeedSequence(seed)
    seed_a, seed_b, seed_cam = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    pose_a = sample_pose(skeleton, seed_a)
    pose_b = pose_a if cfg.get("same_pose") else sample_pose(skeleton, seed_b)
    cam = cfg["camera"]
    w, h = int(cfg["width"]), int(cfg["height"])
    camera_a = Camera(float(cam["scale"]), float(cam["tx"]), float(cam["ty"]), w, h)
    camera_b = camera_a
    jitter = float(cfg.get("camera_jitter", 0.0))
    if jitter > 0:
        dx, dy = np.random.default_rng(seed_cam).uniform(-jitter, jitter, size=2)
        camera_b = camera_a.translated(float(dx), float(dy))
    return ArticulatedScene(skeleton, pose_a, pose_b, camera_a, camera_b, int(cfg["detail"]), int(seed))
