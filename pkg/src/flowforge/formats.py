"""On-disk formats: Middlebury .flo, TEN1 tensors, PNG images and visibility maps, keypoint JSON."""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, ShapeError
from .flow import FlowField, VisibilityMap
from .pose import KeypointSet
from .tensor import ImageTensor

FLO_MAGIC = b"PIEH"
TEN_MAGIC = b"TEN1"
# background black, visible green, invisible red
VIS_PALETTE = [0, 0, 0, 0, 255, 0, 255, 0, 0]


def _atomic_write(path, payload: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def write_flo(path, flow: FlowField):
    h, w = flow.height, flow.width
    data = np.ascontiguousarray(flow.vectors, dtype="<f4")
    _atomic_write(path, FLO_MAGIC + struct.pack("<ii", w, h) + data.tobytes())


def read_flo(path, vis: VisibilityMap | None = None) -> FlowField:
    """Read a .flo file; the defined-flag comes from ``vis`` when given, else every pixel."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != FLO_MAGIC:
        raise FormatError(f"{path}: not a .flo file")
    w, h = struct.unpack("<ii", raw[4:12])
    if w < 0 or h < 0 or len(raw) != 12 + 8 * w * h:
        raise FormatError(f"{path}: size mismatch for {w}x{h} flow")
    vec = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2).astype(np.float32)
    if vis is None:
        defined = np.ones((h, w), dtype=bool)
    else:
        if (vis.height, vis.width) != (h, w):
            raise ShapeError(f"visibility {vis.height}x{vis.width} does not match flow {h}x{w}")
        defined = vis.foreground
    return FlowField(vec, defined)


def write_ten(path, tensor: ImageTensor):
    h, w, c = tensor.shape
    data = np.ascontiguousarray(tensor.data, dtype="<f4")
    _atomic_write(path, TEN_MAGIC + struct.pack("<III", h, w, c) + data.tobytes())


def read_ten(path, role: str = "feature") -> ImageTensor:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != TEN_MAGIC:
        raise FormatError(f"{path}: not a TEN1 tensor")
    h, w, c = struct.unpack("<III", raw[4:16])
    if len(raw) != 16 + 4 * h * w * c:
        raise FormatError(f"{path}: size mismatch for {h}x{w}x{c} tensor")
    data = np.frombuffer(raw, dtype="<f4", offset=16).reshape(h, w, c).astype(np.float32)
    return ImageTensor(data, role)


def to_uint8(values: np.ndarray) -> np.ndarray:
    """[0, 1] floats to bytes, rounding half away from zero."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def _save_png(path, img: Image.Image):
    tmp = Path(str(path) + ".tmp")
    img.save(tmp, format="PNG")
    os.replace(tmp, path)


def write_png(path, tensor: ImageTensor):
    if tensor.channels not in (1, 3):
        raise ShapeError(f"PNG export needs 1 or 3 channels, got {tensor.channels}")
    b = to_uint8(tensor.data)
    img = Image.fromarray(b[..., 0], "L") if tensor.channels == 1 else Image.fromarray(b, "RGB")
    _save_png(path, img)


def read_png(path, role: str = "image") -> ImageTensor:
    with Image.open(path) as img:
        if img.mode in ("L", "I;16", "I"):
            arr = np.asarray(img.convert("L"))[..., None]
        else:
            arr = np.asarray(img.convert("RGB"))
    return ImageTensor(arr.astype(np.float64) / 255.0, role)


def write_vis_png(path, vis: VisibilityMap):
    _save_png(path, Image.fromarray(np.ascontiguousarray(vis.labels), "L"))


def write_vis_preview(path, vis: VisibilityMap):
    img = Image.fromarray(np.ascontiguousarray(vis.labels), "P")
    img.putpalette(VIS_PALETTE)
    _save_png(path, img)


def read_vis_png(path) -> VisibilityMap:
    with Image.open(path) as img:
        if img.mode not in ("L", "P"):
            raise FormatError(f"{path}: visibility PNG must be 8-bit grayscale, got mode {img.mode}")
        labels = np.array(img)
    return VisibilityMap(labels)


def write_keypoints(path, **sets: KeypointSet):
    payload = {name: ks.to_json() for name, ks in sets.items()}
    _atomic_write(path, json.dumps(payload, indent=1).encode())


def read_keypoints(path, key: str | None = None) -> KeypointSet:
    """Read a keypoint JSON: either a bare 18-entry array or an object of named sets."""
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        if key is None:
            if len(doc) != 1:
                raise FormatError(f"{path}: holds sets {sorted(doc)}, choose one")
            key = next(iter(doc))
        doc = doc[key]
    return KeypointSet.from_json(doc)
