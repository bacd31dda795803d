"""Z-buffer triangle rasterizer producing a per-pixel G-buffer.

Pixel (i, j) has its center at (x, y) = (j, i). Edge functions are evaluated
in float64 with each edge's endpoints taken in a canonical (lexicographic)
order, so the two triangles sharing an edge compute bitwise-identical values
of opposite sign. Together with the top-left fill rule this keeps shared edges
free of gaps and double coverage, while barycentrics stay consistent with the
unrounded vertex positions.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, ContractError
from .scene import BodyMesh, Camera
from .tensor import ImageTensor

BAND_ROWS = 32
MAX_CANDIDATES = 1 << 21
NONE = -1


@dataclass(frozen=True, eq=False)
class GBuffer:
    width: int
    height: int
    face_id: np.ndarray  # (H, W) int64, NONE where uncovered
    bary: np.ndarray  # (H, W, 3), NaN where uncovered
    depth: np.ndarray  # (H, W), NaN where uncovered
    face_count: int

    @property
    def covered(self) -> np.ndarray:
        return self.face_id != NONE

    def _check(self, i, j):
        if self.face_id[i, j] == NONE:
            raise ContractError(f"pixel ({i}, {j}) is not covered")

    def face_at(self, i: int, j: int) -> int:
        self._check(i, j)
        return int(self.face_id[i, j])

    def barycentric_at(self, i: int, j: int) -> np.ndarray:
        self._check(i, j)
        return self.bary[i, j].copy()

    def depth_at(self, i: int, j: int) -> float:
        self._check(i, j)
        return float(self.depth[i, j])

    def same_as(self, other: "GBuffer") -> bool:
        return (self.width == other.width and self.height == other.height
                and np.array_equal(self.face_id, other.face_id)
                and np.array_equal(self.bary, other.bary, equal_nan=True)
                and np.array_equal(self.depth, other.depth, equal_nan=True))


def _prepare(screen: np.ndarray, faces: np.ndarray, width: int, height: int):
    """Canonical edges, depths and on-screen pixel bounding boxes of the rasterizable faces."""
    tri = screen[faces]  # (F, 3, 3)
    ok = np.all(np.isfinite(tri), axis=(1, 2))
    xy = np.where(ok[:, None, None], tri[:, :, :2], 0.0)
    lo, hi = xy.min(axis=1), xy.max(axis=1)
    ok &= (hi[:, 0] >= 0) & (lo[:, 0] <= width - 1) & (hi[:, 1] >= 0) & (lo[:, 1] <= height - 1)
    area = ((xy[:, 2, 0] - xy[:, 0, 0]) * (xy[:, 1, 1] - xy[:, 0, 1])
            - (xy[:, 2, 1] - xy[:, 0, 1]) * (xy[:, 1, 0] - xy[:, 0, 0]))
    ok &= area != 0
    ids = np.nonzero(ok)[0]
    xy, lo, hi = xy[ids], lo[ids], hi[ids]
    sign = np.sign(area[ids])
    x0 = np.maximum(np.ceil(lo[:, 0]), 0).astype(np.int64)
    x1 = np.minimum(np.floor(hi[:, 0]), width - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(lo[:, 1]), 0).astype(np.int64)
    y1 = np.minimum(np.floor(hi[:, 1]), height - 1).astype(np.int64)
    # edge k runs between the two vertices other than k
    a = xy[:, [1, 2, 0]]
    b = xy[:, [2, 0, 1]]
    nx = sign[:, None] * (b[:, :, 1] - a[:, :, 1])
    ny = -sign[:, None] * (b[:, :, 0] - a[:, :, 0])
    top_left = (nx > 0) | ((nx == 0) & (ny > 0))
    swap = (a[:, :, 0] > b[:, :, 0]) | ((a[:, :, 0] == b[:, :, 0]) & (a[:, :, 1] > b[:, :, 1]))
    ca = np.where(swap[..., None], b, a)
    cb = np.where(swap[..., None], a, b)
    orient = sign[:, None] * np.where(swap, -1.0, 1.0)
    z = tri[ids, :, 2]
    return ids, ca, cb, orient, top_left, z, x0, x1, y0, y1


def _band(prep, row0: int, row1: int, width: int):
    ids, ca, cb, orient, top_left, z, x0, x1, y0, y1 = prep
    by0 = np.maximum(y0, row0)
    by1 = np.minimum(y1, row1 - 1)
    nx = np.maximum(x1 - x0 + 1, 0)
    ny = np.maximum(by1 - by0 + 1, 0)
    counts = nx * ny
    sel = np.nonzero(counts > 0)[0]
    npix = (row1 - row0) * width
    best_face = np.full(npix, NONE, dtype=np.int64)
    best_bary = np.full((npix, 3), np.nan)
    best_depth = np.full(npix, np.inf)
    if len(sel) == 0:
        return best_face, best_bary, best_depth
    csum = np.cumsum(counts[sel])
    start = 0
    while start < len(sel):
        base = csum[start - 1] if start else 0
        stop = int(np.searchsorted(csum, base + MAX_CANDIDATES, side="right"))
        stop = max(stop, start + 1)
        chunk = sel[start:stop]
        cnt = counts[chunk]
        f = np.repeat(chunk, cnt)
        offs = np.repeat(np.cumsum(cnt) - cnt, cnt)
        local = np.arange(len(f), dtype=np.int64) - offs
        w_ = nx[f]
        px = x0[f] + local % w_
        py = by0[f] + local // w_
        sx = px.astype(np.float64)[:, None]
        sy = py.astype(np.float64)[:, None]
        a, b = ca[f], cb[f]
        w = ((sx - a[:, :, 0]) * (b[:, :, 1] - a[:, :, 1])
             - (sy - a[:, :, 1]) * (b[:, :, 0] - a[:, :, 0])) * orient[f]
        inside = np.all((w > 0) | ((w == 0) & top_left[f]), axis=1)
        f, px, py, w = f[inside], px[inside], py[inside], w[inside]
        bary = w / w.sum(axis=1, keepdims=True)
        depth = np.einsum("nk,nk->n", bary, z[f])
        pix = (py - row0) * width + px
        face = ids[f]
        # merge with winners from earlier chunks, then keep min depth, lower face id on ties
        prev = np.nonzero(best_face != NONE)[0]
        pix = np.concatenate([pix, prev])
        face = np.concatenate([face, best_face[prev]])
        depth = np.concatenate([depth, best_depth[prev]])
        bary = np.concatenate([bary, best_bary[prev]])
        order = np.lexsort((face, depth, pix))
        pix_sorted = pix[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        win = order[first]
        best_face[pix[win]] = face[win]
        best_depth[pix[win]] = depth[win]
        best_bary[pix[win]] = bary[win]
        start = stop
    return best_face, best_bary, best_depth


def rasterize_screen(screen: np.ndarray, faces: np.ndarray, width: int, height: int,
                     workers: int = 1) -> GBuffer:
    """Rasterize triangles given per-vertex screen (x, y, depth) coordinates."""
    screen = np.asarray(screen, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    face_id = np.full((height, width), NONE, dtype=np.int64)
    bary = np.full((height, width, 3), np.nan)
    depth = np.full((height, width), np.nan)
    if len(faces):
        # work on index-sorted vertex triples so faces listing the same vertices in a
        # different order produce bitwise-identical barycentrics and depths
        order = np.argsort(faces, axis=1, kind="stable")
        prep = _prepare(screen, np.take_along_axis(faces, order, axis=1), width, height)
        bands = [(r, min(r + BAND_ROWS, height)) for r in range(0, height, BAND_ROWS)]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda b: _band(prep, b[0], b[1], width), bands))
        else:
            results = [_band(prep, r0, r1, width) for r0, r1 in bands]
        for (r0, r1), (bf, bb, bd) in zip(bands, results):
            bf = bf.reshape(r1 - r0, width)
            cov = bf != NONE
            face_id[r0:r1] = bf
            bary[r0:r1][cov] = bb.reshape(r1 - r0, width, 3)[cov]
            depth[r0:r1][cov] = bd.reshape(r1 - r0, width)[cov]
        cov = face_id != NONE
        back = np.empty_like(order)
        np.put_along_axis(back, order, np.arange(3)[None, :].repeat(len(order), 0), axis=1)
        bary[cov] = np.take_along_axis(bary[cov], back[face_id[cov]], axis=1)
    for arr in (face_id, bary, depth):
        arr.setflags(write=False)
    return GBuffer(width, height, face_id, bary, depth, len(faces))


def rasterize(mesh: BodyMesh, camera: Camera, workers: int = 1) -> GBuffer:
    screen = camera.project(mesh.vertices)
    return rasterize_screen(screen, mesh.faces, int(camera.width), int(camera.height), workers)


def render_color(gbuffer: GBuffer, mesh: BodyMesh, background=(0.0, 0.0, 0.0)) -> ImageTensor:
    if gbuffer.face_count != mesh.face_count:
        raise ConsistencyError(
            f"gbuffer was rasterized from {gbuffer.face_count} faces, mesh has {mesh.face_count}")
    img = np.empty((gbuffer.height, gbuffer.width, 3))
    img[:] = np.asarray(background, dtype=np.float64)
    cov = gbuffer.covered
    fid = gbuffer.face_id[cov]
    vc = mesh.colors[mesh.faces[fid]]  # (N, 3 verts, 3 rgb)
    b = gbuffer.bary[cov]
    # offsets from the first vertex keep constant faces exact
    img[cov] = vc[:, 0] + b[:, 1:2] * (vc[:, 1] - vc[:, 0]) + b[:, 2:3] * (vc[:, 2] - vc[:, 0])
    return ImageTensor(img, "image")


def face_visibility(gbuffer: GBuffer, face_count: int) -> np.ndarray:
    fid = gbuffer.face_id[gbuffer.covered]
    if fid.size and face_count < int(fid.max()) + 1:
        raise ConsistencyError(f"face_count {face_count} too small for face id {int(fid.max())}")
    return np.bincount(fid, minlength=face_count)[:face_count] > 0
