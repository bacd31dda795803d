import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowforge import raster, scene as sc
from flowforge.errors import ConsistencyError, ContractError

import oracles


def tri_mesh(points, faces, colors=None):
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if colors is None:
        colors = np.full((n, 3), 0.5)
    return sc.BodyMesh(points, np.asarray(faces, dtype=np.int64), np.asarray(colors, dtype=np.float64),
                       np.zeros(n, dtype=np.int64))


UNIT_CAM = sc.Camera(1.0, 0.0, 0.0, 32, 32)


def test_axis_aligned_triangle_matches_point_in_triangle():
    # no pixel center lies on an edge, so the fill rule plays no part
    screen = np.array([[9.6, 9.6, 1.0], [20.9, 9.6, 1.0], [9.6, 20.9, 1.0]])
    g = raster.rasterize_screen(screen, [[0, 1, 2]], 32, 32)
    expected = oracles.brute_force_raster(screen, [[0, 1, 2]], 32, 32)
    assert np.array_equal(g.face_id, expected)
    assert g.covered.sum() == sum(1 for i in range(10, 21) for j in range(10, 21) if i + j <= 30)


def test_pixel_centers_on_hypotenuse_follow_fill_rule():
    # hypotenuse passes through centers (10, 20) ... (20, 10); it is a bottom-right edge
    screen = np.array([[9.5, 9.5, 1.0], [20.5, 9.5, 1.0], [9.5, 20.5, 1.0]])
    g = raster.rasterize_screen(screen, [[0, 1, 2]], 32, 32)
    ys, xs = np.nonzero(g.covered)
    assert np.all(xs + ys < 30)
    assert g.covered.sum() == 55


def test_nearer_triangle_wins():
    near = [[2, 2, 1.0], [30, 2, 1.0], [2, 30, 1.0]]
    far = [[2, 2, 2.0], [30, 2, 2.0], [2, 30, 2.0]]
    for order in ([far, near], [near, far]):
        screen = np.array(order[0] + order[1])
        g = raster.rasterize_screen(screen, [[0, 1, 2], [3, 4, 5]], 32, 32)
        near_id = 0 if order[0] is near else 1
        assert set(np.unique(g.face_id[g.covered])) == {near_id}
        assert np.allclose(g.depth[g.covered], 1.0)


def test_equal_depth_lower_id_wins():
    tri = [[2, 2, 1.0], [30, 2, 1.0], [2, 30, 1.0]]
    g = raster.rasterize_screen(np.array(tri + tri), [[0, 1, 2], [3, 4, 5]], 32, 32)
    assert set(np.unique(g.face_id[g.covered])) == {0}


def test_degenerate_triangle_draws_nothing():
    screen = np.array([[1, 1, 0.0], [10, 10, 0.0], [20, 20, 0.0]])
    g = raster.rasterize_screen(screen, [[0, 1, 2]], 32, 32)
    assert not g.covered.any()


def test_empty_mesh():
    g = raster.rasterize_screen(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), 8, 8)
    assert not g.covered.any()


def test_shared_edge_is_gap_and_overlap_free():
    # a square split along its diagonal through many pixel centers
    screen = np.array([[4, 4, 0.0], [24, 4, 0.0], [24, 24, 0.0], [4, 24, 0.0]])
    faces = [[0, 1, 2], [0, 2, 3]]
    g = raster.rasterize_screen(screen, faces, 32, 32)
    # pixels on the closed square's interior+top/left edges, none on bottom/right
    expected = np.zeros((32, 32), dtype=bool)
    expected[4:24, 4:24] = True
    assert np.array_equal(g.covered, expected)


def test_accessors_guard_uncovered_pixels():
    g = raster.rasterize_screen(np.array([[0, 0, 0.0], [5, 0, 0.0], [0, 5, 0.0]]), [[0, 1, 2]], 16, 16)
    with pytest.raises(ContractError):
        g.face_at(15, 15)
    with pytest.raises(ContractError):
        g.barycentric_at(15, 15)
    assert g.face_at(1, 1) == 0


def random_screen(rng, nfaces=24, size=32):
    pts = rng.uniform(-6, size + 6, size=(3 * nfaces, 2))
    z = rng.uniform(0, 10, size=(3 * nfaces, 1))
    return np.hstack([pts, z]), np.arange(3 * nfaces).reshape(nfaces, 3)


def test_gbuffer_invariants(rng):
    for _ in range(10):
        screen, faces = random_screen(rng)
        g = raster.rasterize_screen(screen, faces, 32, 32)
        b = g.bary[g.covered]
        assert b.min() >= -1e-6
        assert np.abs(b.sum(axis=1) - 1).max() < 1e-6
        z = screen[faces[g.face_id[g.covered]], 2]
        assert np.abs((b * z).sum(axis=1) - g.depth[g.covered]).max() < 1e-5


def test_thread_count_independence(rng):
    m = sc.make_scene(None, 2).mesh_b()
    cam = sc.make_scene(None, 2).camera_b
    g1 = raster.rasterize(m, cam, workers=1)
    g4 = raster.rasterize(m, cam, workers=4)
    assert g1.same_as(g4)


def test_face_order_independence(rng):
    screen, faces = random_screen(rng, 30)
    g = raster.rasterize_screen(screen, faces, 32, 32)
    perm = rng.permutation(len(faces))
    g2 = raster.rasterize_screen(screen, faces[perm], 32, 32)
    # map permuted ids back to originals
    remapped = np.where(g2.covered, perm[np.maximum(g2.face_id, 0)], -1)
    agree = (remapped == g.face_id).mean()
    assert agree > 0.995


def test_render_constant_face_color():
    m = tri_mesh([[2, 2, 0], [30, 2, 0], [2, 30, 0]], [[0, 1, 2]], [[1, 0, 0]] * 3)
    g = raster.rasterize(m, UNIT_CAM)
    img = raster.render_color(g, m, background=(0, 0, 1)).data
    assert np.array_equal(img[g.covered], np.tile([1.0, 0.0, 0.0], (g.covered.sum(), 1)))
    assert np.array_equal(img[~g.covered], np.tile([0.0, 0.0, 1.0], ((~g.covered).sum(), 1)))


def test_render_barycentric_identity():
    # the top-left vertex sits on pixel center (4, 4) and is included by the fill rule
    m = tri_mesh([[4, 4, 0], [20, 4, 0], [4, 28, 0]], [[0, 1, 2]], [[1, 1, 1], [0, 0, 0], [0, 0, 0]])
    g = raster.rasterize(m, UNIT_CAM)
    assert g.covered[4, 4]
    assert np.allclose(g.bary[4, 4], [1, 0, 0])
    assert np.array_equal(raster.render_color(g, m).data[4, 4], [1.0, 1.0, 1.0])


def test_render_matches_scalar_reinterpolation(rng):
    scene = sc.make_scene({"width": 48, "height": 48, "camera": {"scale": 20.0, "tx": 24.0, "ty": 12.0},
                           "detail": 5}, 3)
    m = scene.mesh_a()
    g = raster.rasterize(m, scene.camera_a)
    img = raster.render_color(g, m, (0.1, 0.2, 0.3)).data
    ref = oracles.reinterpolate_colors(g.face_id, g.bary, m.faces, m.colors, (0.1, 0.2, 0.3))
    assert np.abs(img - ref).max() < 1e-12


def test_render_face_count_mismatch():
    m = tri_mesh([[2, 2, 0], [30, 2, 0], [2, 30, 0]], [[0, 1, 2]])
    other = tri_mesh([[2, 2, 0], [30, 2, 0], [2, 30, 0]], [[0, 1, 2], [0, 2, 1]])
    g = raster.rasterize(m, UNIT_CAM)
    with pytest.raises(ConsistencyError):
        raster.render_color(g, other)


def test_face_visibility():
    front = [[2, 2, 1.0], [30, 2, 1.0], [2, 30, 1.0]]
    back = [[4, 4, 5.0], [12, 4, 5.0], [4, 12, 5.0]]
    offscreen = [[100, 100, 0.0], [120, 100, 0.0], [100, 120, 0.0]]
    screen = np.array(front + back + offscreen)
    g = raster.rasterize_screen(screen, [[0, 1, 2], [3, 4, 5], [6, 7, 8]], 32, 32)
    assert raster.face_visibility(g, 3).tolist() == [True, False, False]
    with pytest.raises(ConsistencyError):
        raster.face_visibility(g, 0)


def test_oracle_agreement_small(rng):
    for _ in range(5):
        screen, faces = random_screen(rng)
        g = raster.rasterize_screen(screen, faces, 32, 32)
        ref = oracles.brute_force_raster(screen, faces, 32, 32)
        cov = g.covered | (ref >= 0)
        assert (g.face_id[cov] == ref[cov]).mean() >= 0.995


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_shared_edges_watertight(seed):
    # jittered grid split into triangles: every interior pixel is owned by exactly one face
    r = np.random.default_rng(seed)
    n = 5
    gx, gy = np.meshgrid(np.linspace(2, 29, n), np.linspace(2, 29, n))
    jitter = r.uniform(-2.4, 2.4, size=(n, n, 2))
    jitter[[0, -1], :] = 0
    jitter[:, [0, -1]] = 0
    pts = np.stack([gx, gy], -1) + jitter
    screen = np.concatenate([pts.reshape(-1, 2), np.zeros((n * n, 1))], axis=1)
    faces = []
    for i in range(n - 1):
        for j in range(n - 1):
            a, b, c, d = i * n + j, i * n + j + 1, (i + 1) * n + j, (i + 1) * n + j + 1
            faces += [[a, b, d], [a, d, c]] if r.random() < 0.5 else [[a, b, c], [b, d, c]]
    hits = np.zeros((32, 32), dtype=int)
    for f in faces:
        hits += raster.rasterize_screen(screen, [f], 32, 32).covered
    interior = np.zeros((32, 32), dtype=bool)
    interior[3:29, 3:29] = True
    assert hits.max() <= 1
    assert np.all(hits[interior] == 1)


def test_permuted_duplicate_face_ties_to_lower_id(rng):
    screen = np.column_stack([rng.uniform(0, 32, (3, 2)), rng.uniform(0, 5, 3)])
    for perm in ([0, 1, 2], [2, 0, 1], [1, 0, 2], [2, 1, 0]):
        g = raster.rasterize_screen(screen, [[1, 2, 0], perm], 32, 32)
        assert set(np.unique(g.face_id[g.covered])) <= {0}
        single = raster.rasterize_screen(screen, [[1, 2, 0]], 32, 32)
        assert np.array_equal(g.bary, single.bary, equal_nan=True)
