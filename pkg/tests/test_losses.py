import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from flowforge import losses as L
from flowforge.errors import ContractError, ShapeError
from flowforge.flow import FlowField, VisibilityMap, VISIBLE
from flowforge.tensor import ImageTensor

import oracles


def const_flow(h, w, v):
    return FlowField.dense(np.broadcast_to(np.asarray(v, float), (h, w, 2)).copy())


def test_epe_examples(rng):
    vis = VisibilityMap.filled(6, 6, VISIBLE)
    f = FlowField.dense(rng.normal(size=(6, 6, 2)))
    assert L.epe(f, f, vis) == 0.0
    assert L.epe(const_flow(6, 6, (0, 0)), const_flow(6, 6, (3, 4)), vis) == pytest.approx(5.0, abs=1e-9)


def test_epe_matches_oracle(rng):
    for _ in range(5):
        lab = rng.integers(0, 3, size=(9, 7)).astype(np.uint8)
        a = FlowField.dense(rng.normal(size=(9, 7, 2)))
        b = FlowField.dense(rng.normal(size=(9, 7, 2)))
        assert abs(L.epe(a, b, VisibilityMap(lab)) - oracles.epe_scalar(a.vectors, b.vectors, lab)) < 1e-6


def test_epe_empty_mask_and_unmasked(rng):
    a = FlowField.dense(rng.normal(size=(4, 4, 2)))
    assert L.epe(a, FlowField.zeros(4, 4), VisibilityMap.filled(4, 4, 0)) == 0.0
    un = L.epe(a, FlowField.zeros(4, 4), masked=False)
    assert un == pytest.approx(np.sqrt((a.vectors ** 2).sum(-1)).mean())
    with pytest.raises(ShapeError):
        L.epe(a, FlowField.zeros(4, 5), VisibilityMap.filled(4, 4, 1))


def test_visibility_ce_examples(rng):
    lab = rng.integers(0, 3, size=(5, 6)).astype(np.uint8)
    assert L.visibility_ce(np.zeros((5, 6, 3)), VisibilityMap(lab)) == pytest.approx(math.log(3), abs=1e-9)
    confident = np.zeros((5, 6, 3))
    np.put_along_axis(confident, lab[..., None].astype(int), 100.0, axis=-1)
    assert L.visibility_ce(confident, VisibilityMap(lab)) < 1e-6
    logits = rng.normal(scale=3, size=(5, 6, 3))
    assert abs(L.visibility_ce(logits, VisibilityMap(lab)) - oracles.ce_scalar(logits, lab)) < 1e-6
    with pytest.raises(ShapeError):
        L.visibility_ce(np.zeros((5, 6, 2)), VisibilityMap(lab))


def test_adversarial_examples(rng):
    half = np.full((4, 4, 1), 0.5)
    assert L.adversarial_loss(half, half) == pytest.approx(-1.3863, abs=1e-4)
    assert L.adversarial_loss(np.full((4, 4, 1), 0.9), np.full((4, 4, 1), 0.1)) == pytest.approx(-0.2107, abs=1e-4)
    r, f = rng.uniform(0.01, 0.99, (3, 5, 1)), rng.uniform(0.01, 0.99, (3, 5, 1))
    ref = sum(math.log(v) for v in r.ravel()) / r.size + sum(math.log(1 - v) for v in f.ravel()) / f.size
    assert abs(L.adversarial_loss(r, f) - ref) < 1e-6


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.2])
def test_probmap_rejects_boundary(bad):
    with pytest.raises(ContractError):
        L.ProbMap(np.full((2, 2, 1), bad))


def test_l1_examples(rng):
    a = rng.random((4, 5, 3))
    assert L.l1_loss(a, a) == 0.0
    assert L.l1_loss(a + 0.25, a) == pytest.approx(0.25, abs=1e-12)
    b = rng.random((4, 5, 3))
    ref = sum(abs(x - y) for x, y in zip(a.ravel(), b.ravel())) / a.size
    assert abs(L.l1_loss(ImageTensor(a), ImageTensor(b)) - ref) < 1e-6
    with pytest.raises(ShapeError):
        L.l1_loss(a, b[..., :2])


def test_perceptual_examples(rng):
    fa = [rng.random((8, 8, 4)), rng.random((4, 4, 8))]
    assert L.perceptual_loss(fa, fa) == 0.0
    assert L.perceptual_loss([fa[0]], [fa[0] + 2]) == pytest.approx(4.0, abs=1e-12)
    fb = [rng.random((8, 8, 4)), rng.random((4, 4, 8))]
    ref = sum(sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size for a, b in zip(fa, fb))
    assert abs(L.perceptual_loss(fa, fb) - ref) < 1e-6
    with pytest.raises(ShapeError):
        L.perceptual_loss(fa, fb[:1])
    with pytest.raises(ShapeError):
        L.perceptual_loss(fa, [fb[1], fb[0]])


def test_total_loss_examples():
    assert L.total_loss(1, 2, 3, L.LossWeights(1, 1, 1)) == 6
    assert L.total_loss(1, 2, 3, L.LossWeights(0, 0, 0)) == 0
    assert L.total_loss(-1.3863, 0.25, 4, L.LossWeights(0.5, 10, 2)) == pytest.approx(9.80685, abs=1e-9)
    with pytest.raises(ContractError):
        L.LossWeights(-1, 0, 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 5), st.floats(0, 5), st.floats(0, 5), st.floats(0, 3))
def test_total_loss_linear_in_weights(adv, l1, perc, w1, w2, k):
    base = L.total_loss(adv, l1, perc, L.LossWeights(w1, w2, 1.0))
    scaled = L.total_loss(adv, l1, perc, L.LossWeights(w1 * k, w2 * k, k))
    assert scaled == pytest.approx(k * base, rel=1e-9, abs=1e-9)


def test_ssim_examples(rng):
    x = rng.random((32, 32, 3))
    assert abs(L.ssim(x, x) - 1.0) < 1e-9
    closed = (2 * 0.2 * 0.6 + 1e-4) / (0.2 ** 2 + 0.6 ** 2 + 1e-4)
    assert abs(L.ssim(np.full((16, 16, 1), 0.2), np.full((16, 16, 1), 0.6)) - closed) < 1e-4
    with pytest.raises(ShapeError):
        L.ssim(np.zeros((10, 20, 1)), np.zeros((10, 20, 1)))


def test_ssim_matches_direct_convolution(rng):
    for _ in range(3):
        a, b = rng.random((24, 20, 3)), rng.random((24, 20, 3))
        assert abs(L.ssim(a, b) - oracles.ssim_reference(a, b)) < 1e-6


unit_images = arrays(np.float64, (12, 13, 1), elements=st.floats(0, 1))


@settings(max_examples=40, deadline=None)
@given(unit_images, unit_images)
def test_ssim_symmetric_and_bounded(a, b):
    s = L.ssim(a, b)
    assert abs(s - L.ssim(b, a)) < 1e-9
    assert s <= 1 + 1e-12


small = arrays(np.float64, (4, 4, 2), elements=st.floats(-3, 3))


@settings(max_examples=40, deadline=None)
@given(small, small)
def test_losses_nonnegative_and_zero_iff_equal(a, b):
    for fn in (L.l1_loss, lambda x, y: L.perceptual_loss([x], [y])):
        v = fn(a, b)
        assert v >= 0
        assert (v == 0) == np.array_equal(a, b)
    fa, fb = FlowField.dense(a), FlowField.dense(b)
    e = L.epe(fa, fb, VisibilityMap.filled(4, 4, VISIBLE))
    assert e >= 0 and (e == 0) == np.array_equal(a, b)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 3, 3), elements=st.floats(-5, 5)),
       arrays(np.uint8, (3, 3), elements=st.integers(0, 2)))
def test_ce_nonnegative_and_minimized_by_truth(logits, lab):
    vis = VisibilityMap(lab)
    v = L.visibility_ce(logits, vis)
    assert v >= 0
    better = logits.copy()
    np.put_along_axis(better, lab[..., None].astype(int), logits.max() + 10, axis=-1)
    assert L.visibility_ce(better, vis) <= v + 1e-12
