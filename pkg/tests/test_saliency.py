import numpy as np
import pytest
from hypothesis import given, strategies as st

from svretarget.saliency import Box, DisparityMap, box_union, dilate, fuse, left_to_right_disparity
from svretarget.tensor import ContractError, DimensionError


def test_zero_saliency_gives_zero_mask():
    out = fuse(np.zeros((6, 8)), DisparityMap.dense(np.ones((6, 8))), [Box(0, 0, 8, 6)])
    assert not out.any()


def test_left_half_box():
    h, w = 6, 8
    out = fuse(np.ones((h, w)), DisparityMap.dense(np.full((h, w), 4.0)), [Box(0, 0, w / 2, h)])
    assert np.array_equal(out[:, :4], np.ones((h, 4)))
    assert not out[:, 4:].any()


def test_two_pixel_disparity_normalization():
    sal = np.zeros((1, 4))
    sal[0, 1:3] = 1
    disp = DisparityMap.dense(np.array([[5.0, 2.0, 9.0, 5.0]]))
    disp.valid[0, [0, 3]] = False
    disp = DisparityMap(disp.values, disp.valid)
    out = fuse(sal, disp, [Box(1, 0, 2, 1)])
    assert np.allclose(out[0], [0, 0.5, 1.0, 0])


def test_low_confidence_boxes_are_ignored():
    out = fuse(np.ones((4, 4)), DisparityMap.dense(np.ones((4, 4))), [Box(0, 0, 4, 4, conf=0.1)])
    assert not out.any()


def test_extent_mismatch():
    with pytest.raises(DimensionError):
        fuse(np.ones((4, 4)), DisparityMap.dense(np.ones((4, 5))), [])


def test_box_must_intersect_frame():
    with pytest.raises(ContractError):
        box_union([Box(50, 50, 3, 3)], (10, 10))


def test_dilate_examples():
    assert not dilate(np.zeros((20, 20))).any()
    assert np.array_equal(dilate(np.ones((20, 20))), np.ones((20, 20), np.float32))
    point = np.zeros((33, 33))
    point[16, 16] = 1
    out = dilate(point)
    assert (out[11:22, 11:22] > 0).all()
    with pytest.raises(ContractError):
        dilate(point, kernel=10)


masks = st.integers(0, 2 ** 31 - 1).map(lambda s: np.random.default_rng(s).random((12, 14)))


@given(masks, st.integers(0, 11), st.integers(0, 13), st.floats(0.01, 1))
def test_fuse_is_monotone_in_saliency(sal, y, x, bump):
    disp = DisparityMap.dense(np.random.default_rng(1).uniform(1, 9, (12, 14)))
    boxes = [Box(2, 1, 9, 8), Box(0, 6, 5, 6, conf=0.3)]
    raised = sal.copy()
    raised[y, x] += bump
    # compare before peak normalization: scale both by the same peak
    a = fuse(sal, disp, boxes)
    b = fuse(raised, disp, boxes)
    pa, pb = _peak(sal, disp, boxes), _peak(raised, disp, boxes)
    assert b[y, x] * pb >= a[y, x] * pa - 1e-6


def _peak(sal, disp, boxes):
    from svretarget.saliency import disparity_weight
    raw = sal * (0.5 + 0.5 * disparity_weight(disp)) * box_union(boxes, sal.shape)
    return raw.max() or 1.0


@given(masks)
def test_fuse_stays_inside_boxes(sal):
    disp = DisparityMap.dense(np.random.default_rng(2).uniform(0, 5, (12, 14)))
    boxes = [Box(3.5, 2, 4, 5), Box(9, 7, 3, 3, conf=0.2)]
    out = fuse(sal, disp, boxes)
    assert ((out > 0) <= box_union(boxes, out.shape)).all()
    assert out.min() >= 0 and out.max() <= 1


@given(masks, st.floats(0.5, 5))
def test_dilate_never_shrinks_support(m, sigma):
    m = np.where(m > 0.8, m, 0)
    out = dilate(m, sigma)
    assert (out[m > 0] > 0).all()
    assert out.min() >= 0 and out.max() <= 1


def test_left_to_right_moves_by_disparity():
    d = DisparityMap.dense(np.full((2, 10), 3.0))
    r = left_to_right_disparity(d)
    assert r.valid[:, :7].all() and not r.valid[:, 7:].any()
    assert np.all(r.values[:, :7] == 3.0)
