import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from panorpca.core import (Decomposition, FrameStack, ShapeError, TVWeights,
                           as_image, build_difference_operator, project_mask,
                           stack_frames, to_matrix, to_volume, tv_value)


def naive_tv(vol, mask_vol):
    m, n, p = vol.shape
    M = mask_vol.astype(bool)
    total = 0.0
    for i in range(m):
        for j in range(n):
            for k in range(p):
                if i + 1 < m and M[i, j, k] and M[i + 1, j, k]:
                    total += abs(vol[i + 1, j, k] - vol[i, j, k])
                if j + 1 < n and M[i, j, k] and M[i, j + 1, k]:
                    total += abs(vol[i, j + 1, k] - vol[i, j, k])
                if k + 1 < p and M[i, j, k] and M[i, j, k + 1]:
                    total += abs(vol[i, j, k + 1] - vol[i, j, k])
    return total


# -- images -----------------------------------------------------------------

def test_as_image_scales_integer_types():
    assert as_image(np.array([[0, 255]], np.uint8)).tolist() == [[0.0, 1.0]]
    assert as_image(np.array([[65535]], np.uint16))[0, 0] == 1.0


def test_as_image_rgb_luminance():
    rgb = np.zeros((1, 1, 3))
    rgb[0, 0] = [1.0, 0.5, 0.25]
    assert as_image(rgb)[0, 0] == pytest.approx(0.299 + 0.587 * 0.5 + 0.114 * 0.25)


def test_as_image_rejects_bad_input():
    with pytest.raises(ValueError):
        as_image(np.array([[np.nan]]))
    with pytest.raises(ShapeError):
        as_image(np.zeros((0, 3)))
    with pytest.raises(ShapeError):
        as_image(np.zeros(5))


# -- projection ---------------------------------------------------------------

def test_project_mask_identity_and_zero(rng):
    X = rng.standard_normal((6, 3))
    np.testing.assert_array_equal(project_mask(X, np.ones((6, 3))), X)
    np.testing.assert_array_equal(project_mask(X, np.zeros((6, 3))), 0)


def test_project_mask_shape_mismatch():
    with pytest.raises(ShapeError):
        project_mask(np.zeros((2, 2)), np.zeros((2, 3)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 4), elements=st.floats(-1e3, 1e3)),
       arrays(np.bool_, (5, 4)))
def test_project_mask_idempotent_nonexpansive(X, M):
    P = project_mask(X, M)
    np.testing.assert_array_equal(project_mask(P, M), P)
    assert np.linalg.norm(P) <= np.linalg.norm(X) + 1e-12
    np.testing.assert_array_equal(P[M], X[M])
    assert np.all(P[~M] == 0)


# -- stacking ---------------------------------------------------------------

def test_stack_column_major():
    st_ = stack_frames([np.array([[1.0, 2.0], [3.0, 4.0]])])
    assert st_.data[:, 0].tolist() == [1.0, 3.0, 2.0, 4.0]
    assert st_.mask.all()


def test_identical_frames_rank_one(rng):
    f = rng.random((4, 5))
    st_ = stack_frames([f] * 6)
    assert np.linalg.matrix_rank(st_.data) == 1


def test_masked_pixel_zeroed():
    f = np.full((2, 2), 0.7)
    mk = np.ones((2, 2), np.uint8)
    mk[1, 1] = 0
    st_ = stack_frames([f], [mk])
    assert st_.data[1 + 2 * 1, 0] == 0.0
    assert st_.mask[3, 0] == 0


def test_stack_errors():
    with pytest.raises(ValueError):
        stack_frames([])
    with pytest.raises(ShapeError):
        stack_frames([np.zeros((2, 2)), np.zeros((2, 3))])
    with pytest.raises(ValueError):
        stack_frames([np.zeros((2, 2))], [np.full((2, 2), 0.5)])


def test_framestack_views_round_trip(rng):
    frames = [rng.random((3, 4)) for _ in range(2)]
    st_ = stack_frames(frames)
    np.testing.assert_array_equal(st_.volume()[:, :, 1], frames[1])
    np.testing.assert_array_equal(st_.frames()[0], frames[0])
    np.testing.assert_array_equal(to_matrix(to_volume(st_.data, st_.shape3)), st_.data)


def test_framestack_rejects_unmasked_data():
    with pytest.raises(ValueError):
        FrameStack(1, 2, np.ones((2, 1)), np.array([[1], [0]], np.uint8))


def test_decomposition_shapes():
    with pytest.raises(ShapeError):
        Decomposition(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 3)))


# -- TV -------------------------------------------------------------------

def test_tv_constant_is_zero(rng):
    w = TVWeights.from_mask(rng.random((3, 4, 2)) < 0.6)
    assert tv_value(np.full((12, 2), 0.3), w) == 0.0


def test_tv_two_pixels():
    w = TVWeights.full(2, 1, 1)
    assert tv_value(np.array([[0.0], [1.0]]), w) == 1.0


def test_tv_matches_naive_loop(rng):
    for _ in range(10):
        M = rng.random((3, 3, 2)) < 0.7
        vol = rng.standard_normal((3, 3, 2))
        w = TVWeights.from_mask(M)
        assert tv_value(to_matrix(vol), w) == pytest.approx(naive_tv(vol, M), abs=1e-12)


def test_weights_formula(rng):
    M = rng.random((4, 5, 3)) < 0.5
    w = TVWeights.from_mask(M)
    for i in range(3):
        for j in range(5):
            for k in range(3):
                assert w.wx[i, j, k] == (M[i, j, k] and M[i + 1, j, k])
    assert w.wz.shape == (4, 5, 2)
    assert np.array_equal(w.wz, (M[:, :, 1:] & M[:, :, :-1]).astype(float))


def test_tv_zero_iff_piecewise_constant_on_observed_regions():
    # two observed blobs separated by an unobserved column
    M = np.zeros((3, 5, 2), bool)
    M[:, :2, :] = True
    M[:, 3:, :] = True
    vol = np.zeros((3, 5, 2))
    vol[:, :2, :] = 0.2
    vol[:, 3:, :] = 0.9
    vol[:, 2, :] = 5.0  # unobserved, ignored
    w = TVWeights.from_mask(M)
    assert tv_value(to_matrix(vol), w) == 0.0
    vol[0, 0, 1] = 0.3
    assert tv_value(to_matrix(vol), w) > 0


def test_tv_monotone_in_mask(rng):
    vol = rng.standard_normal((4, 4, 3))
    M = rng.random((4, 4, 3)) < 0.8
    base = tv_value(to_matrix(vol), TVWeights.from_mask(M))
    for idx in zip(*np.nonzero(M)):
        M2 = M.copy()
        M2[idx] = False
        assert tv_value(to_matrix(vol), TVWeights.from_mask(M2)) <= base + 1e-12


def test_difference_operator_small():
    C, W = build_difference_operator(2, 1, 1)
    assert C.toarray().tolist() == [[-1.0, 1.0]]
    assert W.toarray().tolist() == [[1.0]]


def test_difference_operator_rows_and_constants(rng):
    C, _ = build_difference_operator(3, 4, 2)
    A = C.toarray()
    assert np.all((A == 1).sum(axis=1) == 1)
    assert np.all((A == -1).sum(axis=1) == 1)
    np.testing.assert_array_equal(C @ np.full(24, 3.0), 0)


def test_difference_operator_matches_tv(rng):
    for _ in range(5):
        M = rng.random((4, 3, 3)) < 0.6
        w = TVWeights.from_mask(M)
        X = rng.standard_normal((12, 3))
        C, W = build_difference_operator(4, 3, 3, w)
        op = np.abs(W @ C @ X.ravel(order="F")).sum()
        assert abs(op - tv_value(X, w)) <= 1e-12 * max(1.0, op)
