import numpy as np
import pytest

from panorpca.optshrink import (d_transform, optshrink, optshrink_weights,
                                split_spectrum, svt, thin_svd)


def truncated_svd(Z, r):
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    return (U[:, :r] * s[:r]) @ Vt[:r]


def random_low_rank(rng, m, n, r):
    return rng.standard_normal((m, r)) @ rng.standard_normal((r, n))


@pytest.mark.parametrize("shape", [(10, 6), (100, 40), (40, 100), (30, 30)])
@pytest.mark.parametrize("r", [1, 2, 3])
def test_noiseless_exactness(rng, shape, r):
    Z = random_low_rank(rng, *shape, r)
    np.testing.assert_allclose(optshrink(Z, r), truncated_svd(Z, r), atol=1e-8)


def test_zero_matrix():
    np.testing.assert_array_equal(optshrink(np.zeros((6, 4)), 1), 0)


def test_rank_argument_validated(rng):
    Z = rng.standard_normal((5, 3))
    with pytest.raises(ValueError):
        optshrink(Z, 3)
    with pytest.raises(ValueError):
        optshrink(Z, 0)
    with pytest.raises(ValueError):
        optshrink(np.full((3, 3), np.inf), 1)


def test_d_transform_derivative(rng):
    trailing = np.sort(rng.random(20))[::-1]
    z, h = 3.0, 1e-6
    D, dD = d_transform(z, trailing, 50, 21, 1)
    Dp, _ = d_transform(z + h, trailing, 50, 21, 1)
    Dm, _ = d_transform(z - h, trailing, 50, 21, 1)
    assert dD == pytest.approx((Dp - Dm) / (2 * h), rel=1e-6)
    # no noise: D(z) = 1/z^2, so the weight is z
    D0, dD0 = d_transform(z, np.zeros(20), 50, 21, 1)
    assert D0 == pytest.approx(1 / z ** 2) and -2 * D0 / dD0 == pytest.approx(z)


def test_rank_bound_and_dominance(rng):
    for r in (1, 2, 3):
        Z = random_low_rank(rng, 40, 20, r) + 0.3 * rng.standard_normal((40, 20))
        split = split_spectrum(Z, r)
        w = optshrink_weights(split, Z.shape)
        assert np.all(w >= 0) and np.all(w <= split.sigma)
        assert np.linalg.matrix_rank(optshrink(Z, r), tol=1e-9) <= r


def test_annihilation_at_bulk_edge():
    Z = np.diag([2.0, 2.0, 1.0, 0.5])
    np.testing.assert_array_equal(optshrink(Z, 1), 0)


def test_spiked_model_shrinks(rng):
    n, theta = 200, 3.0
    u = rng.standard_normal(n)
    u /= np.linalg.norm(u)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    Z = theta * np.outer(u, v) + rng.standard_normal((n, n)) / np.sqrt(n)
    split = split_spectrum(Z, 1)
    w = optshrink_weights(split, Z.shape)
    assert 0 < w[0] < split.sigma[0]
    # asymptotically the optimal weight is (theta^2 - 1)/theta * cos angles,
    # which lands well below sigma_1 ~ theta + 1/theta
    assert abs(w[0] - (theta ** 2 - 1) / theta * (1 - 1 / theta ** 2)) < 0.3


def test_orthogonal_invariance(rng):
    Z = random_low_rank(rng, 12, 8, 2) + 0.2 * rng.standard_normal((12, 8))
    Q1, _ = np.linalg.qr(rng.standard_normal((12, 12)))
    Q2, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    np.testing.assert_allclose(optshrink(Q1 @ Z @ Q2.T, 2), Q1 @ optshrink(Z, 2) @ Q2.T,
                               atol=1e-8)


@pytest.mark.parametrize("shape", [(80, 5), (5, 80), (200, 20), (30, 30)])
def test_gram_matches_direct(rng, shape):
    Z = rng.standard_normal(shape)
    Ug, sg, Vg = thin_svd(Z, "gram")
    Ud, sd, Vd = thin_svd(Z, "direct")
    np.testing.assert_allclose(sg, sd, atol=1e-8)
    np.testing.assert_allclose((Ug * sg) @ Vg, Z, atol=1e-8)
    # singular vectors agree up to sign
    signs = np.sign(np.sum(Ug * Ud, axis=0))
    np.testing.assert_allclose(Ug * signs, Ud, atol=1e-8)
    r = 2
    np.testing.assert_allclose(optshrink(Z, r, "gram"), optshrink(Z, r, "direct"), atol=1e-8)


def test_thin_svd_unknown_method(rng):
    with pytest.raises(ValueError):
        thin_svd(rng.standard_normal((4, 3)), "qr")


# -- SVT --------------------------------------------------------------------

def test_svt_trivial_cases(rng):
    Z = rng.standard_normal((6, 4))
    np.testing.assert_allclose(svt(Z, 0.0), Z, atol=1e-10)
    s1 = np.linalg.norm(Z, 2)
    np.testing.assert_array_equal(svt(Z, s1), 0)
    with pytest.raises(ValueError):
        svt(Z, -1.0)


def test_svt_diag_example():
    Z = np.zeros((4, 4))
    Z[0, 0], Z[1, 1] = 5.0, 3.0
    expected = np.zeros((4, 4))
    expected[0, 0], expected[1, 1] = 4.0, 2.0
    np.testing.assert_allclose(svt(Z, 1.0), expected, atol=1e-12)


def test_svt_subgradient_condition(rng):
    lam = 0.8
    for _ in range(10):
        Z = rng.standard_normal((5, 5))
        X = svt(Z, lam)
        U, s, Vt = np.linalg.svd(X)
        k = int((s > 1e-10).sum())
        Uk, Vk = U[:, :k], Vt[:k].T
        # optimality: Z - X = lam * (Uk Vk^T + W), Uk^T W = 0, W Vk = 0, ||W|| <= 1
        W = (Z - X) / lam - Uk @ Vk.T
        assert np.abs(Uk.T @ W).max() < 1e-9
        assert np.abs(W @ Vk).max() < 1e-9
        assert np.linalg.norm(W, 2) <= 1 + 1e-9


def test_svt_beats_perturbations(rng):
    lam = 0.5
    Z = rng.standard_normal((5, 5))
    X = svt(Z, lam)

    def obj(Y):
        return 0.5 * np.sum((Z - Y) ** 2) + lam * np.linalg.svd(Y, compute_uv=False).sum()

    best = obj(X)
    for _ in range(200):
        assert obj(X + 0.05 * rng.standard_normal((5, 5))) >= best - 1e-12
