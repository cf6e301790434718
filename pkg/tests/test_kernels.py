import os
import subprocess
import sys

import numpy as np
import pytest

from panorpca import _fallback, kernels
from panorpca.core import TVWeights

ck = pytest.importorskip("panorpca._ckernels")


@pytest.fixture
def weights(rng):
    return TVWeights.from_mask(rng.random((5, 6, 4)) < 0.7)


def test_weighted_diff_equivalent(rng, weights):
    vol = rng.standard_normal((5, 6, 4))
    for a, b in zip(ck.weighted_diff(vol, weights.wx, weights.wy, weights.wz),
                    _fallback.weighted_diff(vol, weights.wx, weights.wy, weights.wz)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_adjoint_equivalent_and_adjoint(rng, weights):
    w = weights
    d = [rng.standard_normal(x.shape) for x in (w.wx, w.wy, w.wz)]
    a = ck.weighted_diff_adjoint(*d, w.wx, w.wy, w.wz)
    b = _fallback.weighted_diff_adjoint(*d, w.wx, w.wy, w.wz)
    np.testing.assert_allclose(a, b, atol=1e-13)
    vol = rng.standard_normal((5, 6, 4))
    fwd = ck.weighted_diff(vol, w.wx, w.wy, w.wz)
    lhs = sum(float(np.sum(f * g)) for f, g in zip(fwd, d))
    assert lhs == pytest.approx(float(np.sum(vol * a)), rel=1e-12)


def test_normal_apply_equivalent(rng, weights):
    w = weights
    vol = np.asfortranarray(rng.standard_normal((5, 6, 4)))
    a = ck.normal_apply(vol, w.wx, w.wy, w.wz, 0.7)
    b = _fallback.normal_apply(vol, w.wx, w.wy, w.wz, 0.7)
    np.testing.assert_allclose(a, b, atol=1e-13)
    # also accepts C-ordered input
    np.testing.assert_allclose(ck.normal_apply(np.ascontiguousarray(vol), w.wx, w.wy, w.wz, 0.7),
                               a, atol=0)


def test_warp_equivalent(rng):
    src = rng.random((12, 15))
    for _ in range(5):
        T = np.eye(3) + 0.05 * rng.standard_normal((3, 3))
        T[2, :2] *= 0.01
        a, ma = ck.warp_bilinear(src, T, 16, 20, -2.0, -1.0)
        b, mb = _fallback.warp_bilinear(src, T, 16, 20, -2.0, -1.0)
        np.testing.assert_array_equal(ma, mb)
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_warp_identity_exact(rng):
    src = rng.random((7, 9))
    for mod in (ck, _fallback):
        out, mask = mod.warp_bilinear(src, np.eye(3), 7, 9, 0.0, 0.0)
        np.testing.assert_array_equal(out, src)
        assert mask.all()


def test_ncc_equivalent(rng):
    a = rng.random((30, 32))
    b = np.roll(a, 2, axis=1) + 0.01 * rng.random((30, 32))
    pts = np.array([[10, 10], [15, 20], [6, 6], [23, 25]])
    sa = ck.ncc_scores(a, b, pts, 3, 5)
    sb = _fallback.ncc_scores(a, b, pts, 3, 5)
    assert np.array_equal(np.isinf(sa), np.isinf(sb))
    fin = np.isfinite(sa)
    np.testing.assert_allclose(sa[fin], sb[fin], atol=1e-10)
    assert np.nanmax(sa[fin]) <= 1 + 1e-12


def test_backend_selected_at_import():
    assert kernels.BACKEND == "cython"
    env = dict(os.environ, PANORPCA_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c",
                          "from panorpca import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
