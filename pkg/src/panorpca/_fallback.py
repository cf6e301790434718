"""Pure NumPy versions of the hot kernels.

Every function here has a twin with the same signature in the compiled
``_ckernels`` extension. Volumes are float64 arrays of shape (m, n, p);
difference weights have shapes (m-1, n, p), (m, n-1, p) and (m, n, p-1).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

EDGE_EPS = 1e-6


def weighted_diff(vol, wx, wy, wz):
    """Forward first differences along each axis, multiplied by the weights."""
    dx = wx * np.diff(vol, axis=0)
    dy = wy * np.diff(vol, axis=1)
    dz = wz * np.diff(vol, axis=2)
    return dx, dy, dz


def weighted_diff_adjoint(dx, dy, dz, wx, wy, wz):
    """Adjoint of :func:`weighted_diff`, i.e. ``C^T W d``."""
    m, n, p = dx.shape[0] + 1, dy.shape[1] + 1, dz.shape[2] + 1
    out = np.zeros((m, n, p), order="F")
    gx = wx * dx
    gy = wy * dy
    gz = wz * dz
    out[:-1, :, :] -= gx
    out[1:, :, :] += gx
    out[:, :-1, :] -= gy
    out[:, 1:, :] += gy
    out[:, :, :-1] -= gz
    out[:, :, 1:] += gz
    return out


def normal_apply(vol, wx, wy, wz, rho):
    """Return ``vol + rho * C^T W C vol`` for binary weights W."""
    dx, dy, dz = weighted_diff(vol, wx, wy, wz)
    out = weighted_diff_adjoint(dx, dy, dz, wx, wy, wz)
    out *= rho
    out += vol
    return out


def warp_bilinear(src, T, height, width, ox, oy):
    """Inverse-map a canvas onto ``src`` with bilinear interpolation.

    Canvas pixel (row i, col j) sits at anchor coordinates (j + ox, i + oy);
    ``T`` maps anchor coordinates to source coordinates (column-vector
    convention). Returns the warped canvas and a uint8 mask that is 1 where
    all four bilinear neighbours fall inside ``src``.
    """
    a, b = src.shape
    jj, ii = np.meshgrid(np.arange(width, dtype=float) + ox,
                         np.arange(height, dtype=float) + oy)
    hx = T[0, 0] * jj + T[0, 1] * ii + T[0, 2]
    hy = T[1, 0] * jj + T[1, 1] * ii + T[1, 2]
    hw = T[2, 0] * jj + T[2, 1] * ii + T[2, 2]
    ok = np.abs(hw) > 1e-12
    hw = np.where(ok, hw, 1.0)
    sx = hx / hw
    sy = hy / hw
    ok &= (sx >= -EDGE_EPS) & (sx <= b - 1 + EDGE_EPS)
    ok &= (sy >= -EDGE_EPS) & (sy <= a - 1 + EDGE_EPS)
    sx = np.clip(np.where(ok, sx, 0.0), 0.0, b - 1)
    sy = np.clip(np.where(ok, sy, 0.0), 0.0, a - 1)
    x0 = np.minimum(np.floor(sx).astype(np.intp), max(b - 2, 0))
    y0 = np.minimum(np.floor(sy).astype(np.intp), max(a - 2, 0))
    x1 = np.minimum(x0 + 1, b - 1)
    y1 = np.minimum(y0 + 1, a - 1)
    fx = sx - x0
    fy = sy - y0
    val = ((1 - fy) * ((1 - fx) * src[y0, x0] + fx * src[y0, x1])
           + fy * ((1 - fx) * src[y1, x0] + fx * src[y1, x1]))
    out = np.where(ok, val, 0.0)
    return out, ok.astype(np.uint8)


def ncc_scores(img_a, img_b, points, half, radius):
    """Zero-mean NCC of patches around ``points`` in ``img_a`` against every
    offset within ``radius`` in ``img_b``.

    ``points`` is an (N, 2) integer array of (row, col) centres whose patches
    lie fully inside ``img_a``. Returns an (N, 2r+1, 2r+1) array; offsets whose
    patch leaves ``img_b`` or whose target patch is flat score -inf.
    """
    size = 2 * half + 1
    span = 2 * radius + 1
    pad = half + radius
    padded = np.pad(img_b.astype(float), pad, constant_values=np.nan)
    out = np.full((len(points), span, span), -np.inf)
    for idx, (r, c) in enumerate(points):
        pa = img_a[r - half:r + half + 1, c - half:c + half + 1].astype(float)
        pa = pa - pa.mean()
        na = np.sqrt((pa * pa).sum())
        if na < 1e-12:
            continue
        win = padded[r:r + 2 * pad + 1, c:c + 2 * pad + 1]
        cand = sliding_window_view(win, (size, size))
        mean_b = cand.mean(axis=(2, 3))
        cb = cand - mean_b[:, :, None, None]
        nb = np.sqrt((cb * cb).sum(axis=(2, 3)))
        num = (cb * pa).sum(axis=(2, 3))
        with np.errstate(invalid="ignore", divide="ignore"):
            score = num / (na * nb)
        score[~np.isfinite(score) | (nb < 1e-12)] = -np.inf
        out[idx] = score
    return out
