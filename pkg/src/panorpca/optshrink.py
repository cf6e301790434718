"""Low-rank estimation: OptShrink and singular value thresholding."""

from dataclasses import dataclass

import numpy as np

ANNIHILATION_TOL = 1e-9


@dataclass
class SpectrumSplit:
    """Leading singular triplets and the trailing singular values."""

    sigma: np.ndarray
    U: np.ndarray
    Vt: np.ndarray
    trailing: np.ndarray


def thin_svd(Z, method="auto"):
    """Economy SVD, via the small Gram matrix for very tall/wide inputs.

    ``method`` is "direct", "gram" or "auto" (gram when one side is at least
    eight times the other).
    """
    Z = np.asarray(Z, dtype=np.float64)
    m, n = Z.shape
    if method == "auto":
        method = "gram" if max(m, n) >= 8 * min(m, n) else "direct"
    if method == "direct":
        return np.linalg.svd(Z, full_matrices=False)
    if method != "gram":
        raise ValueError(f"unknown svd method {method!r}")
    if m < n:
        U, s, Vt = thin_svd(Z.T, "gram")
        return Vt.T, s, U.T
    evals, V = np.linalg.eigh(Z.T @ Z)
    order = np.argsort(evals)[::-1]
    V = V[:, order]
    ZV = Z @ V
    # column norms of Z V are more accurate than sqrt(evals) for small sigma
    s = np.linalg.norm(ZV, axis=0)
    U = np.zeros_like(ZV)
    nz = s > 1e-14 * max(s.max(initial=0.0), 1e-300)
    U[:, nz] = ZV[:, nz] / s[nz]
    order = np.argsort(s, kind="stable")[::-1]
    return U[:, order], s[order], V[:, order].T


def split_spectrum(Z, r, svd_method="auto"):
    Z = np.asarray(Z, dtype=np.float64)
    q = min(Z.shape)
    if not 1 <= r < q:
        raise ValueError(f"rank r={r} must satisfy 1 <= r < min(Z.shape)={q}")
    if not np.all(np.isfinite(Z)):
        raise ValueError("input contains non-finite values")
    U, s, Vt = thin_svd(Z, svd_method)
    return SpectrumSplit(s[:r], U[:, :r], Vt[:r], s[r:q])


def d_transform(z, trailing, m, n, r):
    """Empirical D-transform of the trailing spectrum and its derivative at z."""
    q = min(m, n)
    big = max(m, n)
    s2 = trailing ** 2
    z2 = z * z
    base = z / (z2 - s2)
    dbase = -(z2 + s2) / (z2 - s2) ** 2
    phi1 = base.sum() / (q - r)
    dphi1 = dbase.sum() / (q - r)
    phi2 = (base.sum() + (big - q) / z) / (big - r)
    dphi2 = (dbase.sum() - (big - q) / z2) / (big - r)
    return phi1 * phi2, dphi1 * phi2 + phi1 * dphi2


def optshrink_weights(split, shape):
    m, n = shape
    r = len(split.sigma)
    top_trailing = split.trailing[0] if split.trailing.size else 0.0
    tol = ANNIHILATION_TOL * max(split.sigma[0], 1.0)
    w = np.zeros(r)
    for i, s in enumerate(split.sigma):
        if s - top_trailing <= tol:
            continue
        D, dD = d_transform(s, split.trailing, m, n, r)
        if dD == 0 or not np.isfinite(D / dD):
            continue
        w[i] = min(max(-2.0 * D / dD, 0.0), s)
    return w


def optshrink(Z, r=1, svd_method="auto"):
    """Rank-r estimate of ``Z`` with data-driven singular value shrinkage.

    The shrinkage of each leading singular value is estimated from the
    trailing (noise) singular values through the empirical D-transform.
    Weights are clamped to ``[0, sigma_i]``; components whose singular value
    is indistinguishable from the noise bulk edge are dropped.
    """
    Z = np.asarray(Z, dtype=np.float64)
    split = split_spectrum(Z, r, svd_method)
    w = optshrink_weights(split, Z.shape)
    return (split.U * w) @ split.Vt


def svt(Z, lam, svd_method="auto"):
    """Singular value thresholding: ``U soft_lam(S) V^T``."""
    if lam < 0:
        raise ValueError("threshold must be non-negative")
    Z = np.asarray(Z, dtype=np.float64)
    U, s, Vt = thin_svd(Z, svd_method)
    s = np.maximum(s - lam, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vt[keep]
