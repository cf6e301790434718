"""Exact weighted-TV prox by enumerating the sign patterns of the differences.

For every assignment of each kept difference to {-1, 0, +1}, the problem
restricted to that pattern is a quadratic over the subspace on which the
"0" differences vanish; its minimizer is the null-space projection of
``z - lam * D_+^T s_+``. The true minimizer has some pattern, and for that
pattern the restricted minimizer coincides with it, so the best true
objective over all patterns is the exact prox.
"""

import itertools

import numpy as np

from panorpca.core import build_difference_operator


def difference_matrix(m, n, p, w):
    C, W = build_difference_operator(m, n, p, w)
    keep = W.diagonal() > 0
    return C.toarray()[keep]


def tv_objective(x, z, lam, D):
    return 0.5 * np.sum((z - x) ** 2, axis=-1) + lam * np.abs(x @ D.T).sum(axis=-1)


def prox_oracle(z, lam, D):
    z = np.asarray(z, dtype=np.float64)
    K, n = D.shape
    if K == 0:
        return z.copy()
    best_x, best_f = None, np.inf
    for zero_mask in itertools.product((False, True), repeat=K):
        zero = np.array(zero_mask)
        D0, Dp = D[zero], D[~zero]
        if D0.shape[0]:
            P = np.eye(n) - np.linalg.pinv(D0) @ D0
        else:
            P = np.eye(n)
        kp = Dp.shape[0]
        signs = list(itertools.product((-1.0, 1.0), repeat=kp))
        S = np.array(signs, dtype=np.float64).reshape(len(signs), kp)
        X = (z[None, :] - lam * S @ Dp) @ P.T
        f = tv_objective(X, z, lam, D)
        i = int(np.argmin(f))
        if f[i] < best_f:
            best_f, best_x = f[i], X[i]
    return best_x
