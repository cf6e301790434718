"""Weighted anisotropic TV denoising (the TV proximal operator) by ADMM.

Solves ``min_x 0.5 * ||z - x||^2 + lam * ||W C x||_1`` with the splitting
``v = W C x``. The quadratic x-update is solved by conjugate gradient in
general; with all weights equal to one it is diagonalized exactly by a DCT
(dropped boundary differences) or an FFT (circulant boundary).
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from . import kernels
from .core import ShapeError, TVWeights, to_matrix, to_volume


class CGConvergenceWarning(RuntimeWarning):
    pass


@dataclass
class AdmmConfig:
    rho: float = 1.0
    max_outer: int = 50
    tol: float = 1e-4
    cg_tol: float = 1e-8
    cg_max: int = 200
    warm_start: bool = True
    boundary: str = "drop"
    x_solver: str = "auto"
    abs_tol: float = 1e-10

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.tol <= 0 or self.cg_tol <= 0 or self.abs_tol < 0:
            raise ValueError("tolerances must be positive")
        if self.boundary not in ("drop", "circulant"):
            raise ValueError("boundary must be 'drop' or 'circulant'")
        if self.x_solver not in ("auto", "cg", "dct", "fft"):
            raise ValueError("x_solver must be auto, cg, dct or fft")


def soft_threshold(z, lam):
    """Element-wise ``sign(z) * max(|z| - lam, 0)``."""
    if lam < 0:
        raise ValueError("threshold must be non-negative")
    z = np.asarray(z, dtype=np.float64)
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


class DiffOperator:
    """Weighted first differences ``W C`` on an (m, n, p) volume."""

    def __init__(self, w, boundary="drop"):
        self.w = w
        self.boundary = boundary
        self.shape3 = w.shape3
        if boundary == "circulant" and not w.all_ones:
            raise ValueError("circulant boundary requires unit weights")

    def forward(self, vol):
        if self.boundary == "drop":
            return kernels.weighted_diff(vol, self.w.wx, self.w.wy, self.w.wz)
        return tuple(np.roll(vol, -1, axis=a) - vol for a in range(3))

    def adjoint(self, d):
        if self.boundary == "drop":
            w = self.w
            return kernels.weighted_diff_adjoint(d[0], d[1], d[2], w.wx, w.wy, w.wz)
        out = np.zeros(self.shape3, order="F")
        for a in range(3):
            out += np.roll(d[a], 1, axis=a) - d[a]
        return out

    def normal(self, vol, rho):
        """``vol + rho * C^T W C vol``."""
        if self.boundary == "drop":
            w = self.w
            return kernels.normal_apply(vol, w.wx, w.wy, w.wz, rho)
        return vol + rho * self.adjoint(self.forward(vol))

    def zeros(self):
        if self.boundary == "drop":
            return tuple(np.zeros(w.shape, order="F")
                         for w in (self.w.wx, self.w.wy, self.w.wz))
        return tuple(np.zeros(self.shape3, order="F") for _ in range(3))

    def eigenvalues(self):
        """Spectrum of ``C^T C`` for unit weights, on the DCT or FFT grid."""
        m, n, p = self.shape3
        if self.boundary == "drop":
            ev = [2 - 2 * np.cos(np.pi * np.arange(N) / N) for N in (m, n, p)]
        else:
            ev = [2 - 2 * np.cos(2 * np.pi * np.arange(N) / N) for N in (m, n, p)]
        return ev[0][:, None, None] + ev[1][None, :, None] + ev[2][None, None, :]


def _sqnorm(a):
    a = a.ravel(order="K")
    return float(np.dot(a, a))


def _dot(a, b):
    # both operands must be flattened in the same element order
    return float(np.dot(a.ravel(order="F"), b.ravel(order="F")))


def _tnorm(d):
    return math.sqrt(sum(_sqnorm(a) for a in d))


def conjugate_gradient(apply_A, b, x0=None, tol=1e-8, maxiter=200):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Stops when ``||b - A x|| <= tol * ||b||``. Returns ``(x, iterations,
    relative_residual)``.
    """
    b = np.asfortranarray(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64, order="F")
    r = b - apply_A(x)
    bnorm = math.sqrt(_sqnorm(b))
    if bnorm == 0:
        return np.zeros_like(b), 0, 0.0
    rs = _sqnorm(r)
    target = (tol * bnorm) ** 2
    d = np.array(r, order="F")
    it = 0
    while rs > target and it < maxiter:
        Ad = apply_A(d)
        alpha = rs / _dot(d, Ad)
        x += alpha * d
        r -= alpha * Ad
        rs_new = _sqnorm(r)
        d *= rs_new / rs
        d += r
        rs = rs_new
        it += 1
    return x, it, float(np.sqrt(rs) / bnorm)


def choose_x_solver(op, cfg):
    if cfg.x_solver != "auto":
        return cfg.x_solver
    if op.boundary == "circulant":
        return "fft"
    return "dct" if op.w.all_ones else "cg"


def x_update(z, v, u, rho, op, cfg, x0=None):
    """Solve ``(I + rho C^T W C) x = z + rho C^T W (v - u)`` for x.

    ``z`` is an (m, n, p) volume; ``v`` and ``u`` are difference-space
    tuples as produced by ``op.forward``.
    """
    if rho == 0:
        return np.array(z, dtype=np.float64, order="F")
    rhs = z + rho * op.adjoint(tuple(a - b for a, b in zip(v, u)))
    method = choose_x_solver(op, cfg)
    if method == "dct":
        if op.boundary != "drop" or not op.w.all_ones:
            raise ValueError("DCT x-update needs unit weights and dropped boundary")
        coef = sfft.dctn(rhs, type=2, norm="ortho")
        coef /= 1.0 + rho * op.eigenvalues()
        return np.asfortranarray(sfft.idctn(coef, type=2, norm="ortho"))
    if method == "fft":
        if op.boundary != "circulant":
            raise ValueError("FFT x-update needs circulant boundary")
        coef = sfft.fftn(rhs)
        coef /= 1.0 + rho * op.eigenvalues()
        return np.asfortranarray(sfft.ifftn(coef).real)
    x, it, res = conjugate_gradient(lambda y: op.normal(y, rho), rhs,
                                    x0=x0 if x0 is not None else z,
                                    tol=cfg.cg_tol, maxiter=cfg.cg_max)
    if res > cfg.cg_tol:
        warnings.warn(f"CG stopped after {it} iterations with relative "
                      f"residual {res:.3e}", CGConvergenceWarning, stacklevel=2)
    return x


def v_update(wcx, u, lam, rho):
    """``soft_{lam/rho}(W C x + u)``, on arrays or tuples of arrays."""
    if isinstance(wcx, tuple):
        return tuple(soft_threshold(a + b, lam / rho) for a, b in zip(wcx, u))
    return soft_threshold(np.asarray(wcx) + np.asarray(u), lam / rho)


@dataclass
class AdmmInfo:
    iterations: int
    primal_residual: float
    dual_residual: float
    converged: bool
    x_solver: str


class TVDenoiser:
    """Reusable TV prox on a fixed weight pattern, with optional warm starts.

    Warm starting carries ``(x, v, u)`` from one call to the next, which
    pays off when consecutive inputs are close, as in the outer RPCA loop.
    """

    def __init__(self, w, cfg=None):
        self.w = w
        self.cfg = cfg or AdmmConfig()
        self.op = DiffOperator(w, self.cfg.boundary)
        self._state = None
        self.last_info = None
        self.history = []

    def reset(self):
        self._state = None

    def denoise_volume(self, z, lam):
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        z = np.asarray(z, dtype=np.float64)
        if z.shape != self.op.shape3:
            raise ShapeError(f"volume {z.shape} does not match weights {self.op.shape3}")
        if not np.all(np.isfinite(z)):
            raise ValueError("input contains non-finite values")
        cfg, op = self.cfg, self.op
        method = choose_x_solver(op, cfg)
        if lam == 0 or (op.boundary == "drop" and _all_zero(self.w)):
            self.last_info = AdmmInfo(0, 0.0, 0.0, True, method)
            self.history.append(self.last_info)
            return np.array(z, order="F")
        rho = cfg.rho
        if cfg.warm_start and self._state is not None:
            x, v, u = self._state
        else:
            x, v, u = np.array(z, order="F"), op.zeros(), op.zeros()
        nvox = z.size
        ndiff = sum(a.size for a in v)
        converged = False
        r_norm = s_norm = np.inf
        it = 0
        for it in range(1, cfg.max_outer + 1):
            x = x_update(z, v, u, rho, op, cfg, x0=x)
            wcx = op.forward(x)
            v_old = v
            v = v_update(wcx, u, lam, rho)
            u = tuple(a + b - c for a, b, c in zip(u, wcx, v))
            r_norm = _tnorm(tuple(a - b for a, b in zip(wcx, v)))
            s_norm = rho * float(np.linalg.norm(
                op.adjoint(tuple(a - b for a, b in zip(v, v_old)))))
            eps_pri = np.sqrt(ndiff) * cfg.abs_tol + cfg.tol * max(_tnorm(wcx), _tnorm(v))
            eps_dual = np.sqrt(nvox) * cfg.abs_tol + cfg.tol * rho * float(
                np.linalg.norm(op.adjoint(u)))
            if r_norm <= eps_pri and s_norm <= eps_dual:
                converged = True
                break
        self._state = (x, v, u)
        self.last_info = AdmmInfo(it, r_norm, s_norm, converged, method)
        self.history.append(self.last_info)
        return x

    def __call__(self, Z, lam):
        """Denoise a stacked (m*n, p) matrix."""
        return to_matrix(self.denoise_volume(to_volume(Z, self.op.shape3), lam))


def _all_zero(w):
    return not (np.any(w.wx) or np.any(w.wy) or np.any(w.wz))


def tvdn(Z, lam, w=None, cfg=None, shape3=None):
    """TV proximal operator of a stacked (m*n, p) matrix.

    ``w`` defaults to unit weights, in which case ``shape3`` must be given.
    """
    if w is None:
        if shape3 is None:
            raise ValueError("give either weights or shape3")
        w = TVWeights.full(*shape3)
    return TVDenoiser(w, cfg)(Z, lam)
