"""Shared data types, masked projection, frame stacking and weighted TV.

Conventions used across the package:

* intensities are float64 in [0, 1];
* a frame of height m and width n is vectorized column-major, so pixel
  (i, j) of frame k is entry ``(i + m*j, k)`` of the stacked matrix;
* a stacked matrix ``X`` of shape (m*n, p) and the volume
  ``X.reshape((m, n, p), order="F")`` share memory when ``X`` is
  Fortran-ordered.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels

LUMA = np.array([0.299, 0.587, 0.114])


class ShapeError(ValueError):
    """Raised when array dimensions do not agree."""


def as_image(arr):
    """Convert an array to a float64 grayscale image in [0, 1].

    uint8 input is divided by 255, uint16 by 65535, and RGB(A) input is
    reduced to luminance.
    """
    arr = np.asarray(arr)
    if arr.dtype == np.uint8:
        img = arr.astype(np.float64) / 255.0
    elif arr.dtype == np.uint16:
        img = arr.astype(np.float64) / 65535.0
    else:
        img = arr.astype(np.float64)
    if img.ndim == 3:
        img = img[..., :3] @ LUMA
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeError(f"expected a 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


@dataclass(frozen=True)
class FrameStack:
    """Registered frames stacked as columns of an (m*n, p) matrix."""

    height: int
    width: int
    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        npix = self.height * self.width
        if self.data.shape != self.mask.shape or self.data.ndim != 2:
            raise ShapeError("data and mask must be 2-D arrays of equal shape")
        if self.data.shape[0] != npix:
            raise ShapeError(
                f"data has {self.data.shape[0]} rows, canvas has {npix} pixels")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("data contains non-finite values")
        if np.any(self.data[self.mask == 0] != 0):
            raise ValueError("unobserved entries of data must be zero")

    @property
    def frame_count(self):
        return self.data.shape[1]

    @property
    def shape3(self):
        return (self.height, self.width, self.frame_count)

    def volume(self):
        return self.data.reshape(self.shape3, order="F")

    def mask_volume(self):
        return self.mask.reshape(self.shape3, order="F")

    def frames(self):
        vol = self.volume()
        return [vol[:, :, k] for k in range(self.frame_count)]

    def masks(self):
        vol = self.mask_volume()
        return [vol[:, :, k] for k in range(self.frame_count)]


@dataclass
class Decomposition:
    """Background ``L``, sparse corruption ``S1`` and smooth foreground ``S2``."""

    L: np.ndarray
    S1: np.ndarray
    S2: np.ndarray

    def __post_init__(self):
        if not (self.L.shape == self.S1.shape == self.S2.shape):
            raise ShapeError("L, S1 and S2 must share a shape")


@dataclass(frozen=True)
class TVWeights:
    """0/1 weights on first differences along rows (x), columns (y), frames (z).

    Arrays are float64 so they can be passed straight to the kernels.
    """

    wx: np.ndarray
    wy: np.ndarray
    wz: np.ndarray

    @property
    def shape3(self):
        return (self.wy.shape[0], self.wx.shape[1], self.wx.shape[2])

    @classmethod
    def from_mask(cls, mask_vol):
        """A difference is kept only if both of its endpoints are observed."""
        M = np.asarray(mask_vol).astype(bool)
        if M.ndim != 3:
            raise ShapeError("mask volume must be 3-D (m, n, p)")
        wx = (M[1:, :, :] & M[:-1, :, :]).astype(np.float64)
        wy = (M[:, 1:, :] & M[:, :-1, :]).astype(np.float64)
        wz = (M[:, :, 1:] & M[:, :, :-1]).astype(np.float64)
        return cls(np.asfortranarray(wx), np.asfortranarray(wy),
                   np.asfortranarray(wz))

    @classmethod
    def full(cls, m, n, p):
        return cls.from_mask(np.ones((m, n, p), dtype=bool))

    @property
    def all_ones(self):
        return all(w.size == 0 or bool(np.all(w == 1.0))
                   for w in (self.wx, self.wy, self.wz))


def project_mask(X, M):
    """Zero the entries of ``X`` where ``M`` is 0."""
    X = np.asarray(X)
    M = np.asarray(M)
    if X.shape != M.shape:
        raise ShapeError(f"shape mismatch: {X.shape} vs {M.shape}")
    return np.where(M.astype(bool), X, 0.0)


def stack_frames(frames, masks=None):
    """Build a :class:`FrameStack` from equally sized frames and 0/1 masks.

    Unobserved pixels are zeroed in the data matrix. ``masks=None`` means
    every pixel is observed.
    """
    frames = [as_image(f) for f in frames]
    if not frames:
        raise ValueError("need at least one frame")
    m, n = frames[0].shape
    if masks is None:
        masks = [np.ones((m, n), dtype=np.uint8)] * len(frames)
    if len(masks) != len(frames):
        raise ShapeError("frames and masks differ in length")
    cols, mcols = [], []
    for f, mk in zip(frames, masks):
        mk = np.asarray(mk)
        if f.shape != (m, n) or mk.shape != (m, n):
            raise ShapeError("all frames and masks must share one size")
        if not np.all((mk == 0) | (mk == 1)):
            raise ValueError("masks must be binary")
        mk = mk.astype(np.uint8)
        cols.append(np.where(mk == 1, f, 0.0).ravel(order="F"))
        mcols.append(mk.ravel(order="F"))
    data = np.asfortranarray(np.stack(cols, axis=1))
    mask = np.asfortranarray(np.stack(mcols, axis=1))
    return FrameStack(m, n, data, mask)


def to_volume(X, shape3):
    X = np.asarray(X, dtype=np.float64)
    m, n, p = shape3
    if X.shape != (m * n, p):
        raise ShapeError(f"expected ({m * n}, {p}), got {X.shape}")
    return np.asfortranarray(X.reshape(shape3, order="F"))


def to_matrix(vol):
    m, n, p = vol.shape
    return vol.reshape((m * n, p), order="F")


def tv_value(X, w):
    """Weighted anisotropic total variation of a stacked matrix ``X``."""
    vol = to_volume(X, w.shape3)
    dx, dy, dz = kernels.weighted_diff(vol, w.wx, w.wy, w.wz)
    return float(np.abs(dx).sum() + np.abs(dy).sum() + np.abs(dz).sum())


def build_difference_operator(m, n, p, w=None):
    """Sparse first-difference matrix ``C`` and diagonal weight ``W``.

    Rows hold the x differences, then y, then z, each enumerated in
    column-major order over its difference grid, so that
    ``np.abs(W @ C @ X.ravel(order="F")).sum() == tv_value(X, w)``.
    """
    if min(m, n, p) < 1:
        raise ValueError("dimensions must be positive")
    if w is None:
        w = TVWeights.full(m, n, p)
    idx = np.arange(m * n * p).reshape((m, n, p), order="F")
    blocks = []
    for axis in range(3):
        lo = np.take(idx, np.arange(idx.shape[axis] - 1), axis=axis)
        hi = np.take(idx, np.arange(1, idx.shape[axis]), axis=axis)
        blocks.append((lo.ravel(order="F"), hi.ravel(order="F")))
    lo = np.concatenate([b[0] for b in blocks])
    hi = np.concatenate([b[1] for b in blocks])
    nrows = lo.size
    rows = np.concatenate([np.arange(nrows), np.arange(nrows)])
    cols = np.concatenate([lo, hi])
    vals = np.concatenate([-np.ones(nrows), np.ones(nrows)])
    C = sp.csr_matrix((vals, (rows, cols)), shape=(nrows, m * n * p))
    wdiag = np.concatenate([w.wx.ravel(order="F"), w.wy.ravel(order="F"),
                            w.wz.ravel(order="F")])
    return C, sp.diags(wdiag)
