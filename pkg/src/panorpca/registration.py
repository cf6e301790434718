"""Homography estimation, chaining to an anchor frame, and canvas warping.

Homographies follow the row-vector convention ``kappa * p_tilde = H.T @ p``
with ``p = [x, y, 1]``, where x is the column and y the row coordinate, and
are normalized so that ``H[2, 2] == 1``. Internally the column-vector
matrix ``G = H.T`` is used for composition.

Correspondences are (N, 4) float arrays of rows ``(x, y, x_tilde, y_tilde)``.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from .core import as_image, stack_frames

log = logging.getLogger(__name__)


class RegistrationError(RuntimeError):
    pass


class PointAtInfinityError(RegistrationError):
    pass


class DegenerateConfigurationError(RegistrationError):
    pass


class NormalizationError(RegistrationError):
    pass


class NoModelError(RegistrationError):
    pass


class InsufficientFeaturesError(RegistrationError):
    pass


class SingularHomographyError(RegistrationError):
    pass


@dataclass
class RansacConfig:
    iterations: int = 2000
    inlier_threshold: float = 1.5
    min_inlier_fraction: float = 0.3
    seed: int = 0
    confidence: float = 0.999
    batch: int = 250
    # consensus points beyond trim_scale robust sigmas are dropped before the
    # final refit; 0 disables trimming
    trim_scale: float = 3.0

    def __post_init__(self):
        if self.trim_scale < 0:
            raise ValueError("trim_scale must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0 <= self.min_inlier_fraction <= 1:
            raise ValueError("min_inlier_fraction must lie in [0, 1]")


@dataclass
class MatchConfig:
    """Harris corner + NCC patch matching settings."""

    patch_size: int = 11
    search_radius: int = 12
    max_corners: int = 300
    min_distance: int = 4
    harris_k: float = 0.04
    harris_sigma: float = 1.5
    response_floor: float = 0.001
    ncc_floor: float = 0.8
    median_size: int = 5
    subpixel: bool = False
    cross_check: bool = True

    def __post_init__(self):
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd and >= 3")
        if self.search_radius < 0:
            raise ValueError("search_radius must be >= 0")


@dataclass
class RegistrationConfig:
    match: MatchConfig = field(default_factory=MatchConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)


def normalize_homography(H):
    H = np.asarray(H, dtype=np.float64)
    if H.shape != (3, 3):
        raise ValueError(f"homography must be 3x3, got {H.shape}")
    if abs(H[2, 2]) < 1e-12 * max(np.abs(H).max(), 1e-300):
        raise NormalizationError("H[2, 2] is too small to normalize")
    return H / H[2, 2]


def translation(tx, ty):
    """Homography moving every point by (tx, ty)."""
    H = np.eye(3)
    H[2, 0] = tx
    H[2, 1] = ty
    return H


def apply_homography(H, points):
    """Map (x, y) points through ``H``.

    Accepts a single pair or an (N, 2) array and returns the same form.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    hom = np.column_stack([pts, np.ones(len(pts))]) @ np.asarray(H, float)
    if np.any(np.abs(hom[:, 2]) < 1e-12):
        raise PointAtInfinityError("point maps to infinity")
    out = hom[:, :2] / hom[:, 2:3]
    return out[0] if single else out


def _similarity_normalizer(pts):
    """Hartley conditioning: centroid to origin, mean distance sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _dlt_rows(src, dst):
    """Stack the 2x9 constraint blocks for each correspondence.

    Works on (..., N, 2) arrays and returns (..., 2N, 9).
    """
    one = np.ones(src.shape[:-1] + (1,))
    p = np.concatenate([src, one], axis=-1)
    zero = np.zeros_like(p)
    r1 = np.concatenate([zero, p, -dst[..., 1:2] * p], axis=-1)
    r2 = np.concatenate([p, zero, -dst[..., 0:1] * p], axis=-1)
    A = np.stack([r1, r2], axis=-2)
    return A.reshape(A.shape[:-3] + (-1, 9))


def estimate_homography_dlt(corrs):
    """Least-squares homography from four or more correspondences.

    Coordinates are conditioned internally; the returned matrix acts on the
    original coordinates.
    """
    corrs = np.asarray(corrs, dtype=np.float64)
    if corrs.ndim != 2 or corrs.shape[1] != 4:
        raise ValueError("correspondences must be an (N, 4) array")
    if len(corrs) < 4:
        raise DegenerateConfigurationError("need at least 4 correspondences")
    if not np.all(np.isfinite(corrs)):
        raise ValueError("correspondences must be finite")
    Ts = _similarity_normalizer(corrs[:, :2])
    Td = _similarity_normalizer(corrs[:, 2:])
    src = corrs[:, :2] @ Ts[:2, :2].T + Ts[:2, 2]
    dst = corrs[:, 2:] @ Td[:2, :2].T + Td[:2, 2]
    A = _dlt_rows(src, dst)
    _, sv, Vt = np.linalg.svd(A)
    sv = np.concatenate([sv, np.zeros(9 - len(sv))])
    if sv[7] - sv[8] <= 1e-10 * sv[0]:
        raise DegenerateConfigurationError(
            "correspondences are degenerate (rank-deficient constraint matrix)")
    G = Vt[-1].reshape(3, 3)
    G = np.linalg.solve(Td, G @ Ts)
    return normalize_homography(G.T)


def transfer_error(H, corrs):
    """Euclidean distance between mapped source points and their targets."""
    corrs = np.asarray(corrs, dtype=np.float64)
    hom = np.column_stack([corrs[:, :2], np.ones(len(corrs))]) @ H
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = hom[:, :2] / hom[:, 2:3]
    err = np.sqrt(((proj - corrs[:, 2:]) ** 2).sum(axis=1))
    return np.where(np.isfinite(err), err, np.inf)


def estimate_homography_ransac(corrs, cfg=None):
    """Robust homography by RANSAC over minimal 4-point DLT fits.

    Minimal models are fitted in batches; sampling stops early once the
    best consensus makes further draws unlikely to improve it. Returns the
    homography refitted on the largest consensus set, after trimming points
    with outsized residuals, and the flags of the points used.
    """
    cfg = cfg or RansacConfig()
    corrs = np.asarray(corrs, dtype=np.float64)
    N = len(corrs)
    if N < 4:
        raise InsufficientFeaturesError("need at least 4 correspondences")
    rng = np.random.default_rng(cfg.seed)
    Ts = _similarity_normalizer(corrs[:, :2])
    Td = _similarity_normalizer(corrs[:, 2:])
    Td_inv = np.linalg.inv(Td)
    src = corrs[:, :2] @ Ts[:2, :2].T + Ts[:2, 2]
    dst = corrs[:, 2:] @ Td[:2, :2].T + Td[:2, 2]
    src_h = np.column_stack([corrs[:, :2], np.ones(N)])
    thr2 = cfg.inlier_threshold ** 2

    best_count, best_flags = 0, None
    done, needed = 0, cfg.iterations
    while done < min(needed, cfg.iterations):
        B = min(cfg.batch, cfg.iterations - done)
        idx = np.argsort(rng.random((B, N)), axis=1)[:, :4]
        A = _dlt_rows(src[idx], dst[idx])
        _, _, Vt = np.linalg.svd(A)
        G = Vt[:, -1, :].reshape(B, 3, 3)
        G = Td_inv @ G @ Ts
        proj = np.einsum("bij,nj->bni", G, src_h)
        with np.errstate(divide="ignore", invalid="ignore"):
            xy = proj[..., :2] / proj[..., 2:3]
            err2 = ((xy - corrs[None, :, 2:]) ** 2).sum(axis=-1)
        flags = np.isfinite(err2) & (err2 < thr2)
        counts = flags.sum(axis=1)
        b = int(np.argmax(counts))
        if counts[b] > best_count:
            best_count, best_flags = int(counts[b]), flags[b]
            w = best_count / N
            if w >= 1.0:
                needed = 0
            else:
                denom = math.log(max(1.0 - w ** 4, 1e-300))
                needed = int(math.ceil(math.log(1.0 - cfg.confidence) / denom)) \
                    if denom < 0 else cfg.iterations
        done += B

    if best_flags is None or best_count < max(4, cfg.min_inlier_fraction * N):
        raise NoModelError(
            f"best consensus {best_count}/{N} below required fraction "
            f"{cfg.min_inlier_fraction}")
    H = estimate_homography_dlt(corrs[best_flags])
    flags = transfer_error(H, corrs) < cfg.inlier_threshold
    if cfg.trim_scale > 0:
        H, flags = _trimmed_refit(H, corrs, flags, cfg)
    log.debug("ransac: %d/%d inliers after %d draws", flags.sum(), N, done)
    return H, flags


def _trimmed_refit(H, corrs, flags, cfg, rounds=5):
    """Drop consensus points that sit far outside the bulk of the residuals.

    An outlier that lands just inside the inlier threshold would otherwise
    bias the least-squares refit. The scale is 1.4826 times the median
    consensus residual.
    """
    for _ in range(rounds):
        err = transfer_error(H, corrs)
        scale = 1.4826 * float(np.median(err[flags]))
        keep = flags & (err <= cfg.trim_scale * scale)
        if keep.sum() < 4 or np.array_equal(keep, flags):
            break
        H = estimate_homography_dlt(corrs[keep])
        flags = keep
    return H, flags


def harris_response(img, k=0.04, sigma=1.5):
    img = np.asarray(img, dtype=np.float64)
    ix = ndimage.sobel(img, axis=1, mode="reflect")
    iy = ndimage.sobel(img, axis=0, mode="reflect")
    sxx = ndimage.gaussian_filter(ix * ix, sigma)
    syy = ndimage.gaussian_filter(iy * iy, sigma)
    sxy = ndimage.gaussian_filter(ix * iy, sigma)
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def harris_corners(img, cfg, border):
    """Return (row, col) corner locations sorted by decreasing response."""
    R = harris_response(img, cfg.harris_k, cfg.harris_sigma)
    peak = R.max()
    if peak <= 1e-12:
        return np.empty((0, 2), dtype=np.intp)
    local_max = ndimage.maximum_filter(R, size=2 * cfg.min_distance + 1)
    keep = (R == local_max) & (R > cfg.response_floor * peak)
    keep[:border, :] = False
    keep[-border:, :] = False
    keep[:, :border] = False
    keep[:, -border:] = False
    rows, cols = np.nonzero(keep)
    order = np.argsort(-R[rows, cols], kind="stable")[:cfg.max_corners]
    return np.column_stack([rows[order], cols[order]]).astype(np.intp)


def _parabolic_offset(left, mid, right):
    denom = left - 2 * mid + right
    if not (np.isfinite(left) and np.isfinite(right)) or denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def find_correspondences(frame_a, frame_b, cfg=None):
    """Match Harris corners of ``frame_a`` into ``frame_b`` by NCC search."""
    cfg = cfg or MatchConfig()
    a = as_image(frame_a)
    b = as_image(frame_b)
    if a.shape != b.shape:
        raise ValueError("frames must have the same size")
    if cfg.median_size > 1:
        # impulse noise defeats both the corner detector and NCC
        a = ndimage.median_filter(a, cfg.median_size, mode="reflect")
        b = ndimage.median_filter(b, cfg.median_size, mode="reflect")
    half = cfg.patch_size // 2
    if min(a.shape) < cfg.patch_size + 2:
        raise InsufficientFeaturesError("frames smaller than the match patch")
    pts = harris_corners(a, cfg, border=half + 1)
    if len(pts) < 4:
        raise InsufficientFeaturesError(f"only {len(pts)} corners found")
    R = cfg.search_radius
    scores = kernels.ncc_scores(a, b, pts, half, R)
    span = 2 * R + 1
    matches = []
    for (r, c), sc in zip(pts, scores):
        flat = int(np.argmax(sc))
        best = sc.flat[flat]
        if not best >= cfg.ncc_floor:
            continue
        dr, dc = divmod(flat, span)
        fr = fc = 0.0
        if cfg.subpixel:
            fr = _parabolic_offset(sc[dr - 1, dc] if dr > 0 else -np.inf, best,
                                   sc[dr + 1, dc] if dr + 1 < span else -np.inf)
            fc = _parabolic_offset(sc[dr, dc - 1] if dc > 0 else -np.inf, best,
                                   sc[dr, dc + 1] if dc + 1 < span else -np.inf)
        matches.append((c, r, c + dc - R + fc, r + dr - R + fr))
    if cfg.cross_check and matches:
        # a match survives only if matching back from frame_b lands on the
        # corner it came from; this drops corners whose true partner lies
        # outside frame_b and the search picked a neighbouring shift
        m = np.array(matches)
        tgt = np.column_stack([np.round(m[:, 3]), np.round(m[:, 2])]).astype(np.intp)
        back = kernels.ncc_scores(b, a, tgt, half, R)
        flat = back.reshape(len(tgt), -1).argmax(axis=1)
        br, bc = np.divmod(flat, span)
        ok = (tgt[:, 0] + br - R == m[:, 1]) & (tgt[:, 1] + bc - R == m[:, 0])
        matches = [mt for mt, keep in zip(matches, ok) if keep]
    if len(matches) < 4:
        raise InsufficientFeaturesError(f"only {len(matches)} matches survived")
    return np.array(matches, dtype=np.float64)


def _check_invertible(H):
    if abs(np.linalg.det(H)) <= 1e-12:
        raise SingularHomographyError("homography is not invertible")


def chain_to_anchor(homs, anchor):
    """Compose frame-to-frame links into per-frame maps onto the anchor.

    ``homs[k]`` maps frame k to frame k+1 (0-based); the result holds one
    homography per frame mapping that frame into anchor coordinates.
    """
    links = [normalize_homography(H) for H in homs]
    p = len(links) + 1
    if not 0 <= anchor < p:
        raise ValueError(f"anchor {anchor} outside 0..{p - 1}")
    for H in links:
        _check_invertible(H)
    G = [l.T for l in links]
    out = []
    for k in range(p):
        T = np.eye(3)
        if k < anchor:
            for j in range(k, anchor):
                T = G[j] @ T
        elif k > anchor:
            for j in range(k - 1, anchor - 1, -1):
                T = np.linalg.solve(G[j], T)
        out.append(normalize_homography(T.T))
    return out


def default_anchor(p):
    return p // 2


def estimate_links(frames, cfg=None):
    """Frame-to-frame homographies ``H_k: k -> k+1`` for a sequence."""
    cfg = cfg or RegistrationConfig()
    links = []
    for k in range(len(frames) - 1):
        corrs = find_correspondences(frames[k], frames[k + 1], cfg.match)
        H, flags = estimate_homography_ransac(corrs, cfg.ransac)
        log.info("link %d->%d: %d/%d inliers", k, k + 1, flags.sum(), len(flags))
        links.append(H)
    return links


@dataclass
class Canvas:
    height: int
    width: int
    offset_x: int
    offset_y: int


def canvas_extent(shapes, to_anchor, tol=1e-6):
    """Integer bounding box of every frame's projected corner points."""
    xs, ys = [], []
    for (a, b), H in zip(shapes, to_anchor):
        corners = np.array([[0, 0], [b - 1, 0], [0, a - 1], [b - 1, a - 1]], float)
        proj = apply_homography(H, corners)
        xs.extend(proj[:, 0])
        ys.extend(proj[:, 1])
    ox = int(math.floor(min(xs) + tol))
    oy = int(math.floor(min(ys) + tol))
    width = int(math.ceil(max(xs) - tol)) - ox + 1
    height = int(math.ceil(max(ys) - tol)) - oy + 1
    return Canvas(height, width, ox, oy)


def warp_to_canvas(frames, to_anchor, canvas=None):
    """Warp frames into anchor coordinates; returns ``(FrameStack, Canvas)``."""
    frames = [as_image(f) for f in frames]
    if len(frames) != len(to_anchor):
        raise ValueError("need one homography per frame")
    if canvas is None:
        canvas = canvas_extent([f.shape for f in frames], to_anchor)
    warped, masks = [], []
    for f, H in zip(frames, to_anchor):
        T = np.linalg.inv(np.asarray(H, float).T)
        out, mk = kernels.warp_bilinear(np.ascontiguousarray(f), T,
                                        canvas.height, canvas.width,
                                        float(canvas.offset_x),
                                        float(canvas.offset_y))
        warped.append(out)
        masks.append(mk)
    return stack_frames(warped, masks), canvas


def register_video(frames, anchor=None, cfg=None, links=None):
    """Register a frame sequence onto a panoramic canvas.

    ``links`` may supply the frame-to-frame homographies directly (for
    example from imported correspondences); otherwise they are estimated.
    """
    if not frames:
        raise ValueError("need at least one frame")
    if anchor is None:
        anchor = default_anchor(len(frames))
    if links is None:
        links = estimate_links(frames, cfg)
    to_anchor = chain_to_anchor(links, anchor)
    stack, _ = warp_to_canvas(frames, to_anchor)
    return stack


def save_correspondences(path, corrs):
    np.savetxt(path, np.asarray(corrs, float).reshape(-1, 4), fmt="%.10g")


def load_correspondences(path):
    corrs = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if corrs.size == 0:
        return np.empty((0, 4))
    if corrs.shape[1] != 4:
        raise ValueError(f"{path}: expected 4 columns 'x y x~ y~'")
    return corrs


def save_homography(path, H):
    with open(path, "w") as fh:
        fh.write(" ".join(f"{v:.17g}" for v in np.asarray(H, float).ravel()) + "\n")


def load_homography(path):
    vals = np.loadtxt(path, dtype=np.float64).ravel()
    if vals.size != 9:
        raise ValueError(f"{path}: expected 9 numbers")
    return normalize_homography(vals.reshape(3, 3))
