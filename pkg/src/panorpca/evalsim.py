"""Synthetic scenes, corruption models and foreground/background metrics."""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .core import FrameStack, stack_frames
from .registration import translation

PSNR_CAP = 99.0


# --------------------------------------------------------------------------
# corruption

def _split(stack):
    if isinstance(stack, FrameStack):
        return stack.data, stack.mask.astype(bool)
    x = np.asarray(stack, dtype=np.float64)
    return x, np.ones(x.shape, dtype=bool)


def _join(stack, data):
    if isinstance(stack, FrameStack):
        return FrameStack(stack.height, stack.width, np.asfortranarray(data),
                          stack.mask)
    return data


def add_salt_pepper(stack, prob, seed=0):
    """Replace each observed pixel by 0 or 1 (equal odds) with probability ``prob``.

    Accepts a :class:`FrameStack` or a plain array and returns the same kind.
    """
    if not 0 <= prob <= 1:
        raise ValueError("probability must lie in [0, 1]")
    x, obs = _split(stack)
    rng = np.random.default_rng(seed)
    hit = (rng.random(x.shape) < prob) & obs
    salt = (rng.random(x.shape) < 0.5).astype(np.float64)
    return _join(stack, np.where(hit, salt, x))


def add_gaussian_snr(stack, snr_db, seed=0):
    """Add white Gaussian noise at the given SNR (dB) over observed pixels.

    Signal power is the mean square of the observed pixels.
    """
    if not math.isfinite(snr_db):
        raise ValueError("snr must be finite")
    x, obs = _split(stack)
    power = float(np.mean(x[obs] ** 2)) if obs.any() else 0.0
    if power == 0.0:
        raise ValueError("signal power is zero; SNR undefined")
    sigma = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noise = sigma * rng.standard_normal(x.shape)
    return _join(stack, np.where(obs, x + noise, x))


# --------------------------------------------------------------------------
# metrics

def psnr_region(truth, estimate, region):
    """PSNR in dB over ``region`` with peak 1.0; exact matches give 99 dB."""
    truth = np.asarray(truth, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    region = np.asarray(region, dtype=bool)
    if truth.shape != estimate.shape or truth.shape != region.shape:
        raise ValueError("truth, estimate and region must share a shape")
    if not region.any():
        raise ValueError("empty region")
    mse = float(np.mean((truth[region] - estimate[region]) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def otsu_threshold(values, bins=256):
    """Otsu's threshold on a 1-D sample; ``None`` when all values are equal."""
    v = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return None
    hist, edges = np.histogram(v, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist).astype(np.float64)
    w1 = w0[-1] - w0
    s0 = np.cumsum(hist * centers)
    m0 = s0 / np.where(w0 > 0, w0, 1)
    m1 = (s0[-1] - s0) / np.where(w1 > 0, w1, 1)
    between = (w0 * w1 * (m0 - m1) ** 2)[:-1]
    # empty bins between two clusters form a plateau; split it in the middle
    top = np.flatnonzero(between >= between.max() * (1 - 1e-12))
    run_end = top[0]
    while run_end + 1 < between.size and run_end + 1 in top:
        run_end += 1
    k = (top[0] + run_end) // 2
    return float(edges[k + 1])


def foreground_mask(S2, mode="otsu", threshold=0.1):
    """Binary foreground from ``|S2| > t``; t fixed or chosen by Otsu.

    Returns ``(mask, t)``.
    """
    a = np.abs(np.asarray(S2, dtype=np.float64))
    if mode == "fixed":
        t = float(threshold)
    elif mode == "otsu":
        t = otsu_threshold(a)
        if t is None:
            return np.zeros(a.shape, dtype=bool), float(a.max(initial=0.0))
    else:
        raise ValueError("mode must be 'otsu' or 'fixed'")
    return a > t, t


@dataclass
class FScore:
    precision: float
    recall: float
    f_measure: float
    degenerate: bool


def f_measure(est, truth):
    """Precision, recall and their harmonic mean.

    Empty denominators yield 0 and set ``degenerate``.
    """
    est = np.asarray(est, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if est.shape != truth.shape:
        raise ValueError("masks must share a shape")
    tp = int(np.sum(est & truth))
    fp = int(np.sum(est & ~truth))
    fn = int(np.sum(~est & truth))
    degenerate = False
    if tp + fp == 0:
        precision, degenerate = 0.0, True
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall, degenerate = 0.0, True
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0:
        return FScore(precision, recall, 0.0, True)
    return FScore(precision, recall, 2 * precision * recall / (precision + recall),
                  degenerate)


@dataclass
class MetricReport:
    f_psnr: float
    b_psnr: float
    f_measure: float
    precision: float
    recall: float
    threshold_mode: str = "otsu"
    threshold: float = 0.0
    degenerate: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        kw.setdefault("indent", 2)
        kw.setdefault("sort_keys", True)
        return json.dumps(self.to_dict(), **kw)


def evaluate(clean, estimate, foreground, fg_truth, observed=None,
             threshold_mode="otsu", threshold=0.1):
    """Score a decomposition against ground truth.

    ``estimate`` is the reconstructed scene (``L + S2``) and ``foreground``
    the component that is thresholded into a mask (``S2``, or ``S`` for a
    plain RPCA baseline). All arrays share one shape; ``observed`` restricts
    scoring to observed pixels.
    """
    clean = np.asarray(clean, dtype=np.float64)
    fg_truth = np.asarray(fg_truth, dtype=bool)
    obs = np.ones(clean.shape, bool) if observed is None else np.asarray(observed, bool)
    est_mask, t = foreground_mask(np.where(obs, foreground, 0.0), threshold_mode,
                                  threshold)
    fs = f_measure(est_mask[obs], fg_truth[obs])
    fg_region = fg_truth & obs
    bg_region = ~fg_truth & obs
    f_psnr = psnr_region(clean, estimate, fg_region) if fg_region.any() else float("nan")
    b_psnr = psnr_region(clean, estimate, bg_region)
    return MetricReport(f_psnr, b_psnr, fs.f_measure, fs.precision, fs.recall,
                        threshold_mode, t, fs.degenerate)


# --------------------------------------------------------------------------
# synthetic scenes

@dataclass
class SceneConfig:
    height: int = 64
    width: int = 64
    frames: int = 40
    object_size: int = 8
    object_shape: str = "square"
    object_value: float = 0.95
    trajectory: np.ndarray | None = None
    camera: str = "static"
    pan_speed: int = 2
    texture_scale: float = 1.5
    seed: int = 0


@dataclass
class SyntheticScene:
    """Ground truth for a generated video.

    ``background`` is the static background (panorama for a moving camera);
    frame k is the crop of the composited panorama starting at column
    ``offsets[k]``. ``links[k]`` maps frame k onto frame k+1 and ``to_canvas[k]``
    maps frame k onto the panorama.
    """

    frames: list
    background: np.ndarray
    fg_masks: list
    trajectory: np.ndarray
    offsets: list
    links: list
    to_canvas: list
    config: SceneConfig

    @property
    def frame_count(self):
        return len(self.frames)

    def stack(self):
        return stack_frames(self.frames)

    def canvas_truth(self):
        """Clean stack, foreground masks and background on the panorama canvas.

        Returns ``(clean FrameStack, fg matrix, background matrix)``; the
        background matrix repeats the panorama background in every column.
        """
        H, W = self.background.shape
        h, w = self.frames[0].shape
        frames, masks, fgs = [], [], []
        for f, fm, x0 in zip(self.frames, self.fg_masks, self.offsets):
            canvas = np.zeros((H, W))
            mk = np.zeros((H, W), np.uint8)
            fg = np.zeros((H, W), bool)
            canvas[:, x0:x0 + w] = f
            mk[:, x0:x0 + w] = 1
            fg[:, x0:x0 + w] = fm
            frames.append(canvas)
            masks.append(mk)
            fgs.append(fg.ravel(order="F"))
        clean = stack_frames(frames, masks)
        fg = np.stack(fgs, axis=1)
        bg = np.repeat(self.background.ravel(order="F")[:, None], len(frames), axis=1)
        return clean, fg, bg


def smooth_texture(height, width, rng, scale=3.0):
    """Smooth random texture in [0.1, 0.7] with enough structure for corners."""
    noise = rng.standard_normal((height, width))
    coarse = ndimage.gaussian_filter(noise, scale * 2, mode="wrap")
    fine = ndimage.gaussian_filter(rng.standard_normal((height, width)), scale,
                                   mode="wrap")
    yy, xx = np.mgrid[0:height, 0:width]
    waves = (np.sin(2 * np.pi * xx / 37.0 + rng.uniform(0, 6.3))
             * np.cos(2 * np.pi * yy / 29.0 + rng.uniform(0, 6.3)))
    tex = coarse / (coarse.std() + 1e-12) + 0.7 * fine / (fine.std() + 1e-12) + 0.5 * waves
    tex = (tex - tex.min()) / (tex.max() - tex.min() + 1e-12)
    return 0.1 + 0.6 * tex


def object_mask(height, width, top, left, size, shape="square"):
    mask = np.zeros((height, width), dtype=bool)
    if size == 0:
        return mask
    if shape == "square":
        mask[top:top + size, left:left + size] = True
    elif shape == "disc":
        yy, xx = np.mgrid[0:size, 0:size]
        c = (size - 1) / 2.0
        mask[top:top + size, left:left + size] = (yy - c) ** 2 + (xx - c) ** 2 <= (size / 2.0) ** 2
    else:
        raise ValueError("object_shape must be 'square' or 'disc'")
    return mask


def default_trajectory(height, width, frames, size):
    """Top-left corners of an object sweeping left to right, bobbing vertically."""
    t = np.linspace(0.0, 1.0, frames)
    left = np.round(1 + t * (width - size - 2)).astype(int)
    top = np.round((height - size) / 2 + 0.25 * (height - size) * np.sin(2 * np.pi * t)).astype(int)
    return np.column_stack([top, left])


def make_synthetic_scene(cfg=None, **overrides):
    """Generate a static- or panning-camera scene with a moving bright object.

    Trajectories are (frames, 2) integer arrays of the object's top-left
    corner (row, col) in panorama coordinates.
    """
    cfg = cfg or SceneConfig()
    if overrides:
        cfg = SceneConfig(**{**asdict(cfg), **overrides})
    if cfg.frames < 1 or cfg.height < 1 or cfg.width < 1:
        raise ValueError("scene dimensions must be positive")
    rng = np.random.default_rng(cfg.seed)
    p, h, w, s = cfg.frames, cfg.height, cfg.width, cfg.object_size
    if cfg.camera == "static":
        speed = 0
    elif cfg.camera == "pan":
        speed = cfg.pan_speed
    else:
        raise ValueError("camera must be 'static' or 'pan'")
    pano_w = w + speed * (p - 1)
    background = smooth_texture(h, pano_w, rng, cfg.texture_scale)
    offsets = [k * speed for k in range(p)]

    if cfg.trajectory is None:
        if speed:
            # keep the object inside the moving window
            base = default_trajectory(h, w, p, s)
            traj = base + np.column_stack([np.zeros(p, int), offsets])
        else:
            traj = default_trajectory(h, w, p, s)
    else:
        traj = np.asarray(cfg.trajectory, dtype=int).reshape(p, 2)

    frames, masks = [], []
    for k in range(p):
        top, left = int(traj[k, 0]), int(traj[k, 1])
        x0 = offsets[k]
        if s > 0 and (top < 0 or top + s > h or left < x0 or left + s > x0 + w):
            raise ValueError(f"object leaves the field of view at frame {k}")
        pano_mask = object_mask(h, pano_w, top, left, s, cfg.object_shape)
        pano = np.where(pano_mask, cfg.object_value, background)
        frames.append(pano[:, x0:x0 + w].copy())
        masks.append(pano_mask[:, x0:x0 + w].copy())
    links = [translation(-speed, 0) for _ in range(p - 1)]
    to_canvas = [translation(x0, 0) for x0 in offsets]
    return SyntheticScene(frames, background, masks, traj, offsets, links,
                          to_canvas, cfg)
