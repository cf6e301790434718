"""Command-line interface: synth, corrupt, register, decompose, evaluate.

Every command reads and writes plain image sequences (PNG or PGM) plus small
JSON and text sidecars, so each stage can be inspected or swapped out.

Exit codes: 0 on success, 1 on invalid input or configuration, 2 on a
numerical failure (registration breakdown or solver divergence).
"""

import argparse
import json
import logging
import os
import platform
import sys
import tempfile
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__, kernels
from .core import ShapeError, as_image, stack_frames, to_volume
from .evalsim import (SceneConfig, add_gaussian_snr, add_salt_pepper, evaluate,
                      make_synthetic_scene)
from .registration import (Canvas, MatchConfig, RansacConfig, RegistrationConfig,
                           RegistrationError, chain_to_anchor, default_anchor,
                           estimate_homography_ransac, estimate_links,
                           load_correspondences, load_homography,
                           save_homography, warp_to_canvas)
from .solver import DivergenceError, SolverConfig, decompose
from .tvprox import AdmmConfig

SCHEMA_VERSION = 1
IMAGE_SUFFIXES = (".png", ".pgm", ".pnm")
EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("panorpca")


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# file I/O

def _atomic_write(path, write):
    """Call ``write(tmp_path)`` and rename the result onto ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(path, text):
    def w(tmp):
        with open(tmp, "w") as fh:
            fh.write(text)
    _atomic_write(path, w)


def write_json(path, obj):
    write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_image(path):
    """Load a grayscale image as float64 in [0, 1].

    8-bit images are divided by 255 and 16-bit ones by 65535; colour images
    are converted to luminance.
    """
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im).astype(np.int64)
                if arr.min() < 0 or arr.max() > 65535:
                    raise ShapeError(f"{path}: integer image outside 16-bit range")
                return arr.astype(np.float64) / 65535.0
            if im.mode not in ("L", "RGB", "RGBA", "P", "1"):
                raise ShapeError(f"{path}: unsupported image mode {im.mode}")
            if im.mode in ("P", "RGBA", "1"):
                im = im.convert("RGB" if im.mode != "1" else "L")
            arr = np.asarray(im)
    except OSError as exc:
        raise ShapeError(f"cannot read image {path}: {exc}") from exc
    return as_image(arr)


def image_bit_depth(path):
    with Image.open(path) as im:
        return 16 if im.mode.startswith("I") else 8


def write_image(path, img, bits=16):
    """Write a [0, 1] image as 8- or 16-bit grayscale; values are clipped."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if bits == 16:
        arr = np.round(img * 65535.0).astype(np.uint16)
    elif bits == 8:
        arr = np.round(img * 255.0).astype(np.uint8)
    else:
        raise UsageError("bit depth must be 8 or 16")
    fmt = "PPM" if Path(path).suffix.lower() in (".pgm", ".pnm") else "PNG"
    if fmt == "PPM" and bits == 16:
        raise UsageError("16-bit output requires PNG")
    _atomic_write(path, lambda tmp: Image.fromarray(arr).save(tmp, format=fmt))


def list_images(directory):
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"not a directory: {d}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise UsageError(f"no PNG/PGM images in {d}")
    return files


def read_sequence(directory):
    files = list_images(directory)
    return [read_image(f) for f in files], files


def write_sequence(directory, frames, prefix="frame", bits=16):
    names = []
    for k, f in enumerate(frames):
        name = f"{prefix}_{k:04d}.png"
        write_image(Path(directory) / name, f, bits)
        names.append(name)
    return names


# --------------------------------------------------------------------------
# configuration

def load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return cfg


def _section(cfg, name):
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise UsageError(f"config section '{name}' must be an object")
    return dict(sec)


def _override(sec, **flags):
    for k, v in flags.items():
        if v is not None:
            sec[k] = v
    return sec


def solver_config(cfg, args):
    sec = _section(cfg, "solver")
    _override(sec, tau=args.tau, rank=args.rank, lambda_s1=args.lambda_s1,
              lambda_s2=args.lambda_s2, max_iter=args.max_iter,
              rel_tol=args.rel_tol, low_rank_mode=args.low_rank_mode,
              lambda_l=args.lambda_l)
    if args.no_tv:
        sec["tv_block"] = False
    admm = dict(sec.pop("admm", {}))
    _override(admm, rho=args.rho, max_outer=args.admm_iters)
    try:
        return SolverConfig(admm=AdmmConfig(**admm), **sec)
    except TypeError as exc:
        raise UsageError(f"bad solver config: {exc}") from exc


def registration_config(cfg, args):
    sec = _section(cfg, "registration")
    match = dict(sec.get("match", {}))
    ransac = dict(sec.get("ransac", {}))
    _override(ransac, inlier_threshold=args.ransac_threshold,
              iterations=args.ransac_iterations, seed=args.seed)
    try:
        return RegistrationConfig(MatchConfig(**match), RansacConfig(**ransac))
    except TypeError as exc:
        raise UsageError(f"bad registration config: {exc}") from exc


def run_metadata(args, started):
    return {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "command": args.command,
        "kernel_backend": kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": args.seed,
        "duration_seconds": round(time.perf_counter() - started, 6),
    }


# --------------------------------------------------------------------------
# commands

def cmd_synth(args, cfg):
    sec = _section(cfg, "scene")
    _override(sec, height=args.height, width=args.width, frames=args.frames,
              object_size=args.object_size, camera=args.camera,
              pan_speed=args.pan_speed, seed=args.seed)
    try:
        scene_cfg = SceneConfig(**sec)
    except TypeError as exc:
        raise UsageError(f"bad scene config: {exc}") from exc
    started = time.perf_counter()
    scene = make_synthetic_scene(scene_cfg)
    out = Path(args.out)
    frames = write_sequence(out / "frames", scene.frames)
    masks = write_sequence(out / "foreground", [m.astype(float) for m in scene.fg_masks],
                           prefix="mask", bits=8)
    write_image(out / "background.png", scene.background)
    links = []
    for k, H in enumerate(scene.links):
        name = f"link_{k:04d}.txt"
        save_homography_atomic(out / "links" / name, H)
        links.append(name)
    meta = run_metadata(args, started)
    scene_dict = asdict(scene_cfg)
    scene_dict["trajectory"] = scene.trajectory.tolist()
    meta.update(kind="scene", scene=scene_dict, frames=frames, foreground=masks,
                links=links, background="background.png",
                offsets=[int(o) for o in scene.offsets])
    write_json(out / "scene.json", meta)
    log.info("wrote %d frames to %s", len(frames), out)
    return EXIT_OK


def save_homography_atomic(path, H):
    _atomic_write(path, lambda tmp: save_homography(tmp, H))


def cmd_corrupt(args, cfg):
    sec = _section(cfg, "corrupt")
    _override(sec, salt_pepper=args.salt_pepper, snr_db=args.snr)
    sp, snr = sec.get("salt_pepper"), sec.get("snr_db")
    if (sp is None) == (snr is None):
        raise UsageError("give exactly one of --salt-pepper and --snr")
    started = time.perf_counter()
    frames, files = read_sequence(args.input)
    seed = args.seed if args.seed is not None else 0
    data = np.stack(frames)
    if sp is not None:
        noisy = add_salt_pepper(data, float(sp), seed=seed)
    else:
        noisy = add_gaussian_snr(data, float(snr), seed=seed)
    out = Path(args.out)
    names = []
    for f, src in zip(noisy, files):
        bits = args.bit_depth or image_bit_depth(src)
        name = src.with_suffix(".png").name
        write_image(out / name, f, bits)
        names.append(name)
    meta = run_metadata(args, started)
    meta.update(kind="corrupted", source=str(args.input), frames=names,
                salt_pepper=sp, snr_db=snr)
    write_json(out / "corrupt.json", meta)
    return EXIT_OK


def _load_links(directory, count):
    files = sorted(Path(directory).glob("*.txt"))
    if len(files) != count:
        raise UsageError(f"{directory}: expected {count} link files, found {len(files)}")
    return [load_homography(f) for f in files]


def _links_from_correspondences(directory, count, rcfg):
    files = sorted(Path(directory).glob("*.txt"))
    if len(files) != count:
        raise UsageError(f"{directory}: expected {count} correspondence files, "
                         f"found {len(files)}")
    return [estimate_homography_ransac(load_correspondences(f), rcfg.ransac)[0]
            for f in files]


def cmd_register(args, cfg):
    started = time.perf_counter()
    frames, files = read_sequence(args.input)
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise ShapeError("all frames must share one size")
    p = len(frames)
    rcfg = registration_config(cfg, args)
    sources = [args.identity, args.links is not None, args.correspondences is not None]
    if sum(sources) > 1:
        raise UsageError("--identity, --links and --correspondences are exclusive")
    if p == 1 or args.identity:
        links, source = [np.eye(3) for _ in range(p - 1)], "identity"
    elif args.links is not None:
        links, source = _load_links(args.links, p - 1), "imported links"
    elif args.correspondences is not None:
        links = _links_from_correspondences(args.correspondences, p - 1, rcfg)
        source = "imported correspondences"
    else:
        links, source = estimate_links(frames, rcfg), "estimated"
    anchor = default_anchor(p) if args.anchor is None else args.anchor
    if not 0 <= anchor < p:
        raise UsageError(f"anchor {anchor} outside 0..{p - 1}")
    to_anchor = chain_to_anchor(links, anchor)
    stack, canvas = warp_to_canvas(frames, to_anchor)

    out = Path(args.out)
    names = write_sequence(out / "frames", stack.frames())
    masks = write_sequence(out / "masks", stack.masks(), prefix="mask", bits=8)
    homs = []
    for k, H in enumerate(to_anchor):
        name = f"H_{k:04d}.txt"
        save_homography_atomic(out / "homographies" / name, H)
        homs.append(name)
    link_names = []
    for k, H in enumerate(links):
        name = f"link_{k:04d}.txt"
        save_homography_atomic(out / "links" / name, H)
        link_names.append(name)
    meta = run_metadata(args, started)
    meta.update(kind="registration", source=[str(f) for f in files],
                frame_height=frames[0].shape[0], frame_width=frames[0].shape[1],
                canvas={"height": canvas.height, "width": canvas.width,
                        "offset_x": canvas.offset_x, "offset_y": canvas.offset_y},
                anchor=anchor, link_source=source, frames=names, masks=masks,
                homographies=homs, links=link_names,
                registration=asdict(rcfg),
                encoding="frames: 16-bit PNG, value/65535; masks: 8-bit PNG, 0 or 255")
    write_json(out / "manifest.json", meta)
    log.info("canvas %dx%d from %d frames (%s)", canvas.height, canvas.width, p, source)
    return EXIT_OK


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        meta = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read manifest {path}: {exc}") from exc
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise UsageError(f"{path}: unsupported schema_version {meta.get('schema_version')}")
    for key in ("frames", "masks", "canvas"):
        if key not in meta:
            raise UsageError(f"{path}: missing '{key}'")
    return meta, path.parent


def load_registered(manifest):
    meta, root = load_manifest(manifest)
    frames = [read_image(root / "frames" / n) for n in meta["frames"]]
    masks = [read_image(root / "masks" / n) > 0.5 for n in meta["masks"]]
    return stack_frames(frames, masks), meta, root


def _signed(x):
    """Map [-1, 1] to [0, 1] for display of signed components."""
    return 0.5 * (np.asarray(x) + 1.0)


def _montage(panels, gap=2):
    h = panels[0].shape[0]
    sep = np.ones((h, gap))
    parts = []
    for k, p in enumerate(panels):
        if k:
            parts.append(sep)
        parts.append(np.clip(p, 0.0, 1.0))
    return np.hstack(parts)


def cmd_decompose(args, cfg):
    started = time.perf_counter()
    stack, meta, _ = load_registered(args.manifest)
    scfg = solver_config(cfg, args)
    out = Path(args.out)
    try:
        D, trace = decompose(stack, scfg)
    except DivergenceError as exc:
        if exc.trace is not None:
            write_text(out / "trace.json", exc.trace.to_json(indent=2) + "\n")
        raise
    shape3 = stack.shape3
    vols = {name: to_volume(X, shape3) for name, X in
            (("L", D.L), ("S1", D.S1), ("S2", D.S2), ("LS2", D.L + D.S2))}
    p = shape3[2]
    seqs = {}
    for name, vol in vols.items():
        frames = [vol[:, :, k] for k in range(p)]
        if name in ("S1", "S2"):
            frames = [_signed(f) for f in frames]
        seqs[name] = write_sequence(out / name, frames)
    _atomic_write(out / "components.npz",
                  lambda tmp: np.savez(tmp, L=D.L, S1=D.S1, S2=D.S2,
                                       mask=stack.mask, shape=np.array(shape3)))
    Yv = stack.volume()
    montages = []
    for k in sorted({int(round(x)) for x in np.linspace(0, p - 1, min(p, args.montage))}):
        panel = _montage([Yv[:, :, k], vols["L"][:, :, k],
                          _signed(vols["S1"][:, :, k]), np.abs(vols["S2"][:, :, k]),
                          vols["LS2"][:, :, k]])
        name = f"montage_{k:04d}.png"
        write_image(out / "montage" / name, panel, bits=8)
        montages.append(name)
    write_text(out / "trace.json", trace.to_json(indent=2) + "\n")
    run = run_metadata(args, started)
    run.update(kind="decomposition", source_manifest=str(args.manifest),
               canvas=meta["canvas"], frame_count=p, solver=scfg.to_dict(),
               admm_truncated=scfg.admm.max_outer, warm_start=scfg.admm.warm_start,
               iterations=trace.iterations, converged=trace.converged,
               sequences=seqs, montages=montages, trace="trace.json",
               components="components.npz",
               encoding=("L, LS2: 16-bit PNG value/65535 clipped to [0,1]; S1, S2: "
                         "16-bit PNG of (value+1)/2; exact floats in components.npz; "
                         "montage panels: input | L | S1 | |S2| | L+S2"))
    write_json(out / "manifest.json", run)
    log.info("%d iterations, converged=%s", trace.iterations, trace.converged)
    return EXIT_OK


def _truth_from_scene(scene_dir):
    meta = json.loads((Path(scene_dir) / "scene.json").read_text())
    root = Path(scene_dir)
    frames = [read_image(root / "frames" / n) for n in meta["frames"]]
    fg = [read_image(root / "foreground" / n) > 0.5 for n in meta["foreground"]]
    return frames, fg


def cmd_evaluate(args, cfg):
    started = time.perf_counter()
    sec = _section(cfg, "metrics")
    _override(sec, threshold_mode=args.threshold_mode, threshold=args.threshold)
    mode = sec.get("threshold_mode", "otsu")
    thr = float(sec.get("threshold", 0.1))
    frames, fg = _truth_from_scene(args.truth)
    est_dir = Path(args.estimate)
    if (est_dir / "scene.json").exists():
        # a scene compared with a scene: its own frames and masks are the estimate
        est_frames, est_fg = _truth_from_scene(est_dir)
        clean = np.stack([f.ravel(order="F") for f in frames], axis=1)
        truth_fg = np.stack([m.ravel(order="F") for m in fg], axis=1)
        estimate = np.stack([f.ravel(order="F") for f in est_frames], axis=1)
        foreground = np.stack([m.ravel(order="F") for m in est_fg], axis=1).astype(float)
        observed = None
    else:
        run = json.loads((est_dir / "manifest.json").read_text())
        comp = np.load(est_dir / run["components"])
        shape3 = tuple(int(v) for v in comp["shape"])
        reg_meta, reg_root = load_manifest(run["source_manifest"])
        homs = [load_homography(reg_root / "homographies" / n)
                for n in reg_meta["homographies"]]
        if len(homs) != len(frames):
            raise UsageError("truth and decomposition frame counts differ")
        c = reg_meta["canvas"]
        canvas = Canvas(c["height"], c["width"], c["offset_x"], c["offset_y"])
        clean_stack, _ = warp_to_canvas(frames, homs, canvas)
        fg_stack, _ = warp_to_canvas([m.astype(float) for m in fg], homs, canvas)
        if clean_stack.shape3 != shape3:
            raise ShapeError("warped truth does not match the decomposition canvas")
        clean = clean_stack.data
        truth_fg = fg_stack.data > 0.5
        estimate = comp["L"] + comp["S2"]
        foreground = comp["S1"] if args.foreground == "S1" else comp["S2"]
        observed = comp["mask"].astype(bool)
    if clean.shape != estimate.shape:
        raise ShapeError("truth and estimate sizes differ")
    report = evaluate(clean, estimate, foreground, truth_fg, observed=observed,
                      threshold_mode=mode, threshold=thr)
    report.extra = {"foreground_component": args.foreground}
    out = Path(args.out)
    write_text(out / "report.json", report.to_json() + "\n")
    meta = run_metadata(args, started)
    meta.update(kind="evaluation", truth=str(args.truth), estimate=str(args.estimate),
                report="report.json")
    write_json(out / "manifest.json", meta)
    print(report.to_json())
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing

def build_parser():
    parser = argparse.ArgumentParser(
        prog="panorpca",
        description="Panoramic robust PCA: registration, decomposition and evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with per-command settings")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")
        return p

    p = common(sub.add_parser("synth", help="generate a synthetic scene"))
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--object-size", type=int)
    p.add_argument("--camera", choices=("static", "pan"))
    p.add_argument("--pan-speed", type=int)

    p = common(sub.add_parser("corrupt", help="inject salt-and-pepper or Gaussian noise"))
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--salt-pepper", type=float)
    p.add_argument("--snr", type=float, help="Gaussian noise SNR in dB")
    p.add_argument("--bit-depth", type=int, choices=(8, 16))

    p = common(sub.add_parser("register", help="register frames onto a canvas"))
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--anchor", type=int)
    p.add_argument("--identity", action="store_true",
                   help="static camera: skip estimation")
    p.add_argument("--links", help="directory of frame-to-frame homography files")
    p.add_argument("--correspondences",
                   help="directory of per-link correspondence files 'x y x~ y~'")
    p.add_argument("--ransac-threshold", type=float)
    p.add_argument("--ransac-iterations", type=int)

    p = common(sub.add_parser("decompose", help="run the robust decomposition"))
    p.add_argument("--manifest", required=True, help="registration manifest or its directory")
    p.add_argument("--tau", type=float)
    p.add_argument("--rank", type=int)
    p.add_argument("--lambda-s1", type=float)
    p.add_argument("--lambda-s2", type=float)
    p.add_argument("--lambda-l", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--rel-tol", type=float)
    p.add_argument("--low-rank-mode", choices=("optshrink", "svt"))
    p.add_argument("--no-tv", action="store_true", help="drop the TV block (plain RPCA)")
    p.add_argument("--rho", type=float)
    p.add_argument("--admm-iters", type=int)
    p.add_argument("--montage", type=int, default=4, help="number of montage frames")

    p = common(sub.add_parser("evaluate", help="score an estimate against a scene"))
    p.add_argument("--truth", required=True, help="scene directory from 'synth'")
    p.add_argument("--estimate", required=True,
                   help="decomposition directory, or another scene directory")
    p.add_argument("--threshold-mode", choices=("otsu", "fixed"))
    p.add_argument("--threshold", type=float)
    p.add_argument("--foreground", choices=("S1", "S2"), default="S2")
    return parser


COMMANDS = {"synth": cmd_synth, "corrupt": cmd_corrupt, "register": cmd_register,
            "decompose": cmd_decompose, "evaluate": cmd_evaluate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is None and "seed" in cfg:
            args.seed = int(cfg["seed"])
        return COMMANDS[args.command](args, cfg)
    except (DivergenceError, RegistrationError, np.linalg.LinAlgError) as exc:
        print(f"panorpca {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ShapeError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"panorpca {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
