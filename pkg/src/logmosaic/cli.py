"""``logmosaic`` command line: build mosaics and benchmark against Kourogi's method.

Exit codes: 0 success, 1 too many frames failed to register, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .affine import AffineMotion
from .image_core import RegionMask
from .imageio import ImageFormatError, read_mask, read_raster, write_image, write_pgm
from .kourogi import InitializationFailedError, KourogiConfig, MotionModel, kourogi_iterate
from .matching import Neighborhood, SearchConfig, TemplateSpec
from .mosaic import CompositePolicy, FrameStatus, build_mosaic
from .registration import (InitMode, InsufficientAreaError, RegistrationConfig,
                           RegistrationFailedError, register)
from .synth import Illumination, SynthSpec, Texture, corner_error, generate_sequence, load_truth

logger = logging.getLogger("logmosaic")

REPORT_SCHEMA_VERSION = 1
BENCH_HEADER = ["method", "frame", "corner_error_px", "wall_ms", "fits", "iterations",
                "probes", "shifts"]

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _add_registration_args(p: argparse.ArgumentParser) -> None:
    d = RegistrationConfig()
    g = p.add_argument_group("registration")
    g.add_argument("--landmarks", type=int, default=d.n_landmarks, help="landmark count N")
    g.add_argument("--cmin", type=float, default=d.c_min, help="correlation threshold")
    g.add_argument("--amin", type=float, default=d.a_min, help="minimum acceptance rate")
    g.add_argument("--emax", type=float, default=d.e_max, help="maximum residual (px)")
    g.add_argument("--winit", type=int, default=d.search.w_init, help="initial search step")
    g.add_argument("--template", type=int, default=d.template.half_extent,
                   help="template half extent (window is 2h+1 square)")
    g.add_argument("--neighborhood", choices=[n.value for n in Neighborhood],
                   default=d.search.neighborhood.value)
    g.add_argument("--init", choices=[m.value for m in InitMode], default=d.init_mode.value)
    g.add_argument("--kourogi-iters", type=int, default=d.kourogi.max_iters)
    g.add_argument("--kourogi-T", type=float, default=d.kourogi.T)
    g.add_argument("--seed", type=int, default=d.seed, help="seed for jittered layouts and synthesis")
    g.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="parallel landmark searches (output does not depend on it)")


def _config_from_args(args) -> RegistrationConfig:
    try:
        search = SearchConfig(w_init=args.winit, neighborhood=args.neighborhood)
        return RegistrationConfig(
            n_landmarks=args.landmarks, c_min=args.cmin, a_min=args.amin, e_max=args.emax,
            init_mode=args.init, template=TemplateSpec(args.template), search=search,
            seed=args.seed,
            kourogi=KourogiConfig(T=args.kourogi_T, max_iters=args.kourogi_iters))
    except ValueError as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="logmosaic",
                                     description="Affine frame registration and mosaicking.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mosaic", help="register a frame sequence and build a mosaic")
    m.add_argument("--frames", help="glob of numbered PGM/PNG frames")
    m.add_argument("--manifest", help="text file listing frames in order (overrides sorting)")
    m.add_argument("--mask", help="mask image, sample > 0 is valid (default: full frame)")
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--report", help="report path (default: OUT/report.json)")
    m.add_argument("--composite", choices=[c.value for c in CompositePolicy],
                   default=CompositePolicy.LAST.value)
    m.add_argument("--format", choices=["png", "pgm"], default="png", help="mosaic file type")
    m.add_argument("--min-ok", type=float, default=1.0,
                   help="fraction of frames that must register for exit status 0")
    _add_registration_args(m)

    b = sub.add_parser("bench", help="compare against full-affine Kourogi iterations")
    b.add_argument("--frames", help="glob of frames; consecutive pairs are benchmarked")
    b.add_argument("--manifest", help="text file listing frames in order")
    b.add_argument("--mask", help="mask image (default: full frame)")
    b.add_argument("--truth", help="ground-truth JSON sidecar (as written by the synthesizer)")
    b.add_argument("--csv", help="CSV output path (default: stdout)")
    s = b.add_argument_group("synthetic pair (used when --frames is absent)")
    s.add_argument("--size", type=int, default=256)
    s.add_argument("--texture", choices=[t.value for t in Texture],
                   default=Texture.SMOOTHED_NOISE.value)
    s.add_argument("--tx", type=float, default=3.0)
    s.add_argument("--ty", type=float, default=-2.0)
    s.add_argument("--scale", type=float, default=0.0, help="relative scale about the centre")
    s.add_argument("--gain", type=float, default=1.0)
    s.add_argument("--offset", type=float, default=0.0)
    s.add_argument("--ramp", type=float, default=0.0)
    _add_registration_args(b)
    return parser


def _resolve_frames(args) -> list[Path]:
    if args.manifest:
        try:
            lines = Path(args.manifest).read_text().splitlines()
        except OSError as exc:
            raise UsageError(f"cannot read manifest: {exc}") from exc
        base = Path(args.manifest).parent
        paths = [base / ln.strip() if not Path(ln.strip()).is_absolute() else Path(ln.strip())
                 for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    elif args.frames:
        paths = [Path(p) for p in sorted(glob.glob(args.frames))]
    else:
        raise UsageError("give --frames or --manifest")
    if not paths:
        raise UsageError("no frames matched")
    return paths


def _load_frames(paths, mask_path):
    try:
        rasters = [read_raster(p) for p in paths]
        mask = read_mask(mask_path) if mask_path else None
    except (OSError, ImageFormatError, ValueError) as exc:
        raise UsageError(f"cannot read input: {exc}") from exc
    shape = rasters[0].shape
    for p, r in zip(paths, rasters):
        if r.shape != shape:
            raise UsageError(f"{p}: size {r.shape} differs from {shape}")
    if mask is None:
        mask = RegionMask.full(rasters[0].width, rasters[0].height)
    elif mask.shape != shape:
        raise UsageError(f"mask size {mask.shape} differs from frame size {shape}")
    return rasters, mask


def run_mosaic_command(args) -> int:
    config = _config_from_args(args)
    paths = _resolve_frames(args)
    rasters, mask = _load_frames(paths, args.mask)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {out}: {exc}") from exc

    canvas, reports = build_mosaic([(r, mask) for r in rasters], config,
                                   composite=args.composite, threads=max(1, args.threads))
    mosaic_path = out / f"mosaic.{args.format}"
    report_path = Path(args.report) if args.report else out / "report.json"
    n_ok = sum(r.status is FrameStatus.OK for r in reports)
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_version": __version__,
        "config": config.to_dict(),
        "composite": CompositePolicy(args.composite).value,
        "inputs": [str(p) for p in paths],
        "mask": args.mask,
        "canvas": {"width": canvas.shape[1], "height": canvas.shape[0],
                   "origin": list(canvas.origin)},
        "frames_ok": n_ok,
        "frames": [r.to_dict() for r in reports],
    }
    try:
        write_image(mosaic_path, canvas.export())
        write_pgm(out / "coverage.pgm", canvas.coverage())
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot write output: {exc}") from exc

    logger.info("%d/%d frames registered; mosaic %s", n_ok, len(reports), mosaic_path)
    return EXIT_OK if n_ok >= args.min_ok * len(reports) - 1e-9 else EXIT_PARTIAL


def _bench_inputs(args):
    """Frame pairs with their true step motions (None when unknown)."""
    if args.frames or args.manifest:
        paths = _resolve_frames(args)
        if len(paths) < 2:
            raise UsageError("bench needs at least two frames")
        rasters, mask = _load_frames(paths, args.mask)
        steps = [None] * (len(rasters) - 1)
        if args.truth:
            try:
                steps = load_truth(args.truth)["steps"]
            except (OSError, ValueError, KeyError) as exc:
                raise UsageError(f"cannot read truth sidecar: {exc}") from exc
            if len(steps) != len(rasters) - 1:
                raise UsageError("truth sidecar does not match the frame count")
        return [(rasters[k], rasters[k + 1], mask, steps[k]) for k in range(len(rasters) - 1)]
    size = args.size
    c = (size - 1) / 2.0
    s = args.scale
    truth = AffineMotion(s, 0.0, -s * c + args.tx, 0.0, s, -s * c + args.ty)
    try:
        spec = SynthSpec(width=size, height=size, texture=args.texture, seed=args.seed,
                         motion_truth=truth,
                         illumination=Illumination(gain=args.gain, offset=args.offset,
                                                   ramp=args.ramp))
        frames = generate_sequence(spec)
    except ValueError as exc:
        raise UsageError(f"invalid synthetic pair: {exc}") from exc
    return [(frames[0].raster, frames[1].raster, frames[0].mask, truth)]


def run_bench_command(args) -> int:
    config = _config_from_args(args)
    pairs = _bench_inputs(args)
    kcfg = KourogiConfig(T=args.kourogi_T, max_iters=args.kourogi_iters,
                         model=MotionModel.FULL_AFFINE)
    rows = []
    failures = 0
    for k, (prev, curr, mask, truth) in enumerate(pairs, start=1):
        w, h = prev.width, prev.height

        def err(motion):
            if truth is None:
                return ""
            if motion is None:
                return "inf"
            return f"{corner_error(motion, truth, w, h):.6f}"

        t0 = time.perf_counter()
        try:
            kr = kourogi_iterate(prev, curr, mask, kcfg)
            k_motion, k_iters = kr.motion, kr.iterations
        except InitializationFailedError as exc:
            logger.info("pair %d: kourogi failed: %s", k, exc)
            k_motion, k_iters = None, kcfg.max_iters
        k_ms = (time.perf_counter() - t0) * 1e3
        rows.append(["kourogi_full_affine", k, err(k_motion), f"{k_ms:.3f}",
                     k_iters if k_motion is not None else 0, k_iters, 0, 0])

        t0 = time.perf_counter()
        try:
            res = register(prev, curr, mask, config, threads=max(1, args.threads))
            p_motion, diag = res.motion, res.diagnostics
        except (RegistrationFailedError, InsufficientAreaError) as exc:
            logger.info("pair %d: registration failed: %s", k, exc)
            failures += 1
            p_motion = None
            result = getattr(exc, "result", None)
            diag = result.diagnostics if result is not None else {}
            diag.setdefault("fits", getattr(exc, "fits", 0))
        p_ms = (time.perf_counter() - t0) * 1e3
        rows.append(["pmotionlog", k, err(p_motion), f"{p_ms:.3f}", diag.get("fits", 0),
                     diag.get("kourogi_iterations", 0), diag.get("probes", 0),
                     diag.get("shifts", 0)])

    try:
        fh = open(args.csv, "w", newline="") if args.csv else sys.stdout
    except OSError as exc:
        raise UsageError(f"cannot write {args.csv}: {exc}") from exc
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BENCH_HEADER)
        writer.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK if failures == 0 else EXIT_PARTIAL


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"mosaic": run_mosaic_command, "bench": run_bench_command}
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"logmosaic: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
