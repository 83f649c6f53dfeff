"""Command-line entry point: ``rgbp <command> [flags]``.

Commands::

    synth       seeded synthetic scenes -> raw mosaics, ground truth, annotations.json
    stokes      raw mosaics or quads -> s0/s1/s2 and rgb/aolp/dolp tensors (+ PNGs)
    demosaic    raw mosaics -> quad tensors (4, H, W, C), angle order 0, 45, 90, 135
    init-weights  seeded random network weights -> .rgbpw file
    forward     rgb/aolp/dolp triplets + weights + config -> detections JSON
    eval        detections JSON + ground-truth JSON -> "AP AP50 AP75"
    gradcheck   analytic vs finite-difference gradients, one line per case

Exit status: 0 success, 1 invalid input (including a failed gradient
check), 2 internal error, 64 usage error. ``RGBP_THREADS`` caps the
number of worker threads; results do not depend on it.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataset_io import (
    SUFFIX,
    AnnotationSet,
    DetectionSet,
    ImageInfo,
    SynthParams,
    list_stems,
    load_annotations,
    load_tensor,
    load_triplet,
    save_annotations,
    save_tensor,
    save_triplet,
    stem_for,
    synth_scene,
    to_uint8,
    triplet_from_quad,
)
from .detect_eval import coco_ap
from .errors import RGBPError, ValidationError
from .mosaic import MosaicFrame, MosaicPattern, extract_quad, split_quad
from .pcdnet.config import NetworkConfig, parse_value
from .pcdnet.network import detect
from .pcdnet.weights import init_weights, load_weights, save_weights
from .polar_core import QuadIntensities
from .prng import SplitMix64

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_INTERNAL = 2
EXIT_USAGE = 64

log = logging.getLogger("rgbp")


@dataclass
class CliConfig:
    subcommand: str
    inp: Path | None = None
    out: Path | None = None
    seed: int | None = None
    overrides: dict = field(default_factory=dict)
    verbosity: int = 0
    options: dict = field(default_factory=dict)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------- helpers


def thread_count() -> int:
    raw = os.environ.get("RGBP_THREADS")
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"RGBP_THREADS must be a positive integer, got {raw!r}", "RGBP_THREADS") from None
    if n < 1:
        raise ValidationError(f"RGBP_THREADS must be a positive integer, got {raw!r}", "RGBP_THREADS")
    return n


def _pmap(fn, items):
    """Order-preserving map over at most ``thread_count()`` threads."""
    items = list(items)
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _image_id(stem: str):
    return int(stem) if stem.isdigit() else stem


def _require_dir(path: Path | None, flag: str) -> Path:
    if path is None:
        raise UsageError(f"{flag} is required")
    if not path.is_dir():
        raise ValidationError(f"{flag} {path} is not a directory", flag)
    return path


def _require_file(path: Path | None, flag: str) -> Path:
    if path is None:
        raise UsageError(f"{flag} is required")
    if not path.is_file():
        raise ValidationError(f"{flag} {path} does not exist", flag)
    return path


def _network_config(cfg: CliConfig) -> NetworkConfig:
    path = cfg.options.get("config")
    net = NetworkConfig.load(_require_file(path, "--config")) if path else NetworkConfig()
    if cfg.overrides:
        net = net.with_overrides(**cfg.overrides)
    if cfg.seed is not None:
        net = net.with_overrides(seed=cfg.seed)
    return net


def _pattern(cfg: CliConfig) -> MosaicPattern:
    bayer = cfg.options.get("bayer")
    return MosaicPattern.parse(cfg.options.get("angles"), None if bayer in (None, "none") else bayer)


def _raw_inputs(root: Path) -> list[tuple[str, Path]]:
    """``(stem, path)`` pairs from ``raw/`` (mosaics) or ``quad/`` (quads)."""
    for sub in ("raw", "quad"):
        d = root / sub
        if d.is_dir():
            files = sorted(d.glob(f"*{SUFFIX}"))
            if files:
                return [(p.name[: -len(SUFFIX)], p) for p in files]
    raise ValidationError(f"no {SUFFIX} files under {root}/raw or {root}/quad", str(root))


def _read_quad(path: Path, pattern: MosaicPattern) -> QuadIntensities:
    arr = load_tensor(path).astype(np.float64)
    if arr.ndim == 2:
        return extract_quad(MosaicFrame(arr, pattern))
    if arr.ndim in (3, 4) and arr.shape[0] == 4:
        return QuadIntensities(*arr)
    raise ValidationError(f"expected a 2-D mosaic or a (4, H, W[, C]) quad, got shape {arr.shape}", str(path))


def _write_png(path: Path, img: np.ndarray) -> None:
    from PIL import Image

    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    Image.fromarray(img).save(path, format="PNG")


# ---------------------------------------------------------------- commands


def cmd_synth(cfg: CliConfig) -> int:
    out = cfg.out
    if out is None:
        raise UsageError("--out is required")
    o = cfg.options
    lo, hi = o["boxes"]
    frames = o["frames"]
    if frames < 1:
        raise ValidationError("--frames must be >= 1", "--frames")
    base = SplitMix64(cfg.seed or 0)
    pattern = _pattern(cfg) if not o["mono"] else MosaicPattern.parse(o.get("angles"), None)
    params = [
        SynthParams(height=o["height"], width=o["width"], boxes=(lo, hi), noise=o["noise"],
                    seed=int(base.fork(k).state), color=not o["mono"])
        for k in range(frames)
    ]
    scenes = _pmap(lambda k: synth_scene(params[k], image_id=k, pattern=pattern), range(frames))
    (out / "raw").mkdir(parents=True, exist_ok=True)
    images, boxes = [], []
    for k, sc in enumerate(scenes):
        stem = stem_for(k)
        save_tensor(out / "raw" / f"{stem}{SUFFIX}", sc.frame.data.astype(np.float64))
        save_triplet(out / "gt", sc.truth, stem)
        images.extend(sc.annotations.images)
        boxes.extend(sc.annotations.annotations)
    save_annotations(out / "annotations.json", AnnotationSet(images, boxes))
    log.info("wrote %d frames to %s", frames, out)
    return EXIT_OK


def cmd_stokes(cfg: CliConfig) -> int:
    root = _require_dir(cfg.inp, "--in")
    if cfg.out is None:
        raise UsageError("--out is required")
    pattern = _pattern(cfg)
    inputs = _raw_inputs(root)
    viz = cfg.options.get("viz", False)
    out = cfg.out
    for sub in ("s0", "s1", "s2") + (("viz",) if viz else ()):
        (out / sub).mkdir(parents=True, exist_ok=True)

    def one(item):
        stem, path = item
        sample, stokes = triplet_from_quad(_read_quad(path, pattern), _image_id(stem))
        for name in ("s0", "s1", "s2"):
            save_tensor(out / name / f"{stem}{SUFFIX}", getattr(stokes, name).astype(np.float32))
        save_triplet(out, sample, stem)
        if viz:
            a = sample.aolp[0].transpose(1, 2, 0)
            d = sample.dolp[0].transpose(1, 2, 0)
            _write_png(out / "viz" / f"{stem}_aolp.png", to_uint8(aolp=a))
            _write_png(out / "viz" / f"{stem}_dolp.png", to_uint8(dolp=d))

    _pmap(one, inputs)
    log.info("processed %d frames into %s", len(inputs), out)
    return EXIT_OK


def cmd_demosaic(cfg: CliConfig) -> int:
    root = _require_dir(cfg.inp, "--in")
    if cfg.out is None:
        raise UsageError("--out is required")
    pattern = _pattern(cfg)
    files = sorted((root / "raw").glob(f"*{SUFFIX}")) if (root / "raw").is_dir() else []
    if not files:
        raise ValidationError(f"no {SUFFIX} files under {root}/raw", str(root))
    (cfg.out / "quad").mkdir(parents=True, exist_ok=True)

    def one(path):
        arr = load_tensor(path)
        if arr.ndim != 2:
            raise ValidationError(f"mosaic must be 2-D, got shape {arr.shape}", str(path))
        frame = MosaicFrame(arr, pattern)
        quad = extract_quad(frame) if pattern.is_color else split_quad(frame)
        save_tensor(cfg.out / "quad" / path.name, np.stack(quad.planes()))

    _pmap(one, files)
    return EXIT_OK


def cmd_init_weights(cfg: CliConfig) -> int:
    if cfg.out is None:
        raise UsageError("--out is required")
    net = _network_config(cfg)
    dtype = np.float32 if cfg.options.get("dtype") == "float32" else np.float64
    cfg.out.parent.mkdir(parents=True, exist_ok=True)
    save_weights(cfg.out, init_weights(net, dtype=dtype))
    return EXIT_OK


def cmd_forward(cfg: CliConfig) -> int:
    root = _require_dir(cfg.inp, "--in")
    if cfg.out is None:
        raise UsageError("--out is required")
    net = _network_config(cfg)
    wpath = cfg.options.get("weights")
    weights = load_weights(_require_file(wpath, "--weights"), net) if wpath else init_weights(net)
    stems = list_stems(root)
    if not stems:
        raise ValidationError(f"no triplets under {root}/rgb", str(root))

    def one(stem):
        sample = load_triplet(root, stem)
        dets = detect(sample.rgb, sample.aolp, sample.dolp, net, weights, image_ids=[_image_id(stem)])
        h, w = sample.hw
        return ImageInfo(_image_id(stem), w, h, stem), dets

    results = _pmap(one, stems)
    images = [r[0] for r in results]
    dets = [d for r in results for d in r[1]]
    cfg.out.parent.mkdir(parents=True, exist_ok=True)
    save_annotations(cfg.out, DetectionSet(images, dets))
    log.info("%d detections over %d images", len(dets), len(images))
    return EXIT_OK


def cmd_eval(cfg: CliConfig) -> int:
    det_path = _require_file(cfg.options.get("dets"), "--dets")
    gt_path = _require_file(cfg.options.get("gt"), "--gt")
    gt = load_annotations(gt_path)
    if not isinstance(gt, AnnotationSet):
        raise ValidationError("ground-truth file must not carry scores", str(gt_path))
    dets = load_annotations(det_path)
    if isinstance(dets, AnnotationSet):
        if dets.annotations:
            raise ValidationError("detections file needs a score on every entry", str(det_path))
        dets = DetectionSet(dets.images, [])
    res = coco_ap(dets.detections, gt.annotations, image_sizes=gt.sizes(), image_ids=[im.id for im in gt.images])
    print("AP AP50 AP75")
    print(res.row())
    return EXIT_OK


def cmd_gradcheck(cfg: CliConfig) -> int:
    from .gradcases import run_group

    reports = run_group(cfg.options["module"], cfg.seed or 0)
    for r in reports:
        print(r.line())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_INVALID


COMMANDS = {
    "synth": cmd_synth,
    "stokes": cmd_stokes,
    "demosaic": cmd_demosaic,
    "init-weights": cmd_init_weights,
    "forward": cmd_forward,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def run(cfg: CliConfig) -> int:
    """Execute one command; returns the exit status."""
    try:
        return COMMANDS[cfg.subcommand](cfg)
    except UsageError as exc:
        print(f"rgbp {cfg.subcommand}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RGBPError, FileNotFoundError) as exc:
        print(f"rgbp {cfg.subcommand}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"rgbp {cfg.subcommand}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


# ---------------------------------------------------------------- parsing


def _box_range(text: str) -> tuple[int, int]:
    try:
        parts = [int(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or LO,HI, got {text!r}") from None
    if len(parts) == 1:
        return parts[0], parts[0]
    if len(parts) == 2:
        return parts[0], parts[1]
    raise argparse.ArgumentTypeError(f"expected N or LO,HI, got {text!r}")


def _override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = (p.strip() for p in text.split("=", 1))
    try:
        return key, parse_value(key, value)
    except (ValueError, RGBPError):
        raise argparse.ArgumentTypeError(f"bad override {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    from .gradcases import MODULE_GROUPS

    p = _Parser(prog="rgbp", description="RGB-polarization toolkit: Stokes maps, a toy fusion detector, AP evaluation.")
    p.add_argument("--version", action="version", version=f"rgbp {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def pattern_flags(sp):
        sp.add_argument("--angles", default=None, help='polarizer layout, e.g. "90,45;135,0"')
        sp.add_argument("--bayer", default="RG;GB", help='Bayer layout, e.g. "RG;GB", or "none" for monochrome')

    def net_flags(sp):
        sp.add_argument("--config", type=Path, help="network config file (key = value lines)")
        sp.add_argument("--set", dest="overrides", type=_override, action="append", default=[],
                        metavar="KEY=VALUE", help="override one config entry; repeatable")
        sp.add_argument("--seed", type=int, help="weight seed (overrides the config seed)")

    sp = sub.add_parser("synth", help="generate synthetic polarized scenes")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--frames", type=int, default=1)
    sp.add_argument("--boxes", type=_box_range, default=(1, 4), help="box count N or range LO,HI")
    sp.add_argument("--noise", type=float, default=0.0, help="Gaussian intensity noise sigma")
    sp.add_argument("--height", type=int, default=64)
    sp.add_argument("--width", type=int, default=64)
    sp.add_argument("--mono", action="store_true", help="monochrome sensor (no Bayer layer)")
    pattern_flags(sp)

    sp = sub.add_parser("stokes", help="raw mosaics or quads to Stokes and polarization maps")
    sp.add_argument("--in", dest="inp", type=Path, required=True, help="directory with raw/ or quad/")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--viz", action="store_true", help="also write 8-bit AoLP/DoLP PNGs under viz/")
    pattern_flags(sp)

    sp = sub.add_parser("demosaic", help="raw mosaics to quad tensors")
    sp.add_argument("--in", dest="inp", type=Path, required=True, help="directory with raw/")
    sp.add_argument("--out", type=Path, required=True)
    pattern_flags(sp)

    sp = sub.add_parser("init-weights", help="write seeded random network weights")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--dtype", choices=("float32", "float64"), default="float64")
    net_flags(sp)

    sp = sub.add_parser("forward", help="run the detector over a triplet directory")
    sp.add_argument("--in", dest="inp", type=Path, required=True, help="directory with rgb/, aolp/, dolp/")
    sp.add_argument("--out", type=Path, required=True, help="detections JSON")
    sp.add_argument("--weights", type=Path, help=".rgbpw file; seeded random weights if omitted")
    net_flags(sp)

    sp = sub.add_parser("eval", help="COCO-style AP of detections against ground truth")
    sp.add_argument("--dets", type=Path, required=True)
    sp.add_argument("--gt", type=Path, required=True)

    sp = sub.add_parser("gradcheck", help="check analytic gradients against finite differences")
    sp.add_argument("--module", required=True, choices=sorted(MODULE_GROUPS))
    sp.add_argument("--seed", type=int, default=0)
    return p


def parse_args(argv=None) -> CliConfig:
    ns = build_parser().parse_args(argv)
    d = vars(ns).copy()
    cfg = CliConfig(
        subcommand=d.pop("subcommand"),
        inp=d.pop("inp", None),
        out=d.pop("out", None),
        seed=d.pop("seed", None),
        overrides=dict(d.pop("overrides", [])),
        verbosity=d.pop("verbose"),
    )
    cfg.options = d
    return cfg


def main(argv=None) -> int:
    cfg = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if cfg.verbosity > 1 else logging.INFO if cfg.verbosity else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
