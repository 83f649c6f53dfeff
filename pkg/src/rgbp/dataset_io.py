"""Triplet tensors on disk, annotation JSON, and the synthetic polarized-scene generator.

Directory layout for a triplet set::

    <dir>/rgb/<stem>.rgbpt    (1, 3, H, W) float32 in [0, 1]
    <dir>/aolp/<stem>.rgbpt   (1, 3, H, W) float32, AoLP / pi, in [0, 1)
    <dir>/dolp/<stem>.rgbpt   (1, 3, H, W) float32 in [0, 1]

AoLP is stored divided by pi and multiplied back on load.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable

import numpy as np

from .containers import load_tensor, save_tensor
from .detect_eval import Detection, GroundTruthBox
from .errors import AlignmentError, PlacementError, ValidationError
from .mosaic import DEFAULT_BAYER, MosaicFrame, MosaicPattern, merge_quad
from .polar_core import QuadIntensities, StokesImage, compute_polar_maps, compute_stokes, synthesize_intensities
from .prng import SplitMix64

TRIPLET_DIRS = ("rgb", "aolp", "dolp")
SUFFIX = ".rgbpt"

# re-exported so callers only need this module for file I/O
save_tensor = save_tensor
load_tensor = load_tensor


# ---------------------------------------------------------------- triplets


@dataclass
class TripletSample:
    rgb: np.ndarray
    aolp: np.ndarray  # radians
    dolp: np.ndarray
    image_id: Hashable = 0

    def __post_init__(self):
        validate_triplet(self.rgb, self.aolp, self.dolp)

    @property
    def hw(self) -> tuple[int, int]:
        return self.rgb.shape[2], self.rgb.shape[3]


def validate_triplet(rgb, aolp, dolp) -> None:
    shapes = {"rgb": rgb.shape, "aolp": aolp.shape, "dolp": dolp.shape}
    for name, shp in shapes.items():
        if len(shp) != 4 or shp[0] != 1 or shp[1] != 3:
            raise ValidationError(f"{name} must be (1, 3, H, W), got {shp}", name)
    if len(set(shapes.values())) != 1:
        raise AlignmentError(f"triplet planes are not pixel-aligned: {shapes}")
    for name, arr, lo, hi, hi_open in (
        ("rgb", rgb, 0.0, 1.0, False),
        ("aolp", aolp, 0.0, math.pi, True),
        ("dolp", dolp, 0.0, 1.0, False),
    ):
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"{name} contains NaN or Inf", name)
        bad = (arr < lo) | ((arr >= hi) if hi_open else (arr > hi))
        if np.any(bad):
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise ValidationError(f"{name} value {float(arr[idx])} outside its range", f"{name}{list(idx)}")


def stem_for(image_id) -> str:
    return f"{image_id:06d}" if isinstance(image_id, int) else str(image_id)


def save_triplet(directory, sample: TripletSample, stem: str | None = None) -> None:
    root = Path(directory)
    stem = stem or stem_for(sample.image_id)
    for sub in TRIPLET_DIRS:
        (root / sub).mkdir(parents=True, exist_ok=True)
    save_tensor(root / "rgb" / f"{stem}{SUFFIX}", sample.rgb.astype(np.float32))
    save_tensor(root / "aolp" / f"{stem}{SUFFIX}", (sample.aolp / np.pi).astype(np.float32))
    save_tensor(root / "dolp" / f"{stem}{SUFFIX}", sample.dolp.astype(np.float32))


def load_triplet(directory, image_id) -> TripletSample:
    """Load ``rgb/``, ``aolp/`` and ``dolp/`` tensors for one stem and validate them."""
    root = Path(directory)
    stem = stem_for(image_id)
    parts = {}
    for sub in TRIPLET_DIRS:
        path = root / sub / f"{stem}{SUFFIX}"
        if not path.is_file():
            raise FileNotFoundError(f"missing triplet file {path}")
        parts[sub] = load_tensor(path)
    shapes = {k: v.shape for k, v in parts.items()}
    if len(set(shapes.values())) != 1:
        raise AlignmentError(f"triplet {stem!r} is not pixel-aligned: {shapes}", stem)
    aolp_norm = parts["aolp"]
    if np.any(aolp_norm >= 1.0) or np.any(aolp_norm < 0.0):
        raise ValidationError("stored AoLP must lie in [0, 1)", f"aolp/{stem}")
    aolp = (aolp_norm.astype(np.float64) * np.pi).astype(aolp_norm.dtype)
    # float32 rounding of x * pi can land exactly on pi
    aolp = np.minimum(aolp, np.nextafter(np.asarray(np.pi, aolp.dtype), 0))
    return TripletSample(parts["rgb"], aolp, parts["dolp"], image_id)


def list_stems(directory) -> list[str]:
    """Stems present under ``rgb/``, in lexicographic order."""
    return sorted(p.name[: -len(SUFFIX)] for p in (Path(directory) / "rgb").glob(f"*{SUFFIX}"))


def _nchw(a: np.ndarray) -> np.ndarray:
    a = a if a.ndim == 3 else a[..., None]
    if a.shape[2] == 1:
        a = np.repeat(a, 3, axis=2)
    return np.ascontiguousarray(a.transpose(2, 0, 1)[None])


def triplet_from_stokes(stokes: StokesImage, image_id=0) -> TripletSample:
    """The (rgb, aolp, dolp) triplet of a Stokes image.

    The RGB plane is ``s0`` clipped to [0, 1]. Monochrome planes are
    replicated to three channels.
    """
    maps = compute_polar_maps(stokes)
    return TripletSample(_nchw(np.clip(stokes.s0, 0, 1)), _nchw(maps.aolp), _nchw(maps.dolp), image_id)


def triplet_from_quad(quad: QuadIntensities, image_id=0) -> tuple[TripletSample, StokesImage]:
    stokes = compute_stokes(quad)
    return triplet_from_stokes(stokes, image_id), stokes


# ---------------------------------------------------------------- annotations


@dataclass(frozen=True)
class ImageInfo:
    id: Hashable
    width: int
    height: int
    file: str


@dataclass
class AnnotationSet:
    images: list[ImageInfo] = field(default_factory=list)
    annotations: list[GroundTruthBox] = field(default_factory=list)

    def sizes(self) -> dict:
        return {im.id: (im.width, im.height) for im in self.images}


@dataclass
class DetectionSet:
    images: list[ImageInfo] = field(default_factory=list)
    detections: list[Detection] = field(default_factory=list)

    def sizes(self) -> dict:
        return {im.id: (im.width, im.height) for im in self.images}


def _num(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ValidationError(f"expected a finite number, got {v!r}", path)
    return float(v)


def _parse_images(doc) -> list[ImageInfo]:
    if not isinstance(doc.get("images"), list):
        raise ValidationError("missing or non-list 'images'", "$.images")
    images, seen = [], set()
    for i, im in enumerate(doc["images"]):
        path = f"$.images[{i}]"
        if not isinstance(im, dict):
            raise ValidationError("image entry must be an object", path)
        for key in ("id", "width", "height", "file"):
            if key not in im:
                raise ValidationError(f"missing key {key!r}", f"{path}.{key}")
        iid = im["id"]
        if isinstance(iid, bool) or not isinstance(iid, (int, str)):
            raise ValidationError("id must be an integer or string", f"{path}.id")
        for key in ("width", "height"):
            v = im[key]
            if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
                raise ValidationError(f"{key} must be a positive integer", f"{path}.{key}")
        if not isinstance(im["file"], str):
            raise ValidationError("file must be a string", f"{path}.file")
        if iid in seen:
            raise ValidationError(f"duplicate image id {iid!r}", f"{path}.id")
        seen.add(iid)
        images.append(ImageInfo(iid, im["width"], im["height"], im["file"]))
    return images


def parse_annotations(doc) -> AnnotationSet | DetectionSet:
    """Validate a decoded annotation document.

    Entries with ``score`` make it a detection file; entries without make it
    ground truth. Mixing the two is an error.
    """
    if not isinstance(doc, dict):
        raise ValidationError("top level must be an object", "$")
    images = _parse_images(doc)
    ids = {im.id for im in images}
    anns = doc.get("annotations")
    if not isinstance(anns, list):
        raise ValidationError("missing or non-list 'annotations'", "$.annotations")
    has_score = None
    boxes = []
    for i, a in enumerate(anns):
        path = f"$.annotations[{i}]"
        if not isinstance(a, dict):
            raise ValidationError("annotation must be an object", path)
        for key in ("image_id", "bbox"):
            if key not in a:
                raise ValidationError(f"missing key {key!r}", f"{path}.{key}")
        if a["image_id"] not in ids:
            raise ValidationError(f"unknown image_id {a['image_id']!r}", f"{path}.image_id")
        bbox = a["bbox"]
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise ValidationError("bbox must be [x, y, w, h]", f"{path}.bbox")
        box = tuple(_num(v, f"{path}.bbox[{j}]") for j, v in enumerate(bbox))
        for j in (2, 3):
            if box[j] <= 0:
                raise ValidationError("bbox extent must be positive", f"{path}.bbox[{j}]")
        scored = "score" in a
        if has_score is None:
            has_score = scored
        elif has_score != scored:
            raise ValidationError("file mixes scored and unscored annotations", f"{path}.score")
        if scored:
            s = _num(a["score"], f"{path}.score")
            if not 0.0 <= s <= 1.0:
                raise ValidationError("score must lie in [0, 1]", f"{path}.score")
            boxes.append(Detection(box, s, a["image_id"]))
        else:
            boxes.append(GroundTruthBox(box, a["image_id"]))
    if has_score:
        return DetectionSet(images, boxes)
    return AnnotationSet(images, boxes)


def load_annotations(path) -> AnnotationSet | DetectionSet:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON: {exc.msg}", f"line {exc.lineno} column {exc.colno}") from exc
    return parse_annotations(doc)


def _f6(v: float) -> str:
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def dumps_annotations(data: AnnotationSet | DetectionSet) -> str:
    """Canonical text: fixed key order, one entry per line, 6-decimal floats."""
    lines = ["{", '  "images": [']
    for i, im in enumerate(data.images):
        sep = "," if i < len(data.images) - 1 else ""
        lines.append(
            f'    {{"id": {json.dumps(im.id)}, "width": {im.width}, "height": {im.height}, "file": {json.dumps(im.file)}}}{sep}'
        )
    lines.append("  ],")
    lines.append('  "annotations": [')
    entries = data.detections if isinstance(data, DetectionSet) else data.annotations
    for i, a in enumerate(entries):
        sep = "," if i < len(entries) - 1 else ""
        bbox = ", ".join(_f6(v) for v in a.box)
        score = f', "score": {_f6(a.score)}' if isinstance(a, Detection) else ""
        lines.append(f'    {{"image_id": {json.dumps(a.image_id)}, "bbox": [{bbox}]{score}}}{sep}')
    lines.append("  ]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def save_annotations(path, data: AnnotationSet | DetectionSet) -> None:
    Path(path).write_text(dumps_annotations(data))


# ---------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class SynthParams:
    height: int = 64
    width: int = 64
    boxes: tuple[int, int] = (1, 4)  # inclusive count range
    box_size: tuple[int, int] = (8, 24)  # inclusive side range in pixels
    bg_dolp: tuple[float, float] = (0.0, 0.05)
    obj_dolp: tuple[float, float] = (0.5, 0.9)
    bg_s0: tuple[float, float] = (0.2, 0.8)
    obj_s0: tuple[float, float] = (0.3, 0.9)
    noise: float = 0.0
    seed: int = 0
    color: bool = True
    max_tries: int = 200

    def __post_init__(self):
        for name in ("bg_dolp", "obj_dolp"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValidationError(f"{name} must satisfy 0 <= lo <= hi <= 1", name)
        for name in ("bg_s0", "obj_s0"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi:
                raise ValidationError(f"{name} must satisfy 0 <= lo <= hi", name)
        if self.noise < 0:
            raise ValidationError("noise sigma must be >= 0", "noise")
        if not 0 <= self.boxes[0] <= self.boxes[1]:
            raise ValidationError("box count range invalid", "boxes")
        if not 1 <= self.box_size[0] <= self.box_size[1] <= min(self.height, self.width):
            raise ValidationError("box size range invalid for the image size", "box_size")


@dataclass
class SynthScene:
    quad: QuadIntensities  # measured (noisy) intensities, H x W x C
    frame: MosaicFrame  # the same intensities as a raw sensor mosaic
    stokes: StokesImage  # noiseless ground truth
    truth: TripletSample  # noiseless ground-truth triplet
    annotations: AnnotationSet


def _place_boxes(rng: SplitMix64, p: SynthParams) -> list[tuple[int, int, int, int]]:
    count = int(rng.integers(1, p.boxes[0], p.boxes[1] + 1)[0])
    placed: list[tuple[int, int, int, int]] = []
    for k in range(count):
        for _ in range(p.max_tries):
            w, h = (int(v) for v in rng.integers(2, p.box_size[0], p.box_size[1] + 1))
            x = int(rng.integers(1, 0, p.width - w + 1)[0])
            y = int(rng.integers(1, 0, p.height - h + 1)[0])
            if all(x + w <= bx or bx + bw <= x or y + h <= by or by + bh <= y for bx, by, bw, bh in placed):
                placed.append((x, y, w, h))
                break
        else:
            raise PlacementError(f"could not place box {k + 1} of {count} without overlap after {p.max_tries} tries")
    return placed


def synth_scene(params: SynthParams, image_id=0, pattern: MosaicPattern | None = None) -> SynthScene:
    """Paint non-overlapping high-DoLP rectangles over a low-DoLP background.

    Every random draw comes from one SplitMix64 stream seeded with
    ``params.seed``, so the scene is a pure function of the parameters.
    The background gets per-pixel random Stokes vectors. Each box gets one
    random Stokes vector per color channel. Intensities are synthesized
    with the Malus form, then Gaussian noise of sigma ``params.noise`` is
    added and the result is clipped at zero. Arrays are float64.
    """
    rng = SplitMix64(params.seed)
    h, w = params.height, params.width
    cc = 3 if params.color else 1
    boxes = _place_boxes(rng, params)

    n = h * w * cc
    s0 = rng.uniform(n, *params.bg_s0).reshape(h, w, cc)
    rho = rng.uniform(n, *params.bg_dolp).reshape(h, w, cc)
    phi = rng.uniform(n, 0.0, np.pi).reshape(h, w, cc)
    for x, y, bw, bh in boxes:
        s0[y : y + bh, x : x + bw, :] = rng.uniform(cc, *params.obj_s0)
        rho[y : y + bh, x : x + bw, :] = rng.uniform(cc, *params.obj_dolp)
        phi[y : y + bh, x : x + bw, :] = rng.uniform(cc, 0.0, np.pi)
    stokes = StokesImage(s0, s0 * rho * np.cos(2 * phi), s0 * rho * np.sin(2 * phi))
    clean = synthesize_intensities(stokes)
    planes = list(clean.planes())
    if params.noise > 0:
        planes = [np.maximum(pl + params.noise * rng.normal(n).reshape(h, w, cc), 0.0) for pl in planes]
    quad = QuadIntensities(*planes)

    if pattern is None:
        pattern = MosaicPattern(color_layout=DEFAULT_BAYER if params.color else None)
    frame = merge_quad(quad, pattern)
    truth = triplet_from_stokes(stokes, image_id)
    ann = AnnotationSet(
        images=[ImageInfo(image_id, w, h, stem_for(image_id))],
        annotations=[GroundTruthBox((float(x), float(y), float(bw), float(bh)), image_id) for x, y, bw, bh in boxes],
    )
    return SynthScene(quad, frame, stokes, truth, ann)


def to_uint8(aolp: np.ndarray | None = None, dolp: np.ndarray | None = None) -> np.ndarray:
    """8-bit visualization: AoLP maps [0, pi) and DoLP maps [0, 1] linearly onto [0, 255]."""
    if aolp is not None:
        return np.clip(np.round(aolp / np.pi * 255.0), 0, 255).astype(np.uint8)
    return np.clip(np.round(dolp * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------- external datasets


class ExternalTripletSource:
    """Placeholder for importing triplets from a published dataset.

    The on-disk AoLP/DoLP encoding of real RGB-polarization datasets is not
    documented, so this adapter only fixes the interface: ``stems()`` and
    ``load(stem)`` returning a :class:`TripletSample`.
    """

    def __init__(self, root):
        self.root = Path(root)

    def stems(self) -> list[str]:
        raise NotImplementedError("no decoder for external dataset encodings yet; convert to rgb/aolp/dolp tensors")

    def load(self, stem: str) -> TripletSample:
        raise NotImplementedError("no decoder for external dataset encodings yet; convert to rgb/aolp/dolp tensors")
