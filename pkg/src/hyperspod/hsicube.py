"""Core data model and file I/O for cubes, score maps, masks and annotations.

Files on disk use one scheme for every raster type: a raw little-endian
float32 payload in band-sequential order (all of band 0, then band 1, ...)
plus a sidecar JSON header named ``<payload>.json``.  Annotation and
detection sets are COCO-like JSON documents.

Pixel geometry: pixel ``(row, col)`` covers ``[col, col+1) x [row, row+1)``,
so the top-left pixel center sits at ``(0.5, 0.5)``.  Boxes are stored as
``(cx, cy, w, h)`` in those pixel units.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    IndivisibleBandCount,
    IoFailure,
    MalformedHeader,
    NonFiniteSample,
    SizeMismatch,
)

__all__ = [
    "BBox",
    "Annotation",
    "Detection",
    "ImageInfo",
    "AnnotationSet",
    "HyperCube",
    "ScoreMap",
    "BinaryMask",
    "read_cube",
    "write_cube",
    "read_score_map",
    "write_score_map",
    "read_mask",
    "write_mask",
    "read_annotations",
    "write_annotations",
    "read_detections",
    "write_detections",
    "band_reduce",
]

UNITS = ("radiance", "reflectance")
REFLECTANCE_OVERSHOOT = 0.05
HEADER_SUFFIX = ".json"


# ---------------------------------------------------------------------------
# Instance-level types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in center form, pixel units."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box width/height must be positive, got {self.w}, {self.h}")

    @classmethod
    def from_xyxy(cls, x0: float, y0: float, x1: float, y1: float) -> "BBox":
        return cls((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)

    def xyxy(self) -> tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    @property
    def area(self) -> float:
        return self.w * self.h

    def normalized(self, width: int, height: int) -> "BBox":
        return BBox(self.cx / width, self.cy / height, self.w / width, self.h / height)


@dataclass(frozen=True)
class Annotation:
    box: BBox
    class_id: int
    instance_id: int
    image_id: int = 0


@dataclass(frozen=True)
class Detection:
    box: BBox
    class_id: int
    confidence: float
    image_id: int = 0

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class ImageInfo:
    id: int
    file: str
    height: int
    width: int


@dataclass
class AnnotationSet:
    """Images, categories and ground-truth boxes of one dataset split."""

    images: list[ImageInfo] = field(default_factory=list)
    categories: dict[int, str] = field(default_factory=dict)
    annotations: list[Annotation] = field(default_factory=list)

    def for_image(self, image_id: int) -> list[Annotation]:
        return [a for a in self.annotations if a.image_id == image_id]

    @property
    def num_classes(self) -> int:
        return len(self.categories)


# ---------------------------------------------------------------------------
# Raster types
# ---------------------------------------------------------------------------


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HyperCube:
    """H x W x N image.  ``data`` is held as an ``(H, W, N)`` float32 array."""

    data: np.ndarray
    wavelengths: np.ndarray | None = None
    unit: str = "radiance"

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"cube data must be 3-D (H, W, N), got shape {data.shape}")
        if data.dtype != np.float32:
            data = data.astype(np.float32)
        if not np.all(np.isfinite(data)):
            raise NonFiniteSample("cube contains NaN or Inf samples")
        if self.unit not in UNITS:
            raise ValueError(f"unit must be one of {UNITS}, got {self.unit!r}")
        if self.unit == "reflectance" and data.size:
            lo, hi = float(data.min()), float(data.max())
            if lo < 0.0 or hi > 1.0 + REFLECTANCE_OVERSHOOT:
                raise ValueError(f"reflectance samples outside [0, 1.05]: [{lo}, {hi}]")
        object.__setattr__(self, "data", _frozen(data))
        if self.wavelengths is not None:
            wl = np.asarray(self.wavelengths, dtype=np.float64)
            if wl.shape != (data.shape[2],):
                raise ValueError("wavelengths length must equal the band count")
            object.__setattr__(self, "wavelengths", _frozen(wl))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    def pixels(self) -> np.ndarray:
        """All spectra as an ``(H*W, N)`` float64 array in row-major pixel order."""
        return self.data.reshape(-1, self.bands).astype(np.float64)

    def replace(self, data: np.ndarray) -> "HyperCube":
        return HyperCube(data, self.wavelengths, self.unit)

    def __eq__(self, other):
        if not isinstance(other, HyperCube):
            return NotImplemented
        same_wl = (self.wavelengths is None and other.wavelengths is None) or (
            self.wavelengths is not None
            and other.wavelengths is not None
            and np.array_equal(self.wavelengths, other.wavelengths)
        )
        return self.unit == other.unit and same_wl and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class ScoreMap:
    scores: np.ndarray
    class_id: int = 0

    def __post_init__(self):
        s = np.asarray(self.scores)
        if s.ndim != 2:
            raise ValueError(f"score map must be 2-D, got shape {s.shape}")
        s = s.astype(np.float32)
        if not np.all(np.isfinite(s)):
            raise NonFiniteSample("score map contains NaN or Inf")
        object.__setattr__(self, "scores", _frozen(s))

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ScoreMap):
            return NotImplemented
        return self.class_id == other.class_id and np.array_equal(self.scores, other.scores)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray
    class_id: int = 0

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {b.shape}")
        object.__setattr__(self, "bits", _frozen(b.astype(bool)))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.class_id == other.class_id and np.array_equal(self.bits, other.bits)


# ---------------------------------------------------------------------------
# Raw + header I/O
# ---------------------------------------------------------------------------


def _header_path(path: os.PathLike | str) -> Path:
    path = Path(path)
    return path.with_name(path.name + HEADER_SUFFIX)


def _dump_json(obj, path: Path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _write_raster(path, planes: np.ndarray, header: dict) -> None:
    """``planes`` is (bands, H, W); written band-sequential float32 LE."""
    path = Path(path)
    payload = np.ascontiguousarray(planes, dtype="<f4").tobytes()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    _dump_json(header, _header_path(path))


def _read_header(path: Path) -> dict:
    hpath = _header_path(path)
    try:
        text = hpath.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read header {hpath}: {exc}") from exc
    try:
        header = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedHeader(f"{hpath}: invalid JSON ({exc})") from exc
    if not isinstance(header, dict):
        raise MalformedHeader(f"{hpath}: header must be a JSON object")
    for key in ("height", "width", "bands"):
        val = header.get(key)
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise MalformedHeader(f"{hpath}: field {key!r} must be a positive integer")
    return header


def _read_raster(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    header = _read_header(path)
    h, w, b = header["height"], header["width"], header["bands"]
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    expected = h * w * b * 4
    if len(raw) != expected:
        raise SizeMismatch(
            f"{path}: header implies {h}x{w}x{b} float32 ({expected} bytes), payload has {len(raw)} bytes"
        )
    planes = np.frombuffer(raw, dtype="<f4").reshape(b, h, w).astype(np.float32)
    if not np.all(np.isfinite(planes)):
        raise NonFiniteSample(f"{path}: payload contains NaN or Inf")
    return planes, header


def write_cube(cube: HyperCube, path) -> None:
    header = {
        "height": cube.height,
        "width": cube.width,
        "bands": cube.bands,
        "unit": cube.unit,
    }
    if cube.wavelengths is not None:
        header["wavelengths_nm"] = [float(v) for v in cube.wavelengths]
    _write_raster(path, cube.data.transpose(2, 0, 1), header)


def read_cube(path) -> HyperCube:
    planes, header = _read_raster(path)
    unit = header.get("unit")
    if unit not in UNITS:
        raise MalformedHeader(f"{path}: unit must be one of {UNITS}, got {unit!r}")
    wl = header.get("wavelengths_nm")
    if wl is not None:
        if not isinstance(wl, list) or len(wl) != header["bands"]:
            raise MalformedHeader(f"{path}: wavelengths_nm must list one value per band")
        wl = np.asarray(wl, dtype=np.float64)
    return HyperCube(planes.transpose(1, 2, 0), wavelengths=wl, unit=unit)


def _class_id(header: dict, path) -> int:
    cid = header.get("class_id")
    if not isinstance(cid, int) or isinstance(cid, bool) or cid < 0:
        raise MalformedHeader(f"{path}: class_id must be a non-negative integer")
    if header["bands"] != 1:
        raise MalformedHeader(f"{path}: single-plane raster must have bands=1")
    return cid


def write_score_map(smap: ScoreMap, path) -> None:
    header = {"height": smap.height, "width": smap.width, "bands": 1, "class_id": smap.class_id, "unit": "score"}
    _write_raster(path, smap.scores[None], header)


def read_score_map(path) -> ScoreMap:
    planes, header = _read_raster(path)
    return ScoreMap(planes[0], _class_id(header, path))


def write_mask(mask: BinaryMask, path) -> None:
    header = {"height": mask.height, "width": mask.width, "bands": 1, "class_id": mask.class_id, "unit": "mask"}
    _write_raster(path, mask.bits[None].astype(np.float32), header)


def read_mask(path) -> BinaryMask:
    planes, header = _read_raster(path)
    plane = planes[0]
    if not np.all((plane == 0) | (plane == 1)):
        raise MalformedHeader(f"{path}: mask payload must hold only 0 and 1")
    return BinaryMask(plane != 0, _class_id(header, path))


# ---------------------------------------------------------------------------
# Annotation / detection JSON
# ---------------------------------------------------------------------------


def _box_list(box: BBox) -> list[float]:
    return [float(box.cx), float(box.cy), float(box.w), float(box.h)]


def _parse_box(raw, where: str) -> BBox:
    if not isinstance(raw, list) or len(raw) != 4:
        raise MalformedHeader(f"{where}: bbox must be [cx, cy, w, h]")
    try:
        return BBox(*(float(v) for v in raw))
    except (TypeError, ValueError) as exc:
        raise MalformedHeader(f"{where}: {exc}") from exc


def write_annotations(aset: AnnotationSet, path) -> None:
    doc = {
        "images": [
            {"id": im.id, "file": im.file, "height": im.height, "width": im.width}
            for im in sorted(aset.images, key=lambda im: im.id)
        ],
        "categories": [{"id": cid, "name": name} for cid, name in sorted(aset.categories.items())],
        "annotations": [
            {
                "image_id": a.image_id,
                "instance_id": a.instance_id,
                "category_id": a.class_id,
                "bbox": _box_list(a.box),
            }
            for a in sorted(aset.annotations, key=lambda a: (a.image_id, a.instance_id))
        ],
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    _dump_json(doc, Path(path))


def read_annotations(path) -> AnnotationSet:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedHeader(f"{path}: invalid JSON ({exc})") from exc
    try:
        images = [ImageInfo(int(d["id"]), str(d["file"]), int(d["height"]), int(d["width"])) for d in doc["images"]]
        cats = {int(d["id"]): str(d["name"]) for d in doc["categories"]}
        anns = []
        for i, d in enumerate(doc["annotations"]):
            ann = Annotation(
                _parse_box(d["bbox"], f"{path}: annotation {i}"),
                int(d["category_id"]),
                int(d["instance_id"]),
                int(d["image_id"]),
            )
            if cats and ann.class_id not in cats:
                raise MalformedHeader(f"{path}: annotation {i} has unknown category {ann.class_id}")
            anns.append(ann)
    except (KeyError, TypeError) as exc:
        raise MalformedHeader(f"{path}: missing or invalid field ({exc})") from exc
    return AnnotationSet(images, cats, anns)


def write_detections(dets: Iterable[Detection], path) -> None:
    ordered = sorted(enumerate(dets), key=lambda t: (t[1].image_id, -t[1].confidence, t[0]))
    doc = {
        "detections": [
            {
                "image_id": d.image_id,
                "category_id": d.class_id,
                "bbox": _box_list(d.box),
                "score": float(d.confidence),
            }
            for _, d in ordered
        ]
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    _dump_json(doc, Path(path))


def read_detections(path) -> list[Detection]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedHeader(f"{path}: invalid JSON ({exc})") from exc
    try:
        return [
            Detection(
                _parse_box(d["bbox"], f"{path}: detection {i}"),
                int(d["category_id"]),
                float(d["score"]),
                int(d["image_id"]),
            )
            for i, d in enumerate(doc["detections"])
        ]
    except (KeyError, TypeError) as exc:
        raise MalformedHeader(f"{path}: missing or invalid field ({exc})") from exc


# ---------------------------------------------------------------------------
# Band averaging
# ---------------------------------------------------------------------------


def band_reduce(cube: HyperCube, group: int) -> HyperCube:
    """Average every ``group`` adjacent bands (wavelengths likewise)."""
    if group < 1 or cube.bands % group:
        raise IndivisibleBandCount(f"{cube.bands} bands cannot be split into groups of {group}")
    if group == 1:
        return cube
    h, w, n = cube.data.shape
    data = cube.data.astype(np.float64).reshape(h, w, n // group, group).mean(axis=3)
    wl = None
    if cube.wavelengths is not None:
        wl = cube.wavelengths.reshape(n // group, group).mean(axis=1)
    return HyperCube(data.astype(np.float32), wavelengths=wl, unit=cube.unit)


def reduce_spectra(spectra: np.ndarray, group: int) -> np.ndarray:
    """Same averaging as :func:`band_reduce` for bare ``(..., N)`` spectra."""
    spectra = np.asarray(spectra, dtype=np.float64)
    n = spectra.shape[-1]
    if group < 1 or n % group:
        raise IndivisibleBandCount(f"{n} bands cannot be split into groups of {group}")
    return spectra.reshape(*spectra.shape[:-1], n // group, group).mean(axis=-1)


def boxes_to_array(boxes: Sequence[BBox]) -> np.ndarray:
    """Stack boxes into an ``(n, 4)`` cx, cy, w, h array."""
    if not boxes:
        return np.zeros((0, 4))
    return np.array([[b.cx, b.cy, b.w, b.h] for b in boxes], dtype=np.float64)
