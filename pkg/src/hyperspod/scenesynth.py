"""Point-object scene synthesis under the linear mixing model.

An object is a connected pixel template with per-pixel endmember
abundances.  Injection replaces each covered background spectrum ``x`` by
``sum_k e_k * s_k + (1 - sum_k e_k) * x``.  Datasets are generated image by
image from independent random streams keyed on ``(seed, split, index)``, so
the output does not depend on generation order.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyTemplate, LengthMismatch, OutOfBounds, OverlapRejected
from .hsicube import (
    Annotation,
    AnnotationSet,
    BBox,
    BinaryMask,
    HyperCube,
    ImageInfo,
    band_reduce,
    read_cube,
    reduce_spectra,
    write_annotations,
    write_cube,
    write_mask,
)
from .htd import PriorSpectra, write_priors_csv
from .specmodel import (
    B_RANGE,
    M_T_RANGE,
    EndmemberSpectrum,
    SpectrumStats,
    fluctuate,
    read_spectrum_csv,
    reflectance_to_radiance,
    simulate_spectrum,
)

log = logging.getLogger(__name__)

__all__ = [
    "ObjectClassSpec",
    "ObjectTemplate",
    "SceneRecipe",
    "grow_template",
    "assign_abundances",
    "inject",
    "synth_background",
    "smooth_curve",
    "generate_dataset",
    "load_recipe",
]

TEMPLATE_KINDS = ("single", "hybrid", "combined")


@dataclass(frozen=True)
class ObjectClassSpec:
    class_id: int
    template_kind: str
    endmembers: tuple[str, ...]
    pixel_range: tuple[int, int]
    max_abundance_range: tuple[float, float]
    mixed_abundance_range: tuple[float, float] = (0.01, 1.0)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "endmembers", tuple(self.endmembers))
        object.__setattr__(self, "pixel_range", tuple(int(v) for v in self.pixel_range))
        object.__setattr__(self, "max_abundance_range", tuple(float(v) for v in self.max_abundance_range))
        object.__setattr__(self, "mixed_abundance_range", tuple(float(v) for v in self.mixed_abundance_range))
        if self.template_kind not in TEMPLATE_KINDS:
            raise ValueError(f"template_kind must be one of {TEMPLATE_KINDS}")
        k = len(self.endmembers)
        if self.template_kind == "single" and k != 1:
            raise ValueError("single templates take exactly one endmember")
        if self.template_kind != "single" and k < 2:
            raise ValueError(f"{self.template_kind} templates need at least two endmembers")
        lo, hi = self.pixel_range
        if not 1 <= lo <= hi:
            raise ValueError("pixel_range must satisfy 1 <= lo <= hi")
        for lo, hi in (self.max_abundance_range, self.mixed_abundance_range):
            if not 0.0 < lo <= hi <= 1.0:
                raise ValueError("abundance ranges must satisfy 0 < lo <= hi <= 1")
        if not self.name:
            object.__setattr__(self, "name", f"C{self.class_id + 1}")


@dataclass(frozen=True, eq=False)
class ObjectTemplate:
    """Pixel offsets ``(dx, dy)`` with an ``(n, K)`` endmember abundance table."""

    offsets: np.ndarray
    abundances: np.ndarray
    endmembers: tuple[str, ...]
    class_id: int

    @property
    def object_abundance(self) -> np.ndarray:
        return self.abundances.sum(axis=1)

    def extent(self) -> tuple[int, int, int, int]:
        """``(min_dx, min_dy, max_dx, max_dy)``."""
        lo = self.offsets.min(axis=0)
        hi = self.offsets.max(axis=0)
        return int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1])

    def bbox_at(self, x: int, y: int) -> BBox:
        x0, y0, x1, y1 = self.extent()
        return BBox.from_xyxy(x + x0, y + y0, x + x1 + 1, y + y1 + 1)


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------

_N4 = ((1, 0), (-1, 0), (0, 1), (0, -1))
_N8 = tuple((dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if dx or dy)


def grow_template(n_pixels: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded accretion from (0, 0): each step adds a uniformly chosen frontier cell.

    The frontier is the set of 4-neighbors of the blob, so the result is
    4-connected.  Returns an ``(n, 2)`` int array of ``(dx, dy)``.
    """
    if n_pixels < 1:
        raise EmptyTemplate("a template needs at least one pixel")
    blob = [(0, 0)]
    members = {(0, 0)}
    frontier = set(_N4)
    while len(blob) < n_pixels:
        cells = sorted(frontier)
        cell = cells[int(rng.integers(len(cells)))]
        frontier.discard(cell)
        blob.append(cell)
        members.add(cell)
        for dx, dy in _N4:
            nb = (cell[0] + dx, cell[1] + dy)
            if nb not in members:
                frontier.add(nb)
    return np.array(blob, dtype=np.int64)


def interior_pixels(offsets) -> np.ndarray:
    """True where all eight neighbors also belong to the template."""
    members = {tuple(p) for p in np.asarray(offsets).tolist()}
    return np.array(
        [all((x + dx, y + dy) in members for dx, dy in _N8) for x, y in members_in_order(offsets)],
        dtype=bool,
    )


def members_in_order(offsets):
    return [tuple(p) for p in np.asarray(offsets).tolist()]


def assign_abundances(offsets, spec: ObjectClassSpec, rng: np.random.Generator) -> ObjectTemplate:
    """Object abundance per pixel, then split among the class endmembers.

    Interior pixels are pure (abundance 1).  Boundary pixels draw from the
    mixed range, sorted so that nearer-to-centroid pixels get larger values.
    If no pixel is interior, the centroid-nearest pixel draws from the
    maximum-abundance range and the other draws are capped at that value,
    which keeps abundance non-increasing with distance.
    """
    offsets = np.asarray(offsets, dtype=np.int64).reshape(-1, 2)
    n = offsets.shape[0]
    if n == 0:
        raise EmptyTemplate("cannot assign abundances to an empty template")
    interior = interior_pixels(offsets)
    centroid = offsets.mean(axis=0)
    dist = np.hypot(*(offsets - centroid).T)
    mixed_idx = np.flatnonzero(~interior)
    mixed_idx = mixed_idx[np.argsort(dist[mixed_idx], kind="stable")]

    total = np.ones(n)
    lo, hi = spec.mixed_abundance_range
    if interior.any():
        vals = rng.uniform(lo, hi, size=mixed_idx.size)
    else:
        center = rng.uniform(*spec.max_abundance_range)
        cap = min(hi, center)
        rest = rng.uniform(min(lo, cap), cap, size=mixed_idx.size - 1)
        vals = np.concatenate([[center], rest])
    total[mixed_idx] = np.sort(vals)[::-1]

    k = len(spec.endmembers)
    if spec.template_kind == "single":
        abund = total[:, None]
    elif spec.template_kind == "hybrid":
        abund = rng.dirichlet(np.ones(k), size=n) * total[:, None]
    else:
        start = rng.uniform(0.0, 2 * np.pi)
        theta = np.arctan2(offsets[:, 1] - centroid[1], offsets[:, 0] - centroid[0])
        order = np.argsort(np.mod(theta - start, 2 * np.pi), kind="stable")
        abund = np.zeros((n, k))
        for e, group in enumerate(np.array_split(order, k)):
            abund[group, e] = total[group]
    return ObjectTemplate(offsets, abund, spec.endmembers, spec.class_id)


# ---------------------------------------------------------------------------
# Injection
# ---------------------------------------------------------------------------


def _boxes_touch(a: BBox, b: BBox, margin: float) -> bool:
    ax0, ay0, ax1, ay1 = a.xyxy()
    bx0, by0, bx1, by1 = b.xyxy()
    return (
        min(ax1 + margin, bx1) > max(ax0 - margin, bx0)
        and min(ay1 + margin, by1) > max(ay0 - margin, by0)
    )


def _mix_into(arr: np.ndarray, template: ObjectTemplate, spectra: np.ndarray, x: int, y: int) -> None:
    n, k = template.abundances.shape
    spectra = np.asarray(spectra, dtype=np.float64)
    if spectra.ndim == 2:
        spectra = np.broadcast_to(spectra, (n,) + spectra.shape)
    if spectra.shape != (n, k, arr.shape[2]):
        raise LengthMismatch(f"spectra shape {spectra.shape} does not match ({n}, {k}, {arr.shape[2]})")
    cols = x + template.offsets[:, 0]
    rows = y + template.offsets[:, 1]
    obj = np.einsum("pk,pkn->pn", template.abundances, spectra)
    frac = template.object_abundance[:, None]
    arr[rows, cols] = obj + (1.0 - frac) * arr[rows, cols]


def inject(cube: HyperCube, template: ObjectTemplate, spectra, position: tuple[int, int],
           instance_id: int = 1, image_id: int = 0, existing: Sequence[BBox] = (),
           allow_overlap: bool = False, margin: int = 1) -> tuple[HyperCube, Annotation]:
    """Mix ``template`` into a copy of ``cube`` with its origin at ``position``.

    ``spectra`` is ``(K, N)`` (one spectrum per endmember) or ``(n, K, N)``
    (one per template pixel).  Unless ``allow_overlap``, placement is
    rejected when the object box, grown by ``margin`` pixels, intersects any
    box in ``existing``; the margin keeps same-class objects from merging
    under eight-connectivity.
    """
    x, y = (int(v) for v in position)
    x0, y0, x1, y1 = template.extent()
    if x + x0 < 0 or y + y0 < 0 or x + x1 >= cube.width or y + y1 >= cube.height:
        raise OutOfBounds(f"template at {position} leaves the {cube.width}x{cube.height} image")
    box = template.bbox_at(x, y)
    if not allow_overlap and any(_boxes_touch(box, other, margin) for other in existing):
        raise OverlapRejected(f"placement at {position} overlaps an existing object")
    arr = cube.data.astype(np.float64)
    _mix_into(arr, template, spectra, x, y)
    return cube.replace(arr.astype(np.float32)), Annotation(box, template.class_id, instance_id, image_id)


# ---------------------------------------------------------------------------
# Backgrounds and endmembers
# ---------------------------------------------------------------------------


def smooth_curve(bands: int, rng: np.random.Generator, lo: float, hi: float, bumps: int = 4) -> np.ndarray:
    """Random smooth positive curve spanning roughly ``[lo, hi]``."""
    x = np.linspace(0.0, 1.0, bands)
    centers = rng.uniform(-0.1, 1.1, bumps)
    widths = rng.uniform(0.08, 0.35, bumps)
    heights = rng.uniform(-1.0, 1.0, bumps)
    y = 1.5 + (heights[:, None] * np.exp(-((x[None] - centers[:, None]) ** 2) / (2 * widths[:, None] ** 2))).sum(0)
    y = (y - y.min()) / max(y.max() - y.min(), 1e-12)
    return lo + (hi - lo) * y


def synth_background(height: int, width: int, bands: int, n_classes: int, rng: np.random.Generator,
                     stats: SpectrumStats | None = None, level=(600.0, 1800.0)) -> HyperCube:
    """Piecewise-smooth radiance background on a seeded Voronoi partition.

    Each class gets a smooth mean spectrum and one wide-area factor; every
    pixel adds local fluctuation drawn from ``stats``.
    """
    if min(height, width, bands, n_classes) < 1:
        raise ValueError("sizes must be >= 1")
    if stats is None:
        stats = SpectrumStats.synthetic(bands)
    elif stats.bands != bands:
        raise LengthMismatch("stats band count differs from requested bands")
    means = np.stack([smooth_curve(bands, rng, level[0] * 0.5, level[1]) + level[0] * 0.5 for _ in range(n_classes)])
    n_sites = 3 * n_classes
    sites = rng.uniform(0, 1, size=(n_sites, 2)) * [width, height]
    site_class = np.concatenate([np.arange(n_classes), rng.integers(0, n_classes, n_sites - n_classes)])
    yy, xx = np.mgrid[0:height, 0:width] + 0.5
    d2 = (xx[..., None] - sites[:, 0]) ** 2 + (yy[..., None] - sites[:, 1]) ** 2
    label = site_class[np.argmin(d2, axis=-1)].ravel()
    b = rng.uniform(*B_RANGE, size=n_classes)
    n_pix = height * width
    a = rng.standard_normal(n_pix) * stats.sigma_a
    ups = rng.standard_normal((n_pix, bands)) * stats.sigma_v
    pix = fluctuate(means[label], stats.gamma, a, ups, b[label][:, None])
    return HyperCube(pix.reshape(height, width, bands).astype(np.float32), unit="radiance")


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------


@dataclass
class SceneRecipe:
    """Everything needed to regenerate a dataset byte-for-byte."""

    classes: list[ObjectClassSpec]
    seed: int = 0
    name: str = "dataset"
    height: int = 64
    width: int = 64
    bands: int = 80
    band_group: int = 1
    splits: dict[str, int] = field(default_factory=lambda: {"train": 20, "test": 10})
    objects_per_image: tuple[int, int] = (1, 20)
    per_class_count: dict[int, int] | None = None
    background_classes: int = 4
    background_files: list[str] = field(default_factory=list)
    stats: SpectrumStats | None = None
    endmembers: dict[str, EndmemberSpectrum] = field(default_factory=dict)
    m_t_range: tuple[float, float] = M_T_RANGE
    b_range: tuple[float, float] = B_RANGE
    n_prior_spectra: int = 20
    overlap_tries: int = 100
    guard_margin: int = 1

    def __post_init__(self):
        lo, hi = self.objects_per_image
        if not 0 <= lo <= hi <= self.height * self.width:
            raise ValueError("objects_per_image must lie within [0, H*W]")
        ids = [c.class_id for c in self.classes]
        if sorted(ids) != list(range(len(ids))):
            raise ValueError("class ids must be 0..n-1")
        if self.bands % self.band_group:
            raise ValueError("bands must be divisible by band_group")


def _stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


def _fluctuation_stats(recipe: SceneRecipe) -> SpectrumStats:
    return recipe.stats if recipe.stats is not None else SpectrumStats.synthetic(recipe.bands)


def _endmember_baselines(recipe: SceneRecipe) -> dict[str, np.ndarray]:
    """Radiance baseline per endmember name, peak scaled to a drawn ``M_t``."""
    rng = _stream(recipe.seed, 9001)
    names = sorted({e for c in recipe.classes for e in c.endmembers})
    # synthetic water reference used for names with no supplied spectrum
    r_w = smooth_curve(recipe.bands, rng, 0.02, 0.06)
    s_w = smooth_curve(recipe.bands, rng, 400.0, 900.0)
    out = {}
    for name in names:
        m_t = rng.uniform(*recipe.m_t_range)
        r_t = smooth_curve(recipe.bands, rng, 0.05, 0.9)
        given = recipe.endmembers.get(name)
        if given is None:
            spec = reflectance_to_radiance(r_t, r_w, s_w, m_t, name)
        else:
            if given.radiance_baseline.shape != (recipe.bands,):
                raise LengthMismatch(f"endmember {name!r} has wrong band count")
            base = given.radiance_baseline
            spec = EndmemberSpectrum(name, m_t / base.max() * base)
        out[name] = spec.radiance_baseline
    return out


def _class_priors(recipe, baselines, stats) -> list[PriorSpectra]:
    priors = []
    for spec in recipe.classes:
        rng = _stream(recipe.seed, 9002, spec.class_id)
        bases = np.stack([baselines[e] for e in spec.endmembers])
        if spec.template_kind == "single":
            spectra = bases
        elif spec.template_kind == "hybrid":
            mix = rng.dirichlet(np.ones(len(bases)), size=recipe.n_prior_spectra) @ bases
            spectra = np.stack([simulate_spectrum(stats, m, rng=rng) for m in mix])
        else:
            spectra = np.stack([
                simulate_spectrum(stats, bases[i % len(bases)], rng=rng)
                for i in range(recipe.n_prior_spectra)
            ])
        priors.append(PriorSpectra(spec.class_id, reduce_spectra(spectra, recipe.band_group)))
    return priors


def _background(recipe: SceneRecipe, rng: np.random.Generator, stats) -> np.ndarray:
    if not recipe.background_files:
        return synth_background(recipe.height, recipe.width, recipe.bands, recipe.background_classes,
                                rng, stats).data.astype(np.float64)
    cube = read_cube(recipe.background_files[int(rng.integers(len(recipe.background_files)))])
    if cube.bands != recipe.bands or cube.height < recipe.height or cube.width < recipe.width:
        raise LengthMismatch("background cube is smaller than the recipe image or has the wrong band count")
    r0 = int(rng.integers(cube.height - recipe.height + 1))
    c0 = int(rng.integers(cube.width - recipe.width + 1))
    return cube.data[r0:r0 + recipe.height, c0:c0 + recipe.width].astype(np.float64)


def _object_classes(recipe: SceneRecipe, rng) -> list[int]:
    if recipe.per_class_count is not None:
        return [cid for cid in sorted(recipe.per_class_count) for _ in range(recipe.per_class_count[cid])]
    lo, hi = recipe.objects_per_image
    n = int(rng.integers(lo, hi + 1))
    return [int(c) for c in rng.integers(0, len(recipe.classes), size=n)]


def synthesize_image(recipe: SceneRecipe, split_index: int, image_index: int,
                     baselines: Mapping[str, np.ndarray], stats: SpectrumStats):
    """One image: ``(cube, annotations, masks, dropped)`` before band reduction of masks."""
    rng = _stream(recipe.seed, split_index, image_index)
    arr = _background(recipe, rng, stats)
    h, w = recipe.height, recipe.width
    masks = np.zeros((len(recipe.classes), h, w), dtype=bool)
    anns: list[Annotation] = []
    boxes: list[BBox] = []
    dropped = 0
    for cid in _object_classes(recipe, rng):
        spec = recipe.classes[cid]
        n_pix = int(rng.integers(spec.pixel_range[0], spec.pixel_range[1] + 1))
        tmpl = assign_abundances(grow_template(n_pix, rng), spec, rng)
        x0, y0, x1, y1 = tmpl.extent()
        if x1 - x0 >= w or y1 - y0 >= h:
            dropped += 1
            continue
        placed = None
        for _ in range(recipe.overlap_tries):
            x = int(rng.integers(-x0, w - x1))
            y = int(rng.integers(-y0, h - y1))
            box = tmpl.bbox_at(x, y)
            if not any(_boxes_touch(box, other, recipe.guard_margin) for other in boxes):
                placed = (x, y, box)
                break
        if placed is None:
            dropped += 1
            continue
        x, y, box = placed
        b = rng.uniform(*recipe.b_range)
        spectra = np.stack(
            [simulate_spectrum(stats, baselines[e], b=b, rng=rng, size=len(tmpl.offsets)) for e in spec.endmembers],
            axis=1,
        )
        _mix_into(arr, tmpl, spectra, x, y)
        boxes.append(box)
        anns.append(Annotation(box, cid, len(anns) + 1, image_index))
        masks[cid, y + tmpl.offsets[:, 1], x + tmpl.offsets[:, 0]] = True
    cube = band_reduce(HyperCube(arr.astype(np.float32)), recipe.band_group)
    return cube, anns, masks, dropped


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def generate_dataset(recipe: SceneRecipe, out_dir) -> dict:
    """Write cubes, per-class masks, annotations, priors and a manifest.

    Layout::

        out_dir/manifest.json
        out_dir/priors.csv
        out_dir/<split>/annotations.json
        out_dir/<split>/images/<split>_0000.hsc (+ .json header)
        out_dir/<split>/masks/<split>_0000_c0.hsc (+ .json header)
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats = _fluctuation_stats(recipe)
    baselines = _endmember_baselines(recipe)
    write_priors_csv(_class_priors(recipe, baselines, stats), out / "priors.csv")

    files = [{"path": "priors.csv", "seed": [recipe.seed, 9002]}]
    total_dropped = 0
    categories = {c.class_id: c.name for c in recipe.classes}
    for s_idx, (split, n_images) in enumerate(recipe.splits.items()):
        aset = AnnotationSet(categories=dict(categories))
        for i in range(n_images):
            cube, anns, masks, dropped = synthesize_image(recipe, s_idx, i, baselines, stats)
            total_dropped += dropped
            stem = f"{split}_{i:04d}"
            rel = Path(split) / "images" / f"{stem}.hsc"
            write_cube(cube, out / rel)
            aset.images.append(ImageInfo(i, rel.as_posix(), cube.height, cube.width))
            aset.annotations.extend(anns)
            files.append({"path": rel.as_posix(), "split": split, "image_index": i, "seed": [recipe.seed, s_idx, i]})
            for cid in range(len(recipe.classes)):
                mrel = Path(split) / "masks" / f"{stem}_c{cid}.hsc"
                write_mask(BinaryMask(masks[cid], cid), out / mrel)
                files.append({"path": mrel.as_posix(), "split": split, "image_index": i,
                              "seed": [recipe.seed, s_idx, i]})
        arel = Path(split) / "annotations.json"
        write_annotations(aset, out / arel)
        files.append({"path": arel.as_posix(), "split": split})

    for entry in files:
        p = out / entry["path"]
        entry["sha256"] = _sha256(p)
        if p.suffix == ".hsc":
            entry["header_sha256"] = _sha256(p.with_name(p.name + ".json"))
    manifest = {
        "name": recipe.name,
        "seed": recipe.seed,
        "splits": dict(recipe.splits),
        "bands": recipe.bands // recipe.band_group,
        "classes": [{"id": c.class_id, "name": c.name, "kind": c.template_kind} for c in recipe.classes],
        "dropped_objects": total_dropped,
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if total_dropped:
        log.warning("%d objects could not be placed without overlap", total_dropped)
    return manifest


# ---------------------------------------------------------------------------
# Recipe files
# ---------------------------------------------------------------------------


def _pair(v, cast=float):
    if isinstance(v, (int, float)):
        return (cast(v), cast(v))
    lo, hi = v
    return (cast(lo), cast(hi))


def load_recipe(path, seed: int | None = None) -> SceneRecipe:
    """Parse a TOML dataset recipe.  ``seed`` overrides the file's seed."""
    from .config import load_toml

    path = Path(path)
    doc = load_toml(path)
    base = path.parent
    classes = [
        ObjectClassSpec(
            class_id=int(c["class_id"]),
            template_kind=c["kind"],
            endmembers=tuple(c["endmembers"]),
            pixel_range=_pair(c["pixels"], int),
            max_abundance_range=_pair(c["max_abundance"]),
            mixed_abundance_range=_pair(c.get("mixed_abundance", [0.01, 1.0])),
            name=c.get("name", ""),
        )
        for c in doc["classes"]
    ]
    bands = int(doc.get("bands", 80))
    fl = doc.get("fluctuation", {})
    if "stats_file" in fl:
        stats = SpectrumStats.from_json((base / fl["stats_file"]).read_text(encoding="utf-8"))
    else:
        g = fl.get("gamma", [0.02, 0.08])
        stats = SpectrumStats.synthetic(bands, float(fl.get("sigma_a", 0.8)), float(fl.get("sigma_v", 0.6)), tuple(g))
    endmembers = {}
    for name, entry in doc.get("endmembers", {}).items():
        if "radiance_csv" in entry:
            _, vals = read_spectrum_csv(base / entry["radiance_csv"])
            endmembers[name] = EndmemberSpectrum(name, vals)
        elif "reflectance_csv" in entry:
            water = doc["water"]
            _, r_t = read_spectrum_csv(base / entry["reflectance_csv"])
            _, r_w = read_spectrum_csv(base / water["reflectance_csv"])
            _, s_w = read_spectrum_csv(base / water["radiance_csv"])
            endmembers[name] = reflectance_to_radiance(r_t, r_w, s_w, 1.0, name)
    bg = doc.get("background", {})
    pcc = doc.get("per_class_count")
    return SceneRecipe(
        classes=classes,
        seed=int(doc.get("seed", 0) if seed is None else seed),
        name=str(doc.get("name", path.stem)),
        height=int(doc.get("height", 64)),
        width=int(doc.get("width", 64)),
        bands=bands,
        band_group=int(doc.get("band_group", 1)),
        splits={str(k): int(v) for k, v in doc.get("splits", {"train": 20, "test": 10}).items()},
        objects_per_image=_pair(doc.get("objects_per_image", [1, 20]), int),
        per_class_count={int(k): int(v) for k, v in pcc.items()} if pcc else None,
        background_classes=int(bg.get("n_classes", 4)),
        background_files=[str(base / f) for f in bg.get("files", [])],
        stats=stats,
        endmembers=endmembers,
        m_t_range=_pair(doc.get("m_t_range", list(M_T_RANGE))),
        b_range=_pair(doc.get("b_range", list(B_RANGE))),
        n_prior_spectra=int(doc.get("n_prior_spectra", 20)),
    )
