"""Unsupervised training-set construction.

The crop mask is the union of superpixels crossed by a detected crop
line. Vegetation blobs that never touch it are interline weeds; the
remaining vegetation outside the mask is *potential* weed (it may be
weed growing against a row, or a crop leaf sticking out of it).
Windows are cut from these regions, relabelled by simple rules,
augmented and split into train/val sets grouped by source window.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConstantPlane, DatasetIOError, DimensionMismatch, NoLines, TooFewSamples
from .raster import compute_exg, connected_components, otsu_threshold
from .rowdetect import DetectedLine, rasterize_line
from .superpixel import SuperpixelMap, superpixels_on_line

WINDOW = 64
LABELS = ("crop", "weed")
AUGMENTATIONS = ("none", "contrast_a", "contrast_b", "blur", "rot90", "rot180", "rot270")
GAMMA = {"contrast_a": 0.8, "contrast_b": 1.2}
BLUR_SIGMA = 1.0
NOBG_SUFFIX = "-nobg"


@dataclass(frozen=True)
class LabelingConfig:
    window: int = WINDOW
    crop_stride: int = 32
    potential_stride: int = 16
    # potential-weed windows are harvested only when interline weed
    # patches are scarce relative to crop patches
    balance_threshold: float = 0.2
    min_veg_fraction: float = 0.1
    # crop windows must also hold this much crop-mask vegetation, so
    # bare soil between sparse plants never becomes a crop sample
    crop_min_veg_fraction: float = 0.1
    # interline blobs smaller than this are segmentation speckle, not weeds
    min_blob_px: int = 20
    mix_backgrounds: bool = True
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.window < 1 or self.crop_stride < 1 or self.potential_stride < 1:
            raise ValueError("window and strides must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")


@dataclass
class CropMask:
    mask: np.ndarray  # (H, W) bool
    region_ids: set[int] = field(default_factory=set)


@dataclass
class WeedRegions:
    interline: np.ndarray  # (H, W) int32, 0 = none, blobs 1..count
    count: int
    potential: np.ndarray  # (H, W) bool

    @property
    def interline_mask(self) -> np.ndarray:
        return self.interline > 0


@dataclass
class Patch:
    pixels: np.ndarray  # (window, window, 3) uint8
    label: str
    source: tuple[str, int, int]  # (image id, x, y) of the window's top-left corner
    background_removed: bool = False
    augmentation: str = "none"

    @property
    def aug_token(self) -> str:
        return self.augmentation + (NOBG_SUFFIX if self.background_removed else "")

    def filename(self) -> str:
        image, x, y = self.source
        return f"{image}_{x}_{y}_{self.aug_token}.png"


def clamp_window(cx: float, cy: float, window: int, shape) -> tuple[int, int]:
    """Top-left corner of a ``window`` square centred near ``(cx, cy)``,
    shifted inward so it lies fully inside an image of ``shape``."""
    h, w = shape[:2]
    if window > h or window > w:
        raise ValueError(f"window {window} larger than image {w}x{h}")
    x = int(math.floor(cx - window / 2.0 + 0.5))
    y = int(math.floor(cy - window / 2.0 + 0.5))
    return min(max(x, 0), w - window), min(max(y, 0), h - window)


# --- regions --------------------------------------------------------------


def build_crop_mask(sp: SuperpixelMap, lines: list[DetectedLine]) -> CropMask:
    """Union of every superpixel crossed by a detected line."""
    if not lines:
        raise NoLines("crop mask needs at least one detected line")
    ids: set[int] = set()
    for ln in lines:
        ids |= superpixels_on_line(sp, ln)
    mask = np.isin(sp.labels, np.fromiter(ids, dtype=np.int64, count=len(ids)))
    return CropMask(mask, ids)


def detect_weed_regions(vegetation: np.ndarray, crop: CropMask | np.ndarray) -> WeedRegions:
    """Split vegetation outside the crop mask into interline blobs (no
    contact with the mask) and potential-weed pixels (the rest)."""
    crop_mask = crop.mask if isinstance(crop, CropMask) else np.asarray(crop, dtype=bool)
    vegetation = np.asarray(vegetation, dtype=bool)
    if vegetation.shape != crop_mask.shape:
        raise DimensionMismatch(f"vegetation {vegetation.shape} vs crop mask {crop_mask.shape}")
    labels, count = connected_components(vegetation)
    touching = np.zeros(count + 1, dtype=bool)
    touching[np.unique(labels[crop_mask & vegetation])] = True
    touching[0] = True
    keep = ~touching
    # renumber the surviving blobs 1..n in their original (scan) order
    new_id = np.zeros(count + 1, dtype=np.int32)
    new_id[keep] = np.arange(1, int(keep.sum()) + 1, dtype=np.int32)
    interline = new_id[labels]
    potential = vegetation & ~crop_mask & (interline == 0)
    return WeedRegions(interline, int(keep.sum()), potential)


# --- patch extraction -----------------------------------------------------


def _cut(img, x, y, window):
    return np.ascontiguousarray(img[y : y + window, x : x + window])


def extract_weed_patches(
    img: np.ndarray,
    regions: WeedRegions,
    image_id: str = "img",
    window: int = WINDOW,
    min_blob_px: int = 0,
) -> list[Patch]:
    """One window per interline blob, centred on its centroid; blobs
    whose bounding box exceeds the window are tiled instead. Blobs
    smaller than ``min_blob_px`` (segmentation speckle) are skipped."""
    shape = img.shape[:2]
    out, seen = [], set()
    if regions.count == 0:
        return out
    ids = np.arange(1, regions.count + 1)
    boxes = ndimage.find_objects(regions.interline)
    centroids = ndimage.center_of_mass(regions.interline > 0, regions.interline, ids)
    sizes = np.bincount(regions.interline.ravel(), minlength=regions.count + 1)[1:]
    for box, (cy, cx), size in zip(boxes, centroids, sizes):
        if size < min_blob_px:
            continue
        ys, xs = box
        bw, bh = xs.stop - xs.start, ys.stop - ys.start
        if bw <= window and bh <= window:
            corners = [clamp_window(cx, cy, window, shape)]
        else:
            nx, ny = math.ceil(bw / window), math.ceil(bh / window)
            corners = [
                clamp_window(xs.start + (i + 0.5) * window, ys.start + (j + 0.5) * window, window, shape)
                for j in range(ny)
                for i in range(nx)
            ]
        for x, y in corners:
            if (x, y) in seen:
                continue
            seen.add((x, y))
            out.append(Patch(_cut(img, x, y, window), "weed", (image_id, x, y)))
    return out


def _line_windows(lines, shape, window, stride):
    """Window corners sliding along each line at ``stride`` px."""
    corners = []
    for ln in lines:
        trace = rasterize_line(ln.theta_deg, ln.rho_px, shape)
        if not len(trace):
            continue
        steps = np.r_[0.0, np.cumsum(np.hypot(*np.diff(trace, axis=0).T))]
        for d in np.arange(0.0, steps[-1] + 1e-9, stride):
            k = int(np.searchsorted(steps, d))
            corners.append(clamp_window(trace[k, 0], trace[k, 1], window, shape))
    return list(dict.fromkeys(corners))


def crop_window_ok(crop_veg: int, interline: int, potential: int, area: int, min_veg_fraction: float) -> bool:
    """Labeling rule for a window cut along a crop line."""
    return (
        interline == 0
        and crop_veg > 0
        and potential <= crop_veg
        and crop_veg >= min_veg_fraction * area
    )


def extract_crop_patches(
    img: np.ndarray,
    crop: CropMask,
    regions: WeedRegions,
    lines: list[DetectedLine],
    vegetation: np.ndarray,
    stride: int = 32,
    image_id: str = "img",
    window: int = WINDOW,
    min_veg_fraction: float = 0.1,
) -> list[Patch]:
    """Windows along detected lines that hold crop-mask vegetation, no
    interline weed and no more potential weed than crop vegetation."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    shape = img.shape[:2]
    crop_veg = _integral(crop.mask & vegetation)
    inter = _integral(regions.interline_mask)
    pot = _integral(regions.potential)
    area = window * window
    out = []
    for x, y in sorted(_line_windows(lines, shape, window, stride), key=lambda c: (c[1], c[0])):
        if crop_window_ok(
            _box_sum(crop_veg, x, y, window),
            _box_sum(inter, x, y, window),
            _box_sum(pot, x, y, window),
            area,
            min_veg_fraction,
        ):
            out.append(Patch(_cut(img, x, y, window), "crop", (image_id, x, y)))
    return out


def grid_positions(n: int, window: int, stride: int) -> list[int]:
    """Window offsets along one axis at ``stride``; the last window is
    clamped flush with the border."""
    if window > n:
        return []
    pos = list(range(0, n - window + 1, stride))
    if pos[-1] != n - window:
        pos.append(n - window)
    return pos


def extract_potential_weed_patches(
    img: np.ndarray,
    regions: WeedRegions,
    vegetation: np.ndarray,
    stride: int = 32,
    image_id: str = "img",
    window: int = WINDOW,
    min_veg_fraction: float = 0.1,
) -> list[Patch]:
    """Grid windows whose vegetation is all potential weed."""
    h, w = img.shape[:2]
    veg = _integral(vegetation)
    pot = _integral(regions.potential)
    need = min_veg_fraction * window * window
    out = []
    for y in grid_positions(h, window, stride):
        for x in grid_positions(w, window, stride):
            v = _box_sum(veg, x, y, window)
            if v >= need and v > 0 and _box_sum(pot, x, y, window) == v:
                out.append(Patch(_cut(img, x, y, window), "weed", (image_id, x, y)))
    return out


def _integral(mask: np.ndarray) -> np.ndarray:
    s = np.zeros((mask.shape[0] + 1, mask.shape[1] + 1), dtype=np.int64)
    s[1:, 1:] = np.cumsum(np.cumsum(mask, axis=0, dtype=np.int64), axis=1)
    return s


def _box_sum(s: np.ndarray, x: int, y: int, size: int) -> int:
    return int(s[y + size, x + size] - s[y, x + size] - s[y + size, x] + s[y, x])


@dataclass
class LabelingResult:
    crop_mask: CropMask
    regions: WeedRegions
    crop: list[Patch]
    weed: list[Patch]
    potential_used: bool

    @property
    def patches(self) -> list[Patch]:
        return self.crop + self.weed


def label_image(
    img: np.ndarray,
    vegetation: np.ndarray,
    sp: SuperpixelMap,
    lines: list[DetectedLine],
    cfg: LabelingConfig | None = None,
    image_id: str = "img",
) -> LabelingResult:
    """Run every labeling rule on one image."""
    cfg = cfg or LabelingConfig()
    crop_mask = build_crop_mask(sp, lines)
    regions = detect_weed_regions(vegetation, crop_mask)
    crops = extract_crop_patches(
        img, crop_mask, regions, lines, vegetation, cfg.crop_stride, image_id, cfg.window,
        cfg.crop_min_veg_fraction,
    )
    weeds = extract_weed_patches(img, regions, image_id, cfg.window, cfg.min_blob_px)
    use_potential = len(weeds) < cfg.balance_threshold * len(crops)
    if use_potential:
        taken = {p.source for p in weeds}
        extra = extract_potential_weed_patches(
            img, regions, vegetation, cfg.potential_stride, image_id, cfg.window, cfg.min_veg_fraction
        )
        weeds += [p for p in extra if p.source not in taken]
    return LabelingResult(crop_mask, regions, crops, weeds, use_potential)


# --- background removal and augmentation ---------------------------------


def remove_background(p: Patch, exg_floor: float = 0.05) -> Patch:
    """Zero the soil pixels of a patch using its own ExG/Otsu split.

    As in full-image segmentation, a pixel is soil only if it is at or
    below both the Otsu threshold and ``exg_floor``. When even the lower
    Otsu class is green on average, the patch is all vegetation and
    nothing is removed. A constant patch has no split and is returned
    unchanged with the flag unset.
    """
    exg = compute_exg(p.pixels)
    try:
        t = otsu_threshold(exg)
    except ConstantPlane:
        return replace(p, pixels=p.pixels.copy())
    px = p.pixels.copy()
    if float(exg[exg <= t].mean()) <= exg_floor:
        px[exg <= max(t, exg_floor)] = 0
    return replace(p, pixels=px, background_removed=True)


def _gamma(px: np.ndarray, g: float) -> np.ndarray:
    lut = np.clip(np.rint(255.0 * (np.arange(256) / 255.0) ** g), 0, 255).astype(np.uint8)
    return lut[px]


def _blur(px: np.ndarray) -> np.ndarray:
    # truncate=2 with sigma=1 gives a 5x5 kernel
    out = ndimage.gaussian_filter(px.astype(np.float64), sigma=(BLUR_SIGMA, BLUR_SIGMA, 0), truncate=2.0, mode="nearest")
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def variants(p: Patch) -> list[Patch]:
    """The seven photometric/geometric versions of one patch."""
    px = p.pixels
    out = [
        replace(p, pixels=px.copy(), augmentation="none"),
        replace(p, pixels=_gamma(px, GAMMA["contrast_a"]), augmentation="contrast_a"),
        replace(p, pixels=_gamma(px, GAMMA["contrast_b"]), augmentation="contrast_b"),
        replace(p, pixels=_blur(px), augmentation="blur"),
    ]
    for k, name in ((1, "rot90"), (2, "rot180"), (3, "rot270")):
        out.append(replace(p, pixels=np.ascontiguousarray(np.rot90(px, k)), augmentation=name))
    return out


def augment(patches: list[Patch], mix_backgrounds: bool = True) -> list[Patch]:
    """7 variants per patch, doubled through background removal when
    ``mix_backgrounds`` is set.

    The background-free copy of a patch whose own split is degenerate
    keeps its pixels but is still emitted, so the count law holds.
    """
    out = []
    for p in patches:
        vs = variants(p)
        out.extend(vs)
        if mix_backgrounds:
            for v in vs:
                nb = remove_background(v)
                out.append(replace(nb, background_removed=True))
    return out


# --- split and export -----------------------------------------------------


@dataclass
class ManifestEntry:
    path: str
    label: str
    split: str
    source: tuple[str, int, int]
    aug: str
    background_removed: bool

    def to_dict(self) -> dict:
        image, x, y = self.source
        return {
            "path": self.path,
            "label": self.label,
            "split": self.split,
            "source": {"image": image, "x": int(x), "y": int(y)},
            "aug": self.aug,
            "background_removed": bool(self.background_removed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        s = d["source"]
        return cls(d["path"], d["label"], d["split"], (s["image"], int(s["x"]), int(s["y"])),
                   d["aug"], bool(d["background_removed"]))


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    seed: int
    window: int = WINDOW
    stride: int = 32
    patches: list[Patch] | None = field(default=None, repr=False, compare=False)

    def counts(self) -> dict:
        c = {s: {lbl: 0 for lbl in LABELS} for s in ("train", "val")}
        for e in self.entries:
            c.setdefault(e.split, {lbl: 0 for lbl in LABELS})[e.label] += 1
        return c

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "window": int(self.window),
            "stride": int(self.stride),
            "counts": self.counts(),
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls([ManifestEntry.from_dict(e) for e in d["entries"]], int(d["seed"]),
                   int(d.get("window", WINDOW)), int(d.get("stride", 32)))


def _train_count(n: int, fraction: float) -> int:
    return min(n - 1, max(1, int(math.floor(fraction * n + 0.5))))


def split_dataset(patches: list[Patch], fraction: float = 0.8, seed: int = 0, stride: int = 32) -> DatasetManifest:
    """Random per-class train/val split, grouped by source window so that
    every augmented variant of a window lands in the same split.

    The fraction is applied to source groups; with equal group sizes this
    is the same as applying it to patches.
    """
    by_class: dict[str, dict[tuple, list[int]]] = {lbl: {} for lbl in LABELS}
    for i, p in enumerate(patches):
        if p.label not in by_class:
            raise ValueError(f"unknown label {p.label!r}")
        by_class[p.label].setdefault(tuple(p.source), []).append(i)
    rng = np.random.default_rng(seed)
    split = [""] * len(patches)
    for lbl in LABELS:
        groups = sorted(by_class[lbl])
        if len(groups) < 2:
            raise TooFewSamples(f"class {lbl!r} has {len(groups)} source patches; need >= 2")
        order = rng.permutation(len(groups))
        n_train = _train_count(len(groups), fraction)
        for rank, gi in enumerate(order):
            for i in by_class[lbl][groups[gi]]:
                split[i] = "train" if rank < n_train else "val"
    entries = []
    for i, p in enumerate(patches):
        path = f"{split[i]}/{p.label}/{p.filename()}"
        entries.append(ManifestEntry(path, p.label, split[i], tuple(p.source), p.aug_token, p.background_removed))
    order = sorted(range(len(entries)), key=lambda i: (entries[i].source, entries[i].label, entries[i].aug))
    paths = [entries[i].path for i in order]
    if len(set(paths)) != len(paths):
        raise ValueError("duplicate patch paths in dataset")
    return DatasetManifest([entries[i] for i in order], seed, patches=[patches[i] for i in order], stride=stride)


MANIFEST_NAME = "manifest.json"


def export_dataset(manifest: DatasetManifest, directory) -> Path:
    """Write every patch as PNG and the manifest JSON under ``directory``.

    Existing files are never overwritten: all target paths are checked
    before anything is written.
    """
    from .imio import write_rgb

    root = Path(directory)
    if manifest.patches is None and manifest.entries:
        raise ValueError("manifest carries no pixel data to export")
    targets = [root / e.path for e in manifest.entries] + [root / MANIFEST_NAME]
    clash = [str(t) for t in targets if t.exists()]
    if clash:
        raise DatasetIOError(f"refusing to overwrite existing files: {clash[:3]}")
    try:
        for e, p in zip(manifest.entries, manifest.patches or []):
            target = root / e.path
            target.parent.mkdir(parents=True, exist_ok=True)
            write_rgb(target, p.pixels)
        root.mkdir(parents=True, exist_ok=True)
        with open(root / MANIFEST_NAME, "x") as fh:
            json.dump(manifest.to_dict(), fh, indent=1)
    except OSError as exc:
        raise DatasetIOError(f"cannot write dataset to {root}: {exc}") from exc
    return root / MANIFEST_NAME


def import_dataset(path, load_pixels: bool = False) -> DatasetManifest:
    """Read a manifest written by :func:`export_dataset` (either the file
    or its directory). ``load_pixels`` also reads the PNGs back."""
    from .imio import read_rgb

    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    try:
        with open(p) as fh:
            m = DatasetManifest.from_dict(json.load(fh))
    except (OSError, ValueError, KeyError) as exc:
        raise DatasetIOError(f"cannot read manifest {p}: {exc}") from exc
    if load_pixels:
        root = p.parent
        m.patches = [
            Patch(read_rgb(root / e.path), e.label, e.source, e.background_removed,
                  e.aug[: -len(NOBG_SUFFIX)] if e.aug.endswith(NOBG_SUFFIX) else e.aug)
            for e in m.entries
        ]
    return m


def patch_paths(manifest: DatasetManifest, root) -> list[str]:
    return [os.path.join(str(root), e.path) for e in manifest.entries]
