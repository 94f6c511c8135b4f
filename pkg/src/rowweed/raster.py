"""Pixel-level primitives: excess-green index, Otsu, vegetation masks,
Zhang-Suen thinning, blob labeling and component orientation.

Rasters are plain numpy arrays:

* RGB image: ``(H, W, 3)`` uint8
* gray plane: ``(H, W)`` float64
* binary mask: ``(H, W)`` bool
* label map: ``(H, W)`` int32, 0 = background, components 1..count

Coordinates handed to geometry code are ``(x, y)`` with x along columns,
y along rows, origin top-left.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConstantPlane, DegenerateComponent, EmptySegmentation

OTSU_BINS = 256
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class DegenerateSegmentationWarning(UserWarning):
    """Raised (as a warning) when the whole image is classed as vegetation."""


def compute_exg(img: np.ndarray) -> np.ndarray:
    """Excess green ``2g - r - b`` on chromaticity-normalized RGB.

    Black pixels (R+G+B = 0) get 0. Accepts integer or float input of
    shape ``(..., 3)``.
    """
    rgb = np.asarray(img, dtype=np.float64)
    s = rgb.sum(axis=-1)
    num = 2.0 * rgb[..., 1] - rgb[..., 0] - rgb[..., 2]
    out = np.zeros(s.shape, dtype=np.float64)
    np.divide(num, s, out=out, where=s > 0)
    return out


def otsu_threshold(plane: np.ndarray) -> float:
    """Otsu threshold over 256 uniform bins spanning ``[min, max]``.

    Candidate thresholds are the 255 interior bin edges. A value ``v``
    falls in the lower class at edge ``e`` iff ``v <= e``, so
    ``plane > threshold`` reproduces the optimal split exactly. Ties go
    to the lowest edge.
    """
    values = np.asarray(plane, dtype=np.float64).ravel()
    lo, hi = float(values.min()), float(values.max())
    if not hi > lo:
        raise ConstantPlane(f"plane is constant ({lo})")
    edges = otsu_edges(lo, hi)
    interior = edges[1:-1]
    # bin index = number of interior edges strictly below the value
    idx = np.searchsorted(interior, values, side="left")
    counts = np.bincount(idx, minlength=OTSU_BINS).astype(np.float64)
    sums = np.bincount(idx, weights=values, minlength=OTSU_BINS)

    n = values.size
    n0 = np.cumsum(counts)[:-1]
    s0 = np.cumsum(sums)[:-1]
    n1 = n - n0
    s1 = sums.sum() - s0
    valid = (n0 > 0) & (n1 > 0)
    score = np.full(OTSU_BINS - 1, -1.0)
    w0 = n0[valid] / n
    w1 = n1[valid] / n
    mu0 = s0[valid] / n0[valid]
    mu1 = s1[valid] / n1[valid]
    score[valid] = w0 * w1 * (mu0 - mu1) ** 2
    k = int(np.argmax(score))  # first maximum = lowest threshold
    return float(interior[k])


def otsu_edges(lo: float, hi: float) -> np.ndarray:
    """The 257 bin edges Otsu searches over; shared with test oracles."""
    width = (hi - lo) / OTSU_BINS
    edges = lo + width * np.arange(OTSU_BINS + 1, dtype=np.float64)
    edges[-1] = hi
    return edges


def segment_vegetation(
    img: np.ndarray,
    opening_radius: int = 0,
    exg_floor: float = 0.05,
    allow_empty: bool = False,
) -> np.ndarray:
    """Vegetation mask: ExG above its Otsu threshold.

    ``exg_floor`` keeps Otsu from splitting bare soil into two classes:
    pixels must also exceed it. An image with no vegetation raises
    :class:`EmptySegmentation` unless ``allow_empty`` is set.
    """
    exg = compute_exg(img)
    try:
        t = otsu_threshold(exg)
    except ConstantPlane:
        value = float(exg.flat[0])
        if value > exg_floor:
            warnings.warn(
                "image is uniformly vegetation-coloured; returning a full mask",
                DegenerateSegmentationWarning,
                stacklevel=2,
            )
            return np.ones(exg.shape, dtype=bool)
        if allow_empty:
            return np.zeros(exg.shape, dtype=bool)
        raise EmptySegmentation("image has constant excess-green") from None

    mask = exg > max(t, exg_floor)
    if opening_radius > 0:
        r = int(opening_radius)
        yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
        disk = xx * xx + yy * yy <= r * r
        mask = ndimage.binary_opening(mask, structure=disk)
    if not mask.any() and not allow_empty:
        raise EmptySegmentation("no pixel exceeds the vegetation threshold")
    return mask


# --- thinning -------------------------------------------------------------


def _zs_neighbours(p: np.ndarray):
    # P2..P9 clockwise from north, on a zero-padded image
    return (
        p[:-2, 1:-1],  # P2 north
        p[:-2, 2:],  # P3 north-east
        p[1:-1, 2:],  # P4 east
        p[2:, 2:],  # P5 south-east
        p[2:, 1:-1],  # P6 south
        p[2:, :-2],  # P7 south-west
        p[1:-1, :-2],  # P8 west
        p[:-2, :-2],  # P9 north-west
    )


def zhang_suen(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen iterative thinning. Returns a new bool array."""
    img = np.pad(np.asarray(mask, dtype=np.uint8), 1)
    while True:
        changed = False
        for step in (0, 1):
            core = img[1:-1, 1:-1]
            n = _zs_neighbours(img)
            P2, P3, P4, P5, P6, P7, P8, P9 = n
            b = sum(x.astype(np.int16) for x in n)
            seq = n + (P2,)
            a = sum(((seq[i] == 0) & (seq[i + 1] == 1)).astype(np.int16) for i in range(8))
            if step == 0:
                c = (P2 * P4 * P6) == 0
                d = (P4 * P6 * P8) == 0
            else:
                c = (P2 * P4 * P8) == 0
                d = (P2 * P6 * P8) == 0
            delete = (core == 1) & (b >= 2) & (b <= 6) & (a == 1) & c & d
            if delete.any():
                core[delete] = 0
                changed = True
        if not changed:
            break
    return img[1:-1, 1:-1].astype(bool)


# --- components -----------------------------------------------------------


def connected_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected blob labeling, labels numbered in raster-scan order of
    first encounter. Returns ``(labels, count)``."""
    labels, count = ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT_CONNECTED)
    return labels.astype(np.int32, copy=False), int(count)


def component_pixels(labels: np.ndarray, count: int) -> list[np.ndarray]:
    """Pixel coordinate arrays ``(n, 2)`` as ``(x, y)`` for labels 1..count."""
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_labels = flat[order]
    bounds = np.searchsorted(sorted_labels, np.arange(1, count + 2))
    w = labels.shape[1]
    out = []
    for k in range(count):
        idx = order[bounds[k] : bounds[k + 1]]
        out.append(np.column_stack((idx % w, idx // w)))
    return out


def component_orientation(pixels: np.ndarray) -> float:
    """Principal-axis direction of a pixel cloud, degrees in (-90, 90].

    Angles are measured in raw image coordinates from the +x axis toward
    +y, so pixels on ``y = x`` give 45 and a vertical run gives 90.
    """
    pts = np.asarray(pixels, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 2:
        raise DegenerateComponent("orientation needs at least 2 pixels")
    d = pts - pts.mean(axis=0)
    cxx = float(np.mean(d[:, 0] ** 2))
    cyy = float(np.mean(d[:, 1] ** 2))
    cxy = float(np.mean(d[:, 0] * d[:, 1]))
    angle = 0.5 * np.degrees(np.arctan2(2.0 * cxy, cxx - cyy))
    return wrap_axis_deg(angle)


def wrap_axis_deg(angle) -> float | np.ndarray:
    """Map an undirected axis angle into (-90, 90]."""
    a = np.mod(np.asarray(angle, dtype=np.float64) + 90.0, 180.0) - 90.0
    a = np.where(a <= -90.0, a + 180.0, a)
    return float(a) if a.ndim == 0 else a


def axis_distance_deg(a, b):
    """Smallest angle between two undirected axes, in [0, 90]."""
    d = np.abs(np.mod(np.asarray(a, dtype=np.float64) - b, 180.0))
    d = np.minimum(d, 180.0 - d)
    return float(d) if d.ndim == 0 else d


@dataclass
class SkeletonComponent:
    id: int
    pixels: np.ndarray  # (n, 2) as (x, y)
    orientation_deg: float

    @property
    def size(self) -> int:
        return len(self.pixels)


@dataclass
class Skeleton:
    shape: tuple[int, int]  # (height, width)
    components: list[SkeletonComponent] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.components)

    def pixels(self) -> np.ndarray:
        if not self.components:
            return np.zeros((0, 2), dtype=np.int64)
        return np.concatenate([c.pixels for c in self.components])

    def component_index(self) -> np.ndarray:
        """Component id per row of :meth:`pixels`."""
        if not self.components:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.full(c.size, c.id) for c in self.components])

    def to_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        pts = self.pixels()
        mask[pts[:, 1], pts[:, 0]] = True
        return mask

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "Skeleton":
        """Group an already thin mask into oriented components."""
        labels, count = connected_components(mask)
        comps = []
        for i, pts in enumerate(component_pixels(labels, count), start=1):
            theta = component_orientation(pts) if len(pts) >= 2 else 0.0
            comps.append(SkeletonComponent(i, pts, theta))
        return cls(tuple(mask.shape), comps)


def skeletonize(mask: np.ndarray) -> Skeleton:
    """Thin a vegetation mask and split it into oriented components."""
    return Skeleton.from_mask(zhang_suen(mask))
