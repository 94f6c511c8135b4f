"""SLIC superpixels in CIELAB + image-plane space."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components as graph_components

from .errors import InvalidCount
from .rowdetect import rasterize_line

# sRGB -> XYZ (D65)
_RGB2XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ2RGB = np.linalg.inv(_RGB2XYZ)
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
_EPS = 216.0 / 24389.0
_KAPPA = 24389.0 / 27.0


def rgb_to_lab(img: np.ndarray) -> np.ndarray:
    """8-bit sRGB ``(..., 3)`` to CIELAB (D65), float64 ``(..., 3)``."""
    c = np.asarray(img, dtype=np.float64) / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB2XYZ.T / _WHITE_D65
    f = np.where(xyz > _EPS, np.cbrt(xyz), (_KAPPA * xyz + 16.0) / 116.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack((L, a, b), axis=-1)


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    """CIELAB (D65) to 8-bit sRGB, clipped to the gamut."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack((fx, fy, fz), axis=-1)
    xyz = np.where(f**3 > _EPS, f**3, (116.0 * f - 16.0) / _KAPPA) * _WHITE_D65
    lin = np.clip(xyz @ _XYZ2RGB.T, 0.0, 1.0)
    c = np.where(lin <= 0.0031308, 12.92 * lin, 1.055 * lin ** (1 / 2.4) - 0.055)
    return np.clip(np.rint(c * 255.0), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class SlicConfig:
    count_fraction: float = 0.001
    compactness: float = 20.0
    iterations: int = 10
    enforce_connectivity: bool = True

    def __post_init__(self):
        if not 0 < self.count_fraction < 1:
            raise ValueError("count_fraction must lie in (0, 1)")
        if not self.compactness > 0:
            raise ValueError("compactness must be positive")

    def requested(self, n_pixels: int) -> int:
        return int(round(self.count_fraction * n_pixels))


@dataclass
class Region:
    id: int
    pixel_count: int
    centroid: tuple[float, float]  # (x, y)
    mean_lab: tuple[float, float, float]


@dataclass
class SuperpixelMap:
    labels: np.ndarray  # (H, W) int32, 0..K-1
    regions: list[Region]
    step: float

    @property
    def count(self) -> int:
        return len(self.regions)

    @property
    def shape(self):
        return self.labels.shape


def _grid_centers(h: int, w: int, k: int):
    step = math.sqrt(h * w / k)
    nx = max(1, int(round(w / step)))
    ny = max(1, int(round(h / step)))
    xs = (np.arange(nx) + 0.5) * (w / nx)
    ys = (np.arange(ny) + 0.5) * (h / ny)
    cy, cx = np.meshgrid(np.floor(ys), np.floor(xs), indexing="ij")
    return cx.ravel().astype(np.int64), cy.ravel().astype(np.int64), step


def _gradient(lab: np.ndarray) -> np.ndarray:
    p = np.pad(lab, ((1, 1), (1, 1), (0, 0)), mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    return (gx**2).sum(-1) + (gy**2).sum(-1)


def _perturb(cx, cy, grad):
    h, w = grad.shape
    offsets = [(0, 0)] + [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dx or dy]
    out_x, out_y = cx.copy(), cy.copy()
    for i in range(len(cx)):
        best = None
        for dx, dy in offsets:
            x, y = cx[i] + dx, cy[i] + dy
            if 0 <= x < w and 0 <= y < h:
                g = grad[y, x]
                if best is None or g < best:
                    best, out_x[i], out_y[i] = g, x, y
    return out_x, out_y


def slic(img: np.ndarray, cfg: SlicConfig | None = None, lab: np.ndarray | None = None) -> SuperpixelMap:
    """SLIC superpixels of an RGB image.

    Pixels are assigned within a ``2S x 2S`` window around each centre
    using ``D = sqrt(d_lab^2 + (d_xy / S)^2 * m^2)``; equal distances go
    to the lower centre id. Fragments smaller than ``S^2 / 4`` are merged
    into their largest neighbour when connectivity is enforced.
    """
    cfg = cfg or SlicConfig()
    h, w = img.shape[:2]
    n = h * w
    k = cfg.requested(n)
    if k < 1 or k > n:
        raise InvalidCount(f"requested {k} superpixels for {n} pixels")
    if lab is None:
        lab = rgb_to_lab(img)

    cx, cy, step = _grid_centers(h, w, k)
    cx, cy = _perturb(cx, cy, _gradient(lab))
    centers = np.column_stack((cx.astype(np.float64), cy.astype(np.float64), lab[cy, cx]))
    m2 = (cfg.compactness / step) ** 2
    radius = int(math.ceil(step))

    labels = np.full((h, w), -1, dtype=np.int32)
    ys_all, xs_all = np.mgrid[0:h, 0:w]
    for _ in range(max(1, cfg.iterations)):
        dist = np.full((h, w), np.inf)
        labels.fill(-1)
        for i, (x, y, L, a, b) in enumerate(centers):
            if not np.isfinite(x):
                continue
            xi, yi = int(round(x)), int(round(y))
            x0, x1 = max(xi - radius, 0), min(xi + radius + 1, w)
            y0, y1 = max(yi - radius, 0), min(yi + radius + 1, h)
            if x0 >= x1 or y0 >= y1:
                continue
            win = lab[y0:y1, x0:x1]
            dc = (win[..., 0] - L) ** 2 + (win[..., 1] - a) ** 2 + (win[..., 2] - b) ** 2
            gx = np.arange(x0, x1) - x
            gy = np.arange(y0, y1) - y
            d = dc + m2 * (gy[:, None] ** 2 + gx[None, :] ** 2)
            cur = dist[y0:y1, x0:x1]
            better = d < cur
            cur[better] = d[better]
            labels[y0:y1, x0:x1][better] = i
        orphan = labels < 0
        if orphan.any():
            labels[orphan] = _nearest_center(xs_all[orphan], ys_all[orphan], centers)
        centers = _update_centers(labels, lab, xs_all, ys_all, len(centers), centers)

    if cfg.enforce_connectivity:
        labels = _enforce_connectivity(labels, min_size=int(step * step / 4))
    else:
        labels = _relabel_scan_order(labels)
    return _build_map(labels, lab, step)


def _nearest_center(xs, ys, centers):
    ok = np.flatnonzero(np.isfinite(centers[:, 0]))
    d = (xs[:, None] - centers[ok, 0][None]) ** 2 + (ys[:, None] - centers[ok, 1][None]) ** 2
    return ok[np.argmin(d, axis=1)]


def _update_centers(labels, lab, xs, ys, k, old):
    flat = labels.ravel()
    cnt = np.bincount(flat, minlength=k).astype(np.float64)
    out = np.full_like(old, np.nan)
    nz = cnt > 0
    cols = (xs.ravel(), ys.ravel(), lab[..., 0].ravel(), lab[..., 1].ravel(), lab[..., 2].ravel())
    for j, col in enumerate(cols):
        s = np.bincount(flat, weights=col, minlength=k)
        out[nz, j] = s[nz] / cnt[nz]
    return out


def _neighbour_pairs(labels: np.ndarray):
    """Flat index pairs of 8-adjacent pixels (each unordered pair once)."""
    h, w = labels.shape
    idx = np.arange(h * w).reshape(h, w)
    pairs = []
    for a, b in (
        (idx[:, :-1], idx[:, 1:]),
        (idx[:-1, :], idx[1:, :]),
        (idx[:-1, :-1], idx[1:, 1:]),
        (idx[:-1, 1:], idx[1:, :-1]),
    ):
        pairs.append((a.ravel(), b.ravel()))
    return np.concatenate([p[0] for p in pairs]), np.concatenate([p[1] for p in pairs])


def _relabel_scan_order(labels: np.ndarray) -> np.ndarray:
    flat = labels.ravel()
    _, first = np.unique(flat, return_index=True)
    order = np.argsort(first, kind="stable")
    remap = np.empty(flat.max() + 1, dtype=np.int32)
    uniq = flat[first]
    remap[uniq[order]] = np.arange(len(uniq), dtype=np.int32)
    return remap[labels]


def _enforce_connectivity(labels: np.ndarray, min_size: int) -> np.ndarray:
    """Split every label into 8-connected pieces and fold pieces smaller
    than ``min_size`` into their largest adjacent piece."""
    h, w = labels.shape
    n = h * w
    a, b = _neighbour_pairs(labels)
    flat = labels.ravel()
    same = flat[a] == flat[b]
    g = sparse.coo_matrix((np.ones(int(same.sum()), dtype=np.int8), (a[same], b[same])), shape=(n, n))
    ncomp, comp = graph_components(g, directed=False)
    comp = _relabel_scan_order(comp.reshape(h, w)).ravel()

    size = np.bincount(comp, minlength=ncomp).astype(np.int64)
    ca, cb = comp[a[~same]].astype(np.int64), comp[b[~same]].astype(np.int64)
    diff = ca != cb
    ca, cb = ca[diff], cb[diff]
    keys = np.unique(np.concatenate([ca * ncomp + cb, cb * ncomp + ca]))
    neighbours: dict[int, set[int]] = {}
    for u, v in zip((keys // ncomp).tolist(), (keys % ncomp).tolist()):
        neighbours.setdefault(u, set()).add(v)

    parent = np.arange(ncomp)

    def find(u):
        root = u
        while parent[root] != root:
            root = parent[root]
        while parent[u] != root:
            parent[u], u = root, parent[u]
        return root

    for c in range(ncomp):  # scan order of first pixel
        r = find(c)
        if r != c or size[r] >= min_size:
            continue
        cand = {find(v) for v in neighbours.get(r, ())} - {r}
        if not cand:
            continue
        target = min(cand, key=lambda v: (-size[v], v))
        parent[r] = target
        size[target] += size[r]
        neighbours.setdefault(target, set()).update(neighbours.pop(r, set()))

    roots = np.array([find(c) for c in range(ncomp)])
    return _relabel_scan_order(roots[comp].reshape(h, w))


def _build_map(labels: np.ndarray, lab: np.ndarray, step: float) -> SuperpixelMap:
    h, w = labels.shape
    k = int(labels.max()) + 1
    flat = labels.ravel()
    cnt = np.bincount(flat, minlength=k)
    ys, xs = np.divmod(np.arange(h * w), w)
    sx = np.bincount(flat, weights=xs, minlength=k) / cnt
    sy = np.bincount(flat, weights=ys, minlength=k) / cnt
    means = [np.bincount(flat, weights=lab[..., j].ravel(), minlength=k) / cnt for j in range(3)]
    regions = [
        Region(i, int(cnt[i]), (float(sx[i]), float(sy[i])),
               (float(means[0][i]), float(means[1][i]), float(means[2][i])))
        for i in range(k)
    ]
    return SuperpixelMap(labels.astype(np.int32), regions, step)


def superpixels_on_line(sp: SuperpixelMap, line) -> set[int]:
    """Region ids touched by the 1-pixel trace of a detected line."""
    trace = rasterize_line(line.theta_deg, line.rho_px, sp.shape)
    if not len(trace):
        return set()
    return {int(v) for v in np.unique(sp.labels[trace[:, 1], trace[:, 0]])}


def isoperimetric_ratios(labels: np.ndarray) -> np.ndarray:
    """``4*pi*area / perimeter^2`` per region, perimeter counted in pixel
    edges (image border included)."""
    k = int(labels.max()) + 1
    area = np.bincount(labels.ravel(), minlength=k).astype(np.float64)
    per = np.zeros(k)
    p = np.pad(labels, 1, constant_values=-1)
    core = p[1:-1, 1:-1]
    for sl in ((slice(1, -1), slice(2, None)), (slice(1, -1), slice(None, -2)),
               (slice(2, None), slice(1, -1)), (slice(None, -2), slice(1, -1))):
        diff = core != p[sl]
        per += np.bincount(core[diff], minlength=k)
    return 4.0 * np.pi * area / np.maximum(per, 1.0) ** 2


def boundary_mask(labels: np.ndarray) -> np.ndarray:
    """Pixels whose right or lower neighbour carries a different label."""
    b = np.zeros(labels.shape, dtype=bool)
    b[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    b[:-1, :] |= labels[:-1, :] != labels[1:, :]
    return b
