"""Seeded synthetic row-crop fields with exact per-pixel ground truth.

Rows are straight bands of overlapping, slightly irregular crop plants on
value-noise soil. Weeds are lobed blobs drawn last, in three placements:

* interline -- well inside the soil between rows, never touching crop;
* edge -- clusters rooted on a row border and growing outward, so their
  blob merges with crop vegetation;
* intra-row -- on the row centre line.

Truth lines use the same normal form as :mod:`rowweed.rowdetect`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InvalidSpec, UnknownPreset
from .raster import wrap_axis_deg
from .rowdetect import line_endpoints
from .superpixel import lab_to_rgb

SOIL, CROP, WEED = 0, 1, 2
CLASS_NAMES = ("soil", "crop", "weed")


@dataclass
class FieldSpec:
    width: int = 1024
    height: int = 1024
    row_orientation_deg: float = 0.0  # row direction, same convention as component_orientation
    row_angle_jitter_deg: float = 0.0
    row_spacing_px: float = 120.0
    spacing_jitter_px: float = 4.0
    row_width_px: float = 26.0
    min_row_length_px: float = 300.0
    plant_spacing_px: float = 16.0
    plant_gap_prob: float = 0.0
    plant_lateral_sigma_px: float = 1.0
    crop_lab: tuple[float, float, float] = (46.0, -34.0, 34.0)
    crop_lab_sigma: float = 3.0
    crop_lobe_amplitude: float = 0.12
    weed_lab: tuple[float, float, float] = (66.0, -38.0, 52.0)
    weed_lab_sigma: float = 3.0
    weed_lobe_amplitude: float = 0.3
    weed_radius_px: tuple[float, float] = (8.0, 14.0)
    interline_weed_density: float = 0.3  # blobs per 1e4 px^2
    interline_margin_px: float = 24.0
    edge_weed_density: float = 0.0  # clusters per 1e4 px^2
    edge_cluster_blobs: tuple[int, int] = (1, 1)  # blobs per cluster, inclusive range
    edge_cluster_reach: float = 0.35  # farthest blob centre, as a fraction of row spacing
    intrarow_weed_density: float = 0.0
    soil_rgb: tuple[float, float, float] = (150.0, 118.0, 92.0)
    soil_noise: float = 12.0
    hard_mode: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.width < 256 or self.height < 256:
            raise InvalidSpec("field must be at least 256x256")
        if not self.row_spacing_px > self.row_width_px:
            raise InvalidSpec("row spacing must exceed row width")
        if self.spacing_jitter_px < 0 or self.row_angle_jitter_deg < 0:
            raise InvalidSpec("jitters must be non-negative")
        for name in ("interline_weed_density", "edge_weed_density", "intrarow_weed_density"):
            if getattr(self, name) < 0:
                raise InvalidSpec(f"{name} must be non-negative")
        if not 0 <= self.plant_gap_prob < 1:
            raise InvalidSpec("plant_gap_prob must lie in [0, 1)")
        if self.edge_cluster_blobs[0] < 1 or self.edge_cluster_blobs[1] < self.edge_cluster_blobs[0]:
            raise InvalidSpec("bad edge cluster size range")
        if self.weed_radius_px[0] <= 0 or self.weed_radius_px[1] < self.weed_radius_px[0]:
            raise InvalidSpec("bad weed radius range")
        if self.plant_spacing_px <= 0 or self.row_width_px <= 0:
            raise InvalidSpec("plant spacing and row width must be positive")

    @property
    def effective_weed_lab(self) -> tuple[float, float, float]:
        return tuple(self.crop_lab) if self.hard_mode else tuple(self.weed_lab)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FieldSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown field spec keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


@dataclass
class WeedBlob:
    centroid: tuple[float, float]  # (x, y)
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive
    interline: bool
    kind: str  # interline | edge | intrarow


@dataclass
class FieldGroundTruth:
    classes: np.ndarray  # (H, W) uint8: 0 soil, 1 crop, 2 weed
    lines: list[tuple[float, float]]  # (theta_deg, rho_px)
    weeds: list[WeedBlob] = field(default_factory=list)
    weed_ids: np.ndarray | None = None  # (H, W) int32, index+1 of the weed blob owning each weed pixel

    def inventory(self) -> dict:
        return {
            "lines": [{"theta_deg": t, "rho_px": r} for t, r in self.lines],
            "weeds": [asdict(w) for w in self.weeds],
        }

    def save(self, directory, stem: str = "truth") -> None:
        from .imio import write_index, write_labels16

        d = Path(directory)
        write_index(d / f"{stem}.png", self.classes)
        if self.weed_ids is not None:
            write_labels16(d / f"{stem}_weeds.png", self.weed_ids)
        (d / f"{stem}.json").write_text(json.dumps(self.inventory(), indent=2))

    @classmethod
    def load(cls, directory, stem: str = "truth") -> "FieldGroundTruth":
        from .imio import read_index, read_labels16

        d = Path(directory)
        inv = json.loads((d / f"{stem}.json").read_text())
        weeds = [
            WeedBlob(tuple(w["centroid"]), tuple(w["bbox"]), w["interline"], w["kind"])
            for w in inv["weeds"]
        ]
        ids_path = d / f"{stem}_weeds.png"
        ids = read_labels16(ids_path) if ids_path.exists() else None
        lines = [(ln["theta_deg"], ln["rho_px"]) for ln in inv["lines"]]
        return cls(read_index(d / f"{stem}.png"), lines, weeds, ids)


PRESETS = {
    # sparse plants, stable spacing, few interline weeds, many weeds hugging the rows
    "bean_like": dict(
        row_spacing_px=130.0,
        spacing_jitter_px=2.0,
        row_width_px=24.0,
        plant_spacing_px=18.0,
        plant_gap_prob=0.25,
        crop_lab=(50.0, -36.0, 38.0),
        interline_weed_density=0.06,
        edge_weed_density=0.04,
        edge_cluster_blobs=(5, 8),
        edge_cluster_reach=0.5,
        row_angle_jitter_deg=0.1,
    ),
    # dense rows, irregular spacing, many interline weeds, few near the rows
    "spinach_like": dict(
        row_spacing_px=125.0,
        spacing_jitter_px=12.0,
        row_width_px=30.0,
        plant_spacing_px=13.0,
        plant_gap_prob=0.02,
        crop_lab=(42.0, -30.0, 28.0),
        interline_weed_density=0.35,
        interline_margin_px=28.0,
        edge_weed_density=0.03,
        row_angle_jitter_deg=0.1,
    ),
}


def preset(name: str, **overrides) -> FieldSpec:
    if name not in PRESETS:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(FieldSpec(**PRESETS[name]), **overrides)


# --- rendering ------------------------------------------------------------


def _value_noise(rng, shape, cell: int) -> np.ndarray:
    h, w = shape
    gh, gw = h // cell + 2, w // cell + 2
    grid = rng.uniform(-1.0, 1.0, size=(gh, gw))
    up = ndimage.zoom(grid, cell, order=1)
    return up[:h, :w]


def _soil(rng, spec: FieldSpec) -> np.ndarray:
    shape = (spec.height, spec.width)
    n = 0.55 * _value_noise(rng, shape, 128) + 0.3 * _value_noise(rng, shape, 32) + 0.15 * _value_noise(rng, shape, 8)
    base = np.asarray(spec.soil_rgb, dtype=np.float64)
    # shading scales all channels together, keeping soil chromaticity near neutral ExG
    rgb = base[None, None, :] * (1.0 + spec.soil_noise / 100.0 * n[..., None] * 1.6)
    rgb += rng.normal(0.0, 2.5, size=rgb.shape)
    return rgb


def _blob_mask(rng, cx, cy, ra, rb, angle_rad, lobe_amp, shape, n_lobes=(2, 6)):
    """Irregular ellipse around (cx, cy); ``ra`` along ``angle_rad``."""
    h, w = shape
    r = max(ra, rb) * (1.0 + lobe_amp) + 1
    x0, x1 = max(int(math.floor(cx - r)), 0), min(int(math.ceil(cx + r)) + 1, w)
    y0, y1 = max(int(math.floor(cy - r)), 0), min(int(math.ceil(cy + r)) + 1, h)
    if x0 >= x1 or y0 >= y1:
        return None
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dx, dy = xx - cx, yy - cy
    ca, sa = math.cos(angle_rad), math.sin(angle_rad)
    u = (dx * ca + dy * sa) / ra
    v = (-dx * sa + dy * ca) / rb
    rad = np.hypot(u, v)
    phi = np.arctan2(v, u)
    edge = np.ones_like(phi)
    for k in range(n_lobes[0], n_lobes[1] + 1):
        edge += lobe_amp * rng.uniform(0.2, 1.0) / (k - n_lobes[0] + 1) * np.cos(k * phi + rng.uniform(0, 2 * math.pi))
    inside = rad <= edge
    if not inside.any():
        return None
    return (y0, y1, x0, x1), inside


def _normal(theta_deg):
    t = math.radians(theta_deg)
    return math.cos(t), math.sin(t)


def _row_lines(rng, spec: FieldSpec) -> list[tuple[float, float]]:
    h, w = spec.height, spec.width
    theta0 = wrap_axis_deg(spec.row_orientation_deg + 90.0)
    nx, ny = _normal(theta0)
    corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=np.float64)
    proj = corners @ np.array([nx, ny])
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    c_proj = cx * nx + cy * ny

    lines = []
    rho = proj.min() + rng.uniform(0.2, 1.0) * spec.row_spacing_px
    while rho < proj.max():
        # rows are jittered in angle about their crossing of the central normal
        qx = cx + (rho - c_proj) * nx
        qy = cy + (rho - c_proj) * ny
        theta = wrap_axis_deg(theta0 + rng.uniform(-1, 1) * spec.row_angle_jitter_deg)
        tx, ty = _normal(theta)
        r = qx * tx + qy * ty
        ends = line_endpoints(theta, r, (h, w))
        if ends is not None and math.dist(*ends) >= spec.min_row_length_px:
            lines.append((float(theta), float(r)))
        rho += spec.row_spacing_px + rng.uniform(-1, 1) * spec.spacing_jitter_px
    return lines


def _distance_to_lines(xs, ys, lines) -> np.ndarray:
    d = np.full(np.shape(xs), np.inf)
    for theta, rho in lines:
        nx, ny = _normal(theta)
        d = np.minimum(d, np.abs(np.asarray(xs) * nx + np.asarray(ys) * ny - rho))
    return d


def _touches_other_weed(weed_ids, own, cx, cy, radius) -> bool:
    h, w = weed_ids.shape
    x0, x1 = max(int(cx - radius), 0), min(int(cx + radius) + 2, w)
    y0, y1 = max(int(cy - radius), 0), min(int(cy + radius) + 2, h)
    if x0 >= x1 or y0 >= y1:
        return False
    yy, xx = np.mgrid[y0:y1, x0:x1]
    near = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius
    ids = np.unique(weed_ids[y0:y1, x0:x1][near])
    return any(i > 0 and (i - 1) not in own for i in ids)


def _random_row_point(rng, lines, shape):
    theta, rho = lines[rng.integers(len(lines))]
    nx, ny = _normal(theta)
    (x0, y0), (x1, y1) = line_endpoints(theta, rho, shape)
    t = rng.uniform()
    return nx, ny, x0 + t * (x1 - x0), y0 + t * (y1 - y0)


def generate(spec: FieldSpec) -> tuple[np.ndarray, FieldGroundTruth]:
    """Render a field image and its ground truth. Bit-exact under ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    shape = (h, w)

    soil = _soil(rng, spec)
    classes = np.zeros(shape, dtype=np.uint8)
    lab = np.zeros(shape + (3,), dtype=np.float64)
    weed_ids = np.zeros(shape, dtype=np.int32)

    lines = _row_lines(rng, spec)
    crop_mean = np.asarray(spec.crop_lab, dtype=np.float64)
    weed_mean = np.asarray(spec.effective_weed_lab, dtype=np.float64)
    blob_sigma = 0.6

    # crop plants along each row, overrunning the borders so rows reach the edge
    for theta, rho in lines:
        nx, ny = _normal(theta)
        dx, dy = -ny, nx
        (x0, y0), (x1, y1) = line_endpoints(theta, rho, shape)
        length = math.hypot(x1 - x0, y1 - y0)
        t = -spec.plant_spacing_px * rng.uniform(0.0, 1.0) - spec.row_width_px
        while t < length + spec.row_width_px:
            step = spec.plant_spacing_px * rng.uniform(0.8, 1.2)
            t += step
            if rng.uniform() < spec.plant_gap_prob:
                continue
            lat = rng.normal(0.0, spec.plant_lateral_sigma_px)
            px = x0 + t * dx + lat * nx
            py = y0 + t * dy + lat * ny
            ra = spec.plant_spacing_px * rng.uniform(0.65, 0.9)
            rb = spec.row_width_px / 2.0 * rng.uniform(0.85, 1.05)
            res = _blob_mask(rng, px, py, ra, rb, math.atan2(dy, dx), spec.crop_lobe_amplitude, shape)
            if res is None:
                continue
            (ya, yb, xa, xb), inside = res
            colour = crop_mean + rng.normal(0.0, spec.crop_lab_sigma * blob_sigma, 3)
            region_cls = classes[ya:yb, xa:xb]
            region_lab = lab[ya:yb, xa:xb]
            region_cls[inside] = CROP
            region_lab[inside] = colour + rng.normal(0.0, spec.crop_lab_sigma * 0.8, (int(inside.sum()), 3))

    weeds: list[WeedBlob] = []
    area = float(h * w)

    def paint_weed(cx, cy, kind, r=None):
        if r is None:
            r = rng.uniform(*spec.weed_radius_px)
        aspect = rng.uniform(0.8, 1.0)
        res = _blob_mask(rng, cx, cy, r, r * aspect, rng.uniform(0, math.pi), spec.weed_lobe_amplitude, shape, (3, 6))
        if res is None:
            return
        (ya, yb, xa, xb), inside = res
        colour = weed_mean + rng.normal(0.0, spec.weed_lab_sigma * blob_sigma, 3)
        classes[ya:yb, xa:xb][inside] = WEED
        lab[ya:yb, xa:xb][inside] = colour + rng.normal(0.0, spec.weed_lab_sigma * 0.8, (int(inside.sum()), 3))
        weed_ids[ya:yb, xa:xb][inside] = len(weeds) + 1
        yy, xx = np.nonzero(inside)
        weeds.append(
            WeedBlob(
                (float(xx.mean() + xa), float(yy.mean() + ya)),
                (int(xx.min() + xa), int(yy.min() + ya), int(xx.max() + xa), int(yy.max() + ya)),
                kind == "interline",
                kind,
            )
        )

    # interline weeds: rejection-sample positions far enough from every row
    n_inter = rng.poisson(spec.interline_weed_density * area / 1e4)
    reach = (spec.row_spacing_px + spec.spacing_jitter_px) / 2.0 + 1.0
    placed, attempts = 0, 0
    while placed < n_inter and attempts < 50 * max(n_inter, 1):
        attempts += 1
        r = rng.uniform(*spec.weed_radius_px)
        clearance = spec.row_width_px / 2.0 + r * (1.0 + spec.weed_lobe_amplitude) + spec.interline_margin_px
        cx, cy = rng.uniform(0, w - 1), rng.uniform(0, h - 1)
        if lines:
            d = _distance_to_lines(cx, cy, lines)
            # stay between rows: a rowless image corner would otherwise
            # collect a strip of weeds running parallel to the last row
            if d < clearance or d > reach:
                continue
        paint_weed(cx, cy, "interline", r)
        placed += 1

    if lines:
        # edge clusters: a chain of blobs rooted on the row border, stepping outward
        # a fixed cluster count (not Poisson): few large clusters would make
        # the per-field weed supply swing wildly between seeds
        for _ in range(int(round(spec.edge_weed_density * area / 1e4))):
            side = rng.choice((-1, 1))
            # root the cluster on crop, not in a gap between plants
            for _ in range(50):
                nx, ny, bx, by = _random_row_point(rng, lines, shape)
                qx = int(round(bx + side * (spec.row_width_px / 2.0 - 3.0) * nx))
                qy = int(round(by + side * (spec.row_width_px / 2.0 - 3.0) * ny))
                if 0 <= qx < w and 0 <= qy < h and classes[qy, qx] == CROP:
                    break
            dx, dy = -ny, nx
            lat = spec.row_width_px / 2.0
            n_blobs = int(rng.integers(spec.edge_cluster_blobs[0], spec.edge_cluster_blobs[1] + 1))
            along = 0.0
            lat_max = spec.edge_cluster_reach * spec.row_spacing_px
            own = set()
            # outward random walk; it stops before touching another weed so
            # clusters from facing rows never merge into a bridge
            for j in range(n_blobs):
                r = rng.uniform(*spec.weed_radius_px)
                if j == 0:
                    step_lat, step_along = r * rng.uniform(0.3, 0.7), 0.0
                else:
                    step_lat, step_along = r * rng.uniform(0.5, 1.1), rng.normal(0.0, 0.7 * r)
                cl = min(lat + step_lat, lat_max)
                ca = along + step_along
                cx = bx + side * cl * nx + ca * dx
                cy = by + side * cl * ny + ca * dy
                if _touches_other_weed(weed_ids, own, cx, cy, r * (1.0 + spec.weed_lobe_amplitude) + 2.0):
                    break
                lat, along = cl, ca
                own.add(len(weeds))  # index the blob will get, if it lands in the image
                paint_weed(cx, cy, "edge", r)
        for _ in range(rng.poisson(spec.intrarow_weed_density * area / 1e4)):
            nx, ny, bx, by = _random_row_point(rng, lines, shape)
            lat = rng.normal(0.0, 2.0)
            paint_weed(bx + lat * nx, by + lat * ny, "intrarow")

    img = np.clip(np.rint(soil), 0, 255).astype(np.uint8)
    plant = classes > 0
    img[plant] = lab_to_rgb(lab[plant])
    return img, FieldGroundTruth(classes, lines, weeds, weed_ids)


# --- supervised samples from truth ------------------------------------------


def ground_truth_patches(img: np.ndarray, truth: FieldGroundTruth, image_id: str = "test",
                         window: int = 64, stride: int = 32, purity: float = 0.9,
                         min_veg_fraction: float = 0.05):
    """Patches labeled from truth, standing in for expert annotation.

    Crop samples come from a grid scan: windows whose truth vegetation is
    at least ``purity`` crop. Weed samples are centred on each weed blob
    and kept when weed is the majority of the window's vegetation.
    """
    from .labeler import Patch, clamp_window

    h, w = truth.classes.shape
    out = []
    area = window * window
    ys = _grid_positions(h, window, stride)
    xs = _grid_positions(w, window, stride)
    for y in ys:
        for x in xs:
            win = truth.classes[y : y + window, x : x + window]
            crop = int((win == CROP).sum())
            weed = int((win == WEED).sum())
            veg = crop + weed
            if veg >= min_veg_fraction * area and crop >= purity * veg:
                out.append(Patch(img[y : y + window, x : x + window].copy(), "crop", (image_id, x, y)))
    seen = set()
    for blob in truth.weeds:
        x, y = clamp_window(blob.centroid[0], blob.centroid[1], window, (h, w))
        if (x, y) in seen:
            continue
        win = truth.classes[y : y + window, x : x + window]
        weed = int((win == WEED).sum())
        crop = int((win == CROP).sum())
        if weed > crop:
            seen.add((x, y))
            out.append(Patch(img[y : y + window, x : x + window].copy(), "weed", (image_id, x, y)))
    return out


def _grid_positions(n: int, window: int, stride: int) -> list[int]:
    pos = list(range(0, n - window + 1, stride))
    if pos[-1] != n - window:
        pos.append(n - window)
    return pos
