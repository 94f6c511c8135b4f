"""Whole-image classification.

Overlapping windows are scored on a regular grid and each window centre
becomes a dot (weed, crop or uncertain). Every superpixel then takes the
majority dot class; ties, uncertain majorities and dot-free regions fall
back on geometry: a region crossed by a crop line is crop, any other is
weed. Mostly-soil regions and soil pixels end up as background.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .labeler import WINDOW, grid_positions
from .superpixel import SuperpixelMap, superpixels_on_line

BACKGROUND, CROP, WEED = 0, 1, 2
UNCERTAIN = 3
DOT_NAMES = {CROP: "crop", WEED: "weed", UNCERTAIN: "uncertain"}
CLASS_COLORS = {CROP: (0, 255, 0), WEED: (255, 0, 0)}


@dataclass
class DotGrid:
    stride: int
    x: np.ndarray  # window centres, (n,)
    y: np.ndarray
    p_weed: np.ndarray
    dot_class: np.ndarray  # CROP / WEED / UNCERTAIN
    eps: float = 0.05

    def __len__(self) -> int:
        return len(self.p_weed)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "p_weed", "class"])
            for x, y, p, c in zip(self.x, self.y, self.p_weed, self.dot_class):
                w.writerow([int(x), int(y), repr(float(p)), DOT_NAMES[int(c)]])


def classify_dots(p_weed, eps: float = 0.05) -> np.ndarray:
    """Weed above ``0.5 + eps``, crop below ``0.5 - eps``, else uncertain."""
    p = np.asarray(p_weed, dtype=np.float64)
    out = np.full(p.shape, UNCERTAIN, dtype=np.int8)
    out[p > 0.5 + eps] = WEED
    out[p < 0.5 - eps] = CROP
    return out


def scan_image(img: np.ndarray, scorer, stride: int = 16, eps: float = 0.05,
               window: int = WINDOW, batch: int = 256) -> DotGrid:
    """Score ``window``-square windows every ``stride`` px.

    The grid is clamped: the last row/column of windows is flush with the
    image border even when the stride does not divide the free space.
    Dots sit at window centres.
    """
    if not 1 <= stride <= window:
        raise ValueError(f"stride must lie in [1, {window}]")
    h, w = img.shape[:2]
    ys = grid_positions(h, window, stride)
    xs = grid_positions(w, window, stride)
    yy, xx = np.meshgrid(np.asarray(ys), np.asarray(xs), indexing="ij")
    yy, xx = yy.ravel(), xx.ravel()
    scores = np.empty(len(xx), dtype=np.float64)
    for s in range(0, len(xx), batch):
        wins = np.stack([img[y : y + window, x : x + window] for x, y in zip(xx[s : s + batch], yy[s : s + batch])])
        scores[s : s + batch] = np.asarray(scorer(wins), dtype=np.float64).reshape(-1)
    half = window // 2
    return DotGrid(stride, xx + half, yy + half, scores, classify_dots(scores, eps), eps)


def line_regions(sp: SuperpixelMap, lines) -> np.ndarray:
    """Boolean per region: crossed by at least one line."""
    crossed = np.zeros(sp.count, dtype=bool)
    for ln in lines:
        crossed[list(superpixels_on_line(sp, ln))] = True
    return crossed


def vote_superpixels(dots: DotGrid, sp: SuperpixelMap, lines, vegetation: np.ndarray,
                     background_fraction: float = 0.1) -> np.ndarray:
    """Per-pixel class map (0 background, 1 crop, 2 weed)."""
    vegetation = np.asarray(vegetation, dtype=bool)
    if vegetation.shape != sp.shape:
        raise DimensionMismatch(f"vegetation {vegetation.shape} vs superpixels {sp.shape}")
    h, w = sp.shape
    x = np.asarray(dots.x, dtype=np.int64)
    y = np.asarray(dots.y, dtype=np.int64)
    if len(x) and (x.min() < 0 or y.min() < 0 or x.max() >= w or y.max() >= h):
        raise DimensionMismatch("dot grid extends past the superpixel map")
    k = sp.count
    region = sp.labels[y, x]
    votes = np.zeros((4, k), dtype=np.int64)
    np.add.at(votes, (np.asarray(dots.dot_class, dtype=np.int64), region), 1)
    weed, crop, unc = votes[WEED], votes[CROP], votes[UNCERTAIN]
    fallback = np.where(line_regions(sp, lines), CROP, WEED)
    # a class wins only with a strict plurality over both alternatives
    cls = np.where((weed > crop) & (weed > unc), WEED,
                   np.where((crop > weed) & (crop > unc), CROP, fallback))

    labels = sp.labels.ravel()
    veg = np.bincount(labels, weights=vegetation.ravel(), minlength=k)
    size = np.bincount(labels, minlength=k)
    frac = veg / np.maximum(size, 1)
    cls = np.where(frac < background_fraction, BACKGROUND, cls)
    out = cls[sp.labels].astype(np.uint8)
    out[~vegetation] = BACKGROUND
    return out


def render_overlay(img: np.ndarray, class_map: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Tint weed red and crop green: ``round_half_up((1-a)*pixel + a*colour)``."""
    img = np.asarray(img)
    if img.shape[:2] != class_map.shape:
        raise DimensionMismatch(f"image {img.shape[:2]} vs class map {class_map.shape}")
    out = img.copy()
    for cls, color in CLASS_COLORS.items():
        m = class_map == cls
        blend = (1.0 - alpha) * img[m].astype(np.float64) + alpha * np.asarray(color, dtype=np.float64)
        out[m] = np.floor(blend + 0.5).astype(np.uint8)
    return out


def classify_image(img, scorer, sp: SuperpixelMap, lines, vegetation, stride: int = 16,
                   eps: float = 0.05, background_fraction: float = 0.1):
    """Scan + vote in one call. Returns ``(class_map, dots)``."""
    dots = scan_image(img, scorer, stride, eps)
    return vote_superpixels(dots, sp, lines, vegetation, background_fraction), dots


def weed_share(windows: np.ndarray, cell: int | None = None) -> np.ndarray:
    """Oracle scorer over class-map windows (channel 0 holds 0 soil /
    1 crop / 2 weed): weed share of the vegetation in the central
    ``cell``-square of each window (the whole window when ``None``),
    0.5 when there is none."""
    c = np.asarray(windows)[..., 0]
    if cell is not None:
        h, w = c.shape[1:3]
        y0, x0 = (h - cell) // 2, (w - cell) // 2
        c = c[:, y0 : y0 + cell, x0 : x0 + cell]
    c = c.reshape(len(c), -1)
    weed = (c == WEED).sum(axis=1)
    veg = weed + (c == CROP).sum(axis=1)
    return np.where(veg > 0, weed / np.maximum(veg, 1), 0.5)


def oracle_dots(truth_classes: np.ndarray, stride: int = 16, eps: float = 0.05,
                cell: int | None = None) -> DotGrid:
    """Dot grid from ground truth, for testing the voting stage alone.

    Each dot is scored by the weed share of the truth vegetation in the
    ``cell``-square around it (default: the stride, i.e. the dot's own
    grid cell). Scoring the full window would smear each class over a
    window-sized neighbourhood, which measures the window size rather
    than the vote.
    """
    cell = stride if cell is None else cell
    coded = np.repeat(np.asarray(truth_classes, dtype=np.uint8)[..., None], 3, axis=-1)
    return scan_image(coded, lambda wins: weed_share(wins, cell), stride, eps)
