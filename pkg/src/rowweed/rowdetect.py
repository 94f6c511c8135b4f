"""Crop-line detection on row skeletons.

Lines use the normal form ``rho = x*cos(theta) + y*sin(theta)`` with the
origin at the top-left pixel and y pointing down; ``theta`` is the angle
of the line normal in (-90, 90]. A line whose direction angle (as
returned by :func:`rowweed.raster.component_orientation`) is ``alpha``
has normal ``theta = alpha + 90`` wrapped into (-90, 90].

Votes are normalized by the accumulator of an all-ones image so that a
line fully covered by skeleton scores 1 whatever its length. Peaks are
then peeled off one at a time: each peak's supporting skeleton pixels
are recovered, their normalized votes subtracted, and the peak kept as
a crop line only if its angle is close to the dominant row direction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np

from .errors import DimensionMismatch, EmptySkeleton
from .raster import Skeleton, axis_distance_deg, wrap_axis_deg


@dataclass(frozen=True)
class HoughConfig:
    theta_res_deg: float = 0.1
    rho_res_px: float = 1.0
    norm_threshold: float = 0.1
    angle_gate_deg: float = 20.0
    support_band_px: float = 10.0
    histogram_bin_deg: float = 1.0
    # bins whose chord through the image is shorter than this fraction of
    # the short image side are never peaks (corner chords of a few pixels
    # reach H_norm = 1 from a single skeleton pixel)
    min_chord_fraction: float = 0.15
    refine: bool = True
    refine_band_px: float = 3.0
    # skeleton pixels this close to the image border are left out of the
    # refit: a row clipped by the border thins to a centreline pulled inward
    refine_border_px: float = 15.0
    # expected angular spread between rows of one field; refined line
    # angles are pulled toward the field's common angle by their own
    # uncertainty relative to this spread (0 disables the pooling)
    parallel_prior_deg: float = 0.1
    # an accepted line lying entirely within this distance of an earlier
    # one (inside the image) is leftover support of the same row
    min_line_separation_px: float = 30.0

    def __post_init__(self):
        if not self.theta_res_deg > 0 or not self.rho_res_px > 0:
            raise ValueError("resolutions must be positive")
        if not 0 < self.norm_threshold < 1:
            raise ValueError("norm_threshold must lie in (0, 1)")
        if not 0 < self.angle_gate_deg < 90:
            raise ValueError("angle_gate_deg must lie in (0, 90)")
        if 180.0 / self.theta_res_deg != round(180.0 / self.theta_res_deg):
            raise ValueError("theta_res_deg must divide 180")
        if self.parallel_prior_deg < 0:
            raise ValueError("parallel_prior_deg must be >= 0")

    @property
    def theta_bins(self) -> int:
        return int(round(180.0 / self.theta_res_deg))

    def thetas_deg(self) -> np.ndarray:
        """Bin angles in (-90, 90], ascending; -90 itself is excluded."""
        n = self.theta_bins
        return -90.0 + self.theta_res_deg * np.arange(1, n + 1, dtype=np.float64)

    def rho_half_bins(self, shape) -> int:
        h, w = shape
        return int(math.ceil(math.hypot(w, h) / self.rho_res_px))


@dataclass
class HoughAccumulator:
    votes: np.ndarray  # (theta_bins, rho_bins)
    thetas_deg: np.ndarray
    rhos_px: np.ndarray
    shape: tuple[int, int]  # image (height, width)

    @property
    def theta_bins(self) -> int:
        return self.votes.shape[0]

    @property
    def rho_bins(self) -> int:
        return self.votes.shape[1]

    def same_grid(self, other: "HoughAccumulator") -> bool:
        return (
            self.votes.shape == other.votes.shape
            and self.shape == other.shape
            and np.array_equal(self.thetas_deg, other.thetas_deg)
            and np.array_equal(self.rhos_px, other.rhos_px)
        )

    def peak(self) -> tuple[int, int, float]:
        k = int(np.argmax(self.votes))
        t, r = divmod(k, self.rho_bins)
        return t, r, float(self.votes[t, r])


@dataclass
class DetectedLine:
    theta_deg: float
    rho_px: float
    score: float
    supporting_component_ids: list[int] = field(default_factory=list)
    support_px: int = 0

    @property
    def direction_deg(self) -> float:
        return wrap_axis_deg(self.theta_deg - 90.0)


@numba.njit(cache=True)
def _accumulate(xs, ys, cos_t, sin_t, inv_res, half_bins, out):
    n_theta = cos_t.shape[0]
    for t in range(n_theta):
        c = cos_t[t]
        s = sin_t[t]
        row = out[t]
        for i in range(xs.shape[0]):
            rho = xs[i] * c + ys[i] * s
            b = int(math.floor(rho * inv_res + 0.5)) + half_bins
            row[b] += 1


def _trig(cfg: HoughConfig):
    theta = np.deg2rad(cfg.thetas_deg())
    return np.cos(theta), np.sin(theta)


def _empty(cfg: HoughConfig, shape) -> HoughAccumulator:
    half = cfg.rho_half_bins(shape)
    rhos = cfg.rho_res_px * np.arange(-half, half + 1, dtype=np.float64)
    votes = np.zeros((cfg.theta_bins, 2 * half + 1), dtype=np.int64)
    return HoughAccumulator(votes, cfg.thetas_deg(), rhos, tuple(shape))


def hough_transform(points: np.ndarray, cfg: HoughConfig, shape) -> HoughAccumulator:
    """Vote every ``(x, y)`` point into each theta column.

    ``shape`` is the image ``(height, width)``; rho bins cover
    ``[-D, D]`` with D the image diagonal.
    """
    acc = _empty(cfg, shape)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts):
        h, w = shape
        if (pts[:, 0].min() < 0 or pts[:, 1].min() < 0
                or pts[:, 0].max() > w - 1 or pts[:, 1].max() > h - 1):
            raise ValueError("points outside image bounds")
        cos_t, sin_t = _trig(cfg)
        _accumulate(
            np.ascontiguousarray(pts[:, 0]),
            np.ascontiguousarray(pts[:, 1]),
            cos_t,
            sin_t,
            1.0 / cfg.rho_res_px,
            cfg.rho_half_bins(shape),
            acc.votes,
        )
    return acc


@lru_cache(maxsize=8)
def _hough_ones_cached(shape: tuple[int, int], cfg: HoughConfig) -> HoughAccumulator:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    acc = hough_transform(np.column_stack((xx.ravel(), yy.ravel())), cfg, shape)
    acc.votes.setflags(write=False)
    return acc


def hough_ones(shape, cfg: HoughConfig) -> HoughAccumulator:
    """Accumulator of an all-ones image, cached per ``(shape, cfg)``.

    The returned votes array is read-only.
    """
    return _hough_ones_cached(tuple(int(v) for v in shape), cfg)


def normalize(H: HoughAccumulator, H1: HoughAccumulator) -> HoughAccumulator:
    """Binwise ``H / H1``; bins never crossed by the image stay 0."""
    if not H.same_grid(H1):
        raise DimensionMismatch("accumulators do not share a grid")
    out = np.zeros(H.votes.shape, dtype=np.float64)
    np.divide(H.votes, H1.votes, out=out, where=H1.votes > 0)
    return HoughAccumulator(out, H.thetas_deg, H.rhos_px, H.shape)


def main_orientation(sk: Skeleton, bin_deg: float = 1.0) -> float:
    """Dominant skeleton direction in degrees, (-90, 90].

    Histogram of component directions, each weighted by pixel count,
    bins centred on multiples of ``bin_deg``. Single-pixel components
    carry no direction and are skipped.
    """
    comps = [c for c in sk.components if c.size >= 2]
    if not comps:
        raise EmptySkeleton("skeleton has no component with a direction")
    nbins = int(round(180.0 / bin_deg))
    angles = np.array([c.orientation_deg for c in comps])
    weights = np.array([c.size for c in comps], dtype=np.float64)
    # bin k is centred on -90 + (k + 1) * bin_deg, so 90 is a centre and -90 folds onto it
    idx = np.rint((angles + 90.0) / bin_deg).astype(np.int64) - 1
    idx %= nbins
    hist = np.bincount(idx, weights=weights, minlength=nbins)
    k = int(np.argmax(hist))
    return float(-90.0 + (k + 1) * bin_deg)


def line_distance(points: np.ndarray, theta_deg: float, rho: float) -> np.ndarray:
    """Perpendicular distance of ``(x, y)`` points to a normal-form line."""
    t = math.radians(theta_deg)
    pts = np.asarray(points, dtype=np.float64)
    return np.abs(pts[:, 0] * math.cos(t) + pts[:, 1] * math.sin(t) - rho)


@dataclass
class DetectionTrace:
    """Per-iteration record of the peak-peeling loop."""

    peaks: list[tuple[float, float, float]] = field(default_factory=list)
    accepted: list[bool] = field(default_factory=list)
    removed_px: list[int] = field(default_factory=list)


def detect_crop_lines(
    sk: Skeleton,
    cfg: HoughConfig | None = None,
    shape=None,
    theta_lines: float | None = None,
    trace: DetectionTrace | None = None,
) -> list[DetectedLine]:
    """Crop lines from a row skeleton, in extraction order.

    ``theta_lines`` is the dominant row *direction*; it defaults to
    :func:`main_orientation` of the skeleton. Peaks are compared with its
    normal angle using undirected (mod 180) distance.
    """
    cfg = cfg or HoughConfig()
    shape = tuple(shape) if shape is not None else tuple(sk.shape)
    if not len(sk):
        raise EmptySkeleton("empty skeleton")
    if theta_lines is None:
        theta_lines = main_orientation(sk, cfg.histogram_bin_deg)
    normal_lines = wrap_axis_deg(theta_lines + 90.0)

    pts = sk.pixels()
    comp_ids = sk.component_index()
    H1 = hough_ones(shape, cfg)
    Hn = normalize(hough_transform(pts, cfg, shape), H1)
    votes = Hn.votes
    ones = H1.votes
    min_chord = cfg.min_chord_fraction * min(shape)
    if min_chord > 0:
        votes[ones < min_chord] = 0.0
    alive = np.ones(len(pts), dtype=bool)

    lines: list[DetectedLine] = []
    support: list[np.ndarray] = []
    while True:
        t, r, peak = Hn.peak()
        if not peak > cfg.norm_threshold:
            break
        theta_m = float(Hn.thetas_deg[t])
        rho_m = float(Hn.rhos_px[r])

        near = alive & (line_distance(pts, theta_m, rho_m) <= cfg.support_band_px)
        n_removed = int(near.sum())
        if n_removed:
            temp = hough_transform(pts[near], cfg, shape).votes
            hit = temp > 0
            votes[hit] -= temp[hit] / ones[hit]
            np.maximum(votes, 0.0, out=votes)
            alive &= ~near
        # a peak left by float residue is cleared so the loop always advances
        if not votes[t, r] < peak or n_removed == 0:
            votes[t, r] = 0.0

        accept = axis_distance_deg(theta_m, normal_lines) < cfg.angle_gate_deg
        if trace is not None:
            trace.peaks.append((theta_m, rho_m, peak))
            trace.accepted.append(bool(accept))
            trace.removed_px.append(n_removed)
        if accept:
            ids = sorted({int(i) for i in np.unique(comp_ids[near])})
            theta_r, rho_r = theta_m, rho_m
            fit_pts = _away_from_border(pts[near], shape, cfg.refine_border_px)
            if cfg.refine and len(fit_pts) >= 2:
                theta_r, rho_r = refine_line(fit_pts, theta_m, rho_m, cfg.refine_band_px)
            if _duplicates(theta_r, rho_r, lines, shape, cfg.min_line_separation_px):
                if trace is not None:
                    trace.accepted[-1] = False
                continue
            lines.append(DetectedLine(theta_r, rho_r, peak, ids, n_removed))
            support.append(fit_pts)
    if cfg.refine and cfg.parallel_prior_deg > 0 and len(lines) >= 2:
        lines = pool_parallel(lines, support, cfg.parallel_prior_deg, cfg.refine_band_px)
    return lines


def fit_line(points: np.ndarray) -> tuple[float, float]:
    """Total-least-squares line through ``(x, y)`` points, normal form."""
    from .raster import component_orientation

    pts = np.asarray(points, dtype=np.float64)
    theta = wrap_axis_deg(component_orientation(pts) + 90.0)
    t = math.radians(theta)
    cx, cy = pts.mean(axis=0)
    return theta, cx * math.cos(t) + cy * math.sin(t)


def refine_line(
    points, theta_deg, rho, band_px=3.0, max_shift_deg=2.0, min_points=10, rounds=10
):
    """Least-squares refit of a peak line on its nearby support pixels.

    Starting from the peak, repeatedly fits the pixels within ``band_px``
    of the current line. Falls back to the peak when support is thin or
    the fit drifts more than ``max_shift_deg`` from it.
    """
    pts = np.asarray(points, dtype=np.float64)
    theta, r = theta_deg, rho
    for _ in range(rounds):
        close = line_distance(pts, theta, r) <= band_px
        if close.sum() < min_points:
            break
        prev = (theta, r)
        theta, r = fit_line(pts[close])
        if axis_distance_deg(theta, prev[0]) < 1e-3 and abs(r - prev[1]) < 1e-2:
            break
    if axis_distance_deg(theta, theta_deg) > max_shift_deg:
        return theta_deg, rho
    return float(theta), float(r)


def angle_stderr(points, theta_deg, rho, bin_px=16.0) -> float:
    """Standard error (degrees) of a line's angle from its support pixels.

    Pixels are reduced to one median offset per ``bin_px`` slice along
    the line before the slope regression, since neighbouring skeleton
    pixels of one plant are strongly correlated.
    """
    pts = np.asarray(points, dtype=np.float64)
    t = math.radians(theta_deg)
    nx, ny = math.cos(t), math.sin(t)
    off = pts[:, 0] * nx + pts[:, 1] * ny - rho
    along = -pts[:, 0] * ny + pts[:, 1] * nx
    slot = np.floor(along / bin_px).astype(np.int64)
    _, inv = np.unique(slot, return_inverse=True)
    k = int(inv.max()) + 1 if len(inv) else 0
    if k < 3:
        return math.inf
    mo = np.array([np.median(off[inv == i]) for i in range(k)])
    ma = np.array([np.median(along[inv == i]) for i in range(k)])
    ma = ma - ma.mean()
    sxx = float(ma @ ma)
    if sxx <= 0:
        return math.inf
    slope = float(ma @ mo) / sxx
    resid = mo - mo.mean() - slope * ma
    s2 = float(resid @ resid) / (k - 2)
    return math.degrees(math.sqrt(max(s2, 1e-12) / sxx))


def pool_parallel(
    lines, support, prior_deg=0.1, band_px=3.0, outlier_sigma=4.0
) -> list[DetectedLine]:
    """Shrink each line's angle toward the field's common row angle.

    Rows of one field are near-parallel, so a short row's angle is better
    estimated by borrowing strength from the long ones. Each angle is
    combined with the inverse-variance mean of all lines, weighting its
    own estimate by ``1/se^2`` and the common angle by ``1/prior^2``;
    ``rho`` is then re-fit at the pooled angle from the line's band pixels.
    """
    se = []
    bands = []
    for ln, pts in zip(lines, support):
        pts = np.asarray(pts, dtype=np.float64)
        band = pts[line_distance(pts, ln.theta_deg, ln.rho_px) <= band_px]
        bands.append(band)
        se.append(angle_stderr(band, ln.theta_deg, ln.rho_px) if len(band) >= 3 else math.inf)
    se = np.asarray(se)
    finite = np.isfinite(se)
    if finite.sum() < 2:
        return lines
    ang = np.array([ln.theta_deg for ln in lines])
    ref = ang[int(np.argmin(np.where(finite, se, np.inf)))]
    rel = np.mod(ang - ref + 90.0, 180.0) - 90.0  # signed offsets around ref
    w = np.where(finite, 1.0 / (se**2 + prior_deg**2), 0.0)
    common = _weighted_median(rel, w)
    # lines that disagree with the common angle beyond their uncertainty
    # (spurious peaks inside the angle gate) neither vote nor get pooled
    member = finite & (np.abs(rel - common) <= outlier_sigma * np.sqrt(se**2 + prior_deg**2))
    if member.sum() < 2:
        return lines
    common = float((rel[member] * w[member]).sum() / w[member].sum())
    out = []
    for ln, band, s, d, m in zip(lines, bands, se, rel, member):
        if not m:
            out.append(ln)
            continue
        a, b = 1.0 / s**2, 1.0 / prior_deg**2
        theta = float(wrap_axis_deg(ref + (a * d + b * common) / (a + b)))
        t = math.radians(theta)
        rho = float(np.mean(band[:, 0] * math.cos(t) + band[:, 1] * math.sin(t)))
        out.append(DetectedLine(theta, rho, ln.score, ln.supporting_component_ids, ln.support_px))
    return out


def _away_from_border(pts, shape, margin):
    """Drop points within ``margin`` of the image border, unless that
    would leave too few to fit."""
    if margin <= 0 or len(pts) == 0:
        return pts
    h, w = shape
    x, y = pts[:, 0], pts[:, 1]
    keep = (x >= margin) & (y >= margin) & (x <= w - 1 - margin) & (y <= h - 1 - margin)
    return pts[keep] if keep.sum() >= 10 else pts


def _duplicates(theta, rho, lines, shape, separation) -> bool:
    """True if the in-image chord of (theta, rho) stays within
    ``separation`` of some line in ``lines``."""
    if separation <= 0 or not lines:
        return False
    ends = line_endpoints(theta, rho, shape)
    if ends is None:
        return False
    chord = np.asarray(ends, dtype=np.float64)
    return any(float(line_distance(chord, ln.theta_deg, ln.rho_px).max()) < separation for ln in lines)


def _weighted_median(values, weights) -> float:
    order = np.argsort(values)
    cw = np.cumsum(weights[order])
    return float(values[order][np.searchsorted(cw, 0.5 * cw[-1])])


def detect_from_mask(mask: np.ndarray, cfg: HoughConfig | None = None):
    """Skeletonize a vegetation mask and detect its crop lines.

    Returns ``(lines, skeleton, theta_lines)``.
    """
    from .raster import skeletonize

    cfg = cfg or HoughConfig()
    sk = skeletonize(mask)
    if not len(sk):
        raise EmptySkeleton("vegetation mask thins to nothing")
    theta_lines = main_orientation(sk, cfg.histogram_bin_deg)
    lines = detect_crop_lines(sk, cfg, mask.shape, theta_lines=theta_lines)
    return lines, sk, theta_lines


def write_lines_csv(path, lines: list[DetectedLine]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta_deg", "rho_px", "score"])
        for ln in lines:
            w.writerow([repr(ln.theta_deg), repr(ln.rho_px), repr(ln.score)])


def read_lines_csv(path) -> list[DetectedLine]:
    with open(path, newline="") as fh:
        return [
            DetectedLine(float(row["theta_deg"]), float(row["rho_px"]), float(row["score"]))
            for row in csv.DictReader(fh)
        ]


def line_endpoints(theta_deg: float, rho: float, shape):
    """Clip a normal-form line to the image rectangle.

    Returns ``((x0, y0), (x1, y1))`` or ``None`` if it misses the image.
    """
    h, w = shape
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    px, py = rho * c, rho * s  # foot of the normal
    dx, dy = -s, c
    lo, hi = -math.inf, math.inf
    for p, d, vmax in ((px, dx, w - 1), (py, dy, h - 1)):
        if abs(d) < 1e-12:
            if p < 0 or p > vmax:
                return None
            continue
        a, b = (0 - p) / d, (vmax - p) / d
        lo, hi = max(lo, min(a, b)), min(hi, max(a, b))
    if lo > hi:
        return None
    return (px + lo * dx, py + lo * dy), (px + hi * dx, py + hi * dy)


def rasterize_line(theta_deg: float, rho: float, shape) -> np.ndarray:
    """1-pixel trace of a normal-form line inside the image, ``(n, 2)`` as
    ``(x, y)``, ordered along the line direction."""
    h, w = shape
    ends = line_endpoints(theta_deg, rho, shape)
    if ends is None:
        return np.zeros((0, 2), dtype=np.int64)
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    if abs(s) >= abs(c):  # closer to horizontal: one pixel per column
        xs = np.arange(w)
        ys = np.rint((rho - xs * c) / s).astype(np.int64)
    else:
        ys = np.arange(h)
        xs = np.rint((rho - ys * s) / c).astype(np.int64)
    keep = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    return np.column_stack((xs[keep], ys[keep])).astype(np.int64)
