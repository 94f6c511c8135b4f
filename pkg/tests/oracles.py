"""Slow, obviously-correct reference implementations used as test oracles.

None of these import the code under test; they follow the textbook
definitions with plain loops so that agreement is meaningful.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def otsu_exhaustive(values, bins: int = 256) -> float:
    """Try every interior bin boundary of a ``bins``-bin histogram over
    [min, max]; class 0 is ``v <= t``. Returns the boundary with the
    largest between-class variance (first one on ties)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(v.min()), float(v.max())
    width = (hi - lo) / bins
    best_t, best_s = None, -1.0
    for k in range(1, bins):
        t = lo + width * k
        low = v[v <= t]
        high = v[v > t]
        if len(low) == 0 or len(high) == 0:
            continue
        w0 = len(low) / len(v)
        w1 = len(high) / len(v)
        s = w0 * w1 * (low.mean() - high.mean()) ** 2
        if s > best_s:
            best_s, best_t = s, t
    return best_t


def hough_bruteforce(points, thetas_deg, rho_res: float, half_bins: int) -> np.ndarray:
    """Per-point, per-angle vote loop on a (theta, rho) grid whose rho
    bin ``b`` is centred on ``(b - half_bins) * rho_res``."""
    out = np.zeros((len(thetas_deg), 2 * half_bins + 1), dtype=np.int64)
    cos_t = np.cos(np.deg2rad(thetas_deg))
    sin_t = np.sin(np.deg2rad(thetas_deg))
    for x, y in points:
        for t in range(len(thetas_deg)):
            rho = float(x) * float(cos_t[t]) + float(y) * float(sin_t[t])
            out[t, int(math.floor(rho / rho_res + 0.5)) + half_bins] += 1
    return out


def union_find_count(mask) -> int:
    """Number of 8-connected foreground components via union-find."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    parent = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                parent[(y, x)] = (y, x)
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            for dy, dx in ((-1, -1), (-1, 0), (-1, 1), (0, -1)):
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w and mask[yy, xx]:
                    union((y, x), (yy, xx))
    return len({find(p) for p in parent})


def zhang_suen_reference(mask) -> np.ndarray:
    """Zhang-Suen thinning, one pixel at a time, exactly as in the
    original two-subiteration description."""
    img = np.pad(np.asarray(mask, dtype=np.uint8), 1)
    h, w = img.shape

    def nbrs(y, x):
        return [img[y - 1, x], img[y - 1, x + 1], img[y, x + 1], img[y + 1, x + 1],
                img[y + 1, x], img[y + 1, x - 1], img[y, x - 1], img[y - 1, x - 1]]

    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            kill = []
            for y in range(1, h - 1):
                for x in range(1, w - 1):
                    if not img[y, x]:
                        continue
                    p = nbrs(y, x)
                    b = sum(p)
                    a = sum(1 for i in range(8) if p[i] == 0 and p[(i + 1) % 8] == 1)
                    p2, p4, p6, p8 = p[0], p[2], p[4], p[6]
                    if step == 0:
                        cond = p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
                    else:
                        cond = p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
                    if 2 <= b <= 6 and a == 1 and cond:
                        kill.append((y, x))
            for y, x in kill:
                img[y, x] = 0
            changed |= bool(kill)
    return img[1:-1, 1:-1].astype(bool)


def mann_whitney_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie) over all positive/negative pairs."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def best_assignment_cost(cost) -> float:
    """Minimal total cost of a perfect matching by trying every permutation."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def srgb_to_lab_reference(rgb) -> tuple[float, float, float]:
    """Scalar sRGB (D65) to CIELAB straight from the published formulas."""
    def lin(c):
        c = c / 255.0
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    r, g, b = (lin(float(c)) for c in rgb)
    X = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b
    Y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b
    Z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b
    xn, yn, zn = 0.95047, 1.0, 1.08883

    def f(t):
        return t ** (1 / 3) if t > (6 / 29) ** 3 else t / (3 * (6 / 29) ** 2) + 4 / 29

    fx, fy, fz = f(X / xn), f(Y / yn), f(Z / zn)
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)
