import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rowweed import inference as inf
from rowweed import superpixel as spx
from rowweed.errors import DimensionMismatch
from rowweed.rowdetect import DetectedLine


def const_scorer(v):
    return lambda wins: np.full(len(wins), v)


def flat_image(h=128, w=128, rgb=(120, 140, 90)):
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[...] = rgb
    return img


# --- dots ---------------------------------------------------------------------------

def test_constant_weed_scorer():
    dots = inf.scan_image(flat_image(), const_scorer(0.9), stride=32)
    assert (dots.dot_class == inf.WEED).all()


def test_constant_undecided_scorer():
    dots = inf.scan_image(flat_image(), const_scorer(0.5), stride=32)
    assert (dots.dot_class == inf.UNCERTAIN).all()


def test_clamped_grid_size():
    dots = inf.scan_image(flat_image(640, 640), const_scorer(0.1), stride=32)
    assert len(dots) == 19 * 19 == 361
    assert dots.x.min() == 32 and dots.x.max() == 640 - 32
    assert (dots.dot_class == inf.CROP).all()


def test_clamped_grid_when_stride_does_not_divide():
    dots = inf.scan_image(flat_image(100, 150), const_scorer(0.1), stride=16)
    assert sorted(set(dots.x.tolist())) == [32, 48, 64, 80, 96, 112, 118]
    assert sorted(set(dots.y.tolist())) == [32, 48, 64, 68]


@given(st.floats(0.0, 1.0), st.floats(0.0, 0.49))
def test_dot_classes_partition(p, eps):
    c = int(inf.classify_dots([p], eps)[0])
    assert c in (inf.CROP, inf.WEED, inf.UNCERTAIN)
    assert (c == inf.WEED) == (p > 0.5 + eps)
    assert (c == inf.CROP) == (p < 0.5 - eps)


def test_scorer_sees_each_window():
    img = np.arange(96 * 96 * 3, dtype=np.uint32).reshape(96, 96, 3).astype(np.uint8)
    seen = []

    def scorer(wins):
        seen.extend(wins)
        return np.zeros(len(wins))

    dots = inf.scan_image(img, scorer, stride=32, batch=3)
    for (cx, cy), w in zip(zip(dots.x, dots.y), seen):
        assert np.array_equal(w, img[cy - 32 : cy + 32, cx - 32 : cx + 32])


# --- voting -------------------------------------------------------------------------

def quad_map():
    return spx.slic(flat_image(100, 100), spx.SlicConfig(count_fraction=4 / 10000))


def dots_at(points, classes):
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    return inf.DotGrid(16, xs, ys, np.full(len(xs), 0.5), np.array(classes, dtype=np.int8))


def test_majority_weed_wins():
    sp = quad_map()
    d = dots_at([(10, 10), (20, 10), (10, 20), (20, 20)], [inf.WEED, inf.WEED, inf.WEED, inf.CROP])
    veg = np.ones((100, 100), dtype=bool)
    out = inf.vote_superpixels(d, sp, [DetectedLine(90.0, 15.0, 1.0)], veg)
    assert out[15, 15] == inf.WEED


def test_uncertain_on_line_is_crop_and_off_line_is_weed():
    sp = quad_map()
    d = dots_at([(10, 10), (20, 10), (10, 20), (20, 20), (80, 80), (85, 85)], [inf.UNCERTAIN] * 6)
    veg = np.ones((100, 100), dtype=bool)
    out = inf.vote_superpixels(d, sp, [DetectedLine(90.0, 15.0, 1.0)], veg)
    assert out[15, 15] == inf.CROP
    assert out[85, 85] == inf.WEED


def test_tie_and_empty_regions_use_line_fallback():
    sp = quad_map()
    d = dots_at([(10, 10), (20, 20), (80, 80), (85, 85)], [inf.WEED, inf.CROP, inf.WEED, inf.CROP])
    veg = np.ones((100, 100), dtype=bool)
    out = inf.vote_superpixels(d, sp, [DetectedLine(90.0, 15.0, 1.0)], veg)
    assert out[15, 15] == inf.CROP  # weed/crop tie on the line
    assert out[85, 85] == inf.WEED  # tie off the line
    assert out[15, 85] == inf.CROP  # no dots, crossed by the line
    assert out[85, 15] == inf.WEED  # no dots, off the line


def test_sparse_vegetation_region_is_background():
    sp = quad_map()
    d = dots_at([(10, 10)], [inf.WEED])
    veg = np.zeros((100, 100), dtype=bool)
    region = sp.labels == sp.labels[10, 10]
    idx = np.flatnonzero(region)
    veg.flat[idx[: int(0.02 * len(idx))]] = True  # 2% vegetation
    other = sp.labels == sp.labels[80, 80]
    veg[other] = True
    out = inf.vote_superpixels(d, sp, [], veg)
    assert not out[region].any()
    assert (out[other] == inf.WEED).all()


def test_classes_constant_per_region_before_carve_out():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (96, 96, 3), dtype=np.uint8)
    sp = spx.slic(img, spx.SlicConfig(count_fraction=0.003))
    dots = inf.scan_image(img, lambda w: rng.uniform(size=len(w)), stride=8)
    out = inf.vote_superpixels(dots, sp, [DetectedLine(90.0, 40.0, 1.0)], np.ones((96, 96), dtype=bool))
    for r in range(sp.count):
        assert len(np.unique(out[sp.labels == r])) == 1


def test_soil_pixels_are_background():
    sp = quad_map()
    veg = np.ones((100, 100), dtype=bool)
    veg[::3] = False
    out = inf.vote_superpixels(dots_at([(10, 10)], [inf.WEED]), sp, [], veg)
    assert not out[~veg].any()
    assert out[veg].all()


def test_vote_dimension_checks():
    sp = quad_map()
    with pytest.raises(DimensionMismatch):
        inf.vote_superpixels(dots_at([(10, 10)], [inf.WEED]), sp, [], np.ones((50, 50), dtype=bool))
    with pytest.raises(DimensionMismatch):
        inf.vote_superpixels(dots_at([(150, 10)], [inf.WEED]), sp, [], np.ones((100, 100), dtype=bool))


# --- overlay ------------------------------------------------------------------------------

def test_background_overlay_is_identity():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (20, 30, 3), dtype=np.uint8)
    assert np.array_equal(inf.render_overlay(img, np.zeros((20, 30), dtype=np.uint8)), img)


def test_overlay_blend_values():
    img = np.array([[(100, 50, 200), (10, 21, 33), (7, 8, 9)]], dtype=np.uint8)
    cmap = np.array([[inf.CROP, inf.WEED, inf.BACKGROUND]], dtype=np.uint8)
    out = inf.render_overlay(img, cmap)
    # 0.5 * pixel + 0.5 * colour, halves rounded up
    assert out.tolist() == [[[50, 153, 100], [133, 11, 17], [7, 8, 9]]]


# --- oracle scorer ---------------------------------------------------------------------------

def test_weed_share_of_central_cell():
    wins = np.zeros((1, 64, 64, 3), dtype=np.uint8)
    wins[0, 24:40, 24:40, 0] = inf.WEED
    wins[0, :8, :, 0] = inf.CROP
    assert inf.weed_share(wins, cell=16)[0] == 1.0
    assert inf.weed_share(wins)[0] == pytest.approx(256 / (256 + 512))
    assert inf.weed_share(np.zeros((1, 64, 64, 3)))[0] == 0.5
