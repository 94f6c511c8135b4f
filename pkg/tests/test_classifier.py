import math

import numpy as np
import pytest

from oracles import srgb_to_lab_reference
from rowweed import classifier as clf
from rowweed.errors import MalformedCsv, SingleClassTrainSet, UnknownPatch

# --- features ------------------------------------------------------------------


def test_feature_layout():
    assert len(clf.FEATURE_NAMES) == clf.N_FEATURES == 30
    assert clf.extract_features(np.zeros((64, 64, 3), dtype=np.uint8)).shape == (1, 30)


def test_black_patch():
    f = clf.extract_features(np.zeros((64, 64, 3), dtype=np.uint8))[0]
    names = dict(zip(clf.FEATURE_NAMES, f))
    assert names["veg_fraction"] == 0.0
    assert all(names[k] == 0.0 for k in names if k.startswith("mean_"))
    assert names["grad_mean"] == 0.0


def test_pure_green_patch():
    img = np.zeros((64, 64, 3), dtype=np.uint8)
    img[..., 1] = 255
    f = dict(zip(clf.FEATURE_NAMES, clf.extract_features(img)[0]))
    assert f["veg_fraction"] == 1.0
    assert f[f"exg_hist_{clf.EXG_BINS - 1}"] == 1.0
    assert f["mean_g"] == 1.0


def _hand_features(img):
    """Straight-line computation of every feature, one pixel at a time."""
    h, w, _ = img.shape
    px = [[tuple(int(c) for c in img[y, x]) for x in range(w)] for y in range(h)]

    def exg(p):
        s = sum(p)
        return 0.0 if s == 0 else (2 * p[1] - p[0] - p[2]) / s

    veg = [p for row in px for p in row if exg(p) > 0.1]

    def mean_std(vals):
        if not vals:
            return 0.0, 0.0
        m = sum(vals) / len(vals)
        return m, math.sqrt(sum((v - m) ** 2 for v in vals) / len(vals))

    rgb = [mean_std([p[c] / 255.0 for p in veg]) for c in range(3)]
    labs = [srgb_to_lab_reference(p) for p in veg]
    lab = [mean_std([q[c] for q in labs]) for c in range(3)]
    hist = [0.0] * 16
    for row in px:
        for p in row:
            k = min(15, max(0, math.floor((exg(p) + 1.0) / 3.0 * 16)))
            hist[k] += 1.0 / (h * w)
    grey = [[sum(p) / 3 / 255.0 for p in row] for row in px]

    def d(get, i, n):
        if i == 0:
            return get(1) - get(0)
        if i == n - 1:
            return get(n - 1) - get(n - 2)
        return (get(i + 1) - get(i - 1)) / 2

    grad = 0.0
    for y in range(h):
        for x in range(w):
            gx = d(lambda k: grey[y][k], x, w)
            gy = d(lambda k: grey[k][x], y, h)
            grad += math.hypot(gx, gy) / (h * w)
    return ([m for m, _ in rgb] + [s for _, s in rgb] + [m for m, _ in lab] + [s for _, s in lab]
            + hist + [len(veg) / (h * w), grad])


def test_features_match_hand_computation():
    rng = np.random.default_rng(12)
    img = rng.integers(0, 256, size=(9, 11, 3), dtype=np.uint8)
    img[2:6, 3:8] = (40, 170, 60)
    img[6, :] = (30, 120, 20)
    got = clf.extract_features(img)[0]
    assert got == pytest.approx(np.array(_hand_features(img)), abs=1e-6)


def test_features_batch_equals_single():
    rng = np.random.default_rng(1)
    batch = rng.integers(0, 256, size=(5, 16, 16, 3), dtype=np.uint8)
    full = clf.extract_features(batch, chunk=2)
    for i in range(5):
        assert np.array_equal(full[i], clf.extract_features(batch[i])[0])


# --- training -------------------------------------------------------------------


def clusters(seed=0, n=200, d=30, gap=4.0):
    rng = np.random.default_rng(seed)
    y = (np.arange(n) % 2).astype(float)
    X = rng.normal(size=(n, d))
    X[:, 0] += gap * (y - 0.5) * 2
    return X, y


def test_learning_rate_schedule():
    cfg = clf.TrainConfig()
    assert cfg.lr(0) == 0.01
    assert cfg.lr(199) == 0.01
    assert cfg.lr(200) == pytest.approx(0.001)
    assert cfg.lr(450) == pytest.approx(1e-4)


def test_separable_clusters_fit_quickly():
    X, y = clusters()
    Xv, yv = clusters(seed=1, n=60)
    model, curve = clf.train_baseline(X, y, Xv, yv, clf.TrainConfig(epochs=50))
    acc = np.mean((model.predict_features(X) > 0.5) == (y > 0.5))
    assert acc >= 0.99
    assert len(curve.epoch) == 50


def test_training_is_bit_deterministic():
    X, y = clusters(gap=0.5)
    Xv, yv = clusters(seed=1, n=60, gap=0.5)
    cfg = clf.TrainConfig(epochs=40, seed=9)
    a, ca = clf.train_baseline(X, y, Xv, yv, cfg)
    b, cb = clf.train_baseline(X, y, Xv, yv, cfg)
    assert a.weights.tobytes() == b.weights.tobytes()
    assert a.bias == b.bias and ca.val == cb.val


def test_best_validation_model_returned():
    X, y = clusters(gap=0.3)
    Xv, yv = clusters(seed=5, n=80, gap=0.3)
    model, curve = clf.train_baseline(X, y, Xv, yv, clf.TrainConfig(epochs=80))
    sw = clf._class_weights(yv, True)
    Zv = (Xv - model.mean) / model.std
    returned = clf.cross_entropy(model.weights, model.bias, Zv, yv, sw)
    assert returned == pytest.approx(min(curve.val), abs=1e-12)
    assert returned <= curve.val[-1]
    assert curve.val[model.best_epoch] == min(curve.val)


def test_single_class_train_set():
    X, _ = clusters()
    with pytest.raises(SingleClassTrainSet):
        clf.train_baseline(X, np.zeros(len(X)), X, np.zeros(len(X)))


def windows(color, n, rng):
    base = np.zeros((n, 32, 32, 3))
    base[...] = (150, 118, 92)
    base[:, 8:24, 8:24] = color
    return np.clip(base + rng.normal(0, 6, base.shape), 0, 255).astype(np.uint8)


def test_weed_centroid_patch_scores_weed():
    rng = np.random.default_rng(2)
    crop = windows((60, 120, 50), 40, rng)
    weed = windows((110, 190, 60), 40, rng)
    X = clf.extract_features(np.concatenate([crop, weed]))
    y = np.r_[np.zeros(40), np.ones(40)]
    model, _ = clf.train_baseline(X, y, X, y, clf.TrainConfig(epochs=100))
    centroid = weed.astype(np.float64).mean(axis=0).round().astype(np.uint8)
    assert clf.predict(model, centroid) > 0.5
    assert clf.predict(model, crop.astype(np.float64).mean(axis=0).round().astype(np.uint8)) < 0.5


def test_prediction_monotone_along_weights():
    X, y = clusters(gap=1.0)
    model, _ = clf.train_baseline(X, y, X, y, clf.TrainConfig(epochs=30))
    step = model.std * model.weights / np.linalg.norm(model.weights)
    probs = [model.predict_features(X[:20] + k * step) for k in range(5)]
    for a, b in zip(probs, probs[1:]):
        assert (b > a).all()


def test_zero_model_is_undecided():
    rng = np.random.default_rng(0)
    w = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    assert clf.predict(clf.BaselineModel.zero(), w) == 0.5


def test_model_round_trip(tmp_path):
    X, y = clusters()
    model, _ = clf.train_baseline(X, y, X, y, clf.TrainConfig(epochs=5))
    model.save(tmp_path / "m.json")
    back = clf.BaselineModel.load(tmp_path / "m.json")
    assert np.array_equal(back.weights, model.weights) and back.bias == model.bias
    assert np.array_equal(back.predict_features(X), model.predict_features(X))


# --- gradient ---------------------------------------------------------------------


def test_gradient_check():
    assert clf.gradient_check(clf.TrainConfig()) < 1e-4
    assert clf.gradient_check(clf.TrainConfig(seed=3), n_samples=10) < 1e-4


def test_bias_gradient_zero_when_balanced():
    X = np.random.default_rng(0).normal(size=(6, 3))
    y = np.array([0, 1, 0, 1, 0, 1], dtype=float)
    _, gb = clf.gradient(np.zeros(3), 0.0, X, y)
    assert gb == 0.0


def test_bias_gradient_single_sample():
    _, gb = clf.gradient(np.zeros(2), 0.0, np.array([[0.3, -1.0]]), np.array([1.0]))
    assert gb == -0.5


# --- imported scores ----------------------------------------------------------------


def test_import_scores(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("path,p_weed\na.png,0.25\nb.png,1\nc.png,0.0\n")
    s = clf.import_scores(p)
    assert s.lookup("a.png") == 0.25 and s.lookup("b.png") == 1.0 and s.lookup("c.png") == 0.0
    assert list(s.lookup_many(["c.png", "a.png"])) == [0.0, 0.25]
    with pytest.raises(UnknownPatch):
        s.lookup("zzz.png")


def test_write_then_import_scores(tmp_path):
    vals = [0.1, 1 / 3, 0.999]
    clf.write_scores(tmp_path / "s.csv", ["x", "y", "z"], vals)
    assert list(clf.import_scores(tmp_path / "s.csv").lookup_many(["x", "y", "z"])) == vals


@pytest.mark.parametrize(
    "body",
    ["a.png,1.5\n", "a.png,-0.1\n", "a.png,abc\n", "a.png\n", "a.png,0.1,0.2\n", "a.png,0.1\na.png,0.2\n"],
)
def test_malformed_scores(tmp_path, body):
    p = tmp_path / "s.csv"
    p.write_text(body)
    with pytest.raises(MalformedCsv):
        clf.import_scores(p)
