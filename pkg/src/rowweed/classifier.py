"""Patch scorers.

A scorer maps a batch of RGB windows ``(n, 64, 64, 3)`` to weed
probabilities. Two are provided: a logistic model on 30 hand-crafted
colour/texture features, trained by mini-batch gradient descent with a
step-decay learning rate, and a lookup table of scores produced by an
external model (e.g. a CNN run elsewhere) keyed by patch path.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import DatasetIOError, MalformedCsv, SingleClassTrainSet, UnknownPatch
from .raster import compute_exg
from .superpixel import rgb_to_lab

N_FEATURES = 30
EXG_BINS = 16
EXG_RANGE = (-1.0, 2.0)  # ExG of any non-negative RGB lies in [-1, 2]
# ExG level above which a pixel counts as vegetation in the feature vector;
# a fixed cut (rather than a per-patch Otsu) so every patch is measured alike
VEG_EXG = 0.1
FEATURE_NAMES = (
    [f"mean_{c}" for c in "rgb"]
    + [f"std_{c}" for c in "rgb"]
    + [f"mean_{c}" for c in ("L", "a", "b")]
    + [f"std_{c}" for c in ("L", "a", "b")]
    + [f"exg_hist_{i}" for i in range(EXG_BINS)]
    + ["veg_fraction", "grad_mean"]
)


class Scorer(Protocol):
    def __call__(self, windows: np.ndarray) -> np.ndarray: ...


# --- features -------------------------------------------------------------


def _as_batch(x) -> np.ndarray:
    a = np.asarray(x)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4 or a.shape[-1] != 3:
        raise ValueError(f"expected (n, h, w, 3) windows, got {a.shape}")
    return a


def extract_features(windows, chunk: int = 512) -> np.ndarray:
    """Feature matrix ``(n, 30)`` for a batch of windows (or one window).

    Layout: RGB mean/std on [0, 1] (6) and Lab mean/std (6), both taken
    over the window's vegetation pixels (ExG > ``VEG_EXG``) so that the
    plant colour is not diluted by the amount of soil, and zero when there
    are none; 16-bin ExG histogram over [-1, 2] normalised to sum 1 (16);
    vegetation fraction (1); mean gradient magnitude of the [0, 1] grey
    level from central differences (1).
    """
    batch = _as_batch(windows)
    out = np.empty((len(batch), N_FEATURES), dtype=np.float64)
    for s in range(0, len(batch), chunk):
        out[s : s + chunk] = _features(batch[s : s + chunk])
    return out


def _masked_stats(values: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-window, per-channel mean and std over the masked pixels;
    zeros for windows with an empty mask."""
    m = mask[..., None].astype(np.float64)
    n = m.sum(axis=1)
    safe = np.maximum(n, 1.0)
    mean = (values * m).sum(axis=1) / safe
    var = (((values - mean[:, None, :]) ** 2) * m).sum(axis=1) / safe
    empty = n[:, 0] == 0
    mean[empty] = 0.0
    var[empty] = 0.0
    return mean, np.sqrt(var)


def _features(b: np.ndarray) -> np.ndarray:
    n = len(b)
    rgb = b.astype(np.float64) / 255.0
    flat = rgb.reshape(n, -1, 3)
    lab = rgb_to_lab(b.reshape(n, -1, 1, 3)).reshape(n, -1, 3)
    exg = compute_exg(b).reshape(n, -1)
    veg = exg > VEG_EXG
    rgb_mean, rgb_std = _masked_stats(flat, veg)
    lab_mean, lab_std = _masked_stats(lab, veg)
    lo, hi = EXG_RANGE
    idx = np.clip(np.floor((exg - lo) / (hi - lo) * EXG_BINS), 0, EXG_BINS - 1).astype(np.int64)
    hist = np.zeros((n, EXG_BINS))
    np.add.at(hist, (np.repeat(np.arange(n), idx.shape[1]), idx.ravel()), 1.0)
    hist /= idx.shape[1]
    grey = rgb.mean(axis=-1)
    gy, gx = np.gradient(grey, axis=(1, 2))
    grad = np.sqrt(gx * gx + gy * gy).reshape(n, -1).mean(axis=1)
    return np.column_stack([rgb_mean, rgb_std, lab_mean, lab_std, hist, veg.mean(axis=1), grad])


# --- logistic model -----------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 0.01
    lr_decay_every: int = 200
    lr_decay_factor: float = 10.0
    epochs: int = 600
    batch_size: int = 64
    seed: int = 0
    # weight each class by n / (2 n_class) so the 0.5 decision point is
    # not dragged toward the majority class
    balanced: bool = True

    def __post_init__(self):
        if not (self.initial_lr > 0 and self.lr_decay_every > 0 and self.lr_decay_factor > 0
                and self.epochs > 0 and self.batch_size > 0):
            raise ValueError("training parameters must be positive")

    def lr(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``."""
        return self.initial_lr / self.lr_decay_factor ** (epoch // self.lr_decay_every)


@dataclass
class BaselineModel:
    weights: np.ndarray  # (30,)
    bias: float
    mean: np.ndarray  # feature normalisation, from the training split
    std: np.ndarray
    config: dict = field(default_factory=dict)
    best_epoch: int = -1

    @classmethod
    def zero(cls) -> "BaselineModel":
        return cls(np.zeros(N_FEATURES), 0.0, np.zeros(N_FEATURES), np.ones(N_FEATURES))

    def decision(self, features: np.ndarray) -> np.ndarray:
        z = (np.asarray(features, dtype=np.float64) - self.mean) / self.std
        return z @ self.weights + self.bias

    def predict_features(self, features: np.ndarray) -> np.ndarray:
        return sigmoid(self.decision(features))

    def __call__(self, windows: np.ndarray) -> np.ndarray:
        return self.predict_features(extract_features(windows))

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": float(self.bias),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "feature_names": FEATURE_NAMES,
            "config": self.config,
            "best_epoch": int(self.best_epoch),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineModel":
        return cls(np.asarray(d["weights"], dtype=np.float64), float(d["bias"]),
                   np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   dict(d.get("config", {})), int(d.get("best_epoch", -1)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "BaselineModel":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, ValueError, KeyError) as exc:
            raise DatasetIOError(f"cannot read model {path}: {exc}") from exc


def predict(model: BaselineModel, window: np.ndarray) -> float:
    """Weed probability of one window."""
    return float(model(window)[0])


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -z))


def cross_entropy(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, sw: np.ndarray | None = None) -> float:
    """Weighted mean logistic cross-entropy."""
    z = X @ w + b
    # -log p = log(1 + e^-z), -log(1 - p) = log(1 + e^z)
    per = np.where(y > 0.5, np.logaddexp(0.0, -z), np.logaddexp(0.0, z))
    sw = np.ones(len(y)) if sw is None else sw
    return float((sw * per).sum() / sw.sum())


def gradient(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, sw: np.ndarray | None = None):
    """Analytic gradient of :func:`cross_entropy`: ``X^T (p - y) / n``."""
    sw = np.ones(len(y)) if sw is None else sw
    r = sw * (sigmoid(X @ w + b) - y) / sw.sum()
    return X.T @ r, float(r.sum())


def _class_weights(y: np.ndarray, balanced: bool) -> np.ndarray:
    if not balanced:
        return np.ones(len(y))
    n1 = y.sum()
    n0 = len(y) - n1
    return np.where(y > 0.5, len(y) / (2.0 * n1), len(y) / (2.0 * n0))


@dataclass
class LossCurve:
    epoch: list[int] = field(default_factory=list)
    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for row in zip(self.epoch, self.train, self.val, self.lr):
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


def train_baseline(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    cfg: TrainConfig | None = None,
) -> tuple[BaselineModel, LossCurve]:
    """Fit the logistic model on feature matrices (labels 1 = weed).

    Features are standardised with training statistics. Each epoch visits
    the training set in a seeded random order in ``batch_size`` steps;
    the returned model is the one with the lowest validation loss seen at
    the end of any epoch.
    """
    cfg = cfg or TrainConfig()
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    if len(np.unique(y_train)) < 2:
        raise SingleClassTrainSet("training set needs both crop and weed samples")
    X_val = np.asarray(X_val, dtype=np.float64).reshape(-1, X_train.shape[1])
    y_val = np.asarray(y_val, dtype=np.float64)

    mean = X_train.mean(axis=0)
    std = X_train.std(axis=0)
    std[~(std > 0)] = 1.0
    Zt = (X_train - mean) / std
    Zv = (X_val - mean) / std
    sw_t = _class_weights(y_train, cfg.balanced)
    sw_v = _class_weights(y_val, cfg.balanced) if len(np.unique(y_val)) == 2 else np.ones(len(y_val))
    has_val = len(y_val) > 0

    rng = np.random.default_rng(cfg.seed)
    w = np.zeros(Zt.shape[1])
    b = 0.0
    best = (math.inf, w.copy(), b, -1)
    curve = LossCurve()
    n = len(y_train)
    for epoch in range(cfg.epochs):
        lr = cfg.lr(epoch)
        order = rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            gw, gb = gradient(w, b, Zt[idx], y_train[idx], sw_t[idx])
            w -= lr * gw
            b -= lr * gb
        tl = cross_entropy(w, b, Zt, y_train, sw_t)
        vl = cross_entropy(w, b, Zv, y_val, sw_v) if has_val else tl
        curve.epoch.append(epoch)
        curve.train.append(tl)
        curve.val.append(vl)
        curve.lr.append(lr)
        if vl < best[0]:
            best = (vl, w.copy(), b, epoch)
    _, bw, bb, be = best
    model = BaselineModel(bw, float(bb), mean, std, asdict(cfg), be)
    return model, curve


def labels_of(patches) -> np.ndarray:
    return np.array([1.0 if p.label == "weed" else 0.0 for p in patches])


def train_on_patches(train, val, cfg: TrainConfig | None = None):
    """Convenience wrapper: features + labels from :class:`Patch` lists."""
    if not train:
        raise SingleClassTrainSet("empty training set")
    Xt = extract_features(np.stack([p.pixels for p in train]))
    Xv = extract_features(np.stack([p.pixels for p in val])) if val else np.zeros((0, N_FEATURES))
    return train_baseline(Xt, labels_of(train), Xv, labels_of(val), cfg)


def gradient_check(cfg: TrainConfig | None = None, n_samples: int = 10, n_features: int = 5,
                   trials: int = 5, h: float = 1e-5) -> float:
    """Largest relative error between the analytic gradient and central
    finite differences on random small instances."""
    seed = cfg.seed if isinstance(cfg, TrainConfig) else int(cfg or 0)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        X = rng.normal(size=(n_samples, n_features))
        y = (rng.uniform(size=n_samples) < 0.5).astype(np.float64)
        sw = rng.uniform(0.5, 2.0, size=n_samples)
        w = rng.normal(scale=0.5, size=n_features)
        b = float(rng.normal(scale=0.5))
        gw, gb = gradient(w, b, X, y, sw)
        num = np.empty(n_features + 1)
        for j in range(n_features):
            e = np.zeros(n_features)
            e[j] = h
            num[j] = (cross_entropy(w + e, b, X, y, sw) - cross_entropy(w - e, b, X, y, sw)) / (2 * h)
        num[-1] = (cross_entropy(w, b + h, X, y, sw) - cross_entropy(w, b - h, X, y, sw)) / (2 * h)
        ana = np.append(gw, gb)
        rel = np.abs(ana - num) / np.maximum(np.abs(ana) + np.abs(num), 1e-12)
        worst = max(worst, float(rel.max()))
    return worst


# --- externally produced scores ---------------------------------------------


class ImportedScores:
    """Scores from a CSV of ``(path, p_weed)`` rows, looked up by path."""

    def __init__(self, scores: dict[str, float]):
        self.scores = dict(scores)

    def __len__(self) -> int:
        return len(self.scores)

    def lookup(self, path) -> float:
        key = str(path)
        if key not in self.scores:
            raise UnknownPatch(f"no imported score for {key!r}")
        return self.scores[key]

    def lookup_many(self, paths) -> np.ndarray:
        return np.array([self.lookup(p) for p in paths])


def import_scores(path) -> ImportedScores:
    """Read a score CSV. A header row ``path,p_weed`` is optional."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if rows and [c.strip().lower() for c in rows[0]] == ["path", "p_weed"]:
        rows = rows[1:]
    scores: dict[str, float] = {}
    for i, r in enumerate(rows, 1):
        if len(r) != 2:
            raise MalformedCsv(f"row {i}: expected 2 columns, got {len(r)}")
        key = r[0].strip()
        try:
            v = float(r[1])
        except ValueError:
            raise MalformedCsv(f"row {i}: score {r[1]!r} is not a number") from None
        if not 0.0 <= v <= 1.0:
            raise MalformedCsv(f"row {i}: score {v} outside [0, 1]")
        if key in scores:
            raise MalformedCsv(f"row {i}: duplicate path {key!r}")
        scores[key] = v
    return ImportedScores(scores)


def write_scores(path, paths, scores) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "p_weed"])
        for p, s in zip(paths, scores):
            w.writerow([p, repr(float(s))])
