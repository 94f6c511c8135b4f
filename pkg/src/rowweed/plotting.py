"""Report figures: ROC curves, training loss curves, detected lines."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .rowdetect import line_endpoints  # noqa: E402


def plot_roc(curves: dict, path, title: str = "ROC") -> None:
    """``curves`` maps a legend label to a :class:`RocCurve`."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for name, c in curves.items():
        ax.plot(c.fpr, c.tpr, label=f"{name} (AUC {c.auc:.3f})")
    ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(title)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_loss(curve, path, title: str = "training loss") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(curve.epoch, curve.train, label="train")
    ax.plot(curve.epoch, curve.val, label="validation")
    best = int(np.argmin(curve.val)) if curve.val else None
    if best is not None:
        ax.axvline(curve.epoch[best], color="0.6", lw=0.8, ls=":", label="best validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_lines(img: np.ndarray, lines, path, truth=None) -> None:
    """Image with detected lines (red) and optional truth lines (dashed cyan)."""
    h, w = img.shape[:2]
    fig, ax = plt.subplots(figsize=(6, 6 * h / w))
    ax.imshow(img)
    for group, style in ((truth or [], dict(color="cyan", ls="--", lw=1.0)),
                         (lines, dict(color="red", lw=1.0))):
        for ln in group:
            t, r = (ln.theta_deg, ln.rho_px) if hasattr(ln, "theta_deg") else ln
            ends = line_endpoints(t, r, (h, w))
            if ends is not None:
                (x0, y0), (x1, y1) = ends
                ax.plot([x0, x1], [y0, y1], **style)
    ax.set_xlim(0, w - 1)
    ax.set_ylim(h - 1, 0)
    ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
