"""Stage wiring shared by the command line and the end-to-end run.

``run_pipeline`` generates (or loads) training fields, labels them without
supervision, trains the baseline scorer, and evaluates it on held-out
fields whose labels come from ground truth.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import imio
from .classifier import BaselineModel, LossCurve, extract_features, labels_of, train_baseline
from .config import PipelineConfig
from .errors import DatasetIOError
from .evaluation import LineMatchReport, match_lines, metrics_from_confusion, pixel_metrics, roc_auc
from .inference import oracle_dots, render_overlay, scan_image, vote_superpixels
from .labeler import (
    DatasetManifest,
    ManifestEntry,
    Patch,
    augment,
    export_dataset,
    label_image,
    split_dataset,
)
from .raster import segment_vegetation
from .rowdetect import DetectedLine, detect_from_mask, write_lines_csv
from .superpixel import SuperpixelMap, slic
from .synthfield import FieldGroundTruth, FieldSpec, generate, ground_truth_patches, preset

REPORT_NAME = "report.json"


@dataclass
class FieldAnalysis:
    vegetation: np.ndarray
    theta_lines: float
    lines: list[DetectedLine]
    sp: SuperpixelMap | None = None


def segment(img: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    return segment_vegetation(img, cfg.segment.opening_radius, cfg.segment.exg_floor)


def detect_lines(vegetation: np.ndarray, cfg: PipelineConfig) -> tuple[list[DetectedLine], float]:
    lines, _, theta = detect_from_mask(vegetation, cfg.hough)
    return lines, theta


def analyse(img: np.ndarray, cfg: PipelineConfig, superpixels: bool = True) -> FieldAnalysis:
    veg = segment(img, cfg)
    lines, theta = detect_lines(veg, cfg)
    sp = slic(img, cfg.slic) if superpixels else None
    return FieldAnalysis(veg, theta, lines, sp)


# --- synthetic fields -----------------------------------------------------------


def field_spec(cfg: PipelineConfig, preset_name: str, role: int, index: int) -> FieldSpec:
    """Spec of one synthetic field. ``role`` separates training (0),
    held-out (1) and foreign-weed (2) fields so their seeds never meet."""
    rng = np.random.default_rng([cfg.seed, role, index])
    lo, hi = cfg.synth.orientation_range_deg
    orientation = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    seed = int(rng.integers(0, 2**31 - 1))
    kw = dict(cfg.synth.overrides)
    kw.setdefault("row_orientation_deg", orientation)
    kw.setdefault("seed", seed)
    return preset(preset_name, **kw)


def save_field(directory, img, truth: FieldGroundTruth, spec: FieldSpec) -> None:
    d = imio.ensure_dir(directory)
    imio.write_rgb(d / "image.png", img)
    truth.save(d)
    (d / "spec.json").write_text(json.dumps(spec.to_dict(), indent=1))


def load_field(directory):
    d = Path(directory)
    img = imio.read_rgb(d / "image.png")
    truth = FieldGroundTruth.load(d) if (d / "truth.json").exists() else None
    return img, truth


# --- labeled patches on disk ------------------------------------------------------

PATCHES_NAME = "patches.json"


def save_patches(patches: list[Patch], directory) -> Path:
    """Unaugmented labeled windows, one PNG each plus an index."""
    d = imio.ensure_dir(directory)
    index = []
    for p in patches:
        rel = f"{p.label}/{p.filename()}"
        target = d / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        imio.write_rgb(target, p.pixels)
        image, x, y = p.source
        index.append({"path": rel, "label": p.label, "source": {"image": image, "x": int(x), "y": int(y)}})
    (d / PATCHES_NAME).write_text(json.dumps({"patches": index}, indent=1))
    return d / PATCHES_NAME


def load_patches(directory) -> list[Patch]:
    d = Path(directory)
    if d.is_file():
        d = d.parent
    try:
        index = json.loads((d / PATCHES_NAME).read_text())["patches"]
    except (OSError, ValueError, KeyError) as exc:
        raise DatasetIOError(f"cannot read patch index in {d}: {exc}") from exc
    return [
        Patch(imio.read_rgb(d / e["path"]), e["label"], (e["source"]["image"], e["source"]["x"], e["source"]["y"]))
        for e in index
    ]


def build_dataset(patches: list[Patch], cfg: PipelineConfig) -> DatasetManifest:
    aug = augment(patches, cfg.labeling.mix_backgrounds)
    return split_dataset(aug, cfg.labeling.train_fraction, cfg.seed, cfg.labeling.crop_stride)


def train_from_manifest(manifest: DatasetManifest, cfg: PipelineConfig) -> tuple[BaselineModel, LossCurve]:
    train = [p for p, e in zip(manifest.patches, manifest.entries) if e.split == "train"]
    val = [p for p, e in zip(manifest.patches, manifest.entries) if e.split == "val"]
    Xt = extract_features(np.stack([p.pixels for p in train]))
    Xv = extract_features(np.stack([p.pixels for p in val])) if val else np.zeros((0, Xt.shape[1]))
    return train_baseline(Xt, labels_of(train), Xv, labels_of(val), cfg.train)


# --- end-to-end ---------------------------------------------------------------------


def _pooled(confusion: np.ndarray) -> dict:
    return metrics_from_confusion(confusion).to_dict()


def _line_summary(reports: list[LineMatchReport]) -> dict:
    pairs = [p for r in reports for p in r.pairs]
    n_det = sum(r.n_detected for r in reports)
    n_tru = sum(r.n_truth for r in reports)
    return {
        "fields": len(reports),
        "detected": n_det,
        "truth": n_tru,
        "matched": len(pairs),
        "precision": len(pairs) / n_det if n_det else 1.0,
        "recall": len(pairs) / n_tru if n_tru else 1.0,
        "max_false_positives_per_field": max((r.false_positives for r in reports), default=0),
        "max_angle_error_deg": max((p.angle_error_deg for p in pairs), default=0.0),
        "max_rho_error_px": max((p.rho_error_px for p in pairs), default=0.0),
    }


def _label_fields(cfg, preset_name, role, n, prefix, out, log):
    """Generate ``n`` fields and run unsupervised labeling on each."""
    patches, info, reports = [], [], []
    for i in range(n):
        spec = field_spec(cfg, preset_name, role, i)
        img, truth = generate(spec)
        fid = f"{prefix}_{i:02d}"
        a = analyse(img, cfg)
        res = label_image(img, a.vegetation, a.sp, a.lines, cfg.labeling, fid)
        if out is not None:
            d = out / "fields" / fid
            save_field(d, img, truth, spec)
            imio.write_mask(d / "vegetation.png", a.vegetation)
            imio.write_mask(d / "crop_mask.png", res.crop_mask.mask)
            write_lines_csv(d / "lines.csv", a.lines)
        rep = match_lines(a.lines, truth.lines, cfg.eval.angle_gate_deg, cfg.eval.rho_gate_px)
        reports.append(rep)
        info.append({
            "id": fid, "preset": preset_name, "seed": spec.seed,
            "row_orientation_deg": spec.row_orientation_deg,
            "lines_detected": len(a.lines), "lines_truth": len(truth.lines),
            "crop_patches": len(res.crop), "weed_patches": len(res.weed),
            "potential_used": res.potential_used,
        })
        log(f"{fid}: {len(a.lines)} lines, {len(res.crop)} crop / {len(res.weed)} weed patches")
        patches.append(res)
    return patches, info, reports


def run_pipeline(cfg: PipelineConfig, out_dir=None, log=None) -> dict:
    """Synthetic end-to-end run; returns the report (also written to
    ``out_dir/report.json`` when ``out_dir`` is given)."""
    log = log or (lambda msg: None)
    out = imio.ensure_dir(out_dir) if out_dir is not None else None
    timings = {}
    t0 = time.perf_counter()

    own, train_info, train_lines = _label_fields(cfg, cfg.synth.preset, 0, cfg.synth.train_fields, "train", out, log)
    crop = [p for r in own for p in r.crop]
    if cfg.synth.weeds_from:
        foreign, f_info, _ = _label_fields(cfg, cfg.synth.weeds_from, 2, cfg.synth.train_fields, "weeds", out, log)
        weed = [p for r in foreign for p in r.weed]
        train_info += f_info
    else:
        weed = [p for r in own for p in r.weed]
    timings["label_s"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    manifest = build_dataset(crop + weed, cfg)
    if out is not None:
        export_dataset(manifest, out / "dataset")
    model, curve = train_from_manifest(manifest, cfg)
    timings["train_s"] = time.perf_counter() - t1
    if out is not None:
        from .plotting import plot_loss

        model.save(out / "model.json")
        curve.write_csv(out / "loss.csv")
        plot_loss(curve, out / "loss.png")
    log(f"trained on {manifest.counts()}; best epoch {model.best_epoch}")

    t2 = time.perf_counter()
    scores, labels, paths = [], [], []
    conf = np.zeros((2, 3), dtype=np.int64)
    conf_oracle = np.zeros((2, 3), dtype=np.int64)
    test_lines, test_info = [], []
    test_entries, test_patches = [], []
    for j in range(cfg.synth.test_fields):
        spec = field_spec(cfg, cfg.synth.preset, 1, j)
        img, truth = generate(spec)
        fid = f"test_{j:02d}"
        a = analyse(img, cfg)
        gt = ground_truth_patches(img, truth, fid, cfg.labeling.window, cfg.eval.patch_stride, cfg.eval.patch_purity)
        if gt:
            s = model(np.stack([p.pixels for p in gt]))
            scores.extend(s.tolist())
            labels.extend(1 if p.label == "weed" else 0 for p in gt)
            for p in gt:
                path = f"test/{p.label}/{p.filename()}"
                paths.append(path)
                test_entries.append(ManifestEntry(path, p.label, "test", tuple(p.source), p.aug_token, False))
                test_patches.append(p)
        dots = scan_image(img, model, cfg.inference.stride, cfg.inference.eps)
        cmap = vote_superpixels(dots, a.sp, a.lines, a.vegetation, cfg.inference.background_fraction)
        pm = pixel_metrics(cmap, truth.classes)
        conf += pm.confusion
        ocmap = vote_superpixels(oracle_dots(truth.classes, cfg.inference.stride, cfg.inference.eps),
                                 a.sp, a.lines, a.vegetation, cfg.inference.background_fraction)
        opm = pixel_metrics(ocmap, truth.classes)
        conf_oracle += opm.confusion
        rep = match_lines(a.lines, truth.lines, cfg.eval.angle_gate_deg, cfg.eval.rho_gate_px)
        test_lines.append(rep)
        test_info.append({
            "id": fid, "preset": cfg.synth.preset, "seed": spec.seed,
            "row_orientation_deg": spec.row_orientation_deg,
            "patches": len(gt), "weed_f1": pm.f1["weed"], "oracle_weed_f1": opm.f1["weed"],
            "lines": rep.to_dict(),
        })
        if out is not None:
            d = out / "fields" / fid
            save_field(d, img, truth, spec)
            imio.write_index(d / "class_map.png", cmap)
            imio.write_index(d / "oracle_class_map.png", ocmap)
            imio.write_rgb(d / "overlay.png", render_overlay(img, cmap))
            dots.write_csv(d / "dots.csv")
            write_lines_csv(d / "lines.csv", a.lines)
        log(f"{fid}: weed F1 {pm.f1['weed']:.3f} (oracle {opm.f1['weed']:.3f})")
    timings["test_s"] = time.perf_counter() - t2

    report = {
        "config": cfg.to_dict(),
        "training_fields": train_info,
        "dataset": {
            "raw": {"crop": len(crop), "weed": len(weed)},
            "counts": manifest.counts(),
        },
        "training": {
            "best_epoch": model.best_epoch,
            "best_val_loss": curve.val[model.best_epoch] if model.best_epoch >= 0 else None,
            "final_val_loss": curve.val[-1],
            "final_train_loss": curve.train[-1],
        },
        "lines": {"training": _line_summary(train_lines), "test": _line_summary(test_lines)},
        "test_fields": test_info,
    }
    if len(set(labels)) == 2:
        roc = roc_auc(scores, labels)
        report["patch_auc"] = roc.auc
        report["test_patches"] = {"weed": int(sum(labels)), "crop": int(len(labels) - sum(labels))}
        if out is not None:
            from .classifier import write_scores
            from .plotting import plot_roc

            roc.write_csv(out / "roc.csv")
            plot_roc({cfg.synth.preset: roc}, out / "roc.png")
            write_scores(out / "scores.csv", paths, scores)
            export_dataset(DatasetManifest(test_entries, cfg.seed, cfg.labeling.window,
                                           cfg.eval.patch_stride, patches=test_patches), out / "test_patches")
    if cfg.synth.test_fields:
        report["pixel"] = _pooled(conf)
        report["pixel_oracle"] = _pooled(conf_oracle)
    if out is not None:
        (out / REPORT_NAME).write_text(json.dumps(report, indent=1))
        (out / "timings.json").write_text(json.dumps(timings, indent=1))
    return report


def pipeline_on_images(cfg: PipelineConfig, images: list, out_dir=None, log=None) -> dict:
    """Unsupervised run on real images (no ground truth): label, train,
    then classify every input image."""
    log = log or (lambda msg: None)
    out = imio.ensure_dir(out_dir) if out_dir is not None else None
    results, info = [], []
    loaded = []
    for i, path in enumerate(images):
        img = imio.read_rgb(path)
        fid = f"image_{i:02d}"
        a = analyse(img, cfg)
        res = label_image(img, a.vegetation, a.sp, a.lines, cfg.labeling, fid)
        results.append(res)
        loaded.append((fid, img, a))
        info.append({"id": fid, "source": str(path), "lines_detected": len(a.lines),
                     "crop_patches": len(res.crop), "weed_patches": len(res.weed),
                     "potential_used": res.potential_used})
        log(f"{fid}: {len(a.lines)} lines")
    manifest = build_dataset([p for r in results for p in r.patches], cfg)
    model, curve = train_from_manifest(manifest, cfg)
    if out is not None:
        from .plotting import plot_loss

        export_dataset(manifest, out / "dataset")
        model.save(out / "model.json")
        curve.write_csv(out / "loss.csv")
        plot_loss(curve, out / "loss.png")
    for fid, img, a in loaded:
        dots = scan_image(img, model, cfg.inference.stride, cfg.inference.eps)
        cmap = vote_superpixels(dots, a.sp, a.lines, a.vegetation, cfg.inference.background_fraction)
        if out is not None:
            d = imio.ensure_dir(out / "fields" / fid)
            imio.write_index(d / "class_map.png", cmap)
            imio.write_rgb(d / "overlay.png", render_overlay(img, cmap))
            dots.write_csv(d / "dots.csv")
            write_lines_csv(d / "lines.csv", a.lines)
    report = {
        "config": cfg.to_dict(),
        "training_fields": info,
        "dataset": {"counts": manifest.counts()},
        "training": {"best_epoch": model.best_epoch, "final_val_loss": curve.val[-1]},
    }
    if out is not None:
        (out / REPORT_NAME).write_text(json.dumps(report, indent=1))
    return report


def with_preset(cfg: PipelineConfig, name: str, weeds_from: str | None = None) -> PipelineConfig:
    return replace(cfg, synth=replace(cfg.synth, preset=name, weeds_from=weeds_from))
