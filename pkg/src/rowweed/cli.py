"""Command-line frontend.

Each subcommand runs one stage and writes its outputs under ``--out-dir``;
``pipeline`` runs them all. Failures print a one-line JSON error to
stderr, remove whatever the failed command had already written, and exit
with the error's code (2 bad config, 3 empty segmentation, 4 no lines,
5 dataset too small, 6 I/O).
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import imio
from .config import PipelineConfig, load_config
from .errors import ConfigError, DatasetIOError, RowWeedError

EXIT_OK = 0


class OutputGuard:
    """Deletes files and directories created under ``root`` if the
    guarded block raises."""

    def __init__(self, root):
        self.root = Path(root)
        self.existed = self.root.exists()
        self.before = set(self._listing()) if self.existed else set()

    def _listing(self):
        for dirpath, dirnames, filenames in os.walk(self.root):
            for name in dirnames + filenames:
                yield os.path.join(dirpath, name)

    def __enter__(self):
        self.root.mkdir(parents=True, exist_ok=True)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            return False
        if not self.existed:
            shutil.rmtree(self.root, ignore_errors=True)
            return False
        new = sorted(set(self._listing()) - self.before, key=len, reverse=True)
        for p in new:
            if os.path.isdir(p) and not os.path.islink(p):
                shutil.rmtree(p, ignore_errors=True)
            elif os.path.lexists(p):
                os.remove(p)
        return False


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _lines_for(args, img, cfg):
    from .pipeline import detect_lines, segment
    from .rowdetect import read_lines_csv

    veg = segment(img, cfg)
    if getattr(args, "lines", None):
        return veg, read_lines_csv(args.lines)
    return veg, detect_lines(veg, cfg)[0]


# --- subcommands ------------------------------------------------------------


def cmd_synth(args, cfg, out):
    from .pipeline import save_field
    from .synthfield import generate, preset

    kw = dict(cfg.synth.overrides)
    kw.setdefault("seed", cfg.seed)
    if args.orientation is not None:
        kw["row_orientation_deg"] = args.orientation
    spec = preset(args.preset or cfg.synth.preset, **kw)
    img, truth = generate(spec)
    save_field(out, img, truth, spec)
    return {"image": str(out / "image.png"), "rows": len(truth.lines), "weeds": len(truth.weeds)}


def cmd_segment(args, cfg, out):
    from .pipeline import segment

    veg = segment(imio.read_rgb(args.image), cfg)
    imio.write_mask(out / "vegetation.png", veg)
    return {"vegetation_fraction": float(veg.mean())}


def cmd_lines(args, cfg, out):
    from .pipeline import detect_lines, segment
    from .plotting import plot_lines
    from .raster import skeletonize
    from .rowdetect import write_lines_csv

    img = imio.read_rgb(args.image) if args.image else None
    veg = imio.read_mask(args.mask) if args.mask else segment(img, cfg)
    if args.mask and not veg.any():
        from .errors import EmptySegmentation

        raise EmptySegmentation("vegetation mask is empty")
    lines, theta = detect_lines(veg, cfg)
    write_lines_csv(out / "lines.csv", lines)
    imio.write_mask(out / "skeleton.png", skeletonize(veg).to_mask())
    if img is not None:
        plot_lines(img, lines, out / "lines.png")
    return {"lines": len(lines), "theta_lines_deg": theta}


def cmd_label(args, cfg, out):
    from .labeler import label_image
    from .pipeline import save_patches
    from .superpixel import slic

    img = imio.read_rgb(args.image)
    veg, lines = _lines_for(args, img, cfg)
    sp = slic(img, cfg.slic)
    image_id = args.image_id or Path(args.image).stem
    res = label_image(img, veg, sp, lines, cfg.labeling, image_id)
    save_patches(res.patches, out / "patches")
    imio.write_mask(out / "crop_mask.png", res.crop_mask.mask)
    imio.write_labels16(out / "interline.png", res.regions.interline)
    imio.write_mask(out / "potential.png", res.regions.potential)
    imio.write_labels16(out / "superpixels.png", sp.labels)
    return {"crop": len(res.crop), "weed": len(res.weed), "potential_used": res.potential_used}


def cmd_dataset(args, cfg, out):
    from .labeler import export_dataset
    from .pipeline import build_dataset, load_patches

    patches = [p for d in args.patches for p in load_patches(d)]
    manifest = build_dataset(patches, cfg)
    export_dataset(manifest, out / "dataset")
    return {"counts": manifest.counts()}


def cmd_train(args, cfg, out):
    from .labeler import import_dataset
    from .pipeline import train_from_manifest
    from .plotting import plot_loss

    manifest = import_dataset(args.dataset, load_pixels=True)
    model, curve = train_from_manifest(manifest, cfg)
    model.save(out / "model.json")
    curve.write_csv(out / "loss.csv")
    plot_loss(curve, out / "loss.png")
    return {"best_epoch": model.best_epoch, "best_val_loss": curve.val[model.best_epoch]}


def cmd_infer(args, cfg, out):
    from .classifier import BaselineModel
    from .inference import render_overlay, scan_image, vote_superpixels
    from .superpixel import slic

    img = imio.read_rgb(args.image)
    model = BaselineModel.load(args.model)
    veg, lines = _lines_for(args, img, cfg)
    sp = slic(img, cfg.slic)
    dots = scan_image(img, model, cfg.inference.stride, cfg.inference.eps)
    cmap = vote_superpixels(dots, sp, lines, veg, cfg.inference.background_fraction)
    imio.write_index(out / "class_map.png", cmap)
    imio.write_rgb(out / "overlay.png", render_overlay(img, cmap))
    dots.write_csv(out / "dots.csv")
    counts = np.bincount(cmap.ravel(), minlength=3)
    return {"background_px": int(counts[0]), "crop_px": int(counts[1]), "weed_px": int(counts[2])}


def cmd_eval(args, cfg, out):
    from .evaluation import match_lines, pixel_metrics, roc_auc
    from .synthfield import FieldGroundTruth

    report = {}
    if args.dataset:
        from .labeler import import_dataset
        from .plotting import plot_roc

        manifest = import_dataset(args.dataset, load_pixels=args.scores is None)
        splits = {e.split for e in manifest.entries}
        split = args.split or ("val" if "val" in splits else "test")
        keep = [i for i, e in enumerate(manifest.entries) if e.split == split]
        labels = [1 if manifest.entries[i].label == "weed" else 0 for i in keep]
        if args.scores:
            from .classifier import import_scores

            scores = import_scores(args.scores).lookup_many([manifest.entries[i].path for i in keep])
        elif args.model:
            from .classifier import BaselineModel

            model = BaselineModel.load(args.model)
            scores = model(np.stack([manifest.patches[i].pixels for i in keep])) if keep else np.zeros(0)
        else:
            raise ConfigError("eval on a dataset needs --model or --scores")
        roc = roc_auc(scores, labels)
        roc.write_csv(out / "roc.csv")
        plot_roc({split: roc}, out / "roc.png")
        report["auc"] = roc.auc
        report["patches"] = len(keep)
        report["split"] = split
    if args.truth_dir:
        truth = FieldGroundTruth.load(args.truth_dir)
        if args.lines:
            from .rowdetect import read_lines_csv

            rep = match_lines(read_lines_csv(args.lines), truth.lines, cfg.eval.angle_gate_deg, cfg.eval.rho_gate_px)
            report["lines"] = rep.to_dict()
        if args.class_map:
            report["pixel"] = pixel_metrics(imio.read_index(args.class_map), truth.classes).to_dict()
    if not report:
        raise ConfigError("nothing to evaluate: give --dataset, or --truth-dir with --lines/--class-map")
    (out / "eval.json").write_text(json.dumps(report, indent=1))
    return {k: v for k, v in report.items() if k in ("auc", "patches", "split")} | (
        {"weed_f1": report["pixel"]["f1"]["weed"]} if "pixel" in report else {}
    )


def cmd_pipeline(args, cfg, out):
    from .pipeline import pipeline_on_images, run_pipeline, with_preset

    log = (lambda m: print(m, file=sys.stderr)) if args.verbose else None
    if args.image:
        report = pipeline_on_images(cfg, args.image, out, log)
        return {"report": str(out / "report.json"), "counts": report["dataset"]["counts"]}
    cfg = with_preset(cfg, args.preset or cfg.synth.preset, args.weeds_from or cfg.synth.weeds_from)
    report = run_pipeline(cfg, out, log)
    summary = {"report": str(out / "report.json")}
    if "patch_auc" in report:
        summary["patch_auc"] = report["patch_auc"]
    if "pixel" in report:
        summary["weed_f1"] = report["pixel"]["f1"]["weed"]
    return summary


COMMANDS = {
    "synth": cmd_synth,
    "segment": cmd_segment,
    "lines": cmd_lines,
    "label": cmd_label,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file, one section per stage")
    common.add_argument("--seed", type=int, help="run seed (overrides the config)")
    common.add_argument("--out-dir", default=".", help="output directory (default: current)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; VALUE is parsed as JSON when possible")

    parser = argparse.ArgumentParser(prog="rowweed", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic field with ground truth")
    p.add_argument("--preset", choices=["bean_like", "spinach_like"])
    p.add_argument("--orientation", type=float, help="row direction in degrees")

    p = sub.add_parser("segment", parents=[common], help="vegetation mask from ExG + Otsu")
    p.add_argument("--image", required=True)

    p = sub.add_parser("lines", parents=[common], help="detect crop lines")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--image")
    src.add_argument("--mask", help="precomputed vegetation mask PNG")

    for name, helptext in (("label", "unsupervised patch labeling"), ("infer", "classify every pixel")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--image", required=True)
        p.add_argument("--lines", help="lines CSV (detected when omitted)")
        if name == "label":
            p.add_argument("--image-id", help="identifier used in patch names (default: file stem)")
        else:
            p.add_argument("--model", required=True)

    p = sub.add_parser("dataset", parents=[common], help="augment, split and export labeled patches")
    p.add_argument("--patches", action="append", required=True, help="a 'label' output patches directory")

    p = sub.add_parser("train", parents=[common], help="train the baseline scorer")
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("eval", parents=[common], help="AUC, line and pixel metrics")
    p.add_argument("--dataset", help="dataset directory or manifest")
    p.add_argument("--split", help="dataset split to score (default: val, else test)")
    p.add_argument("--model")
    p.add_argument("--scores", help="CSV of externally produced (path, p_weed) scores")
    p.add_argument("--truth-dir", help="directory holding truth.png/truth.json")
    p.add_argument("--lines")
    p.add_argument("--class-map")

    p = sub.add_parser("pipeline", parents=[common], help="end-to-end run")
    p.add_argument("--preset", choices=["bean_like", "spinach_like"])
    p.add_argument("--weeds-from", choices=["bean_like", "spinach_like"],
                   help="take weed training samples from the other preset's fields")
    p.add_argument("--image", action="append", help="real image(s) to run on instead of synthetic fields")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        out = Path(args.out_dir)
        with OutputGuard(out):
            summary = COMMANDS[args.command](args, cfg, out)
    except RowWeedError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        err = DatasetIOError(str(exc))
        print(json.dumps({"error": err.code, "message": str(exc)}), file=sys.stderr)
        return err.exit_code
    _emit(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
