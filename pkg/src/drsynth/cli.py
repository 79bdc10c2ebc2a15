"""Command-line front end: generate, evaluate, stats, preview.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("drsynth")


def _err(msg: str) -> None:
    print(f"drsynth: error: {msg}", file=sys.stderr)


def _load_config(args):
    from .config import ConfigError, load_config

    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "count", None) is not None:
        overrides["image_count"] = args.count
    if getattr(args, "output", None) is not None:
        overrides["output_dir"] = str(Path(args.output).resolve())
    try:
        return load_config(args.config, overrides)
    except ConfigError as e:
        _err(f"{args.config}: invalid configuration")
        for issue in e.issues:
            print(f"  {issue}", file=sys.stderr)
        return None


# --------------------------------------------------------------------------- generate


def cmd_generate(args) -> int:
    from .dataset import dataset_stats, generate_dataset

    cfg = _load_config(args)
    if cfg is None:
        return EXIT_INVALID
    out = Path(cfg.output_dir)

    def progress(done, total):
        if not args.quiet:
            print(f"\r[{done}/{total}] images", end="" if done < total else "\n", file=sys.stderr, flush=True)

    try:
        manifest = generate_dataset(cfg, out, threads=args.threads, progress=progress)
    except OSError as e:
        _err(f"writing output failed: {e}")
        return EXIT_RUNTIME
    print(dataset_stats(manifest, out).text())
    print(f"wrote {len(manifest['images'])} images to {out}")
    if manifest["failures"]:
        print(f"{len(manifest['failures'])} image(s) failed; see manifest.json", file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------------- evaluate


def cmd_evaluate(args) -> int:
    from .evaluation import (EvalInputError, evaluation_report, failure_analysis, format_report,
                             load_ground_truth, load_predictions, map_metrics, write_report)

    if not 0.0 <= args.iou <= 1.0 or not 0.0 <= args.conf <= 1.0:
        _err("--iou and --conf must lie in [0, 1]")
        return EXIT_INVALID
    try:
        gts, _ = load_ground_truth(args.ground_truth)
        preds = load_predictions(args.predictions)
    except EvalInputError as e:
        _err(str(e))
        return EXIT_INVALID
    names = None
    if args.names:
        names = [n.strip() for n in args.names.split(",")]
    metrics = map_metrics(preds, gts, args.iou, args.conf, names)
    failures = failure_analysis(preds, gts, args.iou, args.conf, names)
    print(format_report(metrics, failures))
    if args.report:
        try:
            write_report(evaluation_report(metrics, failures), args.report)
        except OSError as e:
            _err(f"{args.report}: {e}")
            return EXIT_RUNTIME
        print(f"report: {args.report}")
    return EXIT_OK


# --------------------------------------------------------------------------- stats


def cmd_stats(args) -> int:
    import json

    from .dataset import dataset_stats, load_manifest

    path = Path(args.manifest)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = load_manifest(path)
    except (OSError, ValueError) as e:
        _err(f"{path}: cannot load manifest ({e})")
        return EXIT_INVALID
    rep = dataset_stats(manifest, path.parent)
    print(json.dumps(rep.to_dict(), indent=2) if args.json else rep.text())
    if rep.warnings:
        print(f"integrity: {len(rep.warnings)} problem(s) found", file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------------- preview


def _overlay(rgb: np.ndarray, annotations, names) -> Image.Image:
    im = Image.fromarray(rgb, mode="RGB")
    draw = ImageDraw.Draw(im)
    for a in annotations:
        if a.record is None:
            continue
        b = a.box
        draw.rectangle([b.x_min, b.y_min, b.x_max, b.y_max], outline=(255, 0, 0))
        draw.text((b.x_min + 2, b.y_min + 1), names[a.class_index], fill=(255, 0, 0))
    return im


def cmd_preview(args) -> int:
    from .annotate import write_labels, write_mask_image
    from .dataset import GenerationContext, render_image, sample_layout, save_png, set_threads

    cfg = _load_config(args)
    if cfg is None:
        return EXIT_INVALID
    out = Path(args.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        set_threads(args.threads)
        ctx = GenerationContext.from_config(cfg)
        backends = ["path_traced", "rasterized"] if args.backend == "both" else [args.backend or cfg.render.backend]
        layout = sample_layout(ctx, args.image_index)
        stem = f"{args.image_index:06d}"
        panels = []
        for b in backends:
            img = render_image(ctx, args.image_index, backend=b, layout=layout)
            save_png(img.rgb, out / f"{stem}_{b}.png")
            panels.append(_overlay(img.rgb, img.annotations, ctx.catalog.names))
        write_mask_image(img.ids, out / f"{stem}_mask.png")
        write_labels([a.record for a in img.annotations if a.record is not None], out / f"{stem}.txt")
        sheet = Image.new("RGB", (sum(p.width for p in panels), panels[0].height))
        x = 0
        for p in panels:
            sheet.paste(p, (x, 0))
            x += p.width
        sheet.save(out / f"{stem}_overlay.png", format="PNG")
    except OSError as e:
        _err(f"preview failed: {e}")
        return EXIT_RUNTIME
    print(f"preview of image {args.image_index} ({', '.join(backends)}) written to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    from .evaluation import DEFAULT_CONF, DEFAULT_IOU

    p = argparse.ArgumentParser(prog="drsynth", description="Domain-randomized synthetic detection data.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    threads_help = "render worker threads (default: $DRSYNTH_THREADS or all cores)"

    g = sub.add_parser("generate", help="render a dataset from a JSON config")
    g.add_argument("config")
    g.add_argument("--seed", type=int)
    g.add_argument("--count", type=int, help="number of images")
    g.add_argument("--output", help="output directory")
    g.add_argument("--threads", type=int, help=threads_help)
    g.add_argument("-q", "--quiet", action="store_true")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", help="score predictions against YOLO ground truth")
    e.add_argument("ground_truth", help="directory of YOLO label files")
    e.add_argument("predictions", help="directory of per-image prediction files, or one combined file")
    e.add_argument("--iou", type=float, default=DEFAULT_IOU)
    e.add_argument("--conf", type=float, default=DEFAULT_CONF)
    e.add_argument("--names", help="comma-separated class names in index order")
    e.add_argument("--report", help="write the JSON report here")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("stats", help="summarize a generated dataset")
    s.add_argument("manifest", help="manifest.json or the dataset directory")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_stats)

    v = sub.add_parser("preview", help="render one scene with one or both backends")
    v.add_argument("config")
    v.add_argument("--seed", type=int)
    v.add_argument("--image-index", type=int, default=0)
    v.add_argument("--backend", choices=["path_traced", "rasterized", "both"], default=None)
    v.add_argument("--output-dir", default="preview")
    v.add_argument("--threads", type=int, help=threads_help)
    v.set_defaults(func=cmd_preview)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INVALID if e.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "image_index", 0) < 0:
        _err("--image-index must be >= 0")
        return EXIT_INVALID
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as e:  # unexpected failures still honor the exit-code contract
        _err(f"{type(e).__name__}: {e}")
        log.debug("traceback", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
