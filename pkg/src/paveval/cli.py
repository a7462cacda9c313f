"""``paveval`` command line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from paveval import augment, autolabel, files, postprocess, scoring
from paveval.dataset import (
    Dataset,
    DistressClass,
    parse_submission,
    split,
    write_ground_truth,
    write_submission,
)
from paveval.errors import PavevalError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None


def _fractions(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three fractions, got {len(parts)}")
    return parts


def _emit(args: argparse.Namespace, payload: dict | list, text: str) -> None:
    print(json.dumps(payload, indent=2) if args.json else text)


def _load_predictions(path: str) -> dict:
    return parse_submission(Path(path).read_bytes())


# ------------------------------------------------------------- commands


def cmd_convert(args: argparse.Namespace) -> int:
    dataset = files.load_dataset(args.input, args.src, size=args.size, with_pixels=args.images)
    files.save_dataset(dataset, args.output, args.dst)
    print(f"converted {len(dataset)} images ({dataset.box_count()} boxes) {args.src} -> {args.dst}", file=sys.stderr)
    return EXIT_OK


def cmd_split(args: argparse.Namespace) -> int:
    dataset = files.load_dataset(args.input, args.format, size=args.size, with_pixels=args.images)
    fmt = args.format or files.detect_format(Path(args.input))
    parts = split(dataset, args.fractions, args.seed)
    names = ("train1", "train2", "test")
    for name, part in zip(names, parts):
        files.save_dataset(part, Path(args.output) / name, fmt)
    payload = {name: sorted(p.image_ids) for name, p in zip(names, parts)}
    _emit(args, payload, "\n".join(f"{n}: {len(p)} images" for n, p in zip(names, parts)))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    gt = files.load_dataset(args.gt)
    report = scoring.evaluate(gt, _load_predictions(args.pred), args.iou)
    if args.report:
        Path(args.report).write_text(report.to_json(), encoding="utf-8")
    _emit(args, report.to_dict(), report.to_table())
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    gt = files.load_dataset(args.gt)
    names = [Path(p).name for p in args.pred]
    if len(set(names)) != len(names):
        names = list(args.pred)
    reports = [scoring.evaluate(gt, _load_predictions(p), args.iou) for p in args.pred]
    rows: dict[str, list[float]] = {
        c.label: [r.per_class[c].f1 for r in reports] for c in DistressClass
    }
    rows["mean"] = [r.mean_f1 for r in reports]

    if args.json:
        payload = {
            "files": names,
            "f1": {row: dict(zip(names, vals)) for row, vals in rows.items()},
            "delta_vs_first": {
                row: dict(zip(names[1:], (v - vals[0] for v in vals[1:]))) for row, vals in rows.items()
            },
        }
        print(json.dumps(payload, indent=2))
        return EXIT_OK

    col = max(10, *(len(n) for n in names))
    header = f"{'class':<13}" + "".join(f"{n:>{col}}" for n in names)
    header += "".join(f"{'d(' + n + ')':>{col + 3}}" for n in names[1:])
    lines = [header, "-" * len(header)]
    for row, vals in rows.items():
        line = f"{row:<13}" + "".join(f"{v:>{col}.6f}" for v in vals)
        line += "".join(f"{v - vals[0]:>+{col + 3}.6f}" for v in vals[1:])
        lines.append(line)
    print("\n".join(lines))
    return EXIT_OK


def cmd_augment(args: argparse.Namespace) -> int:
    steps = augment.parse_pipeline_spec(Path(args.spec).read_bytes())
    dataset = files.load_dataset(args.input, args.format, size=args.size, with_pixels=True)
    outputs = augment.pipeline(dataset, steps, args.seed, args.multiplier, args.workers)
    fmt = args.format or files.detect_format(Path(args.input))
    if fmt == "submission":
        fmt = "voc"
    out_dir = Path(args.output)
    files.save_dataset(Dataset(a.image for a in outputs), out_dir, fmt)
    provenance = {
        a.image.image_id: [{"source_id": src, **rec.to_dict()} for src, rec in a.provenance]
        for a in sorted(outputs, key=lambda a: a.image.image_id)
    }
    (out_dir / "provenance.json").write_text(json.dumps(provenance, indent=2), encoding="utf-8")
    print(f"wrote {len(outputs)} augmented images to {out_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_tta_emit(args: argparse.Namespace) -> int:
    dataset = files.load_dataset(args.input, args.format, size=args.size, with_pixels=True)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    copies = []
    for rec in dataset.sorted():
        for copy in postprocess.emit_tta_copies(rec, args.seed):
            files.write_image(out_dir / f"{copy.copy_id}.png", copy.image.pixels)
            copies.append(copy)
    (out_dir / "tta_manifest.json").write_text(postprocess.write_tta_manifest(copies), encoding="utf-8")
    print(f"wrote {len(copies)} copies of {len(dataset)} images to {out_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_tta_fuse(args: argparse.Namespace) -> int:
    bundle = Path(args.bundle)
    manifest = postprocess.parse_tta_manifest((bundle / "tta_manifest.json").read_bytes())
    pred_path = Path(args.pred) if args.pred else bundle / "predictions.json"
    fused = postprocess.fuse_predictions(manifest, _load_predictions(pred_path), args.conf, args.nms_iou)
    text = write_submission(fused)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def cmd_autolabel_draft(args: argparse.Namespace) -> int:
    sizes = None
    if args.images:
        images = files.load_dataset(args.images)
        sizes = {r.image_id: (r.width, r.height) for r in images}
    draft = autolabel.draft_labels(_load_predictions(args.pred), args.conf, sizes, args.nms_iou)
    if args.out:
        files.save_dataset(draft, args.out, args.format)
        print(f"drafted {draft.box_count()} boxes on {len(draft)} images", file=sys.stderr)
    else:
        print(write_ground_truth(draft))
    return EXIT_OK


def cmd_autolabel_diff(args: argparse.Namespace) -> int:
    stats = autolabel.diff_annotations(
        files.load_dataset(args.draft, size=args.size),
        files.load_dataset(args.corrected, size=args.size),
        args.iou,
        args.keep_iou,
    )
    _emit(args, stats.to_dict(), stats.to_table())
    return EXIT_OK


def cmd_qa_confusion(args: argparse.Namespace) -> int:
    result = scoring.annotation_confusion(
        files.load_dataset(args.ref, size=args.size),
        files.load_dataset(args.cand, size=args.size),
        args.iou,
    )
    text = scoring.format_confusion(result.matrix) + f"\naccuracy: {result.accuracy:.2f}%"
    _emit(args, result.to_dict(), text)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from paveval import service

    config = service.ServiceConfig.resolve(args.gt, args.teams, args.addr, args.data)
    service.serve(config)
    return EXIT_OK


# --------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="emit machine-readable JSON on stdout")

    def dataset_opts(p: argparse.ArgumentParser) -> None:
        p.add_argument("--format", choices=files.FORMATS, help="annotation format (detected when omitted)")
        p.add_argument("--size", type=_size, help="image size WxH for DarkNet labels without images")

    parser = argparse.ArgumentParser(prog="paveval", description="Pavement distress detection benchmark toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", parents=[common], help="convert between annotation formats")
    p.add_argument("--from", dest="src", choices=files.FORMATS, required=True)
    p.add_argument("--to", dest="dst", choices=files.FORMATS, required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--size", type=_size)
    p.add_argument("--images", action="store_true", help="copy image rasters as well")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("split", parents=[common], help="split a dataset into train1/train2/test")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--fractions", type=_fractions, default=(0.4, 0.3, 0.3))
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--images", action="store_true", help="copy image rasters as well")
    dataset_opts(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("evaluate", parents=[common], help="score a prediction file")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--report", help="also write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", parents=[common], help="compare several prediction files")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", action="append", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("augment", parents=[common], help="run an augmentation pipeline")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--multiplier", type=int, default=1)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--workers", type=int, default=1)
    dataset_opts(p)
    p.set_defaults(func=cmd_augment)

    tta = sub.add_parser("tta", help="test-time augmentation").add_subparsers(dest="tta_command", required=True)
    p = tta.add_parser("emit", parents=[common], help="write the ten TTA copies of every image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--seed", type=int, default=0)
    dataset_opts(p)
    p.set_defaults(func=cmd_tta_emit)
    p = tta.add_parser("fuse", parents=[common], help="fuse per-copy predictions")
    p.add_argument("--bundle", required=True, help="directory holding tta_manifest.json")
    p.add_argument("--pred", help="per-copy submission JSON (default: BUNDLE/predictions.json)")
    p.add_argument("--conf", type=float, default=postprocess.DEFAULT_CONF)
    p.add_argument("--nms-iou", type=float, default=postprocess.DEFAULT_NMS_IOU)
    p.add_argument("--out")
    p.set_defaults(func=cmd_tta_fuse)

    al = sub.add_parser("autolabel", help="semi-supervised labelling").add_subparsers(dest="al_command", required=True)
    p = al.add_parser("draft", parents=[common], help="draft annotations from predictions")
    p.add_argument("--pred", required=True)
    p.add_argument("--conf", type=float, required=True)
    p.add_argument("--nms-iou", type=float, default=autolabel.DRAFT_NMS_IOU)
    p.add_argument("--images", help="dataset directory to take image sizes from")
    p.add_argument("--out")
    p.add_argument("--format", choices=files.FORMATS, default="voc")
    p.set_defaults(func=cmd_autolabel_draft)
    p = al.add_parser("diff", parents=[common], help="count corrections between draft and corrected labels")
    p.add_argument("--draft", required=True)
    p.add_argument("--corrected", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--keep-iou", type=float, default=autolabel.KEEP_IOU)
    p.add_argument("--size", type=_size)
    p.set_defaults(func=cmd_autolabel_diff)

    qa = sub.add_parser("qa", help="annotation quality").add_subparsers(dest="qa_command", required=True)
    p = qa.add_parser("confusion", parents=[common], help="label confusion between two annotation sets")
    p.add_argument("--ref", required=True)
    p.add_argument("--cand", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--size", type=_size)
    p.set_defaults(func=cmd_qa_confusion)

    p = sub.add_parser("serve", help="run the evaluation service")
    p.add_argument("--gt", help="ground-truth JSON (env PAVEVAL_GT)")
    p.add_argument("--teams", help="teams JSON (env PAVEVAL_TEAMS)")
    p.add_argument("--addr", help="HOST:PORT (env PAVEVAL_ADDR)")
    p.add_argument("--data", help="data directory (env PAVEVAL_DATA)")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ValidationError, PavevalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
