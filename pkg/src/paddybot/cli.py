"""Command line entry points.

serve    run the chat gateway (uvicorn around the FastAPI app)
eval     score prediction files against a labeled manifest
dataset  audit, edit, split, and grow manifest files
report   summarize a live job database

Every reporting command prints a human table followed by key=value lines,
so shell pipelines can pick values without scraping the table.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataset, metrics
from .domain import BoundingBox, Detection, default_registry
from .store import Store


class CliError(Exception):
    pass


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


# -- eval -----------------------------------------------------------------


def load_predictions(path: str | Path, registry) -> dict[str, list[Detection]]:
    """Read prediction interchange records, one JSON object per line:
    {"image_id": ..., "detections": [{"class_name", "confidence", "box"}]}."""
    predictions: dict[str, list[Detection]] = {}
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CliError(f"{path}:{line_no}: invalid JSON: {exc.msg}") from None
            try:
                image_id = str(record["image_id"])
                detections = predictions.setdefault(image_id, [])
                for item in record.get("detections", []):
                    box = item["box"]
                    detections.append(
                        Detection(
                            box=BoundingBox(
                                x_min=float(box["x_min"]),
                                y_min=float(box["y_min"]),
                                x_max=float(box["x_max"]),
                                y_max=float(box["y_max"]),
                            ),
                            cls=registry.ensure(str(item["class_name"])),
                            confidence=float(item["confidence"]),
                        )
                    )
            except (KeyError, TypeError, ValueError) as exc:
                raise CliError(f"{path}:{line_no}: bad record: {exc}") from None
    return predictions


def cmd_eval(args: argparse.Namespace) -> int:
    registry = default_registry()
    manifest = dataset.load_manifest(args.manifest, registry)
    predictions = load_predictions(args.predictions, registry)

    ground_truths: dict[str, list] = {}
    skipped_pending = 0
    for entry in manifest.entries:
        if entry.needs_annotation:
            skipped_pending += 1
            continue
        ground_truths[entry.image.id] = list(entry.labels)

    unknown_images = sorted(set(predictions) - set(ground_truths))
    scored_predictions = {
        image_id: dets for image_id, dets in predictions.items() if image_id in ground_truths
    }

    pairs: list[tuple[str, str]] = []
    if not args.skip_map:
        report = metrics.map_report(
            scored_predictions,
            ground_truths,
            iou_threshold=args.iou_threshold,
            mode=args.ap_mode,
        )
        print(f"{'class':<12} {'ap':>8} {'tp':>6} {'fp':>6} {'fn':>6}")
        for name in sorted(report.per_class_ap):
            tp, fp, fn = report.per_class_counts[name]
            print(f"{name:<12} {report.per_class_ap[name]:>8.4f} {tp:>6} {fp:>6} {fn:>6}")
            pairs.append((f"ap.{name}", f"{report.per_class_ap[name]:.6f}"))
        print(f"mAP ({args.ap_mode}, IoU>{args.iou_threshold:.2f}): {report.mean_ap:.4f}")
        if report.undefined_classes:
            print("undefined classes (no ground truth):", ", ".join(report.undefined_classes))
        pairs.append(("map", f"{report.mean_ap:.6f}"))

    if not args.skip_atp:
        samples = []
        for image_id, labels in ground_truths.items():
            gt_classes = {gt.cls.name for gt in labels}
            pred_classes = {
                det.cls.name
                for det in scored_predictions.get(image_id, [])
                if det.confidence >= args.confidence_floor
            }
            samples.append((gt_classes, pred_classes))
        atp = metrics.atp_report(samples)
        print()
        print(f"{'class':<12} {'images':>7} {'points':>9} {'percent':>8}")
        for name in sorted(atp.per_class):
            row = atp.per_class[name]
            print(f"{name:<12} {row.image_count:>7} {row.point_sum:>9.2f} {row.percent:>7.2f}%")
            pairs.append((f"atp.{name}.percent", f"{row.percent:.6f}"))
        total = atp.total
        print(f"{'total':<12} {total.image_count:>7} {total.point_sum:>9.2f} {total.percent:>7.2f}%")
        pairs.append(("atp.total.percent", f"{total.percent:.6f}"))

    if skipped_pending:
        pairs.append(("skipped_pending_annotation", str(skipped_pending)))
    if unknown_images:
        pairs.append(("predictions_without_ground_truth", str(len(unknown_images))))
    print()
    for key, value in pairs:
        print(f"{key}={value}")
    return 0


# -- dataset -----------------------------------------------------------------


def _print_audit(report: dataset.AuditReport) -> None:
    header = (
        f"{'class':<12} {'train_box':>9} {'val_box':>9} {'test_box':>9} {'unasg_box':>9}"
        f" {'train_img':>9} {'val_img':>9} {'test_img':>9} {'unasg_img':>9}"
    )
    print(header)

    def row(name: str, counts: dataset.SplitCounts) -> str:
        b, i = counts.boxes, counts.images
        return (
            f"{name:<12} {b['train']:>9} {b['validate']:>9} {b['test']:>9} {b['unassigned']:>9}"
            f" {i['train']:>9} {i['validate']:>9} {i['test']:>9} {i['unassigned']:>9}"
        )

    for name in sorted(report.per_class):
        print(row(name, report.per_class[name]))
    print(row("total", report.totals))
    box_pct = report.box_percentages()
    img_pct = report.image_percentages()
    print(
        f"box split %: train {box_pct['train']:.2f} / validate {box_pct['validate']:.2f}"
        f" / test {box_pct['test']:.2f}"
    )
    print(
        f"image split %: train {img_pct['train']:.2f} / validate {img_pct['validate']:.2f}"
        f" / test {img_pct['test']:.2f}"
    )
    for name in sorted(report.per_class):
        counts = report.per_class[name]
        for split_name in dataset.SPLITS:
            print(f"boxes.{name}.{split_name}={counts.boxes[split_name]}")
            print(f"images.{name}.{split_name}={counts.images[split_name]}")
    for split_name in dataset.SPLITS:
        print(f"boxes.total.{split_name}={report.totals.boxes[split_name]}")
        print(f"images.total.{split_name}={report.totals.images[split_name]}")


def cmd_dataset(args: argparse.Namespace) -> int:
    if args.dataset_command == "audit":
        manifest = dataset.load_manifest(args.manifest)
        _print_audit(dataset.audit(manifest))
        return 0
    if args.dataset_command == "remove-class":
        manifest = dataset.load_manifest(args.manifest)
        before = len(manifest.entries)
        trimmed = dataset.remove_class(manifest, args.name)
        dataset.save_manifest(trimmed, args.out)
        print(f"removed class {args.name}: {before} -> {len(trimmed.entries)} entries")
        print(f"entries={len(trimmed.entries)}")
        return 0
    if args.dataset_command == "merge":
        base = dataset.load_manifest(args.base)
        addition = dataset.load_manifest(args.addition)
        result = dataset.merge(base, addition)
        dataset.save_manifest(result.manifest, args.out)
        print(
            f"merged: {len(result.manifest.entries)} entries,"
            f" {len(result.duplicates)} duplicates rejected"
        )
        for image_id in result.duplicates:
            print(f"duplicate={image_id}")
        print(f"entries={len(result.manifest.entries)}")
        return 0
    if args.dataset_command == "split":
        manifest = dataset.load_manifest(args.manifest)
        assigned = dataset.split(
            manifest,
            train_fraction=args.train_fraction,
            validate_fraction=args.validate_fraction,
            seed=args.seed,
        )
        dataset.save_manifest(assigned, args.out)
        _print_audit(dataset.audit(assigned))
        return 0
    if args.dataset_command == "export-feedback":
        with Store(args.store) as store:
            result = dataset.export_feedback(store.list_feedback(), store.job_images())
        dataset.save_manifest(result.manifest, args.out)
        print(
            f"exported {len(result.manifest.entries)} needs-annotation entries,"
            f" skipped {len(result.skipped)}"
        )
        for feedback_id, reason in result.skipped:
            print(f"skipped={feedback_id} reason={reason}")
        print(f"entries={len(result.manifest.entries)}")
        return 0
    return _fail(f"unknown dataset command {args.dataset_command!r}")


# -- report -------------------------------------------------------------------


def cmd_report(args: argparse.Namespace) -> int:
    with Store(args.store) as store:
        if args.export:
            count = store.export_records(args.export)
            print(f"exported {count} records to {args.export}")
        if args.kind in ("atp", "both"):
            result = store.deployment_atp(
                since_ms=args.since_ms,
                until_ms=args.until_ms,
                verified_only=not args.include_unverified,
            )
            print(f"{'class':<12} {'images':>7} {'points':>9} {'percent':>8}")
            for name in sorted(result.report.per_class):
                row = result.report.per_class[name]
                print(
                    f"{name:<12} {row.image_count:>7} {row.point_sum:>9.2f}"
                    f" {row.percent:>7.2f}%"
                )
            total = result.report.total
            print(
                f"{'total':<12} {total.image_count:>7} {total.point_sum:>9.2f}"
                f" {total.percent:>7.2f}%"
            )
            print(
                "excluded:"
                f" unverified {result.excluded['unverified']},"
                f" non_target {result.excluded['non_target']},"
                f" failed {result.excluded['failed']}"
            )
            print(f"atp.total.percent={total.percent:.6f}")
            print(f"atp.samples={result.sample_count}")
        if args.kind in ("latency", "both"):
            summary = store.latency_report(since_ms=args.since_ms, until_ms=args.until_ms)
            if summary.count == 0:
                print("latency: no timed jobs in range")
            else:
                print(
                    f"latency over {summary.count} jobs:"
                    f" min {summary.min_ms:.1f} ms,"
                    f" median {summary.median_ms:.1f} ms,"
                    f" p95 {summary.p95_ms:.1f} ms,"
                    f" max {summary.max_ms:.1f} ms"
                )
                print(f"latency.p95_ms={summary.p95_ms:.3f}")
            print(f"latency.count={summary.count}")
    return 0


# -- serve ---------------------------------------------------------------------


def cmd_serve(args: argparse.Namespace) -> int:
    from .gateway import create_app, load_config

    overrides = {
        key: getattr(args, key)
        for key in (
            "data_dir",
            "store_path",
            "backend_kind",
            "backend_endpoint",
            "fixture_path",
            "platform_base_url",
            "public_base_url",
            "reply_threshold",
            "workers",
        )
        if getattr(args, key) is not None
    }
    config = load_config(args.config, overrides=overrides)
    app = create_app(config)

    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paddybot", description="Rice disease chat assistant toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the chat gateway service")
    serve.add_argument("--config", help="JSON config file")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--data-dir", dest="data_dir")
    serve.add_argument("--store-path", dest="store_path")
    serve.add_argument("--backend-kind", dest="backend_kind")
    serve.add_argument("--backend-endpoint", dest="backend_endpoint")
    serve.add_argument("--fixture-path", dest="fixture_path")
    serve.add_argument("--platform-base-url", dest="platform_base_url")
    serve.add_argument("--public-base-url", dest="public_base_url")
    serve.add_argument("--reply-threshold", dest="reply_threshold", type=float)
    serve.add_argument("--workers", type=int)
    serve.set_defaults(handler=cmd_serve)

    evaluate = sub.add_parser("eval", help="score predictions against a manifest")
    evaluate.add_argument("--predictions", required=True, help="prediction interchange JSONL")
    evaluate.add_argument("--manifest", required=True, help="labeled dataset manifest")
    evaluate.add_argument("--iou-threshold", type=float, default=0.5)
    evaluate.add_argument(
        "--ap-mode", choices=list(metrics.AP_MODES), default="all_points"
    )
    evaluate.add_argument(
        "--confidence-floor",
        type=float,
        default=0.0,
        help="minimum confidence for a detection to count toward class-set scoring",
    )
    evaluate.add_argument("--skip-map", action="store_true")
    evaluate.add_argument("--skip-atp", action="store_true")
    evaluate.set_defaults(handler=cmd_eval)

    ds = sub.add_parser("dataset", help="manifest tooling")
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True)

    ds_audit = ds_sub.add_parser("audit", help="count boxes and images per class per split")
    ds_audit.add_argument("--manifest", required=True)

    ds_remove = ds_sub.add_parser("remove-class", help="drop one class from a manifest")
    ds_remove.add_argument("--manifest", required=True)
    ds_remove.add_argument("--name", required=True)
    ds_remove.add_argument("--out", required=True)

    ds_merge = ds_sub.add_parser("merge", help="fold an addition manifest into a base")
    ds_merge.add_argument("--base", required=True)
    ds_merge.add_argument("--addition", required=True)
    ds_merge.add_argument("--out", required=True)

    ds_split = ds_sub.add_parser("split", help="assign train/validate/test splits")
    ds_split.add_argument("--manifest", required=True)
    ds_split.add_argument("--train-fraction", type=float, required=True)
    ds_split.add_argument("--validate-fraction", type=float, required=True)
    ds_split.add_argument("--seed", type=int, default=0)
    ds_split.add_argument("--out", required=True)

    ds_export = ds_sub.add_parser(
        "export-feedback", help="turn corrections into a needs-annotation manifest"
    )
    ds_export.add_argument("--store", required=True)
    ds_export.add_argument("--out", required=True)

    for sub_parser in (ds_audit, ds_remove, ds_merge, ds_split, ds_export):
        sub_parser.set_defaults(handler=cmd_dataset)

    report = sub.add_parser("report", help="summarize a job database")
    report.add_argument("--store", required=True)
    report.add_argument("--kind", choices=["atp", "latency", "both"], default="both")
    report.add_argument("--since-ms", type=int, dest="since_ms")
    report.add_argument("--until-ms", type=int, dest="until_ms")
    report.add_argument(
        "--include-unverified",
        action="store_true",
        help="score unverified predictions as if confirmed",
    )
    report.add_argument("--export", help="also dump raw records to this JSONL path")
    report.set_defaults(handler=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except CliError as exc:
        return _fail(str(exc))
    except (dataset.DatasetError, metrics.MetricsError) as exc:
        return _fail(str(exc))
    except FileNotFoundError as exc:
        return _fail(f"file not found: {exc.filename}")


if __name__ == "__main__":
    sys.exit(main())
