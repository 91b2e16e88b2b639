"""Command-line entry point: run, eval, cost-report and gen-synthetic.

Exit codes: 0 success, 1 usage, 2 data error, 3 evaluation refused.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .cascade import FileBackedSource, Pipeline, SequenceResult
from .config import Settings, load_settings
from .costmodel import refine_cost
from .errors import DataError, EvaluationRefused
from .geometry import RegionMask
from .ingest import (
    ClassMap,
    generate_synthetic,
    parse_detections,
    parse_kitti_tracking_labels,
    parse_meta,
    parse_scenario,
    write_detections,
    write_sequence_dir,
)
from .metrics import DifficultyReport, evaluate_classes
from .runio import (
    parse_mask_dump,
    read_manifest,
    write_manifest,
    write_mask_dump,
    write_work_records,
)

CONFIG_ENV = "TRACKCASCADE_CONFIG"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_REFUSED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="trackcascade", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        default=os.environ.get(CONFIG_ENV),
        help=f"config file (default: ${CONFIG_ENV})",
    )
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override a config value; repeatable",
    )

    run = sub.add_parser("run", parents=[common], help="run the cascade over sequences")
    run.add_argument("--sequence", action="append", required=True, help="sequence directory")
    run.add_argument("--mode", choices=("single", "cascaded", "catdet"))
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--dump-masks", action="store_true", help="also dump per-frame region boxes")
    run.add_argument("--jobs", type=int, default=1, help="sequences processed in parallel")
    run.add_argument("--force", action="store_true", help="overwrite an existing output directory")

    ev = sub.add_parser("eval", parents=[common], help="evaluate detections against ground truth")
    ev.add_argument("--gt", required=True, help="KITTI tracking label file")
    ev.add_argument("--det", required=True, help="detections file")
    ev.add_argument("--out", help="directory for curve data and manifest")
    ev.add_argument("--force", action="store_true")

    cr = sub.add_parser("cost-report", parents=[common], help="op break-down from run outputs")
    cr.add_argument("runs", nargs="+", help="run output directories (need --dump-masks runs)")

    gen = sub.add_parser("gen-synthetic", parents=[common], help="generate a synthetic sequence")
    gen.add_argument("--scenario", required=True, help="scenario file")
    gen.add_argument("--seed", type=int, help="override the scenario seed")
    gen.add_argument("--out", required=True, help="output sequence directory")
    gen.add_argument("--force", action="store_true")
    return parser


def _atomic_dir(out: Path, force: bool):
    """Context manager: stage outputs in a temp dir, publish on success."""

    class _Staging:
        def __enter__(self):
            out.parent.mkdir(parents=True, exist_ok=True)
            self.tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
            return self.tmp

        def __exit__(self, exc_type, exc, tb):
            if exc_type is not None:
                shutil.rmtree(self.tmp, ignore_errors=True)
                return False
            if out.exists():
                if not force:
                    shutil.rmtree(self.tmp, ignore_errors=True)
                    raise DataError(f"output directory exists: {out} (use --force)")
                shutil.rmtree(out)
            os.replace(self.tmp, out)
            return False

    return _Staging()


def _run_one_sequence(settings: Settings, mode: str, seq_dir: Path):
    """Execute one sequence; returns everything the (serialized) writer needs."""
    meta = parse_meta(seq_dir / "meta.cfg")
    class_map = ClassMap(settings.classes)
    refine_path = seq_dir / "refine.txt"
    proposal_path = seq_dir / "proposal.txt"
    refine_store = parse_detections(refine_path, class_map)
    refine = FileBackedSource(refine_store, "refine", meta.frame_count)
    proposal = None
    inputs = [seq_dir / "meta.cfg", refine_path]
    if mode != "single":
        proposal_store = parse_detections(proposal_path, class_map)
        proposal = FileBackedSource(proposal_store, "proposal", meta.frame_count)
        inputs.append(proposal_path)

    config = settings.pipeline_config()
    if config.mode != mode:
        config = dataclasses.replace(config, mode=mode)
    pipeline = Pipeline(config, meta, refine, proposal, known_classes=set(class_map.configured))
    result: SequenceResult = pipeline.run_sequence()
    return meta, class_map, inputs, result


def _write_run_outputs(
    settings: Settings,
    mode: str,
    out: Path,
    meta,
    class_map: ClassMap,
    inputs,
    result: SequenceResult,
    dump_masks: bool,
    force: bool,
) -> None:
    with _atomic_dir(out, force) as tmp:
        final = [d for r in result.frames for d in r.final_detections]
        write_detections(final, class_map, tmp / "detections.txt")
        write_work_records(result.frames, result.total, tmp / "work.txt")
        outputs = ["detections.txt", "work.txt", "manifest.json"]
        if dump_masks:
            write_mask_dump(result.frames, tmp / "masks.txt")
            outputs.append("masks.txt")
        snapshot = settings.snapshot()
        snapshot["pipeline"]["mode"] = mode
        write_manifest(tmp / "manifest.json", "run", snapshot, inputs, outputs, meta=meta)
    if class_map.flagged:
        print(f"note: dropped detections of unconfigured classes: {sorted(class_map.flagged)}")
    t = result.total
    print(
        f"{meta.sequence_id}: {len(result.frames)} frames, "
        f"total {t.total_ops:.1f} Gops (proposal {t.proposal_ops:.1f}, "
        f"refinement {t.refine_ops:.1f}) -> {out}"
    )


def cmd_run(args) -> int:
    settings = load_settings(args.config, args.overrides)
    mode = args.mode or settings.mode
    sequences = [Path(s) for s in args.sequence]
    out_root = Path(args.out)
    if len(sequences) == 1:
        jobs = [(sequences[0], out_root)]
    else:
        jobs = [(seq, out_root / parse_meta(seq / "meta.cfg").sequence_id) for seq in sequences]

    # Sequences may execute in parallel; output writing stays serialized.
    if args.jobs > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_one_sequence, settings, mode, seq) for seq, _ in jobs]
            executed = [f.result() for f in futures]
    else:
        executed = [_run_one_sequence(settings, mode, seq) for seq, _ in jobs]
    for (_, out), (meta, class_map, inputs, result) in zip(jobs, executed):
        _write_run_outputs(
            settings, mode, out, meta, class_map, inputs, result, args.dump_masks, args.force
        )
    return EXIT_OK


def _print_difficulty_report(report: DifficultyReport, class_map: ClassMap) -> None:
    print(f"== difficulty {report.difficulty} ==")
    print(f"{'class':<14} {'AP':>8} {'gt_boxes':>9} {'tracks':>7} {'dets':>7}")
    for class_id in sorted(report.classes):
        c = report.classes[class_id]
        ap = "/" if c.ap is None else f"{c.ap:.4f}"
        print(
            f"{class_map.name_of(class_id):<14} {ap:>8} {c.n_pos:>9} "
            f"{c.n_tracks:>7} {c.n_detections:>7}"
        )
    map_text = "/" if report.mean_ap is None else f"{report.mean_ap:.4f}"
    print(f"mAP {map_text}")
    if report.delay is not None:
        d = report.delay
        print(f"mD@{d.beta:.2f} {d.mean_delay:.2f} frames at t_beta {d.threshold}")
        for class_id in sorted(d.per_class):
            pc = d.per_class[class_id]
            note = f" (never detected: {pc.never_detected})" if pc.never_detected else ""
            print(
                f"  {class_map.name_of(class_id)}: delay {pc.mean_delay:.2f} "
                f"over {pc.counted_tracks} tracks{note}"
            )
        if d.has_never_detected:
            print(
                "  warning: never-detected tracks contribute their full length "
                "to the delay average"
            )
    elif report.delay_error is not None:
        print(f"mD@?: unavailable ({report.delay_error})")
    print("# operating point (all detections)")
    for class_id in sorted(report.classes):
        c = report.classes[class_id]
        if c.base_precision is None:
            continue
        print(
            f"# class={class_map.name_of(class_id)} recall={c.base_recall} "
            f"precision={c.base_precision} delay={c.base_delay}"
        )


def cmd_eval(args) -> int:
    settings = load_settings(args.config, args.overrides)
    eval_class_names = sorted(settings.match_iou_by_name())
    alias_names = sorted(settings.dontcare_by_name())
    class_map = ClassMap(eval_class_names + alias_names)
    class_ids = {name: class_map.id_of(name) for name in eval_class_names + alias_names}
    eval_config = settings.eval_config(class_ids)

    labels = parse_kitti_tracking_labels(args.gt, class_map)
    det_store = parse_detections(args.det, class_map)
    detections = det_store.all()
    if class_map.flagged:
        print(f"note: unevaluated class names in inputs: {sorted(class_map.flagged)}")

    sparse = eval_config.sparse_annotations
    reports = []
    for difficulty in settings.difficulties():
        report = evaluate_classes(
            labels.tracks,
            detections,
            eval_config,
            difficulty,
            labels.dontcare_by_frame,
            with_delay=not sparse,
        )
        reports.append(report)
        _print_difficulty_report(report, class_map)

    beta = eval_config.beta
    print(f"{'difficulty':<12} {'mAP':>8} {f'mD@{beta:.2f}':>9}")
    for report in reports:
        map_text = "/" if report.mean_ap is None else f"{report.mean_ap:.4f}"
        md_text = "/" if report.delay is None else f"{report.delay.mean_delay:.2f}"
        print(f"{report.difficulty:<12} {map_text:>8} {md_text:>9}")

    if args.out:
        out = Path(args.out)
        with _atomic_dir(out, args.force) as tmp:
            outputs = ["manifest.json"]
            for report in reports:
                for class_id, c in sorted(report.classes.items()):
                    name = f"curve_{report.difficulty}_{class_map.name_of(class_id)}.txt"
                    with open(tmp / name, "w", encoding="utf-8") as fh:
                        fh.write("# threshold precision recall delay\n")
                        for t, precision, recall, delay in c.curve:
                            fh.write(f"{t} {precision} {recall} {_fmt_opt(delay)}\n")
                    outputs.append(name)
            write_manifest(
                tmp / "manifest.json",
                "eval",
                settings.snapshot(),
                [args.gt, args.det],
                outputs,
            )

    if sparse:
        print(
            "delay evaluation refused: the sparse annotation makes detection "
            "delay unmeasurable (mAP above covers labeled frames only)"
        )
        return EXIT_REFUSED
    return EXIT_OK


def _fmt_opt(value: float | None) -> str:
    return "/" if value is None else str(value)


def cmd_cost_report(args) -> int:
    rows = []
    for run_dir in args.runs:
        run = Path(run_dir)
        manifest = read_manifest(run / "manifest.json")
        masks_path = run / "masks.txt"
        if not masks_path.exists():
            raise DataError(
                f"{run}: no masks.txt; rerun with --dump-masks to enable cost reports"
            )
        snapshot = manifest.get("config", {})
        settings = Settings(_merge_snapshot(snapshot))
        cost = settings.cost_config()
        mode = snapshot.get("pipeline", {}).get("mode", "catdet")
        margin = settings.values["pipeline"]["margin"]
        seq = manifest.get("sequence", {})
        frame_w, frame_h = seq.get("frame_w"), seq.get("frame_h")
        frame_count = seq.get("frame_count", 0)
        if frame_w is None or frame_h is None:
            raise DataError(f"{run}: manifest lacks sequence frame dimensions")
        frames = parse_mask_dump(masks_path)

        totals = {"proposal": 0.0, "refine": 0.0, "from_tracker": 0.0, "from_proposal": 0.0}
        for frame in range(frame_count):
            per = frames.get(frame, {k: [] for k in ("tracker", "proposal", "refine", "mask")})
            mask = RegionMask(frame_w, frame_h, tuple(per["mask"]))
            if mode == "single":
                totals["refine"] += refine_cost(mask, cost.baseline_proposal_count, cost)
                continue
            totals["proposal"] += cost.proposal_fullframe_ops
            totals["refine"] += refine_cost(mask, len(per["refine"]), cost)
            totals["from_proposal"] += refine_cost(
                RegionMask.from_boxes(per["proposal"], frame_w, frame_h, margin),
                len(per["proposal"]),
                cost,
            )
            if mode == "catdet":
                totals["from_tracker"] += refine_cost(
                    RegionMask.from_boxes(per["tracker"], frame_w, frame_h, margin),
                    len(per["tracker"]),
                    cost,
                )
        rows.append((run.name, mode, frame_count, totals))

    print(
        f"{'run':<24} {'mode':<9} {'total':>8} {'proposal':>9} {'refine':>8} "
        f"{'from_trk':>9} {'from_prop':>10}"
    )
    for name, mode, _, t in rows:
        total = t["proposal"] + t["refine"]
        from_trk = f"{t['from_tracker']:.1f}" if mode == "catdet" else "/"
        from_prop = f"{t['from_proposal']:.1f}" if mode != "single" else "/"
        print(
            f"{name:<24} {mode:<9} {total:>8.1f} {t['proposal']:>9.1f} "
            f"{t['refine']:>8.1f} {from_trk:>9} {from_prop:>10}"
        )
    for name, mode, frame_count, t in rows:
        total = t["proposal"] + t["refine"]
        print(
            f"record run={name} mode={mode} frames={frame_count} total_ops={total} "
            f"proposal_ops={t['proposal']} refine_ops={t['refine']} "
            f"from_tracker_ops={_fmt_opt(t['from_tracker'] if mode == 'catdet' else None)} "
            f"from_proposal_ops={_fmt_opt(t['from_proposal'] if mode != 'single' else None)}"
        )
    return EXIT_OK


def _merge_snapshot(snapshot: dict) -> dict:
    """Fill a manifest config snapshot over the defaults (older runs may omit keys)."""
    base = load_settings(None, []).values
    for section, kv in snapshot.items():
        if section not in base:
            base[section] = {}
        base[section].update(kv)
    return base


def cmd_gen_synthetic(args) -> int:
    scenario = parse_scenario(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    data = generate_synthetic(scenario)
    out = Path(args.out)
    with _atomic_dir(out, args.force) as tmp:
        write_sequence_dir(data, tmp)
        outputs = sorted(p.name for p in tmp.iterdir()) + ["manifest.json"]
        write_manifest(
            tmp / "manifest.json",
            "gen-synthetic",
            {"scenario": {"path": str(args.scenario), "seed": scenario.seed}},
            [args.scenario],
            outputs,
        )
    print(
        f"{scenario.name}: {scenario.frame_count} frames, "
        f"{len(data.labels.tracks)} tracks -> {out}"
    )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": cmd_run,
        "eval": cmd_eval,
        "cost-report": cmd_cost_report,
        "gen-synthetic": cmd_gen_synthetic,
    }
    try:
        return handlers[args.command](args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EvaluationRefused as exc:
        print(f"evaluation refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED


if __name__ == "__main__":
    sys.exit(main())
