"""Command-line entry point.

Exit codes: 0 success, 1 validation or constraint failure, 2 input error.
Set ``SAFESEG_LOG`` (e.g. ``INFO`` or ``DEBUG``) for diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import pairing, report, splits
from .confusion import DEFAULT_IGNORE, LabelFormat, LabelMapError, merge_all, pair_files
from .hierarchy import HierarchyError, default_hierarchy, load_hierarchy
from .metrics import (
    AGGREGATIONS,
    PRESENCE_POLICIES,
    MetricConfig,
    MetricError,
    accumulate_pairs,
    build_report,
    score_images,
)

log = logging.getLogger("safeseg")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _emit(text: str, out: str | None) -> None:
    if out:
        report.write_atomic(out, text)
    else:
        sys.stdout.write(text)


def _hierarchy(args):
    return load_hierarchy(args.hierarchy) if args.hierarchy else default_hierarchy()


def _important(h, choice: str) -> frozenset[int]:
    if choice in h.preset_names():
        return h.important_set(choice)
    path = Path(choice)
    if not path.is_file():
        raise InputError(f"--cimp {choice!r} is neither a preset ({', '.join(h.preset_names())}) nor a file")
    text = path.read_text()
    try:
        names = json.loads(text)
    except ValueError:
        names = [line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    return h.resolve_classes(names)


def _label_format(args, h) -> LabelFormat:
    return LabelFormat(
        kind=args.label_format, width=args.width, height=args.height, dtype=args.dtype,
        num_classes=h.num_classes, ignore=args.ignore,
    )


def cmd_evaluate(args) -> int:
    h = _hierarchy(args)
    cfg = MetricConfig(_important(h, args.cimp), h.n_levels, args.presence, args.aggregation)
    fmt = _label_format(args, h)
    suffixes = (".png",) if args.label_format == "png" else (".raw", ".bin")
    for root in (args.gt, args.pred):
        if not Path(root).is_dir():
            raise InputError(f"not a directory: {root}")

    pairs, missing_pred, missing_gt = pair_files(args.gt, args.pred, suffixes)
    errors = [f"{rel}: no prediction" for rel in missing_pred] + [f"{rel}: no ground truth" for rel in missing_gt]
    results, decode_errors = accumulate_pairs(args.gt, args.pred, pairs, h.num_classes, fmt, args.ignore, args.jobs)
    errors += decode_errors
    if not results:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        raise InputError("no label map pairs could be evaluated")

    def make(items):
        cm = merge_all((c for _, c in items), h.num_classes)
        per_image = score_images(items, h, cfg) if cfg.aggregation == "per-image" else []
        return build_report(cm, h, cfg, per_image, len(items))

    full = make(results)
    full.errors = errors
    doc = full.to_dict()
    by_cond = {}
    if args.by_condition:
        groups: dict[str, list] = {}
        for rel, cm in results:
            cond = rel.split("/", 1)[0] if "/" in rel else "unknown"
            groups.setdefault(cond, []).append((rel, cm))
        by_cond = {c: make(items) for c, items in sorted(groups.items())}
        rows = report.condition_table(by_cond, h, args.presence)
        doc["conditions"] = {c: r.to_dict() for c, r in by_cond.items()}
        doc["condition_table"] = [vars(r) for r in rows]
        if args.table:
            report.write_atomic(args.table, report.condition_table_csv(rows))
        sys.stderr.write(report.condition_table_text(rows))

    if args.format == "json":
        _emit(report.report_json(doc), args.out)
    else:
        tables = dict(by_cond) if by_cond else {}
        tables = {"All": full, **tables}
        _emit(report.class_table_csv(tables), args.out)
    if args.histogram:
        if cfg.aggregation != "per-image":
            raise InputError("--histogram needs --aggregation per-image")
        report.write_atomic(args.histogram, report.score_histogram_csv(full, args.bin_width))

    print(
        f"images={full.n_images} classes={full.n_evaluated} miou={full.miou:.6f} smiou={full.smiou:.6f} "
        f"({cfg.aggregation})",
        file=sys.stderr,
    )
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        print(f"{len(errors)} file(s) could not be evaluated", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def cmd_distances(args) -> int:
    h = _hierarchy(args)
    if args.pair:
        a, b = args.pair
        _emit(f"{h.tree_distance(a, b)}\n", args.out)
        return EXIT_OK
    dm = h.distance_matrix()
    lines = [",".join(["class", *h.class_names])]
    for name, row in zip(h.class_names, dm.tolist()):
        lines.append(",".join([name, *map(str, row)]))
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _split_config(args) -> splits.SplitConfig:
    tiers = splits.SplitConfig().pixel_tiers
    if args.pixel_min is not None:
        tiers = tuple((w, n) for (w, _), n in zip(tiers, args.pixel_min))
    return splits.SplitConfig(scope=args.scope, instance_mode=args.instance_mode, pixel_tiers=tiers)


def cmd_validate_split(args) -> int:
    m = splits.load_manifest(args.manifest)
    a = splits.load_assignment(args.split)
    rep = splits.validate_split(m, a, _split_config(args))
    _emit(json.dumps(rep.to_dict(), indent=2) + "\n", args.out)
    for r in rep.results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} [{r.scope}] {r.detail}", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_propose_split(args) -> int:
    m = splits.load_manifest(args.manifest)
    assignment, rep = splits.propose_split(m, args.seed, args.max_iterations, args.restarts, _split_config(args))
    _emit(splits.assignment_csv(assignment), args.out)
    if args.report:
        report.write_atomic(args.report, json.dumps(rep.to_dict(), indent=2) + "\n")
    for note in rep.notes:
        print(f"note: {note}", file=sys.stderr)
    print(f"split {'passes' if rep.passed else 'does not pass'} all constraints", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_dedup(args) -> int:
    frames = pairing.read_frame_log(args.log)
    kept = pairing.dedup_frames(frames, args.threshold)
    _emit(pairing.frame_log_csv(kept), args.out)
    print(f"kept {len(kept)} of {len(frames)} frames", file=sys.stderr)
    return EXIT_OK


def cmd_match_pairs(args) -> int:
    if args.log:
        rgb, nir = pairing.split_streams(pairing.read_frame_log(args.log))
    elif args.rgb and args.nir:
        rgb = pairing.read_frame_log(args.rgb)
        nir = pairing.read_frame_log(args.nir)
    else:
        raise InputError("match-pairs needs --log or both --rgb and --nir")
    manifest = pairing.match_pairs(rgb, nir, args.max_skew)
    _emit(pairing.pairs_csv(manifest), args.out)
    if args.unmatched:
        report.write_atomic(args.unmatched, pairing.unmatched_csv(manifest))
    print(
        f"{len(manifest.pairs)} pairs, {len(manifest.unmatched_rgb)} unmatched rgb, "
        f"{len(manifest.unmatched_nir)} unmatched nir",
        file=sys.stderr,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safeseg", description="Safe mIoU segmentation evaluation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def hier(sp):
        sp.add_argument("--hierarchy", help="hierarchy config (default: shipped IDD taxonomy)")

    def out(sp):
        sp.add_argument("--out", help="output path (default: stdout)")

    e = sub.add_parser("evaluate", help="score predictions against ground truth")
    hier(e)
    out(e)
    e.add_argument("--gt", required=True, help="ground-truth root directory")
    e.add_argument("--pred", required=True, help="prediction root directory")
    e.add_argument("--cimp", default="default", help="important-class preset name or file of class names")
    e.add_argument("--aggregation", choices=AGGREGATIONS, default="dataset")
    e.add_argument("--presence", choices=PRESENCE_POLICIES, default="exclude")
    e.add_argument("--ignore", type=int, default=DEFAULT_IGNORE)
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--format", choices=("json", "csv"), default="json")
    e.add_argument("--label-format", choices=("png", "raw"), default="png")
    e.add_argument("--width", type=int)
    e.add_argument("--height", type=int)
    e.add_argument("--dtype", choices=("uint8", "uint16"), default="uint8")
    e.add_argument("--by-condition", action="store_true", help="treat the first path component as the condition")
    e.add_argument("--table", help="write the per-condition mIoU/SmIoU table (CSV) here")
    e.add_argument("--histogram", help="write per-image score histogram data (CSV) here")
    e.add_argument("--bin-width", type=float, default=5.0, help="histogram bin width in percentage points")
    e.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("distances", help="tree distances between classes")
    hier(d)
    out(d)
    d.add_argument("--pair", nargs=2, metavar=("A", "B"))
    d.set_defaults(func=cmd_distances)

    def split_opts(sp):
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--scope", choices=("global", "per-condition"), default="global")
        sp.add_argument("--instance-mode", choices=("per-class", "aggregate"), default="per-class")
        sp.add_argument("--pixel-min", type=int, nargs=2, metavar=("TIGHT", "LOOSE"),
                        help="classes required in the tight and loose pixel windows (default 18 22)")

    v = sub.add_parser("validate-split", help="check a train/test split against the constraints")
    split_opts(v)
    out(v)
    v.add_argument("--split", required=True, help="two-column CSV: sequence_id,split")
    v.set_defaults(func=cmd_validate_split)

    ps = sub.add_parser("propose-split", help="search for a constraint-satisfying split")
    split_opts(ps)
    out(ps)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--max-iterations", type=int, default=2000)
    ps.add_argument("--restarts", type=int, default=8)
    ps.add_argument("--report", help="write the constraint report (JSON) here")
    ps.set_defaults(func=cmd_propose_split)

    dd = sub.add_parser("dedup", help="drop frames closer than a time threshold")
    out(dd)
    dd.add_argument("--log", required=True)
    dd.add_argument("--threshold", type=float, default=pairing.DEFAULT_THRESHOLD)
    dd.set_defaults(func=cmd_dedup)

    mp = sub.add_parser("match-pairs", help="pair RGB and NIR frames by timestamp")
    out(mp)
    mp.add_argument("--log", help="frame log holding both streams")
    mp.add_argument("--rgb")
    mp.add_argument("--nir")
    mp.add_argument("--max-skew", type=float, default=pairing.DEFAULT_MAX_SKEW)
    mp.add_argument("--unmatched", help="write unmatched frame ids (CSV) here")
    mp.set_defaults(func=cmd_match_pairs)
    return p


def run(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("SAFESEG_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except HierarchyError as exc:
        print(f"error: hierarchy: {exc}", file=sys.stderr)
    except LabelMapError as exc:
        print(f"error: label map: {exc}", file=sys.stderr)
    except splits.SplitError as exc:
        print(f"error: split: {exc}", file=sys.stderr)
    except pairing.FrameLogError as exc:
        print(f"error: frame log: {exc}", file=sys.stderr)
    except (InputError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except KeyError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
