"""Report emitters: JSON detail, class tables, condition tables and histograms."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .confusion import ConfusionMatrix, merge_all
from .hierarchy import LabelHierarchy
from .metrics import MetricConfig, MetricReport, miou, smiou


def write_atomic(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def report_json(report: MetricReport | Mapping) -> str:
    doc = report.to_dict() if isinstance(report, MetricReport) else report
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def _cell(v) -> str:
    return "" if v is None else repr(float(v))


def class_table_csv(reports: Mapping[str, MetricReport]) -> str:
    """Rows of (metric, condition) by class columns; empty cells are absent classes."""
    if not reports:
        raise ValueError("no reports to tabulate")
    names = next(iter(reports.values())).class_names
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "condition", *names])
    for metric in ("iou", "safe_iou"):
        for cond, rep in reports.items():
            w.writerow([metric, cond, *(_cell(v) for v in getattr(rep, metric))])
    return buf.getvalue()


@dataclass
class ConditionRow:
    condition: str
    miou: float
    smiou_tp: float
    smiou: float


def condition_table(
    per_condition: Mapping[str, ConfusionMatrix | MetricReport],
    hierarchy: LabelHierarchy,
    presence: str = "exclude",
    tp_preset: str = "tp",
    full_preset: str = "default",
) -> list[ConditionRow]:
    """One row per condition plus an ``All`` row computed from the merged matrix."""
    if not per_condition:
        raise ValueError("condition table needs at least one condition")
    cms = {
        c: (v.confusion if isinstance(v, MetricReport) else v) for c, v in per_condition.items()
    }
    dm = hierarchy.distance_matrix()
    cfg_tp = MetricConfig(hierarchy.important_set(tp_preset), hierarchy.n_levels, presence)
    cfg_full = MetricConfig(hierarchy.important_set(full_preset), hierarchy.n_levels, presence)

    def row(name, cm):
        return ConditionRow(name, miou(cm, presence), smiou(cm, dm, cfg_tp), smiou(cm, dm, cfg_full))

    rows = [row(c, cm) for c, cm in cms.items()]
    rows.append(row("All", merge_all(cms.values(), hierarchy.num_classes)))
    return rows


def condition_table_csv(rows: Sequence[ConditionRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["condition", "miou", "smiou_tp", "smiou"])
    for r in rows:
        w.writerow([r.condition, repr(r.miou), repr(r.smiou_tp), repr(r.smiou)])
    return buf.getvalue()


def condition_table_text(rows: Sequence[ConditionRow]) -> str:
    """Human-readable table in percent, two decimals."""
    width = max(9, *(len(r.condition) for r in rows))
    lines = [f"{'condition':<{width}}  {'mIoU':>7}  {'SmIoU(tp)':>9}  {'SmIoU':>7}"]
    for r in rows:
        lines.append(f"{r.condition:<{width}}  {100 * r.miou:7.2f}  {100 * r.smiou_tp:9.2f}  {100 * r.smiou:7.2f}")
    return "\n".join(lines) + "\n"


def histogram(values: Sequence[float], bin_width: float = 5.0, low: float = -100.0, high: float = 100.0):
    """Counts of ``values`` (percent) in ``[lower, upper)`` bins; the top bin also takes ``high``."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    n_bins = math.ceil((high - low) / bin_width - 1e-9)
    counts = [0] * n_bins
    for v in values:
        if not low <= v <= high:
            raise ValueError(f"value {v} outside [{low}, {high}]")
        # Small slack so 65.0 computed as 64.99999999999999 lands in the 65 bin.
        i = min(int(math.floor((v - low) / bin_width + 1e-9)), n_bins - 1)
        counts[i] += 1
    return [(low + i * bin_width, min(low + (i + 1) * bin_width, high), c) for i, c in enumerate(counts)]


def score_histogram_csv(report: MetricReport, bin_width: float = 5.0) -> str:
    """Per-image mIoU and SmIoU distributions as ``bin_lower, bin_upper, miou_count, smiou_count``."""
    m = histogram([100 * s.miou for s in report.per_image], bin_width)
    s = histogram([100 * s.smiou for s in report.per_image], bin_width)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lower", "bin_upper", "miou_count", "smiou_count"])
    for (lo, hi, cm), (_, _, cs) in zip(m, s):
        w.writerow([repr(lo), repr(hi), cm, cs])
    return buf.getvalue()
