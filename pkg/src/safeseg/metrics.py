"""IoU, safe IoU and their means over a confusion matrix.

The safe IoU of class ``c`` subtracts from its IoU the share of ``c``'s
ground-truth pixels predicted as other classes, each weighted by
``d(c, s) / n``. Important classes are penalized for every confusion; other
classes only for confusions with important classes. All shares use the
union ``|gt_c | pred_c|`` as denominator, so every value lies in [-1, 1].
Means run over classes with ground-truth pixels.
"""

from __future__ import annotations

import logging
from fractions import Fraction
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .confusion import (
    DEFAULT_IGNORE,
    ConfusionMatrix,
    LabelFormat,
    LabelMapError,
    accumulate,
    decode_label_map,
    merge_all,
    pair_files,
)
from .hierarchy import LabelHierarchy

log = logging.getLogger(__name__)

PRESENCE_POLICIES = ("exclude", "zero")
AGGREGATIONS = ("dataset", "per-image")


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricConfig:
    """Settings for one safe-IoU evaluation.

    A class is evaluated when it has ground-truth pixels. With
    ``presence="exclude"`` the means run over evaluated classes only; with
    ``"zero"`` they run over all K classes and the rest count as 0.
    """

    important: frozenset[int] = frozenset()
    n_levels: int = 1
    presence: str = "exclude"
    aggregation: str = "dataset"

    def __post_init__(self):
        object.__setattr__(self, "important", frozenset(int(i) for i in self.important))
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        if self.presence not in PRESENCE_POLICIES:
            raise ValueError(f"presence must be one of {PRESENCE_POLICIES}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")

    def check(self, num_classes: int) -> None:
        bad = [i for i in self.important if not 0 <= i < num_classes]
        if bad:
            raise ValueError(f"important classes {sorted(bad)} outside 0..{num_classes - 1}")


def _counts(cm) -> np.ndarray:
    return cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm, dtype=np.int64)


def _union(counts: np.ndarray) -> np.ndarray:
    return counts.sum(axis=1) + counts.sum(axis=0) - np.diag(counts)


def present_classes(cm) -> np.ndarray:
    """Boolean mask of classes with ground-truth pixels; these enter the means."""
    return _counts(cm).sum(axis=1) > 0


def _iou_terms(counts: np.ndarray):
    return np.diag(counts).copy(), _union(counts)


def iou_per_class(cm) -> np.ndarray:
    """Per-class IoU; ``nan`` where the class has neither gt nor predicted pixels."""
    num, den = _iou_terms(_counts(cm))
    return _ratio(num, den)


def safe_iou_cross(cm, c: int, s: int) -> float:
    """Share of class ``c``'s union taken by ground-truth ``c`` predicted as ``s``."""
    counts = _counts(cm)
    union = counts[c, :].sum() + counts[:, c].sum() - counts[c, c]
    if union == 0:
        raise MetricError(f"class {c} is absent; its safe IoU terms are undefined")
    return counts[c, s] / union


def _penalty_mask(num_classes: int, important) -> np.ndarray:
    imp = np.zeros(num_classes, dtype=bool)
    imp[list(important)] = True
    mask = imp[:, None] | imp[None, :]
    np.fill_diagonal(mask, False)
    return mask


def _safe_terms(counts: np.ndarray, distances, cfg: MetricConfig):
    """Integer numerator and denominator of every class's safe IoU.

    safe_c = (n * tp_c - sum_s w(c, s) * d(c, s) * cm[c, s]) / (n * union_c)
    """
    k = counts.shape[0]
    cfg.check(k)
    distances = np.asarray(distances)
    if distances.shape != (k, k):
        raise MetricError(f"distance matrix shape {distances.shape} does not match K={k}")
    d = distances.astype(np.int64)
    if not np.array_equal(d, distances):
        raise MetricError("tree distances must be integers")
    weights = np.where(_penalty_mask(k, cfg.important), d, 0)
    num = cfg.n_levels * np.diag(counts) - (weights * counts).sum(axis=1)
    return num, cfg.n_levels * _union(counts)


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(len(den), np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def safe_iou_per_class(cm, distances: np.ndarray, cfg: MetricConfig) -> np.ndarray:
    """Safe IoU for every class; ``nan`` where the class has neither gt nor predicted pixels."""
    return _ratio(*_safe_terms(_counts(cm), distances, cfg))


def safe_iou_class(cm, distances: np.ndarray, c: int, cfg: MetricConfig) -> float:
    if not present_classes(cm)[c]:
        raise MetricError(f"class {c} has no ground-truth pixels")
    return float(safe_iou_per_class(cm, distances, cfg)[c])


def _mean(num: np.ndarray, den: np.ndarray, present: np.ndarray, presence: str) -> float:
    """Mean of ``num/den`` over present classes, summed exactly and rounded once."""
    if not present.any():
        raise MetricError("no classes present")
    total = sum((Fraction(int(a), int(b)) for a, b, ok in zip(num, den, present) if ok), Fraction(0))
    count = len(den) if presence == "zero" else int(present.sum())
    return float(total / count)


def miou(cm, presence: str = "exclude") -> float:
    counts = _counts(cm)
    return _mean(*_iou_terms(counts), present_classes(counts), presence)


def smiou(cm, distances: np.ndarray, cfg: MetricConfig) -> float:
    counts = _counts(cm)
    return _mean(*_safe_terms(counts, distances, cfg), present_classes(counts), cfg.presence)


# -- reports ------------------------------------------------------------------


@dataclass
class ImageScore:
    path: str
    miou: float
    smiou: float
    n_classes: int


@dataclass
class MetricReport:
    class_names: list[str]
    iou: list[float | None]
    safe_iou: list[float | None]
    miou: float
    smiou: float
    n_evaluated: int
    important: list[int]
    n_levels: int
    presence: str
    aggregation: str
    confusion: ConfusionMatrix
    dataset_miou: float
    dataset_smiou: float
    per_image: list[ImageScore] = field(default_factory=list)
    n_images: int = 0
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "aggregation": self.aggregation,
            "presence": self.presence,
            "n_levels": self.n_levels,
            "important": [self.class_names[i] for i in self.important],
            "miou": self.miou,
            "smiou": self.smiou,
            "dataset_miou": self.dataset_miou,
            "dataset_smiou": self.dataset_smiou,
            "n_evaluated_classes": self.n_evaluated,
            "n_images": self.n_images,
            "classes": [
                {"index": i, "name": name, "iou": self.iou[i], "safe_iou": self.safe_iou[i]}
                for i, name in enumerate(self.class_names)
            ],
            "per_image": [vars(s) for s in self.per_image],
            "confusion": self.confusion.to_list(),
            "errors": list(self.errors),
        }


def _opt(values: np.ndarray, present: np.ndarray) -> list[float | None]:
    return [float(v) if ok else None for v, ok in zip(values, present)]


def build_report(
    cm: ConfusionMatrix,
    hierarchy: LabelHierarchy,
    cfg: MetricConfig,
    per_image: Sequence[ImageScore] = (),
    n_images: int = 0,
    errors: Sequence[str] = (),
) -> MetricReport:
    """Dataset-level metrics from ``cm``; per-image scores set the headline in per-image mode."""
    dm = hierarchy.distance_matrix()
    ious = iou_per_class(cm)
    safe = safe_iou_per_class(cm, dm, cfg)
    present = present_classes(cm)
    n_eval = int(present.sum()) if cfg.presence == "exclude" else len(ious)
    ds_miou = miou(cm, cfg.presence)
    ds_smiou = smiou(cm, dm, cfg)
    head_miou, head_smiou = ds_miou, ds_smiou
    if cfg.aggregation == "per-image":
        if not per_image:
            raise MetricError("per-image aggregation needs at least one scored image")
        head_miou = float(np.mean([s.miou for s in per_image]))
        head_smiou = float(np.mean([s.smiou for s in per_image]))
    return MetricReport(
        class_names=hierarchy.class_names,
        iou=_opt(ious, present),
        safe_iou=_opt(safe, present),
        miou=head_miou,
        smiou=head_smiou,
        n_evaluated=n_eval,
        important=sorted(cfg.important),
        n_levels=cfg.n_levels,
        presence=cfg.presence,
        aggregation=cfg.aggregation,
        confusion=cm,
        dataset_miou=ds_miou,
        dataset_smiou=ds_smiou,
        per_image=list(per_image),
        n_images=n_images,
        errors=list(errors),
    )


def _accumulate_file(job):
    rel, gt_path, pred_path, fmt, num_classes, ignore = job
    try:
        gt = decode_label_map(gt_path, fmt)
        pred = decode_label_map(pred_path, fmt)
        return rel, accumulate(gt, pred, num_classes, ignore), None
    except (LabelMapError, ValueError) as exc:
        return rel, None, str(exc)


def accumulate_pairs(
    gt_root,
    pred_root,
    rel_paths: Iterable[str],
    num_classes: int,
    fmt: LabelFormat = LabelFormat(),
    ignore: int = DEFAULT_IGNORE,
    jobs: int = 1,
):
    """Per-file confusion matrices in sorted-path order, plus per-file errors.

    Returns ``(results, errors)`` where ``results`` is a list of
    ``(rel_path, ConfusionMatrix)``.
    """
    gt_root, pred_root = Path(gt_root), Path(pred_root)
    work = [(rel, gt_root / rel, pred_root / rel, fmt, num_classes, ignore) for rel in sorted(rel_paths)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_accumulate_file, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        outcomes = [_accumulate_file(w) for w in work]
    results, errors = [], []
    for rel, cm, err in outcomes:
        if err is not None:
            log.warning("skipping %s: %s", rel, err)
            errors.append(f"{rel}: {err}")
        else:
            results.append((rel, cm))
    return results, errors


def score_images(results, hierarchy: LabelHierarchy, cfg: MetricConfig) -> list[ImageScore]:
    """Per-image mIoU/SmIoU using each image's own class presence."""
    dm = hierarchy.distance_matrix()
    scores = []
    for rel, cm in results:
        present = present_classes(cm)
        if not present.any():
            log.info("no evaluated pixels in %s; left out of per-image scores", rel)
            continue
        scores.append(
            ImageScore(
                rel,
                miou(cm, cfg.presence),
                smiou(cm, dm, cfg),
                int(present.sum()),
            )
        )
    return scores


def evaluate_pairset(
    gt_root,
    pred_root,
    hierarchy: LabelHierarchy,
    cfg: MetricConfig,
    fmt: LabelFormat = LabelFormat(),
    ignore: int = DEFAULT_IGNORE,
    jobs: int = 1,
    suffixes=(".png",),
) -> MetricReport:
    """Evaluate every prediction against the ground truth with the same relative path.

    Unmatched and undecodable files are listed in ``report.errors``; the
    remaining pairs are still evaluated.
    """
    pairs, missing_pred, missing_gt = pair_files(gt_root, pred_root, suffixes)
    errors = [f"{rel}: no prediction" for rel in missing_pred]
    errors += [f"{rel}: no ground truth" for rel in missing_gt]
    results, decode_errors = accumulate_pairs(
        gt_root, pred_root, pairs, hierarchy.num_classes, fmt, ignore, jobs
    )
    errors += decode_errors
    cm = merge_all((c for _, c in results), hierarchy.num_classes)
    per_image = score_images(results, hierarchy, cfg) if cfg.aggregation == "per-image" else []
    return build_report(cm, hierarchy, cfg, per_image, len(results), errors)
