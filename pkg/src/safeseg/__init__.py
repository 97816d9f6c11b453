"""Safe mIoU evaluation for hierarchical semantic segmentation."""

from .confusion import ConfusionMatrix, LabelFormat, accumulate, decode_label_map, merge
from .hierarchy import LabelHierarchy, default_hierarchy, distance_matrix, load_hierarchy, parse_hierarchy, tree_distance
from .metrics import MetricConfig, MetricReport, evaluate_pairset, iou_per_class, miou, safe_iou_per_class, smiou

__all__ = [
    "ConfusionMatrix", "LabelFormat", "accumulate", "decode_label_map", "merge",
    "LabelHierarchy", "default_hierarchy", "distance_matrix", "load_hierarchy", "parse_hierarchy", "tree_distance",
    "MetricConfig", "MetricReport", "evaluate_pairset", "iou_per_class", "miou", "safe_iou_per_class", "smiou",
]
