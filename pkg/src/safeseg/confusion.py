"""Exact pixel confusion counts between ground-truth and predicted label maps."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from PIL import Image

DEFAULT_IGNORE = 255


class LabelMapError(ValueError):
    """Bad label map contents, shape, or file format."""


class ConfusionMatrix:
    """K x K pixel counts; entry ``(c, s)`` is ``|gt_c & pred_s|``.

    Instances are treated as values: ``merge`` and ``+`` return new objects
    and the counts array is read-only.
    """

    __slots__ = ("counts",)

    def __init__(self, counts: np.ndarray):
        counts = np.array(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion counts must be square, got shape {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion counts must be non-negative")
        counts.flags.writeable = False
        self.counts = counts

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        """Number of evaluated (non-ignored) pixels."""
        return int(self.counts.sum())

    @property
    def gt_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def pred_counts(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return merge(self, other)

    __add__ = merge

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)

    def __getstate__(self):
        return self.counts

    def __setstate__(self, state):
        state = np.array(state, dtype=np.int64)
        state.flags.writeable = False
        object.__setattr__(self, "counts", state)

    def __repr__(self):
        return f"ConfusionMatrix(K={self.num_classes}, total={self.total})"

    def to_list(self) -> list[list[int]]:
        return self.counts.tolist()


def merge(x: ConfusionMatrix, y: ConfusionMatrix) -> ConfusionMatrix:
    if x.num_classes != y.num_classes:
        raise ValueError(f"cannot merge confusion matrices with K={x.num_classes} and K={y.num_classes}")
    return ConfusionMatrix(x.counts + y.counts)


def merge_all(matrices: Iterable[ConfusionMatrix], num_classes: int) -> ConfusionMatrix:
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    for cm in matrices:
        if cm.num_classes != num_classes:
            raise ValueError(f"expected K={num_classes}, got K={cm.num_classes}")
        out += cm.counts
    return ConfusionMatrix(out)


def accumulate(gt, pred, num_classes: int, ignore: int = DEFAULT_IGNORE) -> ConfusionMatrix:
    """Count ``(gt, pred)`` pixel pairs, skipping pixels whose gt is ``ignore``.

    A prediction equal to ``ignore`` (or otherwise ``>= num_classes``) on an
    evaluated pixel is an input error.
    """
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise LabelMapError(f"shape mismatch: gt {gt.shape} vs pred {pred.shape}")
    if gt.size == 0:
        raise LabelMapError("empty label map")
    gt = gt.ravel()
    pred = pred.ravel()

    keep = gt != ignore
    if keep.all():
        g, p = gt, pred
    else:
        g, p = gt[keep], pred[keep]
    if g.size:
        # Unsigned dtypes make a single max() sufficient; signed maps also need min().
        if g.max() >= num_classes or (g.dtype.kind == "i" and g.min() < 0):
            bad = np.unique(g[(g >= num_classes) | (g < 0)])
            raise LabelMapError(f"ground truth has values {bad.tolist()} outside 0..{num_classes - 1} and != ignore")
        if p.max() >= num_classes or (p.dtype.kind == "i" and p.min() < 0):
            bad = np.unique(p[(p >= num_classes) | (p < 0)])
            raise LabelMapError(f"prediction has values {bad.tolist()} outside 0..{num_classes - 1} on evaluated pixels")
    idx = g.astype(np.int64) * num_classes + p
    counts = np.bincount(idx, minlength=num_classes * num_classes).reshape(num_classes, num_classes)
    return ConfusionMatrix(counts)


# -- label map files --------------------------------------------------------


@dataclass(frozen=True)
class LabelFormat:
    """How to decode a label map file.

    ``kind`` is ``png`` (single-channel 8/16-bit, or palette-indexed where the
    palette index is the class) or ``raw`` (headerless row-major pixels).
    Raw maps take ``width``/``height`` from here or from a ``<file>.json``
    sidecar. RGB PNGs are accepted only with a ``color_table``.
    """

    kind: str = "png"
    width: int | None = None
    height: int | None = None
    dtype: str = "uint8"
    num_classes: int | None = None
    ignore: int = DEFAULT_IGNORE
    color_table: Mapping[tuple[int, int, int], int] | None = field(default=None, hash=False)


_PNG_MODES = {"L", "P", "I;16", "I;16B", "I;16L", "I"}


def decode_label_map(path: str | os.PathLike, fmt: LabelFormat = LabelFormat()) -> np.ndarray:
    path = Path(path)
    if fmt.kind == "png":
        arr = _decode_png(path, fmt)
    elif fmt.kind == "raw":
        arr = _decode_raw(path, fmt)
    else:
        raise LabelMapError(f"unknown label map kind {fmt.kind!r}")
    if fmt.num_classes is not None:
        bad = (arr >= fmt.num_classes) & (arr != fmt.ignore)
        if bad.any():
            vals = np.unique(arr[bad]).tolist()
            raise LabelMapError(f"{path}: values {vals} outside 0..{fmt.num_classes - 1} and != {fmt.ignore}")
    return arr


def _decode_png(path: Path, fmt: LabelFormat) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode in ("RGB", "RGBA"):
                if fmt.color_table is None:
                    raise LabelMapError(f"{path}: {mode} label map needs a declared color table")
                return _decode_colors(np.asarray(img.convert("RGB")), fmt, path)
            if mode not in _PNG_MODES:
                raise LabelMapError(f"{path}: unsupported image mode {mode}")
            arr = np.asarray(img)
    except OSError as exc:
        raise LabelMapError(f"{path}: cannot read image: {exc}") from exc
    if arr.dtype.kind == "i":
        if arr.min() < 0 or arr.max() > 65535:
            raise LabelMapError(f"{path}: pixel values outside 16-bit range")
        arr = arr.astype(np.uint16)
    return arr


def _decode_colors(rgb: np.ndarray, fmt: LabelFormat, path: Path) -> np.ndarray:
    packed = (rgb[..., 0].astype(np.uint32) << 16) | (rgb[..., 1].astype(np.uint32) << 8) | rgb[..., 2]
    out = np.full(packed.shape, fmt.ignore, dtype=np.uint16)
    known = np.zeros(packed.shape, dtype=bool)
    for (r, g, b), cls in fmt.color_table.items():
        hit = packed == ((r << 16) | (g << 8) | b)
        out[hit] = cls
        known |= hit
    if not known.all():
        colors = np.unique(packed[~known])[:5]
        raise LabelMapError(f"{path}: colors not in table: {[f'#{c:06x}' for c in colors]}")
    return out


def _decode_raw(path: Path, fmt: LabelFormat) -> np.ndarray:
    width, height, dtype = fmt.width, fmt.height, fmt.dtype
    if width is None or height is None:
        sidecar = path.with_name(path.name + ".json")
        try:
            meta = json.loads(sidecar.read_text())
            width, height = int(meta["width"]), int(meta["height"])
            dtype = meta.get("dtype", dtype)
        except (OSError, ValueError, KeyError) as exc:
            raise LabelMapError(f"{path}: no dimensions given and sidecar {sidecar.name} unusable: {exc}") from exc
    if dtype not in ("uint8", "uint16"):
        raise LabelMapError(f"{path}: raw dtype must be uint8 or uint16, got {dtype}")
    if width <= 0 or height <= 0:
        raise LabelMapError(f"{path}: dimensions must be positive")
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise LabelMapError(f"{path}: cannot read: {exc}") from exc
    dt = np.dtype(dtype).newbyteorder("<")
    if len(data) != width * height * dt.itemsize:
        raise LabelMapError(f"{path}: {len(data)} bytes does not match {width}x{height} {dtype}")
    return np.frombuffer(data, dtype=dt).reshape(height, width).astype(dtype)


def encode_png(path: str | os.PathLike, labels: np.ndarray) -> None:
    """Write a single-channel 8- or 16-bit PNG of class indices."""
    labels = np.asarray(labels)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if labels.max(initial=0) > 255:
        Image.fromarray(labels.astype(np.uint16)).save(path)
    else:
        Image.fromarray(labels.astype(np.uint8)).save(path)


def pair_files(gt_root: str | os.PathLike, pred_root: str | os.PathLike, suffixes=(".png",)):
    """Match files by relative path under two roots.

    Returns ``(pairs, missing_pred, missing_gt)``; all lists hold relative
    paths in sorted order.
    """

    def scan(root):
        root = Path(root)
        if not root.is_dir():
            raise LabelMapError(f"not a directory: {root}")
        return {
            p.relative_to(root).as_posix()
            for p in root.rglob("*")
            if p.is_file() and p.suffix.lower() in suffixes
        }

    gt = scan(gt_root)
    pred = scan(pred_root)
    return sorted(gt & pred), sorted(gt - pred), sorted(pred - gt)
