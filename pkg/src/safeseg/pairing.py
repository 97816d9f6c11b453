"""Frame curation: drop near-duplicate frames in time, then pair RGB with NIR frames."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

DEFAULT_THRESHOLD = 3.0
DEFAULT_MAX_SKEW = 0.5
STREAMS = ("rgb", "nir")


class FrameLogError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    frame_id: str
    timestamp: float
    stream: str = "rgb"


@dataclass
class PairManifest:
    pairs: list[tuple[str, str, float]] = field(default_factory=list)
    unmatched_rgb: list[str] = field(default_factory=list)
    unmatched_nir: list[str] = field(default_factory=list)


def _check_sorted(frames: Sequence[Frame]) -> None:
    last: dict[str, float] = {}
    for f in frames:
        prev = last.get(f.stream)
        if prev is not None and f.timestamp < prev:
            raise FrameLogError(f"{f.stream} timestamps decrease at frame {f.frame_id!r} ({f.timestamp} < {prev})")
        last[f.stream] = f.timestamp


def dedup_frames(frames: Sequence[Frame], threshold: float = DEFAULT_THRESHOLD) -> list[Frame]:
    """Keep the first frame of each stream, then every frame at least
    ``threshold`` seconds after the last frame kept from the same stream."""
    _check_sorted(frames)
    last_kept: dict[str, float] = {}
    out = []
    for f in frames:
        prev = last_kept.get(f.stream)
        if prev is None or f.timestamp - prev >= threshold:
            out.append(f)
            last_kept[f.stream] = f.timestamp
    return out


def match_pairs(rgb: Sequence[Frame], nir: Sequence[Frame], max_skew: float = DEFAULT_MAX_SKEW) -> PairManifest:
    """Order-preserving one-to-one nearest-timestamp matching in one forward scan.

    Each RGB frame takes the closest unused NIR frame within ``max_skew``
    (the earlier one on a tie) unless the next RGB frame is strictly closer
    to it, in which case the next-best candidate is tried. NIR frames passed
    over by the scan are reported unmatched. Skew is ``nir - rgb``.
    """
    _check_sorted(rgb)
    _check_sorted(nir)
    out = PairManifest()
    j = 0
    for i, r in enumerate(rgb):
        while j < len(nir) and nir[j].timestamp < r.timestamp - max_skew:
            out.unmatched_nir.append(nir[j].frame_id)
            j += 1
        k = j
        window = []
        while k < len(nir) and nir[k].timestamp <= r.timestamp + max_skew:
            window.append(k)
            k += 1
        window.sort(key=lambda k: (abs(nir[k].timestamp - r.timestamp), nir[k].timestamp, k))
        nxt = rgb[i + 1].timestamp if i + 1 < len(rgb) else None
        chosen = None
        for k in window:
            d = abs(nir[k].timestamp - r.timestamp)
            if d > max_skew:
                continue
            if nxt is not None and abs(nxt - nir[k].timestamp) < d:
                continue
            chosen = k
            break
        if chosen is None:
            out.unmatched_rgb.append(r.frame_id)
            continue
        for skipped in range(j, chosen):
            out.unmatched_nir.append(nir[skipped].frame_id)
        out.pairs.append((r.frame_id, nir[chosen].frame_id, nir[chosen].timestamp - r.timestamp))
        j = chosen + 1
    out.unmatched_nir.extend(f.frame_id for f in nir[j:])
    return out


def split_streams(frames: Iterable[Frame]) -> tuple[list[Frame], list[Frame]]:
    rgb, nir = [], []
    for f in frames:
        (rgb if f.stream == "rgb" else nir).append(f)
    return rgb, nir


def read_frame_log(path: str | Path) -> list[Frame]:
    """CSV with columns ``frame_id, unix_timestamp_seconds, stream``."""
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"frame_id", "unix_timestamp_seconds", "stream"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise FrameLogError(f"{path}: frame log needs columns {sorted(need)}")
        frames = []
        for n, row in enumerate(reader, start=2):
            stream = row["stream"].strip().lower()
            if stream not in STREAMS:
                raise FrameLogError(f"{path}:{n}: unknown stream {row['stream']!r}")
            try:
                ts = float(row["unix_timestamp_seconds"])
            except ValueError:
                raise FrameLogError(f"{path}:{n}: bad timestamp {row['unix_timestamp_seconds']!r}") from None
            frames.append(Frame(row["frame_id"], ts, stream))
    return frames


def frame_log_csv(frames: Iterable[Frame]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame_id", "unix_timestamp_seconds", "stream"])
    for f in frames:
        w.writerow([f.frame_id, repr(f.timestamp), f.stream])
    return buf.getvalue()


def pairs_csv(manifest: PairManifest) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rgb_frame_id", "nir_frame_id", "skew"])
    for rgb_id, nir_id, skew in manifest.pairs:
        w.writerow([rgb_id, nir_id, repr(skew)])
    return buf.getvalue()


def unmatched_csv(manifest: PairManifest) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame_id", "stream"])
    for fid in manifest.unmatched_rgb:
        w.writerow([fid, "rgb"])
    for fid in manifest.unmatched_nir:
        w.writerow([fid, "nir"])
    return buf.getvalue()
