"""Train/test split constraints over drive sequences, and a seeded split search.

Constraints (all windows inclusive, ratios computed exactly from integer
counts):

* ``test_sequences`` - per condition, test sequences / all sequences.
* ``frames_per_sequence`` - mean frames per test sequence relative to the
  mean over all sequences.
* ``instances_per_image`` - per class, mean instances per test image relative
  to the mean over all images (or one aggregate ratio).
* ``pixels_per_image`` - per class, the same ratio for pixel counts; enough
  classes must land in each tiered window.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping

import numpy as np

CONDITIONS = ("rain", "fog", "lowlight", "snow")


class SplitError(ValueError):
    pass


@dataclass
class Sequence:
    sequence_id: str
    condition: str
    frames: list[str]


@dataclass
class DatasetManifest:
    """Sequences plus per-frame, per-class pixel and instance counts.

    ``pixels`` and ``instances`` are ``(n_frames, K)`` integer arrays whose
    rows follow ``frame_ids``.
    """

    sequences: list[Sequence]
    frame_ids: list[str]
    pixels: np.ndarray
    instances: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.int64)
        self.instances = np.asarray(self.instances, dtype=np.int64)
        if len(set(self.frame_ids)) != len(self.frame_ids):
            raise SplitError("frame ids must be unique")
        if self.pixels.shape != self.instances.shape or self.pixels.shape[0] != len(self.frame_ids):
            raise SplitError("pixel/instance statistics must have one row per frame and the same class count")
        row = {f: i for i, f in enumerate(self.frame_ids)}
        seen = set()
        seq_ids = set()
        for seq in self.sequences:
            if seq.sequence_id in seq_ids:
                raise SplitError(f"duplicate sequence id {seq.sequence_id!r}")
            seq_ids.add(seq.sequence_id)
            for f in seq.frames:
                if f not in row:
                    raise SplitError(f"frame {f!r} of sequence {seq.sequence_id!r} has no statistics")
                if f in seen:
                    raise SplitError(f"frame {f!r} belongs to more than one sequence")
                seen.add(f)
        if seen != set(self.frame_ids):
            raise SplitError(f"frames without a sequence: {sorted(set(self.frame_ids) - seen)[:5]}")
        self._row = row

    @property
    def num_classes(self) -> int:
        return self.pixels.shape[1]

    def conditions(self) -> list[str]:
        return sorted({s.condition for s in self.sequences})

    def sequence_totals(self):
        """Per-sequence frame counts and per-class pixel/instance sums."""
        frames = np.array([len(s.frames) for s in self.sequences], dtype=np.int64)
        pix = np.zeros((len(self.sequences), self.num_classes), dtype=np.int64)
        inst = np.zeros_like(pix)
        for i, seq in enumerate(self.sequences):
            rows = [self._row[f] for f in seq.frames]
            pix[i] = self.pixels[rows].sum(axis=0)
            inst[i] = self.instances[rows].sum(axis=0)
        return frames, pix, inst


@dataclass(frozen=True)
class Window:
    low: Fraction
    high: Fraction

    @classmethod
    def of(cls, low, high) -> "Window":
        return cls(Fraction(str(low)), Fraction(str(high)))

    def contains(self, x: Fraction) -> bool:
        return self.low <= x <= self.high

    def violation(self, x: float) -> float:
        return max(float(self.low) - x, 0.0, x - float(self.high))

    def as_list(self) -> list[float]:
        return [float(self.low), float(self.high)]


@dataclass(frozen=True)
class SplitConfig:
    test_sequences: Window = Window.of("0.18", "0.22")
    frames_per_sequence: Window = Window.of("0.9", "1.2")
    instances_per_image: Window = Window.of("0.8", "1.2")
    pixel_tiers: tuple[tuple[Window, int], ...] = ((Window.of("0.8", "1.2"), 18), (Window.of("0.7", "1.3"), 22))
    # "global" evaluates frame/instance/pixel ratios over the whole dataset,
    # "per-condition" evaluates them inside each condition.
    scope: str = "global"
    instance_mode: str = "per-class"

    def __post_init__(self):
        if self.scope not in ("global", "per-condition"):
            raise ValueError("scope must be 'global' or 'per-condition'")
        if self.instance_mode not in ("per-class", "aggregate"):
            raise ValueError("instance_mode must be 'per-class' or 'aggregate'")


@dataclass
class ConstraintResult:
    name: str
    scope: str
    measured: float | dict | None
    window: list
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class ConstraintReport:
    results: list[ConstraintResult]
    skipped_classes: list[int] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def by_name(self, name: str) -> list[ConstraintResult]:
        return [r for r in self.results if r.name == name]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "constraints": [r.to_dict() for r in self.results],
            "skipped_classes": self.skipped_classes,
            "notes": self.notes,
        }


def _ratio(num: int, den: int) -> Fraction | None:
    return None if den == 0 else Fraction(int(num), int(den))


def validate_split(
    m: DatasetManifest, assignment: Mapping[str, str], cfg: SplitConfig = SplitConfig()
) -> ConstraintReport:
    """Check every constraint for one assignment of sequences to ``train``/``test``."""
    ids = [s.sequence_id for s in m.sequences]
    missing = [i for i in ids if i not in assignment]
    if missing:
        raise SplitError(f"assignment is missing sequences {missing[:5]}")
    bad = {v for v in assignment.values() if v not in ("train", "test")}
    if bad:
        raise SplitError(f"assignment values must be 'train' or 'test', got {sorted(bad)}")
    unknown = set(assignment) - set(ids)
    if unknown:
        raise SplitError(f"assignment names unknown sequences {sorted(unknown)[:5]}")

    is_test = np.array([assignment[i] == "test" for i in ids])
    frames, pix, inst = m.sequence_totals()
    cond = np.array([s.condition for s in m.sequences])
    report = ConstraintReport([])

    for c in m.conditions():
        sel = cond == c
        n, t = int(sel.sum()), int((sel & is_test).sum())
        r = Fraction(t, n)
        report.results.append(
            ConstraintResult(
                "test_sequences", c, float(r), cfg.test_sequences.as_list(), cfg.test_sequences.contains(r),
                f"{t}/{n} sequences in test",
            )
        )

    scopes = [("all", np.ones(len(ids), dtype=bool))]
    if cfg.scope == "per-condition":
        scopes = [(c, cond == c) for c in m.conditions()]
    skipped: set[int] = set()
    for scope, sel in scopes:
        _distribution_constraints(report, cfg, scope, sel, is_test, frames, pix, inst, skipped)
    report.skipped_classes = sorted(skipped)
    if skipped:
        report.notes.append(f"classes without any pixels/instances skipped: {sorted(skipped)}")
    return report


def _distribution_constraints(report, cfg, scope, sel, is_test, frames, pix, inst, skipped):
    test = sel & is_test
    n_seq, n_test_seq = int(sel.sum()), int(test.sum())
    all_frames, test_frames = int(frames[sel].sum()), int(frames[test].sum())
    if n_test_seq == 0 or test_frames == 0:
        for name in ("frames_per_sequence", "instances_per_image", "pixels_per_image"):
            report.results.append(ConstraintResult(name, scope, None, [], False, "no test frames"))
        return

    r = Fraction(test_frames, n_test_seq) / Fraction(all_frames, n_seq)
    w = cfg.frames_per_sequence
    report.results.append(
        ConstraintResult("frames_per_sequence", scope, float(r), w.as_list(), w.contains(r))
    )

    # Mean per test image over mean per image: (test_sum / test_frames) / (all_sum / all_frames).
    def class_ratios(stats):
        tot = stats[sel].sum(axis=0)
        tst = stats[test].sum(axis=0)
        out = {}
        for k in range(stats.shape[1]):
            if tot[k] == 0:
                skipped.add(k)
                continue
            out[k] = Fraction(int(tst[k]) * all_frames, int(tot[k]) * test_frames)
        return out

    w = cfg.instances_per_image
    if cfg.instance_mode == "aggregate":
        tot, tst = int(inst[sel].sum()), int(inst[test].sum())
        if tot == 0:
            report.results.append(ConstraintResult("instances_per_image", scope, None, w.as_list(), True, "no instances"))
        else:
            r = Fraction(tst * all_frames, tot * test_frames)
            report.results.append(ConstraintResult("instances_per_image", scope, float(r), w.as_list(), w.contains(r)))
    else:
        ratios = class_ratios(inst)
        failing = sorted(k for k, v in ratios.items() if not w.contains(v))
        report.results.append(
            ConstraintResult(
                "instances_per_image", scope, {str(k): float(v) for k, v in ratios.items()}, w.as_list(),
                not failing, f"classes outside window: {failing}" if failing else "",
            )
        )

    ratios = class_ratios(pix)
    for w, need in cfg.pixel_tiers:
        inside = sum(1 for v in ratios.values() if w.contains(v))
        report.results.append(
            ConstraintResult(
                "pixels_per_image", scope, {"classes_in_window": inside, "required": need,
                                             "ratios": {str(k): float(v) for k, v in ratios.items()}},
                w.as_list(), inside >= need, f"{inside} of {len(ratios)} classes in window, need {need}",
            )
        )


# -- search -------------------------------------------------------------------


def feasible_test_counts(n: int, window: Window) -> list[int]:
    return [t for t in range(n + 1) if window.contains(Fraction(t, n))]


class _Scorer:
    """Float violation score; 0 exactly when every window is met."""

    def __init__(self, m: DatasetManifest, cfg: SplitConfig):
        self.cfg = cfg
        self.frames, self.pix, self.inst = m.sequence_totals()
        cond = np.array([s.condition for s in m.sequences])
        if cfg.scope == "per-condition":
            self.scopes = [cond == c for c in m.conditions()]
        else:
            self.scopes = [np.ones(len(cond), dtype=bool)]

    def __call__(self, is_test: np.ndarray) -> float:
        cfg = self.cfg
        score = 0.0
        for sel in self.scopes:
            test = sel & is_test
            nt = test.sum()
            tf = self.frames[test].sum()
            if nt == 0 or tf == 0:
                score += 10.0
                continue
            af = self.frames[sel].sum()
            score += cfg.frames_per_sequence.violation((tf / nt) / (af / sel.sum()))
            inst_tot, inst_tst = self.inst[sel].sum(axis=0), self.inst[test].sum(axis=0)
            if cfg.instance_mode == "aggregate":
                if inst_tot.sum():
                    score += cfg.instances_per_image.violation(inst_tst.sum() * af / (inst_tot.sum() * tf))
            else:
                ok = inst_tot > 0
                r = inst_tst[ok] * af / (inst_tot[ok] * tf)
                score += sum(cfg.instances_per_image.violation(x) for x in r)
            pix_tot, pix_tst = self.pix[sel].sum(axis=0), self.pix[test].sum(axis=0)
            ok = pix_tot > 0
            r = pix_tst[ok] * af / (pix_tot[ok] * tf)
            for w, need in cfg.pixel_tiers:
                v = sorted(w.violation(x) for x in r)
                score += sum(v[:need]) + max(0, need - len(v))
        return float(score)


def propose_split(
    m: DatasetManifest,
    seed: int = 0,
    max_iterations: int = 2000,
    restarts: int = 8,
    cfg: SplitConfig = SplitConfig(),
):
    """Search for a passing assignment by random restarts plus swap hill-climbing.

    Each restart draws, per condition, a test set whose size meets the
    sequence-ratio window, then repeatedly applies the best single
    train/test swap within a condition until no swap lowers the violation
    score. Returns ``(assignment, report)``; the report is not passing when
    nothing feasible was found. Deterministic for a given seed.
    """
    if not m.sequences:
        raise SplitError("manifest has no sequences")
    cond = [s.condition for s in m.sequences]
    groups = {c: [i for i, x in enumerate(cond) if x == c] for c in m.conditions()}
    notes = []
    counts = {}
    for c, members in groups.items():
        ok = feasible_test_counts(len(members), cfg.test_sequences)
        if not ok:
            n = len(members)
            mid = float(cfg.test_sequences.low + cfg.test_sequences.high) / 2
            best = min(range(n + 1), key=lambda t: (cfg.test_sequences.violation(t / n), abs(t / n - mid), t))
            ok = [best]
            notes.append(
                f"condition {c!r}: no test count out of {n} sequences meets the sequence-ratio window; using {best}"
            )
        counts[c] = ok

    scorer = _Scorer(m, cfg)
    master = random.Random(seed)
    best_key, best_mask = None, None
    for restart in range(max(1, restarts)):
        rng = random.Random(master.getrandbits(64))
        is_test = np.zeros(len(cond), dtype=bool)
        for c, members in groups.items():
            is_test[rng.sample(members, rng.choice(counts[c]))] = True
        score = scorer(is_test)
        evals = 1
        while score > 0 and evals < max_iterations:
            improved = None
            for c, members in groups.items():
                ins = [i for i in members if is_test[i]]
                outs = [i for i in members if not is_test[i]]
                rng.shuffle(ins)
                rng.shuffle(outs)
                for i in ins:
                    for j in outs:
                        is_test[i], is_test[j] = False, True
                        s = scorer(is_test)
                        evals += 1
                        is_test[i], is_test[j] = True, False
                        if s < score and (improved is None or s < improved[0]):
                            improved = (s, i, j)
                        if evals >= max_iterations:
                            break
                    if evals >= max_iterations:
                        break
            if improved is None:
                break
            score, i, j = improved
            is_test[i], is_test[j] = False, True
        key = (score, restart)
        if best_key is None or key < best_key:
            best_key, best_mask = key, is_test.copy()
        if score == 0:
            break

    assignment = {s.sequence_id: "test" if best_mask[i] else "train" for i, s in enumerate(m.sequences)}
    report = validate_split(m, assignment, cfg)
    report.notes = notes + report.notes
    return assignment, report


# -- files --------------------------------------------------------------------


def _manifest_from_rows(rows: list[dict]) -> DatasetManifest:
    if not rows:
        raise SplitError("manifest is empty")
    keys = rows[0].keys()
    pix_cols = sorted((k for k in keys if k.startswith("pixel_count_")), key=lambda k: int(k.rsplit("_", 1)[1]))
    inst_cols = sorted((k for k in keys if k.startswith("instance_count_")), key=lambda k: int(k.rsplit("_", 1)[1]))
    k = len(pix_cols)
    if [int(c.rsplit("_", 1)[1]) for c in pix_cols] != list(range(k)) or len(inst_cols) != k:
        raise SplitError("manifest needs pixel_count_0..K-1 and instance_count_0..K-1 columns")
    seqs: dict[str, Sequence] = {}
    frame_ids, pixels, instances = [], [], []
    for row in rows:
        sid, c = str(row["sequence_id"]), str(row["condition"])
        seq = seqs.setdefault(sid, Sequence(sid, c, []))
        if seq.condition != c:
            raise SplitError(f"sequence {sid!r} spans conditions {seq.condition!r} and {c!r}")
        fid = str(row["frame_id"])
        seq.frames.append(fid)
        frame_ids.append(fid)
        try:
            pixels.append([int(row[col]) for col in pix_cols])
            instances.append([int(row[col]) for col in inst_cols])
        except (TypeError, ValueError) as exc:
            raise SplitError(f"frame {fid!r}: statistics must be integers ({exc})") from exc
    return DatasetManifest(list(seqs.values()), frame_ids, np.array(pixels), np.array(instances))


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a manifest from CSV (one row per frame) or JSON.

    JSON form: ``{"frames": [{"sequence_id", "condition", "frame_id",
    "pixel_counts": [...], "instance_counts": [...]}, ...]}``.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text())
        rows = []
        for f in doc["frames"]:
            row = {"sequence_id": f["sequence_id"], "condition": f["condition"], "frame_id": f["frame_id"]}
            row.update({f"pixel_count_{k}": v for k, v in enumerate(f["pixel_counts"])})
            row.update({f"instance_count_{k}": v for k, v in enumerate(f["instance_counts"])})
            rows.append(row)
        return _manifest_from_rows(rows)
    with path.open(newline="") as fh:
        return _manifest_from_rows(list(csv.DictReader(fh)))


def write_manifest_csv(m: DatasetManifest, path: str | Path) -> None:
    k = m.num_classes
    header = ["sequence_id", "condition", "frame_id"]
    header += [f"pixel_count_{i}" for i in range(k)] + [f"instance_count_{i}" for i in range(k)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for seq in m.sequences:
            for f in seq.frames:
                r = m._row[f]
                w.writerow([seq.sequence_id, seq.condition, f, *m.pixels[r].tolist(), *m.instances[r].tolist()])


def load_assignment(path: str | Path) -> dict[str, str]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0] and rows[0][0] == "sequence_id":
        rows = rows[1:]
    out = {}
    for row in rows:
        if not row:
            continue
        if len(row) != 2:
            raise SplitError(f"assignment rows need two columns, got {row}")
        out[row[0]] = row[1].strip()
    return out


def assignment_csv(assignment: Mapping[str, str]) -> str:
    lines = ["sequence_id,split"] + [f"{k},{v}" for k, v in assignment.items()]
    return "\n".join(lines) + "\n"
