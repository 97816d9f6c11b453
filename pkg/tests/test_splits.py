from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest

from safeseg.splits import (
    DatasetManifest,
    Sequence,
    SplitConfig,
    SplitError,
    Window,
    feasible_test_counts,
    load_assignment,
    load_manifest,
    propose_split,
    validate_split,
    write_manifest_csv,
)

K = 30


def manifest(specs, k=K):
    """specs: list of (seq_id, condition, [(pixels_row, instances_row), ...])."""
    seqs, fids, pix, inst = [], [], [], []
    for sid, cond, frames in specs:
        ids = [f"{sid}_f{i}" for i in range(len(frames))]
        seqs.append(Sequence(sid, cond, ids))
        fids += ids
        for p, n in frames:
            pix.append(np.broadcast_to(p, k))
            inst.append(np.broadcast_to(n, k))
    return DatasetManifest(seqs, fids, np.array(pix), np.array(inst))


def uniform(n_seq, frames=3, cond="rain", prefix="s"):
    return [(f"{prefix}{i}", cond, [(100, 2)] * frames) for i in range(n_seq)]


def split_of(m, test_ids):
    return {s.sequence_id: "test" if s.sequence_id in test_ids else "train" for s in m.sequences}


def result(rep, name, scope=None):
    rs = [r for r in rep.by_name(name) if scope is None or r.scope == scope]
    assert len(rs) == 1
    return rs[0]


def test_two_of_ten_passes():
    m = manifest(uniform(10))
    rep = validate_split(m, split_of(m, {"s0", "s1"}))
    r = result(rep, "test_sequences")
    assert r.measured == 0.2 and r.passed
    assert rep.passed


def test_three_of_ten_fails():
    m = manifest(uniform(10))
    rep = validate_split(m, split_of(m, {"s0", "s1", "s2"}))
    r = result(rep, "test_sequences")
    assert r.measured == pytest.approx(0.3) and not r.passed
    assert not rep.passed


@pytest.mark.parametrize("n_test,ok", [(8, False), (9, True), (10, True), (11, True), (12, False)])
def test_sequence_ratio_boundaries(n_test, ok):
    m = manifest(uniform(50))
    rep = validate_split(m, split_of(m, {f"s{i}" for i in range(n_test)}))
    assert result(rep, "test_sequences").passed is ok


def test_sequence_ratio_is_per_condition():
    m = manifest(uniform(10, cond="rain", prefix="r") + uniform(5, cond="fog", prefix="f"))
    rep = validate_split(m, split_of(m, {"r0", "r1", "f0"}))
    assert result(rep, "test_sequences", "rain").passed
    assert result(rep, "test_sequences", "fog").passed
    rep = validate_split(m, split_of(m, {"r0", "r1", "r2"}))
    assert not result(rep, "test_sequences", "fog").passed


def five_seqs(test_frames, other_frames):
    specs = [("t", "rain", [(100, 2)] * test_frames)]
    specs += [(f"o{i}", "rain", [(100, 2)] * other_frames) for i in range(4)]
    return manifest(specs)


@pytest.mark.parametrize(
    "ft,fo,expected,ok",
    [(24, 19, Fraction(6, 5), True), (36, 41, Fraction(9, 10), True), (25, 19, Fraction(125, 101), False),
     (35, 41, Fraction(175, 199), False)],
)
def test_frames_per_sequence_boundaries(ft, fo, expected, ok):
    m = five_seqs(ft, fo)
    r = result(validate_split(m, split_of(m, {"t"})), "frames_per_sequence")
    assert r.measured == float(expected)
    assert r.passed is ok


def ratio_manifest(inst_x=None, pix_x=None, y=None):
    """Five one-frame sequences; sequence 't' (the test one) gets per-class stats x, others y.

    Per-class ratio is 5x / (x + 4y).
    """
    y = np.full(K, 100) if y is None else y
    px = y if pix_x is None else pix_x
    ix = y if inst_x is None else inst_x
    specs = [("t", "rain", [(px, ix)])] + [(f"o{i}", "rain", [(y, y)]) for i in range(4)]
    return manifest(specs)


# x/y pairs giving exact ratios 5x/(x+4y).
AT_12, AT_08, AT_13, AT_07, FAR = (24, 19), (16, 21), (52, 37), (28, 43), (2, 1)


def per_class(pairs):
    x = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    # Scale every class to a common y so the other sequences share one row.
    lcm = np.lcm.reduce(y)
    return x * (lcm // y), np.full(K, lcm)


@pytest.mark.parametrize("pair,ok", [(AT_12, True), (AT_08, True), ((25, 19), False), ((15, 21), False)])
def test_instance_ratio_boundaries(pair, ok):
    x, y = per_class([pair] + [(1, 1)] * (K - 1))
    m = ratio_manifest(inst_x=x, y=y)
    r = result(validate_split(m, split_of(m, {"t"})), "instances_per_image")
    assert r.measured["0"] == pytest.approx(5 * pair[0] / (pair[0] + 4 * pair[1]))
    assert r.passed is ok


def test_instance_aggregate_mode():
    x, y = per_class([AT_12, AT_08] + [(1, 1)] * (K - 2))
    m = ratio_manifest(inst_x=x, y=y)
    per_class_rep = validate_split(m, split_of(m, {"t"}))
    agg = validate_split(m, split_of(m, {"t"}), SplitConfig(instance_mode="aggregate"))
    assert result(per_class_rep, "instances_per_image").passed
    r = result(agg, "instances_per_image")
    assert isinstance(r.measured, float) and r.passed


def pixel_case(tight, loose_only, rest):
    pairs = [AT_12 if i % 2 else AT_08 for i in range(tight)]
    pairs += [AT_13 if i % 2 else AT_07 for i in range(loose_only)]
    pairs += [FAR] * rest
    assert len(pairs) == K
    return per_class(pairs)


@pytest.mark.parametrize(
    "tight,loose_only,tight_ok,loose_ok",
    [(18, 4, True, True), (17, 5, False, True), (18, 3, True, False), (30, 0, True, True), (0, 22, False, True)],
)
def test_pixel_tier_boundaries(tight, loose_only, tight_ok, loose_ok):
    x, y = pixel_case(tight, loose_only, K - tight - loose_only)
    m = ratio_manifest(pix_x=x, y=y)
    rep = validate_split(m, split_of(m, {"t"}))
    tiers = rep.by_name("pixels_per_image")
    assert [t.measured["classes_in_window"] for t in tiers] == [tight, tight + loose_only]
    assert [t.passed for t in tiers] == [tight_ok, loose_ok]


def test_identical_sequences_all_ratios_one():
    m = manifest(uniform(10) + uniform(5, cond="fog", prefix="f"))
    rep = validate_split(m, split_of(m, {"s3", "s7", "f2"}))
    assert rep.passed
    assert result(rep, "frames_per_sequence").measured == 1.0
    assert set(result(rep, "instances_per_image").measured.values()) == {1.0}


def test_zero_classes_skipped_and_reported():
    y = np.full(K, 100)
    y[5] = 0
    m = ratio_manifest(y=y)
    rep = validate_split(m, split_of(m, {"t"}))
    assert rep.skipped_classes == [5]
    assert "5" not in result(rep, "instances_per_image").measured


def test_per_condition_scope():
    m = manifest(uniform(5, cond="rain", prefix="r") + uniform(5, cond="fog", prefix="f"))
    rep = validate_split(m, split_of(m, {"r0", "f0"}), SplitConfig(scope="per-condition"))
    assert {r.scope for r in rep.by_name("frames_per_sequence")} == {"rain", "fog"}
    assert rep.passed


def test_validate_errors():
    m = manifest(uniform(5))
    with pytest.raises(SplitError, match="missing"):
        validate_split(m, {"s0": "test"})
    with pytest.raises(SplitError, match="train"):
        validate_split(m, {**split_of(m, set()), "s0": "val"})
    with pytest.raises(SplitError):
        DatasetManifest([Sequence("a", "rain", ["f1"])], ["f1", "f2"], np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(SplitError, match="statistics"):
        DatasetManifest([Sequence("a", "rain", ["f1"])], ["f1"], np.zeros((1, 3)), np.zeros((1, 2)))


def test_validate_is_pure():
    m = five_seqs(24, 19)
    a = split_of(m, {"t"})
    assert validate_split(m, a).to_dict() == validate_split(m, a).to_dict()


def test_empty_test_side_fails_everything():
    m = manifest(uniform(5))
    rep = validate_split(m, split_of(m, set()))
    assert not rep.passed
    assert not result(rep, "frames_per_sequence").passed


# -- search ---------------------------------------------------------------------


def test_feasible_counts_by_enumeration():
    w = Window.of("0.18", "0.22")
    for n in range(1, 15):
        brute = sorted({len(s) for t in range(n + 1) for s in combinations(range(n), t)
                        if Fraction(18, 100) <= Fraction(len(s), n) <= Fraction(22, 100)})
        assert feasible_test_counts(n, w) == brute
    for n in range(15, 200):
        assert feasible_test_counts(n, w) == [t for t in range(n + 1) if 18 * n <= 100 * t <= 22 * n]
    assert feasible_test_counts(4, w) == []
    assert feasible_test_counts(5, w) == [1]


def test_propose_identical_sequences_passes():
    m = manifest(uniform(10) + uniform(5, cond="fog", prefix="f") + uniform(15, cond="snow", prefix="n"))
    for seed in (0, 1, 2):
        a, rep = propose_split(m, seed=seed)
        assert rep.passed
        assert validate_split(m, a).passed


def test_propose_flags_infeasible_condition():
    m = manifest(uniform(4, cond="snow") + uniform(10, cond="rain", prefix="r"))
    a, rep = propose_split(m, seed=0)
    assert not rep.passed
    assert not result(rep, "test_sequences", "snow").passed
    assert result(rep, "test_sequences", "rain").passed
    assert any("snow" in n for n in rep.notes)


def random_manifest(seed, n_per_cond=(10, 10, 5, 15)):
    rng = np.random.default_rng(seed)
    specs = []
    for cond, n in zip(("rain", "fog", "lowlight", "snow"), n_per_cond):
        for i in range(n):
            frames = int(rng.integers(15, 35))
            base_p = rng.integers(50, 500, K)
            base_i = rng.integers(1, 10, K)
            rows = [(base_p + rng.integers(0, 200, K), base_i + rng.integers(0, 4, K)) for _ in range(frames)]
            specs.append((f"{cond}{i}", cond, rows))
    return manifest(specs)


def test_propose_is_deterministic():
    m = random_manifest(1)
    a1, r1 = propose_split(m, seed=11, max_iterations=400, restarts=3)
    a2, r2 = propose_split(m, seed=11, max_iterations=400, restarts=3)
    assert a1 == a2 and r1.to_dict() == r2.to_dict()


def test_propose_report_consistent_with_validator():
    m = random_manifest(2)
    a, rep = propose_split(m, seed=5, max_iterations=1500, restarts=4)
    assert rep.passed == validate_split(m, a).passed
    assert rep.passed
    for cond in m.conditions():
        assert result(rep, "test_sequences", cond).passed


def test_sequence_atomicity(tmp_path):
    m = random_manifest(3)
    a, _ = propose_split(m, seed=0, max_iterations=200, restarts=1)
    assert set(a) == {s.sequence_id for s in m.sequences}


def test_manifest_csv_round_trip(tmp_path):
    m = random_manifest(4, (5, 5, 5, 5))
    write_manifest_csv(m, tmp_path / "m.csv")
    again = load_manifest(tmp_path / "m.csv")
    assert again.frame_ids == m.frame_ids
    np.testing.assert_array_equal(again.pixels, m.pixels)
    np.testing.assert_array_equal(again.instances, m.instances)


def test_manifest_json(tmp_path):
    import json

    doc = {"frames": [
        {"sequence_id": "a", "condition": "fog", "frame_id": "1", "pixel_counts": [1, 2], "instance_counts": [0, 1]},
        {"sequence_id": "a", "condition": "fog", "frame_id": "2", "pixel_counts": [3, 4], "instance_counts": [1, 1]},
    ]}
    (tmp_path / "m.json").write_text(json.dumps(doc))
    m = load_manifest(tmp_path / "m.json")
    assert m.num_classes == 2 and m.sequences[0].frames == ["1", "2"]


def test_load_assignment(tmp_path):
    (tmp_path / "a.csv").write_text("sequence_id,split\ns0,test\ns1,train\n")
    assert load_assignment(tmp_path / "a.csv") == {"s0": "test", "s1": "train"}
