import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spoofkit.errors import DataError
from spoofkit.scores import (
    ScoreSet,
    cllr,
    compute_eer,
    load_labels,
    load_scores,
    minmax_normalize,
    save_labels,
    save_scores,
    weer,
)


def make_set(bona, spoof):
    entries = [(f"b{i}", s) for i, s in enumerate(bona)]
    entries += [(f"s{i}", s) for i, s in enumerate(spoof)]
    labels = {f"b{i}": "bonafide" for i in range(len(bona))}
    labels.update({f"s{i}": "spoof" for i in range(len(spoof))})
    return ScoreSet(entries=entries, labels=labels)


def brute_force_eer(bona, spoof):
    """Enumerate every midpoint threshold and interpolate at the crossing.

    Direct counting; shares only the interpolation convention with the
    production implementation.
    """
    bona = list(bona)
    spoof = list(spoof)
    distinct = sorted(set(bona) | set(spoof))
    thresholds = [distinct[0] - 1.0]
    thresholds += [(a + b) / 2.0 for a, b in zip(distinct[:-1], distinct[1:])]
    thresholds += [distinct[-1] + 1.0]
    points = []
    for t in thresholds:
        far = sum(1 for s in spoof if s >= t) / len(spoof)
        frr = sum(1 for s in bona if s < t) / len(bona)
        points.append((t, far, frr))
    prev = None
    for t, far, frr in points:
        d = far - frr
        if d == 0.0:
            return far, t
        if d < 0.0:
            t0, f0, r0 = prev
            d0 = f0 - r0
            alpha = d0 / (d0 - d)
            return f0 + alpha * (far - f0), t0 + alpha * (t - t0)
        prev = (t, far, frr)
    raise AssertionError("no crossing found")


class TestMinMax:
    def test_basic_mapping(self):
        s = ScoreSet(entries=[("a", 0.0), ("b", 5.0), ("c", 10.0)])
        out = minmax_normalize(s)
        assert [v for _, v in out.entries] == [0.0, 0.5, 1.0]

    def test_idempotent_on_unit_range(self):
        s = ScoreSet(entries=[("a", 0.0), ("b", 0.25), ("c", 1.0)])
        out = minmax_normalize(s)
        assert [v for _, v in out.entries] == [0.0, 0.25, 1.0]

    def test_shift_scale_invariance(self):
        s = ScoreSet(entries=[("a", -2.0), ("b", 0.0), ("c", 2.0)])
        out = minmax_normalize(s)
        assert [v for _, v in out.entries] == [0.0, 0.5, 1.0]

    def test_constant_set_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            minmax_normalize(ScoreSet(entries=[("a", 1.0), ("b", 1.0)]))

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            minmax_normalize(ScoreSet(entries=[("a", 1.0)]))

    def test_endpoints_attained(self, rng):
        s = ScoreSet(entries=[(f"u{i}", float(v)) for i, v in
                              enumerate(rng.standard_normal(50))])
        vals = minmax_normalize(s).values()
        assert vals.min() == 0.0 and vals.max() == 1.0


class TestEer:
    def test_perfect_separation(self):
        eer, _ = compute_eer(make_set([0.9, 0.8], [0.2, 0.1]))
        assert eer == 0.0

    def test_anti_separation(self):
        eer, _ = compute_eer(make_set([0.2, 0.1], [0.9, 0.8]))
        assert eer == 1.0

    def test_attained_crossing(self):
        eer, _ = compute_eer(make_set([0.7, 0.4, 0.6], [0.5, 0.3, 0.2]))
        assert eer == pytest.approx(brute_force_eer([0.7, 0.4, 0.6], [0.5, 0.3, 0.2])[0])
        assert eer == pytest.approx(1.0 / 3.0)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            compute_eer(make_set([0.5], []))

    def test_unlabeled_rejected(self):
        with pytest.raises(ValueError):
            compute_eer(ScoreSet(entries=[("a", 0.1)]))

    def test_matches_brute_force_oracle(self, rng):
        for _ in range(200):
            nb = int(rng.integers(1, 60))
            ns = int(rng.integers(1, 60))
            bona = rng.standard_normal(nb) + rng.uniform(0, 2)
            spoof = rng.standard_normal(ns)
            if rng.random() < 0.3:  # force score collisions
                bona = np.round(bona, 1)
                spoof = np.round(spoof, 1)
            eer, thr = compute_eer(make_set(bona, spoof))
            ref_eer, ref_thr = brute_force_eer(bona, spoof)
            assert eer == pytest.approx(ref_eer, abs=1e-12)
            assert thr == pytest.approx(ref_thr, abs=1e-12)

    def test_invariant_under_monotone_transforms(self, rng):
        bona = rng.standard_normal(40) + 0.8
        spoof = rng.standard_normal(45)
        base, _ = compute_eer(make_set(bona, spoof))
        for f in (lambda x: 3 * x + 7, np.tanh, lambda x: x**3,
                  lambda x: 1 / (1 + np.exp(-x))):
            eer, _ = compute_eer(make_set(f(bona), f(spoof)))
            assert eer == pytest.approx(base, abs=1e-12)


class TestWeer:
    def test_final_ranking_value(self):
        assert weer(0.096, 0.120) == pytest.approx(0.1104, abs=1e-12)

    def test_zero(self):
        assert weer(0.0, 0.0) == 0.0

    @given(st.floats(0, 1))
    @settings(max_examples=50, deadline=None)
    def test_fixed_point(self, x):
        assert weer(x, x) == pytest.approx(x, abs=1e-12)

    @given(st.floats(0, 1), st.floats(0, 1))
    @settings(max_examples=100, deadline=None)
    def test_bounded_and_monotone(self, a, b):
        w = weer(a, b)
        assert min(a, b) - 1e-12 <= w <= max(a, b) + 1e-12

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            weer(1.5, 0.0)


class TestCllr:
    def test_all_zero_scores_give_one(self):
        assert cllr(make_set([0.0, 0.0], [0.0])) == pytest.approx(1.0)

    def test_well_separated_limit(self):
        value = cllr(make_set([60.0, 55.0], [-60.0, -58.0]))
        assert value < 1e-12

    def test_scalar_evaluation(self):
        # bonafide {1}, spoof {-1}: both terms log2(1 + e^-1)
        expected = math.log2(1.0 + math.exp(-1.0))
        assert cllr(make_set([1.0], [-1.0])) == pytest.approx(expected, rel=1e-12)

    def test_overflow_safe(self):
        assert np.isfinite(cllr(make_set([-800.0], [900.0])))


class TestScoreFiles:
    def test_round_trip(self, tmp_path):
        s = ScoreSet(entries=[("u1", 0.25), ("u2", -3.5)])
        p = tmp_path / "scores.txt"
        save_scores(p, s)
        back = load_scores(p)
        assert back.entries == s.entries

    def test_negate_on_load(self, tmp_path):
        p = tmp_path / "scores.txt"
        save_scores(p, ScoreSet(entries=[("u1", 2.0)]))
        assert load_scores(p, negate=True).entries == [("u1", -2.0)]

    def test_label_round_trip(self, tmp_path):
        labels = {"u1": "bonafide", "u2": "spoof", "u3": "unknown"}
        p = tmp_path / "labels.tsv"
        save_labels(p, labels)
        assert load_labels(p) == labels

    def test_malformed_score_line(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("u1 0.5\n")
        with pytest.raises(DataError):
            load_scores(p)

    def test_malformed_label(self, tmp_path):
        p = tmp_path / "bad.tsv"
        p.write_text("u1\tgenuine\n")
        with pytest.raises(DataError):
            load_labels(p)


def test_scoreset_rejects_duplicates():
    with pytest.raises(ValueError):
        ScoreSet(entries=[("a", 1.0), ("a", 2.0)])


def test_scoreset_rejects_nonfinite():
    with pytest.raises(ValueError):
        ScoreSet(entries=[("a", float("inf"))])
