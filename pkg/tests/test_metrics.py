import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from padkit.errors import UndefinedMetricError
from padkit.metrics import (
    LIVE,
    SPOOF,
    MetricsReport,
    PredictionSet,
    PredRecord,
    acc,
    acer,
    apcer,
    apcer_worst_case,
    auc,
    bpcer,
    classify,
    eer,
    full_report,
    load_scores,
    per_attack_apcer,
    save_scores,
)

from oracles import (
    bf_acc,
    bf_apcer,
    bf_apcer_worst,
    bf_auc,
    bf_bpcer,
    bf_eer,
    bf_per_attack_apcer,
)


def ps(*records):
    return PredictionSet([PredRecord(*r) for r in records])


def random_prediction_set(rng, size):
    """One random set off the (9 scores x 2 labels x 2 tags) grid, both classes present."""
    grid_scores = [round(0.1 * k, 1) for k in range(1, 10)]
    tags = ["print", "replay"]
    records = [
        PredRecord(float(rng.choice(grid_scores)), LIVE, "Live"),
        PredRecord(float(rng.choice(grid_scores)), SPOOF, str(rng.choice(tags))),
    ]
    for _ in range(size - 2):
        label = LIVE if rng.random() < 0.5 else SPOOF
        tag = "Live" if label == LIVE else str(rng.choice(tags))
        records.append(PredRecord(float(rng.choice(grid_scores)), label, tag))
    rng.shuffle(records)
    return PredictionSet(records)


class TestClassify:
    def test_live_above(self):
        assert classify(0.9, 0.5) == LIVE

    def test_boundary_is_live(self):
        assert classify(0.5, 0.5) == LIVE

    def test_spoof_below(self):
        assert classify(0.1, 0.5) == SPOOF


class TestApcerBpcer:
    def test_all_spoof_caught(self):
        preds = ps((0.1, SPOOF), (0.2, SPOOF), (0.3, SPOOF), (0.4, SPOOF))
        assert apcer(preds, 0.5) == 0.0

    def test_three_of_four_caught(self):
        preds = ps((0.1, SPOOF), (0.2, SPOOF), (0.3, SPOOF), (0.9, SPOOF))
        assert apcer(preds, 0.5) == 0.25

    def test_all_spoof_missed(self):
        preds = ps((0.9, SPOOF), (0.8, SPOOF))
        assert apcer(preds, 0.5) == 1.0

    def test_no_spoof_records_undefined(self):
        with pytest.raises(UndefinedMetricError, match="apcer"):
            apcer(ps((0.9, LIVE)), 0.5)

    def test_all_live_accepted(self):
        preds = ps((0.9, LIVE), (0.8, LIVE))
        assert bpcer(preds, 0.5) == 0.0

    def test_one_of_five_rejected(self):
        preds = ps((0.1, LIVE), (0.9, LIVE), (0.9, LIVE), (0.9, LIVE), (0.9, LIVE))
        assert bpcer(preds, 0.5) == 0.2

    def test_all_live_rejected(self):
        preds = ps((0.1, LIVE), (0.2, LIVE))
        assert bpcer(preds, 0.5) == 1.0

    def test_no_live_records_undefined(self):
        with pytest.raises(UndefinedMetricError, match="bpcer"):
            bpcer(ps((0.1, SPOOF)), 0.5)


class TestAcer:
    def test_table_values(self):
        # validation rows of the unfreezing ablation
        assert acer(0.6318, 0.0) == pytest.approx(0.3159, abs=1e-4)
        assert acer(0.4334, 0.0769) == pytest.approx(0.2552, abs=1e-4)

    def test_zero(self):
        assert acer(0.0, 0.0) == 0.0


class TestWorstCaseApcer:
    def test_max_over_types(self):
        preds = ps(
            (0.1, SPOOF, "print"),
            (0.1, SPOOF, "print"),
            (0.1, SPOOF, "replay"),
            (0.1, SPOOF, "replay"),
            (0.1, SPOOF, "replay"),
            (0.9, SPOOF, "replay"),
        )
        assert per_attack_apcer(preds, 0.5) == {"print": 0.0, "replay": 0.25}
        assert apcer_worst_case(preds, 0.5) == 0.25

    def test_single_type_equals_apcer(self):
        preds = ps((0.1, SPOOF, "print"), (0.9, SPOOF, "print"))
        assert apcer_worst_case(preds, 0.5) == apcer(preds, 0.5)

    def test_all_perfect(self):
        preds = ps((0.1, SPOOF, "print"), (0.2, SPOOF, "replay"))
        assert apcer_worst_case(preds, 0.5) == 0.0

    def test_untagged_spoof_rejected(self):
        preds = ps((0.1, SPOOF, "print"), (0.1, SPOOF))
        with pytest.raises(UndefinedMetricError, match="attack_type"):
            apcer_worst_case(preds, 0.5)


class TestAcc:
    def test_all_correct(self):
        assert acc(ps((0.9, LIVE), (0.1, SPOOF)), 0.5) == 1.0

    def test_all_wrong(self):
        assert acc(ps((0.1, LIVE), (0.9, SPOOF)), 0.5) == 0.0

    def test_three_of_four(self):
        assert acc(ps((0.9, LIVE), (0.1, SPOOF), (0.1, SPOOF), (0.9, SPOOF)), 0.5) == 0.75


class TestAuc:
    def test_perfect_separation(self):
        preds = ps((0.9, LIVE), (0.8, LIVE), (0.2, SPOOF), (0.1, SPOOF))
        assert auc(preds) == 1.0

    def test_all_ties(self):
        preds = ps((0.5, LIVE), (0.5, LIVE), (0.5, SPOOF))
        assert auc(preds) == 0.5

    def test_three_of_four_pairs(self):
        preds = ps((0.9, LIVE), (0.4, LIVE), (0.6, SPOOF), (0.1, SPOOF))
        assert auc(preds) == 0.75

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError, match="auc"):
            auc(ps((0.9, LIVE)))

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            preds = random_prediction_set(rng, 8)
            cubed = PredictionSet(
                [PredRecord(r.score**3, r.label, r.attack_type) for r in preds.records]
            )
            assert auc(cubed) == pytest.approx(auc(preds), abs=1e-12)


class TestEer:
    def test_perfectly_separable(self):
        rate, _ = eer(ps((0.9, LIVE), (0.8, LIVE), (0.2, SPOOF), (0.1, SPOOF)))
        assert rate == 0.0

    def test_indistinguishable(self):
        rate, _ = eer(ps((0.8, LIVE), (0.8, SPOOF)))
        assert rate == 0.5

    def test_uniform_random_near_half(self):
        rng = np.random.default_rng(42)
        records = [PredRecord(float(s), LIVE) for s in rng.random(1000)]
        records += [PredRecord(float(s), SPOOF) for s in rng.random(1000)]
        rate, _ = eer(PredictionSet(records))
        assert abs(rate - 0.5) < 0.05

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError, match="eer"):
            eer(ps((0.1, SPOOF)))

    @staticmethod
    def _operating_points(preds):
        live = sorted(preds.live_scores())
        spoof = sorted(preds.spoof_scores())
        points = []
        for t in sorted(set(live) | set(spoof)):
            far = sum(1 for s in spoof if s >= t) / len(spoof)
            frr = sum(1 for s in live if s < t) / len(live)
            points.append((far, frr))
        return points

    def test_label_swap_symmetry(self):
        # The lower-threshold tie rule picks a side when min|FAR-FRR| is
        # attained twice (straddling zero), so the EER value is only
        # swap-invariant when the minimizer is unique; min|FAR-FRR| and the
        # swapped operating-point multiset are invariant unconditionally.
        rng = np.random.default_rng(11)
        checked = 0
        for _ in range(200):
            preds = random_prediction_set(rng, int(rng.integers(2, 9)))
            flipped = PredictionSet(
                [
                    PredRecord(
                        round(1.0 - r.score, 12),
                        LIVE if r.label == SPOOF else SPOOF,
                        r.attack_type,
                    )
                    for r in preds.records
                ]
            )
            # close both curves with the all-spoof endpoint so the swept
            # operating points become exact swaps of each other
            fwd = self._operating_points(preds) + [(0.0, 1.0)]
            rev = self._operating_points(flipped) + [(0.0, 1.0)]
            assert sorted((b, a) for a, b in rev) == sorted(fwd)
            gaps = sorted(abs(a - b) for a, b in fwd)
            assert min(abs(a - b) for a, b in rev) == pytest.approx(gaps[0], abs=1e-12)
            unique_min = len(gaps) == 1 or gaps[1] > gaps[0] + 1e-12
            if unique_min:
                assert eer(flipped)[0] == pytest.approx(eer(preds)[0], abs=1e-12)
                checked += 1
        assert checked > 50


class TestThresholdMonotonicity:
    # With spoof-iff-below on live-probabilities, a higher threshold flags
    # more records spoof: APCER can only fall, BPCER can only rise.
    def test_apcer_down_bpcer_up(self):
        rng = np.random.default_rng(3)
        preds = random_prediction_set(rng, 8)
        grid = np.linspace(0.0, 1.0, 21)
        apcers = [apcer(preds, t) for t in grid]
        bpcers = [bpcer(preds, t) for t in grid]
        assert all(a2 <= a1 for a1, a2 in zip(apcers, apcers[1:]))
        assert all(b2 >= b1 for b1, b2 in zip(bpcers, bpcers[1:]))


class TestOracleEquivalence:
    """Spot version of the exhaustive acceptance sweep (sizes 2..8, 40 sets each)."""

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1234)
        for size in range(2, 9):
            for _ in range(40):
                preds = random_prediction_set(rng, size)
                recs = preds.records
                for t in (0.35, 0.5, 0.75):
                    assert apcer(preds, t) == pytest.approx(bf_apcer(recs, t), abs=1e-12)
                    assert bpcer(preds, t) == pytest.approx(bf_bpcer(recs, t), abs=1e-12)
                    assert acc(preds, t) == pytest.approx(bf_acc(recs, t), abs=1e-12)
                    assert apcer_worst_case(preds, t) == pytest.approx(
                        bf_apcer_worst(recs, t), abs=1e-12
                    )
                    assert per_attack_apcer(preds, t) == pytest.approx(
                        bf_per_attack_apcer(recs, t), abs=1e-12
                    )
                assert auc(preds) == pytest.approx(bf_auc(recs), abs=1e-12)
                rate, thr = eer(preds)
                bf_rate, bf_thr = bf_eer(recs)
                assert rate == pytest.approx(bf_rate, abs=1e-12)
                assert thr == pytest.approx(bf_thr, abs=1e-12)


class TestFullReport:
    def test_acer_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            preds = random_prediction_set(rng, 8)
            rep = full_report(preds, 0.5)
            assert rep.acer == pytest.approx((rep.apcer + rep.bpcer) / 2.0, abs=1e-15)
            assert rep.apcer_worst >= rep.apcer - 1e-15

    def test_worst_case_flag_changes_headline(self):
        preds = ps(
            (0.9, SPOOF, "print"),
            (0.1, SPOOF, "replay"),
            (0.1, SPOOF, "replay"),
            (0.1, SPOOF, "replay"),
            (0.9, LIVE, "Live"),
        )
        plain = full_report(preds, 0.5)
        worst = full_report(preds, 0.5, worst_case=True)
        assert plain.apcer == 0.25
        assert worst.apcer == 1.0
        assert worst.acer == pytest.approx((1.0 + plain.bpcer) / 2.0)

    def test_empty_spoof_set_names_apcer(self):
        with pytest.raises(UndefinedMetricError, match="apcer"):
            full_report(ps((0.9, LIVE)), 0.5)

    def test_untagged_records_give_na_worst(self):
        preds = ps((0.1, SPOOF), (0.9, LIVE))
        rep = full_report(preds, 0.5)
        assert rep.apcer_worst is None
        assert "n/a" in rep.to_text()

    def test_mixed_eight_record_set_matches_oracle(self):
        preds = ps(
            (0.9, LIVE, "Live"),
            (0.6, LIVE, "Live"),
            (0.4, LIVE, "Live"),
            (0.5, SPOOF, "print"),
            (0.3, SPOOF, "print"),
            (0.2, SPOOF, "replay"),
            (0.8, SPOOF, "replay"),
            (0.1, SPOOF, "replay"),
        )
        rep = full_report(preds, 0.5)
        recs = preds.records
        assert rep.apcer == pytest.approx(bf_apcer(recs, 0.5), abs=1e-12)
        assert rep.bpcer == pytest.approx(bf_bpcer(recs, 0.5), abs=1e-12)
        assert rep.apcer_worst == pytest.approx(bf_apcer_worst(recs, 0.5), abs=1e-12)
        assert rep.acc == pytest.approx(bf_acc(recs, 0.5), abs=1e-12)
        assert rep.auc == pytest.approx(bf_auc(recs), abs=1e-12)
        assert rep.eer == pytest.approx(bf_eer(recs)[0], abs=1e-12)


@given(
    st.lists(
        st.tuples(
            st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
            st.sampled_from([LIVE, SPOOF]),
        ),
        min_size=2,
        max_size=30,
    )
)
@settings(max_examples=200, deadline=None)
def test_rates_always_in_unit_interval(pairs):
    records = [
        PredRecord(s, lab, "Live" if lab == LIVE else "print") for s, lab in pairs
    ]
    preds = PredictionSet(records)
    has_live = any(r.label == LIVE for r in records)
    has_spoof = any(r.label == SPOOF for r in records)
    if not (has_live and has_spoof):
        return
    rep = full_report(preds, 0.5)
    for value in (rep.apcer, rep.apcer_worst, rep.bpcer, rep.acer, rep.auc, rep.acc, rep.eer):
        assert 0.0 <= value <= 1.0
    assert rep.acer == pytest.approx((rep.apcer + rep.bpcer) / 2.0, abs=1e-15)


class TestScoreFile:
    def test_round_trip(self, tmp_path):
        preds = ps((0.25, SPOOF, "print"), (0.875, LIVE, "Live"), (0.5, SPOOF))
        path = tmp_path / "scores.txt"
        save_scores(path, preds, ids=["a", "b", "c"])
        loaded, ids = load_scores(path)
        assert ids == ["a", "b", "c"]
        assert loaded.records == preds.records

    def test_report_text_fields(self):
        preds = ps((0.9, LIVE, "Live"), (0.1, SPOOF, "print"))
        text = full_report(preds, 0.5).to_text()
        for name in ("apcer", "bpcer", "acer", "auc", "acc", "eer", "threshold"):
            assert name in text
