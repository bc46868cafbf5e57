import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ieegpredict.evalkit import SingleClassError, average, confusion, evaluate, roc_auc


def pair_count_auc(scores, labels):
    """Mann-Whitney by enumerating every positive/negative pair; ties count 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


scored_sets = st.lists(st.tuples(st.integers(0, 20), st.integers(0, 1)), min_size=2, max_size=60).filter(
    lambda xs: 0 < sum(y for _, y in xs) < len(xs)
)


class TestConfusion:
    def test_all_detected(self):
        c = confusion([1.0, 1.0, 1.0], [1, 1, 1])
        assert c.sensitivity == 1.0

    def test_all_zero(self):
        c = confusion([0.0] * 4, [1, 0, 1, 0])
        assert c.sensitivity == 0.0 and c.specificity == 1.0

    def test_hand_counted_six(self):
        # 0.9/1 TP, 0.5/1 TP (>= threshold), 0.2/1 FN, 0.7/0 FP, 0.49/0 TN, 0.1/0 TN
        preds = [(0.9, 1), (0.5, 1), (0.2, 1), (0.7, 0), (0.49, 0), (0.1, 0)]
        c = confusion(preds, threshold=0.5)
        assert (c.tp, c.fp, c.tn, c.fn) == (2, 1, 2, 1)
        assert c.sensitivity == pytest.approx(2 / 3) and c.specificity == pytest.approx(2 / 3)

    def test_threshold_zero(self, rng):
        c = confusion(rng.random(30), np.r_[np.ones(15), np.zeros(15)].astype(int), threshold=0.0)
        assert c.sensitivity == 1.0 and c.specificity == 0.0

    @settings(max_examples=50, deadline=None)
    @given(scored_sets, st.floats(0, 1))
    def test_partition(self, preds, t):
        c = confusion([(s / 20, y) for s, y in preds], threshold=t)
        assert c.tp + c.fp + c.tn + c.fn == len(preds)

    @pytest.mark.parametrize("bad", [([], []), ([1.5], [1]), ([0.5], [2])])
    def test_errors(self, bad):
        with pytest.raises(ValueError):
            confusion(*bad)


class TestRoc:
    def test_separated(self):
        r = roc_auc([0.9, 0.8, 0.3, 0.1, 0.2], [1, 1, 0, 0, 0])
        assert r.auc == 1.0

    def test_all_tied(self):
        assert roc_auc([0.4] * 6, [1, 0, 1, 0, 0, 1]).auc == 0.5

    def test_pair_counting_oracle(self):
        g = np.random.default_rng(200)
        scores = np.round(g.random(200), 2)  # rounding creates ties
        labels = (g.random(200) < 0.3).astype(int)
        assert abs(roc_auc(scores, labels).auc - pair_count_auc(scores, labels)) <= 1e-12

    @settings(max_examples=60, deadline=None)
    @given(scored_sets)
    def test_pair_counting_property(self, preds):
        s = [p for p, _ in preds]
        y = [l for _, l in preds]
        assert roc_auc(s, y).auc == pytest.approx(pair_count_auc(s, y), abs=1e-12)

    def test_curve_shape(self, rng):
        r = roc_auc(rng.random(50), (rng.random(50) < 0.5).astype(int))
        assert r.points()[0] == (0.0, 0.0) and r.points()[-1] == (1.0, 1.0)
        assert np.all(np.diff(r.fpr) >= 0) and np.all(np.diff(r.tpr) >= 0)

    @settings(max_examples=40, deadline=None)
    @given(scored_sets)
    def test_monotone_invariance(self, preds):
        s = np.array([p for p, _ in preds], float)
        y = [l for _, l in preds]
        assert roc_auc(np.exp(s / 3) - 7, y).auc == roc_auc(s, y).auc

    @settings(max_examples=40, deadline=None)
    @given(scored_sets)
    def test_label_flip(self, preds):
        s = np.array([p / 20 for p, _ in preds])
        y = np.array([l for _, l in preds])
        assert roc_auc(1 - s, 1 - y).auc == pytest.approx(roc_auc(s, y).auc, abs=1e-12)

    def test_single_class(self):
        with pytest.raises(SingleClassError):
            roc_auc([0.1, 0.9], [1, 1])


class TestReport:
    def test_single_patient(self):
        rep = evaluate({"P1": [(0.9, 1), (0.2, 0), (0.6, 0), (0.4, 1)]})
        assert rep.average_auc == rep.per_patient[0].auc == 0.75

    def test_three_patient_auc_average(self):
        assert average([0.692, 0.891, 0.938]) == pytest.approx(0.8403, abs=1e-4)
        assert round(average([0.692, 0.891, 0.938]), 3) == 0.840

    def test_three_patient_sensitivity_average(self):
        assert round(average([79.65, 91.86, 92.05]), 2) == 87.85

    def test_unweighted_mean(self):
        rep = evaluate({
            "A": [(0.9, 1), (0.1, 0)],
            "B": [(0.9, 1)] * 1 + [(0.6, 1)] * 9 + [(0.1, 0)] * 30,
        })
        assert rep.average_sensitivity == pytest.approx(1.0)
        assert rep.average_auc == 1.0

    def test_json(self):
        doc = evaluate({"P1": [(0.9, 1), (0.2, 0)]}, threshold=0.3).to_json()
        assert doc["threshold"] == 0.3
        assert doc["per_patient"][0]["roc_points"][0] == [0.0, 0.0]

    def test_no_patients(self):
        with pytest.raises(ValueError):
            evaluate({})
