"""評価指標と t 検定のテスト."""

import math

import numpy as np
import pytest
from scipy import stats
from sklearn.metrics import accuracy_score, precision_recall_fscore_support

from src.metrics.evaluation import ConfusionMatrix, MetricReport, confusion, dsc, metrics, paired_t_test


def test_dsc_cases():
    a = np.array([[1, 1], [0, 0]])
    b = np.array([[1, 0], [0, 0]])
    assert dsc(a, a) == 1.0
    assert dsc(a, b) == pytest.approx(2 / 3)
    assert dsc(a, 1 - a) == 0.0
    assert dsc(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0
    with pytest.raises(ValueError):
        dsc(a, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        dsc(a * 2, a)


def _brute_force(preds, gts, n_cls=3):
    counts = np.zeros((n_cls, n_cls), dtype=int)
    for p, g in zip(preds, gts, strict=True):
        counts[g, p] += 1
    return counts


@pytest.mark.parametrize("seed", range(5))
def test_metrics_agree_with_reference_implementations(seed):
    rng = np.random.default_rng(seed)
    gts = rng.integers(0, 3, size=40)
    preds = np.where(rng.random(40) < 0.6, gts, rng.integers(0, 3, size=40))

    cm = confusion(preds.tolist(), gts.tolist())
    np.testing.assert_array_equal(cm.counts, _brute_force(preds, gts))

    report = metrics(cm)
    p, r, f, _ = precision_recall_fscore_support(gts, preds, labels=[0, 1, 2], average=None, zero_division=0)
    assert report.acc == pytest.approx(accuracy_score(gts, preds))
    np.testing.assert_allclose(report.precision, p)
    np.testing.assert_allclose(report.recall, r)
    np.testing.assert_allclose(report.f1, f)
    assert report.f1_macro == pytest.approx(f.mean())


def test_undefined_entries_are_flagged():
    # クラス III は予測も正解も無い
    cm = confusion([0, 1, 1], [0, 1, 0])
    report = metrics(cm)
    assert report.undefined_precision == (False, False, True)
    assert report.undefined_recall == (False, False, True)
    assert report.undefined_f1 == (False, False, True)
    assert report.precision[2] == 0.0
    assert report.precision_macro == pytest.approx((1.0 + 0.5 + 0.0) / 3)


def test_empty_confusion_matrix_rejected():
    cm = confusion([], [])
    assert cm.total == 0
    with pytest.raises(ValueError):
        metrics(cm)
    with pytest.raises(ValueError):
        confusion([0, 1], [0])


def test_confusion_matrix_validation_and_sum():
    with pytest.raises(ValueError):
        ConfusionMatrix(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ConfusionMatrix(-np.eye(3))
    total = ConfusionMatrix(np.eye(3)) + ConfusionMatrix(np.eye(3))
    assert total == ConfusionMatrix(2 * np.eye(3))


def test_confusion_matrix_csv_round_trip(tmp_path):
    cm = confusion([0, 1, 2, 2, 1], [0, 2, 2, 1, 1])
    cm.save_csv(tmp_path / "cm.csv")
    assert ConfusionMatrix.load_csv(tmp_path / "cm.csv") == cm
    assert "true_I" in (tmp_path / "cm.csv").read_text()


def test_metric_report_dict_round_trip():
    report = metrics(confusion([0, 1, 2, 0], [0, 1, 1, 0]))
    assert MetricReport.from_dict(report.to_dict()) == report


def test_paired_t_test_matches_scipy():
    a = [0.8, 0.82, 0.79, 0.85, 0.81]
    b = [0.75, 0.8, 0.7, 0.8, 0.77]
    result = paired_t_test(a, b)
    expected = stats.ttest_rel(a, b)
    assert result.t == pytest.approx(expected.statistic)
    assert result.p == pytest.approx(expected.pvalue)
    assert result.n == 5
    assert not result.degenerate


def test_paired_t_test_degenerate_cases():
    same = paired_t_test([0.5, 0.6, 0.7], [0.5, 0.6, 0.7])
    assert (same.p, same.t, same.degenerate) == (1.0, 0.0, True)

    shifted = paired_t_test([1.5, 2.5, 3.5], [1.0, 2.0, 3.0])
    assert shifted.degenerate
    assert shifted.p == 0.0
    assert shifted.t == math.inf
    assert shifted.mean_diff == 0.5


def test_paired_t_test_validation():
    with pytest.raises(ValueError):
        paired_t_test([1.0], [2.0])
    with pytest.raises(ValueError):
        paired_t_test([1.0, 2.0], [1.0, 2.0, 3.0])


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def test_metrics_match_per_sample_oracle_on_many_random_sets():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(1, 25))
        gts = rng.integers(0, 3, size=n).tolist()
        preds = rng.integers(0, 3, size=n).tolist()
        report = metrics(confusion(preds, gts))

        assert report.acc == pytest.approx(sum(p == g for p, g in zip(preds, gts)) / n)
        for c in range(3):
            tp = sum(p == c and g == c for p, g in zip(preds, gts))
            fp = sum(p == c and g != c for p, g in zip(preds, gts))
            fn = sum(p != c and g == c for p, g in zip(preds, gts))
            precision, recall = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
            assert report.precision[c] == pytest.approx(precision)
            assert report.recall[c] == pytest.approx(recall)
            assert report.f1[c] == pytest.approx(_ratio(2 * tp, 2 * tp + fp + fn))

        pred_mask = rng.integers(0, 2, size=(4, 4))
        gt_mask = rng.integers(0, 2, size=(4, 4))
        overlap = sum(int(a and b) for a, b in zip(pred_mask.ravel(), gt_mask.ravel()))
        total = int(pred_mask.sum() + gt_mask.sum())
        assert dsc(pred_mask, gt_mask) == pytest.approx(2 * overlap / total if total else 1.0)
