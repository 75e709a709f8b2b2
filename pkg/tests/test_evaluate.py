import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toftrees.evaluate import (
    ToleranceConfusion,
    bootstrap_ci,
    cover_decile,
    dataset_report,
    overall_accuracy,
    pearson_corr,
    strict_confusion,
    tolerant_confusion,
    tree_cover_stats,
    users_producers,
)


def brute_force_tolerant(y, y_hat):
    """Independent O(n^2) Chebyshev-radius-1 matcher."""
    h, w = y.shape
    tp = fn = fp = 0
    for r in range(h):
        for c in range(w):
            nb = y_hat[max(r - 1, 0) : r + 2, max(c - 1, 0) : c + 2]
            if y[r, c]:
                if nb.max() > 0:
                    tp += 1
                else:
                    fn += 1
            nb_y = y[max(r - 1, 0) : r + 2, max(c - 1, 0) : c + 2]
            if y_hat[r, c] and nb_y.max() == 0:
                fp += 1
    tn = h * w - tp - fn - fp
    return ToleranceConfusion(tp=tp, fp=fp, fn=fn, tn=tn)


class TestTolerantConfusion:
    def test_identity_has_no_errors(self):
        rng = np.random.default_rng(0)
        y = (rng.uniform(size=(14, 14)) < 0.3).astype(int)
        c = tolerant_confusion(y, y)
        assert c.fp == 0 and c.fn == 0
        assert c.tp == y.sum()

    def test_diagonal_neighbor_counts_as_hit(self):
        y = np.zeros((3, 3), dtype=int)
        y_hat = np.zeros((3, 3), dtype=int)
        y[0, 0] = 1
        y_hat[1, 1] = 1
        c = tolerant_confusion(y, y_hat)
        assert (c.tp, c.fp, c.fn) == (1, 0, 0)

    def test_two_pixel_offset_is_miss_and_false_alarm(self):
        y = np.zeros((3, 3), dtype=int)
        y_hat = np.zeros((3, 3), dtype=int)
        y[0, 0] = 1
        y_hat[2, 2] = 1
        c = tolerant_confusion(y, y_hat)
        assert (c.tp, c.fp, c.fn) == (0, 1, 1)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            tolerant_confusion(np.zeros((3, 3), dtype=int), np.zeros((4, 4), dtype=int))

    def test_counts_partition_the_grid(self):
        rng = np.random.default_rng(1)
        y = (rng.uniform(size=(14, 14)) < 0.2).astype(int)
        y_hat = (rng.uniform(size=(14, 14)) < 0.2).astype(int)
        c = tolerant_confusion(y, y_hat)
        assert c.tp + c.fn == y.sum()
        assert c.fp <= y_hat.sum()
        assert c.total == y.size

    @given(st.integers(min_value=0, max_value=2 ** 31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_brute_force_equivalence(self, seed):
        rng = np.random.default_rng(seed)
        density = rng.uniform(0.05, 0.5)
        y = (rng.uniform(size=(14, 14)) < density).astype(int)
        y_hat = (rng.uniform(size=(14, 14)) < density).astype(int)
        assert tolerant_confusion(y, y_hat) == brute_force_tolerant(y, y_hat)

    @given(st.integers(min_value=0, max_value=2 ** 31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_tolerant_dominates_strict(self, seed):
        rng = np.random.default_rng(seed)
        y = (rng.uniform(size=(14, 14)) < 0.3).astype(int)
        y_hat = (rng.uniform(size=(14, 14)) < 0.3).astype(int)
        tol = tolerant_confusion(y, y_hat)
        strict = strict_confusion(y, y_hat)
        t_ua, t_pa = users_producers(tol)
        s_ua, s_pa = users_producers(strict)
        if s_ua is not None and t_ua is not None:
            assert t_ua >= s_ua - 1e-12
        if s_pa is not None and t_pa is not None:
            assert t_pa >= s_pa - 1e-12

    @given(st.integers(min_value=0, max_value=2 ** 31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_swapping_exchanges_fp_and_fn(self, seed):
        rng = np.random.default_rng(seed)
        y = (rng.uniform(size=(10, 10)) < 0.3).astype(int)
        y_hat = (rng.uniform(size=(10, 10)) < 0.3).astype(int)
        a = tolerant_confusion(y, y_hat)
        b = tolerant_confusion(y_hat, y)
        assert a.fp == b.fn and a.fn == b.fp


class TestAccuracies:
    def test_reported_confusion_counts(self):
        c = ToleranceConfusion(tp=74304, fp=3599, fn=4802, tn=133287)
        ua, pa = users_producers(c)
        assert round(ua, 3) == 0.954
        assert round(pa, 3) == 0.939
        assert overall_accuracy(c) == pytest.approx((74304 + 133287) / 215992)

    def test_undefined_ratios_flagged_as_none(self):
        ua, pa = users_producers(ToleranceConfusion(tp=0, fp=0, fn=3, tn=5))
        assert ua is None
        assert pa == 0.0

    def test_perfect_grid(self):
        y = np.zeros((5, 5), dtype=int)
        y[1:3, 1:3] = 1
        ua, pa = users_producers(tolerant_confusion(y, y))
        assert ua == 1.0 and pa == 1.0


class TestPearson:
    def test_perfect_linearity(self):
        assert pearson_corr([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)

    def test_perfect_anticorrelation(self):
        assert pearson_corr([1, 2, 3], [-1, -2, -3]) == pytest.approx(-1.0)

    def test_hand_computed_example(self):
        assert pearson_corr([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)

    def test_zero_variance_flagged(self):
        assert pearson_corr([1, 1, 1], [1, 2, 3]) is None

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            pearson_corr([1], [2])


class TestCoverStats:
    def test_cover_decile_buckets(self):
        assert cover_decile(0.0) == 0
        assert cover_decile(0.25) == 2
        assert cover_decile(1.0) == 9

    def test_identity_predictions_zero_error(self):
        rng = np.random.default_rng(2)
        labels = [(rng.uniform(size=(14, 14)) < rng.uniform(0, 0.8)).astype(int) for _ in range(12)]
        stats = tree_cover_stats(labels, labels, seed=0)
        assert stats["cover_error_mean"] == 0.0
        for row in stats["per_decile"]:
            assert row["abs_cover_error"] == 0.0

    def test_single_plot_error_definition(self):
        label = np.zeros((14, 14), dtype=int)
        label[:7, :] = 1  # cover 0.5
        pred = np.zeros((14, 14), dtype=int)
        pred[: int(0.4 * 14 * 14) // 14, :] = 1
        pred_cover = pred.mean()
        stats = tree_cover_stats([label], [pred], seed=0)
        assert stats["cover_error_mean"] == pytest.approx(abs(pred_cover - 0.5))

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            tree_cover_stats([], [], seed=0)

    def test_bootstrap_ci_contains_mean_and_is_seeded(self):
        values = np.random.default_rng(5).uniform(0, 1, 40)
        lo, hi = bootstrap_ci(values, seed=3)
        assert lo <= values.mean() <= hi
        assert (lo, hi) == bootstrap_ci(values, seed=3)

    def test_dataset_report_keys(self):
        rng = np.random.default_rng(6)
        labels = [(rng.uniform(size=(14, 14)) < 0.3).astype(int) for _ in range(8)]
        preds = [(rng.uniform(size=(14, 14)) < 0.3).astype(int) for _ in range(8)]
        report = dataset_report(labels, preds, seed=1)
        assert set(report) == {"overall", "per_decile", "cover_error", "pearson"}
        assert set(report["overall"]) == {"ua", "pa", "oa"}
        assert set(report["cover_error"]) == {"mean", "ci95"}
