import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from toftrees.objective import (
    LossTerms,
    alpha_schedule,
    boundary_loss,
    class_weights,
    clipped_ce,
    combined_loss,
    signed_distance_map,
    smoothed_weighted_ce,
)


class TestAlphaSchedule:
    def test_zero_epoch(self):
        assert alpha_schedule(0) == 0.0

    def test_linear_region(self):
        assert alpha_schedule(30) == pytest.approx(0.30)

    def test_cap(self):
        assert alpha_schedule(75) == 0.5
        assert alpha_schedule(50) == 0.5

    def test_negative_epoch_rejected(self):
        with pytest.raises(ValueError):
            alpha_schedule(-1)

    def test_monotone_nondecreasing(self):
        values = [alpha_schedule(e) for e in range(120)]
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert max(values) == 0.5


class TestClassWeights:
    def test_effective_number_evaluation(self):
        w0, w1 = class_weights((900, 100))
        assert w0 == pytest.approx(0.2764, abs=5e-4)
        assert w1 == pytest.approx(1.7236, abs=5e-4)
        assert (w0 + w1) / 2 == pytest.approx(1.0)

    def test_equal_counts_give_unit_weights(self):
        assert class_weights((500, 500)) == (1.0, 1.0)

    def test_beta_zero_limit(self):
        assert class_weights((900, 100), beta=0.0) == (1.0, 1.0)

    def test_both_zero_rejected(self):
        with pytest.raises(ValueError):
            class_weights((0, 0))

    def test_single_empty_class_is_neutral(self):
        w0, w1 = class_weights((100, 0))
        assert w0 == 1.0 and w1 == 1.0


class TestDistanceMap:
    def test_center_positive_three_by_three(self):
        y = np.zeros((3, 3), dtype=int)
        y[1, 1] = 1
        phi = signed_distance_map(y)
        # brute force over all 9 pixels
        pos = [(1, 1)]
        neg = [(r, c) for r in range(3) for c in range(3) if (r, c) != (1, 1)]
        for r in range(3):
            for c in range(3):
                if y[r, c]:
                    expected = -min(math.hypot(r - rr, c - cc) for rr, cc in neg)
                else:
                    expected = min(math.hypot(r - rr, c - cc) for rr, cc in pos)
                assert phi[r, c] == pytest.approx(expected)

    def test_degenerate_labels(self):
        assert np.all(signed_distance_map(np.zeros((4, 4), dtype=int)) == 1.0)
        assert np.all(signed_distance_map(np.ones((4, 4), dtype=int)) == -1.0)

    @given(st.integers(min_value=0, max_value=2 ** 31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_sign_consistent_with_membership(self, seed):
        rng = np.random.default_rng(seed)
        y = (rng.uniform(size=(14, 14)) < 0.3).astype(int)
        if y.min() == y.max():
            return
        phi = signed_distance_map(y)
        assert (phi[y == 1] < 0).all()
        assert (phi[y == 0] > 0).all()


class TestSmoothedCE:
    def test_minimum_at_smoothed_target(self):
        p = torch.tensor([[0.95]], dtype=torch.float64)
        y = np.array([[1]])
        ce = smoothed_weighted_ce(p, y, (1.0, 1.0))
        expected = -(0.95 * math.log(0.95) + 0.05 * math.log(0.05))
        assert float(ce) == pytest.approx(expected, rel=1e-9)
        assert float(ce) == pytest.approx(0.1985, abs=5e-4)

    def test_smoothing_symmetry(self):
        a = smoothed_weighted_ce(
            torch.tensor([[0.05]], dtype=torch.float64), np.array([[1]]), (1.0, 1.0)
        )
        b = smoothed_weighted_ce(
            torch.tensor([[0.95]], dtype=torch.float64), np.array([[0]]), (1.0, 1.0)
        )
        assert float(a) == pytest.approx(float(b), rel=1e-9)

    def test_linear_in_weights(self):
        p = torch.tensor([[0.3, 0.8]]).double()
        y = np.array([[0, 1]])
        one = smoothed_weighted_ce(p, y, (1.0, 1.0))
        two = smoothed_weighted_ce(p, y, (2.0, 2.0))
        assert float(two) == pytest.approx(2 * float(one), rel=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            smoothed_weighted_ce(torch.zeros(2, 2).double(), np.zeros((3, 3)), (1, 1))

    @given(st.integers(min_value=0, max_value=2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_moving_toward_smoothed_target_never_increases(self, seed):
        rng = np.random.default_rng(seed)
        y = (rng.uniform(size=(6, 6)) < 0.4).astype(int)
        if y.min() == y.max():
            return
        p = rng.uniform(0.01, 0.99, size=(6, 6))
        target = y * 0.9 + 0.05
        stepped = p + 0.25 * (target - p)
        before = float(smoothed_weighted_ce(torch.tensor(p), y, (1.0, 1.0)))
        after = float(smoothed_weighted_ce(torch.tensor(stepped), y, (1.0, 1.0)))
        assert after <= before + 1e-12

    def test_clipped_variant_flat_outside_band(self):
        y = np.array([[1]])
        low = clipped_ce(torch.tensor([[0.05]]).double(), y)
        lower = clipped_ce(torch.tensor([[0.01]]).double(), y)
        assert float(low) == pytest.approx(float(lower))


class TestBoundaryLoss:
    def test_zero_predictions_zero_loss(self):
        y = np.zeros((5, 5), dtype=int)
        y[2, 2] = 1
        assert float(boundary_loss(torch.zeros(5, 5).double(), y)) == 0.0

    def test_all_one_degenerate(self):
        y = np.ones((4, 4), dtype=int)
        assert float(boundary_loss(torch.ones(4, 4).double(), y)) == pytest.approx(-1.0)

    def test_center_positive_brute_force(self):
        y = np.zeros((3, 3), dtype=int)
        y[1, 1] = 1
        p = torch.zeros(3, 3, dtype=torch.float64)
        p[1, 1] = 1.0
        bl = float(boundary_loss(p, y))
        assert bl < 0
        assert bl == pytest.approx(-1.0 / 9.0)

    @given(st.integers(min_value=0, max_value=2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_linear_in_probability_mass(self, seed):
        rng = np.random.default_rng(seed)
        y = (rng.uniform(size=(8, 8)) < 0.3).astype(int)
        if y.min() == y.max():
            return
        phi = signed_distance_map(y)
        p = rng.uniform(0, 1, size=(8, 8))
        neg_site = tuple(np.argwhere(phi < 0)[0])
        pos_site = tuple(np.argwhere(phi > 0)[0])
        p_better = p.copy()
        delta = min(p_better[pos_site], 1.0 - p_better[neg_site])
        p_better[pos_site] -= delta
        p_better[neg_site] += delta
        before = float(boundary_loss(torch.tensor(p), y))
        after = float(boundary_loss(torch.tensor(p_better), y))
        assert after <= before + 1e-12


class TestCombinedLoss:
    def test_epoch_zero_is_pure_ce(self):
        rng = np.random.default_rng(0)
        y = (rng.uniform(size=(6, 6)) < 0.3).astype(int)
        p = torch.tensor(rng.uniform(0.01, 0.99, (6, 6)))
        terms = combined_loss(p, y, epoch=0, weights=(1.0, 1.0))
        assert isinstance(terms, LossTerms)
        assert float(terms.total) == pytest.approx(float(terms.ce), rel=1e-12)
        assert terms.alpha == 0.0

    def test_cap_epoch_even_split(self):
        rng = np.random.default_rng(1)
        y = (rng.uniform(size=(6, 6)) < 0.3).astype(int)
        p = torch.tensor(rng.uniform(0.01, 0.99, (6, 6)))
        terms = combined_loss(p, y, epoch=80, weights=(1.0, 1.0))
        assert terms.alpha == 0.5
        expected = 0.5 * float(terms.ce) + 0.5 * float(terms.bl)
        assert float(terms.total) == pytest.approx(expected, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        y = (rng.uniform(size=(5, 5)) < 0.4).astype(int)
        p0 = rng.uniform(0.05, 0.95, (5, 5))
        p = torch.tensor(p0, requires_grad=True)
        terms = combined_loss(p, y, epoch=30, weights=(0.8, 1.6))
        terms.total.backward()
        grad = p.grad.numpy()

        def value(arr):
            return float(combined_loss(torch.tensor(arr), y, 30, (0.8, 1.6)).total)

        h = 1e-7
        for r in range(5):
            for c in range(5):
                plus, minus = p0.copy(), p0.copy()
                plus[r, c] += h
                minus[r, c] -= h
                fd = (value(plus) - value(minus)) / (2 * h)
                rel = abs(fd - grad[r, c]) / max(abs(fd), abs(grad[r, c]), 1e-12)
                assert rel <= 1e-6

    def test_batched_inputs(self):
        rng = np.random.default_rng(3)
        y = (rng.uniform(size=(4, 6, 6)) < 0.3).astype(int)
        p = torch.tensor(rng.uniform(0.01, 0.99, (4, 6, 6)))
        terms = combined_loss(p, y, epoch=10, weights=(1.0, 1.0))
        assert np.isfinite(float(terms.total))
