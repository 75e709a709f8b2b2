import numpy as np
import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings
from hypothesis import strategies as st

from toftrees.inference import (
    BlendPlan,
    binarize,
    blend_windows,
    gaussian_weights,
    predict_scene,
    select_threshold,
    threshold_candidates,
    window_offsets,
    youden_j,
)
from toftrees.raster import TimeSeriesStack, default_timestamps


class ConstantModel(nn.Module):
    """Emits a fixed probability for every pixel of every window."""

    def __init__(self, value: float):
        super().__init__()
        self.value = value
        self.anchor = nn.Parameter(torch.zeros(1, dtype=torch.float64))

    def forward(self, x, mode):
        return torch.full(x.shape[:1] + x.shape[-2:], self.value, dtype=torch.float64)


class CornerModel(nn.Module):
    """Probability depends on window content, so blending has real work."""

    def __init__(self):
        super().__init__()
        self.anchor = nn.Parameter(torch.zeros(1, dtype=torch.float64))

    def forward(self, x, mode):
        return torch.sigmoid(x[:, 0, 0].double() * 3.0 - 1.0)


def make_stack(h=28, w=28, seed=0):
    rng = np.random.default_rng(seed)
    data = rng.uniform(0, 1, (24, h, w, 16)).astype(np.float32)
    data[..., 15] = 0.2
    return TimeSeriesStack(data, default_timestamps())


class TestBlendGeometry:
    def test_offsets_cover_scene(self):
        offs = window_offsets(30)
        assert offs[0] == 0 and offs[-1] == 30 - 14
        assert all(b - a <= 7 for a, b in zip(offs, offs[1:]))

    def test_scene_smaller_than_window_rejected(self):
        with pytest.raises(ValueError):
            window_offsets(13)

    def test_gaussian_weights_shape_and_symmetry(self):
        w = gaussian_weights()
        assert w.shape == (14, 14)
        assert np.allclose(w, w.T)
        assert np.allclose(w, w[::-1, ::-1])
        assert w.max() <= 1.0 and w.min() > 0.0

    def test_normalizer_positive_everywhere(self):
        plan = BlendPlan()
        h = w = 35
        den = np.zeros((h, w))
        for r, c in plan.offsets(h, w):
            den[r : r + 14, c : c + 14] += plan.weights
        assert (den > 0).all()


class TestPredictScene:
    def test_constant_model_blends_exactly(self):
        grid = predict_scene(make_stack(), ConstantModel(0.7))
        assert np.all(grid.probs == 0.7)

    def test_single_window_equals_raw_forward(self):
        stack = make_stack(14, 14)
        model = CornerModel()
        grid = predict_scene(stack, model)
        x = torch.as_tensor(np.transpose(stack.data, (0, 3, 1, 2)).copy()).unsqueeze(0)
        with torch.no_grad():
            raw = model(x, None)[0].numpy()
        assert np.allclose(grid.probs, raw, atol=1e-12)

    def test_matches_brute_force_weighted_average(self):
        stack = make_stack(28, 28, seed=3)
        model = CornerModel()
        grid = predict_scene(stack, model)

        plan = BlendPlan()
        full = torch.as_tensor(np.transpose(stack.data, (0, 3, 1, 2)).copy())
        num = np.zeros((28, 28))
        den = np.zeros((28, 28))
        with torch.no_grad():
            for r, c in plan.offsets(28, 28):
                tile = full[:, :, r : r + 14, c : c + 14].unsqueeze(0)
                p = model(tile, None)[0].numpy()
                num[r : r + 14, c : c + 14] += plan.weights * p
                den[r : r + 14, c : c + 14] += plan.weights
        assert np.abs(grid.probs - num / den).max() <= 1e-6

    def test_too_small_scene_rejected(self):
        with pytest.raises(ValueError):
            predict_scene(make_stack(10, 10), ConstantModel(0.5))

    def test_monotone_in_window_probabilities(self):
        plan = BlendPlan()
        offsets = plan.offsets(21, 21)
        rng = np.random.default_rng(1)
        lo = {o: rng.uniform(0.1, 0.5, (14, 14)) for o in offsets}
        hi = {o: lo[o] + rng.uniform(0.0, 0.4, (14, 14)) for o in offsets}
        blended_lo = blend_windows(lo, 21, 21, plan)
        blended_hi = blend_windows(hi, 21, 21, plan)
        assert (blended_hi >= blended_lo - 1e-15).all()

    def test_translation_consistency_for_constant_content(self):
        # Constant scene content: blended output is flat regardless of the
        # tiling pattern implied by the scene size.
        for size in (28, 31, 35):
            data = np.full((24, size, size, 16), 0.3, dtype=np.float32)
            stack = TimeSeriesStack(data, default_timestamps())
            grid = predict_scene(stack, CornerModel())
            assert np.allclose(grid.probs, grid.probs[0, 0], atol=1e-12)


class TestThreshold:
    def test_perfect_separation_midpoint(self):
        probs = np.array([0.1] * 50 + [0.9] * 50)
        labels = np.array([0] * 50 + [1] * 50)
        assert select_threshold(probs, labels) == pytest.approx(0.5)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            select_threshold(np.array([0.2, 0.8]), np.array([1, 1]))

    @given(st.integers(min_value=0, max_value=2 ** 31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_matches_exhaustive_scan(self, seed):
        rng = np.random.default_rng(seed)
        probs = rng.uniform(0, 1, 200)
        labels = (rng.uniform(size=200) < 0.4).astype(int)
        if labels.min() == labels.max():
            return
        t = select_threshold(probs, labels)
        pos = labels > 0
        best = max(youden_j(probs, pos, c) for c in threshold_candidates(probs))
        assert youden_j(probs, pos, t) == pytest.approx(best, abs=1e-12)

    def test_tie_broken_toward_half(self):
        # J is maximized on a plateau; the candidate nearest 0.5 must win.
        probs = np.array([0.2, 0.2, 0.8, 0.8])
        labels = np.array([0, 0, 1, 1])
        assert select_threshold(probs, labels) == pytest.approx(0.5)


class TestBinarize:
    def test_at_threshold_is_positive(self):
        grid = binarize(np.array([[0.5]]), 0.5)
        assert grid.values[0, 0] == 1

    def test_extreme_threshold_maps_everything_below_one_to_zero(self):
        probs = np.array([[0.1, 0.999999, 1.0]])
        out = binarize(probs, 1 - 1e-9).values
        assert list(out[0]) == [0, 0, 1]

    def test_ordering(self):
        grid = binarize(np.array([[0.4, 0.6]]), 0.5)
        assert list(grid.values[0]) == [0, 1]

    def test_invalid_threshold_rejected(self):
        with pytest.raises(ValueError):
            binarize(np.array([[0.5]]), 0.0)
        with pytest.raises(ValueError):
            binarize(np.array([[0.5]]), 1.0)
