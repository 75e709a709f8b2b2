import numpy as np
import pytest

from toftrees import synth
from toftrees.raster import PLOT_SIZE, TimeSeriesStack
from toftrees.synth import (
    CoverInfeasibleError,
    LogisticBaseline,
    SynthConfig,
    dataset_configs,
    generate_dataset,
    generate_plot,
    generate_raw,
    logistic_baseline,
)


class TestGeneration:
    def test_zero_cover_gives_empty_label(self):
        sample = generate_plot(SynthConfig(seed=1, cover_target=0.0))
        assert sample.label.values.sum() == 0
        assert sample.cover == 0.0

    def test_same_seed_bit_identical(self):
        cfg = SynthConfig(seed=9, cover_target=0.3, cloud_gap_fraction=0.4)
        a = generate_raw(cfg)
        b = generate_raw(cfg)
        assert np.array_equal(a.sample.stack.data, b.sample.stack.data)
        assert np.array_equal(a.sample.label.values, b.sample.label.values)
        assert np.array_equal(a.dem, b.dem)

    def test_cover_statistics_over_seeds(self):
        covers = [generate_plot(SynthConfig(seed=s, cover_target=0.5)).cover for s in range(100)]
        assert 0.4 <= float(np.mean(covers)) <= 0.6

    def test_cover_within_tolerance_of_target(self):
        for seed in range(20):
            sample = generate_plot(SynthConfig(seed=seed, cover_target=0.35))
            assert abs(sample.cover - 0.35) <= 0.1

    def test_stack_satisfies_core_invariants(self):
        plot = generate_raw(SynthConfig(seed=4, cover_target=0.25, cloud_gap_fraction=0.3))
        stack = plot.sample.stack
        assert isinstance(stack, TimeSeriesStack)  # construction enforces range/T/slope
        assert stack.shape == (24, PLOT_SIZE, PLOT_SIZE, 16)
        slope = stack.data[..., 15]
        assert np.all(slope == slope[0])

    def test_label_is_exact_disk_union_fraction(self):
        plot = generate_raw(SynthConfig(seed=5, cover_target=0.3))
        assert plot.sample.cover == plot.sample.label.values.sum() / PLOT_SIZE ** 2

    def test_infeasible_cover_raises(self):
        with pytest.raises(CoverInfeasibleError):
            generate_plot(SynthConfig(seed=0, cover_target=1.0, radius_range=(0.1, 0.2)))

    def test_clouded_acquisitions_are_dropped_by_pipeline(self):
        cfg = SynthConfig(seed=6, cloud_gap_fraction=0.5)
        plot = generate_raw(cfg)
        contaminated = [a for a in plot.acquisitions if a.cloud_mask.mean() > 0.25]
        assert len(contaminated) == round(0.5 * 24)

    def test_dataset_configs_cover_mix(self):
        lows = dataset_configs(20, 1, "low")
        assert all(c.cover_target < 0.2 for c in lows)
        fixed = dataset_configs(5, 1, "0.3-bare")
        assert all(c.cover_target == 0.3 and c.background == "bare" for c in fixed)


class TestReconstruction:
    def test_cloud_gapped_series_reconstructed_within_noise(self):
        sigma = 0.02
        errs = []
        for seed in range(5):
            cfg = SynthConfig(seed=seed, cover_target=0.15, background="grass",
                              cloud_gap_fraction=0.5, noise_sigma=sigma)
            plot = generate_raw(cfg)
            s2 = plot.sample.stack.data[..., :10].astype(np.float64)
            errs.append(np.sqrt(np.mean((s2 - plot.clean_s2) ** 2)))
        assert float(np.mean(errs)) <= sigma + 0.02


class TestLogisticBaseline:
    def _separable_samples(self, n=6):
        # One channel carries the class cleanly: trivial linear separation.
        rng = np.random.default_rng(0)
        samples = []
        for i in range(n):
            base = synth.generate_raw(SynthConfig(seed=i, cover_target=0.3))
            data = np.array(base.sample.stack.data)
            label = np.array(base.sample.label.values)
            data[:, :, :, 0] = np.where(label[None] > 0, 0.9, 0.1)
            data += rng.normal(0, 0.001, data.shape).astype(np.float32)
            data = np.clip(data, 0, 1)
            data[..., 15] = data[0:1, ..., 15]
            stack = TimeSeriesStack(data, base.sample.stack.timestamps)
            samples.append(type(base.sample)(stack=stack, label=base.sample.label))
        return samples

    def test_separable_pixels_fit_to_high_accuracy(self):
        samples = self._separable_samples()
        model = logistic_baseline(samples)
        correct = total = 0
        for s in samples:
            probs = model.predict_probs(s.stack).probs
            correct += ((probs >= 0.5).astype(int) == s.label.values).sum()
            total += probs.size
        assert correct / total >= 0.99

    def test_probabilities_in_unit_interval(self):
        samples = generate_dataset(4, seed=2, cover_mix="uniform")
        model = logistic_baseline(samples)
        probs = model.predict_probs(samples[0].stack).probs
        assert probs.min() >= 0.0 and probs.max() <= 1.0

    def test_same_seed_identical_weights(self):
        samples = generate_dataset(4, seed=3, cover_mix="uniform")
        a = logistic_baseline(samples, seed=1)
        b = logistic_baseline(samples, seed=1)
        assert np.array_equal(a.weights, b.weights)

    def test_single_class_rejected(self):
        samples = [generate_plot(SynthConfig(seed=4, cover_target=0.0))]
        with pytest.raises(ValueError):
            logistic_baseline(samples)

    def test_unfitted_predict_rejected(self):
        samples = generate_dataset(2, seed=5, cover_mix="uniform")
        with pytest.raises(RuntimeError):
            LogisticBaseline().predict_probs(samples[0].stack)
