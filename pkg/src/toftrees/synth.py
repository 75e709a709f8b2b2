"""Deterministic synthetic Sentinel-like plots with known tree masks.

Trees are disks with an elevated NIR plateau and a broad seasonal sinusoid;
cropland fields carry a narrow growing-season pulse with matched time-means.
Per-plot understory greenness and canopy density slide every class along one
shared spectral axis, so absolute per-pixel means are deliberately ambiguous
across plots while temporal shape, radar variance and local spatial contrast
remain informative. Clouds appear as short masked runs of acquisitions that
the preprocessing pipeline has to drop and reconstruct.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import preprocess
from .raster import (
    LabelGrid,
    PlotSample,
    PredictionGrid,
    TimeSeriesStack,
    build_stack,
    default_timestamps,
    normalize_slope,
)

BACKGROUNDS = ("cropland", "bare", "grass")

# Time-mean reflectance per channel (B2..B12) for each class. Tree and crop
# are mean-matched except for a SWIR moisture margin whose strength and sign
# vary per plot, so a global per-pixel threshold on means cannot separate
# them reliably. Temporal modulations below are zero-mean over the sampled
# days, so they never move the means.
TREE_BASE = np.array([0.045, 0.065, 0.050, 0.14, 0.27, 0.33, 0.42, 0.44, 0.240, 0.155])
GRASS_BASE = np.array([0.050, 0.075, 0.070, 0.13, 0.19, 0.22, 0.27, 0.28, 0.27, 0.19])
BARE_BASE = np.array([0.075, 0.095, 0.120, 0.15, 0.17, 0.18, 0.19, 0.20, 0.31, 0.27])

# Crop = tree means + margin_scale * this vector, margin_scale drawn per plot.
CROP_SWIR_MARGIN = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.035, 0.025])

# Phenology moves reflectance along the grass-to-tree greenness axis, so a
# pixel's whole time series stays on the same spectral manifold regardless
# of class. Amplitudes below are in units of this contrast vector.
GREENNESS_AXIS = TREE_BASE - GRASS_BASE

RADAR_BASE = np.array([0.55, 0.45])
TREE_RADAR_SIGMA = 0.015
BACKGROUND_RADAR_SIGMA = 0.055

CLASS_TREE, CLASS_CROP, CLASS_GRASS, CLASS_BARE = 0, 1, 2, 3


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    cover_target: float = 0.15
    radius_range: tuple[float, float] = (1.0, 2.0)
    seasonal_amplitude: float = 0.33
    crop_pulse_amplitude: float = 0.6
    background: str = "grass"
    cloud_gap_fraction: float = 0.0
    noise_sigma: float = 0.01
    plot_offset_sigma: float = 0.0
    greenness_sigma: float = 0.0
    crop_margin_mean: float = 0.5
    crop_margin_sigma: float = 1.0
    canopy_density_range: tuple[float, float] = (0.3, 1.0)
    height: int = 14
    width: int = 14
    time_steps: int = 24

    def __post_init__(self):
        if not 0.0 <= self.cover_target <= 1.0:
            raise ValueError("cover_target must be in [0, 1]")
        if self.background not in BACKGROUNDS:
            raise ValueError(f"background must be one of {BACKGROUNDS}")
        if not 0.0 <= self.cloud_gap_fraction <= 0.75:
            raise ValueError("cloud_gap_fraction must be in [0, 0.75]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


@dataclass(frozen=True)
class SynthPlot:
    """Full generator output: the sample plus raw material for preprocessing."""

    sample: PlotSample
    acquisitions: list
    s1_series: list
    dem: np.ndarray
    clean_s2: np.ndarray  # noise-free normalized bands at the step days
    class_map: np.ndarray


class CoverInfeasibleError(RuntimeError):
    """Disk placement could not hit the requested cover after bounded retries."""


def _season(days: np.ndarray) -> np.ndarray:
    return np.sin(np.pi * (days - 1.0) / 365.0) ** 2


def _pulse(days: np.ndarray, peak: float = 200.0, width: float = 30.0) -> np.ndarray:
    return np.exp(-0.5 * ((days - peak) / width) ** 2)


def _early(days: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * ((days - 120.0) / 60.0) ** 2)


def _place_disks(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    """Union of random disks hitting cover_target within +-0.1."""
    h, w = cfg.height, cfg.width
    cells = h * w
    if cfg.cover_target == 0.0:
        return np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(200):
        mask = np.zeros((h, w), dtype=bool)
        for _ in range(500):
            cover = mask.sum() / cells
            if cover >= cfg.cover_target:
                break
            cy = rng.uniform(-0.5, h - 0.5)
            cx = rng.uniform(-0.5, w - 0.5)
            r = rng.uniform(*cfg.radius_range)
            mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        if abs(mask.sum() / cells - cfg.cover_target) <= 0.1:
            return mask
    raise CoverInfeasibleError(
        f"could not realize cover {cfg.cover_target} within +-0.1 after 200 attempts"
    )


def _class_map(rng: np.random.Generator, cfg: SynthConfig, trees: np.ndarray) -> np.ndarray:
    h, w = cfg.height, cfg.width
    classes = np.full((h, w), CLASS_GRASS if cfg.background != "bare" else CLASS_BARE)
    if cfg.background == "cropland":
        n_fields = rng.integers(3, 6)
        for _ in range(n_fields):
            fh = rng.integers(5, max(6, (3 * h) // 4))
            fw = rng.integers(5, max(6, (3 * w) // 4))
            r0 = rng.integers(0, max(h - fh, 1))
            c0 = rng.integers(0, max(w - fw, 1))
            classes[r0 : r0 + fh, c0 : c0 + fw] = CLASS_CROP
    classes[trees] = CLASS_TREE
    return classes


def _clean_bands(cfg: SynthConfig, classes: np.ndarray, days: np.ndarray,
                 offsets: np.ndarray, crop_margin_scale: float,
                 canopy_density: float, greenness: float) -> np.ndarray:
    """Noise-free [T, H, W, 10] cube; modulations are zero-mean over `days`.

    The plot's understory slides along the grass-to-tree greenness axis
    (lush vs dry backgrounds), and tree pixels are a spectral mixture of the
    canopy signature and that understory, weighted by the plot's canopy
    density. A thin-canopy tree therefore stays visible as a local bump
    against its own background while its absolute means land inside the
    cross-plot background cloud, which defeats global per-pixel thresholds
    but not local spatial contrast.
    """
    season = _season(days)
    pulse = _pulse(days)
    early = _early(days)
    season_c = season - season.mean()
    pulse_c = pulse - pulse.mean()
    early_c = early - early.mean()

    t = days.size
    h, w = classes.shape
    cube = np.zeros((t, h, w, 10))
    rho = canopy_density
    grass_plot = GRASS_BASE + greenness * GREENNESS_AXIS

    def on_axis(base: np.ndarray, mod: np.ndarray) -> np.ndarray:
        return base[None, :] + mod[:, None] * GREENNESS_AXIS[None, :]

    grass_series = on_axis(grass_plot, 0.2 * early_c)
    bare_series = np.broadcast_to(BARE_BASE[None, :], (t, 10))
    filler_series = bare_series if cfg.background == "bare" else grass_series
    canopy_series = on_axis(TREE_BASE, cfg.seasonal_amplitude * season_c)
    crop_canopy = on_axis(
        TREE_BASE + crop_margin_scale * CROP_SWIR_MARGIN,
        cfg.crop_pulse_amplitude * pulse_c,
    )
    # Mixing happens per time step, so thin vegetation inherits the
    # understory's temporal cycle along with its means. The plot's density
    # applies to trees and crops alike (vegetation vigor of the plot).
    series_by_class = {
        CLASS_TREE: rho * canopy_series + (1.0 - rho) * filler_series,
        CLASS_CROP: rho * crop_canopy + (1.0 - rho) * filler_series,
        CLASS_GRASS: grass_series,
        CLASS_BARE: bare_series,
    }
    for cls, series in series_by_class.items():
        where = classes == cls
        if not where.any():
            continue
        cube[:, where, :] = series[:, None, :]
    cube += offsets[None, None, None, :]
    return np.clip(cube, 0.0, 1.0)


def _radar_series(rng: np.random.Generator, cfg: SynthConfig, classes: np.ndarray,
                  days: np.ndarray, canopy_density: float) -> np.ndarray:
    """[N, H, W, 2] noisy backscatter; equal means, class-dependent variance.

    Canopy damps temporal variance in proportion to its density, and crops
    carry a zero-mean harvest pulse: both are shape cues invisible to
    time-averaged features.
    """
    t = days.size
    h, w = classes.shape
    tree_sigma = (
        canopy_density * TREE_RADAR_SIGMA + (1.0 - canopy_density) * BACKGROUND_RADAR_SIGMA
    )
    sigma = np.where(classes == CLASS_TREE, tree_sigma, BACKGROUND_RADAR_SIGMA)
    noise = rng.normal(0.0, 1.0, size=(t, h, w, 2)) * sigma[None, :, :, None]
    pulse = _pulse(days)
    pulse_c = (pulse - pulse.mean())[:, None, None, None]
    crop = (classes == CLASS_CROP)[None, :, :, None]
    structured = np.where(crop, canopy_density * 0.08 * pulse_c, 0.0)
    return np.clip(RADAR_BASE[None, None, None, :] + structured + noise, 0.0, 1.0)


def _cloud_runs(rng: np.random.Generator, t: int, fraction: float) -> np.ndarray:
    """Boolean per-acquisition contamination flags in short contiguous runs."""
    k = int(round(fraction * t))
    flags = np.zeros(t, dtype=bool)
    guard = 0
    while flags.sum() < k and guard < 100:
        guard += 1
        run = int(rng.integers(1, 5))
        run = min(run, k - int(flags.sum()))
        start = int(rng.integers(0, t - run + 1))
        flags[start : start + run] = True
    return flags


def _cloud_blob(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    """Rectangle covering at least a quarter of the plot."""
    h, w = shape
    mask = np.zeros(shape, dtype=bool)
    bh = int(rng.integers(max(h // 2, 1), h + 1))
    bw = int(rng.integers(max(w // 2, 1), w + 1))
    r0 = int(rng.integers(0, h - bh + 1))
    c0 = int(rng.integers(0, w - bw + 1))
    mask[r0 : r0 + bh, c0 : c0 + bw] = True
    return mask


def generate_raw(cfg: SynthConfig) -> SynthPlot:
    """Generate one plot with everything the pipeline consumes.

    Same seed gives a bit-identical result. The returned sample's stack is
    built through the preprocessing pipeline when any acquisitions are
    clouded, otherwise directly from the noisy signals.
    """
    rng = np.random.default_rng(cfg.seed)
    days = default_timestamps(cfg.time_steps).astype(np.float64)

    trees = _place_disks(rng, cfg)
    classes = _class_map(rng, cfg, trees)
    offsets = rng.normal(0.0, cfg.plot_offset_sigma, size=10) if cfg.plot_offset_sigma > 0 else np.zeros(10)
    margin_scale = float(rng.normal(cfg.crop_margin_mean, cfg.crop_margin_sigma))
    density = float(rng.uniform(*cfg.canopy_density_range))
    greenness = float(np.clip(rng.normal(0.15, cfg.greenness_sigma), -0.2, 0.8)) if cfg.greenness_sigma > 0 else 0.0
    clean = _clean_bands(cfg, classes, days, offsets, margin_scale, density, greenness)

    noisy = clean + rng.normal(0.0, cfg.noise_sigma, size=clean.shape)
    noisy = np.clip(noisy, 0.0, 1.0)

    clouded = _cloud_runs(rng, cfg.time_steps, cfg.cloud_gap_fraction)
    acquisitions = []
    for i, day in enumerate(days.astype(int)):
        bands = noisy[i].copy()
        mask = np.zeros(trees.shape, dtype=bool)
        if clouded[i]:
            mask = _cloud_blob(rng, trees.shape)
            bands[mask] = np.clip(bands[mask] + rng.uniform(0.25, 0.45), 0.0, 1.0)
        acquisitions.append(
            preprocess.Acquisition(day_of_year=int(day), bands=bands, cloud_mask=mask)
        )

    radar_days = np.arange(1, 366, 12, dtype=np.int64)
    radar = _radar_series(rng, cfg, classes, radar_days.astype(np.float64), density)
    s1_series = [(int(d), radar[i]) for i, d in enumerate(radar_days)]

    slope_pct = rng.uniform(0.0, 30.0)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    yy, xx = np.mgrid[0 : cfg.height, 0 : cfg.width].astype(np.float64)
    # Plane whose Horn gradient is slope_pct at 10 m spacing; float32 so that
    # bundle serialization round-trips bit-identically.
    dem = (
        (slope_pct / 100.0) * 10.0 * (np.cos(theta) * yy + np.sin(theta) * xx)
    ).astype(np.float32)

    if clouded.any():
        s2, s1, _, _ = preprocess.preprocess_plot(acquisitions, s1_series, dem.astype(np.float64))
    else:
        s2 = noisy
        s1 = preprocess.fuse_s1(days.astype(int), s1_series)

    # Derived channels come from the float32-rounded arrays, matching what a
    # bundle reader reconstructs from disk.
    s2 = s2.astype(np.float32)
    s1 = s1.astype(np.float32)
    indices = preprocess.indices_for_network(s2.astype(np.float64))
    slope = preprocess.compute_slope(dem.astype(np.float64))
    stack = build_stack(
        s2,
        s1,
        indices.astype(np.float32),
        normalize_slope(slope).astype(np.float32),
        timestamps=default_timestamps(cfg.time_steps),
        plot_id=f"synth-{cfg.seed:06d}",
        time_steps=cfg.time_steps,
    )
    label = LabelGrid(trees.astype(np.int8))
    sample = PlotSample(stack=stack, label=label)
    return SynthPlot(
        sample=sample,
        acquisitions=acquisitions,
        s1_series=s1_series,
        dem=dem,
        clean_s2=clean,
        class_map=classes,
    )


def generate_plot(cfg: SynthConfig) -> PlotSample:
    return generate_raw(cfg).sample


def dataset_configs(n: int, seed: int, cover_mix: str = "uniform",
                    base: SynthConfig = SynthConfig()) -> list[SynthConfig]:
    """Per-plot configs with seeds derived from `seed`.

    cover_mix "uniform" spreads targets over [0, 0.6]; "low" keeps them
    under 0.2; a float-like string fixes the target. Backgrounds rotate
    through all types unless the base config pins one via cover_mix
    "uniform-cropland" style suffixes.
    """
    rng = np.random.default_rng(seed)
    mix, _, fixed_background = cover_mix.partition("-")
    configs = []
    for _ in range(n):
        if mix == "uniform":
            target = float(rng.uniform(0.0, 0.6))
        elif mix == "low":
            target = float(rng.uniform(0.02, 0.18))
        else:
            target = float(mix)
        background = fixed_background or BACKGROUNDS[int(rng.integers(0, len(BACKGROUNDS)))]
        configs.append(replace(
            base, seed=int(rng.integers(0, 2**31 - 1)),
            cover_target=target, background=background,
        ))
    return configs


def generate_dataset(n: int, seed: int, cover_mix: str = "uniform",
                     base: SynthConfig = SynthConfig()) -> list[PlotSample]:
    return [generate_plot(cfg) for cfg in dataset_configs(n, seed, cover_mix, base)]


class LogisticBaseline:
    """Per-pixel logistic regression on temporal-mean channel values.

    Full-batch gradient descent with a fixed iteration budget on
    standardized features; deterministic for a given seed.
    """

    def __init__(self, iterations: int = 2000, learning_rate: float = 1.0, seed: int = 0):
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.seed = seed
        self.weights: np.ndarray | None = None
        self.feat_mean: np.ndarray | None = None
        self.feat_std: np.ndarray | None = None

    @staticmethod
    def _features(stack: TimeSeriesStack) -> np.ndarray:
        data = np.asarray(stack.data, dtype=np.float64)
        return data.mean(axis=0).reshape(-1, data.shape[-1])

    def fit(self, train: list[PlotSample]) -> "LogisticBaseline":
        x = np.concatenate([self._features(s.stack) for s in train], axis=0)
        y = np.concatenate([np.asarray(s.label.values).ravel() for s in train]).astype(np.float64)
        if y.min() == y.max():
            raise ValueError("training data contains a single class")
        self.feat_mean = x.mean(axis=0)
        self.feat_std = np.maximum(x.std(axis=0), 1e-9)
        xs = (x - self.feat_mean) / self.feat_std
        xs = np.concatenate([xs, np.ones((xs.shape[0], 1))], axis=1)
        w = np.zeros(xs.shape[1])
        n = xs.shape[0]
        for _ in range(self.iterations):
            p = 1.0 / (1.0 + np.exp(-(xs @ w)))
            grad = xs.T @ (p - y) / n
            w -= self.learning_rate * grad
        self.weights = w
        return self

    def predict_probs(self, stack: TimeSeriesStack) -> PredictionGrid:
        if self.weights is None:
            raise RuntimeError("baseline is not fitted")
        x = self._features(stack)
        xs = (x - self.feat_mean) / self.feat_std
        xs = np.concatenate([xs, np.ones((xs.shape[0], 1))], axis=1)
        p = 1.0 / (1.0 + np.exp(-(xs @ self.weights)))
        return PredictionGrid(p.reshape(stack.height, stack.width))


def logistic_baseline(train: list[PlotSample], iterations: int = 2000,
                      learning_rate: float = 1.0, seed: int = 0) -> LogisticBaseline:
    return LogisticBaseline(iterations, learning_rate, seed).fit(train)
