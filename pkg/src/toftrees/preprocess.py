"""Raw acquisitions to clean 24-step stacks.

Pipeline order: cloud/shadow masking -> acquisition filtering and biweekly
compositing -> per-pixel temporal gap interpolation -> Whittaker smoothing of
the optical bands -> vegetation/soil indices -> DEM slope -> radar fusion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solveh_banded
from scipy.ndimage import distance_transform_edt, median_filter, correlate

from .raster import default_timestamps

# Shadow candidates are pixels dark in both NIR and SWIR. Thresholds on
# normalized reflectance; candidates survive only within this distance of an
# identified cloud pixel (800 m at 10 m resolution).
SHADOW_B8_THRESHOLD = 0.12
SHADOW_B11_THRESHOLD = 0.10
SHADOW_CLOUD_RADIUS_PX = 80.0

MAX_CONTAMINATED_FRACTION = 0.25

# Fallback cloud rule when no external mask is available.
FALLBACK_CLOUD_B2_THRESHOLD = 0.25

B2, B3, B4, B5, B6, B7, B8, B8A, B11, B12 = range(10)


class NoCleanImageryError(RuntimeError):
    """Every acquisition was rejected as contaminated."""


class EmptySeriesError(ValueError):
    """A pixel has no clean observation in the whole year."""


@dataclass(frozen=True)
class Acquisition:
    """One optical acquisition: day of year, normalized bands, cloud mask."""

    day_of_year: int
    bands: np.ndarray  # [H, W, 10] normalized reflectance
    cloud_mask: np.ndarray  # boolean [H, W]

    def __post_init__(self):
        if not 1 <= self.day_of_year <= 366:
            raise ValueError(f"day_of_year {self.day_of_year} outside [1, 366]")
        if not np.all(np.isfinite(self.bands)):
            raise ValueError("acquisition bands contain non-finite values")
        if self.bands.ndim != 3 or self.bands.shape[2] != 10:
            raise ValueError(f"bands must be [H, W, 10], got {self.bands.shape}")
        if self.cloud_mask.shape != self.bands.shape[:2]:
            raise ValueError("cloud mask shape does not match bands")


@dataclass(frozen=True)
class WhittakerConfig:
    lam: float = 800.0
    d: int = 2

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"smoothing weight must be positive, got {self.lam}")
        if self.d != 2:
            raise ValueError("only second-order differences are supported")


def fallback_cloud_mask(bands: np.ndarray) -> np.ndarray:
    """Brightness-threshold stand-in when no cloud mask was provided."""
    return np.asarray(bands)[..., B2] > FALLBACK_CLOUD_B2_THRESHOLD


def detect_shadows(
    acq: Acquisition,
    b8_threshold: float = SHADOW_B8_THRESHOLD,
    b11_threshold: float = SHADOW_B11_THRESHOLD,
) -> np.ndarray:
    """Boolean [H, W] shadow mask for one acquisition.

    Candidates are dark in B8 and B11; a candidate is kept only if it lies
    within 800 m (80 px) of a cloud pixel, otherwise the darkness has some
    other cause.
    """
    candidates = (acq.bands[..., B8] < b8_threshold) & (
        acq.bands[..., B11] < b11_threshold
    )
    if not acq.cloud_mask.any():
        return np.zeros_like(candidates)
    # Distance of every pixel to the nearest cloud pixel.
    dist = distance_transform_edt(~acq.cloud_mask)
    return candidates & (dist <= SHADOW_CLOUD_RADIUS_PX)


def filter_and_composite(
    acquisitions: list[Acquisition],
    masks: list[np.ndarray],
    time_steps: int = 24,
) -> tuple[np.ndarray, np.ndarray]:
    """Drop contaminated acquisitions and assign survivors to biweekly steps.

    `masks` holds the combined cloud+shadow mask per acquisition.
    Acquisitions with more than 25% contaminated pixels are removed; each
    survivor maps to the nearest target day (1, 16, ..., 346). When several
    map to one step the least contaminated wins. Returns
    (bands [T, H, W, 10], missing [T, H, W]); unassigned steps and
    contaminated pixels are flagged missing.
    """
    if len(masks) != len(acquisitions):
        raise ValueError("need one contamination mask per acquisition")
    targets = default_timestamps(time_steps)
    survivors = [
        (acq, mask, float(np.mean(mask)))
        for acq, mask in zip(acquisitions, masks)
        if float(np.mean(mask)) <= MAX_CONTAMINATED_FRACTION
    ]
    if not survivors:
        raise NoCleanImageryError("no clean imagery: every acquisition exceeded 25% contamination")

    h, w = survivors[0][0].bands.shape[:2]
    bands = np.zeros((time_steps, h, w, 10), dtype=np.float64)
    missing = np.ones((time_steps, h, w), dtype=bool)
    assigned: dict[int, float] = {}

    for acq, mask, frac in survivors:
        step = int(np.argmin(np.abs(targets - acq.day_of_year)))
        if step in assigned and assigned[step] <= frac:
            continue
        assigned[step] = frac
        bands[step] = acq.bands
        missing[step] = mask
    return bands, missing


def interpolate_gaps(
    bands: np.ndarray,
    missing: np.ndarray,
    timestamps: np.ndarray | None = None,
) -> np.ndarray:
    """Fill missing values linearly in day-of-year between clean neighbors.

    Leading/trailing gaps clamp to the nearest clean value. Raises
    EmptySeriesError if a pixel has no clean step at all.
    """
    bands = np.asarray(bands, dtype=np.float64)
    missing = np.asarray(missing, dtype=bool)
    t = bands.shape[0]
    if timestamps is None:
        timestamps = default_timestamps(t)
    days = np.asarray(timestamps, dtype=np.float64)

    clean = ~missing
    counts = clean.sum(axis=0)
    if (counts == 0).any():
        bad = np.argwhere(counts == 0)[0]
        raise EmptySeriesError(f"pixel ({bad[0]}, {bad[1]}) has no clean time step")
    if not missing.any():
        return bands.copy()

    steps = np.arange(t)[:, None, None]
    # Index of the latest clean step at or before t, and earliest at or after.
    prev_idx = np.maximum.accumulate(np.where(clean, steps, -1), axis=0)
    nxt = np.where(clean[::-1], steps, -1)
    next_idx = np.maximum.accumulate(nxt, axis=0)[::-1]
    next_idx = np.where(next_idx >= 0, t - 1 - next_idx, t)

    out = bands.copy()
    hh, ww = np.meshgrid(
        np.arange(bands.shape[1]), np.arange(bands.shape[2]), indexing="ij"
    )
    for step in range(t):
        gaps = missing[step]
        if not gaps.any():
            continue
        hi, wi = hh[gaps], ww[gaps]
        p = prev_idx[step][gaps]
        n = next_idx[step][gaps]
        has_p, has_n = p >= 0, n < t
        p_safe = np.where(has_p, p, 0)
        n_safe = np.where(has_n, n, t - 1)
        vp = bands[p_safe, hi, wi, :]
        vn = bands[n_safe, hi, wi, :]
        dp = days[p_safe]
        dn = days[n_safe]
        both = has_p & has_n
        span = np.where(both, dn - dp, 1.0)
        frac = np.where(both, (days[step] - dp) / span, 0.0)[:, None]
        filled = np.where(
            both[:, None], (1.0 - frac) * vp + frac * vn,
            np.where(has_p[:, None], vp, vn),
        )
        out[step, hi, wi, :] = filled
    return out


def _second_difference_banded(n: int, lam: float) -> np.ndarray:
    """Upper banded form of I + lam * D2'D2 for solveh_banded."""
    if n < 3:
        raise ValueError("need at least 3 samples for second-order smoothing")
    d0 = np.full(n, 6.0)
    if n == 3:
        d0 = np.array([1.0, 4.0, 1.0])
    else:
        d0[0] = d0[-1] = 1.0
        d0[1] = d0[-2] = 5.0
    d1 = np.full(n - 1, -4.0)
    d1[0] = d1[-1] = -2.0
    d2 = np.ones(n - 2)

    ab = np.zeros((3, n))
    ab[0, 2:] = lam * d2
    ab[1, 1:] = lam * d1
    ab[2, :] = 1.0 + lam * d0
    return ab


def whittaker_smooth(series: np.ndarray, cfg: WhittakerConfig = WhittakerConfig()) -> np.ndarray:
    """Penalized least-squares smoothing of one series.

    Returns the minimizer of ||z - y||^2 + lam * ||D2 z||^2, solved through
    the symmetric pentadiagonal system (I + lam * D2'D2) z = y.
    """
    y = np.asarray(series, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError("whittaker_smooth expects a 1-D series")
    if not np.all(np.isfinite(y)):
        raise ValueError("series contains non-finite values")
    ab = _second_difference_banded(y.size, cfg.lam)
    return solveh_banded(ab, y)


def whittaker_smooth_cube(cube: np.ndarray, cfg: WhittakerConfig = WhittakerConfig()) -> np.ndarray:
    """Smooth every (pixel, channel) series of a [T, ...] cube in one solve."""
    cube = np.asarray(cube, dtype=np.float64)
    t = cube.shape[0]
    ab = _second_difference_banded(t, cfg.lam)
    flat = cube.reshape(t, -1)
    return solveh_banded(ab, flat).reshape(cube.shape)


def compute_indices(s2: np.ndarray, evi_denominator: str = "b5") -> np.ndarray:
    """EVI, MSAVI2 and BI from normalized reflectance; raw (unmapped) values.

    The EVI denominator uses the B5 term by default; pass
    evi_denominator="b8" for the conventional NIR form.
    """
    s2 = np.asarray(s2, dtype=np.float64)
    b2, b3, b4, b8 = s2[..., B2], s2[..., B3], s2[..., B4], s2[..., B8]
    nir_term = s2[..., B5] if evi_denominator == "b5" else b8

    evi_den = nir_term + 6.0 * b4 - 7.5 * b2 + 1.0
    evi = np.where(np.abs(evi_den) < 1e-6, 0.0, 2.5 * (b8 - b4) / np.where(np.abs(evi_den) < 1e-6, 1.0, evi_den))

    radicand = (2.0 * b8 + 1.0) ** 2 - 8.0 * (b8 - b4)
    msavi2 = (2.0 * b8 + 1.0 - np.sqrt(np.maximum(radicand, 0.0))) / 2.0

    bi_den = b2 + b4 + b3
    bi = np.where(bi_den == 0.0, 0.0, (b2 + b4 - b3) / np.where(bi_den == 0.0, 1.0, bi_den))

    return np.stack([evi, msavi2, bi], axis=-1)


def index_to_unit(raw_indices: np.ndarray) -> np.ndarray:
    """Clamp raw index values to [-1.5, 1.5] and map affinely onto [0, 1]."""
    clipped = np.clip(np.asarray(raw_indices, dtype=np.float64), -1.5, 1.5)
    return (clipped + 1.5) / 3.0


def indices_for_network(s2: np.ndarray, evi_denominator: str = "b5") -> np.ndarray:
    return index_to_unit(compute_indices(s2, evi_denominator))


# Horn's eight-neighbor gradient kernels at unit spacing.
_HORN_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64) / 8.0
_HORN_Y = np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], dtype=np.float64) / 8.0


def compute_slope(dem: np.ndarray, cell_size_m: float = 10.0, median_size: int = 5) -> np.ndarray:
    """Slope percent from a DEM in meters.

    The DEM is degraded with a 5x5 median filter before the Horn gradient to
    suppress single-pixel noise; borders are reflect-padded.
    """
    dem = np.asarray(dem, dtype=np.float64)
    if dem.ndim != 2 or min(dem.shape) < median_size:
        raise ValueError(f"DEM must be 2-D with sides >= {median_size}, got {dem.shape}")
    if not np.all(np.isfinite(dem)):
        raise ValueError("DEM contains non-finite values")
    smooth = median_filter(dem, size=median_size, mode="reflect")
    dzdx = correlate(smooth, _HORN_X, mode="reflect") / cell_size_m
    dzdy = correlate(smooth, _HORN_Y, mode="reflect") / cell_size_m
    return 100.0 * np.hypot(dzdx, dzdy)


def fuse_s1(
    step_days: np.ndarray,
    s1_acquisitions: list[tuple[int, np.ndarray]],
) -> np.ndarray:
    """Pick the nearest radar acquisition for each step; ties go earlier.

    `s1_acquisitions` is a list of (day_of_year, [H, W, 2] VV/VH grid).
    """
    if not s1_acquisitions:
        raise ValueError("no radar acquisitions to fuse")
    ordered = sorted(s1_acquisitions, key=lambda item: item[0])
    days = np.array([d for d, _ in ordered])
    out = []
    for day in np.asarray(step_days):
        gaps = np.abs(days - day)
        out.append(ordered[int(np.argmin(gaps))][1])
    return np.stack(out, axis=0).astype(np.float64)


@dataclass(frozen=True)
class PreprocessConfig:
    whittaker: WhittakerConfig = WhittakerConfig()
    shadow_b8: float = SHADOW_B8_THRESHOLD
    shadow_b11: float = SHADOW_B11_THRESHOLD
    time_steps: int = 24


def preprocess_plot(
    acquisitions: list[Acquisition],
    s1_acquisitions: list[tuple[int, np.ndarray]],
    dem: np.ndarray,
    cfg: PreprocessConfig = PreprocessConfig(),
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Full optical+radar pipeline for one plot.

    Returns (s2 [T,H,W,10], s1 [T,H,W,2], indices [T,H,W,3], slope_percent
    [H,W]); s2/s1/indices normalized to [0, 1], slope in raw percent. Radar
    grids are expected already normalized.
    """
    masks = []
    for acq in acquisitions:
        shadows = detect_shadows(acq, cfg.shadow_b8, cfg.shadow_b11)
        masks.append(acq.cloud_mask | shadows)
    bands, missing = filter_and_composite(acquisitions, masks, cfg.time_steps)
    filled = interpolate_gaps(bands, missing)
    smoothed = np.clip(whittaker_smooth_cube(filled, cfg.whittaker), 0.0, 1.0)
    indices = indices_for_network(smoothed)
    s1 = fuse_s1(default_timestamps(cfg.time_steps), s1_acquisitions)
    slope = compute_slope(dem)
    return smoothed, s1, indices, slope
