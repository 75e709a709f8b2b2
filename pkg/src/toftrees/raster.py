"""Canonical data model: channel layout, time-series stacks, labels, plot bundles.

Everything downstream (preprocessing, the network, inference, evaluation)
speaks in terms of the types defined here. All value objects are immutable
after construction: the underlying numpy arrays are marked read-only so they
can be shared freely across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Fixed channel order. Indices 0-9 are the Sentinel-2 optical bands at 10 m,
# 10-12 the derived indices, 13-14 the radar polarizations, 15 terrain slope.
CHANNEL_NAMES = (
    "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B11", "B12",
    "EVI", "MSAVI2", "BI",
    "VV", "VH",
    "SLOPE",
)
NUM_CHANNELS = len(CHANNEL_NAMES)
OPTICAL_CHANNELS = CHANNEL_NAMES[:10]
INDEX_CHANNELS = CHANNEL_NAMES[10:13]
RADAR_CHANNELS = CHANNEL_NAMES[13:15]

TIME_STEPS = 24
STEP_DAYS = 15
PLOT_SIZE = 14  # 140 m plot at 10 m resolution

# Conventional sensor ranges used for [0, 1] normalization. Configurable via
# the normalize_* keyword arguments.
S2_REFLECTANCE_MAX = 10000.0
S1_DB_MIN = -25.0
S1_DB_MAX = 0.0
SLOPE_PERCENT_MAX = 100.0


class ChannelLayout:
    """Stable channel-name to index mapping."""

    names = CHANNEL_NAMES
    index = {name: i for i, name in enumerate(CHANNEL_NAMES)}

    @classmethod
    def of(cls, name: str) -> int:
        return cls.index[name]


class StackShapeError(ValueError):
    """An input array to stack assembly has the wrong shape."""


def default_timestamps(time_steps: int = TIME_STEPS) -> np.ndarray:
    """Day-of-year targets 1, 16, ..., spaced 15 days apart."""
    return np.arange(time_steps, dtype=np.int64) * STEP_DAYS + 1


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class TimeSeriesStack:
    """Normalized [T, H, W, C] input tensor for one plot or scene window.

    Values are unitless reflectance/backscatter/index/slope in [0, 1].
    Timestamps are day-of-year integers, strictly increasing with 15-day
    spacing. The SLOPE channel is static and replicated across time.
    """

    data: np.ndarray
    timestamps: np.ndarray
    plot_id: str = ""

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        ts = np.asarray(self.timestamps, dtype=np.int64)
        if data.ndim != 4 or data.shape[3] != NUM_CHANNELS:
            raise StackShapeError(
                f"stack data must be [T, H, W, {NUM_CHANNELS}], got {data.shape}"
            )
        if ts.shape != (data.shape[0],):
            raise StackShapeError(
                f"timestamps must have length T={data.shape[0]}, got {ts.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("stack data contains non-finite values")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("stack data must be normalized to [0, 1]")
        diffs = np.diff(ts)
        if ts.size > 1 and not np.all(diffs == STEP_DAYS):
            raise ValueError("timestamps must be strictly increasing with 15-day spacing")
        slope = data[:, :, :, ChannelLayout.of("SLOPE")]
        if not np.all(slope == slope[0]):
            raise ValueError("SLOPE channel must be identical across all time steps")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "timestamps", _freeze(ts))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def time_steps(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class QualityMask:
    """Boolean [T, H, W] contamination mask (True = cloud or shadow)."""

    contaminated: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.contaminated, dtype=bool)
        if mask.ndim != 3:
            raise StackShapeError(f"quality mask must be [T, H, W], got {mask.shape}")
        object.__setattr__(self, "contaminated", _freeze(mask))


@dataclass(frozen=True)
class LabelGrid:
    """Binary [H, W] tree-presence labels on the 10 m grid."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim != 2:
            raise StackShapeError(f"labels must be [H, W], got {vals.shape}")
        if not np.isin(vals, (0, 1)).all():
            raise ValueError("labels must be binary 0/1")
        object.__setattr__(self, "values", _freeze(vals.astype(np.int8)))

    @property
    def cover(self) -> float:
        return float(self.values.mean())


@dataclass(frozen=True)
class PredictionGrid:
    """Sigmoid probabilities [H, W] in [0, 1]."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise StackShapeError(f"probabilities must be [H, W], got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("probabilities contain non-finite values")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "probs", _freeze(p))


@dataclass(frozen=True)
class PlotSample:
    """A stack plus its labels; `cover` is the positive-cell fraction."""

    stack: TimeSeriesStack
    label: LabelGrid
    cover: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.label.values.shape != (self.stack.height, self.stack.width):
            raise StackShapeError("label shape does not match stack spatial dims")
        expected = self.label.cover
        if self.cover is None:
            object.__setattr__(self, "cover", expected)
        elif abs(self.cover - expected) > 1e-9:
            raise ValueError(f"cover {self.cover} != positive fraction {expected}")


def build_stack(
    s2: np.ndarray,
    s1: np.ndarray,
    indices: np.ndarray,
    slope: np.ndarray,
    timestamps,
    plot_id: str = "",
    time_steps: int = TIME_STEPS,
) -> TimeSeriesStack:
    """Assemble a normalized stack from its per-sensor parts.

    `slope` is a static [H, W] grid replicated across all time steps. All
    inputs must already be normalized to [0, 1].
    """
    s2 = np.asarray(s2, dtype=np.float32)
    s1 = np.asarray(s1, dtype=np.float32)
    indices = np.asarray(indices, dtype=np.float32)
    slope = np.asarray(slope, dtype=np.float32)

    if s2.ndim != 4 or s2.shape[3] != 10:
        raise StackShapeError(f"s2 must be [T, H, W, 10], got {s2.shape}")
    t, h, w = s2.shape[:3]
    if t != time_steps:
        raise StackShapeError(f"s2 has T={t}, expected {time_steps}")
    if s1.shape != (t, h, w, 2):
        raise StackShapeError(f"s1 must be [{t}, {h}, {w}, 2], got {s1.shape}")
    if indices.shape != (t, h, w, 3):
        raise StackShapeError(f"indices must be [{t}, {h}, {w}, 3], got {indices.shape}")
    if slope.shape != (h, w):
        raise StackShapeError(f"slope must be [{h}, {w}], got {slope.shape}")

    data = np.empty((t, h, w, NUM_CHANNELS), dtype=np.float32)
    data[..., 0:10] = s2
    data[..., 10:13] = indices
    data[..., 13:15] = s1
    data[..., 15] = slope[None, :, :]
    return TimeSeriesStack(data=data, timestamps=np.asarray(timestamps), plot_id=plot_id)


def normalize_s2(raw: np.ndarray, reflectance_max: float = S2_REFLECTANCE_MAX) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw S2 reflectance contains non-finite values")
    return np.clip(raw / reflectance_max, 0.0, 1.0)


def normalize_s1(raw_db: np.ndarray, db_min: float = S1_DB_MIN, db_max: float = S1_DB_MAX) -> np.ndarray:
    raw_db = np.asarray(raw_db, dtype=np.float64)
    if not np.all(np.isfinite(raw_db)):
        raise ValueError("raw S1 backscatter contains non-finite values")
    return np.clip((raw_db - db_min) / (db_max - db_min), 0.0, 1.0)


def normalize_slope(raw_percent: np.ndarray, percent_max: float = SLOPE_PERCENT_MAX) -> np.ndarray:
    raw_percent = np.asarray(raw_percent, dtype=np.float64)
    if not np.all(np.isfinite(raw_percent)):
        raise ValueError("raw slope contains non-finite values")
    return np.clip(raw_percent / percent_max, 0.0, 1.0)


def normalize_channels(raw_s2, raw_s1, raw_slope, **kwargs):
    """Normalize raw sensor units to the [0, 1] network ranges.

    S2 reflectance is scaled by 1/10000, S1 dB backscatter mapped from
    [-25, 0] and terrain slope from [0, 100] percent, all clamped.
    """
    return (
        normalize_s2(raw_s2, kwargs.get("reflectance_max", S2_REFLECTANCE_MAX)),
        normalize_s1(raw_s1, kwargs.get("db_min", S1_DB_MIN), kwargs.get("db_max", S1_DB_MAX)),
        normalize_slope(raw_slope, kwargs.get("percent_max", SLOPE_PERCENT_MAX)),
    )


# ---------------------------------------------------------------------------
# Plot bundle I/O
#
# A plot bundle directory holds: meta.json (plot_id, lat, lon, T, H, W,
# channel list, timestamps), s2.bin [T,H,W,10], s1.bin [T,H,W,2],
# dem.bin [H,W] (meters), labels.csv (H rows of W 0/1 values). Binary arrays
# are little-endian float32, row-major.
# ---------------------------------------------------------------------------

def _write_f32(path: Path, arr: np.ndarray) -> None:
    np.asarray(arr, dtype="<f4").tofile(path)


def _read_f32(path: Path, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise ValueError(f"{path} holds {arr.size} floats, expected {expected}")
    return arr.reshape(shape)


def write_labels_csv(path: Path, labels: np.ndarray) -> None:
    rows = [",".join(str(int(v)) for v in row) for row in np.asarray(labels)]
    path.write_text("\n".join(rows) + "\n")


def read_labels_csv(path: Path) -> np.ndarray:
    rows = [line.split(",") for line in path.read_text().strip().splitlines()]
    return np.array([[int(v) for v in row] for row in rows], dtype=np.int8)


def save_plot_bundle(
    out_dir,
    *,
    plot_id: str,
    s2: np.ndarray,
    s1: np.ndarray,
    dem: np.ndarray,
    timestamps: np.ndarray,
    labels: np.ndarray | None = None,
    lat: float = 0.0,
    lon: float = 0.0,
) -> Path:
    """Write a plot bundle directory; s2/s1 are normalized, dem is meters."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t, h, w = np.asarray(s2).shape[:3]
    meta = {
        "plot_id": plot_id,
        "lat": lat,
        "lon": lon,
        "T": int(t),
        "H": int(h),
        "W": int(w),
        "channels": list(CHANNEL_NAMES),
        "timestamps": [int(d) for d in np.asarray(timestamps)],
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    _write_f32(out_dir / "s2.bin", s2)
    _write_f32(out_dir / "s1.bin", s1)
    _write_f32(out_dir / "dem.bin", dem)
    if labels is not None:
        write_labels_csv(out_dir / "labels.csv", labels)
    return out_dir


def load_plot_bundle(bundle_dir) -> PlotSample:
    """Load a plot bundle and assemble the 16-channel stack.

    Index channels are recomputed from the stored optical bands and slope
    from the stored DEM, so a save/load round trip is bit-stable.
    """
    from . import preprocess  # deferred: preprocess imports raster

    bundle_dir = Path(bundle_dir)
    meta = json.loads((bundle_dir / "meta.json").read_text())
    t, h, w = meta["T"], meta["H"], meta["W"]
    s2 = _read_f32(bundle_dir / "s2.bin", (t, h, w, 10))
    s1 = _read_f32(bundle_dir / "s1.bin", (t, h, w, 2))
    dem = _read_f32(bundle_dir / "dem.bin", (h, w)).astype(np.float64)

    indices = preprocess.indices_for_network(s2.astype(np.float64))
    slope = normalize_slope(preprocess.compute_slope(dem))
    stack = build_stack(
        s2, s1, indices, slope,
        timestamps=meta["timestamps"],
        plot_id=meta["plot_id"],
        time_steps=t,
    )
    label_path = bundle_dir / "labels.csv"
    if label_path.exists():
        label = LabelGrid(read_labels_csv(label_path))
    else:
        label = LabelGrid(np.zeros((h, w), dtype=np.int8))
    return PlotSample(stack=stack, label=label)


def load_stack(bundle_dir) -> TimeSeriesStack:
    return load_plot_bundle(bundle_dir).stack


def list_bundles(dataset_dir) -> list[Path]:
    """All plot bundle directories directly under dataset_dir."""
    dataset_dir = Path(dataset_dir)
    if (dataset_dir / "meta.json").exists():
        return [dataset_dir]
    found = sorted(p.parent for p in dataset_dir.glob("*/meta.json"))
    return found
