"""Scene-scale prediction: overlapping 14x14 windows blended with a centered
Gaussian weight map, receiver-operating-characteristic threshold selection,
and binarization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .network import Mode
from .raster import LabelGrid, PredictionGrid, TimeSeriesStack

WINDOW = 14
STRIDE = 7
GAUSSIAN_SIGMA = 3.5


def gaussian_weights(size: int = WINDOW, sigma: float = GAUSSIAN_SIGMA) -> np.ndarray:
    """Centered 2-D Gaussian weight map for window blending."""
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    sq = coords[:, None] ** 2 + coords[None, :] ** 2
    return np.exp(-sq / (2.0 * sigma * sigma))


def window_offsets(extent: int, window: int = WINDOW, stride: int = STRIDE) -> list[int]:
    """Stride-spaced offsets along one axis, clamped inward for full coverage."""
    if extent < window:
        raise ValueError(f"scene extent {extent} smaller than window {window}")
    offsets = list(range(0, extent - window + 1, stride))
    if offsets[-1] != extent - window:
        offsets.append(extent - window)
    return offsets


@dataclass(frozen=True)
class BlendPlan:
    """Window/stride geometry plus the shared Gaussian weight map."""

    window: int = WINDOW
    stride: int = STRIDE
    sigma: float = GAUSSIAN_SIGMA
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.weights is None:
            object.__setattr__(self, "weights", gaussian_weights(self.window, self.sigma))

    def offsets(self, height: int, width: int) -> list[tuple[int, int]]:
        rows = window_offsets(height, self.window, self.stride)
        cols = window_offsets(width, self.window, self.stride)
        return [(r, c) for r in rows for c in cols]


def blend_windows(
    window_probs: dict[tuple[int, int], np.ndarray],
    height: int,
    width: int,
    plan: BlendPlan,
) -> np.ndarray:
    """Per-pixel weighted average of overlapping window predictions.

    Accumulation runs in extended precision and rounds once, so a constant
    model blends to exactly that constant.
    """
    num = np.zeros((height, width), dtype=np.longdouble)
    den = np.zeros((height, width), dtype=np.longdouble)
    w = plan.weights.astype(np.longdouble)
    for (r, c), probs in window_probs.items():
        num[r : r + plan.window, c : c + plan.window] += w * probs.astype(np.longdouble)
        den[r : r + plan.window, c : c + plan.window] += w
    if (den == 0).any():
        raise ValueError("blend plan leaves uncovered pixels")
    return np.asarray(num / den, dtype=np.float64)


def predict_scene(
    stack: TimeSeriesStack,
    model,
    plan: BlendPlan = BlendPlan(),
    batch_size: int = 64,
) -> PredictionGrid:
    """Tiled eval-mode prediction over a scene of any size >= one window."""
    from .network.model import stack_to_tensor  # local: avoids cycle at import

    t, h, w, _ = stack.shape
    offsets = plan.offsets(h, w)
    full = stack_to_tensor(stack, next(model.parameters()).dtype)
    probs: dict[tuple[int, int], np.ndarray] = {}
    with torch.no_grad():
        for start in range(0, len(offsets), batch_size):
            chunk = offsets[start : start + batch_size]
            tiles = torch.stack(
                [full[:, :, r : r + plan.window, c : c + plan.window] for r, c in chunk]
            )
            out = model(tiles, Mode.eval()).numpy().astype(np.float64)
            for (r, c), grid in zip(chunk, out):
                probs[(r, c)] = grid
    return PredictionGrid(blend_windows(probs, h, w, plan))


def select_threshold(probs, labels) -> float:
    """Probability cutoff maximizing Youden's J = TPR - FPR.

    Candidates are the observed probabilities, midpoints between adjacent
    distinct values, and the interval beyond the extremes; ties break toward
    the candidate nearest 0.5. Raises on single-class labels (callers fall
    back to 0.5).
    """
    p = np.asarray(probs, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if p.shape != y.shape:
        raise ValueError("probs and labels must have equal length")
    pos = y > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("threshold selection needs both classes present")

    candidates = threshold_candidates(p)
    j_values = np.array([youden_j(p, pos, t) for t in candidates])
    best = j_values.max()
    winners = candidates[j_values >= best - 1e-12]
    order = np.lexsort((winners, np.abs(winners - 0.5)))
    return float(winners[order[0]])


def threshold_candidates(probs: np.ndarray) -> np.ndarray:
    """Every classification-distinct cutoff: the observed values, midpoints
    between adjacent distinct values, and the open intervals past the extremes."""
    uniq = np.unique(np.asarray(probs, dtype=np.float64))
    candidates = list(uniq)
    candidates.extend((uniq[:-1] + uniq[1:]) / 2.0)
    if uniq[0] > 0.0:
        candidates.append(uniq[0] / 2.0)
    if uniq[-1] < 1.0:
        candidates.append((uniq[-1] + 1.0) / 2.0)
    return np.unique(np.clip(candidates, 1e-12, 1.0 - 1e-12))


def youden_j(probs: np.ndarray, positive_mask: np.ndarray, threshold: float) -> float:
    predicted = probs >= threshold
    tpr = np.sum(predicted & positive_mask) / positive_mask.sum()
    fpr = np.sum(predicted & ~positive_mask) / (~positive_mask).sum()
    return float(tpr - fpr)


def binarize(probs, threshold: float) -> LabelGrid:
    """Positive where probability >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    p = np.asarray(getattr(probs, "probs", probs), dtype=np.float64)
    return LabelGrid((p >= threshold).astype(np.int8))
