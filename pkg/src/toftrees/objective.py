"""Training objective: scheduled mix of weighted smoothed cross entropy and a
boundary term integrating probabilities against a signed distance map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import distance_transform_edt

LABEL_SMOOTHING = 0.10
ALPHA_PER_EPOCH = 0.01
ALPHA_CAP = 0.5
PROB_CLAMP = 1e-7


def alpha_schedule(epoch: int) -> float:
    """Boundary-term weight: 0.01 per epoch, capped at 0.5."""
    if epoch < 0:
        raise ValueError(f"epoch must be nonnegative, got {epoch}")
    return min(ALPHA_PER_EPOCH * epoch, ALPHA_CAP)


def class_weights(label_counts, beta: float = 0.999) -> tuple[float, float]:
    """Per-class weights from the effective number of samples.

    w_c is proportional to (1 - beta) / (1 - beta^n_c), normalized so the
    mean weight over the present classes is 1. Computed once over the whole
    training set.
    """
    counts = np.asarray(label_counts, dtype=np.float64)
    if counts.shape != (2,):
        raise ValueError("label_counts must be (negatives, positives)")
    if (counts < 0).any():
        raise ValueError("counts must be nonnegative")
    if counts.sum() == 0:
        raise ValueError("both class counts are zero")
    raw = np.zeros(2)
    for c, n in enumerate(counts):
        if n == 0:
            continue
        if beta == 0.0:
            raw[c] = 1.0
        else:
            raw[c] = (1.0 - beta) / (1.0 - beta ** n)
    present = raw > 0
    raw[present] = raw[present] / raw[present].mean()
    raw[~present] = 1.0
    return float(raw[0]), float(raw[1])


def signed_distance_map(labels: np.ndarray) -> np.ndarray:
    """Signed Euclidean distance to the positive-segment boundary.

    Pixels inside positive segments get minus their distance to the nearest
    negative pixel; outside pixels get plus their distance to the nearest
    positive. Degenerate labels use constant +1 (all negative) or -1
    (all positive) so the term stays informative.
    """
    y = np.asarray(labels)
    if y.ndim != 2:
        raise ValueError(f"labels must be [H, W], got {y.shape}")
    pos = y > 0
    if not pos.any():
        return np.ones(y.shape, dtype=np.float64)
    if pos.all():
        return -np.ones(y.shape, dtype=np.float64)
    dist_to_pos = distance_transform_edt(~pos)
    dist_to_neg = distance_transform_edt(pos)
    return np.where(pos, -dist_to_neg, dist_to_pos)


def _as_prob_tensor(p) -> torch.Tensor:
    if isinstance(p, torch.Tensor):
        return p
    return torch.as_tensor(np.asarray(p), dtype=torch.float64)


def _check_shapes(p: torch.Tensor, y: np.ndarray) -> None:
    if tuple(p.shape) != tuple(y.shape):
        raise ValueError(f"prediction shape {tuple(p.shape)} != label shape {tuple(y.shape)}")


def smoothed_weighted_ce(p, y, weights: tuple[float, float]) -> torch.Tensor:
    """Label-smoothed, class-weighted binary cross entropy (mean over pixels).

    Targets are smoothed to {0.05, 0.95}; each pixel is weighted by its true
    class. Probabilities get a tiny clamp for numeric stability only.
    """
    p = _as_prob_tensor(p)
    y = np.asarray(y)
    _check_shapes(p, y)
    y_t = torch.as_tensor(y.astype(np.float64), dtype=p.dtype, device=p.device)
    target = y_t * (1.0 - LABEL_SMOOTHING) + LABEL_SMOOTHING / 2.0
    w = torch.where(
        y_t > 0.5,
        torch.as_tensor(weights[1], dtype=p.dtype),
        torch.as_tensor(weights[0], dtype=p.dtype),
    )
    pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    nll = -(target * torch.log(pc) + (1.0 - target) * torch.log(1.0 - pc))
    return (w * nll).mean()


def clipped_ce(p, y) -> torch.Tensor:
    """Literal clipped-probability cross entropy. Evaluation only: the clip
    zeroes gradients outside [0.1, 0.9], so training uses the smoothed form."""
    p = _as_prob_tensor(p)
    y = np.asarray(y)
    _check_shapes(p, y)
    y_t = torch.as_tensor(y.astype(np.float64), dtype=p.dtype, device=p.device)
    pc = p.clamp(0.1, 0.9)
    return (-(y_t * torch.log(pc) + (1.0 - y_t) * torch.log(1.0 - pc))).mean()


def boundary_loss(p, y) -> torch.Tensor:
    """Mean over pixels of signed-distance times predicted probability."""
    p = _as_prob_tensor(p)
    y = np.asarray(y)
    _check_shapes(p, y)
    if y.ndim == 2:
        phi = signed_distance_map(y)
    else:
        phi = np.stack([signed_distance_map(sample) for sample in y])
    phi_t = torch.as_tensor(phi, dtype=p.dtype, device=p.device)
    return (phi_t * p).mean()


@dataclass(frozen=True)
class LossTerms:
    """Components of the combined objective at one step."""

    ce: torch.Tensor
    bl: torch.Tensor
    alpha: float
    total: torch.Tensor
    class_weights: tuple[float, float]


def combined_loss(p, y, epoch: int, weights: tuple[float, float]) -> LossTerms:
    """(1 - alpha) * CE + alpha * BL with the epoch-scheduled alpha."""
    p = _as_prob_tensor(p)
    y = np.asarray(y)
    alpha = alpha_schedule(epoch)
    ce = smoothed_weighted_ce(p, y, weights)
    bl = boundary_loss(p, y)
    total = (1.0 - alpha) * ce + alpha * bl
    return LossTerms(ce=ce, bl=bl, alpha=alpha, total=total, class_weights=weights)
