"""Coregistration-tolerant accuracy metrics and plot-level cover statistics.

A label positive counts as detected if any predicted positive lies in its
3x3 neighborhood (one 10 m pixel of tolerance), and symmetrically for
predicted positives, so sub-pixel misalignment between label and prediction
imagery does not register as error. No pixel is counted twice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter


@dataclass(frozen=True)
class ToleranceConfusion:
    tp: int
    fp: int
    fn: int
    tn: int

    def __add__(self, other: "ToleranceConfusion") -> "ToleranceConfusion":
        return ToleranceConfusion(
            self.tp + other.tp, self.fp + other.fp,
            self.fn + other.fn, self.tn + other.tn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _as_binary(grid, name: str) -> np.ndarray:
    arr = np.asarray(getattr(grid, "values", grid))
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must be binary")
    return arr.astype(np.int64)


def tolerant_confusion(labels, predictions) -> ToleranceConfusion:
    """Confusion counts under the one-pixel neighborhood rule.

    TP: label positives with a predicted positive within their 3x3
    neighborhood. FN: label positives with none. FP: predicted positives
    with no label positive within their 3x3 neighborhood. Neighborhoods
    truncate at borders.
    """
    y = _as_binary(labels, "labels")
    y_hat = _as_binary(predictions, "predictions")
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: labels {y.shape} vs predictions {y_hat.shape}")
    pred_near = maximum_filter(y_hat, size=3, mode="constant", cval=0)
    label_near = maximum_filter(y, size=3, mode="constant", cval=0)
    tp = int(np.sum(y * pred_near))
    fn = int(np.sum(y * (1 - pred_near)))
    fp = int(np.sum(y_hat * (1 - label_near)))
    tn = int(y.size - tp - fn - fp)
    return ToleranceConfusion(tp=tp, fp=fp, fn=fn, tn=tn)


def strict_confusion(labels, predictions) -> ToleranceConfusion:
    """Plain per-pixel confusion, for dominance comparisons."""
    y = _as_binary(labels, "labels")
    y_hat = _as_binary(predictions, "predictions")
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: labels {y.shape} vs predictions {y_hat.shape}")
    tp = int(np.sum(y * y_hat))
    fp = int(np.sum((1 - y) * y_hat))
    fn = int(np.sum(y * (1 - y_hat)))
    tn = int(np.sum((1 - y) * (1 - y_hat)))
    return ToleranceConfusion(tp=tp, fp=fp, fn=fn, tn=tn)


def users_producers(c: ToleranceConfusion) -> tuple[float | None, float | None]:
    """(user's accuracy, producer's accuracy); None flags an undefined ratio."""
    ua = c.tp / (c.tp + c.fp) if (c.tp + c.fp) > 0 else None
    pa = c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else None
    return ua, pa


def overall_accuracy(c: ToleranceConfusion) -> float | None:
    return (c.tp + c.tn) / c.total if c.total > 0 else None


def pearson_corr(x, y) -> float | None:
    """Pearson product-moment correlation; None for degenerate inputs."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-D with equal length")
    if x.size < 2:
        raise ValueError("need at least 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
    if denom == 0.0:
        return None
    return float(np.sum(xc * yc) / denom)


DECILE_EDGES = np.linspace(0.0, 1.0, 11)


def cover_decile(cover: float) -> int:
    """Decile bucket 0..9 for a cover fraction; 1.0 lands in the top bucket."""
    return min(int(cover * 10.0), 9)


def bootstrap_ci(values, n_resamples: int = 1000, seed: int = 0,
                 level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap confidence interval of the mean."""
    values = np.asarray(values, dtype=np.float64)
    rng = np.random.default_rng(seed)
    means = rng.choice(values, size=(n_resamples, values.size), replace=True).mean(axis=1)
    lo = float(np.quantile(means, (1.0 - level) / 2.0))
    hi = float(np.quantile(means, 1.0 - (1.0 - level) / 2.0))
    return lo, hi


def tree_cover_stats(labels, pred_masks, seed: int = 0) -> dict:
    """Per-plot covers, per-decile tolerant UA/PA and absolute cover error.

    Plots are bucketed by label cover decile; each bucket reports the mean
    absolute cover error with a seeded 1000-resample bootstrap 95% CI.
    """
    if len(labels) == 0:
        raise ValueError("empty dataset")
    if len(labels) != len(pred_masks):
        raise ValueError("need one prediction per label grid")
    label_covers, pred_covers, errors, deciles = [], [], [], []
    confusions = [ToleranceConfusion(0, 0, 0, 0) for _ in range(10)]
    for lab, pred in zip(labels, pred_masks):
        y = _as_binary(lab, "labels")
        y_hat = _as_binary(pred, "predictions")
        lc, pc = float(y.mean()), float(y_hat.mean())
        label_covers.append(lc)
        pred_covers.append(pc)
        errors.append(abs(pc - lc))
        d = cover_decile(lc)
        deciles.append(d)
        confusions[d] = confusions[d] + tolerant_confusion(y, y_hat)

    per_decile = []
    errors_arr = np.asarray(errors)
    deciles_arr = np.asarray(deciles)
    for d in range(10):
        mask = deciles_arr == d
        if not mask.any():
            continue
        ua, pa = users_producers(confusions[d])
        bucket_errors = errors_arr[mask]
        lo, hi = bootstrap_ci(bucket_errors, seed=seed + d)
        per_decile.append({
            "decile": d,
            "cover_range": [d / 10.0, (d + 1) / 10.0],
            "n_plots": int(mask.sum()),
            "ua": ua,
            "pa": pa,
            "abs_cover_error": float(bucket_errors.mean()),
            "ci95": [lo, hi],
        })
    return {
        "label_covers": label_covers,
        "pred_covers": pred_covers,
        "per_decile": per_decile,
        "cover_error_mean": float(errors_arr.mean()),
        "cover_error_ci95": list(bootstrap_ci(errors_arr, seed=seed)),
    }


def dataset_report(labels, pred_masks, seed: int = 0) -> dict:
    """Full evaluation report: overall tolerant metrics, decile table,
    cover error, and the cover correlation."""
    stats = tree_cover_stats(labels, pred_masks, seed=seed)
    total = ToleranceConfusion(0, 0, 0, 0)
    for lab, pred in zip(labels, pred_masks):
        total = total + tolerant_confusion(lab, pred)
    ua, pa = users_producers(total)
    report = {
        "overall": {"ua": ua, "pa": pa, "oa": overall_accuracy(total)},
        "per_decile": stats["per_decile"],
        "cover_error": {
            "mean": stats["cover_error_mean"],
            "ci95": stats["cover_error_ci95"],
        },
        "pearson": None,
    }
    covers = np.asarray(stats["label_covers"])
    if covers.size >= 2 and covers.std() > 0 and np.asarray(stats["pred_covers"]).std() > 0:
        report["pearson"] = pearson_corr(stats["label_covers"], stats["pred_covers"])
    return report
