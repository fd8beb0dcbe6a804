"""Scene-flow metrics: Three-way EPE, speed-bucketed EPE, dynamic IoU.

All functions are pure numpy over aligned per-point arrays and are
permutation invariant. A point is dynamic when its ground-truth speed is
at least 0.5 m/s; one sweep interval (0.1 s) converts between per-interval
displacements and speeds. Empty categories are reported as None and
excluded from averages rather than silently zeroed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenes import CLASS_NAMES, SWEEP_INTERVAL

DYNAMIC_SPEED = 0.5  # m/s

FOREGROUND_CLASSES = CLASS_NAMES[1:]


def endpoint_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return np.linalg.norm(pred - gt, axis=1)


def _mean_or_none(values: np.ndarray, mask: np.ndarray):
    return float(values[mask].mean()) if mask.any() else None


@dataclass
class ThreeWayResult:
    """Mean EPE over dynamic-foreground, static-background, static-foreground."""

    fd: float | None
    bs: float | None
    fs: float | None

    @property
    def avg(self) -> float | None:
        present = [v for v in (self.fd, self.bs, self.fs) if v is not None]
        return float(np.mean(present)) if present else None

    @property
    def missing(self) -> tuple[str, ...]:
        return tuple(n for n, v in (("fd", self.fd), ("bs", self.bs), ("fs", self.fs)) if v is None)

    def to_dict(self) -> dict:
        return {"fd": self.fd, "bs": self.bs, "fs": self.fs, "avg": self.avg, "missing": list(self.missing)}


def three_way_epe(pred, gt, class_id, gt_speed) -> ThreeWayResult:
    """Category means; dynamic iff gt_speed >= 0.5 m/s, foreground iff class != 0."""
    err = endpoint_errors(pred, gt)
    class_id = np.asarray(class_id)
    dynamic = np.asarray(gt_speed) >= DYNAMIC_SPEED
    foreground = class_id != 0
    return ThreeWayResult(
        fd=_mean_or_none(err, foreground & dynamic),
        bs=_mean_or_none(err, ~foreground & ~dynamic),
        fs=_mean_or_none(err, foreground & ~dynamic),
    )


@dataclass
class BucketConfig:
    """Speed bucketing: dynamic points fall in [min_speed + k*width, ...)."""

    min_speed: float = 0.4  # m/s; below this a point counts as static
    width: float = 0.4
    dt: float = SWEEP_INTERVAL

    def bucket_of(self, speed: np.ndarray) -> np.ndarray:
        return np.floor((np.asarray(speed) - self.min_speed) / self.width).astype(np.int64)


@dataclass
class BucketResult:
    per_class: dict[str, float | None]
    mean_static: float | None

    @property
    def mean_dynamic(self) -> float | None:
        present = [v for v in self.per_class.values() if v is not None]
        return float(np.mean(present)) if present else None

    def to_dict(self) -> dict:
        return {
            "per_class": dict(self.per_class),
            "mean_dynamic": self.mean_dynamic,
            "mean_static": self.mean_static,
        }


def bucket_normalized_epe(pred, gt, class_id, gt_speed, cfg: BucketConfig | None = None) -> BucketResult:
    """Per-class speed-normalized dynamic error plus plain static EPE.

    Within each speed bucket the error is mean EPE divided by the bucket's
    mean per-interval displacement (mean speed times dt); a class scores the
    mean over its non-empty buckets, so slow and fast movers weigh equally.
    """
    cfg = cfg or BucketConfig()
    err = endpoint_errors(pred, gt)
    class_id = np.asarray(class_id)
    speed = np.asarray(gt_speed, dtype=np.float64)
    dynamic = speed >= cfg.min_speed
    per_class: dict[str, float | None] = {}
    for ci, name in enumerate(FOREGROUND_CLASSES, start=1):
        sel = (class_id == ci) & dynamic
        if not sel.any():
            per_class[name] = None
            continue
        buckets = cfg.bucket_of(speed[sel])
        scores = []
        for b in np.unique(buckets):
            in_b = buckets == b
            norm = speed[sel][in_b].mean() * cfg.dt
            scores.append(err[sel][in_b].mean() / norm)
        per_class[name] = float(np.mean(scores))
    return BucketResult(per_class=per_class, mean_static=_mean_or_none(err, ~dynamic))


def dynamic_iou(pred, gt, gt_speed=None, dt: float = SWEEP_INTERVAL) -> float:
    """IoU of predicted vs true dynamic point sets (0.5 m/s threshold).

    Both sides classify independently from flow magnitude / dt; the ground
    truth side uses gt_speed when supplied. Two empty sets agree perfectly.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    pred_dyn = np.linalg.norm(pred, axis=1) / dt >= DYNAMIC_SPEED
    if gt_speed is not None:
        gt_dyn = np.asarray(gt_speed) >= DYNAMIC_SPEED
    else:
        gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
        gt_dyn = np.linalg.norm(gt, axis=1) / dt >= DYNAMIC_SPEED
    union = np.count_nonzero(pred_dyn | gt_dyn)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(pred_dyn & gt_dyn) / union)


def dynamic_static_epe(pred, gt, gt_speed) -> tuple[float | None, float | None]:
    """Mean EPE split at the 0.5 m/s dynamic threshold (history reporting)."""
    err = endpoint_errors(pred, gt)
    dynamic = np.asarray(gt_speed) >= DYNAMIC_SPEED
    return _mean_or_none(err, dynamic), _mean_or_none(err, ~dynamic)
