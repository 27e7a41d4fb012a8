"""Contact and pressure metrics with dataset-level pooling.

All IoU-style metrics pool numerators and denominators over every frame
before dividing. A ratio whose pooled denominator is zero is *undefined* and
is returned as ``None``; it is never silently reported as 0 or 1.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

from handpressure.core import CAMERA, P_CONTACT_KPA, PressureImage, total_force
from handpressure.errors import InvalidArgument

METRICS = ("temporal_accuracy", "contact_iou", "volumetric_iou", "mae")


def _frames(x, what="input") -> np.ndarray:
    """Stack a single image or a sequence of images into (frames, H, W)."""
    if isinstance(x, PressureImage):
        arr = x.values[None]
    elif isinstance(x, np.ndarray):
        arr = x[None] if x.ndim == 2 else x
    else:
        arr = np.stack([np.asarray(f) for f in x]) if len(x) else np.zeros((0, 0, 0))
    if arr.ndim != 3:
        raise InvalidArgument(f"{what} must be an image or a sequence of images")
    return arr


def _pair(est, gt):
    e, g = _frames(est, "estimate"), _frames(gt, "ground truth")
    if e.shape != g.shape:
        raise InvalidArgument(f"shape mismatch: estimate {e.shape} vs ground truth {g.shape}")
    return e, g


def _ratio(num, den):
    return None if den == 0 else num / den


def temporal_accuracy(est, gt) -> float:
    """Fraction of frames where "any contact" agrees between estimate and truth."""
    e, g = _pair(est, gt)
    if len(e) == 0:
        raise InvalidArgument("no frames")
    e_any = e.reshape(len(e), -1).any(axis=1)
    g_any = g.reshape(len(g), -1).any(axis=1)
    return float(np.mean(e_any == g_any))


def contact_iou(est, gt):
    e, g = _pair(est, gt)
    e, g = e.astype(bool), g.astype(bool)
    return _ratio(int(np.count_nonzero(e & g)), int(np.count_nonzero(e | g)))


def _nonneg(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise InvalidArgument("pressures must be finite and non-negative")


def volumetric_iou(est, gt):
    """Summed per-pixel minimum over summed per-pixel maximum."""
    e, g = _pair(est, gt)
    e, g = e.astype(np.float64), g.astype(np.float64)
    _nonneg(e, g)
    den = float(np.maximum(e, g).sum())
    return _ratio(float(np.minimum(e, g).sum()), den)


def mae(est, gt) -> float:
    """Mean absolute error in Pa over every pixel of every frame (inputs in kPa)."""
    e, g = _pair(est, gt)
    if e.size == 0:
        raise InvalidArgument("no pixels")
    return float(np.abs(e.astype(np.float64) - g.astype(np.float64)).mean() * 1e3)


def zero_guesser(img) -> PressureImage:
    img = np.asarray(img)
    return PressureImage.zeros(img.shape[0], img.shape[1], space=CAMERA)


@dataclass
class FrameMetricAccumulator:
    """Running sums for every metric. Mergeable: order of ``add``/``merge`` is irrelevant."""

    vol_min: float = 0.0
    vol_max: float = 0.0
    contact_inter: int = 0
    contact_union: int = 0
    frames_correct: int = 0
    frames: int = 0
    abs_err_kpa: float = 0.0
    pixels: int = 0
    gt_force: float = 0.0
    est_force: float = 0.0
    force_frames: int = 0

    def add(self, est, gt, threshold: float = P_CONTACT_KPA) -> "FrameMetricAccumulator":
        e, g = _pair(est, gt)
        e, g = e.astype(np.float64), g.astype(np.float64)
        _nonneg(e, g)
        ce, cg = e > threshold, g > threshold
        self.vol_min += float(np.minimum(e, g).sum())
        self.vol_max += float(np.maximum(e, g).sum())
        self.contact_inter += int(np.count_nonzero(ce & cg))
        self.contact_union += int(np.count_nonzero(ce | cg))
        e_any = ce.reshape(len(ce), -1).any(axis=1)
        g_any = cg.reshape(len(cg), -1).any(axis=1)
        self.frames_correct += int(np.count_nonzero(e_any == g_any))
        self.frames += len(e)
        self.abs_err_kpa += float(np.abs(e - g).sum())
        self.pixels += e.size
        if isinstance(gt, PressureImage) and gt.pixel_pitch is not None:
            self.gt_force += total_force(gt)
            self.est_force += float(e.sum() * 1e3 * gt.pixel_pitch**2)
            self.force_frames += 1
        return self

    def merge(self, other: "FrameMetricAccumulator") -> "FrameMetricAccumulator":
        out = FrameMetricAccumulator()
        for k in asdict(self):
            setattr(out, k, getattr(self, k) + getattr(other, k))
        return out

    @property
    def temporal_accuracy(self):
        return _ratio(self.frames_correct, self.frames)

    @property
    def contact_iou(self):
        return _ratio(self.contact_inter, self.contact_union)

    @property
    def volumetric_iou(self):
        return _ratio(self.vol_min, self.vol_max)

    @property
    def mae(self):
        return None if self.pixels == 0 else self.abs_err_kpa / self.pixels * 1e3

    def metrics(self) -> dict:
        out = {name: getattr(self, name) for name in METRICS}
        if self.force_frames:
            out["mean_gt_force"] = self.gt_force / self.force_frames
            out["mean_est_force"] = self.est_force / self.force_frames
        return out


@dataclass
class MetricsReport:
    temporal_accuracy: float
    contact_iou: float | None
    volumetric_iou: float | None
    mae: float
    frames: int
    groups: dict = field(default_factory=dict)  # {key: {value: {metric: x, "frames": n}}}
    extras: dict = field(default_factory=dict)

    def rows(self):
        """(metric, group, value, frames) tuples; undefined values are left out."""
        for name in METRICS:
            value = getattr(self, name)
            if value is not None:
                yield name, "all", value, self.frames
        for key, values in self.groups.items():
            for val, m in values.items():
                for name, value in m.items():
                    if name != "frames" and value is not None:
                        yield name, f"{key}={val}", value, m["frames"]

    def to_tsv(self) -> str:
        return "".join(f"{m}\t{g}\t{v!r}\t{n}\n" for m, g, v, n in self.rows())

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "MetricsReport":
        return cls(**d)


def aggregate(items, group_keys=("action", "force_level")) -> MetricsReport:
    """Pool ``(accumulator, meta)`` pairs into an overall and per-group report.

    ``meta`` may be a mapping or an object with the group keys as attributes.
    """
    items = list(items)
    if not items:
        raise InvalidArgument("aggregate needs at least one frame")
    total = FrameMetricAccumulator()
    grouped = {k: defaultdict(FrameMetricAccumulator) for k in group_keys}
    for acc, meta in items:
        total = total.merge(acc)
        for k in group_keys:
            val = meta[k] if isinstance(meta, dict) else getattr(meta, k)
            grouped[k][val] = grouped[k][val].merge(acc)
    groups = {}
    for k, by_val in grouped.items():
        groups[k] = {}
        for val in sorted(by_val):
            m = {n: v for n, v in by_val[val].metrics().items() if v is not None}
            m["frames"] = by_val[val].frames
            groups[k][val] = m
    overall = total.metrics()
    extras = {n: overall[n] for n in ("mean_gt_force", "mean_est_force") if n in overall}
    return MetricsReport(
        temporal_accuracy=overall["temporal_accuracy"],
        contact_iou=overall["contact_iou"],
        volumetric_iou=overall["volumetric_iou"],
        mae=overall["mae"],
        frames=total.frames,
        groups=groups,
        extras=extras,
    )
