"""Occlusion sensitivity of a trained estimator.

Each grid cell is replaced by its mean color; the cell's sensitivity is the L2
norm of the resulting change in predicted pressure (kPa, after dequantizing the
argmax bins). Maps are min-max normalized per image.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from handpressure.core import CAMERA, PressureBinning, PressureImage, dequantize, make_binning, write_pvp1
from handpressure.errors import InvalidArgument


@dataclass(frozen=True, eq=False)
class SensitivityMap:
    grid: np.ndarray  # (g, g), non-negative
    normalized: bool

    def to_uint16(self) -> np.ndarray:
        g = self.grid if self.normalized else np.zeros_like(self.grid)
        return np.rint(np.clip(g, 0, 1) * 65535).astype(np.uint16)

    def upsample(self, width: int, height: int) -> np.ndarray:
        """Paint each cell's value over its pixel rectangle."""
        ys, xs = cell_edges(height, self.grid.shape[0]), cell_edges(width, self.grid.shape[1])
        rows = np.repeat(np.arange(len(ys) - 1), np.diff(ys))
        cols = np.repeat(np.arange(len(xs) - 1), np.diff(xs))
        return self.grid[rows][:, cols]


def cell_edges(length: int, cells: int) -> np.ndarray:
    """Boundaries floor(i * length / cells); every cell is non-empty when cells <= length."""
    return (np.arange(cells + 1) * length) // cells


def mean_color_replace(img: np.ndarray, rect) -> np.ndarray:
    """Copy of ``img`` with ``rect = (x0, y0, x1, y1)`` (exclusive ends) filled by its mean color.

    Integer images round the mean half-to-even.
    """
    img = np.asarray(img)
    x0, y0, x1, y1 = (int(v) for v in rect)
    if x1 <= x0 or y1 <= y0:
        raise InvalidArgument(f"empty rectangle {rect}")
    if x0 < 0 or y0 < 0 or x1 > img.shape[1] or y1 > img.shape[0]:
        raise InvalidArgument(f"rectangle {rect} outside {img.shape[1]}x{img.shape[0]} image")
    out = img.copy()
    cell = img[y0:y1, x0:x1].reshape(-1, *img.shape[2:]).astype(np.float64)
    mean = cell.mean(axis=0)
    if np.issubdtype(img.dtype, np.integer):
        mean = np.rint(mean)  # numpy rounds half to even
    out[y0:y1, x0:x1] = mean.astype(img.dtype)
    return out


def _default_predictor(model):
    from handpressure.model import predict_labels

    return lambda imgs: predict_labels(model, imgs)


def occlusion_sensitivity(model, img: np.ndarray, grid: int = 48, binning: PressureBinning | None = None,
                          predict=None, batch_size: int = 64) -> SensitivityMap:
    """Per-cell sensitivity of the predicted pressure to mean-color occlusion.

    ``predict`` maps a uint8 image batch to bin labels; it defaults to the
    argmax of ``model``. Exactly ``grid**2 + 1`` images are predicted.
    """
    if grid < 1:
        raise InvalidArgument("grid must be >= 1")
    img = np.asarray(img)
    h, w = img.shape[:2]
    if grid > min(h, w):
        raise InvalidArgument(f"grid {grid} exceeds image size {w}x{h}")
    binning = binning or getattr(model, "binning", None) or make_binning()
    predict = predict or _default_predictor(model)
    ys, xs = cell_edges(h, grid), cell_edges(w, grid)
    rects = [(xs[j], ys[i], xs[j + 1], ys[i + 1]) for i in range(grid) for j in range(grid)]

    base = dequantize(np.asarray(predict(img[None]))[0], binning).values
    scores = np.empty(len(rects))
    for start in range(0, len(rects), batch_size):
        chunk = rects[start:start + batch_size]
        labels = np.asarray(predict(np.stack([mean_color_replace(img, r) for r in chunk])))
        for k, lab in enumerate(labels):
            diff = dequantize(lab, binning).values - base
            scores[start + k] = np.sqrt((diff ** 2).sum())
    s = scores.reshape(grid, grid)
    lo, hi = s.min(), s.max()
    if hi == 0:
        return SensitivityMap(np.zeros_like(s), normalized=False)
    if hi == lo:
        return SensitivityMap(np.ones_like(s), normalized=True)
    return SensitivityMap((s - lo) / (hi - lo), normalized=True)


def export_sensitivity(smap: SensitivityMap, out_dir, stem: str = "sensitivity"):
    """Write ``<stem>.png`` (16-bit grayscale) and ``<stem>.pvp1`` (raw grid). Returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    png, raw = out_dir / f"{stem}.png", out_dir / f"{stem}.pvp1"
    if not cv2.imwrite(str(png), smap.to_uint16()):
        raise OSError(f"could not write {png}")
    write_pvp1(raw, PressureImage(smap.grid.astype(np.float64), space=CAMERA))
    return png, raw
