"""Sensor-to-camera registration: homography fitting, pressure warping, cropping."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import cv2
import numpy as np

from handpressure.core import CAMERA, SENSOR, PressureImage
from handpressure.errors import FitFailure, InvalidArgument, LoadError


@dataclass(frozen=True, eq=False)
class Homography:
    """Projective map from sensor-grid coordinates (x=col, y=row) to camera pixels."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise InvalidArgument("homography must be a finite 3x3 matrix")
        if abs(m[2, 2]) < 1e-12:
            raise InvalidArgument("homography with zero bottom-right entry cannot be normalized")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) < 1e-12:
            raise InvalidArgument("homography is singular")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, dx, dy) -> "Homography":
        return cls(np.array([[1.0, 0, dx], [0, 1.0, dy], [0, 0, 1.0]]))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def then(self, other: "Homography") -> "Homography":
        """Apply ``self`` first, then ``other``."""
        return Homography(other.matrix @ self.matrix)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        homog = np.c_[pts, np.ones(len(pts))] @ self.matrix.T
        return homog[:, :2] / homog[:, 2:3]


def _normalizing_transform(pts):
    centroid = pts.mean(axis=0)
    mean_dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    if mean_dist < 1e-12:
        raise FitFailure("all points coincide")
    s = np.sqrt(2) / mean_dist
    return np.array([[s, 0, -s * centroid[0]], [0, s, -s * centroid[1]], [0, 0, 1]])


def _has_collinear_triple(pts, tol=1e-9):
    scale = np.ptp(pts, axis=0).max() ** 2
    for a, b, c in combinations(range(len(pts)), 3):
        ab, ac = pts[b] - pts[a], pts[c] - pts[a]
        if abs(ab[0] * ac[1] - ab[1] * ac[0]) <= tol * scale:
            return True
    return False


def fit_homography(correspondences) -> Homography:
    """Least-squares (normalized DLT) fit from ``[(sensor_xy, camera_xy), ...]``."""
    pairs = [(np.asarray(s, float), np.asarray(c, float)) for s, c in correspondences]
    if len(pairs) < 4:
        raise FitFailure(f"need at least 4 correspondences, got {len(pairs)}")
    src = np.array([p[0] for p in pairs])
    dst = np.array([p[1] for p in pairs])
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise FitFailure("non-finite correspondence")
    if len(pairs) == 4 and (_has_collinear_triple(src) or _has_collinear_triple(dst)):
        raise FitFailure("three of four points are collinear")

    t_src, t_dst = _normalizing_transform(src), _normalizing_transform(dst)
    s = np.c_[src, np.ones(len(src))] @ t_src.T
    d = np.c_[dst, np.ones(len(dst))] @ t_dst.T
    rows = []
    for (x, y, _), (u, v, _) in zip(s, d):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    _, sing, vt = np.linalg.svd(np.asarray(rows))
    if sing[7] < 1e-10 * sing[0]:
        raise FitFailure("degenerate configuration (rank-deficient system)")
    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_norm @ t_src
    try:
        return Homography(h)
    except InvalidArgument as exc:
        raise FitFailure(str(exc)) from None


def reprojection_rms(h: Homography, correspondences) -> float:
    src = np.array([s for s, _ in correspondences], float)
    dst = np.array([c for _, c in correspondences], float)
    return float(np.sqrt(((h.apply(src) - dst) ** 2).sum(axis=1).mean()))


def bilinear_sample(grid: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``grid`` at fractional (x, y); points off the grid's footprint give 0.

    Pixel centers sit at integer coordinates, so the footprint is
    [-0.5, w - 0.5] x [-0.5, h - 0.5].
    """
    h, w = grid.shape
    inside = (xs >= -0.5) & (xs <= w - 0.5) & (ys >= -0.5) & (ys <= h - 0.5)
    x = np.clip(xs, 0, w - 1)
    y = np.clip(ys, 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    top = grid[y0, x0] * (1 - fx) + grid[y0, x1] * fx
    bottom = grid[y1, x0] * (1 - fx) + grid[y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return np.where(inside, out, 0.0)


def warp_pressure(p: PressureImage, h: Homography, out_width: int, out_height: int) -> PressureImage:
    """Resample a sensor-space pressure image onto the camera pixel grid."""
    if p.space != SENSOR:
        raise InvalidArgument("warp_pressure expects a sensor-space image")
    if not isinstance(h, Homography):
        h = Homography(h)
    inv = h.inverse().matrix
    ys, xs = np.mgrid[0:out_height, 0:out_width].astype(np.float64)
    den = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / den
        sy = (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / den
    bad = ~np.isfinite(sx) | ~np.isfinite(sy) | (den <= 0)
    sx[bad], sy[bad] = -1e9, -1e9
    out = bilinear_sample(np.asarray(p.values, dtype=np.float64), sx, sy)
    # a rigid map keeps pixel area, so the area calibration carries over
    m = h.matrix
    rigid = np.allclose(m[2], [0, 0, 1]) and np.allclose(m[:2, :2].T @ m[:2, :2], np.eye(2))
    return PressureImage(np.maximum(out, 0.0), space=CAMERA, pixel_pitch=p.pixel_pitch if rigid else None)


@dataclass(frozen=True, eq=False)
class SensorPolygon:
    """Sensor corners in camera pixels, in traversal order."""

    corners: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=np.float64)
        if c.shape != (4, 2):
            raise InvalidArgument("sensor polygon needs exactly four (x, y) corners")
        edges = np.roll(c, -1, axis=0) - c
        nxt = np.roll(edges, -1, axis=0)
        cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
        if np.any(np.abs(cross) < 1e-9) or not (np.all(cross > 0) or np.all(cross < 0)):
            raise InvalidArgument("sensor polygon must be a convex, non-degenerate quadrilateral")
        object.__setattr__(self, "corners", c)

    @classmethod
    def from_homography(cls, h: Homography, sensor_width: int, sensor_height: int) -> "SensorPolygon":
        w, hh = sensor_width - 0.5, sensor_height - 0.5
        return cls(h.apply([(-0.5, -0.5), (w, -0.5), (w, hh), (-0.5, hh)]))


def crop_and_resize(img: np.ndarray, poly: SensorPolygon, border: int = 50, out=(480, 384),
                    h: Homography | None = None):
    """Crop the polygon's bounding box plus ``border`` and resize to ``out = (width, height)``.

    Returns the resized image and the homography re-targeted to the new pixel
    grid (``h`` followed by the crop/scale map; just the crop/scale map when
    ``h`` is None).
    """
    img = np.asarray(img)
    ih, iw = img.shape[:2]
    out_w, out_h = int(out[0]), int(out[1])
    if out_w <= 0 or out_h <= 0 or border < 0:
        raise InvalidArgument("output size must be positive and border non-negative")
    lo = np.floor(poly.corners.min(axis=0)).astype(int) - border
    hi = np.ceil(poly.corners.max(axis=0)).astype(int) + border
    x0, y0 = int(lo[0]), int(lo[1])
    x1, y1 = int(hi[0]) + 1, int(hi[1]) + 1
    if x0 < 0 or y0 < 0 or x1 > iw or y1 > ih:
        raise InvalidArgument(f"crop [{x0}:{x1}, {y0}:{y1}] exceeds image bounds {iw}x{ih}")
    crop = img[y0:y1, x0:x1]
    cw, ch = x1 - x0, y1 - y0
    resized = cv2.resize(crop, (out_w, out_h), interpolation=cv2.INTER_LINEAR)
    sx, sy = out_w / cw, out_h / ch
    # cv2 resize maps pixel centers: x_out = (x_in + 0.5) * s - 0.5
    adjust = Homography(np.array([
        [sx, 0, (0.5 - x0) * sx - 0.5],
        [0, sy, (0.5 - y0) * sy - 0.5],
        [0, 0, 1],
    ]))
    return resized, adjust if h is None else h.then(adjust)


# -- calibration files ----------------------------------------------------------


def read_correspondences(path):
    pairs = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            sx, sy, cx, cy = (float(t) for t in line.split())
        except ValueError:
            raise LoadError(path, f"line {n}: expected 'sx sy cx cy'") from None
        pairs.append(((sx, sy), (cx, cy)))
    return pairs


def write_correspondences(path, pairs):
    lines = [f"{s[0]!r} {s[1]!r} {c[0]!r} {c[1]!r}" for s, c in pairs]
    Path(path).write_text("\n".join(lines) + "\n")


def write_homography(path, h: Homography):
    Path(path).write_text(" ".join(repr(float(v)) for v in h.matrix.ravel()) + "\n")


def read_homography(path) -> Homography:
    try:
        values = [float(t) for t in Path(path).read_text().split()]
    except OSError as exc:
        raise LoadError(path, exc.strerror or str(exc)) from None
    except ValueError:
        raise LoadError(path, "homography file must hold 9 decimals") from None
    if len(values) != 9:
        raise LoadError(path, f"homography file must hold 9 decimals, found {len(values)}")
    try:
        return Homography(np.array(values).reshape(3, 3))
    except InvalidArgument as exc:
        raise LoadError(path, str(exc)) from None
