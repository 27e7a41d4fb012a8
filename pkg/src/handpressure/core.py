"""Pressure images, log-spaced pressure bins, contact maps and force.

Pressures are in kPa throughout. Label images are plain integer arrays and
contact maps are plain boolean arrays; only pressure images carry metadata
(coordinate space and pixel pitch).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from handpressure.errors import InvalidArgument, LoadError

SENSOR_SHAPE = (105, 185)  # rows, cols
SENSOR_PITCH_M = 1.25e-3
P_MIN_KPA = 0.5
P_MAX_KPA = 82.0
N_BINS = 9
P_CONTACT_KPA = 1.0

SENSOR = "sensor"
CAMERA = "camera"
_SPACE_FLAGS = {SENSOR: 0, CAMERA: 1}

PVP1_MAGIC = b"PVP1"
_PVP1_HEADER = struct.Struct("<4sIIBf")


@dataclass(frozen=True, eq=False)
class PressureImage:
    """A 2D grid of non-negative pressures in kPa.

    ``pixel_pitch`` is the side length of one pixel in meters. Sensor-space
    images always have one; camera-space images only when an area
    calibration is known (e.g. synthetic top-down scenes).
    """

    values: np.ndarray
    space: str = SENSOR
    pixel_pitch: float | None = SENSOR_PITCH_M

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise InvalidArgument(f"pressure image must be 2D, got shape {values.shape}")
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("pressure image contains non-finite values")
        if np.any(values < 0):
            raise InvalidArgument("pressure image contains negative values")
        if self.space not in _SPACE_FLAGS:
            raise InvalidArgument(f"unknown space {self.space!r}")
        if self.pixel_pitch is not None and not self.pixel_pitch > 0:
            raise InvalidArgument("pixel pitch must be positive")
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @classmethod
    def zeros(cls, height, width, space=CAMERA, pixel_pitch=None):
        return cls(np.zeros((height, width)), space=space, pixel_pitch=pixel_pitch)


@dataclass(frozen=True)
class PressureBinning:
    edges: tuple[float, ...]
    representatives: tuple[float, ...] = field(default=())

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1

    @property
    def edge_ratio(self) -> float:
        return self.edges[2] / self.edges[1]

    def to_dict(self) -> dict:
        return {"edges": list(self.edges), "representatives": list(self.representatives)}

    @classmethod
    def from_dict(cls, d) -> "PressureBinning":
        return cls(tuple(float(e) for e in d["edges"]), tuple(float(r) for r in d["representatives"]))


def make_binning(p_min: float = P_MIN_KPA, p_max: float = P_MAX_KPA, n_bins: int = N_BINS) -> PressureBinning:
    """Bin 0 holds [0, p_min); bins 1.. have geometrically spaced edges up to p_max."""
    if not (isinstance(n_bins, (int, np.integer)) and n_bins >= 2):
        raise InvalidArgument(f"n_bins must be an integer >= 2, got {n_bins!r}")
    if not (math.isfinite(p_min) and math.isfinite(p_max) and 0 < p_min < p_max):
        raise InvalidArgument(f"need 0 < p_min < p_max, got p_min={p_min}, p_max={p_max}")
    steps = n_bins - 1
    log_edges = [p_min * (p_max / p_min) ** (k / steps) for k in range(steps + 1)]
    log_edges[0], log_edges[-1] = float(p_min), float(p_max)
    edges = (0.0, *log_edges)
    reps = (0.0, *(math.sqrt(lo * hi) for lo, hi in zip(edges[1:-1], edges[2:])))
    return PressureBinning(edges, reps)


def _pressure_array(p) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument("pressure contains non-finite values")
    if np.any(arr < 0):
        raise InvalidArgument("pressure contains negative values")
    return arr


def quantize(p, b: PressureBinning) -> np.ndarray:
    """Map pressures to bin labels; values above the last edge land in the last bin."""
    arr = _pressure_array(p)
    inner = np.asarray(b.edges[1:-1])
    return np.searchsorted(inner, arr, side="right").astype(np.int64)


def dequantize(labels, b: PressureBinning, space: str = CAMERA, pixel_pitch: float | None = None) -> PressureImage:
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise InvalidArgument("labels must be integers")
    if labels.size and (labels.min() < 0 or labels.max() >= b.n_bins):
        raise InvalidArgument(f"labels must lie in [0, {b.n_bins - 1}]")
    reps = np.asarray(b.representatives, dtype=np.float64)
    return PressureImage(reps[labels], space=space, pixel_pitch=pixel_pitch)


def contact_map(p, threshold: float = P_CONTACT_KPA) -> np.ndarray:
    """Pixels with pressure strictly greater than ``threshold`` (kPa)."""
    if not threshold >= 0:
        raise InvalidArgument(f"threshold must be >= 0, got {threshold}")
    return _pressure_array(p) > threshold


def total_force(p: PressureImage) -> float:
    """Normal force in newtons: sum of pressure (Pa) times pixel area."""
    if not isinstance(p, PressureImage):
        raise InvalidArgument("total_force needs a PressureImage carrying its pixel pitch")
    if p.pixel_pitch is None:
        raise InvalidArgument(f"{p.space}-space image has no area calibration")
    return float(np.sum(p.values, dtype=np.float64) * 1e3 * p.pixel_pitch**2)


# -- PVP1 binary format -------------------------------------------------------


def encode_pvp1(p: PressureImage) -> bytes:
    pitch = 0.0 if p.pixel_pitch is None else p.pixel_pitch
    header = _PVP1_HEADER.pack(PVP1_MAGIC, p.width, p.height, _SPACE_FLAGS[p.space], pitch)
    return header + np.ascontiguousarray(p.values, dtype="<f4").tobytes()


def decode_pvp1(buf: bytes, source="<bytes>") -> PressureImage:
    if len(buf) < _PVP1_HEADER.size:
        raise LoadError(source, "truncated PVP1 header")
    magic, width, height, flag, pitch = _PVP1_HEADER.unpack_from(buf)
    if magic != PVP1_MAGIC:
        raise LoadError(source, f"bad magic {magic!r}")
    if flag not in (0, 1):
        raise LoadError(source, f"bad space flag {flag}")
    expected = _PVP1_HEADER.size + 4 * width * height
    if len(buf) != expected:
        raise LoadError(source, f"expected {expected} bytes for {width}x{height}, found {len(buf)}")
    values = np.frombuffer(buf, dtype="<f4", offset=_PVP1_HEADER.size).reshape(height, width)
    space = SENSOR if flag == 0 else CAMERA
    try:
        return PressureImage(values.astype(np.float32), space=space, pixel_pitch=float(pitch) if pitch > 0 else None)
    except InvalidArgument as exc:
        raise LoadError(source, str(exc)) from None


def write_pvp1(path, p: PressureImage) -> None:
    Path(path).write_bytes(encode_pvp1(p))


def read_pvp1(path) -> PressureImage:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise LoadError(path, exc.strerror or str(exc)) from None
    return decode_pvp1(buf, source=path)
