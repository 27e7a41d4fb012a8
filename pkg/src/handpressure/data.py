"""Paired RGB / pressure data: recordings on disk, synthetic scenes, degradation.

Recording layout::

    recording/index.tsv                      frame_index timestamp_s camera_id action force_level participant [lighting]
    recording/<camera_id>/<frame_index>.png  8-bit RGB
    recording/pressure/<frame_index>.pvp1    sensor-space pressure
    recording/calib/<camera_id>.txt          sensor -> camera homography (9 decimals)
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np

from handpressure.core import CAMERA, P_CONTACT_KPA, P_MAX_KPA, SENSOR, PressureImage, read_pvp1, write_pvp1
from handpressure.errors import InvalidArgument, LoadError
from handpressure.geometry import Homography, read_homography, warp_pressure, write_homography

log = logging.getLogger(__name__)

FORCE_LEVELS = ("none", "low", "high")
INDEX_COLUMNS = ("frame_index", "timestamp_s", "camera_id", "action", "force_level", "participant", "lighting")


@dataclass(frozen=True)
class FrameMeta:
    action: str = ""
    force_level: str = "none"
    participant: str = ""
    camera: str = "cam0"
    lighting: str = ""
    timestamp: float = 0.0
    pressure_timestamp: float | None = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise InvalidArgument("timestamp must be non-negative")


@dataclass(eq=False)
class FrameSample:
    rgb: np.ndarray  # (H, W, 3) uint8
    pressure_gt: PressureImage  # camera space
    homography: Homography
    meta: FrameMeta
    masks: dict = field(default_factory=dict)  # synthetic only: "hand", "shadow"

    def __post_init__(self):
        if self.rgb.shape[:2] != self.pressure_gt.values.shape:
            raise InvalidArgument(f"rgb {self.rgb.shape[:2]} and pressure {self.pressure_gt.values.shape} differ in size")


# -- synthetic scenes -----------------------------------------------------------


@dataclass(frozen=True)
class PressPrimitive:
    """A fingertip. ``peak`` > 0 presses with a paraboloid profile; 0 hovers."""

    center: tuple[float, float]  # (x, y) px
    radius: float  # px
    peak: float  # kPa
    orientation: float = 0.0  # rad, long axis of the pad
    aspect: float = 1.0  # minor / major radius of the pad


@dataclass(frozen=True)
class HandParams:
    palm_center: tuple[float, float]
    palm_radii: tuple[float, float]
    palm_angle: float
    finger_width: float  # px, full width
    skin: tuple[float, float, float]  # RGB 0..255
    palm_height: float = 8.0  # px above the surface
    knuckle_height: float = 5.0
    hover_height: float = 4.0


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple[PressPrimitive, ...]
    hand: HandParams
    light_dir: tuple[float, float] = (0.4, 0.3)  # shadow offset per px of height
    albedo: tuple[float, float, float] = (150.0, 160.0, 170.0)
    brightness: float = 1.0
    width: int = 64
    height: int = 64
    pixel_pitch: float = 1.5e-3
    seed: int = 0
    meta: FrameMeta = FrameMeta()


def _segment_distance(xs, ys, a, b):
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    length2 = dx * dx + dy * dy
    t = np.clip(((xs - ax) * dx + (ys - ay) * dy) / max(length2, 1e-12), 0.0, 1.0)
    return np.hypot(xs - ax - t * dx, ys - ay - t * dy), t


def _ellipse_field(xs, ys, center, radii, angle):
    c, s = math.cos(angle), math.sin(angle)
    u = (xs - center[0]) * c + (ys - center[1]) * s
    v = -(xs - center[0]) * s + (ys - center[1]) * c
    return np.sqrt((u / radii[0]) ** 2 + (v / radii[1]) ** 2)


def _blur(mask, sigma):
    if sigma <= 0.05:
        return mask
    return cv2.GaussianBlur(mask, (0, 0), sigmaX=sigma, sigmaY=sigma, borderType=cv2.BORDER_REPLICATE)


def _validate(spec: SceneSpec):
    if spec.width < 8 or spec.height < 8:
        raise InvalidArgument("canvas must be at least 8x8")
    for p in spec.primitives:
        if not p.radius > 0:
            raise InvalidArgument("primitive radius must be positive")
        if not p.peak >= 0:
            raise InvalidArgument("primitive peak pressure must be non-negative")
        if not 0 < p.aspect <= 1:
            raise InvalidArgument("primitive aspect must be in (0, 1]")
        x, y = p.center
        if x - p.radius < -0.5 or y - p.radius < -0.5 or x + p.radius > spec.width - 0.5 or y + p.radius > spec.height - 0.5:
            raise InvalidArgument(f"primitive at {p.center} with radius {p.radius} leaves the canvas")


def render_pressure(spec: SceneSpec) -> np.ndarray:
    """Paraboloid caps q * (1 - (r/R)^2), centered on the nearest pixel; overlaps take the max."""
    ys, xs = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    out = np.zeros((spec.height, spec.width))
    for p in spec.primitives:
        if p.peak <= 0:
            continue
        cx, cy = round(p.center[0]), round(p.center[1])
        rho = _ellipse_field(xs, ys, (cx, cy), (p.radius, p.radius * p.aspect), p.orientation)
        out = np.maximum(out, p.peak * np.clip(1.0 - rho**2, 0.0, None))
    return out


BLANCH_RGB = np.array([246.0, 232.0, 226.0])


def synthesize_sample(spec: SceneSpec) -> FrameSample:
    """Render a top-down view of a hand over a surface, plus its ground-truth pressure.

    Cues: pressed fingertips blanch with pressure, their pads widen with peak
    pressure, and their shadows contract and sharpen toward the contact
    point. Hovering fingertips cast offset, diffuse shadows.
    """
    _validate(spec)
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    hand = spec.hand
    light = np.asarray(spec.light_dir, dtype=np.float64)

    texture = _blur(rng.normal(0.0, 1.0, (h, w)).astype(np.float32), 2.0 * w / 64).astype(np.float64)
    texture *= 6.0 / max(texture.std(), 1e-6)
    surface = np.asarray(spec.albedo)[None, None, :] + texture[..., None]

    pressure = render_pressure(spec)
    palm_field = _ellipse_field(xs, ys, hand.palm_center, hand.palm_radii, hand.palm_angle)
    hand_alpha = np.clip((1.0 - palm_field) * min(hand.palm_radii) + 0.5, 0.0, 1.0)
    thickness = np.clip(1.0 - palm_field, 0.0, 1.0)
    shadow_shift = hand.palm_height * light
    shadow = _blur(
        np.clip((1.0 - _ellipse_field(xs - shadow_shift[0], ys - shadow_shift[1], hand.palm_center, hand.palm_radii,
                                      hand.palm_angle)) * min(hand.palm_radii) + 0.5, 0, 1).astype(np.float32),
        0.6 + 0.2 * hand.palm_height).astype(np.float64)

    half = hand.finger_width / 2.0
    pcx, pcy = hand.palm_center
    for p in spec.primitives:
        tip = np.asarray(p.center, dtype=np.float64)
        direction = tip - np.array([pcx, pcy])
        direction /= max(np.linalg.norm(direction), 1e-9)
        knuckle = np.array([pcx, pcy]) + direction * hand.palm_radii[0] * 0.8
        pressing = p.peak > 0
        tip_z = 0.0 if pressing else hand.hover_height
        # pad widening: the fingertip swells up to the pressed pad radius
        pad = max(half, p.radius * (1.0 + 0.25 * min(p.peak / P_MAX_KPA, 1.0))) if pressing else half
        dist, _ = _segment_distance(xs, ys, knuckle, tip)
        tip_dist = _ellipse_field(xs, ys, tuple(tip), (pad, pad * max(p.aspect, 0.8)), p.orientation) * pad
        d = np.minimum(dist - half, tip_dist - pad)
        hand_alpha = np.maximum(hand_alpha, np.clip(0.5 - d, 0.0, 1.0))
        thickness = np.maximum(thickness, np.clip(-d / half, 0.0, 1.0))

        k_shift = knuckle + hand.knuckle_height * light
        t_shift = tip + tip_z * light
        sd, st = _segment_distance(xs, ys, k_shift, t_shift)
        z_along = hand.knuckle_height + (tip_z - hand.knuckle_height) * st
        finger_shadow = np.clip(half + 0.5 - sd, 0.0, 1.0).astype(np.float32)
        sigma_tip = 0.5 + 0.35 * tip_z
        sharp = _blur(finger_shadow, sigma_tip).astype(np.float64)
        soft = _blur(finger_shadow, 0.5 + 0.35 * hand.knuckle_height).astype(np.float64)
        mix = np.clip(z_along / max(hand.knuckle_height, 1e-6), 0.0, 1.0)
        shadow = np.maximum(shadow, sharp * (1 - mix) + soft * mix)

    shade = 0.78 + 0.22 * np.sqrt(thickness)
    skin = np.asarray(hand.skin)[None, None, :] * shade[..., None]
    blanch = np.where(pressure > 0, 0.2 + 0.6 * np.log1p(pressure) / math.log1p(P_MAX_KPA), 0.0)
    blanch = np.clip(blanch, 0.0, 0.85)[..., None]
    skin = skin * (1 - blanch) + BLANCH_RGB[None, None, :] * blanch

    lit = surface * (1.0 - 0.45 * shadow[..., None])
    img = lit * (1 - hand_alpha[..., None]) + skin * hand_alpha[..., None]
    # pixels the hand or its shadow shifts by at least half a gray level
    touched = np.abs(img - surface).max(axis=-1) * spec.brightness >= 0.5
    img = img * spec.brightness + rng.normal(0.0, 2.0, img.shape)
    rgb = np.clip(np.rint(img), 0, 255).astype(np.uint8)

    gt = PressureImage(pressure, space=CAMERA, pixel_pitch=spec.pixel_pitch)
    masks = {"hand": hand_alpha > 0.5, "shadow": (shadow > 0.05) & (hand_alpha <= 0.5), "coverage": touched}
    return FrameSample(rgb, gt, Homography.identity(), spec.meta, masks)


# -- scene sampling ---------------------------------------------------------------

SKIN_TONES = (
    (236, 196, 172), (224, 178, 150), (210, 160, 130), (198, 146, 112), (184, 130, 98),
    (168, 116, 86), (152, 102, 74), (138, 92, 66), (122, 80, 58), (106, 70, 50),
    (230, 188, 160), (160, 110, 80), (214, 170, 140), (130, 86, 62),
)
ACTIONS = {"point": 1, "two_finger": 2, "three_finger": 3, "four_finger": 4}


@dataclass(frozen=True)
class Persona:
    """A synthetic participant: skin tone and hand proportions."""

    name: str
    skin: tuple[float, float, float]
    hand_scale: float

    @classmethod
    def make(cls, index: int) -> "Persona":
        rng = np.random.default_rng(10_000 + index)
        skin = SKIN_TONES[index % len(SKIN_TONES)]
        return cls(f"p{index:02d}", tuple(float(c) for c in skin), float(rng.uniform(0.9, 1.1)))


def _sample_peak(rng, force_level):
    if force_level == "low":
        return float(np.exp(rng.uniform(np.log(2.0), np.log(12.0))))
    return float(np.exp(rng.uniform(np.log(12.0), np.log(80.0))))


def random_scene(rng: np.random.Generator, persona: Persona, action: str | None = None,
                 force_level: str | None = None, size=(64, 64), seed: int | None = None,
                 timestamp: float = 0.0, camera: str = "cam0") -> SceneSpec:
    """Draw a plausible scene for ``persona``; the hand enters from a random side."""
    w, h = size
    scale = min(w, h) / 64.0 * persona.hand_scale
    action = action or str(rng.choice(list(ACTIONS)))
    force_level = force_level or str(rng.choice(FORCE_LEVELS, p=[0.35, 0.3, 0.35]))
    n_fingers = ACTIONS[action]
    half_w = 5.0 * scale
    for _ in range(200):
        phi = rng.uniform(0, 2 * np.pi)
        direction = np.array([math.cos(phi), math.sin(phi)])
        center = np.array([w / 2, h / 2]) + rng.uniform(-0.1, 0.1, 2) * [w, h]
        palm_center = center - direction * 0.62 * min(w, h)
        radii = (17.0 * scale, 14.0 * scale)
        spread = 0.28 if n_fingers > 1 else 0.0
        offsets = np.linspace(-spread * (n_fingers - 1) / 2, spread * (n_fingers - 1) / 2, n_fingers)
        offsets = offsets + rng.normal(0, 0.05, n_fingers)
        pressing = np.ones(n_fingers, bool) if force_level != "none" else np.zeros(n_fingers, bool)
        if force_level != "none" and n_fingers > 1:
            pressing = rng.random(n_fingers) < 0.7
            pressing[rng.integers(n_fingers)] = True
        prims = []
        for off, press in zip(offsets, pressing):
            ang = phi + off
            reach = rng.uniform(0.78, 0.95) * min(w, h)
            tip = palm_center + np.array([math.cos(ang), math.sin(ang)]) * reach
            peak = _sample_peak(rng, force_level) if press else 0.0
            radius = half_w * (0.85 + 0.45 * peak / P_MAX_KPA) * rng.uniform(0.95, 1.1) if press else half_w
            prims.append(PressPrimitive((float(tip[0]), float(tip[1])), float(radius), peak,
                                        orientation=float(ang), aspect=float(rng.uniform(0.8, 1.0))))
        margin_ok = all(
            p.center[0] - p.radius >= 1 and p.center[1] - p.radius >= 1
            and p.center[0] + p.radius <= w - 2 and p.center[1] + p.radius <= h - 2 for p in prims)
        if margin_ok:
            break
    else:
        raise RuntimeError("could not place fingertips inside the canvas")
    hand = HandParams(
        palm_center=(float(palm_center[0]), float(palm_center[1])),
        palm_radii=radii,
        palm_angle=float(phi),
        finger_width=2 * half_w,
        skin=persona.skin,
        palm_height=float(rng.uniform(7, 11) * scale),
        knuckle_height=float(rng.uniform(4, 6) * scale),
        hover_height=float(rng.uniform(3, 7) * scale),
    )
    light_ang = rng.uniform(0, 2 * np.pi)
    light = rng.uniform(0.35, 0.6) * np.array([math.cos(light_ang), math.sin(light_ang)])
    lighting = int(rng.integers(4))
    meta = FrameMeta(action=action, force_level=force_level, participant=persona.name, camera=camera,
                     lighting=f"l{lighting}", timestamp=timestamp)
    return SceneSpec(
        primitives=tuple(prims),
        hand=hand,
        light_dir=(float(light[0]), float(light[1])),
        albedo=tuple(float(v) for v in rng.uniform(110, 190) + rng.uniform(-15, 15, 3)),
        brightness=float(0.85 + 0.1 * lighting + rng.uniform(-0.03, 0.03)),
        width=w,
        height=h,
        pixel_pitch=0.096 / w,
        seed=int(rng.integers(2**31)) if seed is None else seed,
        meta=meta,
    )


def stroke_scenes(persona: Persona, n_frames: int, size=(64, 64), seed: int = 0, peak: float = 30.0):
    """A single fingertip pressing while it slides along a straight stroke."""
    rng = np.random.default_rng(seed)
    base = random_scene(rng, persona, action="point", force_level="high", size=size, seed=seed)
    w, h = size
    tip0 = np.array(base.primitives[0].center)
    radius = base.hand.finger_width / 2 * 1.1
    ang = rng.uniform(0, 2 * np.pi)
    step = np.array([math.cos(ang), math.sin(ang)]) * 0.3 * min(w, h) / max(n_frames - 1, 1)
    start = tip0 - step * (n_frames - 1) / 2
    lo, hi = radius + 1, np.array([w, h]) - radius - 2
    scenes = []
    for i in range(n_frames):
        tip = np.clip(start + step * i, lo, hi)
        shift = tip - tip0
        hand = replace(base.hand, palm_center=tuple(float(v) for v in np.array(base.hand.palm_center) + shift))
        prim = replace(base.primitives[0], center=(float(tip[0]), float(tip[1])), radius=float(radius), peak=peak)
        meta = replace(base.meta, timestamp=i / 15.0, action="stroke")
        scenes.append(replace(base, primitives=(prim,), hand=hand, seed=seed * 1000 + i, meta=meta))
    return scenes


# -- recordings ------------------------------------------------------------------


def write_recording(root, samples) -> list[Path]:
    """Write samples in the recording layout. Pressure is stored in sensor space
    together with each camera's homography. Returns the files written."""
    root = Path(root)
    (root / "pressure").mkdir(parents=True, exist_ok=True)
    (root / "calib").mkdir(exist_ok=True)
    written = []
    calibs = {}
    rows = []
    for i, s in enumerate(sorted(samples, key=lambda s: s.meta.timestamp)):
        idx = f"{i:06d}"
        cam = s.meta.camera
        cam_dir = root / cam
        cam_dir.mkdir(exist_ok=True)
        png = cam_dir / f"{idx}.png"
        if not cv2.imwrite(str(png), cv2.cvtColor(s.rgb, cv2.COLOR_RGB2BGR)):
            raise OSError(f"could not write {png}")
        sensor = PressureImage(s.pressure_gt.values.astype(np.float32), space=SENSOR,
                               pixel_pitch=s.pressure_gt.pixel_pitch)
        if not np.allclose(s.homography.matrix, np.eye(3)):
            raise InvalidArgument("only samples registered with the identity homography can be exported")
        pvp = root / "pressure" / f"{idx}.pvp1"
        write_pvp1(pvp, sensor)
        calibs.setdefault(cam, s.homography)
        m = s.meta
        rows.append((idx, repr(float(m.timestamp)), cam, m.action, m.force_level, m.participant, m.lighting))
        written += [png, pvp]
    for cam, hom in calibs.items():
        path = root / "calib" / f"{cam}.txt"
        write_homography(path, hom)
        written.append(path)
    index = root / "index.tsv"
    with open(index, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(INDEX_COLUMNS)
        writer.writerows(rows)
    written.append(index)
    return written


def read_index(root):
    root = Path(root)
    index = root / "index.tsv"
    if not index.exists():
        raise LoadError(index, "missing index file")
    lines = index.read_text().splitlines()
    if not lines:
        return []
    reader = csv.DictReader(lines, delimiter="\t")
    missing = set(INDEX_COLUMNS[:6]) - set(reader.fieldnames or ())
    if missing:
        raise LoadError(index, f"missing columns {sorted(missing)}")
    rows = list(reader)
    return rows


def load_recording(root):
    """Yield :class:`FrameSample` objects in timestamp order."""
    root = Path(root)
    rows = read_index(root)
    try:
        rows.sort(key=lambda r: float(r["timestamp_s"]))
    except ValueError as exc:
        raise LoadError(root / "index.tsv", f"bad timestamp: {exc}") from None
    calibs = {}
    for row in rows:
        cam = row["camera_id"]
        if cam not in calibs:
            calibs[cam] = read_homography(root / "calib" / f"{cam}.txt")
        hom = calibs[cam]
        png = root / cam / f"{row['frame_index']}.png"
        bgr = cv2.imread(str(png), cv2.IMREAD_COLOR)
        if bgr is None:
            raise LoadError(png, "unreadable image")
        rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
        pvp = root / "pressure" / f"{row['frame_index']}.pvp1"
        sensor = read_pvp1(pvp)
        if sensor.space != SENSOR:
            raise LoadError(pvp, "pressure frames must be stored in sensor space")
        gt = warp_pressure(sensor, hom, rgb.shape[1], rgb.shape[0])
        if gt.values.shape != rgb.shape[:2]:
            raise LoadError(root / "calib" / f"{cam}.txt", "calibration does not match image size")
        meta = FrameMeta(action=row["action"], force_level=row["force_level"], participant=row["participant"],
                         camera=cam, lighting=row.get("lighting") or "", timestamp=float(row["timestamp_s"]))
        yield FrameSample(rgb, gt, hom, meta)


@dataclass
class FrameSet:
    """A recording held in memory as stacked arrays, ready for training."""

    images: np.ndarray  # (N, H, W, 3) uint8
    pressures: np.ndarray  # (N, H, W) float32, kPa
    metas: list
    pixel_pitch: float | None = None

    def __len__(self):
        return len(self.metas)

    def subset(self, indices) -> "FrameSet":
        indices = np.asarray(indices, dtype=np.int64)
        return FrameSet(self.images[indices], self.pressures[indices], [self.metas[i] for i in indices],
                        self.pixel_pitch)

    def participants(self):
        return sorted({m.participant for m in self.metas})

    def select_participants(self, names) -> "FrameSet":
        names = set(names)
        return self.subset([i for i, m in enumerate(self.metas) if m.participant in names])

    def samples(self):
        for img, p, m in zip(self.images, self.pressures, self.metas):
            yield FrameSample(img, PressureImage(p, space=CAMERA, pixel_pitch=self.pixel_pitch),
                              Homography.identity(), m)

    @classmethod
    def from_samples(cls, samples) -> "FrameSet":
        samples = list(samples)
        if not samples:
            return cls(np.zeros((0, 0, 0, 3), np.uint8), np.zeros((0, 0, 0), np.float32), [])
        return cls(np.stack([s.rgb for s in samples]),
                   np.stack([s.pressure_gt.values.astype(np.float32) for s in samples]),
                   [s.meta for s in samples], samples[0].pressure_gt.pixel_pitch)


def load_frameset(root) -> FrameSet:
    return FrameSet.from_samples(load_recording(root))


def split_by_participant(participants, test, val_fraction=0.2, seed=0):
    """Partition participant names into disjoint (train, val, test) lists."""
    test = sorted(set(test))
    rest = sorted(set(participants) - set(test))
    rng = np.random.default_rng(seed)
    rng.shuffle(rest)
    n_val = int(round(val_fraction * len(rest))) if len(rest) > 1 else 0
    return sorted(rest[n_val:]), sorted(rest[:n_val]), test


# -- synchronization ----------------------------------------------------------------


def synchronize_and_subsample(pressure_stream, frame_stream, rate: float = 15.0,
                              homography: Homography | None = None, meta: FrameMeta | None = None):
    """Pair RGB frames with the nearest pressure frame and subsample to ``rate`` Hz.

    Streams are iterables of ``(timestamp_s, payload)``. Output times are
    ``t0 + k / rate`` over the overlap of the two streams (both ends
    inclusive); each picks the nearest RGB frame, which is then paired with
    the pressure frame nearest to it.
    """
    if not rate > 0:
        raise InvalidArgument("rate must be positive")
    pressures = sorted(pressure_stream, key=lambda x: x[0])
    frames = sorted(frame_stream, key=lambda x: x[0])
    if not pressures or not frames:
        warnings.warn("empty input stream; nothing to synchronize", stacklevel=2)
        return []
    pt = np.array([t for t, _ in pressures], dtype=np.float64)
    ft = np.array([t for t, _ in frames], dtype=np.float64)
    start, end = max(pt[0], ft[0]), min(pt[-1], ft[-1])
    if start > end:
        warnings.warn("pressure and RGB streams do not overlap in time", stacklevel=2)
        return []
    hom = homography or Homography.identity()
    base = meta or FrameMeta()
    n = int(math.floor((end - start) * rate + 1e-9)) + 1
    out = []
    last_frame = -1
    for k in range(n):
        t = start + k / rate
        fi = _nearest(ft, t)
        if fi == last_frame:
            continue
        last_frame = fi
        pi = _nearest(pt, ft[fi])
        rgb = np.asarray(frames[fi][1])
        sensor = pressures[pi][1]
        gt = warp_pressure(sensor, hom, rgb.shape[1], rgb.shape[0])
        m = replace(base, timestamp=float(ft[fi]), pressure_timestamp=float(pt[pi]))
        out.append(FrameSample(rgb, gt, hom, m))
    return out


def _nearest(times, t):
    i = int(np.searchsorted(times, t))
    if i == 0:
        return 0
    if i == len(times):
        return len(times) - 1
    return i if times[i] - t < t - times[i - 1] else i - 1


# -- degradation ------------------------------------------------------------------


@dataclass(frozen=True)
class DegradeSpec:
    mode: str  # "resolution" or "monochrome"
    target: tuple[int, int] | None = None  # (width, height) for resolution mode


def degrade(img: np.ndarray, d: DegradeSpec) -> np.ndarray:
    """Reduce image quality while keeping its shape (so the network input is unchanged)."""
    img = np.asarray(img)
    if d.mode == "monochrome":
        lum = cv2.cvtColor(img, cv2.COLOR_RGB2GRAY)
        return np.repeat(lum[..., None], 3, axis=2)
    if d.mode != "resolution":
        raise InvalidArgument(f"unknown degrade mode {d.mode!r}")
    if d.target is None:
        raise InvalidArgument("resolution mode needs target dims")
    tw, th = int(d.target[0]), int(d.target[1])
    h, w = img.shape[:2]
    if tw <= 0 or th <= 0:
        raise InvalidArgument("target dims must be positive")
    if tw > w or th > h:
        raise InvalidArgument(f"target {tw}x{th} exceeds native {w}x{h}")
    if (tw, th) == (w, h):
        return img.copy()
    small = cv2.resize(img, (tw, th), interpolation=cv2.INTER_LINEAR)
    return cv2.resize(small, (w, h), interpolation=cv2.INTER_LINEAR)


def synthesize_dataset(out_dir, n_scenes: int, seed: int = 0, n_personas: int = 12, size=(64, 64)):
    """Generate ``n_scenes`` scenes spread evenly over personas and write a recording.

    Every scene's seed derives from ``(seed, index)`` alone, so the output does
    not depend on how generation is scheduled.
    """
    personas = [Persona.make(i) for i in range(n_personas)]
    samples = []
    for i in range(n_scenes):
        rng = np.random.default_rng([seed, i])
        spec = random_scene(rng, personas[i % n_personas], size=size, timestamp=i / 15.0)
        samples.append(synthesize_sample(spec))
    return write_recording(out_dir, samples)


def contact_present(spec: SceneSpec, threshold: float = P_CONTACT_KPA) -> bool:
    return any(p.peak > threshold for p in spec.primitives)
