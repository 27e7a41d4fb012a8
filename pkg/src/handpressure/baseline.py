"""Pose-based contact baseline: hand mesh vs. sensor plane.

The hand comes from a parametric articulated model (capsule phalanges on a
palm slab). Contact pixels are the rasterized union of mesh vertices lying on
or below the sensor plane, dilated by one pixel. Because monocular pose gives
no absolute scale, :func:`scale_sweep` searches the hand scale that best
explains the ground-truth contact over a whole sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from handpressure.errors import InvalidArgument, LoadError
from handpressure.metrics import contact_iou


@dataclass(frozen=True, eq=False)
class HandMesh:
    vertices: np.ndarray  # (V, 3) meters
    faces: np.ndarray  # (F, 3) 0-based vertex indices
    scale: float = 1.0
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)  # wrist, the fixed point of scaling

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not self.scale > 0:
            raise InvalidArgument("scale must be positive")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise InvalidArgument("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def scaled_vertices(self) -> np.ndarray:
        if self.scale == 1.0:
            return self.vertices
        o = np.asarray(self.origin, dtype=np.float64)
        return o + self.scale * (self.vertices - o)

    def with_scale(self, scale: float) -> "HandMesh":
        return replace(self, scale=scale)


@dataclass(frozen=True, eq=False)
class PlaneModel:
    """Sensor plane plus a map from in-plane coordinates (u, v, meters) to pixels."""

    point: tuple[float, float, float]
    normal: tuple[float, float, float]
    u_axis: tuple[float, float, float]
    to_pixels: np.ndarray  # 3x3, [x, y, 1] ~ M @ [u, v, 1]
    width: int
    height: int

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        u = np.asarray(self.u_axis, dtype=np.float64)
        if abs(np.linalg.norm(n) - 1) > 1e-9:
            raise InvalidArgument("plane normal must be a unit vector")
        u = u - n * (u @ n)
        if np.linalg.norm(u) < 1e-9:
            raise InvalidArgument("u axis must not be parallel to the normal")
        object.__setattr__(self, "u_axis", tuple(u / np.linalg.norm(u)))
        object.__setattr__(self, "to_pixels", np.asarray(self.to_pixels, dtype=np.float64))

    @classmethod
    def horizontal(cls, pitch: float, width: int, height: int, origin=(0.0, 0.0)) -> "PlaneModel":
        """The plane z = 0 seen top-down; pixel (0, 0) sits at ``origin`` (meters)."""
        m = np.array([[1 / pitch, 0, -origin[0] / pitch], [0, 1 / pitch, -origin[1] / pitch], [0, 0, 1]])
        return cls((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), (1.0, 0.0, 0.0), m, width, height)

    def signed_distance(self, pts) -> np.ndarray:
        return (np.asarray(pts) - np.asarray(self.point)) @ np.asarray(self.normal)

    def project(self, pts) -> np.ndarray:
        """Pixel coordinates of the orthogonal projection of ``pts`` onto the plane."""
        rel = np.asarray(pts, dtype=np.float64) - np.asarray(self.point)
        u_ax = np.asarray(self.u_axis)
        v_ax = np.cross(np.asarray(self.normal), u_ax)
        uv1 = np.c_[rel @ u_ax, rel @ v_ax, np.ones(len(rel))]
        xyw = uv1 @ self.to_pixels.T
        return xyw[:, :2] / xyw[:, 2:3]


def contact_from_mesh(mesh: HandMesh, plane: PlaneModel, eps: float = 0.0) -> np.ndarray:
    """Boolean (height, width) contact map from vertices within ``eps`` of (or below) the plane."""
    if len(mesh.vertices) == 0:
        raise InvalidArgument("mesh has no vertices")
    if eps < 0:
        raise InvalidArgument("penetration tolerance must be non-negative")
    verts = mesh.scaled_vertices()
    touching = verts[plane.signed_distance(verts) <= eps]
    out = np.zeros((plane.height, plane.width), dtype=bool)
    if len(touching):
        px = np.rint(plane.project(touching)).astype(np.int64)
        ok = (px[:, 0] >= 0) & (px[:, 0] < plane.width) & (px[:, 1] >= 0) & (px[:, 1] < plane.height)
        out[px[ok, 1], px[ok, 0]] = True
    return ndimage.binary_dilation(out, structure=np.ones((3, 3), bool))


def scale_sweep(meshes, gt_contacts, plane: PlaneModel, scale_range=(0.8, 1.2), steps: int = 81,
                eps: float = 0.0):
    """Return ``(best_scale, best_contact_iou)`` over an evenly spaced scale grid.

    IoU is pooled over the whole sequence. Ties (including every scale being
    undefined) go to the smaller scale; an all-undefined sweep returns
    ``(scale_range[0], None)``.
    """
    meshes, gts = list(meshes), [np.asarray(g, bool) for g in gt_contacts]
    if not meshes or len(meshes) != len(gts):
        raise InvalidArgument("need equal-length, non-empty mesh and contact sequences")
    lo, hi = float(scale_range[0]), float(scale_range[1])
    if not (0 < lo < hi) or steps < 2:
        raise InvalidArgument("scale range must be 0 < lo < hi with at least 2 steps")
    gt = np.stack(gts)
    best_scale, best_iou = lo, None
    for s in np.linspace(lo, hi, steps):
        est = np.stack([contact_from_mesh(m.with_scale(float(s)), plane, eps) for m in meshes])
        iou = contact_iou(est, gt)
        if iou is not None and (best_iou is None or iou > best_iou):
            best_scale, best_iou = float(s), iou
    return best_scale, best_iou


# -- cameras and vertex splatting ----------------------------------------------


@dataclass(frozen=True, eq=False)
class Camera:
    projection: np.ndarray  # 3x4, depth is the third homogeneous coordinate
    width: int
    height: int

    @classmethod
    def look_down(cls, height_m: float, focal_px: float, width: int, height: int, center_xy=(0.0, 0.0)):
        """Pinhole camera at ``height_m`` above the z = 0 plane, looking straight down."""
        k = np.array([[focal_px, 0, width / 2 - 0.5], [0, focal_px, height / 2 - 0.5], [0, 0, 1]])
        # camera frame: x right, y down (= world y), z forward (= -world z)
        r = np.diag([1.0, 1.0, -1.0])
        c = np.array([center_xy[0], center_xy[1], height_m])
        rt = np.c_[r, -r @ c]
        return cls(k @ rt, width, height)

    def project(self, pts):
        """Pixel coordinates and depth for each point."""
        pts = np.asarray(pts, dtype=np.float64)
        h = np.c_[pts, np.ones(len(pts))] @ np.asarray(self.projection).T
        depth = h[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            xy = h[:, :2] / depth[:, None]
        return xy, depth


def _visible(mesh: HandMesh, camera: Camera):
    """For every covered pixel, the index of the nearest vertex landing on it."""
    xy, depth = camera.project(mesh.scaled_vertices())
    px = np.rint(np.nan_to_num(xy, nan=-1.0, posinf=-1.0, neginf=-1.0)).astype(np.int64)
    ok = (depth > 0) & (px[:, 0] >= 0) & (px[:, 0] < camera.width) & (px[:, 1] >= 0) & (px[:, 1] < camera.height)
    idx = np.flatnonzero(ok)
    flat = px[idx, 1] * camera.width + px[idx, 0]
    order = np.lexsort((depth[idx], flat))  # by pixel, then nearest first
    flat, idx = flat[order], idx[order]
    first = np.r_[True, flat[1:] != flat[:-1]][:len(flat)]
    return flat[first], idx[first]


def project_mesh_values(mesh: HandMesh, values, camera: Camera) -> np.ndarray:
    """Splat per-vertex scalars into a (height, width) map; the nearest vertex wins each pixel."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (len(mesh.vertices),):
        raise InvalidArgument(f"expected {len(mesh.vertices)} vertex values, got shape {values.shape}")
    out = np.zeros(camera.height * camera.width)
    pix, vid = _visible(mesh, camera)
    out[pix] = values[vid]
    return out.reshape(camera.height, camera.width)


def gather_to_vertices(mesh: HandMesh, pixel_map, camera: Camera):
    """Reverse of :func:`project_mesh_values`: sample the map at each visible vertex.

    Returns ``(values, visible)``; occluded or off-screen vertices get 0.
    """
    pixel_map = np.asarray(pixel_map, dtype=np.float64)
    if pixel_map.shape != (camera.height, camera.width):
        raise InvalidArgument("map does not match the camera resolution")
    values = np.zeros(len(mesh.vertices))
    visible = np.zeros(len(mesh.vertices), bool)
    pix, vid = _visible(mesh, camera)
    values[vid] = pixel_map.ravel()[pix]
    visible[vid] = True
    return values, visible


# -- parametric geometry ---------------------------------------------------------


def uv_sphere(radius: float, center=(0.0, 0.0, 0.0), n_lat: int = 64, n_lon: int = 128) -> HandMesh:
    lat = np.linspace(0, np.pi, n_lat + 1)[1:-1]
    lon = np.linspace(0, 2 * np.pi, n_lon, endpoint=False)
    t, p = np.meshgrid(lat, lon, indexing="ij")
    ring = np.c_[(np.sin(t) * np.cos(p)).ravel(), (np.sin(t) * np.sin(p)).ravel(), np.cos(t).ravel()]
    verts = np.vstack([[0, 0, 1], ring, [0, 0, -1]]) * radius + np.asarray(center)
    faces = []
    n_rings = len(lat)
    top, bottom = 0, len(verts) - 1

    def vid(i, j):
        return 1 + i * n_lon + j % n_lon

    for j in range(n_lon):
        faces.append((top, vid(0, j), vid(0, j + 1)))
        faces.append((bottom, vid(n_rings - 1, j + 1), vid(n_rings - 1, j)))
        for i in range(n_rings - 1):
            faces.append((vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)))
            faces.append((vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)))
    return HandMesh(verts, np.array(faces), origin=tuple(np.asarray(center, float)))


def _capsule(a, b, radius, ring=16, spacing=None):
    """Vertices and faces of a capsule around segment ab (open tube plus hemispherical caps)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    axis = b - a
    length = np.linalg.norm(axis)
    axis = axis / length
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    spacing = spacing or radius * 2 * np.pi / ring
    ang = np.linspace(0, 2 * np.pi, ring, endpoint=False)
    circle = np.outer(np.cos(ang), e1) + np.outer(np.sin(ang), e2)
    n_cap = max(3, int(math.ceil(radius * np.pi / 2 / spacing)))
    offsets, radii = [], []
    for k in range(n_cap, 0, -1):  # cap at a
        phi = k / n_cap * np.pi / 2
        offsets.append(-radius * math.sin(phi))
        radii.append(radius * math.cos(phi))
    for s in np.linspace(0, length, max(2, int(math.ceil(length / spacing)) + 1)):
        offsets.append(s)
        radii.append(radius)
    for k in range(1, n_cap + 1):  # cap at b
        phi = k / n_cap * np.pi / 2
        offsets.append(length + radius * math.sin(phi))
        radii.append(radius * math.cos(phi))
    verts = np.concatenate([a + o * axis + r * circle for o, r in zip(offsets, radii)])
    faces = []
    for i in range(len(offsets) - 1):
        for j in range(ring):
            p0, p1 = i * ring + j, i * ring + (j + 1) % ring
            q0, q1 = p0 + ring, p1 + ring
            faces += [(p0, q0, q1), (p0, q1, p1)]
    return verts, np.array(faces)


@dataclass(frozen=True)
class HandPose:
    """Wrist placement plus per-finger flexion (radians at each of three joints)."""

    wrist: tuple[float, float, float]
    yaw: float = 0.0
    pitch: float = 0.35  # downward tilt of the palm
    flexion: tuple[tuple[float, float, float], ...] = ((0.3, 0.3, 0.2),) * 5
    spread: float = 0.12


FINGER_LENGTHS = ((0.030, 0.022, 0.018), (0.042, 0.025, 0.020), (0.046, 0.028, 0.021),
                  (0.043, 0.026, 0.020), (0.034, 0.020, 0.018))
FINGER_RADIUS = 0.008
PALM_LENGTH = 0.085
PALM_WIDTH = 0.080


def articulated_hand(pose: HandPose, scale: float = 1.0, ring: int = 12) -> HandMesh:
    """A capsule hand: palm rods from the wrist plus three phalanges per finger."""
    cy, sy = math.cos(pose.yaw), math.sin(pose.yaw)
    forward0 = np.array([cy, sy, 0.0])
    lateral = np.array([-sy, cy, 0.0])
    down = np.array([0.0, 0.0, -1.0])
    wrist = np.asarray(pose.wrist, float)
    parts = []

    def tilt(direction, angle):
        # rotate ``direction`` toward the table about the hand's lateral axis
        return math.cos(angle) * direction + math.sin(angle) * down

    palm_fwd = tilt(forward0, pose.pitch)
    for i, (lengths, flex) in enumerate(zip(FINGER_LENGTHS, pose.flexion)):
        offset = (i - 2) * PALM_WIDTH / 4
        knuckle = wrist + palm_fwd * PALM_LENGTH + lateral * offset
        if i == 0:
            knuckle = wrist + palm_fwd * PALM_LENGTH * 0.45 + lateral * (-PALM_WIDTH * 0.62)
        parts.append(_capsule(wrist + lateral * offset * 0.8, knuckle, FINGER_RADIUS * 1.1, ring))
        yaw_off = (i - 2) * pose.spread
        direction = math.cos(yaw_off) * forward0 + math.sin(yaw_off) * lateral
        angle = pose.pitch
        joint = knuckle
        for length, f in zip(lengths, flex):
            angle += f
            nxt = joint + tilt(direction, angle) * length
            parts.append(_capsule(joint, nxt, FINGER_RADIUS, ring))
            joint = nxt
    verts, faces, base = [], [], 0
    for v, f in parts:
        verts.append(v)
        faces.append(f + base)
        base += len(v)
    return HandMesh(np.concatenate(verts), np.concatenate(faces), scale=scale, origin=tuple(wrist))


def random_pose_sequence(rng: np.random.Generator, n_frames: int = 8, table_clearance: float = 0.0):
    """Smooth random hand motion over the z = 0 plane; fingertips graze or press the plane."""
    yaw = rng.uniform(0, 2 * np.pi)
    wrist0 = np.array([rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02), 0.0])
    base_flex = rng.uniform(0.2, 0.5, size=(5, 3))
    poses = []
    for t in range(n_frames):
        phase = t / max(n_frames - 1, 1)
        flex = base_flex + 0.15 * np.sin(2 * np.pi * (phase + rng.uniform(0, 1, size=(5, 1))))
        pose = HandPose(tuple(wrist0 + [0.004 * t, 0.0, 0.0]), yaw=yaw + 0.05 * math.sin(2 * np.pi * phase),
                        pitch=0.35, flexion=tuple(map(tuple, flex)))
        mesh = articulated_hand(pose)
        # set wrist height so the lowest fingertip dips slightly below the plane
        lowest = mesh.vertices[:, 2].min() - wrist0[2]
        depth = rng.uniform(0.0015, 0.004) + table_clearance
        wrist = np.array(pose.wrist) + [0.0, 0.0, -lowest - depth]
        poses.append(replace(pose, wrist=tuple(wrist)))
    return [articulated_hand(p) for p in poses]


# -- ASCII mesh files ---------------------------------------------------------------


def write_mesh(path, mesh: HandMesh) -> None:
    lines = [f"v {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in mesh.scaled_vertices()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> HandMesh:
    verts, faces = [], []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise LoadError(path, exc.strerror or str(exc)) from None
    for n, line in enumerate(text.splitlines(), 1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        try:
            if tok[0] == "v":
                verts.append([float(t) for t in tok[1:4]])
            elif tok[0] == "f":
                faces.append([int(t.split("/")[0]) - 1 for t in tok[1:4]])
        except (ValueError, IndexError):
            raise LoadError(path, f"line {n}: malformed {tok[0]!r} record") from None
    try:
        return HandMesh(np.array(verts, float).reshape(-1, 3), np.array(faces, int).reshape(-1, 3))
    except InvalidArgument as exc:
        raise LoadError(path, str(exc)) from None
