"""Raycasting simulator for the nodding 2D Lidar, with or without folding mirrors.

The sensor sits on a platform with pose ``(x, y, yaw, z)``. Its scan plane
is pitched by the nod angle about the sensor ``x`` axis. Beams served by a
mirror bounce once off the (possibly perturbed) physical mirror and then
continue into a scene of static primitives and constant-velocity cylinders.
All beams of one frame are sampled at the frame timestamp.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .calibration import DEFAULT_MOUNT_HEIGHT, PerturbationParams, pose_rotation
from .errors import ConfigurationError
from .geometry import MIRROR_IDS, MirrorDesign, SensorConfig

__all__ = [
    "BeamFlag",
    "Box",
    "PlanePatch",
    "Cylinder",
    "Mover",
    "Scene",
    "NodProfile",
    "Trajectory",
    "ScanFrame",
    "MirrorSurface",
    "BeamTrace",
    "trace_one_beam",
    "trace_frame",
    "beam_assignment",
    "simulate",
    "make_header",
    "write_log",
    "read_log",
    "LOG_FORMAT_VERSION",
]

LOG_FORMAT_VERSION = 1
_EPS = 1e-9


class BeamFlag(enum.IntEnum):
    UNREFLECTED = 0
    L1 = 1
    L2 = 2
    R1 = 3
    R2 = 4
    INVALID = 5


# --------------------------------------------------------------------------- #
# primitives; every ``intersect`` takes (n, 3) origins and directions and
# returns the nearest positive ray parameter, ``inf`` on a miss.


@dataclass(frozen=True)
class Box:
    """Axis-aligned box."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if not all(h > l for l, h in zip(self.lo, self.hi)):
            raise ConfigurationError("box extents must be positive")

    def intersect(self, o, d, t=0.0):
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (lo - o) * inv
            t2 = (hi - o) * inv
        # a zero direction component gives nan when the origin sits on a face
        tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
        tmax = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
        t_near = tmin.max(axis=1)
        t_far = tmax.min(axis=1)
        hit = (t_far >= t_near) & (t_far > _EPS)
        out = np.where(t_near > _EPS, t_near, t_far)
        return np.where(hit, out, np.inf)

    def to_dict(self):
        return {"type": "box", "min": list(self.lo), "max": list(self.hi)}


@dataclass(frozen=True)
class PlanePatch:
    """Rectangle centred on ``center`` spanning ``+-half_extents`` along ``u_axis`` and ``normal x u_axis``."""

    center: tuple
    normal: tuple
    u_axis: tuple
    half_extents: tuple

    def __post_init__(self):
        n = np.asarray(self.normal, float)
        u = np.asarray(self.u_axis, float)
        if min(self.half_extents) <= 0 or np.linalg.norm(n) == 0 or abs(np.dot(n, u)) > 1e-9 * np.linalg.norm(u):
            raise ConfigurationError("plane patch needs positive extents and u_axis orthogonal to its normal")

    def _frame(self):
        n = np.asarray(self.normal, float)
        n = n / np.linalg.norm(n)
        u = np.asarray(self.u_axis, float)
        u = u / np.linalg.norm(u)
        return np.asarray(self.center, float), n, u, np.cross(n, u)

    def intersect(self, o, d, t=0.0):
        c, n, u, v = self._frame()
        den = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = ((c - o) @ n) / den
        p = o + tt[:, None] * d - c
        ok = (np.abs(den) > 1e-15) & (tt > _EPS)
        ok &= (np.abs(p @ u) <= self.half_extents[0]) & (np.abs(p @ v) <= self.half_extents[1])
        return np.where(ok, tt, np.inf)

    def to_dict(self):
        return {
            "type": "plane",
            "center": list(self.center),
            "normal": list(self.normal),
            "u_axis": list(self.u_axis),
            "half_extents": list(self.half_extents),
        }


def _cylinder_hits(o, d, cx, cy, r, z0, z1):
    ox, oy = o[:, 0] - cx, o[:, 1] - cy
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2.0 * (ox * d[:, 0] + oy * d[:, 1])
    c = ox**2 + oy**2 - r * r
    disc = b * b - 4.0 * a * c
    best = np.full(len(o), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        for sgn in (-1.0, 1.0):
            tt = (-b + sgn * sq) / (2.0 * a)
            z = o[:, 2] + tt * d[:, 2]
            ok = (a > 1e-15) & (tt > _EPS) & (z >= z0) & (z <= z1)
            best = np.where(ok & (tt < best), tt, best)
        for zc in (z0, z1):
            tt = (zc - o[:, 2]) / d[:, 2]
            px, py = o[:, 0] + tt * d[:, 0] - cx, o[:, 1] + tt * d[:, 1] - cy
            ok = (np.abs(d[:, 2]) > 1e-15) & (tt > _EPS) & (px * px + py * py <= r * r)
            best = np.where(ok & (tt < best), tt, best)
    return best


@dataclass(frozen=True)
class Cylinder:
    """Vertical capped cylinder."""

    center: tuple
    radius: float
    z_range: tuple

    def __post_init__(self):
        if self.radius <= 0 or self.z_range[1] <= self.z_range[0]:
            raise ConfigurationError("cylinder needs positive radius and height")

    def intersect(self, o, d, t=0.0):
        return _cylinder_hits(o, d, self.center[0], self.center[1], self.radius, *self.z_range)

    def to_dict(self):
        return {"type": "cylinder", "center": list(self.center), "radius": self.radius, "z_range": list(self.z_range)}


@dataclass(frozen=True)
class Mover:
    """Vertical cylinder translating at constant planar velocity from ``position`` at ``t = 0``."""

    radius: float
    z_range: tuple
    position: tuple
    speed: float
    heading: float

    def __post_init__(self):
        if self.radius <= 0 or self.z_range[1] <= self.z_range[0]:
            raise ConfigurationError("mover needs positive radius and height")
        if self.speed < 0 or not 0.0 <= self.heading < 2.0 * math.pi:
            raise ConfigurationError("mover speed must be >= 0 and heading in [0, 2pi)")

    @property
    def velocity(self) -> np.ndarray:
        return self.speed * np.array([math.cos(self.heading), math.sin(self.heading)])

    def center_at(self, t: float) -> np.ndarray:
        return np.asarray(self.position, float) + t * self.velocity

    def intersect(self, o, d, t=0.0):
        cx, cy = self.center_at(t)
        return _cylinder_hits(o, d, cx, cy, self.radius, *self.z_range)

    def to_dict(self):
        return {
            "radius": self.radius,
            "z_range": list(self.z_range),
            "position": list(self.position),
            "speed": self.speed,
            "heading": self.heading,
        }


_PRIMS = {
    "box": lambda p: Box(tuple(p["min"]), tuple(p["max"])),
    "plane": lambda p: PlanePatch(tuple(p["center"]), tuple(p["normal"]), tuple(p["u_axis"]), tuple(p["half_extents"])),
    "cylinder": lambda p: Cylinder(tuple(p["center"]), float(p["radius"]), tuple(p["z_range"])),
}


@dataclass
class Scene:
    statics: list = field(default_factory=list)
    movers: list = field(default_factory=list)
    bounds: tuple = ((-10.0, -10.0, -5.0), (10.0, 10.0, 5.0))

    @property
    def primitives(self) -> list:
        return list(self.statics) + list(self.movers)

    def intersect(self, o, d, t: float = 0.0):
        """Nearest hit over all primitives: ``(ray parameter, primitive id)``; id -1 on a miss."""
        best = np.full(len(o), np.inf)
        ids = np.full(len(o), -1, dtype=int)
        for k, prim in enumerate(self.primitives):
            tt = prim.intersect(o, d, t)
            closer = tt < best
            best = np.where(closer, tt, best)
            ids = np.where(closer, k, ids)
        return best, ids

    def to_dict(self) -> dict:
        return {
            "format_version": LOG_FORMAT_VERSION,
            "statics": [p.to_dict() for p in self.statics],
            "movers": [m.to_dict() for m in self.movers],
            "bounds": [list(self.bounds[0]), list(self.bounds[1])],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        try:
            statics = [_PRIMS[p["type"]](p) for p in d.get("statics", [])]
            movers = [
                Mover(float(m["radius"]), tuple(m["z_range"]), tuple(m["position"]), float(m["speed"]), float(m["heading"]))
                for m in d.get("movers", [])
            ]
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed scene: {exc!r}") from exc
        bounds = d.get("bounds")
        bounds = (tuple(bounds[0]), tuple(bounds[1])) if bounds else cls().bounds
        return cls(statics, movers, bounds)


# --------------------------------------------------------------------------- #
# motion of the sensor


@dataclass(frozen=True)
class NodProfile:
    """Triangular pitch ramp starting at zero and rising."""

    pitch_amplitude: float = 0.5
    period: float = 3.8
    phase: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.pitch_amplitude < math.pi / 2.0 or self.period <= 0.0:
            raise ConfigurationError("nod amplitude must lie in (0, pi/2) and period be positive")

    def pitch(self, t: float) -> float:
        u = (t / self.period + self.phase / (2.0 * math.pi)) % 1.0
        if u < 0.25:
            tri = 4.0 * u
        elif u < 0.75:
            tri = 2.0 - 4.0 * u
        else:
            tri = 4.0 * u - 4.0
        return self.pitch_amplitude * tri

    def to_dict(self):
        return {"pitch_amplitude": self.pitch_amplitude, "period": self.period, "phase": self.phase, "waveform": "triangular"}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["pitch_amplitude"]), float(d["period"]), float(d.get("phase", 0.0)))


@dataclass(frozen=True)
class Trajectory:
    """Platform poses ``(t, x, y, yaw, z)`` linearly interpolated between keyframes."""

    keyframes: tuple = ((0.0, 0.0, 0.0, 0.0, 0.0),)

    @classmethod
    def static(cls, x=0.0, y=0.0, yaw=0.0, z=0.0) -> "Trajectory":
        return cls(((0.0, x, y, yaw, z),))

    def pose(self, t: float) -> tuple:
        k = np.asarray(self.keyframes, dtype=float)
        if len(k) == 1:
            return tuple(float(v) for v in k[0, 1:])
        return tuple(float(np.interp(t, k[:, 0], k[:, j])) for j in range(1, 5))

    def to_dict(self):
        return {"keyframes": [list(k) for k in self.keyframes]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(tuple(float(v) for v in k) for k in d["keyframes"]))


@dataclass
class ScanFrame:
    index: int
    timestamp: float
    pitch: float
    pose: tuple
    ranges: np.ndarray
    flags: np.ndarray
    hit_ids: np.ndarray | None = None

    def to_dict(self) -> dict:
        d = {
            "index": self.index,
            "timestamp": self.timestamp,
            "pitch": self.pitch,
            "pose": list(self.pose),
            "ranges": [None if not np.isfinite(r) else float(r) for r in self.ranges],
            "flags": [int(f) for f in self.flags],
        }
        if self.hit_ids is not None:
            d["hit_ids"] = [int(h) for h in self.hit_ids]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScanFrame":
        ranges = np.array([np.nan if r is None else r for r in d["ranges"]], dtype=float)
        hit = d.get("hit_ids")
        return cls(
            int(d["index"]),
            float(d["timestamp"]),
            float(d["pitch"]),
            tuple(d["pose"]),
            ranges,
            np.asarray(d["flags"], dtype=int),
            None if hit is None else np.asarray(hit, dtype=int),
        )


# --------------------------------------------------------------------------- #
# mirrors


@dataclass(frozen=True)
class MirrorSurface:
    """Physical flat mirror in the sensor frame.

    The mirror pivots about a horizontal axis ``h`` below the scan plane.
    Its plane is ``cos(b) (n . p - d') - sin(b) (z + h) = 0`` with
    ``n = (cos(alpha + d_alpha), sin(alpha + d_alpha), 0)``, ``d' = d + d_d`` and
    ``b = d_beta``. Along the axis the mirror covers the design span plus
    ``margin`` at each end; it reaches from the axis up to ``h + top`` above it.
    """

    id: str
    alpha: float
    d: float
    h: float
    span: tuple
    pert: PerturbationParams = PerturbationParams()
    margin: float = 0.01
    top: float = 0.05

    @classmethod
    def from_design(cls, design: MirrorDesign, pert: PerturbationParams | None = None,
                    h: float = DEFAULT_MOUNT_HEIGHT, margin: float = 0.01) -> "MirrorSurface":
        return cls(design.id, design.normal_angle, design.perp_distance, h, design.tangent_span(),
                   pert or PerturbationParams(), margin)

    @property
    def normal(self) -> np.ndarray:
        a = self.alpha + self.pert.d_alpha
        b = self.pert.d_beta
        return np.array([math.cos(b) * math.cos(a), math.cos(b) * math.sin(a), -math.sin(b)])

    @property
    def axis_point(self) -> np.ndarray:
        a = self.alpha + self.pert.d_alpha
        dd = self.d + self.pert.d_d
        return np.array([dd * math.cos(a), dd * math.sin(a), -self.h])

    def _axes(self):
        a = self.alpha + self.pert.d_alpha
        b = self.pert.d_beta
        tang = np.array([-math.sin(a), math.cos(a), 0.0])
        up = np.array([math.sin(b) * math.cos(a), math.sin(b) * math.sin(a), math.cos(b)])
        return tang, up

    def intersect(self, o, d):
        """Ray parameter of the hit on the finite mirror, ``inf`` when the ray misses it."""
        n, p0 = self.normal, self.axis_point
        den = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = ((p0 - o) @ n) / den
        q = o + tt[:, None] * d - p0
        tang, up = self._axes()
        u, w = q @ tang, q @ up
        ok = (np.abs(den) > 1e-15) & (tt > _EPS)
        ok &= (u >= self.span[0] - self.margin) & (u <= self.span[1] + self.margin)
        ok &= (w >= 0.0) & (w <= self.h + self.top)
        return np.where(ok, tt, np.inf)

    def reflect(self, d):
        n = self.normal
        return d - 2.0 * (d @ n)[:, None] * n


@dataclass(frozen=True)
class BeamTrace:
    range: float
    point: np.ndarray
    elevation: float
    hit_id: int
    mirror_path: float = 0.0


def _beam_dirs(bearings):
    b = np.asarray(bearings, dtype=float)
    return np.column_stack([np.cos(b), np.sin(b), np.zeros_like(b)])


def trace_frame(scene: Scene, bearings, assign, surfaces: dict, pitch: float, pose, t: float = 0.0):
    """Trace one sweep without noise.

    ``assign`` gives, per beam, the id of the serving mirror or ``None``.
    Returns ``(ranges, points, hit_ids, invalid, mirror_paths, final_dirs)``;
    ranges are ``inf`` when nothing is hit.
    """
    n = len(bearings)
    dirs = _beam_dirs(bearings)
    origins = np.zeros((n, 3))
    out_dirs = dirs.copy()
    path = np.zeros(n)
    invalid = np.zeros(n, dtype=bool)
    assign = np.asarray([("" if a is None else a) for a in assign])
    for mid, surf in surfaces.items():
        sel = np.flatnonzero(assign == mid)
        if not len(sel):
            continue
        tm = surf.intersect(origins[sel], dirs[sel])
        miss = ~np.isfinite(tm)
        tm = np.where(miss, 0.0, tm)
        hit = tm[:, None] * dirs[sel]
        refl = surf.reflect(dirs[sel])
        for other_id, other in surfaces.items():
            if other_id != mid:
                miss |= np.isfinite(other.intersect(hit, refl))
        origins[sel] = hit
        out_dirs[sel] = refl
        path[sel] = tm
        invalid[sel] = miss
    x, y, yaw, z = (tuple(pose) + (0.0,))[:4]
    R = pose_rotation(pitch, yaw)
    wo = origins @ R.T + np.array([x, y, z])
    wd = out_dirs @ R.T
    ts, ids = scene.intersect(wo, wd, t)
    ranges = path + ts
    points = wo + np.where(np.isfinite(ts), ts, 0.0)[:, None] * wd
    ranges[invalid] = np.inf
    ids[invalid | ~np.isfinite(ts)] = -1
    return ranges, points, ids, invalid, path, wd


def trace_one_beam(pose, bearing: float, pitch: float, mirror: MirrorSurface | None, scene: Scene,
                   t: float = 0.0) -> BeamTrace:
    """Trace a single beam; ``range`` is ``inf`` for a no-return or a missed mirror."""
    surfaces = {} if mirror is None else {mirror.id: mirror}
    assign = [None if mirror is None else mirror.id]
    ranges, pts, ids, invalid, path, wd = trace_frame(scene, [bearing], assign, surfaces, pitch, pose, t)
    elev = math.asin(max(-1.0, min(1.0, float(wd[0, 2]))))
    return BeamTrace(float(ranges[0]), pts[0], elev, int(ids[0]), float(path[0]))


def _check_designs(designs) -> dict:
    if not designs:
        return {}
    ids = sorted(d.id for d in designs)
    if ids != sorted(MIRROR_IDS):
        raise ConfigurationError(f"mirror set must be empty or exactly {MIRROR_IDS}, got {ids}")
    return {d.id: d for d in designs}


def beam_assignment(cfg: SensorConfig, designs) -> list:
    """Serving mirror id per beam (``None`` for unreflected beams)."""
    assign = [None] * cfg.valid_beams
    for d in designs:
        for k in d.beam_indices:
            if assign[k] is not None:
                raise ConfigurationError(f"beam {k} is served by two mirrors")
            assign[k] = d.id
    return assign


def simulate(scene: Scene, cfg: SensorConfig, designs, truth: dict | None, nod: NodProfile,
             trajectory: Trajectory, duration: float, seed: int, mount_height: float = DEFAULT_MOUNT_HEIGHT,
             noise: bool = True, margin: float = 0.01) -> Iterator[ScanFrame]:
    """Yield ``round(duration * scan_rate)`` frames.

    Range noise is multiplicative, ``r (1 + e)`` with ``e ~ N(0, (noise_frac / 3)^2)``
    clipped to three sigma. Frame ``k`` draws its noise from a generator seeded
    with ``(seed, k)``, one value per beam, so frames can be produced in any
    order with identical results.
    """
    by_id = _check_designs(designs)
    truth = truth or {}
    unknown = set(truth) - set(by_id)
    if unknown:
        raise ConfigurationError(f"perturbations given for absent mirrors: {sorted(unknown)}")
    surfaces = {
        mid: MirrorSurface.from_design(d, truth.get(mid), mount_height, margin) for mid, d in by_id.items()
    }
    assign = beam_assignment(cfg, by_id.values())
    base_flags = np.array([BeamFlag.UNREFLECTED if a is None else BeamFlag[a] for a in assign], dtype=int)
    bearings = cfg.bearings()
    sigma = cfg.range_noise_frac / 3.0
    n_frames = int(round(duration * cfg.scan_rate))
    for k in range(n_frames):
        t = k / cfg.scan_rate
        pitch = nod.pitch(t)
        pose = trajectory.pose(t)
        ranges, _, ids, invalid, _, _ = trace_frame(scene, bearings, assign, surfaces, pitch, pose, t)
        if noise and sigma > 0:
            eps = np.random.default_rng([seed, k]).standard_normal(cfg.valid_beams)
            ranges = ranges * (1.0 + sigma * np.clip(eps, -3.0, 3.0))
        ranges = np.where(np.isfinite(ranges) & (ranges <= cfg.max_range), ranges, np.nan)
        ids = np.where(np.isfinite(ranges), ids, -1)
        flags = np.where(invalid, BeamFlag.INVALID, base_flags)
        yield ScanFrame(k, t, pitch, pose, ranges, flags, ids)


# --------------------------------------------------------------------------- #
# scan-log files (JSON lines: header, then one frame per line)


def make_header(cfg, designs, nod, trajectory, truth=None, mount_height=DEFAULT_MOUNT_HEIGHT, seed=None,
                scene=None, noise=True) -> dict:
    return {
        "format_version": LOG_FORMAT_VERSION,
        "sensor": cfg.to_dict(),
        "designs": [d.to_dict() for d in designs],
        "nod": nod.to_dict(),
        "trajectory": trajectory.to_dict(),
        "start_pose": list(trajectory.pose(0.0)),
        "truth": {k: v.to_dict() for k, v in (truth or {}).items()},
        "mount_height": mount_height,
        "seed": seed,
        "noise": noise,
        "scene": None if scene is None else scene.to_dict(),
    }


def write_log(path, header: dict, frames) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for fr in frames:
            fh.write(json.dumps(fr.to_dict(), sort_keys=True) + "\n")
            n += 1
    return n


def read_log(path) -> tuple:
    with open(path, encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: unreadable scan-log header") from exc
        if header.get("format_version") != LOG_FORMAT_VERSION:
            raise ConfigurationError(f"{path}: unsupported scan-log format {header.get('format_version')!r}")
        frames = [ScanFrame.from_dict(json.loads(line)) for line in fh if line.strip()]
    return header, frames
