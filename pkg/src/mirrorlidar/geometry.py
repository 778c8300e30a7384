"""Mirror placement for a 2D Lidar whose side windows are folded into the front.

The scanner sweeps ``valid_beams`` beams anticlockwise across ``fov``. The
middle third of the sweep (the *central window*) is left unreflected. Each
side window is folded by two flat mirrors into the opposite half of the
central window so that, at the design distance ``D``, two reflected hits land
between every pair of adjacent unreflected hits.

Sensor frame conventions used throughout the package:

* ``x`` points to the sensor's right, ``y`` forward, ``z`` up;
* bearings are measured anticlockwise from ``+x``, so forward is ``pi / 2``;
* lengths are metres, angles radians.

Per side, the *near* mirror (``L1``/``R1``) serves the outermost beams and
lands them ``target_resolution`` past the unreflected beams; the *far* mirror
(``L2``/``R2``) serves the remaining side beams and lands them
``2 * target_resolution`` past.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, GeometryError, InfeasibleGeometryError, InvalidReflectionError

__all__ = [
    "SensorConfig",
    "MirrorDesign",
    "ReflectedBearing",
    "DEFAULT_STANDOFFS",
    "MIRROR_IDS",
    "solve_mirror",
    "solve_all",
    "actual_bearing",
    "bearing_at_distance",
    "bearing_shift",
    "separation_shift",
    "beam_partition",
]

MIRROR_IDS = ("L1", "L2", "R1", "R2")
_SLOT_OF = {"L1": ("left", "near"), "L2": ("left", "far"), "R1": ("right", "near"), "R2": ("right", "far")}

# Distance from the optical centre to the mirror along the anchor beam. Not
# derivable from the bearing constraints alone; see README "Mirror design".
DEFAULT_STANDOFFS = {"near": 0.0562, "far": 0.0823}

ARCCOS_CLAMP = 1e-12


@dataclass(frozen=True)
class SensorConfig:
    """Static description of the 2D Lidar."""

    total_beams_per_rev: int = 1024
    valid_beams: int = 682
    fov: float = 4.0 * math.pi / 3.0
    max_range: float = 5.6
    range_noise_frac: float = 0.03
    scan_rate: float = 10.0

    def __post_init__(self):
        if self.total_beams_per_rev <= 0 or self.valid_beams < 3:
            raise ConfigurationError("beam counts must be positive")
        if self.valid_beams > self.total_beams_per_rev:
            raise ConfigurationError("valid_beams exceeds beams per revolution")
        if not 0.0 < self.fov < 2.0 * math.pi:
            raise ConfigurationError("fov must lie in (0, 2pi)")
        if self.max_range <= 0.0 or self.range_noise_frac < 0.0 or self.scan_rate <= 0.0:
            raise ConfigurationError("max_range and scan_rate must be positive, noise non-negative")

    @property
    def native_resolution(self) -> float:
        return 2.0 * math.pi / self.total_beams_per_rev

    @property
    def target_resolution(self) -> float:
        return self.native_resolution / 3.0

    @property
    def central_window(self) -> float:
        return self.fov / 3.0

    def bearing(self, index):
        """Bearing of beam ``index`` (scalar or array); the sweep is centred on forward."""
        return math.pi / 2.0 + (np.asarray(index, dtype=float) - 0.5 * (self.valid_beams - 1)) * self.native_resolution

    def bearings(self) -> np.ndarray:
        return self.bearing(np.arange(self.valid_beams))

    def central_beams(self) -> np.ndarray:
        """Indices of the unreflected beams."""
        off = np.abs(self.bearings() - math.pi / 2.0)
        return np.flatnonzero(off <= 0.5 * self.central_window + 1e-12)

    def to_dict(self) -> dict:
        return {
            "total_beams_per_rev": self.total_beams_per_rev,
            "valid_beams": self.valid_beams,
            "fov": self.fov,
            "max_range": self.max_range,
            "range_noise_frac": self.range_noise_frac,
            "scan_rate": self.scan_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorConfig":
        unknown = set(d) - set(cls().to_dict())
        if unknown:
            raise ConfigurationError(f"unknown SensorConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class MirrorDesign:
    """A solved flat mirror and the beams it serves.

    ``normal_angle`` and ``perp_distance`` describe the mirror line in the scan
    plane as ``{p : n . p = perp_distance}`` with ``n = (cos a, sin a)``
    pointing from the optical centre towards the mirror.
    """

    id: str
    side: str
    slot: str
    design_distance: float
    standoff: float
    beam_interval: tuple
    anchor_beam: int
    target_offset: float
    normal_angle: float
    perp_distance: float
    length: float
    mount_angle: float
    endpoints: tuple
    bearings: np.ndarray = field(repr=False, compare=False)
    targets: np.ndarray = field(repr=False, compare=False)
    reflection_angles: np.ndarray = field(repr=False, compare=False)

    @property
    def sign(self) -> int:
        """+1 when reflected hits land clockwise of the incident beam (left side)."""
        return 1 if self.side == "left" else -1

    @property
    def beam_indices(self) -> np.ndarray:
        return np.arange(self.beam_interval[0], self.beam_interval[1] + 1)

    def serves(self, beam_index) -> bool:
        return self.beam_interval[0] <= beam_index <= self.beam_interval[1]

    def local(self, beam_index) -> int:
        if not self.serves(beam_index):
            raise ConfigurationError(f"beam {beam_index} is not served by mirror {self.id}")
        return int(beam_index) - self.beam_interval[0]

    def path_to_mirror(self, beam_index) -> float:
        """Distance from the optical centre to the mirror along beam ``beam_index``."""
        i = self.local(beam_index)
        return self.perp_distance / math.cos(self.bearings[i] - self.normal_angle)

    def tangent_span(self) -> tuple:
        """Signed positions of the two endpoints along the mirror line, from its foot point."""
        t = np.array([-math.sin(self.normal_angle), math.cos(self.normal_angle)])
        return tuple(sorted(float(np.dot(p, t)) for p in self.endpoints))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "side": self.side,
            "slot": self.slot,
            "length_m": self.length,
            "mount_angle_rad": self.mount_angle,
            "design_distance_m": self.design_distance,
            "standoff_m": self.standoff,
            "beam_interval": list(self.beam_interval),
            "anchor_beam": self.anchor_beam,
            "target_offset_rad": self.target_offset,
            "normal_angle_rad": self.normal_angle,
            "perp_distance_m": self.perp_distance,
            "endpoints_m": [list(map(float, p)) for p in self.endpoints],
        }


@dataclass(frozen=True)
class ReflectedBearing:
    """True bearing of a target seen through a mirror (triangle O-Z-M of the design)."""

    beam_index: int
    bearing_incident: float
    reflection_angle: float
    actual_bearing: float
    mirror_path: float
    foot_distance: float
    foot_to_target: float
    target_distance: float
    far_branch: bool


def beam_partition(cfg: SensorConfig) -> dict:
    """Beam intervals and target mapping for the four mirrors.

    Returns ``{id: (first, last, anchor, first_target_index, offset_units)}``
    where the anchor beam lands on unreflected beam ``first_target_index``
    shifted by ``offset_units * target_resolution``; moving one beam away from
    the anchor moves the target one unreflected beam towards forward.
    """
    central = cfg.central_beams()
    c0, c1 = int(central[0]), int(central[-1])
    n_beams = cfg.valid_beams
    n_left = n_beams - 1 - c1
    n_right = c0
    if n_left != n_right:
        raise ConfigurationError("side windows must hold the same number of beams")
    half = int(np.count_nonzero(cfg.bearing(central) < math.pi / 2.0))
    n_far = half
    n_near = n_left - n_far
    if n_near < 2 or n_far < 2:
        raise InfeasibleGeometryError("side window too small to split between two mirrors")
    last = n_beams - 1
    return {
        "L1": (last - n_near + 1, last, last, c0, +1),
        "L2": (last - n_left + 1, last - n_near, last - n_near, c0, +2),
        "R1": (0, n_near - 1, 0, c1, -1),
        "R2": (n_near, n_right - 1, n_near, c1, -2),
    }


def _targets(cfg: SensorConfig, mirror_id: str, beams: np.ndarray) -> np.ndarray:
    first, last, anchor, j0, units = beam_partition(cfg)[mirror_id]
    if mirror_id[0] == "L":
        j = j0 + (anchor - beams)
    else:
        j = j0 - (beams - anchor)
    return cfg.bearing(j) + units * cfg.target_resolution


def solve_mirror(cfg: SensorConfig, side: str, slot: str, D: float, standoff: float | None = None) -> MirrorDesign:
    """Solve one mirror so its anchor beam lands exactly on its interleaved bearing at range ``D``.

    The anchor beam ``OZ`` meets the mirror at distance ``standoff``; the
    target ``M`` sits on the arc ``|OM| = D``. The mirror normal bisects
    ``ZO`` and ``ZM``, which fixes the mirror line; every other served beam
    is then intersected with that line. ``mount_angle`` is the acute angle
    between the anchor beam and the mirror, ``pi/2 - gamma`` for an angle of
    incidence ``gamma``.
    """
    if side not in ("left", "right") or slot not in ("near", "far"):
        raise ConfigurationError(f"bad mirror slot {side!r}/{slot!r}")
    mirror_id = ("L" if side == "left" else "R") + ("1" if slot == "near" else "2")
    s = DEFAULT_STANDOFFS[slot] if standoff is None else float(standoff)
    if not (D > 0.0 and math.isfinite(D)):
        raise InfeasibleGeometryError(f"design distance must be positive, got {D}")
    if not 0.0 < s < D:
        raise InfeasibleGeometryError(f"standoff {s} must lie in (0, D={D})")

    first, last, anchor, _, units = beam_partition(cfg)[mirror_id]
    beams = np.arange(first, last + 1)
    bearings = cfg.bearing(beams)
    targets = _targets(cfg, mirror_id, beams)
    theta_z = float(cfg.bearing(anchor))
    theta_m = float(targets[anchor - first])

    z = s * np.array([math.cos(theta_z), math.sin(theta_z)])
    m = D * np.array([math.cos(theta_m), math.sin(theta_m)])
    to_o = -z / np.linalg.norm(z)
    to_m = (m - z) / np.linalg.norm(m - z)
    bis = to_o + to_m
    if np.linalg.norm(bis) < 1e-9:
        raise InfeasibleGeometryError("target lies straight behind the mirror")
    n = -bis / np.linalg.norm(bis)
    alpha = math.atan2(n[1], n[0])
    d = float(np.dot(n, z))

    cos_inc = np.cos(bearings - alpha)
    if np.any(cos_inc <= 1e-9):
        raise InfeasibleGeometryError(f"{mirror_id}: some served beams run away from the mirror")
    paths = d / cos_inc
    gammas = np.arccos(np.clip(cos_inc, -1.0, 1.0))
    oa = paths * np.sin(2.0 * gammas)
    if np.any(oa >= D):
        raise InfeasibleGeometryError(f"{mirror_id}: reflected rays miss the arc of radius {D}")

    hits = paths[:, None] * np.column_stack([np.cos(bearings), np.sin(bearings)])
    endpoints = (tuple(hits[0]), tuple(hits[-1]))
    length = float(np.linalg.norm(hits[-1] - hits[0]))
    gamma_z = float(gammas[anchor - first])
    mount_angle = math.pi / 2.0 - gamma_z
    if not (length > 0.0 and 0.0 < mount_angle < math.pi):
        raise InfeasibleGeometryError(f"{mirror_id}: degenerate mirror")

    return MirrorDesign(
        id=mirror_id,
        side=side,
        slot=slot,
        design_distance=float(D),
        standoff=s,
        beam_interval=(int(first), int(last)),
        anchor_beam=int(anchor),
        target_offset=units * cfg.target_resolution,
        normal_angle=alpha,
        perp_distance=d,
        length=length,
        mount_angle=mount_angle,
        endpoints=endpoints,
        bearings=bearings,
        targets=targets,
        reflection_angles=gammas,
    )


def solve_all(cfg: SensorConfig, D: float, standoffs: dict | None = None) -> list:
    """Solve L1, L2, R1, R2 in that order."""
    standoffs = {**DEFAULT_STANDOFFS, **(standoffs or {})}
    return [solve_mirror(cfg, *_SLOT_OF[i], D, standoffs[_SLOT_OF[i][1]]) for i in MIRROR_IDS]


def _acos(x: float) -> float:
    if x > 1.0 + ARCCOS_CLAMP or x < -1.0 - ARCCOS_CLAMP or not math.isfinite(x):
        raise GeometryError(f"arccos argument {x!r} outside [-1, 1]")
    return math.acos(min(1.0, max(-1.0, x)))


def _solve_triangle(design: MirrorDesign, beam_index: int, zm: float) -> ReflectedBearing:
    i = design.local(beam_index)
    theta_b = float(design.bearings[i])
    theta_r = float(design.reflection_angles[i])
    s = design.path_to_mirror(beam_index)
    za = s * math.cos(2.0 * theta_r)
    dist = math.sqrt(max(s * s + zm * zm - 2.0 * s * zm * math.cos(2.0 * theta_r), 0.0))
    if dist == 0.0:
        raise GeometryError("target coincides with the optical centre")
    am = abs(zm - za)
    far = zm > za
    if far:
        zom = math.pi - 2.0 * theta_r - _acos(am / dist)
    else:
        zom = _acos(am / dist) - 2.0 * theta_r
    theta_a = theta_b - design.sign * zom
    return ReflectedBearing(
        beam_index=int(beam_index),
        bearing_incident=theta_b,
        reflection_angle=theta_r,
        actual_bearing=theta_a,
        mirror_path=s,
        foot_distance=za,
        foot_to_target=am,
        target_distance=dist,
        far_branch=far,
    )


def actual_bearing(design: MirrorDesign, beam_index: int, measured_range: float) -> ReflectedBearing:
    """Bearing, seen from the optical centre, of a return measured through ``design``.

    ``measured_range`` is the folded path length. Beyond the foot ``A`` of the
    perpendicular from ``O`` onto the reflected ray the angle ``OMZ`` equals
    ``arccos(AM / D)``; between ``Z`` and ``A`` it is the supplement, which
    keeps the bearing continuous through ``M = A``.
    """
    s = design.path_to_mirror(beam_index)
    zm = float(measured_range) - s
    if not zm > 0.0:
        raise InvalidReflectionError(
            f"range {measured_range} does not exceed the path to mirror {design.id} ({s:.6f} m)"
        )
    return _solve_triangle(design, beam_index, zm)


def bearing_at_distance(design: MirrorDesign, beam_index: int, D: float) -> float:
    """Bearing at which the reflected ray of ``beam_index`` crosses the arc ``|OM| = D``."""
    i = design.local(beam_index)
    theta_r = float(design.reflection_angles[i])
    s = design.path_to_mirror(beam_index)
    if not D > s:
        raise GeometryError(f"arc radius {D} must exceed the mirror path {s:.6f}")
    za = s * math.cos(2.0 * theta_r)
    oa = s * math.sin(2.0 * theta_r)
    am = math.sqrt(max(D * D - oa * oa, 0.0))
    return _solve_triangle(design, beam_index, za + am).actual_bearing


def bearing_shift(design: MirrorDesign, beam_index: int, D: float, D_star: float) -> float:
    """Change in true bearing of one reflected beam between targets at ``D`` and ``D_star``."""
    return bearing_at_distance(design, beam_index, D) - bearing_at_distance(design, beam_index, D_star)


def separation_shift(design: MirrorDesign, beam_index: int, D: float, D_star: float) -> float:
    """Change in the angular gap between reflected beams ``beam_index`` and ``beam_index + 1``."""
    if not design.serves(beam_index + 1):
        raise ConfigurationError(f"beam {beam_index + 1} is not served by mirror {design.id}")
    return bearing_shift(design, beam_index, D, D_star) - bearing_shift(design, beam_index + 1, D, D_star)


def design_from_dict(cfg: SensorConfig, d: dict) -> MirrorDesign:
    """Rebuild a design from its JSON form by re-solving; the stored values are cross-checked."""
    side, slot = _SLOT_OF[d["id"]]
    design = solve_mirror(cfg, side, slot, d["design_distance_m"], d["standoff_m"])
    if abs(design.length - d["length_m"]) > 1e-9 or abs(design.mount_angle - d["mount_angle_rad"]) > 1e-9:
        raise ConfigurationError(f"design {d['id']} does not match its stored geometry")
    return design
