"""Mirror-mount calibration from scans of planar walls.

Each mounted mirror deviates from its design by an in-plane rotation
``d_alpha``, a tilt ``d_beta`` about its horizontal rotation axis (which sits
``h`` below the scan plane) and a shift ``d_d`` of its perpendicular distance.
Walls seen by the unreflected beams are fitted by PCA; the perturbations of
each mirror are then found by a bounded Levenberg-Marquardt fit that puts the
reflected returns back onto those planes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DegenerateError, InvalidReflectionError, PoleError

log = logging.getLogger(__name__)

__all__ = [
    "PerturbationParams",
    "MirrorMount",
    "ProjectedMeasurement",
    "PlaneModel",
    "CalibrationResult",
    "REPORTED_PERTURBATIONS",
    "DEFAULT_BOUNDS",
    "DEFAULT_MOUNT_HEIGHT",
    "mount_from_design",
    "forward_project",
    "forward_points",
    "point_jacobian",
    "pose_rotation",
    "to_global",
    "to_local",
    "fit_plane",
    "collect_dataset",
    "residuals",
    "residual_jacobian",
    "levenberg_marquardt",
    "calibrate",
]

# Perturbations reported for the built sensor: (d_alpha rad, d_beta rad, d_d m).
REPORTED_PERTURBATIONS = {
    "L1": (-0.043, 0.05, 0.01),
    "L2": (-0.03, 0.035, -0.012),
    "R1": (0.004, -0.008, 0.007),
    "R2": (0.03, -0.01, -0.005),
}

DEFAULT_BOUNDS = ((-0.1, 0.1), (-0.1, 0.1), (-0.03, 0.03))
DEFAULT_MOUNT_HEIGHT = 0.05


@dataclass(frozen=True)
class PerturbationParams:
    """Deviation of one mounted mirror from its design."""

    d_alpha: float = 0.0
    d_beta: float = 0.0
    d_d: float = 0.0
    bounds: tuple = DEFAULT_BOUNDS

    def as_array(self) -> np.ndarray:
        return np.array([self.d_alpha, self.d_beta, self.d_d], dtype=float)

    @classmethod
    def from_array(cls, x, bounds=DEFAULT_BOUNDS) -> "PerturbationParams":
        return cls(float(x[0]), float(x[1]), float(x[2]), tuple(map(tuple, bounds)))

    def within_bounds(self) -> bool:
        return all(lo <= v <= hi for v, (lo, hi) in zip(self.as_array(), self.bounds))

    def to_dict(self) -> dict:
        return {"d_alpha": self.d_alpha, "d_beta": self.d_beta, "d_d": self.d_d}


@dataclass(frozen=True)
class MirrorMount:
    """Nominal mirror placement: normal angle ``alpha``, distance ``d`` and axis depth ``h``."""

    alpha: float
    d: float
    h: float = DEFAULT_MOUNT_HEIGHT
    beta_nominal: float = math.pi / 2.0

    def __post_init__(self):
        if not (self.d > 0.0 and self.h > 0.0):
            raise ValueError("mirror distance and height must be positive")


def mount_from_design(design, h: float = DEFAULT_MOUNT_HEIGHT) -> MirrorMount:
    return MirrorMount(alpha=design.normal_angle, d=design.perp_distance, h=h)


@dataclass
class ProjectedMeasurement:
    """One reflected return mapped back into the sensor frame."""

    r_meas: float
    bearing: float
    mirror_path: float
    r_proj: float
    r_actual: float
    bearing_actual: float
    elevation: float
    local: np.ndarray
    global_: np.ndarray | None = None
    desired: np.ndarray | None = None


@dataclass(frozen=True)
class PlaneModel:
    normal: np.ndarray
    point: np.ndarray
    rms_residual: float

    def distance(self, pts) -> np.ndarray:
        return (np.asarray(pts) - self.point) @ self.normal

    def to_dict(self) -> dict:
        return {"normal": self.normal.tolist(), "point": self.point.tolist(), "rms_residual": self.rms_residual}


def _reflect_terms(alpha, d, h, pert, bearing):
    a = alpha + pert[0]
    beta = pert[1]
    off = d + pert[2] + h * np.tan(beta)
    psi = bearing - a
    c = np.cos(psi)
    return a, beta, off, psi, c


def forward_points(mount: MirrorMount, pert, r_meas, bearing):
    """Vectorised core of :func:`forward_project`.

    Returns ``(points, mirror_path)`` with ``points`` of shape ``(n, 3)`` in
    the sensor frame. The beam reaches the tilted mirror's trace in the scan
    plane, ``n . p = d + d_d + h tan(d_beta)``, after ``mirror_path``; the
    rest of the range travels along the reflected direction.
    """
    pert = np.asarray(pert, dtype=float)
    r = np.atleast_1d(np.asarray(r_meas, dtype=float))
    th = np.atleast_1d(np.asarray(bearing, dtype=float))
    a, beta, off, psi, c = _reflect_terms(mount.alpha, mount.d, mount.h, pert, th)
    if np.any(c <= 1e-9):
        raise PoleError("beam parallel to (or behind) the perturbed mirror")
    path = off / c
    leg = r - path
    if np.any(leg <= 0.0):
        raise InvalidReflectionError("measured range shorter than the path to the mirror")
    cb2 = math.cos(beta) ** 2
    bx, by = np.cos(th), np.sin(th)
    nx, ny = math.cos(a), math.sin(a)
    rho_x = bx - 2.0 * cb2 * c * nx
    rho_y = by - 2.0 * cb2 * c * ny
    rho_z = math.sin(2.0 * beta) * c
    pts = np.column_stack([path * bx + leg * rho_x, path * by + leg * rho_y, leg * rho_z])
    return pts, path


def forward_project(mount: MirrorMount, pert: PerturbationParams, r_meas: float, bearing: float) -> ProjectedMeasurement:
    """Map a reflected range/bearing pair to the point that produced it.

    ``r_proj`` is the reflected leg projected on the scan plane, ``elevation``
    its angle above that plane, and ``(r_actual, bearing_actual)`` the polar
    position of the hit in the scan plane.
    """
    p = pert.as_array() if isinstance(pert, PerturbationParams) else np.asarray(pert, float)
    pts, path = forward_points(mount, p, r_meas, bearing)
    pt = pts[0]
    leg = float(r_meas) - float(path[0])
    elev = math.asin(max(-1.0, min(1.0, pt[2] / leg)))
    return ProjectedMeasurement(
        r_meas=float(r_meas),
        bearing=float(bearing),
        mirror_path=float(path[0]),
        r_proj=leg * math.cos(elev),
        r_actual=float(math.hypot(pt[0], pt[1])),
        bearing_actual=float(math.atan2(pt[1], pt[0])),
        elevation=elev,
        local=pt,
    )


def point_jacobian(mount: MirrorMount, pert, r_meas, bearing) -> np.ndarray:
    """Analytic ``d(local point)/d(d_alpha, d_beta, d_d)``, shape ``(n, 3, 3)``."""
    pert = np.asarray(pert, dtype=float)
    r = np.atleast_1d(np.asarray(r_meas, dtype=float))
    th = np.atleast_1d(np.asarray(bearing, dtype=float))
    a, beta, off, psi, c = _reflect_terms(mount.alpha, mount.d, mount.h, pert, th)
    s = np.sin(psi)
    path = off / c
    leg = r - path
    cb2 = math.cos(beta) ** 2
    s2b, c2b = math.sin(2.0 * beta), math.cos(2.0 * beta)
    n = np.array([math.cos(a), math.sin(a)])
    nperp = np.array([-math.sin(a), math.cos(a)])
    b = np.column_stack([np.cos(th), np.sin(th), np.zeros_like(th)])
    rho = np.column_stack([b[:, 0] - 2 * cb2 * c * n[0], b[:, 1] - 2 * cb2 * c * n[1], s2b * c])

    dpath = np.column_stack([-off * s / c**2, mount.h / (math.cos(beta) ** 2 * c), 1.0 / c])
    drho_a = np.column_stack(
        [-2 * cb2 * (s * n[0] + c * nperp[0]), -2 * cb2 * (s * n[1] + c * nperp[1]), s2b * s]
    )
    drho_b = np.column_stack([2 * s2b * c * n[0], 2 * s2b * c * n[1], 2 * c2b * c])

    jac = np.empty((len(th), 3, 3))
    diff = b - rho
    jac[:, :, 0] = dpath[:, 0:1] * diff + leg[:, None] * drho_a
    jac[:, :, 1] = dpath[:, 1:2] * diff + leg[:, None] * drho_b
    jac[:, :, 2] = dpath[:, 2:3] * diff
    return jac


def pose_rotation(pitch: float, yaw: float) -> np.ndarray:
    """Rotation taking sensor-frame vectors to world: nod about ``x`` first, then platform yaw."""
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return rz @ rx


def to_global(points, pitch: float, pose) -> np.ndarray:
    """Sensor-frame points to world. ``pose`` is ``(x, y, yaw)`` or ``(x, y, yaw, z)``."""
    x, y, yaw, z = (tuple(pose) + (0.0,))[:4]
    R = pose_rotation(pitch, yaw)
    return np.asarray(points, dtype=float) @ R.T + np.array([x, y, z])


def to_local(points, pitch: float, pose) -> np.ndarray:
    x, y, yaw, z = (tuple(pose) + (0.0,))[:4]
    R = pose_rotation(pitch, yaw)
    return (np.asarray(points, dtype=float) - np.array([x, y, z])) @ R


def fit_plane(points) -> PlaneModel:
    """Least-squares plane through ``points`` (PCA: smallest-eigenvalue eigenvector)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 3:
        raise DegenerateError("need at least three 3D points to fit a plane")
    centroid = pts.mean(axis=0)
    q = pts - centroid
    evals, evecs = np.linalg.eigh(q.T @ q / len(pts))
    scale = max(evals[2], np.finfo(float).tiny)
    if evals[1] <= 1e-12 * scale or evals[2] <= 0.0:
        raise DegenerateError("points are collinear or coincident")
    normal = evecs[:, 0]
    # deterministic orientation: largest component positive
    if normal[np.argmax(np.abs(normal))] < 0:
        normal = -normal
    rms = float(np.sqrt(np.mean((q @ normal) ** 2)))
    return PlaneModel(normal=normal, point=centroid, rms_residual=rms)


# --------------------------------------------------------------------------- #
# datasets and cost


@dataclass
class MirrorSamples:
    """Reflected returns of one mirror on one wall, with their frame geometry."""

    ranges: np.ndarray
    bearings: np.ndarray
    rotations: np.ndarray  # (n, 3, 3) sensor -> world
    origins: np.ndarray  # (n, 3)
    beams: np.ndarray
    frames: np.ndarray


@dataclass
class WallDataset:
    plane: PlaneModel
    n_unreflected: int
    samples: dict = field(default_factory=dict)


def collect_dataset(frames, cfg, designs, sigma_reject: float = 5.0) -> WallDataset:
    """Fit the wall seen by the unreflected beams and gather each mirror's returns."""
    from .scansim import BeamFlag

    flag_of = {d.id: BeamFlag[d.id] for d in designs}
    bearings = cfg.bearings()
    world, mirror_rows = [], {d.id: [] for d in designs}
    for fr in frames:
        valid = np.isfinite(fr.ranges) & (fr.ranges > 0) & (fr.ranges <= cfg.max_range)
        R = pose_rotation(fr.pitch, fr.pose[2])
        origin = np.array([fr.pose[0], fr.pose[1], fr.pose[3] if len(fr.pose) > 3 else 0.0])
        direct = valid & (fr.flags == BeamFlag.UNREFLECTED)
        if direct.any():
            r = fr.ranges[direct]
            th = bearings[direct]
            loc = np.column_stack([r * np.cos(th), r * np.sin(th), np.zeros_like(r)])
            world.append(loc @ R.T + origin)
        for d in designs:
            sel = np.flatnonzero(valid & (fr.flags == flag_of[d.id]))
            if len(sel):
                mirror_rows[d.id].append((fr.ranges[sel], bearings[sel], R, origin, sel, fr.index))
    if not world:
        raise DegenerateError("no unreflected returns to fit the wall")
    pts = np.vstack(world)
    plane = fit_plane(pts)
    for _ in range(3):
        keep = np.abs(plane.distance(pts)) <= sigma_reject * max(plane.rms_residual, 1e-6)
        if keep.all():
            break
        pts = pts[keep]
        plane = fit_plane(pts)
    ds = WallDataset(plane=plane, n_unreflected=len(pts))
    for mid, rows in mirror_rows.items():
        if not rows:
            continue
        n = [len(r[0]) for r in rows]
        ds.samples[mid] = MirrorSamples(
            ranges=np.concatenate([r[0] for r in rows]),
            bearings=np.concatenate([r[1] for r in rows]),
            rotations=np.concatenate([np.repeat(r[2][None], k, axis=0) for r, k in zip(rows, n)]),
            origins=np.concatenate([np.repeat(r[3][None], k, axis=0) for r, k in zip(rows, n)]),
            beams=np.concatenate([r[4] for r in rows]),
            frames=np.concatenate([np.full(k, r[5]) for r, k in zip(rows, n)]),
        )
    return ds


def _world_points(mount, x, smp: MirrorSamples) -> np.ndarray:
    loc, _ = forward_points(mount, x, smp.ranges, smp.bearings)
    return np.einsum("nij,nj->ni", smp.rotations, loc) + smp.origins


def residuals(x, mount: MirrorMount, data) -> np.ndarray:
    """Signed point-to-plane distances of the reflected returns for perturbation ``x``.

    ``data`` is a sequence of ``(MirrorSamples, PlaneModel)`` pairs.
    """
    out = [plane.distance(_world_points(mount, x, smp)) for smp, plane in data]
    return np.concatenate(out) if out else np.zeros(0)


def residual_jacobian(x, mount: MirrorMount, data) -> np.ndarray:
    """Analytic Jacobian of :func:`residuals`, shape ``(n, 3)``."""
    rows = []
    for smp, plane in data:
        jl = point_jacobian(mount, x, smp.ranges, smp.bearings)
        nw = np.einsum("i,nij->nj", plane.normal, smp.rotations)  # normal pulled into sensor frame
        rows.append(np.einsum("nj,njk->nk", nw, jl))
    return np.vstack(rows) if rows else np.zeros((0, 3))


def desired_points(mount: MirrorMount, smp: MirrorSamples, plane: PlaneModel) -> np.ndarray:
    """Where each ideal (unperturbed) reflected ray meets the fitted plane."""
    a, th = mount.alpha, smp.bearings
    c = np.cos(th - a)
    path = mount.d / c
    b = np.column_stack([np.cos(th), np.sin(th), np.zeros_like(th)])
    n = np.array([math.cos(a), math.sin(a), 0.0])
    rho = b - 2.0 * c[:, None] * n
    start = np.einsum("nij,nj->ni", smp.rotations, path[:, None] * b) + smp.origins
    dirs = np.einsum("nij,nj->ni", smp.rotations, rho)
    denom = dirs @ plane.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((plane.point - start) @ plane.normal) / denom
    return start + t[:, None] * dirs


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool


def levenberg_marquardt(fun, jac, x0, bounds, max_iter=200, ftol=1e-12, xtol=1e-10, lam0=1e-3) -> LMResult:
    """Damped Gauss-Newton with box bounds enforced by projection.

    Stops when the cost decrease falls below ``ftol`` (relative to the cost,
    floored at 1) or the accepted step is shorter than ``xtol``.
    """
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    r = fun(x)
    cost = 0.5 * float(r @ r)
    lam = lam0
    for it in range(1, max_iter + 1):
        J = jac(x)
        g = J.T @ r
        A = J.T @ J
        diag = np.diag(A).copy()
        diag[diag <= 0] = 1.0
        accepted = False
        for _ in range(30):
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = np.clip(x + step, lo, hi)
            r_new = fun(x_new)
            cost_new = 0.5 * float(r_new @ r_new)
            if cost_new <= cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            return LMResult(x, cost, it, True)
        dx = np.linalg.norm(x_new - x)
        dcost = cost - cost_new
        x, r, cost = x_new, r_new, cost_new
        lam = max(lam / 10.0, 1e-12)
        if dcost < ftol * max(cost, 1.0) or dx < xtol:
            return LMResult(x, cost, it, True)
    return LMResult(x, cost, max_iter, False)


@dataclass
class CalibrationResult:
    estimates: dict
    planes: list
    cost: dict
    iterations: dict
    residuals: dict
    residual_rows: list

    def to_dict(self) -> dict:
        stats = {}
        for mid, res in self.residuals.items():
            stats[mid] = {
                "n": int(len(res)),
                "rms_m": float(np.sqrt(np.mean(res**2))) if len(res) else 0.0,
                "max_abs_m": float(np.max(np.abs(res))) if len(res) else 0.0,
                "frac_within_0.0225": float(np.mean(np.abs(res) <= 0.0225)) if len(res) else 1.0,
            }
        return {
            "format_version": 1,
            "mirrors": {mid: p.to_dict() for mid, p in self.estimates.items()},
            "planes": [p.to_dict() for p in self.planes],
            "cost": self.cost,
            "iterations": self.iterations,
            "residual_stats": stats,
        }


def calibrate(datasets, designs, bounds=DEFAULT_BOUNDS, mount_height=DEFAULT_MOUNT_HEIGHT,
              min_datasets=3, sigma_reject=5.0, max_iter=200) -> CalibrationResult:
    """Estimate ``(d_alpha, d_beta, d_d)`` for every mirror, independently.

    ``datasets`` are :class:`WallDataset` objects (see :func:`collect_dataset`).
    Reflected returns further than ``sigma_reject`` wall-fit RMS from their
    plane after a first fit are dropped and the fit is repeated once.
    """
    if len(datasets) < min_datasets:
        raise DegenerateError(f"need at least {min_datasets} wall datasets, got {len(datasets)}")
    estimates, cost, iters, res_all, rows = {}, {}, {}, {}, []
    for design in designs:
        mount = mount_from_design(design, mount_height)
        data = [(ds.samples[design.id], ds.plane) for ds in datasets if design.id in ds.samples]
        if not data:
            raise DegenerateError(f"no reflected returns for mirror {design.id}")
        sigma = max(max(ds.plane.rms_residual for ds in datasets), 1e-4)

        def run(data):
            return levenberg_marquardt(
                lambda x: residuals(x, mount, data),
                lambda x: residual_jacobian(x, mount, data),
                np.zeros(3), bounds, max_iter=max_iter,
            )

        fit = run(data)
        trimmed = []
        for smp, plane in data:
            keep = np.abs(plane.distance(_world_points(mount, fit.x, smp))) <= sigma_reject * sigma
            trimmed.append((_subset(smp, keep), plane))
        if sum(len(s.ranges) for s, _ in trimmed) < sum(len(s.ranges) for s, _ in data):
            fit = run(trimmed)
        data = trimmed
        est = PerturbationParams.from_array(fit.x, bounds)
        if not fit.converged:
            raise ConvergenceError(f"mirror {design.id}: no convergence in {max_iter} iterations", best=est)
        estimates[design.id] = est
        cost[design.id] = fit.cost
        iters[design.id] = fit.iterations
        res_all[design.id] = residuals(fit.x, mount, data)
        for k, (smp, plane) in enumerate(data):
            pts = _world_points(mount, fit.x, smp)
            des = desired_points(mount, smp, plane)
            dist = plane.distance(pts)
            for j in range(len(dist)):
                rows.append((design.id, k, int(smp.frames[j]), int(smp.beams[j]), *pts[j], *des[j], dist[j]))
        log.info("mirror %s: %s cost=%.3e iters=%d", design.id, est.to_dict(), fit.cost, fit.iterations)
    return CalibrationResult(estimates, [ds.plane for ds in datasets], cost, iters, res_all, rows)


def _subset(smp: MirrorSamples, keep) -> MirrorSamples:
    return MirrorSamples(
        smp.ranges[keep], smp.bearings[keep], smp.rotations[keep], smp.origins[keep], smp.beams[keep], smp.frames[keep]
    )
