"""Moving-object segmentation and planar motion estimation from voxelised scans.

A sparse occupancy grid accumulates hits and pass-throughs of every beam.
Points landing in voxels that earlier beams saw as free are *inconsistent*;
connected clusters made mostly of such points form the per-scan clouds of
the moving object. Their centroids give a coarse velocity, which a nested
grid search then refines by looking for the constant planar velocity whose
motion-compensated accumulation of all clouds has the lowest total
occupancy entropy.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.stats import qmc
from scipy.sparse.csgraph import connected_components

from .calibration import DEFAULT_MOUNT_HEIGHT, MirrorMount, mount_from_design, pose_rotation
from .errors import DegenerateError

log = logging.getLogger(__name__)

__all__ = [
    "VoxelGrid",
    "grid_offsets",
    "InconsistentCloud",
    "Segmentation",
    "MotionHypothesis",
    "TrackingParams",
    "BoundaryWarning",
    "voxel_keys",
    "unpack_keys",
    "traverse",
    "update_grid",
    "segment_inconsistent",
    "coarse_estimate",
    "binary_entropy",
    "entropy",
    "interval_transforms",
    "compose_to_last",
    "score_hypotheses",
    "refine_motion",
    "frame_points",
    "track",
]

_OFF = 1 << 20
_MASK = (1 << 21) - 1


class BoundaryWarning(UserWarning):
    """The best motion hypothesis lies on the edge of the search box."""


def voxel_keys(points, voxel_size: float, origin=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Pack the integer voxel coordinates of ``points`` into int64 keys."""
    idx = np.floor((np.asarray(points, float) - np.asarray(origin, float)) / voxel_size).astype(np.int64)
    return _pack(idx)


def _pack(idx: np.ndarray) -> np.ndarray:
    idx = idx + _OFF
    return (idx[..., 0] << 42) | (idx[..., 1] << 21) | idx[..., 2]


def unpack_keys(keys) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    return np.stack([(keys >> 42) & _MASK, (keys >> 21) & _MASK, keys & _MASK], axis=-1) - _OFF


def binary_entropy(p) -> np.ndarray:
    """``-p ln p - (1 - p) ln(1 - p)``, with ``0 ln 0 = 0``."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(p * np.log(p) + (1.0 - p) * np.log1p(-p))
    return np.where((p <= 0.0) | (p >= 1.0), 0.0, h)


@dataclass
class VoxelGrid:
    """Sparse occupancy grid; each observed cell stores ``[hit_count, pass_count]``."""

    voxel_size: float = 0.1
    origin: tuple = (0.0, 0.0, 0.0)
    occupied_threshold: float = 0.8
    cells: dict = field(default_factory=dict)
    frames: int = 0

    def add(self, keys, hits: bool) -> None:
        if len(keys) == 0:
            return
        uniq, counts = np.unique(np.asarray(keys, dtype=np.int64), return_counts=True)
        j = 0 if hits else 1
        cells = self.cells
        for k, c in zip(uniq.tolist(), counts.tolist()):
            cell = cells.get(k)
            if cell is None:
                cell = cells[k] = [0, 0]
            cell[j] += c

    def counts(self, keys) -> np.ndarray:
        """``(n, 2)`` hit/pass counts of ``keys``; unseen cells read as zero."""
        get = self.cells.get
        out = [get(k, (0, 0)) for k in np.asarray(keys, dtype=np.int64).tolist()]
        return np.asarray(out, dtype=float).reshape(-1, 2)

    def probability(self, keys) -> np.ndarray:
        c = self.counts(keys)
        return (c[:, 0] + 1.0) / (c[:, 0] + c[:, 1] + 2.0)

    @property
    def occupied_count(self) -> int:
        thr = self.occupied_threshold
        return sum(1 for h, p in self.cells.values() if (h + 1.0) / (h + p + 2.0) > thr)

    def keys(self, points) -> np.ndarray:
        return voxel_keys(points, self.voxel_size, self.origin)


def traverse(starts, ends, voxel_size: float, origin=(0.0, 0.0, 0.0)):
    """Voxels crossed by each segment, excluding the voxel containing its end.

    A vectorised Amanatides-Woo walk. Returns ``(ray_index, keys)``, one entry
    per crossed voxel, in walk order within each ray.
    """
    o = np.asarray(origin, float)
    p0 = (np.asarray(starts, float) - o) / voxel_size
    p1 = (np.asarray(ends, float) - o) / voxel_size
    cell = np.floor(p0).astype(np.int64)
    last = np.floor(p1).astype(np.int64)
    d = p1 - p0
    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_delta = np.where(d != 0, np.abs(1.0 / d), np.inf)
        bound = np.where(step > 0, cell + 1, cell)
        t_max = np.where(d != 0, (bound - p0) / d, np.inf)
    remaining = np.abs(last - cell).sum(axis=1)
    rays, keys = [], []
    active = np.flatnonzero(remaining > 0)
    rows = np.arange(len(p0))
    while len(active):
        rays.append(active)
        keys.append(_pack(cell[active]))
        axis = np.argmin(t_max[active], axis=1)
        r = rows[active]
        cell[r, axis] += step[r, axis]
        t_max[r, axis] += t_delta[r, axis]
        remaining[active] -= 1
        active = active[remaining[active] > 0]
    if not rays:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=np.int64)
    ray_idx = np.concatenate(rays)
    key_arr = np.concatenate(keys)
    order = np.argsort(ray_idx, kind="stable")
    return ray_idx[order], key_arr[order]


def update_grid(grid: VoxelGrid, points, origins) -> VoxelGrid:
    """Integrate one frame: end voxels gain a hit, voxels crossed on the way gain a pass."""
    pts = np.asarray(points, float).reshape(-1, 3)
    org = np.asarray(origins, float).reshape(-1, 3)
    _, passed = traverse(org, pts, grid.voxel_size, grid.origin)
    grid.add(passed, hits=False)
    grid.add(grid.keys(pts), hits=True)
    grid.frames += 1
    return grid


@dataclass
class InconsistentCloud:
    scan_index: int
    timestamp: float
    points: np.ndarray
    sources: np.ndarray
    centroid_xy: np.ndarray = None

    def __post_init__(self):
        if len(self.points) == 0:
            raise ValueError("an inconsistent cloud cannot be empty")
        if self.centroid_xy is None:
            self.centroid_xy = self.points[:, :2].mean(axis=0)


@dataclass
class Segmentation:
    clouds: list
    static_segments: list
    vacated: np.ndarray
    inconsistent_mask: np.ndarray


def cluster_points(keys: np.ndarray):
    """Label points by 26-connected components of their voxels. Returns ``(labels, n_components)``."""
    uniq, inv = np.unique(keys, return_inverse=True)
    if len(uniq) == 0:
        return np.zeros(0, dtype=int), 0
    idx = unpack_keys(uniq)
    src, dst = [], []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if (dx, dy, dz) <= (0, 0, 0):
                    continue
                nb = _pack(idx + np.array([dx, dy, dz]))
                pos = np.searchsorted(uniq, nb)
                pos_c = np.minimum(pos, len(uniq) - 1)
                found = uniq[pos_c] == nb
                src.append(np.flatnonzero(found))
                dst.append(pos_c[found])
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    adj = coo_matrix((np.ones(len(src)), (src, dst)), shape=(len(uniq), len(uniq)))
    n, labels = connected_components(adj, directed=False)
    return labels[inv.ravel()], n


def segment_inconsistent(grid: VoxelGrid, points, origins, scan_index: int, timestamp: float, sources=None,
                         free_threshold: float = 0.2, occupied_threshold: float = 0.8,
                         min_points: int = 3, min_fraction: float = 0.5) -> Segmentation:
    """Split one frame into moving-object clouds and static segments, against the grid *before* this frame.

    A point is inconsistent when its voxel had pass evidence and ``p <
    free_threshold``. Points are clustered by 26-connectivity of their
    voxels; a cluster with at least ``min_points`` points of which at least
    ``min_fraction`` are inconsistent becomes an :class:`InconsistentCloud`,
    the rest are static segments. Previously occupied voxels that this
    frame's beams pass through are returned as ``vacated``.
    """
    pts = np.asarray(points, float).reshape(-1, 3)
    src = np.zeros(len(pts), dtype=int) if sources is None else np.asarray(sources)
    if grid.frames == 0 or len(pts) == 0:
        return Segmentation([], [], np.zeros(0, dtype=np.int64), np.zeros(len(pts), dtype=bool))
    keys = grid.keys(pts)
    counts = grid.counts(keys)
    p = (counts[:, 0] + 1.0) / (counts.sum(axis=1) + 2.0)
    bad = (counts[:, 1] > 0) & (p < free_threshold)

    _, passed = traverse(origins, pts, grid.voxel_size, grid.origin)
    passed = np.unique(passed)
    pc = grid.counts(passed)
    vacated = passed[(pc[:, 0] + 1.0) / (pc.sum(axis=1) + 2.0) > occupied_threshold]

    labels, n = cluster_points(keys)
    clouds, statics = [], []
    for lab in range(n):
        m = labels == lab
        if m.sum() >= min_points and bad[m].mean() >= min_fraction:
            clouds.append(InconsistentCloud(scan_index, timestamp, pts[m], src[m]))
        else:
            statics.append(pts[m])
    clouds.sort(key=lambda c: -len(c.points))
    return Segmentation(clouds, statics, vacated, bad)


def coarse_estimate(clouds, min_dt: float = 1.0) -> tuple:
    """Median centroid velocity over pairs of time-ordered clouds.

    Pairs are all ``(i, j)`` at least ``min_dt`` seconds apart; when there
    are none, consecutive pairs are used instead. Centroid jitter divided by a
    0.1 s frame gap swamps a slow mover, hence the preference for long
    baselines. Returns ``(v, phi)``.
    """
    if len(clouds) < 2:
        raise DegenerateError("need at least two clouds")
    t = np.array([c.timestamp for c in clouds])
    c = np.array([cl.centroid_xy for cl in clouds])
    i, j = np.triu_indices(len(clouds), k=1)
    dt = t[j] - t[i]
    use = dt >= min_dt
    if not use.any():
        i, j = np.arange(len(clouds) - 1), np.arange(1, len(clouds))
        dt = t[j] - t[i]
        use = dt > 0
    if not use.any():
        raise DegenerateError("all cloud pairs share a timestamp")
    vel = (c[j[use]] - c[i[use]]) / dt[use, None]
    med = np.median(np.asarray(vel), axis=0)
    return float(np.hypot(*med)), float(math.atan2(med[1], med[0]) % (2.0 * math.pi))


def entropy(grid: VoxelGrid) -> float:
    """Total binary entropy (nats) over every observed cell of ``grid``."""
    c = np.asarray(list(grid.cells.values()), dtype=float).reshape(-1, 2)
    p = (c[:, 0] + 1.0) / (c.sum(axis=1) + 2.0)
    return math.fsum(binary_entropy(p).tolist())


# --------------------------------------------------------------------------- #
# motion compensation


def interval_transforms(timestamps, v: float, phi: float) -> list:
    """Homogeneous planar translations covering each interval between consecutive timestamps."""
    ts = np.asarray(timestamps, float)
    out = []
    for dt in np.diff(ts):
        T = np.eye(3)
        T[0, 2] = v * dt * math.cos(phi)
        T[1, 2] = v * dt * math.sin(phi)
        out.append(T)
    return out


def compose_to_last(transforms, k: int) -> np.ndarray:
    """Chronological product carrying cloud ``k``'s frame to the last cloud's frame."""
    T = np.eye(3)
    for Ti in transforms[k:]:
        T = Ti @ T
    return T


@dataclass
class MotionHypothesis:
    v: float
    phi: float
    entropy: float
    n_voxels: float
    transforms: list = field(default_factory=list, repr=False)
    accumulated: np.ndarray | None = field(default=None, repr=False)
    at_boundary: bool = False
    grid_v: np.ndarray | None = field(default=None, repr=False)
    grid_phi: np.ndarray | None = field(default=None, repr=False)
    grid_entropy: np.ndarray | None = field(default=None, repr=False)


def _stack(clouds):
    pts = np.vstack([c.points for c in clouds])
    t_last = clouds[-1].timestamp
    dts = np.concatenate([np.full(len(c.points), t_last - c.timestamp) for c in clouds])
    return pts, dts


def score_hypotheses(points, dts, v, phi, voxel_size: float = 0.05, offsets=((0.0, 0.0, 0.0),)):
    """Entropy and voxel count of the compensated cloud for many ``(v, phi)`` at once.

    Each point of a cloud observed ``dt`` before the last cloud is moved by
    ``v dt (cos phi, sin phi)``. Cells hold only hits, so ``p = (n + 1) / (n + 2)``.
    Scores are averaged over the voxel-grid ``offsets`` (fractions of a voxel).
    """
    v = np.atleast_1d(np.asarray(v, float))
    phi = np.atleast_1d(np.asarray(phi, float))
    pts = np.asarray(points, float) / voxel_size
    n_hyp, n = len(v), len(pts)
    table = binary_entropy((np.arange(n + 2) + 1.0) / (np.arange(n + 2) + 2.0))
    shift = (v[:, None] / voxel_size) * dts[None, :]
    xs = pts[None, :, 0] + shift * np.cos(phi)[:, None]
    ys = pts[None, :, 1] + shift * np.sin(phi)[:, None]
    del shift
    H = np.zeros(n_hyp)
    N = np.zeros(n_hyp)
    buf = np.empty_like(xs)
    for off in offsets:
        np.add(xs, off[0], out=buf)
        ix = np.floor(buf, out=buf).astype(np.int64)
        np.add(ys, off[1], out=buf)
        iy = np.floor(buf, out=buf).astype(np.int64)
        iz = np.floor(pts[:, 2] + off[2]).astype(np.int64)
        ix -= ix.min()
        iy -= iy.min()
        iz -= iz.min()
        sy, sz = int(iy.max()) + 1, int(iz.max()) + 1
        small = (int(ix.max()) + 1) * sy * sz < 2 ** 31
        ix *= sy
        ix += iy
        ix *= sz
        ix += iz[None, :]
        key = ix.astype(np.int32) if small else ix
        key.sort(axis=1)
        start = np.empty(key.shape, dtype=bool)
        start[:, 0] = True
        np.not_equal(key[:, 1:], key[:, :-1], out=start[:, 1:])
        first = np.flatnonzero(start)
        counts = np.diff(np.append(first, key.size))
        row_of = first // n
        H += np.bincount(row_of, weights=table[counts], minlength=n_hyp)
        N += np.bincount(row_of, minlength=n_hyp)
    return H / len(offsets), N / len(offsets)


def grid_offsets(n: int) -> tuple:
    """First ``n`` points of the unscrambled 3D Halton sequence (the first is the origin)."""
    if n < 1:
        raise ValueError("need at least one grid offset")
    return tuple(tuple(float(c) for c in row) for row in qmc.Halton(3, scramble=False).random(n))


DEFAULT_OFFSETS = grid_offsets(4)


def refine_motion(clouds, coarse, v_half: float = 0.1, v_step: float = 0.01, phi_half: float = math.radians(20),
                  phi_step: float = math.radians(2), voxel_size: float = 0.05, offsets=DEFAULT_OFFSETS,
                  keep_points: bool = False) -> MotionHypothesis:
    """Two-level grid search for the entropy-minimising constant velocity.

    Level one spans ``coarse +- (v_half, phi_half)`` at ``(v_step, phi_step)``;
    level two spans one level-one step around the best point at a tenth of
    the step. Speeds are kept non-negative. Emits :class:`BoundaryWarning`
    when the level-one optimum sits on the edge of its box.
    """
    if len(clouds) < 3:
        raise DegenerateError("need at least three clouds")
    v0, phi0 = coarse
    if not (math.isfinite(v0) and math.isfinite(phi0)):
        raise DegenerateError("coarse estimate is not finite")
    pts, dts = _stack(clouds)

    def level(vc, pc, vh, vs, ph, ps):
        nv = int(round(vh / vs))
        npf = int(round(ph / ps))
        vv = vc + vs * np.arange(-nv, nv + 1)
        pp = pc + ps * np.arange(-npf, npf + 1)
        V, P = np.meshgrid(vv, pp, indexing="ij")
        Vf, Pf = V.ravel(), P.ravel()
        valid = Vf >= 0.0
        H = np.full(Vf.shape, np.inf)
        N = np.full(Vf.shape, np.inf)
        H[valid], N[valid] = score_hypotheses(pts, dts, Vf[valid], Pf[valid], voxel_size, offsets)
        best = int(np.argmin(H))
        i, j = np.unravel_index(best, V.shape)
        edge = i in (0, V.shape[0] - 1) or j in (0, V.shape[1] - 1)
        return Vf[best], Pf[best], H[best], N[best], edge, Vf, Pf, H

    v1, p1, _, _, edge, gv1, gp1, gh1 = level(v0, phi0, v_half, v_step, phi_half, phi_step)
    if edge:
        warnings.warn(f"motion optimum at search-box edge (v={v1:.4f}, phi={p1:.4f}); coarse seed may be off",
                      BoundaryWarning, stacklevel=2)
    v2, p2, h2, n2, _, gv2, gp2, gh2 = level(v1, p1, v_step, v_step / 10, phi_step, phi_step / 10)
    phi = float(p2 % (2.0 * math.pi))
    ts = [c.timestamp for c in clouds]
    hyp = MotionHypothesis(
        v=float(v2),
        phi=phi,
        entropy=float(h2),
        n_voxels=float(n2),
        transforms=interval_transforms(ts, float(v2), phi),
        at_boundary=edge,
        grid_v=np.concatenate([gv1, gv2]),
        grid_phi=np.concatenate([gp1, gp2]),
        grid_entropy=np.concatenate([gh1, gh2]),
    )
    if keep_points:
        hyp.accumulated = compensate(clouds, hyp.v, hyp.phi)
    return hyp


def compensate(clouds, v: float, phi: float) -> np.ndarray:
    """Accumulate ``clouds`` in the last cloud's frame under velocity ``(v, phi)``."""
    pts, dts = _stack(clouds)
    out = pts.copy()
    out[:, 0] += v * dts * math.cos(phi)
    out[:, 1] += v * dts * math.sin(phi)
    return out


# --------------------------------------------------------------------------- #
# end-to-end


@dataclass(frozen=True)
class TrackingParams:
    env_voxel: float = 0.1
    fine_voxel: float = 0.05
    free_threshold: float = 0.2
    occupied_threshold: float = 0.8
    min_points: int = 3
    min_fraction: float = 0.5
    band_v: float = 0.02
    band_phi: float = math.radians(2.0)
    gate: float = 0.3
    max_speed: float = 0.5
    n_offsets: int = 8


def frame_points(frame, cfg, designs, estimates=None, mount_height: float = DEFAULT_MOUNT_HEIGHT):
    """World points, beam origins and source flags of one frame.

    Reflected returns are mapped through the calibrated mirror model; their
    beam origin is the point where the beam met the mirror.
    """
    from .calibration import forward_points
    from .scansim import BeamFlag

    bearings = cfg.bearings()
    valid = np.isfinite(frame.ranges) & (frame.flags != BeamFlag.INVALID)
    x, y, yaw, z = (tuple(frame.pose) + (0.0,))[:4]
    R = pose_rotation(frame.pitch, yaw)
    t = np.array([x, y, z])
    sel = np.flatnonzero(valid & (frame.flags == BeamFlag.UNREFLECTED))
    r, th = frame.ranges[sel], bearings[sel]
    loc = [np.column_stack([r * np.cos(th), r * np.sin(th), np.zeros_like(r)])]
    org = [np.zeros((len(sel), 3))]
    src = [np.zeros(len(sel), dtype=int)]
    for d in designs:
        sel = np.flatnonzero(valid & (frame.flags == BeamFlag[d.id]))
        if not len(sel):
            continue
        mount: MirrorMount = mount_from_design(d, mount_height)
        pert = np.zeros(3) if not estimates or d.id not in estimates else estimates[d.id].as_array()
        th = bearings[sel]
        a = mount.alpha + pert[0]
        path = (mount.d + pert[2] + mount.h * math.tan(pert[1])) / np.cos(th - a)
        ok = frame.ranges[sel] > path
        sel, th, path = sel[ok], th[ok], path[ok]
        if not len(sel):
            continue
        pts, path = forward_points(mount, pert, frame.ranges[sel], th)
        loc.append(pts)
        org.append(path[:, None] * np.column_stack([np.cos(th), np.sin(th), np.zeros_like(th)]))
        src.append(np.full(len(sel), int(BeamFlag[d.id])))
    loc, org = np.vstack(loc), np.vstack(org)
    return loc @ R.T + t, org @ R.T + t, np.concatenate(src)


@dataclass
class TrackingResult:
    clouds: list
    estimates: list  # (scan_index, v, phi, entropy, n_voxels, n_clouds)
    final: MotionHypothesis | None
    coarse: tuple | None
    convergence_index: int | None
    n_frames: int

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "n_frames": self.n_frames,
            "n_clouds": len(self.clouds),
            "cloud_scans": [c.scan_index for c in self.clouds],
            "coarse": None if self.coarse is None else {"v": self.coarse[0], "phi": self.coarse[1]},
            "estimates": [
                {"scan": s, "v": v, "phi": p, "entropy": h, "n_voxels": n, "n_clouds": k}
                for s, v, p, h, n, k in self.estimates
            ],
            "converged": None if self.final is None else {
                "v": self.final.v, "phi": self.final.phi, "entropy": self.final.entropy,
                "n_voxels": self.final.n_voxels, "at_boundary": self.final.at_boundary,
            },
            "convergence_index": self.convergence_index,
        }


def convergence_index(estimates, truth, band_v: float, band_phi: float):
    """First scan index from which every later estimate stays inside the band around ``truth``."""
    idx = None
    for s, v, p, *_ in estimates:
        dphi = abs((p - truth[1] + math.pi) % (2.0 * math.pi) - math.pi)
        inside = abs(v - truth[0]) <= band_v and dphi <= band_phi
        if inside and idx is None:
            idx = s
        elif not inside:
            idx = None
    return idx


def track(frames, cfg, designs=(), estimates=None, params: TrackingParams = TrackingParams(),
          mount_height: float = DEFAULT_MOUNT_HEIGHT, truth=None, refine_every: int = 1) -> TrackingResult:
    """Segment the mover frame by frame and refine its velocity as clouds arrive.

    The largest dynamic cluster of each frame joins the nearest existing
    track whose last centroid lies within ``gate + max_speed * dt``, or starts
    a new track. The track with the most clouds is the reported one and is
    re-estimated whenever it grows. ``truth`` (``(v, phi)``) is used only to
    compute the convergence index.
    """
    grid = VoxelGrid(params.env_voxel, occupied_threshold=params.occupied_threshold)
    tracks: list = []
    best: list = []
    seq = []
    coarse = None
    final = None
    n = 0
    for fr in frames:
        n += 1
        pts, org, src = frame_points(fr, cfg, designs, estimates, mount_height)
        seg = segment_inconsistent(grid, pts, org, fr.index, fr.timestamp, src, params.free_threshold,
                                   params.occupied_threshold, params.min_points, params.min_fraction)
        update_grid(grid, pts, org)
        if not seg.clouds:
            continue
        cand = seg.clouds[0]
        owner, dist = None, math.inf
        for tr in tracks:
            last = tr[-1]
            reach = params.gate + params.max_speed * (cand.timestamp - last.timestamp)
            d = float(np.linalg.norm(cand.centroid_xy - last.centroid_xy))
            if d <= reach and d < dist:
                owner, dist = tr, d
        if owner is None:
            owner = []
            tracks.append(owner)
        owner.append(cand)
        if len(owner) < len(best) or owner is not max(tracks, key=len):
            continue
        best = owner
        if len(best) >= 3 and len(best) % refine_every == 0:
            try:
                coarse = coarse_estimate(best)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", BoundaryWarning)
                    final = refine_motion(best, coarse, voxel_size=params.fine_voxel, offsets=grid_offsets(params.n_offsets))
            except DegenerateError:
                continue
            seq.append((fr.index, final.v, final.phi, final.entropy, final.n_voxels, len(best)))
    conv = None if truth is None else convergence_index(seq, truth, params.band_v, params.band_phi)
    return TrackingResult(list(best), seq, final, coarse, conv, n)
