"""Command-line entry point: ``mirrorlidar design|simulate|calibrate|track``.

Every subcommand is a pure function of its input files, flags and seed, so
re-running it writes byte-identical outputs. Files hold radians and metres;
the ``--*-deg`` and ``--*-cm`` flags are converted on the way in.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import calibration as cal
from . import geometry as geo
from . import scansim as sim
from . import tracking as trk
from .errors import (
    ConfigurationError,
    ConvergenceError,
    DegenerateError,
    GeometryError,
    InfeasibleGeometryError,
)

log = logging.getLogger("mirrorlidar")

FORMAT_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
OUTDIR_ENV = "MIRRORLIDAR_OUTDIR"

_SCENE_KEYS = {"format_version", "statics", "movers", "bounds", "nod", "trajectory", "sensor"}


# --------------------------------------------------------------------------- #
# small helpers


def _outdir(args) -> Path:
    out = Path(args.outdir or os.environ.get(OUTDIR_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc


def _angle(rad, deg):
    """Pick the radian value, or convert the degree flag when that one was given."""
    if deg is not None:
        return math.radians(deg)
    return rad


def _length(m, cm):
    if cm is not None:
        return cm / 100.0
    return m


def _sensor(path) -> geo.SensorConfig:
    return geo.SensorConfig() if path is None else geo.SensorConfig.from_dict(_read_json(path))


def _load_designs(path):
    """Designs and sensor config from a design JSON written by ``design``."""
    doc = _read_json(path)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(f"{path}: unsupported design format {doc.get('format_version')!r}")
    try:
        cfg = geo.SensorConfig.from_dict(doc["sensor"])
        designs = [geo.design_from_dict(cfg, d) for d in doc["designs"]]
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"{path}: malformed design file ({exc!r})") from exc
    return cfg, designs


def _designs_from_header(header):
    cfg = geo.SensorConfig.from_dict(header["sensor"])
    return cfg, [geo.design_from_dict(cfg, d) for d in header["designs"]]


def _load_truth(path):
    doc = _read_json(path)
    mirrors = doc.get("mirrors", doc)
    out = {}
    for mid, p in mirrors.items():
        if mid not in geo.MIRROR_IDS:
            raise ConfigurationError(f"unknown mirror id {mid!r} in {path}")
        extra = set(p) - {"d_alpha", "d_beta", "d_d"}
        if extra:
            raise ConfigurationError(f"unknown perturbation keys {sorted(extra)} in {path}")
        out[mid] = cal.PerturbationParams(float(p.get("d_alpha", 0.0)), float(p.get("d_beta", 0.0)),
                                          float(p.get("d_d", 0.0)))
    return out


# --------------------------------------------------------------------------- #
# design


def cmd_design(args) -> int:
    cfg = _sensor(args.sensor)
    D = _length(args.distance, args.distance_cm)
    if D is None or not D > 0.0:
        raise ConfigurationError("design distance must be positive")
    standoffs = dict(geo.DEFAULT_STANDOFFS)
    if args.standoff_near is not None:
        standoffs["near"] = args.standoff_near
    if args.standoff_far is not None:
        standoffs["far"] = args.standoff_far
    designs = geo.solve_all(cfg, D, standoffs)
    out = _outdir(args)
    doc = {
        "format_version": FORMAT_VERSION,
        "sensor": cfg.to_dict(),
        "design_distance_m": D,
        "designs": [d.to_dict() for d in designs],
    }
    _write_json(out / "designs.json", doc)

    lo, hi, step = args.sweep_min, args.sweep_max, args.sweep_step
    if not (0.0 < lo <= hi and step > 0.0):
        raise ConfigurationError("sweep range must satisfy 0 < min <= max and step > 0")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    dists = sorted(set([round(lo + i * step, 12) for i in range(n)] + [D]))
    b_rows, s_rows = [], []
    for dist in dists:
        for d in designs:
            for k in d.beam_indices:
                try:
                    shift = geo.bearing_shift(d, int(k), dist, D)
                    bear = geo.bearing_at_distance(d, int(k), dist)
                except GeometryError:
                    continue
                b_rows.append((dist, d.id, int(k), bear, shift))
                if k < d.beam_interval[1]:
                    try:
                        s_rows.append((dist, d.id, int(k), geo.separation_shift(d, int(k), dist, D)))
                    except GeometryError:
                        pass
    _write_csv(out / "bearing_shift.csv", ["distance_m", "mirror", "beam", "bearing_rad", "shift_rad"], b_rows)
    _write_csv(out / "separation_shift.csv", ["distance_m", "mirror", "beam", "shift_rad"], s_rows)
    for d in designs:
        print(f"{d.id}: length {100 * d.length:.4f} cm, mount angle {math.degrees(d.mount_angle):.4f} deg")
    return EXIT_OK


# --------------------------------------------------------------------------- #
# simulate


def cmd_simulate(args) -> int:
    doc = _read_json(args.scene)
    unknown = set(doc) - _SCENE_KEYS
    if unknown:
        raise ConfigurationError(f"unknown scene keys: {sorted(unknown)}")
    scene = sim.Scene.from_dict(doc)
    if args.no_mirrors == (args.design is not None):
        raise ConfigurationError("give exactly one of --design or --no-mirrors")
    if args.design is not None:
        cfg, designs = _load_designs(args.design)
    else:
        cfg, designs = _sensor(args.sensor), []
    if "sensor" in doc:
        if args.design is not None and geo.SensorConfig.from_dict(doc["sensor"]) != cfg:
            raise ConfigurationError("scene sensor config disagrees with the design file")
        cfg = geo.SensorConfig.from_dict(doc["sensor"])
    noise = not args.noiseless

    truth = {}
    if args.truth is not None and args.truth_table:
        raise ConfigurationError("give at most one of --truth and --truth-table")
    if args.truth is not None:
        truth = _load_truth(args.truth)
    elif args.truth_table:
        truth = {k: cal.PerturbationParams(*v) for k, v in cal.REPORTED_PERTURBATIONS.items()}
    if not designs:
        truth = {}
    truth = {k: v for k, v in truth.items() if k in {d.id for d in designs}}

    nod = sim.NodProfile.from_dict(doc["nod"]) if "nod" in doc else sim.NodProfile()
    amp = _angle(args.nod_amplitude, args.nod_amplitude_deg)
    if amp is not None or args.nod_period is not None:
        nod = sim.NodProfile(amp if amp is not None else nod.pitch_amplitude,
                             args.nod_period if args.nod_period is not None else nod.period, nod.phase)
    traj = sim.Trajectory.from_dict(doc["trajectory"]) if "trajectory" in doc else sim.Trajectory.static()
    yaw = _angle(args.yaw, args.yaw_deg)
    if yaw is not None:
        x, y, _, z = traj.pose(0.0)
        traj = sim.Trajectory.static(x, y, yaw, z)
    if args.duration <= 0.0:
        raise ConfigurationError("duration must be positive")

    header = sim.make_header(cfg, designs, nod, traj, truth, args.mount_height, args.seed, scene, noise)
    frames = sim.simulate(scene, cfg, designs, truth, nod, traj, args.duration, args.seed, args.mount_height, noise)
    out = _outdir(args)
    n = sim.write_log(out / args.output, header, frames)
    print(f"wrote {n} frames to {out / args.output}")
    return EXIT_OK


# --------------------------------------------------------------------------- #
# calibrate


def cmd_calibrate(args) -> int:
    cfg, designs = _load_designs(args.design)
    datasets = []
    for path in args.logs:
        header, frames = sim.read_log(path)
        if geo.SensorConfig.from_dict(header["sensor"]) != cfg:
            raise ConfigurationError(f"{path}: sensor config differs from the design file")
        datasets.append(cal.collect_dataset(frames, cfg, designs))
    lo = math.radians(args.bound_angle_deg)
    bounds = ((-lo, lo), (-lo, lo), (-args.bound_distance, args.bound_distance))
    res = cal.calibrate(datasets, designs, bounds, args.mount_height, min_datasets=args.min_datasets,
                        max_iter=args.max_iter)
    out = _outdir(args)
    doc = res.to_dict()
    doc["mount_height_m"] = args.mount_height
    doc["logs"] = [Path(p).name for p in args.logs]
    _write_json(out / "calibration.json", doc)
    _write_csv(out / "residuals.csv",
               ["mirror", "dataset", "frame", "beam", "x", "y", "z", "desired_x", "desired_y", "desired_z",
                "residual_m"], res.residual_rows)
    for mid, p in res.estimates.items():
        print(f"{mid}: d_alpha {p.d_alpha:+.5f} rad, d_beta {p.d_beta:+.5f} rad, d_d {1000 * p.d_d:+.2f} mm")
    return EXIT_OK


# --------------------------------------------------------------------------- #
# track


def cmd_track(args) -> int:
    header, frames = sim.read_log(args.log)
    cfg, designs = _designs_from_header(header)
    estimates = None
    mount_height = header.get("mount_height", cal.DEFAULT_MOUNT_HEIGHT)
    if args.calibration is not None:
        doc = _read_json(args.calibration)
        if doc.get("format_version") != FORMAT_VERSION:
            raise ConfigurationError(f"{args.calibration}: unsupported calibration format")
        estimates = _load_truth(args.calibration)
        mount_height = doc.get("mount_height_m", mount_height)
    elif designs:
        log.warning("no calibration given; reflected returns use the nominal mirror model")
    truth = None
    if args.truth_v is not None:
        phi = _angle(args.truth_phi, args.truth_phi_deg)
        if phi is None:
            raise ConfigurationError("--truth-v needs --truth-phi or --truth-phi-deg")
        truth = (args.truth_v, phi)
    params = trk.TrackingParams(n_offsets=args.n_offsets)
    res = trk.track(frames, cfg, designs, estimates, params, mount_height, truth=truth)

    out = _outdir(args)
    doc = res.to_dict()
    doc["log"] = Path(args.log).name
    doc["truth"] = None if truth is None else {"v": truth[0], "phi": truth[1]}
    _write_json(out / "tracking.json", doc)
    _write_csv(out / "estimates.csv", ["scan", "v_mps", "phi_rad", "entropy", "n_voxels", "n_clouds"],
               res.estimates)
    rows = []
    if res.final is not None:
        comp = trk.compensate(res.clouds, res.final.v, res.final.phi)
        ends = np.cumsum([len(cl.points) for cl in res.clouds])
        for cl, pts in zip(res.clouds, np.split(comp, ends[:-1])):
            names = [sim.BeamFlag(int(s)).name for s in cl.sources]
            for p, name in zip(pts, names):
                rows.append((cl.scan_index, cl.timestamp, float(p[0]), float(p[1]), float(p[2]), name,
                             "unreflected" if name == "UNREFLECTED" else "mirror"))
    _write_csv(out / "cloud.csv", ["scan", "t", "x", "y", "z", "flag", "source"], rows)
    if res.final is None:
        print("no moving object found")
    else:
        print(f"v = {res.final.v:.4f} m/s, phi = {math.degrees(res.final.phi):.2f} deg "
              f"after {len(res.clouds)} clouds; convergence scan {res.convergence_index}")
    return EXIT_OK


# --------------------------------------------------------------------------- #
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mirrorlidar", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0, help="repeat for more logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--outdir", help=f"output directory (default ${OUTDIR_ENV} or the current directory)")

    d = sub.add_parser("design", help="solve the four mirrors and tabulate distance shifts")
    common(d)
    g = d.add_mutually_exclusive_group(required=True)
    g.add_argument("--distance", type=float, help="design distance D in metres")
    g.add_argument("--distance-cm", type=float, help="design distance D in centimetres")
    d.add_argument("--sensor", help="JSON file overriding SensorConfig fields")
    d.add_argument("--standoff-near", type=float, help="optical-centre standoff of the near mirrors (m)")
    d.add_argument("--standoff-far", type=float, help="optical-centre standoff of the far mirrors (m)")
    d.add_argument("--sweep-min", type=float, default=0.4)
    d.add_argument("--sweep-max", type=float, default=6.0)
    d.add_argument("--sweep-step", type=float, default=0.2)
    d.set_defaults(func=cmd_design)

    s = sub.add_parser("simulate", help="raytrace a scene into a scan log")
    common(s)
    s.add_argument("scene", help="scene JSON file")
    s.add_argument("--design", help="design JSON from the design subcommand")
    s.add_argument("--no-mirrors", action="store_true", help="simulate the bare sensor")
    s.add_argument("--sensor", help="SensorConfig JSON (only with --no-mirrors)")
    s.add_argument("--truth", help="JSON of true mirror perturbations {id: {d_alpha, d_beta, d_d}}")
    s.add_argument("--truth-table", action="store_true", help="use the reported perturbations of the built sensor")
    s.add_argument("--duration", type=float, default=10.0, help="seconds of scanning")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noiseless", action="store_true")
    s.add_argument("--mount-height", type=float, default=cal.DEFAULT_MOUNT_HEIGHT)
    s.add_argument("--nod-amplitude", type=float)
    s.add_argument("--nod-amplitude-deg", type=float)
    s.add_argument("--nod-period", type=float)
    s.add_argument("--yaw", type=float, help="static platform yaw (rad)")
    s.add_argument("--yaw-deg", type=float)
    s.add_argument("-o", "--output", default="scan.jsonl", help="log file name inside the output directory")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", help="estimate mirror perturbations from wall logs")
    common(c)
    c.add_argument("logs", nargs="+", help="scan logs, one wall orientation each")
    c.add_argument("--design", required=True)
    c.add_argument("--mount-height", type=float, default=cal.DEFAULT_MOUNT_HEIGHT)
    c.add_argument("--min-datasets", type=int, default=3)
    c.add_argument("--max-iter", type=int, default=200)
    c.add_argument("--bound-angle-deg", type=float, default=math.degrees(0.1))
    c.add_argument("--bound-distance", type=float, default=0.03)
    c.set_defaults(func=cmd_calibrate)

    t = sub.add_parser("track", help="detect the moving object and estimate its velocity")
    common(t)
    t.add_argument("log")
    t.add_argument("--calibration", help="calibration JSON from the calibrate subcommand")
    t.add_argument("--truth-v", type=float, help="true speed, only used for the convergence index")
    t.add_argument("--truth-phi", type=float)
    t.add_argument("--truth-phi-deg", type=float)
    t.add_argument("--n-offsets", type=int, default=trk.TrackingParams.n_offsets)
    t.set_defaults(func=cmd_track)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, InfeasibleGeometryError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        best = getattr(exc, "best", None)
        print(f"numerical failure: {exc}" + (f" (best {best.to_dict()})" if best is not None else ""),
              file=sys.stderr)
        return EXIT_NUMERIC
    except (DegenerateError, GeometryError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
