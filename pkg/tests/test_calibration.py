from __future__ import annotations

import math

import numpy as np
import pytest

from mirrorlidar.calibration import (
    DEFAULT_BOUNDS,
    MirrorMount,
    PerturbationParams,
    calibrate,
    collect_dataset,
    fit_plane,
    forward_points,
    forward_project,
    levenberg_marquardt,
    mount_from_design,
    point_jacobian,
    residual_jacobian,
    residuals,
    to_global,
    to_local,
)
from mirrorlidar.errors import ConvergenceError, DegenerateError, InvalidReflectionError, PoleError
from mirrorlidar.geometry import SensorConfig, solve_all
from mirrorlidar.scenarios import calibration_logs, reported_truth

CFG = SensorConfig()
DESIGNS = solve_all(CFG, 2.0)
BY_ID = {d.id: d for d in DESIGNS}


@pytest.fixture(scope="module")
def table_datasets():
    return [collect_dataset(f, CFG, DESIGNS) for f in calibration_logs(CFG, DESIGNS, reported_truth(), seed=0)]


def test_zero_perturbation_reduces_to_planar_fold():
    mount = mount_from_design(BY_ID["L1"])
    k = BY_ID["L1"].anchor_beam
    th = float(CFG.bearing(k))
    pm = forward_project(mount, PerturbationParams(), 2.0, th)
    path = mount.d / math.cos(th - mount.alpha)
    assert pm.mirror_path == pytest.approx(path, abs=1e-15)
    assert pm.local[2] == 0.0
    assert pm.r_proj == pytest.approx(2.0 - path, abs=1e-12)
    assert pm.bearing_actual == pytest.approx(BY_ID["L1"].targets[k - BY_ID["L1"].beam_interval[0]], abs=1e-3)


def test_pure_tilt_elevation():
    mount = mount_from_design(BY_ID["L2"])
    th = CFG.bearings()[BY_ID["L2"].beam_indices]
    pts, path = forward_points(mount, [0.0, 0.05, 0.0], np.full(len(th), 2.0), th)
    leg = 2.0 - path
    c = np.cos(th - mount.alpha)
    # exact reflection: the leg rises at sin(2 d_beta) times the in-plane incidence cosine
    assert np.allclose(pts[:, 2], leg * math.sin(0.1) * c, atol=1e-12)
    assert np.all(pts[:, 2] > 0)


def test_forward_errors():
    mount = mount_from_design(BY_ID["L1"])
    k = BY_ID["L1"].anchor_beam
    with pytest.raises(InvalidReflectionError):
        forward_points(mount, np.zeros(3), 0.01, CFG.bearing(k))
    with pytest.raises(PoleError):
        forward_points(mount, np.zeros(3), 1.0, mount.alpha + math.pi / 2)
    with pytest.raises(ValueError):
        MirrorMount(0.0, -1.0)


def test_to_global_examples():
    p = np.array([[1.0, 2.0, 3.0], [-0.5, 0.1, 2.0]])
    assert np.array_equal(to_global(p, 0.0, (0.0, 0.0, 0.0)), p)
    assert to_global(p, 0.0, (0.0, 0.0, math.pi / 2)) == pytest.approx(np.column_stack([-p[:, 1], p[:, 0], p[:, 2]]))
    rng = np.random.default_rng(0)
    for _ in range(20):
        pose = tuple(rng.uniform(-3, 3, 4))
        pitch = rng.uniform(-1, 1)
        q = rng.normal(size=(10, 3))
        assert np.max(np.abs(to_local(to_global(q, pitch, pose), pitch, pose) - q)) <= 1e-12


def test_fit_plane_examples():
    rng = np.random.default_rng(1)
    flat = np.column_stack([rng.uniform(-1, 1, 50), rng.uniform(-1, 1, 50), np.ones(50)])
    pl = fit_plane(flat)
    assert np.allclose(np.abs(pl.normal), [0, 0, 1]) and pl.rms_residual == pytest.approx(0, abs=1e-12)
    tri = fit_plane([[0, 0, 0], [1, 0, 1], [0, 1, 2]])
    assert tri.rms_residual == pytest.approx(0, abs=1e-12)

    n_true = np.array([0.3, -0.2, 0.93])
    n_true /= np.linalg.norm(n_true)
    u = np.cross(n_true, [1, 0, 0])
    u /= np.linalg.norm(u)
    v = np.cross(n_true, u)
    a, b = rng.uniform(-2, 2, (2, 500))
    pts = a[:, None] * u + b[:, None] * v + rng.normal(0, 0.005, 500)[:, None] * n_true
    pl = fit_plane(pts)
    assert pl.rms_residual <= 0.007
    assert math.degrees(math.acos(min(1.0, abs(pl.normal @ n_true)))) <= 0.5

    with pytest.raises(DegenerateError):
        fit_plane([[0, 0, 0], [1, 1, 1], [2, 2, 2], [3, 3, 3]])
    with pytest.raises(DegenerateError):
        fit_plane([[0, 0, 0], [1, 0, 0]])


def test_point_jacobian_matches_finite_differences():
    rng = np.random.default_rng(5)
    for d in DESIGNS:
        mount = mount_from_design(d)
        th = CFG.bearings()[rng.choice(d.beam_indices, 25)]
        r = rng.uniform(0.5, 4.0, 25)
        x = rng.uniform(-0.05, 0.05, 3) * np.array([1, 1, 0.2])
        J = point_jacobian(mount, x, r, th)
        for j in range(3):
            e = np.zeros(3)
            e[j] = 1e-7
            num = (forward_points(mount, x + e, r, th)[0] - forward_points(mount, x - e, r, th)[0]) / 2e-7
            assert np.allclose(J[:, :, j], num, rtol=1e-5, atol=1e-7)


def test_residual_jacobian_matches_finite_differences(table_datasets):
    rng = np.random.default_rng(2)
    d = BY_ID["L2"]
    mount = mount_from_design(d)
    data = [(ds.samples["L2"], ds.plane) for ds in table_datasets]
    x = np.array([-0.02, 0.02, -0.005])
    J = residual_jacobian(x, mount, data)
    rows = rng.choice(len(J), 100, replace=False)
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1e-7
        num = (residuals(x + e, mount, data) - residuals(x - e, mount, data)) / 2e-7
        rel = np.abs(J[rows, j] - num[rows]) / np.maximum(np.abs(num[rows]), 1e-8)
        assert np.max(rel) <= 1e-5


def test_levenberg_marquardt_on_rosenbrock():
    fun = lambda x: np.array([10 * (x[1] - x[0] ** 2), 1 - x[0]])
    jac = lambda x: np.array([[-20 * x[0], 10.0], [-1.0, 0.0]])
    res = levenberg_marquardt(fun, jac, [-1.2, 1.0], ((-5, 5), (-5, 5)))
    assert res.converged and res.x == pytest.approx([1.0, 1.0], abs=1e-6)
    bounded = levenberg_marquardt(fun, jac, [-1.2, 1.0], ((-5, 0.5), (-5, 5)))
    assert bounded.x[0] <= 0.5


def test_zero_perturbation_noiseless_recovers_zero():
    logs = calibration_logs(CFG, DESIGNS, {}, seed=0, noise=False)
    res = calibrate([collect_dataset(f, CFG, DESIGNS) for f in logs], DESIGNS)
    for mid, est in res.estimates.items():
        assert np.max(np.abs(est.as_array())) <= 1e-6
        assert res.cost[mid] <= 1e-12


def test_table_rows_recovered(table_datasets):
    res = calibrate(table_datasets, DESIGNS)
    truth = reported_truth()
    for mid, est in res.estimates.items():
        err = est.as_array() - truth[mid].as_array()
        assert abs(err[0]) <= 0.005 and abs(err[1]) <= 0.005 and abs(err[2]) <= 0.002
        r = res.residuals[mid]
        assert np.mean(np.abs(r) <= 0.0225) >= 0.99
        assert est.within_bounds()
    doc = res.to_dict()
    assert doc["format_version"] == 1 and set(doc["mirrors"]) == {"L1", "L2", "R1", "R2"}


def test_optimum_is_stationary(table_datasets):
    res = calibrate(table_datasets, DESIGNS)
    mid = "R1"
    mount = mount_from_design(BY_ID[mid])
    data = [(ds.samples[mid], ds.plane) for ds in table_datasets]
    x = res.estimates[mid].as_array()
    base = residuals(x, mount, data)
    # the trimmed fit uses fewer points, so compare against the untrimmed cost near its optimum
    fit = levenberg_marquardt(lambda y: residuals(y, mount, data), lambda y: residual_jacobian(y, mount, data),
                              x, DEFAULT_BOUNDS)
    for j in range(3):
        for s in (-1e-4, 1e-4):
            e = np.zeros(3)
            e[j] = s
            r = residuals(fit.x + e, mount, data)
            assert r @ r >= 2 * fit.cost - 1e-12
    assert 2 * fit.cost <= base @ base + 1e-12


def test_single_orientation_with_min_datasets_one():
    truth = reported_truth()
    logs = calibration_logs(CFG, DESIGNS, truth, seed=3, yaws=(0.2,))
    res = calibrate([collect_dataset(logs[0], CFG, DESIGNS)], DESIGNS, min_datasets=1)
    assert abs(res.estimates["L1"].d_alpha - truth["L1"].d_alpha) <= 0.01


def test_errors(table_datasets):
    with pytest.raises(DegenerateError):
        calibrate(table_datasets[:1], DESIGNS)
    with pytest.raises(ConvergenceError) as info:
        calibrate(table_datasets, DESIGNS, max_iter=1)
    assert isinstance(info.value.best, PerturbationParams)


@pytest.mark.xfail(strict=True, reason="with 3% range noise a single wall view pins d_d only to about 6 mm for "
                   "mirrors that meet the wall at a grazing angle; noiseless single views agree exactly")
def test_orientation_independence():
    truth = reported_truth()
    logs = calibration_logs(CFG, DESIGNS, truth, seed=11)
    per_view = [calibrate([collect_dataset(f, CFG, DESIGNS)], DESIGNS, min_datasets=1) for f in logs]
    tol = 2 * np.array([0.005, 0.005, 0.002])
    for mid in truth:
        ests = [r.estimates[mid].as_array() for r in per_view]
        for i in range(3):
            for j in range(i + 1, 3):
                assert np.all(np.abs(ests[i] - ests[j]) <= tol), (mid, i, j, ests[i], ests[j])


def test_orientation_independence_noiseless():
    truth = reported_truth()
    logs = calibration_logs(CFG, DESIGNS, truth, seed=11, noise=False)
    per_view = [calibrate([collect_dataset(f, CFG, DESIGNS)], DESIGNS, min_datasets=1) for f in logs]
    for mid in truth:
        for r in per_view:
            assert np.max(np.abs(r.estimates[mid].as_array() - truth[mid].as_array())) <= 1e-6


def test_noiseless_cost_at_truth_is_minimal_over_grid():
    truth = reported_truth()
    datasets = [collect_dataset(f, CFG, DESIGNS) for f in calibration_logs(CFG, DESIGNS, truth, seed=0, noise=False)]
    mid = "L2"
    mount = mount_from_design(BY_ID[mid])
    data = [(ds.samples[mid], ds.plane) for ds in datasets]
    r0 = residuals(truth[mid].as_array(), mount, data)
    c0 = r0 @ r0
    axes = [np.linspace(lo, hi, 7) for lo, hi in DEFAULT_BOUNDS]
    for a in axes[0]:
        for b in axes[1]:
            for c in axes[2]:
                r = residuals(np.array([a, b, c]), mount, data)
                assert c0 <= r @ r
