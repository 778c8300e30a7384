"""Ready-made simulated setups shared by the demos and the acceptance checks.

``calibration_logs`` points the sensor at one flat wall from three platform
yaws, so the wall meets the scan plane at an angle below, at and above
``pi/2``. ``tracking_scene`` is a desk-scale copy of the moving-cylinder
experiment: a 0.15 m radius cylinder crossing in front of the sensor at
0.13 m/s, heading 89.4 degrees, with a wall behind it.
"""
from __future__ import annotations

import math

from .calibration import REPORTED_PERTURBATIONS, PerturbationParams
from .scansim import Mover, NodProfile, PlanePatch, Scene, Trajectory, simulate

CALIBRATION_YAWS = (-0.35, 0.0, 0.35)
CALIBRATION_DURATION = 3.8
TRACK_SPEED = 0.13
TRACK_HEADING = math.radians(89.4)
TRACK_DURATION = 20.0
# A yaw of -pi/2 turns the sensor forward axis onto world +x, towards the mover and the wall.
TRACK_YAW = -math.pi / 2


def reported_truth() -> dict:
    """Reported perturbations of the built sensor as :class:`PerturbationParams`."""
    return {k: PerturbationParams(*v) for k, v in REPORTED_PERTURBATIONS.items()}


def calibration_wall() -> Scene:
    # 0.7 m in front of the sensor keeps every reflected beam on the wall at all three yaws
    return Scene([PlanePatch((0.0, 0.7, 0.0), (0.0, 1.0, 0.0), (1.0, 0.0, 0.0), (6.0, 3.0))])


def calibration_logs(cfg, designs, truth, seed: int = 0, noise: bool = True, yaws=CALIBRATION_YAWS,
                     duration: float = CALIBRATION_DURATION) -> list:
    """Frames of one nod cycle per wall orientation; run ``i`` uses seed ``seed + i``."""
    scene = calibration_wall()
    return [
        list(simulate(scene, cfg, designs, truth, NodProfile(), Trajectory.static(yaw=yaw), duration,
                      seed + i, noise=noise))
        for i, yaw in enumerate(yaws)
    ]


def tracking_scene(speed: float = TRACK_SPEED, heading: float = TRACK_HEADING) -> Scene:
    # the wall sits at 4.05 m so that it does not coincide with a voxel boundary
    wall = PlanePatch((4.05, 0.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (5.0, 3.0))
    return Scene([wall], [Mover(0.15, (-0.4, 0.4), (2.5, -1.3), speed, heading)])


def tracking_frames(cfg, designs, truth, seed: int = 0, noise: bool = True, duration: float = TRACK_DURATION,
                    scene: Scene | None = None) -> list:
    scene = tracking_scene() if scene is None else scene
    return list(simulate(scene, cfg, designs, truth, NodProfile(), Trajectory.static(yaw=TRACK_YAW), duration,
                         seed, noise=noise))
