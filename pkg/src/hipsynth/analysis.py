"""Pose-by-pose output-moment report of an extracted mechanism."""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from .equilibrium import EquilibriumError, SpringModel, run_trajectory
from .extraction import MechanismGraph, classify
from .ground_model import SolverParams, SphericalGrid
from .response import MomentCase, evaluate_response
from .screw import (
    angle_between,
    closure_solve,
    link_rotations_from_state,
    moment_lat_long,
    pose_axes,
    screw_direction,
)

COLUMNS = ("t", "rho", "theta", "phi", "dir_x", "dir_y", "dir_z", "latitude", "longitude", "vl1", "vl2", "angle_to_target")


class AnalysisError(RuntimeError):
    pass


@dataclasses.dataclass
class PoseRow:
    t: int
    pose: np.ndarray
    direction: np.ndarray
    latitude: float
    longitude: float
    vl1: float
    vl2: float
    angle_to_target: float

    def values(self) -> list:
        return [self.t, *self.pose, *self.direction, self.latitude, self.longitude, self.vl1, self.vl2, self.angle_to_target]


def _target(kappa):
    n = np.linalg.norm(kappa)
    return None if n == 0 else np.asarray(kappa, dtype=float) / n


def _row(t, pose, d, kappa, vl=(math.nan, math.nan)):
    lat, lon = moment_lat_long(d)
    tgt = _target(kappa)
    ang = angle_between(d, tgt) if tgt is not None else math.nan
    return PoseRow(t, np.asarray(pose, dtype=float), d, lat, lon, vl[0], vl[1], ang)


def analyze(
    mech: MechanismGraph,
    case: MomentCase,
    grid: SphericalGrid | None = None,
    params: SolverParams | None = None,
) -> list:
    """Output-moment direction at every pose of ``case``.

    A mechanism that carries its binarized design is driven through the
    equilibrium solver on that design with no resistive moment, so the stored
    energy certifies the poses are reachable. Recognized R-R-R and R-4B-R
    linkages are then read through their screw axes; any other topology is
    measured by the perturbation response of the rigid design. A mechanism
    with joint axes only (no design) is closed kinematically instead.
    """
    if case.T == 0:
        return []
    try:
        classify(mech)
        recognized = True
    except ValueError:
        recognized = False

    if mech.xi is None:
        if not recognized:
            raise AnalysisError("a mechanism without a design must be an R-R-R or R-4B-R linkage")
        rows, warm = [], None
        for t, (pose, kappa) in enumerate(zip(case.poses, case.kappa), start=1):
            rots, warm = closure_solve(mech, pose, warm)
            res = screw_direction(mech, pose_axes(mech, rots), reference=_target(kappa))
            rows.append(_row(t, pose, res.direction, kappa, (res.vl1, res.vl2)))
        return rows

    if grid is None or params is None:
        raise AnalysisError("grid and params are needed to drive a designed mechanism")
    rigid = dataclasses.replace(params, f0=0.0)
    model = SpringModel(grid, mech.xi, rigid)
    try:
        traj = run_trajectory(model, case.poses)
    except EquilibriumError as exc:
        raise AnalysisError(f"mechanism cannot follow the trajectory: {exc}") from exc
    rows = []
    if recognized:
        for t, (pose, kappa) in enumerate(zip(case.poses, case.kappa), start=1):
            rots = link_rotations_from_state(mech, traj.states[t].q)
            res = screw_direction(mech, pose_axes(mech, rots), reference=_target(kappa))
            rows.append(_row(t, pose, res.direction, kappa, (res.vl1, res.vl2)))
        return rows
    rep = evaluate_response(SpringModel(grid, mech.xi, params), case).report
    for t, (pose, kappa) in enumerate(zip(case.poses, case.kappa), start=1):
        d = rep.direction[t - 1]
        if not np.any(d):
            raise AnalysisError(f"step {t}: no measurable output moment")
        rows.append(_row(t, pose, d, kappa))
    return rows


def max_energy(mech: MechanismGraph, case: MomentCase, grid: SphericalGrid, params: SolverParams) -> float:
    """Largest stored energy of the rigid design along the trajectory, with no resistive moment."""
    model = SpringModel(grid, mech.xi, dataclasses.replace(params, f0=0.0))
    return float(max(run_trajectory(model, case.poses).energies))
