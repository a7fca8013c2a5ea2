"""Screw-theory reading of spherical mechanisms: virtual joints and output moments."""
from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.optimize import least_squares

from .extraction import GROUND, MechanismGraph, classify
from .ground_model import rotation_matrix


class SingularConfigurationError(ValueError):
    pass


class JointSeparationError(RuntimeError):
    pass


def _normalize(v, what):
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise SingularConfigurationError(f"{what}: degenerate configuration")
    return v / n


def virtual_axis(r2, r3, r4, r5) -> np.ndarray:
    """Instantaneous axis of a spherical four-bar: the great circles through (r2, r3) and (r4, r5) meet here."""
    return _normalize(np.cross(np.cross(r2, r3), np.cross(r4, r5)), "virtual axis")


def actuation_moment_direction(r6, rv) -> np.ndarray:
    return _normalize(np.cross(r6, rv), "actuation moment")


def equivalent_serial(r1, rv, r6):
    """Arc lengths (rad) of the two virtual links of the equivalent serial chain."""
    vl1 = math.acos(float(np.clip(np.dot(r1, rv), -1.0, 1.0)))
    vl2 = math.acos(float(np.clip(np.dot(rv, r6), -1.0, 1.0)))
    return vl1, vl2


def moment_lat_long(direction):
    """Latitude and longitude in degrees; the longitude at a pole is 0."""
    d = _normalize(np.asarray(direction, dtype=float), "direction")
    lat = math.degrees(math.asin(float(np.clip(d[2], -1.0, 1.0))))
    if math.hypot(d[0], d[1]) < 1e-12:
        return lat, 0.0
    return lat, math.degrees(math.atan2(d[1], d[0]))


def lat_long_to_vector(lat_deg, long_deg) -> np.ndarray:
    lat, lon = math.radians(lat_deg), math.radians(long_deg)
    return np.array([math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)])


@dataclasses.dataclass
class JointAxes:
    axes: np.ndarray  # (J, 3), current axis of every joint
    links: list  # incident link pair per joint


def link_rotations_from_state(mech: MechanismGraph, q) -> list:
    """Rotation of every link taken from its lowest-numbered block."""
    out = []
    for i, blocks in enumerate(mech.links):
        if i == GROUND or not blocks:
            out.append(np.eye(3))
        else:
            out.append(rotation_matrix(*q[min(blocks)]))
    return out


def pose_axes(mech: MechanismGraph, rotations, tol: float = 1e-6) -> JointAxes:
    """Carry every joint axis along with its links and check they stay together."""
    axes = []
    for j in mech.joints:
        a, b = j.links
        pa, pb = rotations[a] @ j.axis, rotations[b] @ j.axis
        if np.linalg.norm(pa - pb) > tol:
            raise JointSeparationError(f"joint at node {j.node} separates by {np.linalg.norm(pa - pb):.2e}")
        axes.append(pa / np.linalg.norm(pa))
    return JointAxes(np.array(axes).reshape(-1, 3), [j.links for j in mech.joints])


def closure_solve(mech: MechanismGraph, pose, warm=None, max_step: float = 0.05):
    """Link rotations with the end effector at ``pose`` for an axes-only mechanism.

    Without a warm start the pose is reached by continuation from the
    assembly pose (all rotations zero) in steps of at most ``max_step`` rad.
    """
    unknown = [i for i in range(len(mech.links)) if i not in (GROUND, mech.effector_link)]
    pose = np.asarray(pose, dtype=float)

    def rotations(x, p):
        rots = [None] * len(mech.links)
        rots[GROUND] = np.eye(3)
        rots[mech.effector_link] = rotation_matrix(*p)
        for k, i in enumerate(unknown):
            rots[i] = rotation_matrix(*x[3 * k:3 * k + 3])
        return rots

    def solve(x0, p):
        def residual(x):
            rots = rotations(x, p)
            return np.concatenate([(rots[j.links[1]] - rots[j.links[0]]) @ j.axis for j in mech.joints])

        sol = least_squares(residual, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        return sol.x, float(np.max(np.abs(sol.fun), initial=0.0))

    if warm is not None:
        x, res = solve(warm, pose)
        if res <= 1e-8:
            return rotations(x, pose), x
    n = max(1, int(np.ceil(np.max(np.abs(pose)) / max_step)))
    x = np.zeros(3 * len(unknown))
    for k in range(1, n + 1):
        x, res = solve(x, pose * k / n)
    if res > 1e-8:
        raise JointSeparationError(f"loop closure failed at pose {tuple(pose.tolist())} (residual {res:.2e})")
    return rotations(x, pose), x


@dataclasses.dataclass
class PoseResult:
    direction: np.ndarray
    rv: np.ndarray | None
    vl1: float
    vl2: float


def screw_direction(mech: MechanismGraph, axes: JointAxes, reference=None) -> PoseResult:
    """Output moment direction of a recognized family at one pose.

    ``reference`` fixes the free sign: the result has a nonnegative dot
    product with it.
    """
    family, order = classify(mech)
    r = axes.axes[order]
    if family == "R-R-R":
        r1, rv, r6 = r
    else:
        r1, r2, r3, r4, r5, r6 = r
        rv = virtual_axis(r2, r3, r4, r5)
    d = actuation_moment_direction(r6, rv)
    if reference is not None and d @ reference < 0:
        d, rv = -d, -rv
    vl1, vl2 = equivalent_serial(r1, rv, r6)
    return PoseResult(d, rv, vl1, vl2)


def angle_between(a, b) -> float:
    a = np.asarray(a, dtype=float) / np.linalg.norm(a)
    b = np.asarray(b, dtype=float) / np.linalg.norm(b)
    return math.degrees(math.atan2(float(np.linalg.norm(np.cross(a, b))), float(a @ b)))
