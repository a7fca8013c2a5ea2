"""Built-in synthesis cases and the gait torque profiles used for actuation."""
from __future__ import annotations

import dataclasses

import numpy as np

from .response import MomentCase

_STEPS = np.round(np.arange(-0.4, 0.81, 0.2), 10)


def case_study(case_id: int) -> MomentCase:
    """Pose and target tables of the three reference problems (7 steps each)."""
    if case_id == 1:
        poses = [(0.0, 0.0, phi) for phi in _STEPS]
        kappa = [(phi, -1.0, 0.0) for phi in _STEPS]
    elif case_id == 2:
        poses = [(0.0, 0.0, phi) for phi in _STEPS]
        kappa = [(0.0, -1.0, 0.0)] * len(_STEPS)
    elif case_id == 3:
        poses = [(0.0, -0.2, phi) for phi in _STEPS]
        kx = np.round(np.arange(-0.8, 1.61, 0.4), 10)
        kappa = [(k, -1.0, 0.0) for k in kx]
    else:
        raise ValueError(f"unknown case id {case_id!r}; expected 1, 2 or 3")
    return MomentCase(np.array(poses), np.array(kappa), name=f"case{case_id}")


@dataclasses.dataclass(frozen=True)
class GaussianTorqueParams:
    """Four (sigma, mu, alpha) terms per leg, all in the units of one domain."""

    right: tuple
    left: tuple
    domain: str  # "time" (seconds) or "gait" (percent)

    def __post_init__(self):
        for leg in (self.right, self.left):
            if len(leg) != 4 or any(s <= 0 for s, _, _ in leg):
                raise ValueError("each leg needs four terms with positive sigma")


TIME_PARAMS = GaussianTorqueParams(
    right=((0.15, 0.9, -13.0), (0.09, 1.2, -8.0), (0.15, 2.1, -13.0), (0.09, 2.4, -8.0)),
    left=((0.2, 1.55, -20.0), (0.09, 1.83, -9.0), (0.2, 0.35, -20.0), (0.09, 0.6, -9.0)),
    domain="time",
)

_GAIT_RIGHT = ((12.5, 30.83, -0.108), (7.5, 55.83, -0.067), (12.5, 130.83, -0.108), (7.5, 155.83, -0.067))

# gait-percent column exactly as printed
GAIT_PARAMS_PRINTED = GaussianTorqueParams(
    right=_GAIT_RIGHT,
    left=((16.67, 15.0, -0.167), (7.5, 5.83, -0.075), (16.67, 85.0, -0.1667), (7.5, 108.33, -0.075)),
    domain="gait",
)

# The first left peak sits at 0.35 s, i.e. -15 % of the cycle; the printed
# +15 lost its sign.
GAIT_PARAMS = GaussianTorqueParams(
    right=_GAIT_RIGHT,
    left=((16.67, -15.0, -0.167), (7.5, 5.83, -0.075), (16.67, 85.0, -0.1667), (7.5, 108.33, -0.075)),
    domain="gait",
)

GAIT_T0 = 0.53
GAIT_T1 = 1.73
# The printed gait-percent amplitudes equal the time-domain ones divided by
# 120 (percent per second), which leaves the gait profile 1e-4 times the
# time-domain profile after the change of variable.
GAIT_SCALE = 1e-4


def time_to_gait(t):
    return (np.asarray(t, dtype=float) - GAIT_T0) / (GAIT_T1 - GAIT_T0) * 100.0


def gait_to_time(x):
    return GAIT_T0 + np.asarray(x, dtype=float) / 100.0 * (GAIT_T1 - GAIT_T0)


def gaussian_sum(x, terms):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for sigma, mu, alpha in terms:
        out = out + alpha / (sigma * np.sqrt(2.0 * np.pi)) * np.exp(-0.5 * ((x - mu) / sigma) ** 2)
    return out


def torque_profile(leg: str, x_gait, params: GaussianTorqueParams = TIME_PARAMS):
    """Actuator torque of one leg at gait percentage ``x_gait``.

    With the default time-domain parameters the gait percentage is mapped to
    seconds first; with ``GAIT_PARAMS`` it is used directly.
    """
    if leg not in ("right", "left"):
        raise ValueError(f"leg must be 'right' or 'left', got {leg!r}")
    terms = getattr(params, leg)
    x = gait_to_time(x_gait) if params.domain == "time" else np.asarray(x_gait, dtype=float)
    return gaussian_sum(x, terms)


def torque_profile_time(leg: str, t, params: GaussianTorqueParams = TIME_PARAMS):
    if params.domain != "time":
        raise ValueError("time-domain evaluation needs time-domain parameters")
    return gaussian_sum(t, getattr(params, leg))
