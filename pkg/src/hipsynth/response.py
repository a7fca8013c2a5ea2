"""Efficiency objective, displacement-based moment constraints and diagnostics."""
from __future__ import annotations

import dataclasses

import numpy as np

from .equilibrium import (
    EquilibriumError,
    Solution,
    SpringModel,
    TrajectoryResult,
    actuator_axis_vector,
    run_trajectory,
    solve_equilibrium,
)
from .ground_model import angles_from_matrix, axis_rotation, rotation_matrix, skew

G_INP = np.array([0.0, -1.0, 0.0])
AXES = ("X", "Y", "Z")
# the cross-product matrix of the input moment direction [0, -1, 0]
M_TARGET = skew(G_INP)


@dataclasses.dataclass(frozen=True)
class MomentCase:
    """A prescribed end-effector trajectory with its target moment ratios.

    ``kappa[t]`` is ``(kappa_X, kappa_Y, kappa_Z)`` so that the target output
    moment is ``M0 * kappa[t]`` for an input moment ``M0 * [0, -1, 0]``.
    """

    poses: np.ndarray
    kappa: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        poses = np.asarray(self.poses, dtype=float).reshape(-1, 3)
        kappa = np.asarray(self.kappa, dtype=float).reshape(-1, 3)
        if len(poses) != len(kappa):
            raise ValueError("poses and kappa must have the same number of steps")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "kappa", kappa)

    @property
    def T(self) -> int:
        return len(self.poses)

    @property
    def g_inp(self) -> np.ndarray:
        return G_INP.copy()

    def truncated(self, T: int) -> "MomentCase":
        return MomentCase(self.poses[:T], self.kappa[:T], self.name)


def resistive_moment(w_t, w_prev, f0: float) -> np.ndarray:
    return f0 * np.cross(w_t, w_prev)


def generalized_force(M_ext, q_I) -> np.ndarray:
    """Project a world-frame moment on the rates of the actuator angles.

    The columns of the map are the world angular-velocity axes of ``rho``,
    ``theta`` and ``phi``: ``e_y``, ``R_y e_z`` and ``R_y R_z e_x``.
    """
    rho, theta, _ = q_I
    Ry = axis_rotation("y", rho)
    Rz = axis_rotation("z", theta)
    basis = np.column_stack([[0.0, 1.0, 0.0], Ry[:, 2], (Ry @ Rz)[:, 0]])
    return basis.T @ np.asarray(M_ext, dtype=float)


def output_work(q_I_states, forces) -> float:
    """Work extracted at the actuator, ``q_I_states[0]`` being the start pose."""
    q = np.asarray(q_I_states, dtype=float).reshape(-1, 3)
    F = np.asarray(forces, dtype=float).reshape(-1, 3)
    if len(q) != len(F) + 1:
        raise ValueError("need one more state than forces")
    return float(np.sum(F * (q[:-1] - q[1:])))


def efficiency(W_out: float, U: float):
    """``(zeta, degenerate)``; zeta is 0 when no energy enters the system."""
    total = W_out + U
    if total == 0.0:
        return 0.0, True
    return W_out / total, False


def mean_efficiency(zetas, skip=None) -> float:
    zetas = np.asarray(zetas, dtype=float)
    mask = np.ones(len(zetas), dtype=bool) if skip is None else ~np.asarray(skip, dtype=bool)
    if not mask.any():
        return 0.0
    return float(np.mean(zetas[mask]))


def rotation_log(A_rel):
    """Axis-angle of a rotation matrix, angle in ``[0, pi]``."""
    A = np.asarray(A_rel, dtype=float)
    c = np.clip((np.trace(A) - 1.0) / 2.0, -1.0, 1.0)
    vee = np.array([A[2, 1] - A[1, 2], A[0, 2] - A[2, 0], A[1, 0] - A[0, 1]])
    s = 0.5 * np.linalg.norm(vee)
    angle = float(np.arctan2(s, c))
    if angle < 1e-12:
        return np.array([0.0, 0.0, 1.0]), 0.0
    if angle < np.pi - 1e-6:
        return vee / (2.0 * s), angle
    # near pi: use the symmetric part, then fix the sign from the skew part
    S = (A + A.T) / 2.0 - c * np.eye(3)
    col = np.argmax(np.diag(S))
    axis = S[:, col] / np.linalg.norm(S[:, col])
    if axis @ vee < 0:
        axis = -axis
    return axis, angle


def rotation_vector(A_rel) -> np.ndarray:
    axis, angle = rotation_log(A_rel)
    return angle * axis


def position_variations(A_base, A_pert) -> np.ndarray:
    """Rows j: displacement of the unit point ``e_j`` under the relative rotation."""
    A_rel = np.asarray(A_pert) @ np.asarray(A_base).T
    return (A_rel - np.eye(3)).T


def target_variations(kappa_alpha: float, dtheta: float) -> np.ndarray:
    from scipy.linalg import expm

    return (expm(kappa_alpha * dtheta * M_TARGET) - np.eye(3)).T


def diagnostic_moment_error(M_out, M_hat, M_inp):
    """``(psi_dir, psi_mag)`` as printed; ``None`` for a zero vector."""
    M_out, M_hat, M_inp = (np.asarray(v, dtype=float) for v in (M_out, M_hat, M_inp))
    n_out, n_hat, n_inp = (np.linalg.norm(v) for v in (M_out, M_hat, M_inp))
    if min(n_out, n_hat, n_inp) == 0.0:
        return None
    cos = (M_out @ M_hat) / (n_out * n_hat)
    return cos * cos - 1.0, abs(n_out - n_hat) / n_inp


def perturbation_matrix(alpha: str, dtheta: float) -> np.ndarray:
    return axis_rotation(alpha.lower(), dtheta)


def perturbed_pose(q_A, alpha: str, dtheta: float) -> np.ndarray:
    A = rotation_matrix(*q_A)
    return np.asarray(angles_from_matrix(perturbation_matrix(alpha, dtheta) @ A))


class PerturbationError(EquilibriumError):
    def __init__(self, message, step, axis, residual=np.nan):
        super().__init__(message, residual=residual, step=step)
        self.axis = axis


def perturbed_solve(model: SpringModel, trajectory: TrajectoryResult, t: int, alpha: str, max_iter=200) -> Solution:
    """Re-solve step ``t`` (1-based) with the end effector nudged about ``alpha``."""
    p = model.params
    grid = model.grid
    base = trajectory.states[t]
    prev = trajectory.states[t - 1]
    if p.dtheta == 0.0:
        return base
    q_a = perturbed_pose(base.q[grid.block_a], alpha, p.dtheta)
    w_prev = actuator_axis_vector(prev.q[grid.block_i])
    try:
        return solve_equilibrium(model, q_a, w_prev, warm_start=base.q, max_iter=max_iter)
    except EquilibriumError as exc:
        raise PerturbationError(f"step {t}, axis {alpha}: {exc}", t, alpha, exc.residual) from exc


def constraint_values(A_base, A_perts, kappa, dtheta) -> np.ndarray:
    """Nine constraint values for one step: X group, then Y, then Z."""
    out = np.empty(9)
    for a in range(3):
        diff = position_variations(A_base, A_perts[a]) - target_variations(kappa[a], dtheta)
        out[3 * a:3 * a + 3] = np.linalg.norm(diff, axis=1)
    return out


@dataclasses.dataclass
class ResponseReport:
    zeta: np.ndarray  # (T,)
    zeta_bar: float
    psi: np.ndarray  # (T, 9)
    work: np.ndarray
    energy: np.ndarray
    degenerate: np.ndarray
    kappa_estimate: np.ndarray  # (T, 3) measured moment ratios
    psi_dir: np.ndarray
    psi_dir_abs: np.ndarray
    psi_mag: np.ndarray

    @property
    def direction(self) -> np.ndarray:
        n = np.linalg.norm(self.kappa_estimate, axis=1, keepdims=True)
        return np.divide(self.kappa_estimate, n, out=np.zeros_like(self.kappa_estimate), where=n > 0)

    def group_max(self) -> np.ndarray:
        """Largest constraint value in the flexion, abduction and rotation groups."""
        return self.psi.reshape(-1, 3, 3).max(axis=(0, 2))


@dataclasses.dataclass
class ForwardAnalysis:
    """Everything computed in one forward pass, reused by the sensitivities."""

    model: SpringModel
    case: MomentCase
    trajectory: TrajectoryResult
    perturbed: list  # perturbed[t-1][a] -> Solution
    report: ResponseReport


def _actuator_rotation(model, q):
    return rotation_matrix(*q[model.grid.block_i])


def evaluate_response(model: SpringModel, case: MomentCase, max_iter: int = 200) -> ForwardAnalysis:
    p = model.params
    I = model.grid.block_i
    traj = run_trajectory(model, case.poses, max_iter=max_iter)
    T = case.T
    q_I = np.array([s.q[I] for s in traj.states])
    work = np.array([output_work(q_I[:t + 1], traj.forces[:t]) for t in range(1, T + 1)])
    energy = np.array(traj.energies)
    zeta = np.zeros(T)
    degenerate = np.zeros(T, dtype=bool)
    for t in range(T):
        zeta[t], degenerate[t] = efficiency(work[t], energy[t])
    skip = np.zeros(T, dtype=bool)
    if T and degenerate[0] and not np.any(case.poses[0]):
        skip[0] = True
    zeta_bar = mean_efficiency(zeta, skip)

    perturbed = []
    psi = np.zeros((T, 9))
    kappa_est = np.zeros((T, 3))
    for t in range(1, T + 1):
        sols = [perturbed_solve(model, traj, t, a, max_iter=max_iter) for a in AXES]
        perturbed.append(sols)
        A = _actuator_rotation(model, traj.states[t].q)
        A_p = [_actuator_rotation(model, s.q) for s in sols]
        psi[t - 1] = constraint_values(A, A_p, case.kappa[t - 1], p.dtheta)
        if p.dtheta:
            kappa_est[t - 1] = [rotation_vector(Ap @ A.T) @ G_INP / p.dtheta for Ap in A_p]

    psi_dir = np.full(T, np.nan)
    psi_mag = np.full(T, np.nan)
    for t in range(T):
        d = diagnostic_moment_error(kappa_est[t], case.kappa[t], G_INP)
        if d is not None:
            psi_dir[t], psi_mag[t] = d
    report = ResponseReport(
        zeta=zeta,
        zeta_bar=zeta_bar,
        psi=psi,
        work=work,
        energy=energy,
        degenerate=degenerate,
        kappa_estimate=kappa_est,
        psi_dir=psi_dir,
        psi_dir_abs=np.abs(psi_dir),
        psi_mag=psi_mag,
    )
    return ForwardAnalysis(model, case, traj, perturbed, report)
