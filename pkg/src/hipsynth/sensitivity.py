"""Direct design sensitivities of the efficiency objective and the constraints."""
from __future__ import annotations

import dataclasses
import logging

import numpy as np
import scipy.linalg

from .equilibrium import SpringModel, actuator_axis_vector
from .ground_model import rotation_derivatives
from .response import AXES, ForwardAnalysis, target_variations

log = logging.getLogger(__name__)


class SingularSystemError(RuntimeError):
    pass


@dataclasses.dataclass
class GradientBundle:
    zeta_bar: np.ndarray  # (n_design,)
    psi: np.ndarray  # (T, 9, n_design)
    states: list  # dv_t/dxi for t = 0..T, (n_v, n_design)

    @property
    def psi_flat(self) -> np.ndarray:
        return self.psi.reshape(-1, self.psi.shape[-1])


def _factor(K, mu0):
    lu = scipy.linalg.lu_factor(K, check_finite=True)
    diag = np.abs(np.diag(lu[0]))
    if diag.size and diag.min() > 1e-14 * max(diag.max(), 1.0):
        return lu
    log.warning("near-singular system matrix, regularizing by %g", mu0)
    lu = scipy.linalg.lu_factor(K + mu0 * np.eye(len(K)))
    diag = np.abs(np.diag(lu[0]))
    if diag.min() <= 1e-14 * max(diag.max(), 1.0):
        raise SingularSystemError("system matrix singular after regularization")
    return lu


def state_sensitivity(model: SpringModel, q, q_prev, dv_prev=None, full_chain=True):
    """``dv/dxi`` at an equilibrium ``q`` reached from ``q_prev``.

    With ``full_chain`` the dependence of the resistive moment on the previous
    actuator direction is propagated through ``dv_prev``.
    """
    w_prev = actuator_axis_vector(q_prev[model.grid.block_i])
    ev = model.evaluate(q, w_prev)
    dR, _ = model.design_derivatives(q, w_prev)
    rhs = dR.copy()
    if full_chain and dv_prev is not None:
        rhs += model.previous_coupling(q, q_prev) @ dv_prev
    if model.n_v == 0:
        return np.zeros((0, len(model.xi)))
    lu = _factor(ev.hessian, 1e-8 * model.params.k_max)
    return -scipy.linalg.lu_solve(lu, rhs)


def _actuator_rows(model, dv):
    r = 3 * model.i_slot
    return dv[r:r + 3]


def _objective_gradient(fwd: ForwardAnalysis, dvs, full_chain=True):
    model = fwd.model
    f0 = model.params.f0
    I = model.grid.block_i
    states = fwd.trajectory.states
    rep = fwd.report
    T = fwd.case.T
    n = len(model.xi)
    dW = np.zeros(n)
    grads = np.zeros((T, n))
    for t in range(1, T + 1):
        q, qp = states[t].q[I], states[t - 1].q[I]
        A, dA, d2A = rotation_derivatives(np.array([q, qp]))
        w_prev = A[1][:, 2]
        F = fwd.trajectory.forces[t - 1]
        H = f0 * d2A[0][:, :, :, 2] @ w_prev
        dq = _actuator_rows(model, dvs[t])
        dq_prev = _actuator_rows(model, dvs[t - 1])
        dF = H @ dq
        if full_chain:
            dF += f0 * (dA[0][:, :, 2] @ dA[1][:, :, 2].T) @ dq_prev
        dW += (qp - q) @ dF + F @ (dq_prev - dq)

        ev = model.evaluate(states[t].q, hessian=False)
        _, dU_part = model.design_derivatives(states[t].q)
        dU = dU_part + ev.internal @ dvs[t]
        W, U = rep.work[t - 1], rep.energy[t - 1]
        if W + U != 0.0:
            grads[t - 1] = (U * dW - W * dU) / (W + U) ** 2
    counted = np.ones(T, dtype=bool)
    if T and rep.degenerate[0] and not np.any(fwd.case.poses[0]):
        counted[0] = False
    if not counted.any():
        return np.zeros(n)
    return grads[counted].mean(axis=0)


def _constraint_gradients(fwd: ForwardAnalysis, dvs, full_chain=True):
    model = fwd.model
    grid = model.grid
    I = grid.block_i
    dtheta = model.params.dtheta
    states = fwd.trajectory.states
    T = fwd.case.T
    n = len(model.xi)
    out = np.zeros((T, 9, n))
    for t in range(1, T + 1):
        q = states[t].q
        A, dA, _ = rotation_derivatives(q[I][None])
        A, dA = A[0], dA[0]
        dA_base = np.einsum("iab,in->abn", dA, _actuator_rows(model, dvs[t]))
        for a, alpha in enumerate(AXES):
            sol = fwd.perturbed[t - 1][a]
            if sol is states[t]:
                continue
            dvp = state_sensitivity(model, sol.q, states[t - 1].q, dvs[t - 1], full_chain)
            Ap, dAp, _ = rotation_derivatives(sol.q[I][None])
            Ap, dAp = Ap[0], dAp[0]
            dA_pert = np.einsum("iab,in->abn", dAp, _actuator_rows(model, dvp))
            # d(Ap A^T) = dAp A^T + Ap dA^T
            dA_rel = np.einsum("abn,cb->acn", dA_pert, A) + np.einsum("ab,cbn->acn", Ap, dA_base)
            A_rel = Ap @ A.T
            target = target_variations(fwd.case.kappa[t - 1][a], dtheta)
            for j in range(3):
                diff = (A_rel - np.eye(3))[:, j] - target[j]
                norm = np.linalg.norm(diff)
                if norm > 0.0:
                    out[t - 1, 3 * a + j] = diff @ dA_rel[:, j, :] / norm
    return out


def gradients(fwd: ForwardAnalysis, full_chain: bool = True) -> GradientBundle:
    """Analytic gradients of the mean efficiency and every constraint value."""
    model = fwd.model
    states = fwd.trajectory.states
    dvs = [np.zeros((model.n_v, len(model.xi)))]
    for t in range(1, fwd.case.T + 1):
        dvs.append(state_sensitivity(model, states[t].q, states[t - 1].q, dvs[-1], full_chain))
    return GradientBundle(
        zeta_bar=_objective_gradient(fwd, dvs, full_chain),
        psi=_constraint_gradients(fwd, dvs, full_chain),
        states=dvs,
    )


def objective_gradient(fwd: ForwardAnalysis, state_sensitivities, full_chain=True) -> np.ndarray:
    return _objective_gradient(fwd, state_sensitivities, full_chain)


def constraint_gradients(fwd: ForwardAnalysis, state_sensitivities, full_chain=True) -> np.ndarray:
    return _constraint_gradients(fwd, state_sensitivities, full_chain)


def fd_oracle(f, xi, step: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar or array valued ``f`` along each entry of ``xi``."""
    if step <= 0:
        raise ValueError("step must be positive")
    xi = np.asarray(xi, dtype=float)
    cols = []
    for i in range(xi.size):
        e = np.zeros_like(xi)
        e[i] = step
        cols.append((np.asarray(f(xi + e)) - np.asarray(f(xi - e))) / (2.0 * step))
    return np.stack(cols, axis=-1)
