"""Strain energy, internal forces and static equilibrium of the block model.

The resistive moment applied to the actuator block,
``f0 * cross(w, w_prev)`` with ``w = A_I @ e_z``, is the gradient of the
potential ``f0 * dot(w, w_prev)``. Equilibrium is therefore the stationary
point of ``Pi = U - f0 * dot(w, w_prev)`` and the system matrix used by
Newton and by the sensitivities is the (symmetric) Hessian of ``Pi``.
"""
from __future__ import annotations

import dataclasses
import logging

import numpy as np
import scipy.linalg

from .ground_model import (
    DesignVector,
    SolverParams,
    SphericalGrid,
    node_position_jacobian,
    rotation_derivatives,
    stiffness,
    stiffness_derivative,
)

log = logging.getLogger(__name__)

E_Z = np.array([0.0, 0.0, 1.0])


class EquilibriumError(RuntimeError):
    """Newton did not reach the requested residual."""

    def __init__(self, message, residual=np.nan, step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


@dataclasses.dataclass
class Evaluation:
    potential: float
    energy: float
    residual: np.ndarray  # dPi/dv
    internal: np.ndarray  # dU/dv
    hessian: np.ndarray | None = None  # d2Pi/dv2
    jacobian: np.ndarray | None = None  # d2U/dv2


class SpringModel:
    """The block model for one fixed design vector.

    Angles of all blocks are passed around as ``(n_blocks, 3)`` arrays; the
    unknown vector ``v`` is that array without the end-effector row.
    """

    def __init__(self, grid: SphericalGrid, xi, params: SolverParams):
        self.grid = grid
        self.params = params
        design = DesignVector.from_array(grid, xi)
        self.xi = design.to_array()
        self.k = np.atleast_1d(stiffness(design.xi_k, params)).astype(float)
        self.dk = np.atleast_1d(stiffness_derivative(design.xi_k, params)).astype(float)
        self.positions, self.position_jacobian = node_position_jacobian(grid, design.xi_theta, params)

        nb = grid.n_blocks
        self.ground = nb
        # the anchor is handled as one more spring between the ground and block I
        self.b1 = np.append(grid.spring_blocks[:, 0], self.ground).astype(int)
        self.b2 = np.append(grid.spring_blocks[:, 1], grid.block_i).astype(int)
        self.node = np.append(grid.spring_node, grid.anchor_node).astype(int)
        self.kk = np.append(self.k, params.k_max)
        self.s = self.positions[self.node]

        self.free = grid.free_blocks
        self.n_v = 3 * len(self.free)
        self.slot = -np.ones(nb + 1, dtype=int)
        self.slot[self.free] = np.arange(len(self.free))
        self.i_slot = int(self.slot[grid.block_i])

    # -- state helpers ----------------------------------------------------
    def to_v(self, q: np.ndarray) -> np.ndarray:
        return q[self.free].reshape(-1)

    def with_v(self, q: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.array(q, dtype=float, copy=True)
        out[self.free] = v.reshape(-1, 3)
        return out

    def _kinematics(self, q):
        A, dA, d2A = rotation_derivatives(q)
        nb = self.grid.n_blocks
        A = np.concatenate([A, np.eye(3)[None]])
        dA = np.concatenate([dA, np.zeros((1, 3, 3, 3))])
        d2A = np.concatenate([d2A, np.zeros((1, 3, 3, 3, 3))])
        assert A.shape[0] == nb + 1
        return A, dA, d2A

    def _free_rows(self, full):
        """(n_blocks+1, 3, ...) -> (n_v, ...) restricted to the unknowns."""
        return full[self.free].reshape((self.n_v,) + full.shape[2:])

    # -- energy and derivatives -------------------------------------------
    def spring_displacements(self, q) -> np.ndarray:
        """Relative corner displacement of every spring (anchor last)."""
        A, _, _ = self._kinematics(q)
        return np.einsum("mab,mb->ma", A[self.b2] - A[self.b1], self.s)

    def energy(self, q) -> float:
        u = self.spring_displacements(q)
        return 0.5 * float(np.sum(self.kk * np.sum(u * u, axis=1)))

    def evaluate(self, q, w_prev=None, hessian=True) -> Evaluation:
        p = self.params
        A, dA, d2A = self._kinematics(q)
        b1, b2, s, k = self.b1, self.b2, self.s, self.kk
        D = A[b2] - A[b1]
        u = np.einsum("mab,mb->ma", D, s)
        U = 0.5 * float(np.sum(k * np.sum(u * u, axis=1)))
        g1 = np.einsum("miab,mb->mia", dA[b1], s)
        g2 = np.einsum("miab,mb->mia", dA[b2], s)

        nb1 = self.grid.n_blocks + 1
        grad = np.zeros((nb1, 3))
        np.add.at(grad, b2, k[:, None] * np.einsum("mia,ma->mi", g2, u))
        np.add.at(grad, b1, -k[:, None] * np.einsum("mia,ma->mi", g1, u))
        internal = self._free_rows(grad)

        I = self.grid.block_i
        Pi = U
        if w_prev is not None and p.f0 != 0.0:
            w = A[I][:, 2]
            Pi -= p.f0 * float(w @ w_prev)
            grad = grad.copy()
            grad[I] -= p.f0 * dA[I][:, :, 2] @ w_prev
        ev = Evaluation(Pi, U, self._free_rows(grad), internal)
        if not hessian:
            return ev

        h22 = np.einsum("mia,mja->mij", g2, g2) + np.einsum("mijab,mb,ma->mij", d2A[b2], s, u)
        h11 = np.einsum("mia,mja->mij", g1, g1) - np.einsum("mijab,mb,ma->mij", d2A[b1], s, u)
        h12 = -np.einsum("mia,mja->mij", g1, g2)
        H = np.zeros((nb1, nb1, 3, 3))
        kk = k[:, None, None]
        np.add.at(H, (b2, b2), kk * h22)
        np.add.at(H, (b1, b1), kk * h11)
        np.add.at(H, (b1, b2), kk * h12)
        np.add.at(H, (b2, b1), kk * h12.transpose(0, 2, 1))
        J = self._square(H)
        if w_prev is not None and p.f0 != 0.0:
            H[I, I] -= p.f0 * d2A[I][:, :, :, 2] @ w_prev
        ev.jacobian = J
        ev.hessian = self._square(H) if w_prev is not None else J
        return ev

    def _square(self, H):
        f = self.free
        sub = H[np.ix_(f, f)]  # (nf, nf, 3, 3)
        return sub.transpose(0, 2, 1, 3).reshape(self.n_v, self.n_v)

    def previous_coupling(self, q, q_prev) -> np.ndarray:
        """d(dPi/dv) / d(v_prev): only the actuator-block entries are nonzero."""
        C = np.zeros((self.n_v, self.n_v))
        if self.params.f0 == 0.0:
            return C
        I = self.grid.block_i
        _, dA, _ = rotation_derivatives(q[I][None])
        _, dAp, _ = rotation_derivatives(q_prev[I][None])
        blk = -self.params.f0 * dA[0][:, :, 2] @ dAp[0][:, :, 2].T
        r = 3 * self.i_slot
        C[r:r + 3, r:r + 3] = blk
        return C

    def design_derivatives(self, q, w_prev=None):
        """Partial derivatives with respect to the flat design vector.

        Returns ``(dR, dU)``: ``dR`` (n_v, n_design) is the derivative of the
        equilibrium residual at fixed angles and ``dU`` (n_design,) the
        derivative of the strain energy. The resistive term does not depend on
        the design.
        """
        grid = self.grid
        A, dA, _ = self._kinematics(q)
        b1, b2, s, k = self.b1, self.b2, self.s, self.kk
        D = A[b2] - A[b1]
        u = np.einsum("mab,mb->ma", D, s)
        g1 = np.einsum("miab,mb->mia", dA[b1], s)
        g2 = np.einsum("miab,mb->mia", dA[b2], s)
        ns = grid.n_springs
        nb1 = grid.n_blocks + 1

        # stiffness variables (anchor excluded)
        dR_k = np.zeros((nb1, 3, ns))
        cols = np.arange(ns)
        np.add.at(dR_k, (b2[:ns], slice(None), cols), np.einsum("mia,ma->mi", g2[:ns], u[:ns]))
        np.add.at(dR_k, (b1[:ns], slice(None), cols), -np.einsum("mia,ma->mi", g1[:ns], u[:ns]))
        dR_k = self._free_rows(dR_k) * self.dk[None, :]
        dU_k = 0.5 * np.sum(u[:ns] ** 2, axis=1) * self.dk

        # node positions
        t2 = np.einsum("miba,mb->mia", dA[b2], u) + np.einsum("mba,mib->mia", D, g2)
        t1 = np.einsum("miba,mb->mia", dA[b1], u) + np.einsum("mba,mib->mia", D, g1)
        dR_pos = np.zeros((nb1, 3, grid.n_nodes, 3))
        kk = k[:, None, None]
        np.add.at(dR_pos, (b2, slice(None), self.node), kk * t2)
        np.add.at(dR_pos, (b1, slice(None), self.node), -kk * t1)
        dR_shape = np.einsum("rinc,ncj->rij", dR_pos, self.position_jacobian)
        dR_shape = self._free_rows(dR_shape)
        dU_pos = np.zeros((grid.n_nodes, 3))
        np.add.at(dU_pos, self.node, k[:, None] * np.einsum("mba,mb->ma", D, u))
        dU_shape = np.einsum("nc,ncj->j", dU_pos, self.position_jacobian)

        return np.hstack([dR_k, dR_shape]), np.concatenate([dU_k, dU_shape])


@dataclasses.dataclass
class Solution:
    q: np.ndarray  # (n_blocks, 3) all block angles
    iterations: int
    residual: float
    energy: float


def _newton_direction(K, rhs, mu0):
    try:
        c = np.linalg.cholesky(K)
        return scipy.linalg.cho_solve((c, True), rhs), 0.0
    except np.linalg.LinAlgError:
        pass
    mu = mu0
    eye = np.eye(len(K))
    for _ in range(12):
        try:
            c = np.linalg.cholesky(K + mu * eye)
            return scipy.linalg.cho_solve((c, True), rhs), mu
        except np.linalg.LinAlgError:
            mu *= 10.0
    return rhs / max(mu, 1.0), mu


def solve_equilibrium(
    model: SpringModel,
    q_a,
    w_prev=None,
    warm_start=None,
    max_iter: int = 200,
    tol: float | None = None,
) -> Solution:
    """Damped Newton on the total potential with the end-effector angles fixed.

    ``tol`` bounds the infinity norm of the residual and defaults to
    ``1e-9 * k_max``. Once inside the tolerance a few undamped steps polish the
    solution to rounding level so that finite differences through the solver
    stay meaningful.
    """
    p = model.params
    grid = model.grid
    tol = 1e-9 * p.k_max if tol is None else tol
    near = 1e-5 * p.k_max
    mu0 = 1e-8 * p.k_max
    q = np.zeros((grid.n_blocks, 3)) if warm_start is None else np.array(warm_start, dtype=float)
    q[grid.block_a] = q_a
    polish = 0
    best = np.inf
    for it in range(max_iter + 1):
        ev = model.evaluate(q, w_prev)
        rn = float(np.max(np.abs(ev.residual))) if model.n_v else 0.0
        if rn <= tol:
            if polish >= 3 or rn >= best or rn == 0.0:
                return Solution(q, it, rn, ev.energy)
            polish += 1
        best = min(best, rn)
        if it == max_iter:
            break
        d, _ = _newton_direction(ev.hessian, -ev.residual, mu0)
        if rn <= near:
            q_new = model.with_v(q, model.to_v(q) + d)
            if polish:
                rn_new = np.max(np.abs(model.evaluate(q_new, w_prev, hessian=False).residual))
                if rn_new >= rn:
                    return Solution(q, it, rn, ev.energy)
            q = q_new
            continue
        slope = float(ev.residual @ d)
        if slope >= 0:
            d = -ev.residual / max(np.max(np.abs(np.diag(ev.hessian))), 1.0)
            slope = float(ev.residual @ d)
        v0 = model.to_v(q)
        alpha = 1.0
        for _ in range(40):
            q_try = model.with_v(q, v0 + alpha * d)
            pi_try = model.evaluate(q_try, w_prev, hessian=False).potential
            if pi_try <= ev.potential + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
        q = q_try
    raise EquilibriumError(
        f"Newton did not converge in {max_iter} iterations (residual {best:.3e})", residual=best
    )


def total_energy(q, grid: SphericalGrid, xi, params: SolverParams) -> float:
    return SpringModel(grid, xi, params).energy(q)


def internal_force(q, grid: SphericalGrid, xi, params: SolverParams) -> np.ndarray:
    """dU/dv for the unknown blocks."""
    return SpringModel(grid, xi, params).evaluate(q, hessian=False).internal


def jacobian(q, grid: SphericalGrid, xi, params: SolverParams) -> np.ndarray:
    """d2U/dv2 for the unknown blocks."""
    return SpringModel(grid, xi, params).evaluate(q).jacobian


def actuator_axis_vector(q_block: np.ndarray) -> np.ndarray:
    """``w = A @ e_z`` for one block's angles."""
    A, _, _ = rotation_derivatives(np.asarray(q_block)[None])
    return A[0][:, 2]


@dataclasses.dataclass
class TrajectoryResult:
    """Equilibrium states along a pose sequence.

    ``states[0]`` is the undeformed reference, ``states[t]`` the solution for
    pose ``t`` (1-based as in the pose table).
    """

    states: list
    forces: list  # generalised resistive force on block I at step t (index t-1)
    iterations: list

    @property
    def energies(self):
        return [s.energy for s in self.states[1:]]


class TrajectoryError(EquilibriumError):
    pass


def resistive_generalized_force(model: SpringModel, q, w_prev) -> np.ndarray:
    """Generalised force conjugate to the actuator block angles."""
    I = model.grid.block_i
    _, dA, _ = rotation_derivatives(q[I][None])
    return model.params.f0 * dA[0][:, :, 2] @ w_prev


def run_trajectory(model: SpringModel, poses, max_iter: int = 200) -> TrajectoryResult:
    """Solve the poses in order, warm-starting each from its predecessor."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    if len(poses) == 0:
        raise ValueError("empty trajectory")
    grid = model.grid
    q0 = np.zeros((grid.n_blocks, 3))
    states = [Solution(q0, 0, 0.0, 0.0)]
    forces, iters = [], []
    I = grid.block_i
    for t, pose in enumerate(poses, start=1):
        prev = states[-1].q
        w_prev = actuator_axis_vector(prev[I])
        try:
            sol = solve_equilibrium(model, pose, w_prev, warm_start=prev, max_iter=max_iter)
        except EquilibriumError as exc:
            raise TrajectoryError(f"step {t}: {exc}", residual=exc.residual, step=t) from exc
        states.append(sol)
        forces.append(resistive_generalized_force(model, sol.q, w_prev))
        iters.append(sol.iterations)
    return TrajectoryResult(states, forces, iters)
