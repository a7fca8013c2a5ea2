import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from conftest import random_design
from hipsynth.cases import case_study
from hipsynth.equilibrium import (
    EquilibriumError,
    SpringModel,
    internal_force,
    jacobian,
    run_trajectory,
    solve_equilibrium,
    total_energy,
)
from hipsynth.ground_model import DesignVector, angles_from_matrix, build_grid, rotation_matrix, unit_vector


def rand_state(grid, rng, scale=0.3):
    return rng.uniform(-scale, scale, (grid.n_blocks, 3))


def test_zero_state_zero_energy(grid42, params):
    xi = DesignVector.initial(grid42).to_array()
    q = np.zeros((8, 3))
    assert total_energy(q, grid42, xi, params) == 0.0
    assert np.all(internal_force(q, grid42, xi, params) == 0.0)


def test_two_block_energy_oracle(grid21, params):
    # only spring 0 present at k_max, block 0 held by the anchor at identity
    xi = DesignVector.initial(grid21).to_array()
    xi[:2] = [1.0, params.xi_min]
    q = np.zeros((2, 3))
    q[1] = [0.2, -0.1, 0.3]
    node = grid21.spring_node[0]
    s = unit_vector(*grid21.nodes[node])
    A2 = rotation_matrix(*q[1])
    k_small = params.k_max * params.xi_min**3
    s1 = unit_vector(*grid21.nodes[grid21.spring_node[1]])
    expect = 0.5 * params.k_max * np.sum((A2 @ s - s) ** 2) + 0.5 * k_small * np.sum((A2 @ s1 - s1) ** 2)
    assert total_energy(q, grid21, xi, params) == pytest.approx(expect, rel=1e-12)


def test_energy_linear_in_stiffness(grid21, params):
    rng = np.random.default_rng(1)
    q = rand_state(grid21, rng)
    xi = random_design(grid21, rng)
    base = SpringModel(grid21, xi, params)
    doubled = SpringModel(grid21, xi, params)
    doubled.kk = 2 * base.kk
    assert doubled.energy(q) == pytest.approx(2 * base.energy(q), rel=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_energy_nonnegative(seed):
    from hipsynth.ground_model import SolverParams

    g, p = build_grid(2, 1), SolverParams()
    rng = np.random.default_rng(seed)
    assert total_energy(rand_state(g, rng, 1.0), g, random_design(g, rng, 0.001), p) >= 0.0


@pytest.mark.parametrize("seed", range(5))
def test_internal_force_matches_fd(grid21, params, seed):
    rng = np.random.default_rng(seed)
    xi, q = random_design(grid21, rng), rand_state(grid21, rng)
    model = SpringModel(grid21, xi, params)
    f = internal_force(q, grid21, xi, params)
    assert f.shape == (3 * (grid21.n_blocks - 1),)
    h = 1e-6
    v = model.to_v(q)
    fd = np.array([(model.energy(model.with_v(q, v + h * e)) - model.energy(model.with_v(q, v - h * e))) / (2 * h) for e in np.eye(v.size)])
    assert np.allclose(f, fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())


@pytest.mark.parametrize("seed", range(5))
def test_jacobian_matches_fd_and_symmetric(grid42, params, seed):
    rng = np.random.default_rng(seed)
    xi, q = random_design(grid42, rng), rand_state(grid42, rng)
    model = SpringModel(grid42, xi, params)
    J = jacobian(q, grid42, xi, params)
    assert np.max(np.abs(J - J.T)) <= 1e-9 * np.abs(J).max()
    h = 1e-6
    v = model.to_v(q)
    cols = [(internal_force(model.with_v(q, v + h * e), grid42, xi, params) - internal_force(model.with_v(q, v - h * e), grid42, xi, params)) / (2 * h) for e in np.eye(v.size)]
    fd = np.array(cols).T
    assert np.allclose(J, fd, rtol=1e-5, atol=1e-5 * np.abs(fd).max())


def test_jacobian_psd_at_rest(grid42, params):
    xi = DesignVector.initial(grid42).to_array()
    J = jacobian(np.zeros((8, 3)), grid42, xi, params)
    assert np.linalg.eigvalsh(J).min() >= -1e-9 * np.abs(J).max()


def test_soft_design_jacobian_only_anchor(grid42, params):
    xi = DesignVector.initial(grid42).to_array()
    xi[:20] = params.xi_min
    J = jacobian(np.zeros((8, 3)), grid42, xi, params)
    anchor = J[:3, :3]
    rest = J.copy()
    rest[:3, :3] = 0
    assert np.abs(anchor).max() > 1e3 and np.abs(rest).max() < 1e-3


def test_force_excludes_end_effector(grid42, params):
    rng = np.random.default_rng(7)
    xi = random_design(grid42, rng)
    q = rand_state(grid42, rng)
    f1 = internal_force(q, grid42, xi, params)
    q2 = q.copy()
    q2[grid42.block_a] += 0.1
    assert f1.shape == (21,)
    assert not np.allclose(f1, internal_force(q2, grid42, xi, params))


def test_zero_pose_gives_zero_state(grid42, params):
    model = SpringModel(grid42, DesignVector.initial(grid42).to_array(), params)
    sol = solve_equilibrium(model, np.zeros(3))
    assert np.all(sol.q == 0.0) and sol.energy == 0.0
    traj = run_trajectory(model, [[0.0, 0.0, 0.0]])
    assert np.all(traj.states[1].q == 0.0)


def serial_chain_design(grid, params):
    """ground -R(node 0)- {0,1,4,5} -R(node 7)- {2,6} -R(node 3)- {3}; block 7 loose.

    Node 7 sits off the equator, so the three axes are not coplanar.
    """
    xi = DesignVector.initial(grid).to_array()
    k = np.full(20, params.xi_min)
    k[[0, 1, 2, 3, 6, 7, 14, 15]] = 1.0  # rigid link {0,1,4,5}
    k[[10, 11]] = 1.0  # rigid link {2,6}
    k[5] = 1.0  # blocks 1-2 at node 7
    k[8] = 1.0  # blocks 2-3 at node 3
    xi[:20] = k
    return xi


def chain_pose(grid, a, b, c):
    s0, s7, s3 = (unit_vector(*grid.nodes[n]) for n in (0, 7, 3))
    rot = lambda s, t: Rotation.from_rotvec(t * s).as_matrix()
    A = rot(s0, a) @ rot(s7, b) @ rot(s3, c)
    return angles_from_matrix(A)


def test_serial_chain_stores_no_energy(grid42, params):
    xi = serial_chain_design(grid42, params)
    model = SpringModel(grid42, xi, params)
    poses = [chain_pose(grid42, 0.1 * t, -0.15 * t, 0.12 * t) for t in range(1, 6)]
    traj = run_trajectory(model, poses)
    assert max(traj.energies) <= 1e-8 * params.k_max
    for sol in traj.states[1:]:
        assert sol.residual <= 1e-9 * params.k_max
    # without the path-dependent resistive moment the states of a true
    # mechanism do not depend on the order of the poses
    rigid = SpringModel(grid42, xi, dataclasses.replace(params, f0=0.0))
    fwd = run_trajectory(rigid, poses)
    back = run_trajectory(rigid, poses[::-1])
    for a, b in zip(fwd.states[1:], back.states[1:][::-1]):
        assert np.allclose(a.q[:3], b.q[:3], atol=1e-8)


def test_newton_budget_on_case_trajectory(grid42, params):
    model = SpringModel(grid42, DesignVector.initial(grid42).to_array(), params)
    traj = run_trajectory(model, case_study(1).poses)
    assert max(traj.iterations) <= 20


def test_nonconvergence_reports_residual(grid42, params):
    model = SpringModel(grid42, DesignVector.initial(grid42).to_array(), params)
    with pytest.raises(EquilibriumError) as info:
        solve_equilibrium(model, np.array([0.0, 0.0, 0.8]), max_iter=1)
    assert np.isfinite(info.value.residual)


def test_empty_trajectory_rejected(grid42, params):
    model = SpringModel(grid42, DesignVector.initial(grid42).to_array(), params)
    with pytest.raises(ValueError):
        run_trajectory(model, np.zeros((0, 3)))
