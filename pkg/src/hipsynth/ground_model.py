"""Spherical block grid, design variables and rotation kinematics.

Blocks and nodes are numbered from zero. Rows of blocks start at the equator
(polar angle pi/2) and grow towards the pole; inside a row the azimuth grows
from ``-phi_p`` to 0. With the default 4 x 2 grid block 0 carries the actuator
and block 3 (lower right) carries the end effector.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np


class GridError(ValueError):
    """Raised for inconsistent grid or design input."""


@dataclasses.dataclass(frozen=True)
class SolverParams:
    """Model and optimisation constants.

    Attributes:
      p: stiffness penalisation exponent.
      xi_min: lower bound of the stiffness design variables.
      k_max: stiffness of a fully present spring (and of the anchor).
      f0: scale of the resistive moment on the actuator block.
      eps: tolerance of every displacement constraint.
      theta_min, theta_max: bounds of the polar-angle node variation (rad).
      phi_min, phi_max: bounds of the azimuthal node variation (rad).
      dtheta: end-effector perturbation angle used by the constraints (rad).
    """

    p: float = 3.0
    xi_min: float = 1e-3
    k_max: float = 1e4
    f0: float = 1.0
    eps: float = 2e-4
    theta_min: float = -math.pi / 8
    theta_max: float = math.pi / 8
    phi_min: float = -math.pi / 8
    phi_max: float = math.pi / 8
    dtheta: float = 1e-3

    def scaled_shape(self, scale: float) -> "SolverParams":
        """Copy with every node-variation bound multiplied by ``scale``."""
        return dataclasses.replace(
            self,
            theta_min=self.theta_min * scale,
            theta_max=self.theta_max * scale,
            phi_min=self.phi_min * scale,
            phi_max=self.phi_max * scale,
        )


@dataclasses.dataclass(frozen=True)
class SphericalGrid:
    n_azimuth: int
    n_polar: int
    phi_p: float
    theta_t: float
    # (n_nodes, 2) initial (polar, azimuth) angles
    nodes: np.ndarray
    # (n_blocks, 4) corner node indices, counter-clockwise from lower left
    blocks: np.ndarray
    # (n_springs,) node index and the two blocks (role 1, role 2)
    spring_node: np.ndarray
    spring_blocks: np.ndarray
    anchor_node: int
    block_i: int
    block_a: int

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def n_springs(self) -> int:
        return len(self.spring_node)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def fixed_node(self) -> int:
        return self.anchor_node

    @property
    def movable_nodes(self) -> np.ndarray:
        return np.array([n for n in range(self.n_nodes) if n != self.fixed_node])

    @property
    def n_design(self) -> int:
        return self.n_springs + 2 * (self.n_nodes - 1)

    @property
    def free_blocks(self) -> np.ndarray:
        """Blocks whose angles are unknowns of the equilibrium problem."""
        return np.array([b for b in range(self.n_blocks) if b != self.block_a])

    @property
    def theta_bounds(self) -> tuple[float, float]:
        return (math.pi / 2 - self.theta_t, math.pi / 2)

    def adjacent_pairs(self) -> list[tuple[int, int]]:
        pairs = sorted({tuple(int(b) for b in bb) for bb in self.spring_blocks})
        return pairs


def build_grid(
    n_azimuth: int = 4,
    n_polar: int = 2,
    phi_p: float = math.pi / 2,
    theta_t: float = math.pi / 4,
    block_a: int | None = None,
) -> SphericalGrid:
    """Uniform latitude/longitude discretisation of the design surface.

    Every edge shared by two blocks carries one spring at each of its two end
    nodes. The anchor sits on the lower-left corner node of block 0.
    ``block_a`` defaults to the lower-right block (``n_azimuth - 1``).
    """
    if n_azimuth < 1 or n_polar < 1:
        raise GridError(f"need at least one block per direction, got {n_azimuth}x{n_polar}")
    if not 0.0 < phi_p <= math.pi:
        raise GridError(f"phi_p must lie in (0, pi], got {phi_p}")
    if not 0.0 < theta_t < math.pi / 2:
        raise GridError(f"theta_t must lie in (0, pi/2), got {theta_t}")
    if block_a is None:
        block_a = n_azimuth - 1
    n_blocks = n_azimuth * n_polar
    if not 0 <= block_a < n_blocks:
        raise GridError(f"block_a={block_a} outside 0..{n_blocks - 1}")

    def node_id(r, c):
        return r * (n_azimuth + 1) + c

    nodes = np.array(
        [
            (math.pi / 2 - r * theta_t / n_polar, -phi_p + c * phi_p / n_azimuth)
            for r in range(n_polar + 1)
            for c in range(n_azimuth + 1)
        ]
    )
    blocks = np.array(
        [
            (node_id(r, c), node_id(r, c + 1), node_id(r + 1, c + 1), node_id(r + 1, c))
            for r in range(n_polar)
            for c in range(n_azimuth)
        ],
        dtype=int,
    )

    pairs = []
    for r in range(n_polar):
        for c in range(n_azimuth):
            b = r * n_azimuth + c
            if c + 1 < n_azimuth:
                pairs.append((b, b + 1, (node_id(r, c + 1), node_id(r + 1, c + 1))))
            if r + 1 < n_polar:
                pairs.append((b, b + n_azimuth, (node_id(r + 1, c), node_id(r + 1, c + 1))))
    pairs.sort()
    spring_node = []
    spring_blocks = []
    for b1, b2, shared in pairs:
        for n in shared:
            spring_node.append(n)
            spring_blocks.append((b1, b2))

    grid = SphericalGrid(
        n_azimuth=n_azimuth,
        n_polar=n_polar,
        phi_p=phi_p,
        theta_t=theta_t,
        nodes=nodes,
        blocks=blocks,
        spring_node=np.array(spring_node, dtype=int),
        spring_blocks=np.array(spring_blocks, dtype=int).reshape(-1, 2),
        anchor_node=node_id(0, 0),
        block_i=0,
        block_a=block_a,
    )
    # a single block has no end effector distinct from the actuator block; such
    # grids are only useful for counting
    if n_blocks > 1 and grid.block_i == grid.block_a:
        raise GridError("actuator and end-effector blocks coincide")
    return grid


@dataclasses.dataclass
class DesignVector:
    """Stiffness variables per spring and (polar, azimuth) pairs per movable node."""

    xi_k: np.ndarray
    xi_theta: np.ndarray

    @classmethod
    def initial(cls, grid: SphericalGrid, value: float = 0.5) -> "DesignVector":
        return cls(np.full(grid.n_springs, value), np.full(2 * (grid.n_nodes - 1), value))

    @classmethod
    def from_array(cls, grid: SphericalGrid, xi: np.ndarray) -> "DesignVector":
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (grid.n_design,):
            raise GridError(f"design vector has shape {xi.shape}, expected ({grid.n_design},)")
        return cls(xi[: grid.n_springs].copy(), xi[grid.n_springs:].copy())

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.xi_k, self.xi_theta])

    def validate(self, params: SolverParams) -> None:
        tol = 1e-12
        if np.any(self.xi_k < params.xi_min - tol) or np.any(self.xi_k > 1 + tol):
            raise GridError("stiffness variables outside [xi_min, 1]")
        if np.any(self.xi_theta < -tol) or np.any(self.xi_theta > 1 + tol):
            raise GridError("shape variables outside [0, 1]")


def design_bounds(grid: SphericalGrid, params: SolverParams) -> tuple[np.ndarray, np.ndarray]:
    """Box bounds of the flat design vector.

    The polar-angle variables of nodes that could leave the design surface are
    restricted to the half range that keeps them inside, so the altitude clamp
    in :func:`node_positions` never becomes active during optimisation.
    """
    lo = np.concatenate([np.full(grid.n_springs, params.xi_min), np.zeros(2 * (grid.n_nodes - 1))])
    hi = np.ones(grid.n_design)
    th_lo, th_hi = grid.theta_bounds
    span = params.theta_max - params.theta_min
    for j, node in enumerate(grid.movable_nodes):
        idx = grid.n_springs + 2 * j
        theta0 = grid.nodes[node, 0]
        if span <= 0:
            continue
        # theta0 + theta_min + span * xi must stay within [th_lo, th_hi]
        x_hi = (th_hi - theta0 - params.theta_min) / span
        x_lo = (th_lo - theta0 - params.theta_min) / span
        lo[idx] = min(max(lo[idx], x_lo), 1.0)
        hi[idx] = max(min(hi[idx], x_hi), 0.0)
    return lo, hi


def stiffness(xi_k, params: SolverParams):
    """Penalised spring stiffness ``k_max * xi**p``."""
    xi = np.asarray(xi_k, dtype=float)
    if np.any(xi < params.xi_min - 1e-12) or np.any(xi > 1 + 1e-12):
        raise GridError("stiffness variable outside [xi_min, 1]")
    k = params.k_max * xi**params.p
    return float(k) if k.ndim == 0 else k


def stiffness_derivative(xi_k, params: SolverParams):
    xi = np.asarray(xi_k, dtype=float)
    return params.p * params.k_max * xi ** (params.p - 1)


def unit_vector(theta, phi) -> np.ndarray:
    """Point on the unit sphere for polar angle ``theta`` and azimuth ``phi``."""
    return np.array(
        [math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)]
    )


def node_angles(grid: SphericalGrid, xi_theta: np.ndarray, params: SolverParams):
    """Current (polar, azimuth) of every node and the derivative factors.

    Returns ``angles`` (n_nodes, 2) and ``dangles`` (n_nodes, 2): the derivative
    of each angle with respect to its own design variable (zero when the polar
    clamp is active and for the fixed node).
    """
    xi_theta = np.asarray(xi_theta, dtype=float)
    angles = grid.nodes.copy()
    dangles = np.zeros_like(angles)
    th_lo, th_hi = grid.theta_bounds
    dth = params.theta_max - params.theta_min
    dph = params.phi_max - params.phi_min
    for j, node in enumerate(grid.movable_nodes):
        xt, xp = xi_theta[2 * j], xi_theta[2 * j + 1]
        theta = grid.nodes[node, 0] + params.theta_max * xt + params.theta_min * (1 - xt)
        phi = grid.nodes[node, 1] + params.phi_max * xp + params.phi_min * (1 - xp)
        if theta > th_hi or theta < th_lo:
            theta = min(max(theta, th_lo), th_hi)
        else:
            dangles[node, 0] = dth
        dangles[node, 1] = dph
        angles[node] = theta, phi
    return angles, dangles


def node_positions(grid: SphericalGrid, xi_theta: np.ndarray, params: SolverParams):
    """Unit position vectors of all nodes, shape (n_nodes, 3)."""
    angles, _ = node_angles(grid, xi_theta, params)
    return np.array([unit_vector(t, p) for t, p in angles])


def node_position_jacobian(grid: SphericalGrid, xi_theta: np.ndarray, params: SolverParams):
    """Positions (n_nodes, 3) and d position / d xi_theta, shape (n_nodes, 3, n_shape)."""
    angles, dangles = node_angles(grid, xi_theta, params)
    n_shape = 2 * (grid.n_nodes - 1)
    pos = np.empty((grid.n_nodes, 3))
    jac = np.zeros((grid.n_nodes, 3, n_shape))
    movable = {int(n): j for j, n in enumerate(grid.movable_nodes)}
    for node, (t, p) in enumerate(angles):
        st, ct, sp, cp = math.sin(t), math.cos(t), math.sin(p), math.cos(p)
        pos[node] = st * cp, st * sp, ct
        if node in movable:
            j = movable[node]
            jac[node, :, 2 * j] = np.array([ct * cp, ct * sp, -st]) * dangles[node, 0]
            jac[node, :, 2 * j + 1] = np.array([-st * sp, st * cp, 0.0]) * dangles[node, 1]
    return pos, jac


def node_position(l: int, xi_theta: np.ndarray, grid: SphericalGrid, params: SolverParams) -> np.ndarray:
    """Position of node ``l`` under the shape variables ``xi_theta``."""
    return node_positions(grid, xi_theta, params)[l]


# --- rotations -------------------------------------------------------------

def _factors(angle: np.ndarray, axis: str):
    """Elementary rotation about ``axis`` and its first two derivatives.

    ``angle`` has shape (n,); returns an array of shape (3, n, 3, 3) holding
    the matrix, its first and its second derivative.
    """
    c, s = np.cos(angle), np.sin(angle)
    z, o = np.zeros_like(c), np.ones_like(c)
    if axis == "y":
        m = [[c, z, s], [z, o, z], [-s, z, c]]
        d1 = [[-s, z, c], [z, z, z], [-c, z, -s]]
        d2 = [[-c, z, -s], [z, z, z], [s, z, -c]]
    elif axis == "z":
        m = [[c, -s, z], [s, c, z], [z, z, o]]
        d1 = [[-s, -c, z], [c, -s, z], [z, z, z]]
        d2 = [[-c, s, z], [-s, -c, z], [z, z, z]]
    else:
        m = [[o, z, z], [z, c, -s], [z, s, c]]
        d1 = [[z, z, z], [z, -s, -c], [z, c, -s]]
        d2 = [[z, z, z], [z, -c, s], [z, -s, -c]]
    return np.moveaxis(np.array([m, d1, d2]), (1, 2), (2, 3))


def rotation_matrix(rho: float, theta: float, phi: float) -> np.ndarray:
    """Block orientation ``R_y(rho) @ R_z(theta) @ R_x(phi)``."""
    A, _, _ = rotation_derivatives(np.array([[rho, theta, phi]]))
    return A[0]


def _derivative_orders():
    orders = [(0, 0, 0)] + [tuple(int(i == a) for a in range(3)) for i in range(3)]
    second = np.zeros((3, 3), dtype=int)
    for i in range(3):
        for j in range(i, 3):
            o = [0, 0, 0]
            o[i] += 1
            o[j] += 1
            second[i, j] = second[j, i] = len(orders)
            orders.append(tuple(o))
    return np.array(orders), second.ravel()


_ORDERS, _SECOND = _derivative_orders()


def rotation_derivatives(q: np.ndarray):
    """Rotation matrices of many angle triples with first and second derivatives.

    ``q`` has shape (n, 3). Returns ``A`` (n, 3, 3), ``dA`` (n, 3, 3, 3) where
    ``dA[:, i]`` is the derivative along angle ``i`` and ``d2A`` (n, 3, 3, 3, 3).
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    fy = _factors(q[:, 0], "y")
    fz = _factors(q[:, 1], "z")
    fx = _factors(q[:, 2], "x")

    # every (y, z, x) derivative order with total order <= 2, in one batch
    yz = fy[:, None] @ fz[None]  # (3, 3, n, 3, 3)
    prods = yz[_ORDERS[:, 0], _ORDERS[:, 1]] @ fx[_ORDERS[:, 2]]
    A = prods[0]
    dA = np.moveaxis(prods[1:4], 0, 1)
    d2A = np.moveaxis(prods[_SECOND], 0, 1).reshape(q.shape[0], 3, 3, 3, 3)
    return A, dA, d2A


def angles_from_matrix(A: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rotation_matrix` on the branch ``|theta| <= pi/2``."""
    theta = math.asin(max(-1.0, min(1.0, A[1, 0])))
    rho = math.atan2(-A[2, 0], A[0, 0])
    phi = math.atan2(-A[1, 2], A[1, 1])
    return np.array([rho, theta, phi])


def axis_rotation(axis: str, angle: float) -> np.ndarray:
    """Rotation about a global coordinate axis ('x', 'y' or 'z')."""
    return _factors(np.array([angle]), axis)[0, 0]


def skew(w) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
