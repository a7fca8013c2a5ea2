"""Turn a converged continuous design into a discrete spherical linkage."""
from __future__ import annotations

import dataclasses
import json
import logging
import warnings

import numpy as np

from .ground_model import DesignVector, SolverParams, SphericalGrid, node_positions

log = logging.getLogger(__name__)

GROUND = 0  # link index reserved for the ground


class DisconnectedMechanismError(RuntimeError):
    pass


class CrispnessWarning(UserWarning):
    pass


@dataclasses.dataclass
class Joint:
    links: tuple  # (link index, link index)
    node: int | None
    axis: np.ndarray

    def to_dict(self):
        return {"links": list(self.links), "node": self.node, "axis": [float(a) for a in self.axis]}


@dataclasses.dataclass
class MechanismGraph:
    """Links are block sets (link 0 is the ground and holds no block)."""

    links: list
    joints: list
    actuator_link: int
    effector_link: int
    notes: list = dataclasses.field(default_factory=list)
    xi: np.ndarray | None = None  # binarized design, when extracted from one

    @property
    def dof(self) -> int:
        return mobility(self)

    def link_of_block(self, block: int) -> int | None:
        for i, blocks in enumerate(self.links):
            if block in blocks:
                return i
        return None

    def incident(self, link: int) -> list:
        return [j for j in self.joints if link in j.links]

    def topology(self) -> str:
        """Short name of the recognized family, or ``"other"``."""
        try:
            family, _ = classify(self)
        except ValueError:
            return "other"
        return family

    def to_dict(self) -> dict:
        out = {
            "links": [sorted(int(b) for b in blocks) for blocks in self.links],
            "joints": [j.to_dict() for j in self.joints],
            "actuator_link": self.actuator_link,
            "effector_link": self.effector_link,
            "dof": self.dof,
            "topology": self.topology(),
            "notes": list(self.notes),
        }
        if self.xi is not None:
            out["xi"] = [float(v) for v in self.xi]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "MechanismGraph":
        joints = []
        for j in data["joints"]:
            axis = np.asarray(j["axis"], dtype=float)
            n = np.linalg.norm(axis)
            if n == 0:
                raise ValueError("joint axis must be nonzero")
            joints.append(Joint(tuple(int(v) for v in j["links"]), j.get("node"), axis / n))
        xi = data.get("xi")
        return cls(
            links=[set(int(b) for b in blocks) for blocks in data["links"]],
            joints=joints,
            actuator_link=int(data["actuator_link"]),
            effector_link=int(data["effector_link"]),
            notes=list(data.get("notes", [])),
            xi=None if xi is None else np.asarray(xi, dtype=float),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def binarize(xi_k, threshold: float = 0.5, warn_band=(0.2, 0.8)):
    """Present/absent flag per spring; warns when the design is not crisp."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    xi_k = np.asarray(xi_k, dtype=float)
    grey = np.flatnonzero((xi_k >= warn_band[0]) & (xi_k <= warn_band[1]))
    if grey.size:
        warnings.warn(f"non-crisp design: springs {grey.tolist()} lie in the grey band", CrispnessWarning)
    return xi_k >= threshold


def binarized_design(grid: SphericalGrid, xi, params: SolverParams, threshold: float = 0.5) -> np.ndarray:
    d = DesignVector.from_array(grid, xi)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CrispnessWarning)
        present = binarize(d.xi_k, threshold)
    return np.concatenate([np.where(present, 1.0, params.xi_min), d.xi_theta])


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller root wins so the result does not depend on the order
            lo, hi = min(ra, rb), max(ra, rb)
            self.parent[hi] = lo
            return True
        return False


def _node_components(edges):
    """Connected components of an undirected edge list, each as a sorted list."""
    uf, members = {}, set()

    def find(a):
        while uf.get(a, a) != a:
            a = uf[a]
        return a

    for a, b in edges:
        members.update((a, b))
        ra, rb = find(a), find(b)
        if ra != rb:
            uf[max(ra, rb)] = min(ra, rb)
    comps: dict = {}
    for m in members:
        comps.setdefault(find(m), []).append(m)
    return [sorted(c) for c in comps.values()]


def build_linkage(present, grid: SphericalGrid, xi_theta, params: SolverParams, prune: bool = True) -> MechanismGraph:
    """Merge rigidly connected blocks and turn single springs into revolute joints.

    A present spring pins its corner point of two blocks together, and pinning
    is transitive: every link reached through springs at the same node shares
    that point. Two links sharing points at two distinct nodes are rigid
    relative to each other (together with the sphere centre) and merge. The
    k links meeting at one node form a compound hinge counted as k - 1
    revolute joints.
    """
    present = np.asarray(present, dtype=bool)
    if present.shape != (grid.n_springs,):
        raise ValueError("one flag per spring expected")
    pos = node_positions(grid, np.asarray(xi_theta, dtype=float), params)
    nb = grid.n_blocks
    g = nb  # ground pseudo-block for the union-find
    notes = []

    # block-level pin connections per node
    pins: dict = {}
    for m in range(grid.n_springs):
        if present[m]:
            b1, b2 = (int(b) for b in grid.spring_blocks[m])
            pins.setdefault(int(grid.spring_node[m]), []).append((b1, b2))
    pins.setdefault(int(grid.anchor_node), []).append((g, int(grid.block_i)))

    uf = _UnionFind(nb + 1)
    direct: dict = {}
    for n, edges in pins.items():
        for b1, b2 in edges:
            direct.setdefault((min(b1, b2), max(b1, b2)), set()).add(n)
    for (b1, b2), nodes in sorted(direct.items()):
        if len(nodes) >= 2:
            uf.union(b1, b2)

    def shared_points():
        out: dict = {}
        for n, edges in pins.items():
            linked = [(uf.find(a), uf.find(b)) for a, b in edges]
            for comp in _node_components([(a, b) for a, b in linked if a != b]):
                for i, r1 in enumerate(comp):
                    for r2 in comp[i + 1:]:
                        out.setdefault((r1, r2), set()).add(n)
        return out

    changed = True
    while changed:
        changed = False
        for (r1, r2), nodes in sorted(shared_points().items()):
            if uf.find(r1) == uf.find(r2):
                continue
            if len(nodes) >= 2 and g not in (r1, r2):
                notes.append(f"links rooted at blocks {r1} and {r2} share points at nodes {sorted(nodes)}; merged as rigid")
                changed |= uf.union(r1, r2)
                break

    # one spanning tree of pins per node and coincidence group
    joint_set: dict = {}
    for n, edges in sorted(pins.items()):
        linked = sorted({(min(a, b), max(a, b)) for a, b in ((uf.find(x), uf.find(y)) for x, y in edges) if a != b})
        for comp in _node_components(linked):
            reached, frontier = {comp[0]}, [comp[0]]
            while frontier:
                cur = frontier.pop(0)
                for a, b in linked:
                    other = b if a == cur else a if b == cur else None
                    if other is not None and other not in reached:
                        reached.add(other)
                        frontier.append(other)
                        joint_set.setdefault((min(cur, other), max(cur, other), n), None)
            if len(comp) > 2:
                notes.append(f"compound hinge of {len(comp)} links at node {n}")

    root_g = uf.find(g)
    root_i, root_a = uf.find(int(grid.block_i)), uf.find(int(grid.block_a))
    adjacency: dict = {}
    for r1, r2, _ in joint_set:
        adjacency.setdefault(r1, set()).add(r2)
        adjacency.setdefault(r2, set()).add(r1)
    seen, stack = {root_g}, [root_g]
    while stack:
        for nxt in adjacency.get(stack.pop(), ()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    if root_a not in seen:
        raise DisconnectedMechanismError("disconnected mechanism: end effector not connected to ground")
    keep = set(seen)
    joints = [(r1, r2, n) for r1, r2, n in sorted(joint_set) if r1 in keep and r2 in keep]

    if prune:
        while True:
            degree: dict = {}
            for r1, r2, _ in joints:
                degree[r1] = degree.get(r1, 0) + 1
                degree[r2] = degree.get(r2, 0) + 1
            dangling = {r for r in keep if degree.get(r, 0) <= 1 and r not in (root_g, root_a)}
            if not dangling:
                break
            notes.append(f"dropped dangling links rooted at blocks {sorted(dangling)}")
            keep -= dangling
            joints = [j for j in joints if j[0] in keep and j[1] in keep]

    roots = [root_g] + sorted(r for r in keep if r != root_g)
    index = {r: i for i, r in enumerate(roots)}
    links = [set() for _ in roots]
    for b in range(nb):
        r = uf.find(b)
        if r in index:
            links[index[r]].add(b)
    if root_i == root_g:
        notes.append("actuator block is rigidly attached to the ground")
    out_joints = [Joint((index[r1], index[r2]), n, pos[n] / np.linalg.norm(pos[n])) for r1, r2, n in joints]
    return MechanismGraph(
        links=links,
        joints=out_joints,
        actuator_link=index.get(root_i, GROUND),
        effector_link=index[root_a],
        notes=notes,
    )


def extract_mechanism(grid: SphericalGrid, xi, params: SolverParams, threshold: float = 0.5) -> MechanismGraph:
    d = DesignVector.from_array(grid, xi)
    present = binarize(d.xi_k, threshold)
    mech = build_linkage(present, grid, d.xi_theta, params)
    mech.xi = binarized_design(grid, xi, params, threshold)
    return mech


def mobility(graph: MechanismGraph) -> int:
    """Spherical Grubler count ``3 (L - 1) - 2 J``."""
    return 3 * (len(graph.links) - 1) - 2 * len(graph.joints)


def classify(graph: MechanismGraph):
    """Recognize the R-R-R and R-4B-R families.

    Returns ``(name, joints)`` where ``joints`` lists the joint indices in
    the order r1..r3 (serial) or r1..r6 (four-bar), following the
    convention that r2/r3 and r4/r5 are the two branches of the loop.
    """
    L, J = len(graph.links), len(graph.joints)
    act, eff = graph.actuator_link, graph.effector_link
    ground_joints = [i for i, j in enumerate(graph.joints) if GROUND in j.links]
    if len(ground_joints) != 1 or act == GROUND:
        raise ValueError("expected a single ground joint")
    r1 = ground_joints[0]

    def between(a, b):
        return [i for i, j in enumerate(graph.joints) if set(j.links) == {a, b}]

    def other(jidx, link):
        a, b = graph.joints[jidx].links
        return b if a == link else a

    if L == 4 and J == 3:
        mid = [l for l in range(L) if l not in (GROUND, act, eff)]
        if len(mid) == 1:
            j2, j3 = between(act, mid[0]), between(mid[0], eff)
            if len(j2) == 1 and len(j3) == 1:
                return "R-R-R", [r1, j2[0], j3[0]]
    if L == 6 and J == 6:
        eff_joints = [i for i, j in enumerate(graph.joints) if eff in j.links]
        if len(eff_joints) == 1:
            r6 = eff_joints[0]
            l4 = other(r6, eff)
            branches = []
            for ji, j in enumerate(graph.joints):
                if act in j.links and ji != r1:
                    mid = other(ji, act)
                    if mid in (GROUND, eff, l4):
                        continue
                    close = between(mid, l4)
                    if len(close) == 1:
                        branches.append((ji, close[0]))
            if len(branches) == 2:
                (r2, r3), (r4, r5) = sorted(branches)
                return "R-4B-R", [r1, r2, r3, r4, r5, r6]
    raise ValueError("topology not recognized")
