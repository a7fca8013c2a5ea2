import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hipsynth.extraction import (
    CrispnessWarning,
    DisconnectedMechanismError,
    Joint,
    MechanismGraph,
    binarize,
    binarized_design,
    build_linkage,
    classify,
    extract_mechanism,
    mobility,
)
from hipsynth.ground_model import DesignVector

# Hand-built 0/1 patterns on the 4x2 grid (spring indices that are present).
SERIAL = [0, 1, 2, 3, 6, 7, 14, 15, 10, 11, 5, 8]
FOURBAR = [0, 2, 7, 8, 10, 11, 15, 16, 17]


def pattern(grid, springs):
    present = np.zeros(grid.n_springs, dtype=bool)
    present[springs] = True
    return present


def linkage(grid, params, springs):
    return build_linkage(pattern(grid, springs), grid, DesignVector.initial(grid).xi_theta, params)


def test_serial_pattern_is_rrr(grid42, params):
    m = linkage(grid42, params, SERIAL)
    assert m.topology() == "R-R-R"
    assert m.dof == 3
    assert [sorted(b) for b in m.links] == [[], [0, 1, 4, 5], [2, 6], [3]]
    assert sorted(j.node for j in m.joints) == [0, 3, 7]


def test_fourbar_pattern_is_r4br(grid42, params):
    m = linkage(grid42, params, FOURBAR)
    assert m.topology() == "R-4B-R"
    assert (len(m.links), len(m.joints), m.dof) == (6, 6, 3)
    _, order = classify(m)
    nodes = [m.joints[i].node for i in order]
    assert nodes[0] == grid42.anchor_node
    assert nodes[5] == 3
    # the two loop branches leave the actuator link at nodes 1 and 5
    assert sorted(nodes[1:5:2]) == [1, 5]


def test_all_present_is_one_rigid_link(grid42, params):
    m = linkage(grid42, params, list(range(grid42.n_springs)))
    assert len(m.links) == 2 and m.links[1] == set(range(grid42.n_blocks))
    assert len(m.joints) == 1
    assert m.dof == 1


def test_all_absent_is_disconnected(grid42, params):
    with pytest.raises(DisconnectedMechanismError):
        linkage(grid42, params, [])


def test_effector_cut_off_is_disconnected(grid42, params):
    # everything but the springs touching block 3
    cut = [m for m in range(grid42.n_springs) if 3 not in grid42.spring_blocks[m]]
    with pytest.raises(DisconnectedMechanismError, match="end effector"):
        linkage(grid42, params, cut)


def test_dangling_links_are_pruned(grid42, params):
    # block 7 hangs off block 3 by a single hinge
    m = linkage(grid42, params, SERIAL + [12])
    assert m.topology() == "R-R-R"
    assert all(7 not in blocks for blocks in m.links)
    assert any("dangling" in n for n in m.notes)


def test_compound_hinge_counts_k_minus_one(grid42, params):
    # blocks 0, 1 and 4 meet at node 6 through springs 1 and 3
    present = pattern(grid42, [1, 3, 5, 8])
    m = build_linkage(present, grid42, DesignVector.initial(grid42).xi_theta, params, prune=False)
    at6 = [j for j in m.joints if j.node == 6]
    assert len(at6) == 2
    assert any("compound hinge of 3 links at node 6" in n for n in m.notes)


@pytest.mark.parametrize("extra,merged", [([], False), ([1], True)])
def test_two_pins_make_blocks_rigid(grid42, params, extra, merged):
    # spring 0 alone is a hinge between blocks 0 and 1; springs 0 and 1 weld them
    m = build_linkage(pattern(grid42, [0, 5, 8] + extra), grid42, DesignVector.initial(grid42).xi_theta, params, prune=False)
    assert (m.link_of_block(0) == m.link_of_block(1)) is merged


@pytest.mark.parametrize(
    "links,joints,dof",
    [
        (4, 3, 3),  # serial chain of three revolutes
        (6, 6, 3),  # the four-bar hybrid
        (2, 1, 1),  # one rigid link on the ground joint
    ],
)
def test_mobility_arithmetic(links, joints, dof):
    m = MechanismGraph(
        links=[set()] + [{i} for i in range(links - 1)],
        joints=[Joint((0, 1), None, np.array([0.0, 1.0, 0.0]))] * joints,
        actuator_link=1,
        effector_link=links - 1,
    )
    assert mobility(m) == dof


@given(st.permutations(list(range(20))))
def test_spring_order_does_not_matter(grid42, params, perm):
    import dataclasses

    perm = np.array(perm)
    shuffled = dataclasses.replace(grid42, spring_node=grid42.spring_node[perm], spring_blocks=grid42.spring_blocks[perm])
    theta = DesignVector.initial(grid42).xi_theta
    for springs in (SERIAL, FOURBAR):
        base = build_linkage(pattern(grid42, springs), grid42, theta, params)
        other = build_linkage(pattern(grid42, springs)[perm], shuffled, theta, params)
        assert base.links == other.links
        assert sorted((j.links, j.node) for j in base.joints) == sorted((j.links, j.node) for j in other.joints)


def test_joint_axes_are_unit_node_directions(grid42, params):
    m = linkage(grid42, params, FOURBAR)
    for j in m.joints:
        assert np.linalg.norm(j.axis) == pytest.approx(1.0, abs=1e-14)


def test_binarize_threshold_and_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert binarize([0.001, 0.99, 0.1]).tolist() == [False, True, False]
    with pytest.warns(CrispnessWarning):
        binarize([0.5, 1.0])
    with pytest.raises(ValueError):
        binarize([0.5], threshold=1.0)


def test_binarized_design_snaps_stiffness_only(grid42, params):
    rng = np.random.default_rng(3)
    xi = rng.uniform(0.0, 1.0, grid42.n_design)
    out = binarized_design(grid42, xi, params)
    n = grid42.n_springs
    assert set(np.unique(out[:n])) <= {params.xi_min, 1.0}
    np.testing.assert_array_equal(out[n:], xi[n:])


def test_extract_keeps_design_and_round_trips(grid42, params):
    xi = DesignVector.initial(grid42).to_array()
    xi[: grid42.n_springs] = params.xi_min
    xi[SERIAL] = 1.0
    m = extract_mechanism(grid42, xi, params)
    back = MechanismGraph.from_dict(json.loads(m.dumps()))
    assert back.links == m.links
    assert back.topology() == "R-R-R"
    np.testing.assert_allclose(back.xi, m.xi)
    for a, b in zip(back.joints, m.joints):
        assert a.links == b.links and a.node == b.node
        np.testing.assert_allclose(a.axis, b.axis, atol=1e-15)


def test_from_dict_rejects_zero_axis():
    data = {"links": [[], [0]], "joints": [{"links": [0, 1], "axis": [0, 0, 0]}], "actuator_link": 1, "effector_link": 1}
    with pytest.raises(ValueError):
        MechanismGraph.from_dict(data)
