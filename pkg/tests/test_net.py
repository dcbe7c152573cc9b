import json

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from formnet.errors import DegenerateGeometryError
from formnet.net import (
    EdgeParams,
    Geometry,
    Topology,
    edge_length,
    edge_lengths,
    energy_hessian,
    force_residual,
    grid_counts,
    load_net,
    net_from_dict,
    net_to_dict,
    save_net,
    synth_net,
    total_energy,
)

from conftest import line_net


def two_node_geometry(a, b):
    topo = Topology(1, 2, [(0, 1), (0, 2)], 0)
    return topo, Geometry(np.array(a, dtype=float), np.array([b, [5.0, 5, 5]], dtype=float))


@pytest.mark.parametrize(
    "a, b, expected",
    [
        ((0, 0, 0), (1, 0, 0), 1.0),
        ((0, 0, 0), (0, 0, 0), 0.0),
        ((1, 2, 2), (0, 0, 0), 3.0),
    ],
)
def test_edge_length_examples(a, b, expected):
    topo, geom = two_node_geometry(a, b)
    assert edge_length(geom, topo, 0) == pytest.approx(expected, abs=1e-15)


def test_edge_length_index_out_of_range():
    topo, geom = two_node_geometry((0, 0, 0), (1, 0, 0))
    with pytest.raises(IndexError):
        edge_length(geom, topo, 2)


def test_symmetric_midpoint_has_zero_residual():
    topo, geom, params = line_net(r_I=(0.0, 0.0, 0.0))
    np.testing.assert_array_equal(force_residual(topo, geom, params), np.zeros(3))


def test_residual_hand_value():
    # the edge to (2,0,0) gives EA*(r_s - r_t)*(1/l0 - 1/l) = (-1, 0, 0);
    # the second edge is slack and must contribute nothing
    topo, geom, params = line_net(left=(2.0, 0, 0), right=(-0.5, 0, 0), l0=(1.0, 1.0), r_I=(0, 0, 0))
    np.testing.assert_allclose(force_residual(topo, geom, params), [-1.0, 0.0, 0.0], atol=1e-15)


def test_residual_rejects_coincident_tensioned_nodes():
    topo, geom, params = line_net(left=(0.0, 0, 0), r_I=(0, 0, 0))
    with pytest.raises(DegenerateGeometryError):
        force_residual(topo, geom, params)


def test_energy_examples():
    topo, geom, params = line_net(left=(-1.0, 0, 0), right=(1.0, 0, 0), l0=(1.0, 1.0), r_I=(0, 0, 0))
    assert total_energy(topo, geom, params) == 0.0
    # one edge EA=2, l0=1, l=1.5 -> 0.25 J; the other at l=0.5 is slack
    topo, geom, params = line_net(left=(-1.5, 0, 0), right=(0.5, 0, 0), l0=(1.0, 1.0), EA=2.0, r_I=(0, 0, 0))
    assert total_energy(topo, geom, params) == pytest.approx(0.25, rel=1e-15)


def test_topology_rejects_bad_graphs():
    with pytest.raises(ValueError):
        Topology(2, 2, [(0, 1), (0, 0), (1, 3)], 1)  # self loop
    with pytest.raises(ValueError):
        Topology(2, 2, [(0, 1), (0, 1), (0, 2), (1, 3)], 2)  # duplicate
    with pytest.raises(ValueError):
        Topology(1, 2, [(0, 1), (0, 5)], 0)  # out of range
    with pytest.raises(ValueError):
        Topology(1, 3, [(0, 1), (0, 2), (1, 3)], 0)  # boundary-boundary edge
    with pytest.raises(ValueError):
        Topology(1, 1, [(0, 1)], 0)  # interior degree 1
    with pytest.raises(ValueError):
        # two interior components that do not reach the frame
        Topology(4, 2, [(0, 1), (2, 3), (0, 4), (1, 5), (2, 3)], 2)


def test_boundary_edges_are_flipped_interior_first():
    topo = Topology(1, 2, [(1, 0), (0, 2)], 0)
    np.testing.assert_array_equal(topo.edges, [[0, 1], [0, 2]])


def test_params_validation():
    with pytest.raises(ValueError):
        EdgeParams([1.0, -1.0], 1.0, 0)
    with pytest.raises(ValueError):
        EdgeParams([1.0, 1.0], [1.0, 0.0], 0)


@pytest.mark.parametrize("nx, ny", [(3, 3), (5, 5), (4, 7), (26, 14)])
def test_grid_counts_by_enumeration(nx, ny):
    topo, geom, params = synth_net(nx, ny)
    assert (topo.n_I, topo.n_B, topo.m_I, topo.m_B) == grid_counts(nx, ny)


def test_grid_examples():
    topo, _, _ = synth_net(5, 5)
    assert (topo.n_I, topo.n_B, topo.m_I, topo.m_B) == (9, 12, 12, 12)
    topo, _, _ = synth_net(3, 3)
    assert topo.n_I == 1
    topo, _, _ = synth_net(26, 14)
    assert abs(topo.m_I - 536) <= 0.1 * 536


def test_synth_net_rejects_small_grid():
    with pytest.raises(ValueError):
        synth_net(2, 5)


def test_synth_net_deterministic(net55):
    a = net_to_dict(*synth_net(5, 5, seed=7))
    b = net_to_dict(*net55)
    assert json.dumps(a) == json.dumps(b)
    c = net_to_dict(*synth_net(5, 5, seed=8))
    assert c["l0"] != a["l0"]


def test_synth_net_pretension(net55):
    topo, geom, params = net55
    assert np.all(params.l0 <= 0.98 * edge_lengths(topo, geom) + 1e-15)


def test_net_file_round_trip(tmp_path, net55):
    path = save_net(tmp_path / "net.json", *net55)
    topo, geom, params = load_net(path)
    t0, g0, p0 = net55
    np.testing.assert_array_equal(topo.edges, t0.edges)
    np.testing.assert_array_equal(geom.r_I, g0.r_I)
    np.testing.assert_array_equal(geom.r_B, g0.r_B)
    np.testing.assert_array_equal(params.l0, p0.l0)
    np.testing.assert_array_equal(params.EA, p0.EA)
    doc = json.loads(path.read_text())
    assert set(doc) >= {"nodes_interior", "nodes_boundary", "edges", "l0", "EA"}
    assert doc["edges"][0][0] == "I" and doc["edges"][-1][2] == "B"
    assert net_from_dict(doc) is not None


# --------------------------------------------------------------------------
# property tests
# --------------------------------------------------------------------------

offsets = st.lists(st.floats(-0.002, 0.002), min_size=27, max_size=27)


def _perturbed(net, delta):
    topo, geom, params = net
    return topo, geom.with_interior(geom.r_I + np.asarray(delta)), params


@settings(max_examples=25, deadline=None)
@given(offsets)
def test_energy_gradient_matches_residual(net55, delta):
    topo, geom, params = _perturbed(net55, delta)
    assume(np.all(edge_lengths(topo, geom) > params.l0 + 1e-4))
    h = force_residual(topo, geom, params)
    step = 1e-6
    fd = np.empty_like(h)
    for i in range(h.size):
        e = np.zeros_like(h)
        e[i] = step
        fd[i] = (
            total_energy(topo, geom.with_interior(geom.r_I + e), params)
            - total_energy(topo, geom.with_interior(geom.r_I - e), params)
        ) / (2 * step)
    assert np.linalg.norm(fd - h) <= 1e-6 * np.linalg.norm(h)


@settings(max_examples=25, deadline=None)
@given(offsets, st.tuples(*[st.floats(-100, 100)] * 3))
def test_residual_translation_invariant(net55, delta, shift):
    topo, geom, params = _perturbed(net55, delta)
    shift = np.asarray(shift)
    moved = Geometry(
        (geom.r_I.reshape(-1, 3) + shift).ravel(), (geom.r_B.reshape(-1, 3) + shift).ravel()
    )
    np.testing.assert_allclose(
        force_residual(topo, moved, params), force_residual(topo, geom, params), atol=1e-7
    )


@settings(max_examples=25, deadline=None)
@given(offsets, st.floats(1e-3, 1e3))
def test_stiffness_scaling(net55, delta, c):
    topo, geom, params = _perturbed(net55, delta)
    scaled = params.scaled_stiffness(c)
    np.testing.assert_allclose(
        force_residual(topo, geom, scaled), c * force_residual(topo, geom, params), rtol=1e-12, atol=1e-12
    )
    assert total_energy(topo, geom, scaled) == pytest.approx(c * total_energy(topo, geom, params), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6))
def test_edge_length_swap_symmetry(xs):
    a, b = xs[:3], xs[3:]
    topo, g1 = two_node_geometry(a, b)
    _, g2 = two_node_geometry(b, a)
    assert edge_length(g1, topo, 0) == edge_length(g2, topo, 0)


def test_hessian_matches_residual_differences(net55):
    topo, geom, params = _perturbed(net55, np.random.default_rng(0).uniform(-0.02, 0.02, 27))
    H = energy_hessian(topo, geom, params)
    np.testing.assert_allclose(H, H.T, atol=1e-9)
    step = 1e-6
    for i in range(0, 27, 5):
        e = np.zeros(27)
        e[i] = step
        col = (
            force_residual(topo, geom.with_interior(geom.r_I + e), params)
            - force_residual(topo, geom.with_interior(geom.r_I - e), params)
        ) / (2 * step)
        np.testing.assert_allclose(H[:, i], col, rtol=1e-5, atol=1e-5 * np.abs(H).max())
