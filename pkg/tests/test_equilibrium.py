import time
import warnings

import numpy as np
import pytest

from formnet.equilibrium import (
    DEFAULT_TOLERANCE,
    default_initial_guess,
    solve_equilibrium,
    verify_equilibrium,
)
from formnet.errors import SlackEdgeWarning, SolverError
from formnet.net import EdgeParams, Geometry, Topology, force_residual, total_energy

from conftest import gd_oracle, line_net


def test_symmetric_single_node_goes_to_midpoint():
    topo, geom, params = line_net()
    state = solve_equilibrium(topo, params, geom.r_B)
    # stiffness is O(1 N/m), so a 1e-8 N residual bounds the position error near 1e-8 m
    np.testing.assert_allclose(state.r_I, [0, 0, 0], atol=1e-8)
    assert state.all_edges_tensioned
    np.testing.assert_allclose(state.edge_tensions, [1.0, 1.0], rtol=1e-7)


def test_state_fields_are_consistent(net55):
    topo, geom, params = net55
    state = solve_equilibrium(topo, params, geom.r_B)
    h = force_residual(topo, geom.with_interior(state.r_I), params)
    assert state.residual_inf_norm == pytest.approx(np.abs(h).max(), rel=1e-9, abs=1e-15)
    assert state.residual_inf_norm <= DEFAULT_TOLERANCE
    assert np.all(state.edge_tensions >= 0)
    assert state.all_edges_tensioned
    assert len(state.slack_edges) == 0


def test_matches_gradient_descent_oracle(net55):
    topo, geom, params = net55
    t0 = time.perf_counter()
    state = solve_equilibrium(topo, params, geom.r_B)
    elapsed = time.perf_counter() - t0
    oracle, _ = gd_oracle(topo, params, geom.r_B, geom.r_I)
    assert np.abs(state.r_I - oracle).max() <= 1e-6
    assert elapsed < 1.0


def test_warm_start_needs_fewer_iterations(net55):
    topo, geom, params = net55
    nominal = solve_equilibrium(topo, params, geom.r_B)
    l0 = params.l0_I.copy()
    l0[3] += 0.005
    perturbed = params.with_interior_lengths(l0)
    cold = solve_equilibrium(topo, perturbed, geom.r_B)
    warm = solve_equilibrium(topo, perturbed, geom.r_B, nominal.r_I)
    assert np.abs(cold.r_I - nominal.r_I).max() > 1e-5
    np.testing.assert_allclose(warm.r_I, cold.r_I, atol=1e-9)
    assert warm.solver_iterations < cold.solver_iterations


def test_solution_is_deterministic(net55):
    topo, geom, params = net55
    a = solve_equilibrium(topo, params, geom.r_B)
    b = solve_equilibrium(topo, params, geom.r_B)
    np.testing.assert_array_equal(a.r_I, b.r_I)
    np.testing.assert_array_equal(default_initial_guess(9, geom.r_B), default_initial_guess(9, geom.r_B))


def test_two_starting_points_agree(net55):
    topo, geom, params = net55
    rng = np.random.default_rng(3)
    a = solve_equilibrium(topo, params, geom.r_B, geom.r_I + rng.uniform(-0.02, 0.02, 27))
    b = solve_equilibrium(topo, params, geom.r_B)
    assert np.abs(a.r_I - b.r_I).max() <= 10 * DEFAULT_TOLERANCE


def test_solution_minimizes_energy(net55):
    topo, geom, params = net55
    state = solve_equilibrium(topo, params, geom.r_B)
    e_star = total_energy(topo, geom.with_interior(state.r_I), params)
    rng = np.random.default_rng(11)
    for _ in range(100):
        d = rng.normal(size=27)
        d *= 1e-3 / np.linalg.norm(d)
        assert e_star <= total_energy(topo, geom.with_interior(state.r_I + d), params)


def test_more_pretension_raises_energy(net55):
    topo, geom, params = net55
    energies = []
    for c in (1.0, 0.995, 0.99, 0.98):
        p = params.with_interior_lengths(c * params.l0_I)
        energies.append(solve_equilibrium(topo, p, geom.r_B).energy)
    assert all(b > a for a, b in zip(energies, energies[1:]))


def test_verify_report(net55):
    topo, geom, params = net55
    state = solve_equilibrium(topo, params, geom.r_B)
    report = verify_equilibrium(topo, geom, params, state)
    assert report.passed
    assert report.slack_edges == ()
    assert report.min_tension > 0


def test_verify_detects_corrupted_form(net55):
    topo, geom, params = net55
    state = solve_equilibrium(topo, params, geom.r_B)
    r = state.r_I.copy()
    r[4] += 0.01
    bad = solve_equilibrium.__globals__["EquilibriumState"](
        r, state.edge_lengths, state.edge_tensions, state.residual_inf_norm, 0, True, state.energy
    )
    report = verify_equilibrium(topo, geom, params, bad)
    assert report.residual_inf_norm > DEFAULT_TOLERANCE
    assert not report.passed


def test_slack_edge_warns():
    topo = Topology(1, 3, [(0, 1), (0, 2), (0, 3)], 0)
    r_B = np.array([[-1.0, 0, 0], [1.0, 0, 0], [0, 0, 5.0]])
    params = EdgeParams([0.5, 0.5, 10.0], 1.0, 0)
    with pytest.warns(SlackEdgeWarning):
        state = solve_equilibrium(topo, params, r_B)
    assert not state.all_edges_tensioned
    assert list(state.slack_edges) == [2]
    report = verify_equilibrium(topo, Geometry(state.r_I, r_B), params, state)
    assert report.slack_edges == (2,) and not report.passed


def test_iteration_cap_raises_with_last_iterate(net55):
    topo, geom, params = net55
    with pytest.raises(SolverError) as info:
        solve_equilibrium(topo, params, geom.r_B, max_iter=1)
    assert info.value.r_I.shape == (27,)
    assert info.value.residual > DEFAULT_TOLERANCE


def test_rejects_bad_tolerance(net55):
    topo, geom, params = net55
    with pytest.raises(ValueError):
        solve_equilibrium(topo, params, geom.r_B, tolerance=0.0)
