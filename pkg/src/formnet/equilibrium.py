"""Static equilibrium of the net by minimizing its elastic energy.

The energy is convex in the interior coordinates and smooth wherever all
edges are strictly tensioned, so a damped Newton method with a backtracking
line search converges quadratically from any reasonable start. The conic
formulation in :mod:`formnet.conic` solves the same problem and serves as a
cross-check.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SlackEdgeWarning, SolverError
from .net import (
    Geometry,
    edge_tensions,
    edge_vectors,
    energy_hessian,
    force_residual,
    total_energy,
)

DEFAULT_TOLERANCE = 1e-8
MAX_NEWTON_STEPS = 200
INIT_JITTER = 1e-3


@dataclass(frozen=True)
class EquilibriumState:
    r_I: np.ndarray
    edge_lengths: np.ndarray
    edge_tensions: np.ndarray
    residual_inf_norm: float
    solver_iterations: int
    all_edges_tensioned: bool
    energy: float

    @property
    def slack_edges(self):
        return np.flatnonzero(self.edge_tensions <= 0.0)


def default_initial_guess(n_I, r_B):
    """Centroid of the frame nodes plus a small per-node deterministic jitter."""
    centre = np.asarray(r_B, dtype=float).reshape(-1, 3).mean(axis=0)
    jitter = np.array(
        [np.random.default_rng([0x5EED, i]).uniform(-1.0, 1.0, 3) for i in range(n_I)]
    )
    return (centre + INIT_JITTER * jitter).ravel()


def _newton_direction(H, g):
    scale = max(float(np.max(np.abs(np.diag(H)))), 1.0)
    shift = 0.0
    eye = np.eye(len(g))
    while True:
        try:
            c = scipy.linalg.cho_factor(H + shift * eye, lower=True, check_finite=False)
            return -scipy.linalg.cho_solve(c, g, check_finite=False)
        except np.linalg.LinAlgError:
            # semidefinite Hessian (e.g. nodes with only slack edges)
            shift = 1e-10 * scale if shift == 0.0 else 10.0 * shift
            if shift > scale:
                return -g / scale


def solve_equilibrium(
    topology,
    params,
    r_B,
    initial_r_I=None,
    tolerance=DEFAULT_TOLERANCE,
    max_iter=MAX_NEWTON_STEPS,
):
    """Interior coordinates minimizing :func:`~formnet.net.total_energy`.

    Converged when ``||force_residual||_inf <= tolerance`` (newtons).
    Raises :class:`~formnet.errors.SolverError` after ``max_iter`` Newton
    steps and :class:`~formnet.errors.DegenerateGeometryError` if an iterate
    collapses an edge to zero length. Warns with
    :class:`~formnet.errors.SlackEdgeWarning` when the minimizer has slack
    edges.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    r_B = np.ravel(np.asarray(r_B, dtype=float))
    if initial_r_I is None:
        x = default_initial_guess(topology.n_I, r_B)
    else:
        x = np.array(initial_r_I, dtype=float).ravel()
        if x.size != 3 * topology.n_I:
            raise ValueError("initial_r_I has the wrong length")

    def geom(v):
        return Geometry(v, r_B)

    g = force_residual(topology, geom(x), params)
    res = float(np.max(np.abs(g), initial=0.0))
    E = total_energy(topology, geom(x), params)
    it = 0
    while res > tolerance:
        if it >= max_iter:
            raise SolverError(
                f"no convergence after {it} Newton steps (residual {res:.3e} N)",
                r_I=x,
                residual=res,
                iterations=it,
            )
        p = _newton_direction(energy_hessian(topology, geom(x), params), g)
        slope = float(g @ p)
        if slope >= 0:
            p, slope = -g, -float(g @ g)
        alpha = 1.0
        for _ in range(60):
            x_new = x + alpha * p
            E_new = total_energy(topology, geom(x_new), params)
            if E_new <= E + 1e-4 * alpha * slope:
                break
            # energy differences below round-off: fall back on the residual
            if E_new - E <= 1e-13 * max(abs(E), 1e-300):
                g_try = force_residual(topology, geom(x_new), params)
                if np.max(np.abs(g_try)) < res:
                    break
            alpha *= 0.5
        else:
            raise SolverError(
                f"line search failed (residual {res:.3e} N)", r_I=x, residual=res, iterations=it
            )
        x, E = x_new, E_new
        g = force_residual(topology, geom(x), params)
        res = float(np.max(np.abs(g)))
        it += 1

    _, lengths = edge_vectors(topology, geom(x))
    tensions = edge_tensions(params, lengths)
    tensioned = bool(np.all(tensions > 0.0))
    if not tensioned:
        warnings.warn(
            f"{int(np.sum(tensions <= 0))} slack edges at equilibrium", SlackEdgeWarning, stacklevel=2
        )
    x.flags.writeable = False
    return EquilibriumState(
        r_I=x,
        edge_lengths=lengths,
        edge_tensions=tensions,
        residual_inf_norm=res,
        solver_iterations=it,
        all_edges_tensioned=tensioned,
        energy=E,
    )


@dataclass(frozen=True)
class EquilibriumReport:
    residual_inf_norm: float
    energy: float
    min_tension: float
    slack_edges: tuple
    tolerance: float
    consistent: bool

    @property
    def residual_ok(self):
        return self.residual_inf_norm <= self.tolerance

    @property
    def all_tensioned(self):
        return not self.slack_edges

    @property
    def passed(self):
        return self.residual_ok and self.all_tensioned and self.consistent


def verify_equilibrium(topology, geometry, params, state, tolerance=DEFAULT_TOLERANCE):
    """Recompute residual, energy and tensions for ``state`` against the frame in ``geometry``."""
    g = geometry.with_interior(state.r_I)
    h = force_residual(topology, g, params)
    res = float(np.max(np.abs(h), initial=0.0))
    _, lengths = edge_vectors(topology, g)
    tensions = edge_tensions(params, lengths)
    consistent = bool(
        np.allclose(lengths, state.edge_lengths, rtol=1e-12, atol=1e-15)
        and np.isclose(res, state.residual_inf_norm, rtol=1e-6, atol=1e-14)
    )
    return EquilibriumReport(
        residual_inf_norm=res,
        energy=total_energy(topology, g, params),
        min_tension=float(tensions.min(initial=np.inf)),
        slack_edges=tuple(int(i) for i in np.flatnonzero(tensions <= 0.0)),
        tolerance=tolerance,
        consistent=consistent,
    )
