"""Second-order cone form of the minimum-energy problem.

Variables are stacked as ``x = [r_I (3 n_I), w (m), v]`` and the problem is

    minimize    v / 2
    subject to  sqrt(EA_e / l0_e) (||r_s - r_t|| - l0_e) <= w_e     (per edge)
                0 <= w_e                                            (per edge)
                ||(2 w, 1 - v)|| <= 1 + v                            (i.e. ||w||^2 <= v)

written in the standard conic form ``A x + s = b, s in K`` used by most
interior-point conic solvers (Clarabel, SCS, ECOS, MOSEK via conversion).
The per-edge cone is scaled by ``sqrt(EA/l0)`` so that each ``w_e`` has
units of sqrt(J).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .net import edge_vectors, Geometry


@dataclass(frozen=True)
class Cone:
    kind: str  # "soc" or "nonneg"
    rows: tuple

    @property
    def dim(self):
        return len(self.rows)


@dataclass(frozen=True)
class ConicProblem:
    n_I: int
    m: int
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: tuple

    @property
    def n_vars(self):
        return 3 * self.n_I + self.m + 1

    @property
    def r_slice(self):
        return slice(0, 3 * self.n_I)

    @property
    def w_slice(self):
        return slice(3 * self.n_I, 3 * self.n_I + self.m)

    @property
    def v_index(self):
        return 3 * self.n_I + self.m

    def cone_counts(self):
        counts = {}
        for cone in self.cones:
            counts[cone.kind] = counts.get(cone.kind, 0) + 1
        return counts

    def slack(self, x):
        return self.b - self.A @ x

    def violation(self, x):
        """Largest cone violation of ``s = b - A x`` (0 when feasible)."""
        s = self.slack(x)
        worst = 0.0
        for cone in self.cones:
            z = s[list(cone.rows)]
            if cone.kind == "nonneg":
                worst = max(worst, float(-z.min()))
            else:
                worst = max(worst, float(np.linalg.norm(z[1:]) - z[0]))
        return worst

    def objective(self, x):
        return float(self.c @ x)

    def to_dict(self):
        A = self.A.tocoo()
        order = np.lexsort((A.col, A.row))
        return {
            "n_interior": self.n_I,
            "n_edges": self.m,
            "variables": {
                "r_I": [0, 3 * self.n_I],
                "w": [3 * self.n_I, 3 * self.n_I + self.m],
                "v": [self.v_index, self.v_index + 1],
            },
            "objective": self.c.tolist(),
            "cones": [{"type": k.kind, "rows": list(k.rows)} for k in self.cones],
            "A": {
                "shape": list(self.A.shape),
                "triplets": [
                    [int(A.row[i]), int(A.col[i]), float(A.data[i])] for i in order
                ],
            },
            "b": self.b.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        shape = tuple(doc["A"]["shape"])
        trip = np.asarray(doc["A"]["triplets"], dtype=float).reshape(-1, 3)
        A = sp.csc_matrix(
            (trip[:, 2], (trip[:, 0].astype(int), trip[:, 1].astype(int))), shape=shape
        )
        cones = tuple(Cone(c["type"], tuple(c["rows"])) for c in doc["cones"])
        return cls(
            int(doc["n_interior"]),
            int(doc["n_edges"]),
            np.asarray(doc["objective"], dtype=float),
            A,
            np.asarray(doc["b"], dtype=float),
            cones,
        )


def build_conic_problem(topology, params, r_B):
    n_I, m = topology.n_I, topology.m
    r_B = np.asarray(r_B, dtype=float).reshape(-1, 3)
    n = 3 * n_I + m + 1
    w0, v = 3 * n_I, 3 * n_I + m
    rows, cols, vals, b = [], [], [], []
    cones = []
    scale = np.sqrt(params.EA / params.l0)

    def add(r, c, val):
        rows.append(r)
        cols.append(c)
        vals.append(val)

    row = 0
    for e, (s, t) in enumerate(topology.edges):
        ce = scale[e]
        # s0 = w_e + ce*l0_e ; s[1:4] = ce*(r_s - r_t)
        add(row, w0 + e, -1.0)
        b.append(ce * params.l0[e])
        for k in range(3):
            add(row + 1 + k, 3 * s + k, -ce)
            if t < n_I:
                add(row + 1 + k, 3 * t + k, ce)
                b.append(0.0)
            else:
                b.append(-ce * r_B[t - n_I, k])
        cones.append(Cone("soc", tuple(range(row, row + 4))))
        row += 4
    for e in range(m):
        add(row, w0 + e, -1.0)
        b.append(0.0)
        cones.append(Cone("nonneg", (row,)))
        row += 1
    # epigraph: (1 + v, 2 w, 1 - v) in SOC
    start = row
    add(row, v, -1.0)
    b.append(1.0)
    row += 1
    for e in range(m):
        add(row, w0 + e, -2.0)
        b.append(0.0)
        row += 1
    add(row, v, 1.0)
    b.append(1.0)
    row += 1
    cones.append(Cone("soc", tuple(range(start, row))))

    c = np.zeros(n)
    c[v] = 0.5
    A = sp.csc_matrix((vals, (rows, cols)), shape=(row, n))
    return ConicProblem(n_I, m, c, A, np.asarray(b), tuple(cones))


def lift_state(topology, params, r_B, r_I):
    """Conic variable vector corresponding to interior coordinates ``r_I``.

    ``w`` is set to its smallest feasible value and ``v = ||w||^2``, so the
    conic objective equals the elastic energy at ``r_I``.
    """
    _, l = edge_vectors(topology, Geometry(r_I, r_B))
    w = np.sqrt(params.EA / params.l0) * np.maximum(l - params.l0, 0.0)
    return np.concatenate([np.ravel(r_I), w, [w @ w]])


@dataclass(frozen=True)
class ConicSolution:
    x: np.ndarray
    r_I: np.ndarray
    w: np.ndarray
    v: float
    objective: float
    status: str
    iterations: int


def solve_conic(problem, tol=1e-10, max_iter=200):
    """Solve ``problem`` with the Clarabel interior-point solver.

    Clarabel is an optional dependency (``pip install clarabel``); this
    routine only exists to cross-check the Newton path.
    """
    import clarabel

    cones = []
    for cone in problem.cones:
        if cone.kind == "nonneg":
            if cones and isinstance(cones[-1], clarabel.NonnegativeConeT):
                cones[-1] = clarabel.NonnegativeConeT(cones[-1].dim + 1)
            else:
                cones.append(clarabel.NonnegativeConeT(1))
        elif cone.kind == "soc":
            cones.append(clarabel.SecondOrderConeT(cone.dim))
        else:
            raise ValueError(f"unsupported cone type {cone.kind!r}")
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.tol_ktratio = 1e-10
    n = problem.n_vars
    P = sp.csc_matrix((n, n))
    solver = clarabel.DefaultSolver(P, problem.c, problem.A.tocsc(), problem.b, cones, settings)
    sol = solver.solve()
    x = np.asarray(sol.x)
    return ConicSolution(
        x=x,
        r_I=x[problem.r_slice],
        w=x[problem.w_slice],
        v=float(x[problem.v_index]),
        objective=float(sol.obj_val),
        status=str(sol.status),
        iterations=int(sol.iterations),
    )
