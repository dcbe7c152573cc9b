"""Cable-net graph, geometry and elastic parameters.

Node numbering is global: interior nodes take indices ``0 .. n_I-1`` and
boundary nodes ``n_I .. n_I+n_B-1``. Edges are stored interior edges first,
boundary edges last, so that ``l0[:m_I]`` is the interior block and
``l0[m_I:]`` the boundary (turnbuckle) block. Every boundary edge is stored
with its interior endpoint first.

The material is tension-only: an edge shorter than its unstressed length
carries no force and stores no energy. Units are SI (m, N, J).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometryError

#: Edges shorter than this are treated as degenerate (direction undefined).
MIN_EDGE_LENGTH = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Topology:
    """Graph of the net.

    ``edges`` is an ``(m, 2)`` integer array of global node indices, interior
    edges first. Boundary edges must be given as (interior, boundary) pairs
    or are flipped into that order on construction.
    """

    n_I: int
    n_B: int
    edges: np.ndarray
    m_I: int

    def __post_init__(self):
        edges = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        n_I, n_B, m_I = int(self.n_I), int(self.n_B), int(self.m_I)
        n = n_I + n_B
        if n_I < 1 or n_B < 0:
            raise ValueError("need at least one interior node")
        if not 0 <= m_I <= len(edges):
            raise ValueError("m_I out of range")
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValueError("edge endpoint index out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loop in edge list")
        key = np.sort(edges, axis=1)
        if len(np.unique(key, axis=0)) != len(key):
            raise ValueError("duplicate edge")
        is_int = edges < n_I
        if not np.all(is_int[:m_I]):
            raise ValueError("interior edges must connect two interior nodes")
        bnd = edges[m_I:]
        bnd_int = is_int[m_I:]
        if np.any(bnd_int.sum(axis=1) != 1):
            raise ValueError(
                "boundary edges must connect exactly one interior and one boundary node"
            )
        # interior endpoint first
        flip = ~bnd_int[:, 0]
        bnd = bnd.copy()
        bnd[flip] = bnd[flip][:, ::-1]
        edges = np.vstack([edges[:m_I], bnd]) if len(bnd) else edges
        deg = np.bincount(edges.ravel(), minlength=n)[:n_I]
        if np.any(deg < 2):
            raise ValueError("every interior node needs degree >= 2")
        if not _interior_connected(n_I, edges):
            raise ValueError("net graph is not connected")
        edges.flags.writeable = False
        object.__setattr__(self, "n_I", n_I)
        object.__setattr__(self, "n_B", n_B)
        object.__setattr__(self, "m_I", m_I)
        object.__setattr__(self, "edges", edges)

    @property
    def m(self):
        return len(self.edges)

    @property
    def m_B(self):
        return self.m - self.m_I

    @property
    def s(self):
        return self.edges[:, 0]

    @property
    def t(self):
        return self.edges[:, 1]


def _interior_connected(n_I, edges):
    # union-find over all nodes; boundary nodes are pinned to one common root
    # since the rigid frame connects them mechanically
    parent = list(range(n_I + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for s, t in edges:
        a = find(min(int(s), n_I))
        b = find(min(int(t), n_I))
        if a != b:
            parent[a] = b
    root = find(0)
    return all(find(i) == root for i in range(n_I))


@dataclass(frozen=True)
class Geometry:
    """Interior and boundary coordinates, each flattened to ``3*n`` values."""

    r_I: np.ndarray
    r_B: np.ndarray

    def __post_init__(self):
        r_I = _frozen(np.ravel(self.r_I))
        r_B = _frozen(np.ravel(self.r_B))
        if r_I.size % 3 or r_B.size % 3:
            raise ValueError("coordinate vectors must have length divisible by 3")
        if not (np.all(np.isfinite(r_I)) and np.all(np.isfinite(r_B))):
            raise ValueError("coordinates must be finite")
        object.__setattr__(self, "r_I", r_I)
        object.__setattr__(self, "r_B", r_B)

    def nodes(self):
        """All node positions as an ``(n_I + n_B, 3)`` array."""
        return np.vstack([self.r_I.reshape(-1, 3), self.r_B.reshape(-1, 3)])

    def with_interior(self, r_I):
        return Geometry(r_I, self.r_B)


@dataclass(frozen=True)
class EdgeParams:
    """Unstressed lengths ``l0`` and axial stiffnesses ``EA`` per edge."""

    l0: np.ndarray
    EA: np.ndarray
    m_I: int = field(default=0)

    def __post_init__(self):
        l0 = np.ravel(np.asarray(self.l0, dtype=float))
        EA = np.ravel(np.asarray(self.EA, dtype=float))
        if EA.size == 1 and l0.size != 1:
            EA = np.full(l0.shape, float(EA[0]))
        if l0.shape != EA.shape:
            raise ValueError("l0 and EA must have the same length")
        if not np.all(l0 > 0) or not np.all(np.isfinite(l0)):
            raise ValueError("unstressed lengths must be positive")
        if not np.all(EA > 0) or not np.all(np.isfinite(EA)):
            raise ValueError("axial stiffnesses must be positive")
        if not 0 <= self.m_I <= l0.size:
            raise ValueError("m_I out of range")
        object.__setattr__(self, "l0", _frozen(l0))
        object.__setattr__(self, "EA", _frozen(EA))
        object.__setattr__(self, "m_I", int(self.m_I))

    @property
    def l0_I(self):
        return self.l0[: self.m_I]

    @property
    def l0_B(self):
        return self.l0[self.m_I :]

    def with_interior_lengths(self, l0_I):
        l0_I = np.ravel(np.asarray(l0_I, dtype=float))
        if l0_I.size != self.m_I:
            raise ValueError(f"expected {self.m_I} interior lengths, got {l0_I.size}")
        return EdgeParams(np.concatenate([l0_I, self.l0_B]), self.EA, self.m_I)

    def scaled_stiffness(self, c):
        return EdgeParams(self.l0, self.EA * c, self.m_I)


def _check_dims(topology, geometry, params=None):
    if geometry.r_I.size != 3 * topology.n_I or geometry.r_B.size != 3 * topology.n_B:
        raise ValueError("geometry does not match topology node counts")
    if params is not None and (params.l0.size != topology.m or params.m_I != topology.m_I):
        raise ValueError("edge parameters do not match topology edge counts")


def edge_vectors(topology, geometry):
    """Return ``(d, l)``: per-edge vectors ``r_s - r_t`` and their lengths."""
    R = geometry.nodes()
    d = R[topology.s] - R[topology.t]
    return d, np.sqrt(np.einsum("ij,ij->i", d, d))


def edge_lengths(topology, geometry):
    _check_dims(topology, geometry)
    return edge_vectors(topology, geometry)[1]


def edge_length(geometry, topology, edge_index):
    """Euclidean length of a single edge."""
    if not 0 <= edge_index < topology.m:
        raise IndexError(f"edge index {edge_index} out of range (m={topology.m})")
    s, t = topology.edges[edge_index]
    R = geometry.nodes()
    return float(np.linalg.norm(R[s] - R[t]))


def edge_tensions(params, lengths):
    """Axial force per edge under the tension-only law."""
    return params.EA / params.l0 * np.maximum(lengths - params.l0, 0.0)


def _tensioned_coefficients(topology, geometry, params):
    d, l = edge_vectors(topology, geometry)
    if np.any(l < MIN_EDGE_LENGTH):
        bad = np.flatnonzero(l < MIN_EDGE_LENGTH).tolist()
        raise DegenerateGeometryError(f"zero-length edges: {bad}")
    tensioned = l > params.l0
    # EA (1/l0 - 1/l), zero for slack edges
    coef = np.where(tensioned, params.EA * (1.0 / params.l0 - 1.0 / l), 0.0)
    return d, l, coef, tensioned


def force_residual(topology, geometry, params):
    """Stacked net force ``h`` on the interior nodes (length ``3*n_I``).

    For node ``s``: ``h_s = sum EA (r_s - r_t) (1/l0 - 1/l)`` over the
    tensioned edges at ``s``. This is also the gradient of
    :func:`total_energy` with respect to ``r_I``.
    """
    _check_dims(topology, geometry, params)
    d, _, coef, _ = _tensioned_coefficients(topology, geometry, params)
    f = coef[:, None] * d
    n_I = topology.n_I
    h = np.zeros((n_I, 3))
    np.add.at(h, topology.s, f)
    t = topology.t
    inner = t < n_I
    np.add.at(h, t[inner], -f[inner])
    return h.ravel()


def total_energy(topology, geometry, params):
    """Elastic energy ``1/2 sum (EA/l0) max(l - l0, 0)^2`` in joules."""
    _check_dims(topology, geometry, params)
    _, l = edge_vectors(topology, geometry)
    stretch = np.maximum(l - params.l0, 0.0)
    return 0.5 * float(np.sum(params.EA / params.l0 * stretch**2))


def energy_hessian(topology, geometry, params):
    """Dense Hessian of :func:`total_energy` with respect to ``r_I``.

    Each tensioned edge contributes the block
    ``(EA/l0) [(1 - l0/l) I + (l0/l) u u^T]`` with ``u`` the unit edge vector;
    slack edges contribute nothing. The result is positive semidefinite.
    """
    _check_dims(topology, geometry, params)
    d, l, _, tensioned = _tensioned_coefficients(topology, geometry, params)
    k = params.EA / params.l0
    ratio = params.l0 / l
    u = d / l[:, None]
    blocks = (k * (1.0 - ratio))[:, None, None] * np.eye(3) + (k * ratio)[:, None, None] * (
        u[:, :, None] * u[:, None, :]
    )
    blocks[~tensioned] = 0.0

    n_I = topology.n_I
    H = np.zeros((n_I, 3, n_I, 3))
    s, t = topology.s, topology.t
    np.add.at(H, (s, slice(None), s, slice(None)), blocks)
    inner = t < n_I
    si, ti, bi = s[inner], t[inner], blocks[inner]
    np.add.at(H, (ti, slice(None), ti, slice(None)), bi)
    np.add.at(H, (si, slice(None), ti, slice(None)), -bi)
    np.add.at(H, (ti, slice(None), si, slice(None)), -bi)
    return H.reshape(3 * n_I, 3 * n_I)


# --------------------------------------------------------------------------
# synthetic nets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FrameSpec:
    """Plan layout of the grid: node spacing (m) and random plan jitter of the frame nodes (m)."""

    spacing: float = 0.25
    jitter: float = 0.0


@dataclass(frozen=True)
class SagSpec:
    """Anticlastic frame shape, as fractions of the larger plan span.

    ``corner_rise`` sets the alternating corner heights (hyperbolic
    paraboloid), ``edge_arch`` bends the frame sides up along x and down
    along y. Both together give a doubly curved saddle.
    """

    corner_rise: float = 0.15
    edge_arch: float = 0.08


def synth_net(
    grid_nx,
    grid_ny,
    frame_spec=None,
    sag_spec=None,
    seed=0,
    EA=1000.0,
    pretension=(0.96, 0.98),
):
    """Build a quadrilateral grid net on a saddle-shaped rigid frame.

    Grid node ``(i, j)`` is interior when it is not on the outer ring; the
    outer ring without its four corners forms the frame. Interior edges are
    the grid edges between interior nodes, boundary edges tie each frame
    node to its single interior neighbour. The returned geometry is the
    initial layout (frame surface interpolated inside); nominal unstressed
    lengths are that layout's edge lengths times a factor drawn per edge
    from ``pretension`` (upper end at most 0.98), so every edge is in tension.

    Returns ``(Topology, Geometry, EdgeParams)``.
    """
    if grid_nx < 3 or grid_ny < 3:
        raise ValueError("grid must be at least 3x3")
    frame_spec = frame_spec or FrameSpec()
    sag_spec = sag_spec or SagSpec()
    lo, hi = pretension
    if not 0 < lo <= hi <= 0.98:
        raise ValueError("pretension factors must satisfy 0 < lo <= hi <= 0.98")
    if not (np.isfinite(frame_spec.spacing) and frame_spec.spacing > 0):
        raise ValueError("frame spacing must be positive")

    rng = np.random.default_rng(seed)
    nx, ny = grid_nx, grid_ny
    span = frame_spec.spacing * (max(nx, ny) - 1)

    def surface(i, j):
        u = i / (nx - 1)
        v = j / (ny - 1)
        x = (u - 0.5) * frame_spec.spacing * (nx - 1)
        y = (v - 0.5) * frame_spec.spacing * (ny - 1)
        z = span * (
            sag_spec.corner_rise * (2 * u - 1) * (2 * v - 1)
            + sag_spec.edge_arch * 4 * (u * (1 - u) - v * (1 - v))
        )
        return np.array([x, y, z])

    index = {}
    interior, boundary = [], []
    for j in range(1, ny - 1):
        for i in range(1, nx - 1):
            index[i, j] = len(interior)
            interior.append(surface(i, j))
    # frame ring without corners, counter-clockwise from (1, 0)
    ring = (
        [(i, 0) for i in range(1, nx - 1)]
        + [(nx - 1, j) for j in range(1, ny - 1)]
        + [(i, ny - 1) for i in range(nx - 2, 0, -1)]
        + [(0, j) for j in range(ny - 2, 0, -1)]
    )
    n_I = len(interior)
    for k, ij in enumerate(ring):
        index[ij] = n_I + k
        p = surface(*ij)
        if frame_spec.jitter:
            p[:2] += rng.uniform(-frame_spec.jitter, frame_spec.jitter, 2)
        boundary.append(p)

    e_int, e_bnd = [], []
    for (i, j), a in sorted(index.items(), key=lambda kv: kv[1]):
        for di, dj in ((1, 0), (0, 1)):
            b = index.get((i + di, j + dj))
            if b is None:
                continue
            if a < n_I and b < n_I:
                e_int.append((a, b))
            elif a < n_I or b < n_I:
                e_bnd.append((min(a, b), max(a, b)))
    e_bnd.sort(key=lambda e: e[1])
    edges = e_int + e_bnd
    topo = Topology(n_I, len(boundary), edges, len(e_int))
    geom = Geometry(np.ravel(interior), np.ravel(boundary))
    layout = edge_lengths(topo, geom)
    factors = rng.uniform(lo, hi, topo.m)
    l0 = factors * layout
    if not np.all(l0 > 0):
        raise ValueError("frame specification produces non-positive nominal lengths")
    params = EdgeParams(l0, np.broadcast_to(np.asarray(EA, dtype=float), (topo.m,)), topo.m_I)
    return topo, geom, params


def grid_counts(nx, ny):
    """Closed-form ``(n_I, n_B, m_I, m_B)`` of :func:`synth_net` grids."""
    n_I = (nx - 2) * (ny - 2)
    n_B = 2 * (nx - 2) + 2 * (ny - 2)
    m_I = (nx - 3) * (ny - 2) + (nx - 2) * (ny - 3)
    return n_I, n_B, m_I, n_B


# --------------------------------------------------------------------------
# net description file
# --------------------------------------------------------------------------


def _node_ref(topology, k):
    return ["I", int(k)] if k < topology.n_I else ["B", int(k - topology.n_I)]


def net_to_dict(topology, geometry, params):
    _check_dims(topology, geometry, params)
    return {
        "nodes_interior": geometry.r_I.reshape(-1, 3).tolist(),
        "nodes_boundary": geometry.r_B.reshape(-1, 3).tolist(),
        "edges": [_node_ref(topology, s) + _node_ref(topology, t) for s, t in topology.edges],
        "l0": params.l0.tolist(),
        "EA": params.EA.tolist(),
    }


def net_from_dict(doc):
    r_I = np.asarray(doc["nodes_interior"], dtype=float).reshape(-1, 3)
    r_B = np.asarray(doc["nodes_boundary"], dtype=float).reshape(-1, 3)
    n_I = len(r_I)

    def glob(kind, idx):
        if kind == "I":
            return int(idx)
        if kind == "B":
            return n_I + int(idx)
        raise ValueError(f"unknown node kind {kind!r}")

    edges, kinds = [], []
    for sk, si, tk, ti in doc["edges"]:
        edges.append((glob(sk, si), glob(tk, ti)))
        kinds.append(sk == "I" and tk == "I")
    m_I = sum(kinds)
    if any(kinds[m_I:]) or not all(kinds[:m_I]):
        raise ValueError("interior edges must be listed before boundary edges")
    topo = Topology(n_I, len(r_B), edges, m_I)
    return topo, Geometry(r_I, r_B), EdgeParams(doc["l0"], doc["EA"], m_I)


def save_net(path, topology, geometry, params):
    from ._io import write_json

    return write_json(path, net_to_dict(topology, geometry, params))


def load_net(path):
    return net_from_dict(json.loads(Path(path).read_text()))
