import numpy as np
import pytest

from formnet.dataset import generate, make_scenario, split
from formnet.net import EdgeParams, Geometry, Topology, synth_net


def gd_oracle(topology, params, r_B, r0, gtol=1e-10, max_iter=1_000_000):
    """Fixed-step gradient descent on the tension-only energy.

    Written independently of the library: its own gradient and a step of
    1/L with L a Gershgorin bound on the Hessian (each edge block has
    eigenvalues at most EA/l0 while tensioned). Returns ``(r_I, iterations)``.
    """
    s, t = np.asarray(topology.edges).T
    k = params.EA / params.l0
    l0 = params.l0
    n_I = topology.n_I
    deg = np.bincount(np.concatenate([s, t]), minlength=n_I + topology.n_B)[:n_I]
    L = 2.0 * deg.max() * k.max()
    B = np.asarray(r_B, dtype=float).reshape(-1, 3)
    x = np.array(r0, dtype=float)
    for it in range(max_iter):
        P = np.vstack([x.reshape(-1, 3), B])
        d = P[s] - P[t]
        l = np.sqrt((d * d).sum(axis=1))
        f = (k * np.maximum(l - l0, 0.0) / l)[:, None] * d
        g = np.zeros_like(P)
        np.add.at(g, s, f)
        np.add.at(g, t, -f)
        g = g[:n_I].ravel()
        if np.abs(g).max() <= gtol:
            return x, it
        x = x - g / L
    raise RuntimeError("oracle did not converge")


def line_net(left=(-1.0, 0, 0), right=(1.0, 0, 0), l0=(0.5, 0.5), EA=1.0, r_I=(0.1, 0.05, 0.0)):
    """One interior node tied to two boundary anchors."""
    topo = Topology(1, 2, [(0, 1), (0, 2)], 0)
    geom = Geometry(np.array(r_I, dtype=float), np.array([left, right], dtype=float))
    return topo, geom, EdgeParams(np.array(l0, dtype=float), EA, 0)


@pytest.fixture(scope="session")
def net55():
    return synth_net(5, 5, seed=7)


@pytest.fixture(scope="session")
def scenario55(net55):
    topo, geom, params = net55
    return make_scenario(topo, geom, params, (-0.005, 0.005), seed=1)


@pytest.fixture(scope="session")
def samples55(scenario55):
    return generate(scenario55, 450)


@pytest.fixture(scope="session")
def split55(samples55):
    return split(samples55, 400, 50, seed=1)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
