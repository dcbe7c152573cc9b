"""Simulated training data: random interior-length deviations and the forms they produce.

Each sample ``kappa`` draws its length deviations from its own counter-based
random stream keyed by ``(seed, kappa)``, so a sample does not depend on how
many other samples are generated or on the order they are computed in.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _io
from .equilibrium import DEFAULT_TOLERANCE, solve_equilibrium
from .errors import DatasetError, FormnetError
from .net import net_to_dict

log = logging.getLogger(__name__)

DATASET_FORMAT_VERSION = 1
DEFAULT_BOUNDS = (-0.005, 0.005)
MAX_FAILED_FRACTION = 0.01


@dataclass(frozen=True)
class Scenario:
    """A net with fixed frame and boundary lengths, plus its nominal equilibrium."""

    topology: object
    params: object
    geometry: object
    nominal: object
    bounds: tuple = DEFAULT_BOUNDS
    seed: int = 0
    tolerance: float = DEFAULT_TOLERANCE
    net_hash: str = field(default="", compare=False)

    @property
    def r_B(self):
        return self.geometry.r_B

    @property
    def nominal_r_I(self):
        return self.nominal.r_I

    @property
    def m_I(self):
        return self.topology.m_I


def make_scenario(topology, geometry, params, bounds=DEFAULT_BOUNDS, seed=0, tolerance=DEFAULT_TOLERANCE):
    """Solve the nominal equilibrium once and bundle it with the sampling setup.

    ``geometry.r_I`` serves as the starting point of the nominal solve.
    """
    a, b = map(float, bounds)
    if not a < b:
        raise ValueError("uncertainty bounds must satisfy a < b")
    nominal = solve_equilibrium(topology, params, geometry.r_B, geometry.r_I, tolerance)
    return Scenario(
        topology,
        params,
        geometry,
        nominal,
        (a, b),
        int(seed),
        float(tolerance),
        _io.content_hash(net_to_dict(topology, geometry, params)),
    )


@dataclass(frozen=True)
class SamplePair:
    index: int
    delta_l0I: np.ndarray
    delta_rI: np.ndarray
    residual: float


def sample_stream(seed, kappa):
    """Independent Philox stream for sample ``kappa``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(kappa),))
    return np.random.Generator(np.random.Philox(ss))


def uniform_sampler(rng, bounds, size):
    return rng.uniform(bounds[0], bounds[1], size)


def draw_deviation(scenario, kappa, sampler=uniform_sampler):
    return sampler(sample_stream(scenario.seed, kappa), scenario.bounds, scenario.m_I)


def solve_sample(scenario, kappa, sampler=uniform_sampler):
    """Draw sample ``kappa`` and solve its equilibrium, warm-started at the nominal form."""
    dl = draw_deviation(scenario, kappa, sampler)
    params = scenario.params.with_interior_lengths(scenario.params.l0_I + dl)
    state = solve_equilibrium(
        scenario.topology, params, scenario.r_B, scenario.nominal_r_I, scenario.tolerance
    )
    return SamplePair(int(kappa), dl, state.r_I - scenario.nominal_r_I, state.residual_inf_norm)


def _solve_chunk(args):
    scenario, kappas, sampler = args
    out = []
    for k in kappas:
        try:
            out.append(solve_sample(scenario, k, sampler))
        except FormnetError as exc:
            out.append((int(k), str(exc)))
    return out


def worker_count(workers=None):
    if workers is not None:
        return max(1, int(workers))
    return max(1, int(os.environ.get("FORMNET_THREADS", "1")))


def generate(scenario, n_samples, workers=None, sampler=uniform_sampler, start=0):
    """Generate samples ``start .. start+n_samples-1``.

    Failed solves are dropped (the remaining samples keep their indices);
    more than 1% failures raises :class:`~formnet.errors.DatasetError`.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    kappas = list(range(start, start + n_samples))
    workers = worker_count(workers)
    if workers == 1:
        results = _solve_chunk((scenario, kappas, sampler))
    else:
        chunks = [kappas[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_solve_chunk, [(scenario, c, sampler) for c in chunks]))
        results = [r for part in parts for r in part]
        results.sort(key=lambda r: r.index if isinstance(r, SamplePair) else r[0])
    samples = [r for r in results if isinstance(r, SamplePair)]
    failed = [r for r in results if not isinstance(r, SamplePair)]
    for k, msg in failed:
        log.warning("sample %d failed: %s", k, msg)
    if len(failed) > MAX_FAILED_FRACTION * n_samples:
        raise DatasetError(
            f"{len(failed)} of {n_samples} samples failed: {[k for k, _ in failed][:10]}"
        )
    return samples


def split(samples, n_train, n_validation, seed=0, shuffle=True):
    """Disjoint train/validation subsets, each returned in sample-index order.

    With ``shuffle`` the assignment is a seeded random permutation; otherwise
    the first ``n_train`` samples train and the next ``n_validation`` validate.
    """
    if n_train < 0 or n_validation < 0:
        raise ValueError("split sizes must be non-negative")
    if n_train + n_validation > len(samples):
        raise DatasetError(
            f"need {n_train + n_validation} samples, only {len(samples)} available"
        )
    order = np.random.default_rng(seed).permutation(len(samples)) if shuffle else np.arange(len(samples))
    train = sorted(order[:n_train])
    val = sorted(order[n_train : n_train + n_validation])
    return [samples[i] for i in train], [samples[i] for i in val]


def as_arrays(samples):
    """``(indices, delta_rI matrix, delta_l0I matrix)`` with one row per sample."""
    if not samples:
        return np.zeros(0, dtype=int), np.zeros((0, 0)), np.zeros((0, 0))
    idx = np.array([s.index for s in samples])
    X = np.vstack([s.delta_rI for s in samples])
    Y = np.vstack([s.delta_l0I for s in samples])
    return idx, X, Y


# --------------------------------------------------------------------------
# JSON-lines file
# --------------------------------------------------------------------------


def dataset_header(scenario, n_requested, samples):
    got = {s.index for s in samples}
    return {
        "kind": "formnet-dataset",
        "format_version": DATASET_FORMAT_VERSION,
        "scenario_hash": scenario.net_hash,
        "seed": scenario.seed,
        "bounds": list(scenario.bounds),
        "distribution": "iid-uniform per interior edge",
        "n": int(n_requested),
        "n_samples": len(samples),
        "failed": [k for k in range(n_requested) if k not in got],
        "tolerance": scenario.tolerance,
        "nominal_r_I": np.asarray(scenario.nominal_r_I).tolist(),
    }


def save_dataset(path, scenario, samples, n_requested=None):
    n_requested = len(samples) if n_requested is None else n_requested
    lines = [_io.dumps(dataset_header(scenario, n_requested, samples))]
    for s in samples:
        lines.append(
            _io.dumps(
                {
                    "index": s.index,
                    "delta_l0I": s.delta_l0I.tolist(),
                    "delta_rI": s.delta_rI.tolist(),
                    "residual": s.residual,
                }
            )
        )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def load_dataset(path):
    """Return ``(header, samples)``."""
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "formnet-dataset":
            raise DatasetError(f"{path} is not a dataset file")
        if header.get("format_version") != DATASET_FORMAT_VERSION:
            raise DatasetError(f"unsupported dataset format {header.get('format_version')!r}")
        samples = []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            samples.append(
                SamplePair(
                    rec["index"],
                    np.asarray(rec["delta_l0I"], dtype=float),
                    np.asarray(rec["delta_rI"], dtype=float),
                    rec["residual"],
                )
            )
    return header, samples
