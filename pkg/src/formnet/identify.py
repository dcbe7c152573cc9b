"""Learning the map from form deviations to interior-length deviations.

One zero-mean GP is trained per interior edge; all of them share the same
inputs (the interior-coordinate deviations of the training samples), so the
identifier stores a single input matrix and a target column per edge.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import as_arrays, worker_count
from .equilibrium import solve_equilibrium
from .errors import FitError, FormnetError, PriorReversionWarning
from .gp import (
    FitConfig,
    Hyperparameters,
    fit_hyperparameters,
    fit_model,
    posterior_batch,
    sq_dists,
    with_targets,
)

log = logging.getLogger(__name__)

IDENTIFIER_FORMAT_VERSION = 1
#: sigma above this fraction of sigma_f counts as prior reversion
PRIOR_REVERSION_FRACTION = 0.9
#: keep Cholesky factors cached while they fit in this many bytes
FACTOR_CACHE_BYTES = 512 * 2**20


@dataclass
class Identifier:
    X: np.ndarray
    Y: np.ndarray
    hypers: list
    nlml: list
    tied: bool = False
    train_indices: tuple = ()
    scenario_hash: str = ""
    fit_config: FitConfig = field(default_factory=FitConfig)
    _models: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def m_I(self):
        return self.Y.shape[1]

    @property
    def n_D(self):
        return self.X.shape[0]

    @property
    def input_dim(self):
        return self.X.shape[1]

    def model(self, i):
        """GP of interior edge ``i`` (factorized on first use)."""
        m = self._models.get(i)
        if m is not None:
            return m
        m = fit_model(self.X, self.Y[:, i], self.hypers[i])
        if (len(self._models) + 1) * self.n_D**2 * 8 <= FACTOR_CACHE_BYTES:
            self._models[i] = m
        return m

    def predict(self, X_star):
        """Posterior means and standard deviations, shape ``(n_star, m_I)`` each."""
        X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
        if X_star.shape[1] != self.input_dim:
            raise ValueError(
                f"measurement has dimension {X_star.shape[1]}, expected {self.input_dim}"
            )
        mean = np.empty((len(X_star), self.m_I))
        var = np.empty_like(mean)
        if self.tied and self.m_I:
            # one factor serves every edge
            base = self.model(0)
            for i in range(self.m_I):
                mi = base if i == 0 else with_targets(base, self.Y[:, i])
                mean[:, i], var[:, i] = posterior_batch(mi, X_star)
        else:
            for i in range(self.m_I):
                mean[:, i], var[:, i] = posterior_batch(self.model(i), X_star)
        return mean, np.sqrt(var)

    def sigma_f(self):
        return np.array([h.sigma_f for h in self.hypers])


def _fit_edge(args):
    X, y, config, D = args
    try:
        return fit_hyperparameters(X, y, config, D=D)
    except FormnetError as exc:
        return exc


def train(train_set, config=None, tied=False, workers=None, scenario_hash=""):
    """Fit one GP per interior edge on ``train_set`` (a list of samples).

    With ``tied`` a single set of hyperparameters is estimated for all
    edges jointly (summed marginal likelihood).
    """
    config = config or FitConfig()
    idx, X, Y = as_arrays(train_set)
    if len(idx) < 2:
        raise ValueError("training needs at least two samples")
    m_I = Y.shape[1]
    D = sq_dists(X)
    if tied:
        res = fit_hyperparameters(X, Y, config, D=D)
        hypers, values = [res.hyper] * m_I, [res.nlml] * m_I
    else:
        workers = worker_count(workers)
        jobs = [(X, Y[:, i], config, D) for i in range(m_I)]
        if workers == 1:
            results = []
            for i, job in enumerate(jobs):
                results.append(_fit_edge(job))
                log.debug("edge %d/%d fitted", i + 1, m_I)
        else:
            with ProcessPoolExecutor(workers) as pool:
                results = list(pool.map(_fit_edge, jobs, chunksize=max(1, m_I // (4 * workers))))
        failed = [i for i, r in enumerate(results) if isinstance(r, Exception)]
        if failed:
            raise FitError(f"hyperparameter fit failed on edges {failed}", failed)
        hypers = [r.hyper for r in results]
        values = [r.nlml for r in results]
    return Identifier(X, Y, hypers, values, tied, tuple(int(i) for i in idx), scenario_hash, config)


def identify(identifier, delta_r_meas, noise_std=0.0, rng=None):
    """Identify interior-length deviations from one measured form deviation.

    Returns ``(delta_l0_hat, sigma)``, both of length ``m_I``. ``noise_std``
    perturbs the measurement with Gaussian noise (robustness studies only).
    Warns with :class:`~formnet.errors.PriorReversionWarning` when the
    measurement lies so far from the training data that some edges predict
    their prior.
    """
    x = np.ravel(np.asarray(delta_r_meas, dtype=float))
    if x.size != identifier.input_dim:
        raise ValueError(f"measurement has dimension {x.size}, expected {identifier.input_dim}")
    if noise_std:
        rng = rng if rng is not None else np.random.default_rng()
        x = x + rng.normal(0.0, noise_std, x.size)
    mean, sigma = identifier.predict(x[None, :])
    mean, sigma = mean[0], sigma[0]
    reverted = prior_reversion(identifier, sigma)
    if np.any(reverted):
        warnings.warn(
            f"{int(reverted.sum())} edges reverted to the GP prior (measurement far from training data)",
            PriorReversionWarning,
            stacklevel=2,
        )
    return mean, sigma


def prior_reversion(identifier, sigma, fraction=PRIOR_REVERSION_FRACTION):
    return np.asarray(sigma) >= fraction * identifier.sigma_f()


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------


def error_statistics(errors, delta_true):
    """Per-edge mean/std (population) and the MSE / MRSE of a prediction-error matrix.

    ``errors`` and ``delta_true`` have one row per validation sample and one
    column per edge. Edges whose true deviations are all zero are left out
    of the MRSE.
    """
    errors = np.asarray(errors, dtype=float)
    delta_true = np.asarray(delta_true, dtype=float)
    mean = errors.mean(axis=0)
    std = np.sqrt(np.mean((errors - mean) ** 2, axis=0))
    sq = np.sum(errors**2, axis=0)
    denom = np.sum(delta_true**2, axis=0)
    ok = denom > 0
    if not np.all(ok):
        warnings.warn(f"{int((~ok).sum())} edges with zero true deviation left out of MRSE")
    mse = float(np.mean(sq / len(errors)))
    mrse = float(np.mean(sq[ok] / denom[ok])) if np.any(ok) else float("nan")
    return mean, std, mse, mrse


def form_error_stats(e):
    e = np.asarray(e, dtype=float)
    return {
        "max_abs": float(np.max(np.abs(e))),
        "min_abs": float(np.min(np.abs(e))),
        "mean": float(np.mean(e)),
        "rmse": float(np.sqrt(np.mean(e**2))),
    }


@dataclass(frozen=True)
class FormErrors:
    """Per-node distances of the nominal and identified forms from the true form."""

    e_nom: np.ndarray
    e_ident: np.ndarray
    r_true: np.ndarray
    r_ident: np.ndarray

    @property
    def nom_stats(self):
        return form_error_stats(self.e_nom)

    @property
    def ident_stats(self):
        return form_error_stats(self.e_ident)

    @property
    def rmse_ratio(self):
        nom = self.nom_stats["rmse"]
        return self.ident_stats["rmse"] / nom if nom > 0 else float("nan")

    def to_dict(self):
        return {
            "e_nom": self.e_nom.tolist(),
            "e_ident": self.e_ident.tolist(),
            "table": {"e_nom": self.nom_stats, "e_ident": self.ident_stats},
        }


def _interior_lengths(scenario, p):
    if hasattr(p, "l0"):
        return scenario.params.with_interior_lengths(p.l0_I)
    return scenario.params.with_interior_lengths(p)


def evaluate_form_errors(scenario, true_params, identified_params, true_r_I=None):
    """Solve the true and identified forms and compare both with the nominal form.

    Parameter arguments are either full :class:`~formnet.net.EdgeParams` or
    interior unstressed-length vectors. ``true_r_I`` skips the true solve when
    the true form is already known (e.g. from the dataset).
    """
    topo, r_B, tol = scenario.topology, scenario.r_B, scenario.tolerance
    r_nom = scenario.nominal_r_I
    if true_r_I is None:
        true_r_I = solve_equilibrium(topo, _interior_lengths(scenario, true_params), r_B, r_nom, tol).r_I
    ident = solve_equilibrium(topo, _interior_lengths(scenario, identified_params), r_B, r_nom, tol).r_I
    R = np.reshape(true_r_I, (-1, 3))
    e_nom = np.linalg.norm(R - np.reshape(r_nom, (-1, 3)), axis=1)
    e_ident = np.linalg.norm(R - np.reshape(ident, (-1, 3)), axis=1)
    return FormErrors(e_nom, e_ident, np.asarray(true_r_I), ident)


@dataclass
class EvalReport:
    indices: np.ndarray
    delta_true: np.ndarray
    delta_hat: np.ndarray
    sigma: np.ndarray
    errors: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    mse: float
    mrse: float
    form: list = field(default_factory=list)

    @property
    def form_rmse_ratios(self):
        return np.array([f.rmse_ratio for f in self.form])

    def to_dict(self, kappa=0):
        doc = {
            "n_validation": int(len(self.indices)),
            "m_I": int(self.errors.shape[1]),
            "mse": self.mse,
            "mrse": self.mrse,
            "sample_indices": self.indices.tolist(),
            "per_edge": {"mean": self.mean.tolist(), "std": self.std.tolist()},
            "errors": self.errors.tolist(),
            "delta_true": self.delta_true.tolist(),
            "delta_hat": self.delta_hat.tolist(),
            "sigma": self.sigma.tolist(),
        }
        if self.form:
            f = self.form[kappa]
            ratios = self.form_rmse_ratios
            doc["form_errors"] = {
                "kappa": int(kappa),
                "sample_index": int(self.indices[kappa]),
                "table": {"e_nom": f.nom_stats, "e_ident": f.ident_stats},
                "e_nom": f.e_nom.tolist(),
                "e_ident": f.e_ident.tolist(),
                "rmse_ratio": {
                    "per_sample": ratios.tolist(),
                    "median": float(np.median(ratios)),
                    "max": float(np.max(ratios)),
                },
            }
        return doc

    def edge_rows(self, kappa=0):
        """``(edge, delta_true, delta_hat, error)`` rows for validation sample ``kappa``."""
        return [
            (i, float(self.delta_true[kappa, i]), float(self.delta_hat[kappa, i]), float(self.errors[kappa, i]))
            for i in range(self.errors.shape[1])
        ]


def evaluate_cv(identifier, validation_set, scenario=None, check_disjoint=True):
    """Cross-validation metrics on held-out samples.

    With a ``scenario`` the form errors of every validation sample are
    computed as well (one extra equilibrium solve per sample).
    """
    if not validation_set:
        raise ValueError("validation set is empty")
    idx, X, Y = as_arrays(validation_set)
    if check_disjoint and set(idx.tolist()) & set(identifier.train_indices):
        raise ValueError("validation samples overlap the training set")
    pred, sigma = identifier.predict(X)
    errors = Y - pred
    mean, std, mse, mrse = error_statistics(errors, Y)
    form = []
    if scenario is not None:
        l0_nom = scenario.params.l0_I
        for k in range(len(idx)):
            form.append(
                evaluate_form_errors(
                    scenario,
                    l0_nom + Y[k],
                    l0_nom + pred[k],
                    true_r_I=scenario.nominal_r_I + X[k],
                )
            )
    return EvalReport(idx, Y, pred, sigma, errors, mean, std, mse, mrse, form)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def identifier_to_dict(identifier):
    cfg = identifier.fit_config
    return {
        "kind": "formnet-identifier",
        "format_version": IDENTIFIER_FORMAT_VERSION,
        "scenario_hash": identifier.scenario_hash,
        "tied": identifier.tied,
        "fit_config": {
            "n_starts": cfg.n_starts,
            "optimize_noise": cfg.optimize_noise,
            "sigma_w": cfg.sigma_w,
            "seed": cfg.seed,
            "max_iter": cfg.max_iter,
            "gtol": cfg.gtol,
        },
        "train_indices": list(identifier.train_indices),
        "hyperparameters": [h.to_dict() for h in identifier.hypers],
        "nlml": list(identifier.nlml),
        "X": identifier.X.tolist(),
        "Y": identifier.Y.tolist(),
    }


def identifier_from_dict(doc):
    if doc.get("kind") != "formnet-identifier":
        raise ValueError("not an identifier document")
    if doc.get("format_version") != IDENTIFIER_FORMAT_VERSION:
        raise ValueError(f"unsupported identifier format {doc.get('format_version')!r}")
    return Identifier(
        X=np.asarray(doc["X"], dtype=float),
        Y=np.asarray(doc["Y"], dtype=float),
        hypers=[Hyperparameters.from_dict(h) for h in doc["hyperparameters"]],
        nlml=list(doc["nlml"]),
        tied=bool(doc["tied"]),
        train_indices=tuple(doc["train_indices"]),
        scenario_hash=doc["scenario_hash"],
        fit_config=FitConfig(**doc["fit_config"]),
    )
