"""Gaussian-process regression with an isotropic squared-exponential kernel.

The kernel is

    k(x1, x2) = sigma_f**2 * exp(-lam**2 / 2 * ||x1 - x2||**2)

Note the convention: ``lam`` multiplies the distance, so it is an *inverse*
length scale (1/m). Larger ``lam`` means faster decay of correlation. The
prior mean is zero.

All linear algebra goes through a single Cholesky factor of
``K + sigma_w**2 I``. When that factorization fails or is too ill-conditioned
to trust, a jitter proportional to ``sigma_f**2`` is added in steps of 100x up
to ``1e-4 * sigma_f**2``; the jitter actually used is kept with the factor so
that likelihood, gradient and predictions all refer to the same matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.linalg import lapack
from scipy.spatial.distance import cdist, pdist

from .errors import CholeskyError, FitError

SIGMA_W_FLOOR = 1e-10
DEFAULT_SIGMA_W = 1e-8
JITTER_LEVELS = (0.0, 1e-12, 1e-10, 1e-8, 1e-6, 1e-4)
RCOND_MIN = 1e-12
LOG_BOUNDS = (math.log(1e-6), math.log(1e6))
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Hyperparameters:
    lam: float
    sigma_f: float
    sigma_w: float = DEFAULT_SIGMA_W

    def __post_init__(self):
        if not (self.lam > 0 and self.sigma_f > 0 and self.sigma_w >= 0):
            raise ValueError(f"invalid hyperparameters {self}")
        object.__setattr__(self, "sigma_w", max(float(self.sigma_w), SIGMA_W_FLOOR))

    @property
    def log_params(self):
        return np.log([self.lam, self.sigma_f, self.sigma_w])

    @classmethod
    def from_log(cls, theta):
        lam, sf, sw = np.exp(np.asarray(theta, dtype=float))
        return cls(float(lam), float(sf), float(sw))

    def to_dict(self):
        return {"lambda": self.lam, "sigma_f": self.sigma_f, "sigma_w": self.sigma_w}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["lambda"], doc["sigma_f"], doc["sigma_w"])


def sq_dists(X1, X2=None):
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = X1 if X2 is None else np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape[1] != X2.shape[1]:
        raise ValueError(f"dimension mismatch: {X1.shape[1]} vs {X2.shape[1]}")
    return cdist(X1, X2, "sqeuclidean")


def kernel(x1, x2, hyper):
    x1 = np.ravel(np.asarray(x1, dtype=float))
    x2 = np.ravel(np.asarray(x2, dtype=float))
    if x1.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x1.size} vs {x2.size}")
    d = x1 - x2
    return hyper.sigma_f**2 * math.exp(-0.5 * hyper.lam**2 * float(d @ d))


def gram(X1, X2, hyper):
    return hyper.sigma_f**2 * np.exp(-0.5 * hyper.lam**2 * sq_dists(X1, X2))


def _factor(K, sigma_f, noise_var):
    """Lower Cholesky factor of ``K + (noise_var + jitter) I`` and the relative jitter used.

    A factorization counts as failed when LAPACK reports a non-positive
    pivot or when its reciprocal condition estimate is below ``RCOND_MIN``;
    beyond that the likelihood is dominated by round-off.
    """
    n = len(K)
    idx = np.diag_indices(n)
    for rel in JITTER_LEVELS:
        Ky = K.copy()
        Ky[idx] += noise_var + rel * sigma_f**2
        anorm = float(np.max(np.sum(np.abs(Ky), axis=0)))
        L, info = lapack.dpotrf(Ky, lower=1, clean=1, overwrite_a=1)
        if info == 0 and lapack.dpocon(L, anorm, uplo="L")[0] >= RCOND_MIN:
            return L, rel
    raise CholeskyError(
        f"Gram matrix not positive definite even with jitter {JITTER_LEVELS[-1]:g}*sigma_f^2"
    )


@dataclass(frozen=True)
class GpModel:
    """A fitted zero-mean GP for one output."""

    X: np.ndarray
    y: np.ndarray
    hyper: Hyperparameters
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0

    @property
    def noise_var(self):
        """Total diagonal added to ``K``: ``sigma_w**2`` plus any jitter."""
        return self.hyper.sigma_w**2 + self.jitter * self.hyper.sigma_f**2


def fit_model(X, y, hyper):
    """Factorize the Gram matrix for fixed hyperparameters."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.ravel(np.asarray(y, dtype=float))
    if len(X) != len(y):
        raise ValueError("X and y have different numbers of rows")
    if len(X) < 1:
        raise ValueError("need at least one training point")
    K = gram(X, X, hyper)
    L, rel = _factor(K, hyper.sigma_f, hyper.sigma_w**2)
    alpha = scipy.linalg.cho_solve((L, True), y, check_finite=False)
    return GpModel(X, y, hyper, L, alpha, rel)


def posterior_batch(model, X_star, return_var=True):
    """Posterior mean and variance of the latent function at each row of ``X_star``."""
    if model.chol is None:
        raise ValueError("model is not fitted")
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    Ks = gram(X_star, model.X, model.hyper)
    mean = Ks @ model.alpha
    if not return_var:
        return mean, None
    V = scipy.linalg.solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
    var = model.hyper.sigma_f**2 - np.einsum("ij,ij->j", V, V)
    return mean, np.maximum(var, 0.0)


def posterior(model, x_star):
    mean, var = posterior_batch(model, np.ravel(x_star)[None, :])
    return float(mean[0]), float(var[0])


# --------------------------------------------------------------------------
# marginal likelihood
# --------------------------------------------------------------------------


def _vdot(a, b):
    return float(np.dot(a.ravel(), b.ravel()))


def _nlml(theta, D, Y, with_grad=True):
    """Summed nlml over the columns of ``Y`` sharing one kernel.

    ``theta = (log lam, log sigma_f, log sigma_w)``; ``D`` holds squared
    pairwise distances.
    """
    lam, sf, sw = np.exp(theta)
    sw = max(sw, SIGMA_W_FLOOR)
    n, p = Y.shape
    E = np.exp(-0.5 * lam**2 * D)
    K = sf**2 * E
    L, rel = _factor(K, sf, sw**2)
    A = scipy.linalg.cho_solve((L, True), Y, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    value = 0.5 * float(np.sum(Y * A)) + 0.5 * p * logdet + 0.5 * n * p * _LOG_2PI
    if not with_grad:
        return value, None
    Kinv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise CholeskyError("inverse of the Gram matrix failed")
    # d nlml / d theta_j = 1/2 tr((p Ky^-1 - A A^T) dKy/dtheta_j); Kinv holds
    # only the lower triangle, dKy is symmetric
    dinv = np.diag(Kinv).copy()

    def half_trace(M):
        tr_inv = 2.0 * _vdot(Kinv, M) - float(dinv @ np.diag(M))
        return 0.5 * (p * tr_inv - float(np.sum(A * (M @ A))))

    KD = K * D
    # tr(W) for the diagonal (noise / jitter) derivatives
    trW = p * float(np.sum(dinv)) - float(np.sum(A * A))
    grad = np.array(
        [
            -(lam**2) * half_trace(KD),
            2.0 * half_trace(K) + rel * sf**2 * trW,
            sw**2 * trW,
        ]
    )
    return value, grad


def nlml(hyper, X, y):
    """Negative log marginal likelihood and its gradient in log-parameters.

    Returns ``(value, grad)`` with ``grad`` ordered as
    ``(log lam, log sigma_f, log sigma_w)``. ``y`` may be a matrix whose
    columns share the kernel; their nlml values are summed.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(y, dtype=float)
    Y = Y.reshape(len(X), -1)
    return _nlml(hyper.log_params, sq_dists(X), Y)


@dataclass(frozen=True)
class FitConfig:
    n_starts: int = 5
    optimize_noise: bool = False
    sigma_w: float = DEFAULT_SIGMA_W
    seed: int = 0
    max_iter: int = 200
    gtol: float = 1e-8
    log_bounds: tuple = LOG_BOUNDS


@dataclass(frozen=True)
class FitResult:
    hyper: Hyperparameters
    nlml: float
    n_failed_starts: int


def median_distance(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if len(X) < 2:
        return 1.0
    med = float(np.median(pdist(X)))
    return med if med > 0 else 1.0


def starting_points(X, Y, config):
    """Deterministic multi-start grid in log-space.

    ``log lam`` spans ``-log(median pairwise distance) + [-2, 2]``;
    ``log sigma_f`` is centred on the target standard deviation with a
    seeded perturbation of up to +-0.5. A fixed ``sigma_w`` starts (and
    stays) at ``config.sigma_w``; a free one starts at a tenth of the target
    standard deviation.
    """
    rng = np.random.default_rng(config.seed)
    base_lam = -math.log(median_distance(X))
    spread = np.linspace(-2.0, 2.0, config.n_starts) if config.n_starts > 1 else np.zeros(1)
    sd = float(np.std(Y))
    lo, hi = config.log_bounds
    base_sf = math.log(sd) if sd > 0 else lo
    # a free noise level cannot leave a tiny start: its log-gradient scales with sigma_w^2
    sw = 0.1 * sd if config.optimize_noise and sd > 0 else config.sigma_w
    base_sw = math.log(max(sw, SIGMA_W_FLOOR))
    starts = []
    for s in spread:
        theta = np.array([base_lam + s, base_sf + rng.uniform(-0.5, 0.5), base_sw])
        theta[:2] = np.clip(theta[:2], lo, hi)
        starts.append(theta)
    return starts


def fit_hyperparameters(X, y, config=None, D=None):
    """Maximize the marginal likelihood by multi-start L-BFGS-B in log-space.

    With ``config.optimize_noise`` off (the default) ``sigma_w`` stays fixed
    at ``config.sigma_w`` and only ``(lam, sigma_f)`` are estimated. ``y``
    may be a matrix; its columns then share one set of hyperparameters.
    """
    config = config or FitConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(y, dtype=float).reshape(len(X), -1)
    D = sq_dists(X) if D is None else D
    free = slice(0, 3) if config.optimize_noise else slice(0, 2)
    lo, hi = config.log_bounds
    bounds = [(lo, hi), (lo, hi), (math.log(SIGMA_W_FLOOR), hi)][free]
    best = {"value": np.inf, "theta": None}
    failed = 0

    for theta0 in starting_points(X, Y, config):
        fixed = theta0.copy()

        def fun(z):
            theta = fixed.copy()
            theta[free] = z
            try:
                value, grad = _nlml(theta, D, Y)
            except CholeskyError:
                return 1e300, np.zeros_like(z)
            if value < best["value"]:
                best["value"], best["theta"] = value, theta.copy()
            return value, grad[free]

        value0 = fun(theta0[free])[0]
        if value0 >= 1e300:
            failed += 1
            continue
        scipy.optimize.minimize(
            fun,
            theta0[free],
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": config.max_iter, "gtol": config.gtol},
        )

    if best["theta"] is None:
        raise FitError("Cholesky failed for every starting point")
    return FitResult(Hyperparameters.from_log(best["theta"]), float(best["value"]), failed)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

MODEL_FORMAT_VERSION = 1


def model_to_dict(model):
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "hyperparameters": model.hyper.to_dict(),
        "X": model.X.tolist(),
        "y": model.y.tolist(),
    }


def model_from_dict(doc):
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported GP model format {doc.get('format_version')!r}")
    return fit_model(doc["X"], doc["y"], Hyperparameters.from_dict(doc["hyperparameters"]))


def with_targets(model, y):
    """Same inputs and factor, new targets (no refactorization)."""
    y = np.ravel(np.asarray(y, dtype=float))
    alpha = scipy.linalg.cho_solve((model.chol, True), y, check_finite=False)
    return replace(model, y=y, alpha=alpha)
