"""
Full-covariance Gaussian mixture model fitted by expectation-maximization.

The posterior probability of a point under component t is the quantity the
evolutionary search maximizes.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import numpy.typing as npt
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import logsumexp

from embedding_space import as_data_matrix
from exceptions import DimensionMismatchError, FitError, ValidationError
from rng import MAX_SEED, RandomStreams

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
# responsibility mass below which a component counts as collapsed
EMPTY_COMPONENT_MASS = 10 * np.finfo(np.float64).eps


class GmmConfig(BaseModel):
    """EM settings for the style clustering."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_components: int = Field(8, ge=1, description="Mixture components K")
    max_iters: int = Field(200, ge=1, description="EM iterations per restart")
    tol: float = Field(1e-6, gt=0, description="Relative log-likelihood improvement to stop at")
    reg_covar: float = Field(1e-6, ge=0, description="Added to every covariance diagonal")
    seed: int = Field(0, ge=0, le=MAX_SEED)
    n_init: int = Field(3, ge=1, description="Restarts; best log-likelihood wins")


@dataclass(frozen=True, eq=False)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    final_log_likelihood: float = float("nan")
    n_iter: int = 0
    converged: bool = False
    log_likelihood_history: Tuple[float, ...] = ()

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        means = np.array(self.means, dtype=np.float64)
        covariances = np.array(self.covariances, dtype=np.float64)

        if weights.ndim != 1 or weights.size < 1:
            raise ValidationError("weights must be a non-empty vector")
        n_components = weights.size
        if means.ndim != 2 or means.shape[0] != n_components:
            raise DimensionMismatchError("GMM means", f"{n_components} rows", f"shape {means.shape}")
        dim = means.shape[1]
        if covariances.shape != (n_components, dim, dim):
            raise DimensionMismatchError(
                "GMM covariances", (n_components, dim, dim), covariances.shape
            )
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValidationError(f"weights must lie on the simplex (sum = {weights.sum()!r})")
        if not np.allclose(covariances, np.swapaxes(covariances, 1, 2), rtol=0.0, atol=1e-9):
            raise ValidationError("covariances must be symmetric")
        try:
            factors = _cholesky_all(covariances)
        except FitError as err:
            raise ValidationError(f"covariances must be positive definite: {err}") from err

        for name, value in (("weights", weights), ("means", means), ("covariances", covariances)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "log_likelihood_history", tuple(self.log_likelihood_history))
        factors.setflags(write=False)
        object.__setattr__(self, "_cholesky", factors)

    @property
    def n_components(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    @property
    def cholesky_factors(self) -> np.ndarray:
        return self._cholesky


def _cholesky_all(covariances: np.ndarray) -> np.ndarray:
    factors = np.empty_like(covariances)
    for k, cov in enumerate(covariances):
        try:
            factors[k] = scipy.linalg.cholesky(cov, lower=True)
        except np.linalg.LinAlgError as err:
            raise FitError(
                f"covariance of component {k} is not positive definite; increase reg_covar"
            ) from err
    return factors


def _log_gaussian(X: np.ndarray, means: np.ndarray, chols: np.ndarray) -> np.ndarray:
    """N x K matrix of log N(x_i; mean_k, L_k L_k^T)."""
    n_samples, dim = X.shape
    log_prob = np.empty((n_samples, means.shape[0]))
    for k, (mean, chol) in enumerate(zip(means, chols)):
        solved = scipy.linalg.solve_triangular(chol, (X - mean).T, lower=True, check_finite=False)
        log_det = np.sum(np.log(np.diag(chol)))
        log_prob[:, k] = -0.5 * dim * LOG_2PI - log_det - 0.5 * np.sum(solved**2, axis=0)
    return log_prob


def _weighted_log_prob(X: np.ndarray, weights: np.ndarray, means: np.ndarray,
                       chols: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_weights = np.log(weights)
    return _log_gaussian(X, means, chols) + log_weights


def _as_queries(model: GmmModel, x: npt.ArrayLike) -> Tuple[np.ndarray, bool]:
    values = np.asarray(x, dtype=np.float64)
    single = values.ndim == 1
    if values.ndim not in (1, 2) or values.shape[-1] != model.dim:
        raise DimensionMismatchError("GMM input", f"length {model.dim}", f"shape {values.shape}")
    return np.atleast_2d(values), single


def gmm_log_density(model: GmmModel, x: npt.ArrayLike):
    """log sum_k w_k N(x; mu_k, Sigma_k) for a vector, or per row of a matrix."""
    X, single = _as_queries(model, x)
    wlp = _weighted_log_prob(X, model.weights, model.means, model.cholesky_factors)
    density = logsumexp(wlp, axis=1)
    return float(density[0]) if single else density


def gmm_responsibilities(model: GmmModel, X: npt.ArrayLike) -> np.ndarray:
    """E-step: N x K posterior component probabilities, computed in log space."""
    queries, _ = _as_queries(model, X)
    wlp = _weighted_log_prob(queries, model.weights, model.means, model.cholesky_factors)
    return np.exp(wlp - logsumexp(wlp, axis=1, keepdims=True))


def gmm_posterior(model: GmmModel, x: npt.ArrayLike) -> np.ndarray:
    """Posterior over components for a vector (length K) or a matrix (N x K)."""
    resp = gmm_responsibilities(model, x)
    return resp[0] if np.asarray(x).ndim == 1 else resp


def gmm_posterior_t(model: GmmModel, x: npt.ArrayLike, t: int) -> float:
    if not 0 <= t < model.n_components:
        raise ValidationError(f"component index {t} out of range [0, {model.n_components})")
    return float(gmm_posterior(model, x)[t])


def _sample_covariance(X: np.ndarray) -> np.ndarray:
    centered = X - X.mean(axis=0)
    return centered.T @ centered / X.shape[0]


def _m_step(X: np.ndarray, resp: np.ndarray, reg_covar: float,
            fallback_cov: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_samples, dim = X.shape
    n_components = resp.shape[1]
    mass = resp.sum(axis=0)

    empty = np.flatnonzero(mass < EMPTY_COMPONENT_MASS)
    if empty.size:
        # reseed each collapsed component at the worst-explained point
        max_resp = resp.max(axis=1).copy()
        for k in empty:
            i = int(np.argmin(max_resp))
            logger.warning(f"GMM component {k} collapsed; reinitialized at sample {i}")
            resp[:, k] = 0.0
            resp[i, :] = 0.0
            resp[i, k] = 1.0
            max_resp[i] = np.inf
        mass = resp.sum(axis=0)

    weights = mass / n_samples
    means = (resp.T @ X) / mass[:, None]
    covariances = np.empty((n_components, dim, dim))
    for k in range(n_components):
        diff = X - means[k]
        cov = (resp[:, k, None] * diff).T @ diff / mass[k]
        cov = 0.5 * (cov + cov.T)
        if k in empty:
            cov = fallback_cov.copy()
        covariances[k] = cov + reg_covar * np.eye(dim)
    weights = weights / weights.sum()
    return weights, means, covariances


def _run_em(X: np.ndarray, cfg: GmmConfig, rng: np.random.Generator,
            global_cov: np.ndarray) -> GmmModel:
    n_samples, dim = X.shape
    k = cfg.n_components

    start = rng.choice(n_samples, size=k, replace=False)
    means = X[np.sort(start)].copy()
    covariances = np.repeat((global_cov + cfg.reg_covar * np.eye(dim))[None], k, axis=0)
    weights = np.full(k, 1.0 / k)

    chols = _cholesky_all(covariances)
    wlp = _weighted_log_prob(X, weights, means, chols)
    log_norm = logsumexp(wlp, axis=1)
    history = [float(log_norm.mean())]
    converged = False

    for _ in range(cfg.max_iters):
        resp = np.exp(wlp - log_norm[:, None])
        weights, means, covariances = _m_step(X, resp, cfg.reg_covar, global_cov)
        chols = _cholesky_all(covariances)
        wlp = _weighted_log_prob(X, weights, means, chols)
        log_norm = logsumexp(wlp, axis=1)
        history.append(float(log_norm.mean()))
        logger.debug(f"EM iteration {len(history) - 1}: mean log-likelihood {history[-1]:.10f}")
        if history[-1] - history[-2] < cfg.tol * abs(history[-2]):
            converged = True
            break

    return GmmModel(
        weights=weights,
        means=means,
        covariances=covariances,
        final_log_likelihood=history[-1],
        n_iter=len(history) - 1,
        converged=converged,
        log_likelihood_history=tuple(history),
    )


def gmm_fit(data: npt.ArrayLike, cfg: GmmConfig) -> GmmModel:
    """
    Fit a K-component full-covariance GMM with ``cfg.n_init`` seeded restarts.

    Log-likelihoods are tracked as the mean per-sample value; the restart with
    the highest final value is returned (earliest restart wins ties).
    """
    X = as_data_matrix(data, min_rows=2)
    if X.shape[0] < cfg.n_components:
        raise ValidationError(
            f"need at least K={cfg.n_components} samples, got {X.shape[0]}"
        )

    rng = RandomStreams(cfg.seed).stream("gmm-init")
    global_cov = _sample_covariance(X)

    best = None
    for restart in range(cfg.n_init):
        model = _run_em(X, cfg, rng, global_cov)
        if not model.converged:
            logger.warning(
                f"GMM restart {restart} stopped at max_iters={cfg.max_iters} without converging"
            )
        logger.info(
            f"GMM restart {restart}: log-likelihood {model.final_log_likelihood:.6f} "
            f"after {model.n_iter} iteration(s)"
        )
        if best is None or model.final_log_likelihood > best.final_log_likelihood:
            best = model
    return best
