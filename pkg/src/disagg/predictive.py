"""Posterior predictive inference at unobserved domain points.

Given a parameter state, the observed curve and the new points are jointly
Gaussian, so conditioning is exact (Schur complement). The posterior
predictive mixes one conditional Gaussian draw per retained posterior
sample; pointwise means and 2.5%/97.5% quantile bands summarize the draws.

With J > 1 replicates the conditioning target is the replicate-averaged
curve: the average is Gaussian with covariance Z_i / J at every point, so
the conditional mean is unchanged and the conditional covariance is the
single-replicate Schur complement divided by J.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .basis import design_matrix
from .errors import SpecError
from .model import cross_covariance, factor_covariance


@dataclass(frozen=True)
class PredictiveRequest:
    """What to predict: curve index, new grid, and the posterior draws.

    draws may be a single ChainOutput or a sequence of them (pooled).
    include_noise=False predicts the latent aggregate mean curve only, so
    bands reflect parameter uncertainty without measurement error.
    """

    data: object
    basis: object
    draws: object
    curve_index: int
    new_grid: np.ndarray
    include_noise: bool = True


def conditional_predictive(state, data, curve_index, new_grid, basis, cov_spec,
                           include_noise=True):
    """Conditional mean and covariance of the curve at new_grid given one
    observed curve and a fixed parameter state.

    Pass curve_index=None to predict a brand-new curve with no conditioning
    data (requires keyword r_row/c_weights_row in data as a 2-tuple); in
    that case the result is the unconditional N(X* beta, Z*).
    """
    beta_flat = np.asarray(state.beta, dtype=np.float64).reshape(-1)
    new_grid = np.ascontiguousarray(new_grid, dtype=np.float64)
    if curve_index is None:
        r_row, cw_row = data
        mu_star = design_matrix(basis, new_grid, r_row) @ beta_flat
        if not include_noise:
            return mu_star, np.zeros((new_grid.size, new_grid.size))
        Z_star = cross_covariance(cov_spec, state.cov, cw_row, new_grid, new_grid)
        return mu_star, Z_star
    r_row = data.r[curve_index]
    cw_row = data.c_weights[curve_index]
    mu_star = design_matrix(basis, new_grid, r_row) @ beta_flat
    if not include_noise:
        return mu_star, np.zeros((new_grid.size, new_grid.size))
    grid = data.grid
    J = data.n_replicates
    ybar = data.y[curve_index].mean(axis=0)
    mu_obs = design_matrix(basis, grid, r_row) @ beta_flat
    Z = cross_covariance(cov_spec, state.cov, cw_row, grid, grid)
    Z12 = cross_covariance(cov_spec, state.cov, cw_row, grid, new_grid)
    Z_star = cross_covariance(cov_spec, state.cov, cw_row, new_grid, new_grid)
    L, _ = factor_covariance(Z)
    W = sla.solve_triangular(L, Z12, lower=True, check_finite=False)
    v = sla.solve_triangular(L, ybar - mu_obs, lower=True, check_finite=False)
    mean = mu_star + W.T @ v
    cov = (Z_star - W.T @ W) / J
    return mean, 0.5 * (cov + cov.T)


def _sample_gaussian(rng, mean, cov):
    """Draw from N(mean, cov) with eigenvalue clipping, tolerating the
    exactly/nearly singular covariances produced by interpolation."""
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    z = rng.standard_normal(mean.shape[0])
    return mean + evecs @ (np.sqrt(evals) * z)


@dataclass(frozen=True)
class PredictiveSummary:
    """Per-point posterior predictive summary over Q mixed draws."""

    grid: np.ndarray
    samples: np.ndarray
    mean: np.ndarray
    q025: np.ndarray
    q975: np.ndarray


def predictive_draws(request, rng=None):
    """One conditional draw per retained posterior sample, plus summaries.

    Quantiles use linear interpolation on the sorted draws (numpy default,
    type 7). Each posterior sample gets its own spawned RNG stream, so the
    mixture is reproducible and order-independent.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    elif not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    chains = request.draws
    if hasattr(chains, "draws"):
        chains = [chains]
    if not chains or all(ch.n_draws == 0 for ch in chains):
        raise SpecError("predictive_draws needs a nonempty set of posterior draws")
    cov_spec = chains[0].cov_spec
    new_grid = np.ascontiguousarray(request.new_grid, dtype=np.float64)
    states = [ch.state(i) for ch in chains for i in range(ch.n_draws)]
    streams = rng.spawn(len(states))
    samples = np.empty((len(states), new_grid.size))
    for s, (state, stream) in enumerate(zip(states, streams)):
        mean, cov = conditional_predictive(
            state, request.data, request.curve_index, new_grid, request.basis,
            cov_spec, include_noise=request.include_noise)
        if request.include_noise:
            samples[s] = _sample_gaussian(stream, mean, cov)
        else:
            samples[s] = mean
    return PredictiveSummary(
        grid=new_grid, samples=samples, mean=samples.mean(axis=0),
        q025=np.quantile(samples, 0.025, axis=0),
        q975=np.quantile(samples, 0.975, axis=0))
