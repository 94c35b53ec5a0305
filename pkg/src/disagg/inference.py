"""Likelihood, priors, and the Gibbs / Metropolis-Hastings sampler.

The mean coefficients beta have a normal full conditional (conjugacy) and
are drawn in one Gibbs block. Covariance parameters have no closed-form
conditionals and are updated one scalar at a time by Metropolis-Hastings:
log-normal random-walk proposals (with the proposal-asymmetry Jacobian in
the acceptance ratio) for the positive parameters sigma^2 and phi, and
Gaussian random-walk proposals for the sign-indeterminate eta coefficients
theta.

The per-iteration cost is kept flat in the number of replicates by the
sufficient-statistic identity

    sum_j (y_ij - mu_i)(y_ij - mu_i)' = S0c_i + J (ybar_i - mu_i)(ybar_i - mu_i)',

where S0c_i is the fixed replicate-centered scatter: a proposal evaluation
needs one factorization per curve plus rank(S0c_i) + 1 triangular solves.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import _kernels
from .basis import basis_matrix, design_matrix
from .errors import NumericalError, SpecError
from .model import (HETEROGENEOUS, HOMOGENEOUS, UNIFORM, CovarianceParams,
                    ParameterState, phi_vector, validate_dataset)

LOG_2PI = _kernels.LOG_2PI

PROPOSAL_SD_BOUNDS = (1e-3, 10.0)
ADAPT_TARGET = 0.35


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters; shapes depend on the covariance kind.

    beta_c ~ N(beta_mean_c, diag(beta_var_c)); sigma2 ~ InvGamma(shape, rate)
    (scalar for the uniformly homogeneous kind, per category otherwise);
    phi ~ Gamma(shape, rate); theta_c ~ N(theta_mean_c, diag(theta_var_c)).
    """

    beta_mean: np.ndarray
    beta_var: np.ndarray
    sigma2_shape: object = None
    sigma2_rate: object = None
    phi_shape: object = None
    phi_rate: object = None
    theta_mean: np.ndarray = None
    theta_var: np.ndarray = None


def practical_range_phi_prior(dist, target_corr=0.05):
    """Prior mean for the decay parameter phi from a practical range.

    Solves target_corr = exp(-phi * dist) for phi, i.e. the prior guess is
    the decay rate at which correlation has dropped to target_corr at
    distance dist.
    """
    if dist <= 0:
        raise SpecError(f"dist must be positive, got {dist}")
    if not 0.0 < target_corr < 1.0:
        raise SpecError(f"target_corr must lie in (0, 1), got {target_corr}")
    return -math.log(target_corr) / dist


def default_prior(cov_spec, mean_basis, grid, beta_var=100.0,
                  sigma2_shape=2.0, sigma2_rate=0.2, theta_var=100.0):
    """Weakly informative defaults.

    beta ~ N(0, beta_var I); sigma2 ~ InvGamma(2, 0.2); phi prior mean from
    the practical range over half the grid span, with Gamma shape 2; theta
    ~ N(0, theta_var I).
    """
    C = cov_spec.num_categories
    K = mean_basis.dimension
    grid = np.asarray(grid, dtype=np.float64)
    half_span = (grid.max() - grid.min()) / 2.0 if grid.size > 1 else 1.0
    phi_mean = practical_range_phi_prior(half_span)
    phi_shape = 2.0
    phi_rate = phi_shape / phi_mean
    kw = dict(beta_mean=np.zeros((C, K)), beta_var=np.full((C, K), beta_var))
    if cov_spec.kind == UNIFORM:
        kw.update(sigma2_shape=float(sigma2_shape), sigma2_rate=float(sigma2_rate),
                  phi_shape=float(phi_shape), phi_rate=float(phi_rate))
    elif cov_spec.kind == HOMOGENEOUS:
        kw.update(sigma2_shape=np.full(C, sigma2_shape),
                  sigma2_rate=np.full(C, sigma2_rate),
                  phi_shape=np.full(C, phi_shape), phi_rate=np.full(C, phi_rate))
    else:
        L = cov_spec.eta_basis.dimension
        kw.update(phi_shape=np.full(C, phi_shape), phi_rate=np.full(C, phi_rate),
                  theta_mean=np.zeros((C, L)), theta_var=np.full((C, L), theta_var))
    return PriorSpec(**kw)


def _invgamma_logpdf(x, shape, rate):
    if x <= 0:
        return -np.inf
    return (shape * math.log(rate) - math.lgamma(shape)
            - (shape + 1.0) * math.log(x) - rate / x)


def _gamma_logpdf(x, shape, rate):
    if x <= 0:
        return -np.inf
    return (shape * math.log(rate) - math.lgamma(shape)
            + (shape - 1.0) * math.log(x) - rate * x)


def _normal_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + math.log(var) + (x - mean) ** 2 / var)


def log_prior(state, cov_spec, prior):
    """Joint log prior density at a parameter state."""
    total = float(np.sum(-0.5 * (LOG_2PI + np.log(prior.beta_var)
                                 + (state.beta - prior.beta_mean) ** 2
                                 / prior.beta_var)))
    cov = state.cov
    if cov_spec.kind == UNIFORM:
        total += _invgamma_logpdf(cov.sigma2, prior.sigma2_shape, prior.sigma2_rate)
        total += _gamma_logpdf(cov.phi, prior.phi_shape, prior.phi_rate)
    elif cov_spec.kind == HOMOGENEOUS:
        for c in range(cov_spec.num_categories):
            total += _invgamma_logpdf(cov.sigma2[c], prior.sigma2_shape[c],
                                      prior.sigma2_rate[c])
            total += _gamma_logpdf(cov.phi[c], prior.phi_shape[c], prior.phi_rate[c])
    else:
        total += float(np.sum(-0.5 * (LOG_2PI + np.log(prior.theta_var)
                                      + (cov.theta - prior.theta_mean) ** 2
                                      / prior.theta_var)))
        for c in range(cov_spec.num_categories):
            total += _gamma_logpdf(cov.phi[c], prior.phi_shape[c], prior.phi_rate[c])
    return total


# ---------------------------------------------------------------------------
# likelihood (reference path)
# ---------------------------------------------------------------------------

def log_likelihood(state, data, basis, cov_spec):
    """Gaussian log-likelihood, factorizing each curve's covariance once
    and reusing it across replicates."""
    from .model import covariance_matrix, factor_covariance

    I, J, T = data.y.shape
    beta_flat = np.asarray(state.beta, dtype=np.float64).reshape(-1)
    total = 0.0
    for i in range(I):
        Z = covariance_matrix(cov_spec, state.cov, data.c_weights[i], data.grid)
        try:
            L, logdet = factor_covariance(Z)
        except NumericalError as exc:
            raise NumericalError("covariance factorization failed",
                                 curve_index=i) from exc
        mu = design_matrix(basis, data.grid, data.r[i]) @ beta_flat
        subtotal = 0.0
        for j in range(J):
            w = sla.solve_triangular(L, data.y[i, j] - mu, lower=True,
                                     check_finite=False)
            subtotal += -0.5 * (T * LOG_2PI + logdet + float(np.dot(w, w)))
        total += subtotal
    return total


# ---------------------------------------------------------------------------
# conjugate beta block
# ---------------------------------------------------------------------------

def _beta_precision_terms(data, basis, cov_spec, cov_params):
    """(M, h) with M = sum_ij X' Z^{-1} X and h = sum_ij X' Z^{-1} y_ij."""
    from .model import covariance_matrix, factor_covariance

    I, J, T = data.y.shape
    C, K = data.r.shape[1], basis.dimension
    P = C * K
    M = np.zeros((P, P))
    h = np.zeros(P)
    ybar = data.replicate_mean()
    for i in range(I):
        Z = covariance_matrix(cov_spec, cov_params, data.c_weights[i], data.grid)
        try:
            L, _ = factor_covariance(Z)
        except NumericalError as exc:
            raise NumericalError("covariance factorization failed",
                                 curve_index=i) from exc
        X = design_matrix(basis, data.grid, data.r[i])
        A = sla.solve_triangular(L, X, lower=True, check_finite=False)
        u = sla.solve_triangular(L, ybar[i], lower=True, check_finite=False)
        M += J * (A.T @ A)
        h += J * (A.T @ u)
    return M, h


def beta_full_conditional(data, basis, cov_spec, cov_params, prior):
    """Mean and covariance of the normal full conditional of the stacked
    coefficient vector beta (category-major, length C*K)."""
    prior_prec = 1.0 / np.asarray(prior.beta_var, dtype=np.float64).reshape(-1)
    prior_mean = np.asarray(prior.beta_mean, dtype=np.float64).reshape(-1)
    if data.n_curves > 0:
        M, h = _beta_precision_terms(data, basis, cov_spec, cov_params)
    else:
        P = prior_mean.size
        M, h = np.zeros((P, P)), np.zeros(P)
    precision = M + np.diag(prior_prec)
    rhs = h + prior_prec * prior_mean
    Lp = np.linalg.cholesky(precision)
    mean = sla.cho_solve((Lp, True), rhs, check_finite=False)
    cov = sla.cho_solve((Lp, True), np.eye(precision.shape[0]), check_finite=False)
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def _draw_beta(rng, precision_chol, mean):
    """One draw from N(mean, P^{-1}) given the Cholesky factor of P."""
    z = rng.standard_normal(mean.shape[0])
    return mean + sla.solve_triangular(precision_chol.T, z, lower=False,
                                       check_finite=False)


def gibbs_update_beta(rng, state, data, basis, cov_spec, prior):
    """Draw beta from its full conditional; covariance params untouched."""
    prior_prec = 1.0 / np.asarray(prior.beta_var, dtype=np.float64).reshape(-1)
    prior_mean = np.asarray(prior.beta_mean, dtype=np.float64).reshape(-1)
    if data.n_curves > 0:
        M, h = _beta_precision_terms(data, basis, cov_spec, state.cov)
    else:
        P = prior_mean.size
        M, h = np.zeros((P, P)), np.zeros(P)
    precision = M + np.diag(prior_prec)
    rhs = h + prior_prec * prior_mean
    Lp = np.linalg.cholesky(precision)
    mean = sla.cho_solve((Lp, True), rhs, check_finite=False)
    beta = _draw_beta(rng, Lp, mean)
    C = data.r.shape[1] if data.n_curves > 0 else prior.beta_mean.shape[0]
    return ParameterState(beta=beta.reshape(C, -1), cov=state.cov)


# ---------------------------------------------------------------------------
# Metropolis-Hastings scalar updates
# ---------------------------------------------------------------------------

def _mh_lognormal_step(rng, current, log_target, proposal_sd,
                       current_log_target=None):
    """One log-normal random-walk step on a positive scalar.

    The acceptance ratio includes the proposal Jacobian x'/x. Returns
    (value, accepted, log_target_at_value).
    """
    if current_log_target is None:
        current_log_target = log_target(current)
    z = rng.standard_normal()
    log_proposal = math.log(current) + proposal_sd * z
    if abs(log_proposal) > 700.0:  # exp would over/underflow
        return current, False, current_log_target
    proposal = math.exp(log_proposal)
    lt_prop = log_target(proposal)
    if math.isnan(lt_prop):
        return current, False, current_log_target
    log_alpha = (lt_prop + log_proposal) - (current_log_target + math.log(current))
    if math.log(1.0 - rng.uniform()) < log_alpha:
        return proposal, True, lt_prop
    return current, False, current_log_target


def mh_update_positive_scalar(rng, current, log_target, proposal_sd):
    """Log-normal random-walk Metropolis update of a positive scalar.

    Proposes x' = exp(log x + N(0, proposal_sd^2)) and accepts with
    probability min{1, target(x') x' / (target(x) x)}; a NaN target value
    rejects the proposal. Returns (new_value, accepted).
    """
    if current <= 0:
        raise SpecError(f"current value must be positive, got {current}")
    value, accepted, _ = _mh_lognormal_step(rng, current, log_target, proposal_sd)
    return value, accepted


def _mh_gaussian_step(rng, current, log_target, proposal_sd,
                      current_log_target=None):
    """Symmetric Gaussian random-walk step on an unconstrained scalar."""
    if current_log_target is None:
        current_log_target = log_target(current)
    proposal = current + proposal_sd * rng.standard_normal()
    lt_prop = log_target(proposal)
    if math.isnan(lt_prop):
        return current, False, current_log_target
    if math.log(1.0 - rng.uniform()) < lt_prop - current_log_target:
        return proposal, True, lt_prop
    return current, False, current_log_target


# ---------------------------------------------------------------------------
# sampler workspace
# ---------------------------------------------------------------------------

class _Workspace:
    """Precomputed design quantities and reusable factorization buffers for
    one dataset / basis / covariance-spec combination."""

    def __init__(self, data, basis, cov_spec):
        self.data = data
        self.basis = basis
        self.cov_spec = cov_spec
        self.grid = np.ascontiguousarray(data.grid, dtype=np.float64)
        self.I, self.J, self.T = data.y.shape
        self.C = cov_spec.num_categories
        self.K = basis.dimension
        if self.I > 0:
            self.B = basis_matrix(basis, self.grid)
            self.X = np.ascontiguousarray(
                np.stack([design_matrix(basis, self.grid, data.r[i])
                          for i in range(self.I)]))
            self.ybar = np.ascontiguousarray(data.replicate_mean())
            self.cw = np.ascontiguousarray(data.c_weights, dtype=np.float64)
            self._build_scatter_factors()
            T, I = self.T, self.I
            self.L_cur = np.zeros((I, T, T))
            self.L_prop = np.zeros((I, T, T))
            self.logdet_cur = np.zeros(I)
            self.logdet_prop = np.zeros(I)
            self.trs_cur = np.zeros(I)
            self.trs_prop = np.zeros(I)
            self.eta_cur = np.zeros((self.C, T))
            self.eta_prop = np.zeros((self.C, T))
            self.corr_cur = np.zeros((self.C, T, T))
            self.corr_prop = np.zeros((self.C, T, T))
            self.resid = np.zeros((I, T))
        if cov_spec.kind == HETEROGENEOUS:
            self.eta_knots = cov_spec.eta_basis.knots
            self.eta_degree = cov_spec.eta_basis.degree

    def _build_scatter_factors(self):
        """Eigen-factor the replicate-centered scatter S0c_i = R_i R_i' so
        traces tr(Z^{-1} S0c) cost rank(S0c) triangular solves."""
        I, J, T = self.I, self.J, self.T
        ranks = np.zeros(I, dtype=np.int64)
        factors = []
        for i in range(I):
            D = self.data.y[i] - self.ybar[i]
            S0c = D.T @ D
            if J == 1:
                factors.append(np.zeros((T, 0)))
                continue
            evals, evecs = np.linalg.eigh(S0c)
            keep = evals > max(1e-12 * max(evals.max(), 0.0), 0.0)
            R = evecs[:, keep] * np.sqrt(evals[keep])
            ranks[i] = R.shape[1]
            factors.append(R)
        rmax = max(1, int(ranks.max()) if I else 1)
        self.sfac = np.zeros((I, T, rmax))
        for i, R in enumerate(factors):
            self.sfac[i, :, :R.shape[1]] = R
        self.ranks = ranks

    # -- state-dependent quantities -------------------------------------

    def eta_row(self, cov, c):
        if self.cov_spec.kind == UNIFORM:
            return np.full(self.T, math.sqrt(cov.sigma2))
        if self.cov_spec.kind == HOMOGENEOUS:
            return np.full(self.T, math.sqrt(cov.sigma2[c]))
        return _kernels.curve_eval(self.eta_knots, self.eta_degree,
                                   np.ascontiguousarray(cov.theta[c]), self.grid)

    def set_state(self, state):
        """Install a parameter state: rebuild eta/correlation stacks,
        residuals, factors, and the current log-likelihood."""
        self.beta_flat = np.asarray(state.beta, dtype=np.float64).reshape(-1)
        self.cov = state.cov
        if self.I == 0:
            self.loglik = 0.0
            return
        phis = phi_vector(self.cov_spec, state.cov)
        for c in range(self.C):
            self.eta_cur[c] = self.eta_row(state.cov, c)
            self.corr_cur[c] = _kernels.corr_matrix(phis[c], self.grid, self.grid)
        self._refresh_resid()
        ll, fail = _kernels.cov_loglik(
            self.eta_cur, self.corr_cur, self.cw, self.sfac, self.ranks,
            self.resid, float(self.J), _kernels.JITTER_LADDER,
            self.L_cur, self.logdet_cur, self.trs_cur)
        if fail >= 0:
            raise NumericalError("covariance factorization failed",
                                 curve_index=int(fail))
        self.loglik = ll

    def _refresh_resid(self):
        for i in range(self.I):
            self.resid[i] = self.ybar[i] - self.X[i] @ self.beta_flat

    def update_beta(self, rng, prior):
        """Gibbs draw of beta using the cached covariance factors."""
        prior_prec = 1.0 / np.asarray(prior.beta_var, dtype=np.float64).reshape(-1)
        prior_mean = np.asarray(prior.beta_mean, dtype=np.float64).reshape(-1)
        if self.I > 0:
            M, h = _kernels.beta_suffstats(self.L_cur, self.X, self.ybar,
                                           float(self.J))
            precision = M + np.diag(prior_prec)
            rhs = h + prior_prec * prior_mean
            Lp = np.linalg.cholesky(precision)
            mean = sla.cho_solve((Lp, True), rhs, check_finite=False)
            beta = _draw_beta(rng, Lp, mean)
            self.beta_flat = beta
            self._refresh_resid()
            self.loglik = _kernels.loglik_from_factors(
                self.L_cur, self.logdet_cur, self.trs_cur, self.resid,
                float(self.J))
        else:
            z = rng.standard_normal(prior_mean.shape[0])
            self.beta_flat = prior_mean + np.sqrt(1.0 / prior_prec) * z
            self.loglik = 0.0

    def proposal_loglik(self, changed_eta_rows=(), changed_phi=None):
        """Log-likelihood with eta/corr proposal buffers installed for the
        given changed rows; other rows copied from the current state."""
        self.eta_prop[:] = self.eta_cur
        self.corr_prop[:] = self.corr_cur
        for c, row in changed_eta_rows:
            self.eta_prop[c] = row
        if changed_phi is not None:
            for c, phi in changed_phi:
                self.corr_prop[c] = _kernels.corr_matrix(phi, self.grid, self.grid)
        ll, fail = _kernels.cov_loglik(
            self.eta_prop, self.corr_prop, self.cw, self.sfac, self.ranks,
            self.resid, float(self.J), _kernels.JITTER_LADDER,
            self.L_prop, self.logdet_prop, self.trs_prop)
        if fail >= 0:
            return np.nan
        return ll

    def accept_proposal(self):
        """Swap the proposal buffers in as the current state."""
        self.eta_cur, self.eta_prop = self.eta_prop, self.eta_cur
        self.corr_cur, self.corr_prop = self.corr_prop, self.corr_cur
        self.L_cur, self.L_prop = self.L_prop, self.L_cur
        self.logdet_cur, self.logdet_prop = self.logdet_prop, self.logdet_cur
        self.trs_cur, self.trs_prop = self.trs_prop, self.trs_cur

    def current_state(self):
        C = self.C
        return ParameterState(beta=self.beta_flat.reshape(C, self.K).copy(),
                              cov=self.cov)


# ---------------------------------------------------------------------------
# covariance-parameter sweep
# ---------------------------------------------------------------------------

def cov_scalar_names(cov_spec):
    """Names of the Metropolis-updated covariance scalars, in update order."""
    C = cov_spec.num_categories
    if cov_spec.kind == UNIFORM:
        return ["sigma2", "phi"]
    if cov_spec.kind == HOMOGENEOUS:
        return ([f"sigma2_{c + 1}" for c in range(C)]
                + [f"phi_{c + 1}" for c in range(C)])
    L = cov_spec.eta_basis.dimension
    return ([f"theta_{c + 1}_{l + 1}" for c in range(C) for l in range(L)]
            + [f"phi_{c + 1}" for c in range(C)])


def param_names(cov_spec, K):
    """Column names of a flattened draw: beta_c_k then covariance scalars."""
    C = cov_spec.num_categories
    return ([f"beta_{c + 1}_{k + 1}" for c in range(C) for k in range(K)]
            + cov_scalar_names(cov_spec))


def state_to_vector(state, cov_spec):
    """Flatten a ParameterState in param_names order."""
    parts = [np.asarray(state.beta, dtype=np.float64).reshape(-1)]
    cov = state.cov
    if cov_spec.kind == UNIFORM:
        parts.append(np.asarray([cov.sigma2, cov.phi], dtype=np.float64))
    elif cov_spec.kind == HOMOGENEOUS:
        parts.append(np.asarray(cov.sigma2, dtype=np.float64))
        parts.append(np.asarray(cov.phi, dtype=np.float64))
    else:
        parts.append(np.asarray(cov.theta, dtype=np.float64).reshape(-1))
        parts.append(np.asarray(cov.phi, dtype=np.float64))
    return np.concatenate(parts)


def vector_to_state(vec, cov_spec, K):
    """Inverse of state_to_vector."""
    C = cov_spec.num_categories
    vec = np.asarray(vec, dtype=np.float64)
    beta = vec[:C * K].reshape(C, K).copy()
    rest = vec[C * K:]
    if cov_spec.kind == UNIFORM:
        cov = CovarianceParams(sigma2=float(rest[0]), phi=float(rest[1]))
    elif cov_spec.kind == HOMOGENEOUS:
        cov = CovarianceParams(sigma2=rest[:C].copy(), phi=rest[C:2 * C].copy())
    else:
        L = cov_spec.eta_basis.dimension
        cov = CovarianceParams(theta=rest[:C * L].reshape(C, L).copy(),
                               phi=rest[C * L:C * L + C].copy())
    return ParameterState(beta=beta, cov=cov)


class _CovSweep:
    """One-scalar-at-a-time Metropolis sweep over the covariance parameters,
    with optional Robbins-Monro proposal-scale adaptation."""

    def __init__(self, ws, prior, config):
        self.ws = ws
        self.prior = prior
        self.names = cov_scalar_names(ws.cov_spec)
        sds = {}
        overrides = config.proposal_sd_overrides or {}
        for name in self.names:
            sds[name] = float(overrides.get(name, config.proposal_sd))
        self.sds = sds
        self.counts = {name: 0 for name in self.names}
        self.accepts = {name: 0 for name in self.names}
        self.adapt_counts = {name: 0 for name in self.names}

    def _adapt(self, name, alpha):
        self.adapt_counts[name] += 1
        step = self.adapt_counts[name] ** -0.6
        lo, hi = PROPOSAL_SD_BOUNDS
        new_sd = self.sds[name] * math.exp(step * (alpha - ADAPT_TARGET))
        self.sds[name] = min(max(new_sd, lo), hi)

    def _record(self, name, accepted, tally):
        if tally:
            self.counts[name] += 1
            if accepted:
                self.accepts[name] += 1

    def _mh_scalar(self, rng, name, current, prior_logpdf, make_changes,
                   positive, adapting, tally):
        """Shared scalar M-H machinery over the likelihood workspace."""
        ws = self.ws
        sd = self.sds[name]
        z = rng.standard_normal()
        if positive:
            log_proposal = math.log(current) + sd * z
            if abs(log_proposal) > 700.0:
                if adapting:
                    self._adapt(name, 0.0)
                self._record(name, False, tally)
                return current
            proposal = math.exp(log_proposal)
        else:
            proposal = current + sd * z
        lp_prop = prior_logpdf(proposal)
        if ws.I > 0:
            ll_prop = ws.proposal_loglik(*make_changes(proposal))
        else:
            ll_prop = 0.0
        if math.isnan(ll_prop) or lp_prop == -np.inf:
            log_alpha = -np.inf
        else:
            log_alpha = (ll_prop + lp_prop) - (ws.loglik + prior_logpdf(current))
            if positive:
                log_alpha += math.log(proposal) - math.log(current)
        alpha = 0.0 if log_alpha == -np.inf else min(1.0, math.exp(min(log_alpha, 0.0)))
        accepted = log_alpha > -np.inf and math.log(1.0 - rng.uniform()) < log_alpha
        if accepted and ws.I > 0:
            ws.accept_proposal()
            ws.loglik = ll_prop
        if adapting:
            self._adapt(name, alpha)
        self._record(name, accepted, tally)
        return proposal if accepted else current

    def sweep(self, rng, adapting, tally):
        """Update every covariance scalar once, in fixed order."""
        ws = self.ws
        prior = self.prior
        cov = ws.cov
        kind = ws.cov_spec.kind
        C = ws.cov_spec.num_categories
        if kind == UNIFORM:
            sqrt_all = lambda x: [(c, np.full(ws.T, math.sqrt(x))) for c in range(C)]
            new_s2 = self._mh_scalar(
                rng, "sigma2", cov.sigma2,
                lambda x: _invgamma_logpdf(x, prior.sigma2_shape, prior.sigma2_rate),
                lambda x: (sqrt_all(x), None), True, adapting, tally)
            cov = CovarianceParams(sigma2=new_s2, phi=cov.phi)
            ws.cov = cov
            new_phi = self._mh_scalar(
                rng, "phi", cov.phi,
                lambda x: _gamma_logpdf(x, prior.phi_shape, prior.phi_rate),
                lambda x: ((), [(c, x) for c in range(C)]), True, adapting, tally)
            cov = CovarianceParams(sigma2=cov.sigma2, phi=new_phi)
        elif kind == HOMOGENEOUS:
            sigma2 = np.array(cov.sigma2, dtype=np.float64)
            phi = np.array(cov.phi, dtype=np.float64)
            for c in range(C):
                sigma2[c] = self._mh_scalar(
                    rng, f"sigma2_{c + 1}", sigma2[c],
                    lambda x, c=c: _invgamma_logpdf(x, prior.sigma2_shape[c],
                                                    prior.sigma2_rate[c]),
                    lambda x, c=c: ([(c, np.full(ws.T, math.sqrt(x)))], None),
                    True, adapting, tally)
                ws.cov = CovarianceParams(sigma2=sigma2.copy(), phi=phi.copy())
            for c in range(C):
                phi[c] = self._mh_scalar(
                    rng, f"phi_{c + 1}", phi[c],
                    lambda x, c=c: _gamma_logpdf(x, prior.phi_shape[c],
                                                 prior.phi_rate[c]),
                    lambda x, c=c: ((), [(c, x)]), True, adapting, tally)
                ws.cov = CovarianceParams(sigma2=sigma2.copy(), phi=phi.copy())
            cov = ws.cov
        else:
            theta = np.array(cov.theta, dtype=np.float64)
            phi = np.array(cov.phi, dtype=np.float64)
            L = theta.shape[1]
            for c in range(C):
                for l in range(L):
                    def changes(x, c=c, l=l):
                        row = theta[c].copy()
                        row[l] = x
                        eta = _kernels.curve_eval(ws.eta_knots, ws.eta_degree,
                                                  row, ws.grid)
                        return ([(c, eta)], None)
                    theta[c, l] = self._mh_scalar(
                        rng, f"theta_{c + 1}_{l + 1}", theta[c, l],
                        lambda x, c=c, l=l: _normal_logpdf(
                            x, prior.theta_mean[c, l], prior.theta_var[c, l]),
                        changes, False, adapting, tally)
                    ws.cov = CovarianceParams(theta=theta.copy(), phi=phi.copy())
            for c in range(C):
                phi[c] = self._mh_scalar(
                    rng, f"phi_{c + 1}", phi[c],
                    lambda x, c=c: _gamma_logpdf(x, prior.phi_shape[c],
                                                 prior.phi_rate[c]),
                    lambda x, c=c: ((), [(c, x)]), True, adapting, tally)
                ws.cov = CovarianceParams(theta=theta.copy(), phi=phi.copy())
            cov = ws.cov
        ws.cov = cov

    def acceptance_rates(self):
        return {name: (self.accepts[name] / self.counts[name]
                       if self.counts[name] else 0.0)
                for name in self.names}


def update_covariance_params(rng, state, data, basis, cov_spec, prior,
                             config=None):
    """One Metropolis sweep over all covariance scalars.

    Returns (new_state, accepted) where accepted maps each scalar name to
    whether its proposal was accepted in this sweep.
    """
    if config is None:
        config = McmcConfig(n_iter=10, burn_in=0, thin=1)
    ws = _Workspace(data, basis, cov_spec)
    ws.set_state(state)
    sweep = _CovSweep(ws, prior, config)
    sweep.sweep(rng, adapting=False, tally=True)
    accepted = {name: sweep.accepts[name] > 0 for name in sweep.names}
    return ws.current_state(), accepted


# ---------------------------------------------------------------------------
# chain driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class McmcConfig:
    """Sampler settings. Retained draws = (n_iter - burn_in) / thin."""

    n_iter: int = 20000
    burn_in: int = 2000
    thin: int = 18
    proposal_sd: float = 0.5
    seed: int = 0
    n_chains: int = 2
    adapt: bool = True
    proposal_sd_overrides: dict = None

    def __post_init__(self):
        if self.n_iter <= 0:
            raise SpecError("n_iter must be positive")
        if not 0 <= self.burn_in < self.n_iter:
            raise SpecError("burn_in must satisfy 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise SpecError("thin must be >= 1")
        if (self.n_iter - self.burn_in) / self.thin < 10:
            raise SpecError("config keeps fewer than 10 draws; increase n_iter "
                            "or reduce burn_in/thin")
        if self.proposal_sd <= 0:
            raise SpecError("proposal_sd must be positive")
        if self.n_chains < 1:
            raise SpecError("n_chains must be >= 1")


@dataclass(frozen=True)
class ChainOutput:
    """Retained draws of one chain plus acceptance bookkeeping."""

    names: tuple
    draws: np.ndarray
    log_posterior: np.ndarray
    acceptance_rates: dict
    proposal_sds: dict
    seed: int
    chain_index: int
    config: McmcConfig
    cov_spec: object = field(repr=False, default=None)
    mean_dim: int = 0

    @property
    def n_draws(self):
        return self.draws.shape[0]

    def state(self, idx):
        """Reconstruct the idx-th retained draw as a ParameterState."""
        return vector_to_state(self.draws[idx], self.cov_spec, self.mean_dim)

    @property
    def states(self):
        return [self.state(i) for i in range(self.n_draws)]

    def column(self, name):
        return self.draws[:, self.names.index(name)]


def _initial_state(data, basis, cov_spec, prior, chain_index):
    """GLS-based starting point; odd chains over-dispersed (x5 / /5)."""
    C = cov_spec.num_categories
    K = basis.dimension
    I = data.n_curves
    if I > 0:
        J = data.n_replicates
        P = C * K
        M = np.zeros((P, P))
        h = np.zeros(P)
        ybar = data.replicate_mean()
        for i in range(I):
            X = design_matrix(basis, data.grid, data.r[i])
            M += J * (X.T @ X)
            h += J * (X.T @ ybar[i])
        M += np.eye(P) * (1e-10 * np.trace(M) / P + 1e-12)
        beta = np.linalg.solve(M, h).reshape(C, K)
        resid_sq = 0.0
        for i in range(I):
            mu = design_matrix(basis, data.grid, data.r[i]) @ beta.reshape(-1)
            resid_sq += float(np.sum((data.y[i] - mu) ** 2))
        total_var = resid_sq / data.y.size
        scale0 = max(total_var / max(float(np.mean(data.c_weights.sum(axis=1))),
                                     1e-12), 1e-8)
    else:
        beta = np.array(prior.beta_mean, dtype=np.float64, copy=True)
        scale0 = None
    disperse = 5.0 if chain_index % 2 == 1 else 1.0

    def phi_prior_mean(c=None):
        shape = prior.phi_shape if c is None else prior.phi_shape[c]
        rate = prior.phi_rate if c is None else prior.phi_rate[c]
        return float(shape) / float(rate)

    if cov_spec.kind == UNIFORM:
        if scale0 is None:
            d, l = float(prior.sigma2_shape), float(prior.sigma2_rate)
            scale0 = l / (d - 1.0) if d > 1.0 else l / d
        cov = CovarianceParams(sigma2=scale0 * disperse,
                               phi=phi_prior_mean() / disperse)
    elif cov_spec.kind == HOMOGENEOUS:
        if scale0 is None:
            d = np.asarray(prior.sigma2_shape, dtype=np.float64)
            l = np.asarray(prior.sigma2_rate, dtype=np.float64)
            s2 = np.where(d > 1.0, l / np.maximum(d - 1.0, 1e-12), l / d)
        else:
            s2 = np.full(C, scale0)
        cov = CovarianceParams(
            sigma2=s2 * disperse,
            phi=np.array([phi_prior_mean(c) / disperse for c in range(C)]))
    else:
        L = cov_spec.eta_basis.dimension
        if scale0 is None:
            theta = np.array(prior.theta_mean, dtype=np.float64, copy=True)
        else:
            theta = np.full((C, L), math.sqrt(scale0))
        cov = CovarianceParams(
            theta=theta * math.sqrt(disperse),
            phi=np.array([phi_prior_mean(c) / disperse for c in range(C)]))
    return ParameterState(beta=beta, cov=cov)


def _run_single_chain(data, basis, cov_spec, prior, config, chain_index,
                      seed_seq):
    rng = np.random.default_rng(seed_seq)
    ws = _Workspace(data, basis, cov_spec)
    state = _initial_state(data, basis, cov_spec, prior, chain_index)
    try:
        ws.set_state(state)
    except NumericalError as exc:
        raise NumericalError(str(exc), iteration=0) from exc
    sweep = _CovSweep(ws, prior, config)
    n_keep = (config.n_iter - config.burn_in + config.thin - 1) // config.thin
    P = len(param_names(cov_spec, basis.dimension))
    draws = np.empty((n_keep, P))
    logpost = np.empty(n_keep)
    kept = 0
    for it in range(config.n_iter):
        adapting = config.adapt and it < config.burn_in
        tally = it >= config.burn_in
        try:
            ws.update_beta(rng, prior)
            sweep.sweep(rng, adapting, tally)
        except NumericalError as exc:
            raise NumericalError(str(exc), iteration=it) from exc
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            st = ws.current_state()
            draws[kept] = state_to_vector(st, cov_spec)
            logpost[kept] = ws.loglik + log_prior(st, cov_spec, prior)
            kept += 1
    return ChainOutput(
        names=tuple(param_names(cov_spec, basis.dimension)),
        draws=draws[:kept], log_posterior=logpost[:kept],
        acceptance_rates=sweep.acceptance_rates(),
        proposal_sds=dict(sweep.sds), seed=config.seed,
        chain_index=chain_index, config=config, cov_spec=cov_spec,
        mean_dim=basis.dimension)


def max_threads():
    """Thread cap from DISAGG_THREADS (defaults to the CPU count)."""
    env = os.environ.get("DISAGG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def run_mcmc(data, basis, cov_spec, prior=None, config=None):
    """Run config.n_chains independent chains; deterministic given the seed.

    Chains use independent RNG streams spawned from the master seed and can
    execute concurrently (capped by DISAGG_THREADS); outputs are returned
    in chain order regardless of scheduling.
    """
    if config is None:
        config = McmcConfig()
    if prior is None:
        prior = default_prior(cov_spec, basis, data.grid)
    validate_dataset(data, cov_spec).raise_if_invalid()
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    jobs = [(data, basis, cov_spec, prior, config, idx, seeds[idx])
            for idx in range(config.n_chains)]
    workers = min(config.n_chains, max_threads())
    if workers <= 1 or config.n_chains == 1:
        return [_run_single_chain(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_single_chain, *job) for job in jobs]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# convergence diagnostics
# ---------------------------------------------------------------------------

def _psrf(chains_matrix):
    """Potential scale reduction factor for one scalar; chains (m, n)."""
    m, n = chains_matrix.shape
    within = float(np.mean(np.var(chains_matrix, axis=1, ddof=1)))
    means = np.mean(chains_matrix, axis=1)
    between = n * float(np.var(means, ddof=1))
    if within == 0.0:
        return 1.0 if between == 0.0 else np.inf
    var_hat = (n - 1) / n * within + between / n
    return math.sqrt(var_hat / within)


def _ess_single(x):
    """Effective sample size by Geyer's initial positive sequence."""
    n = x.shape[0]
    x = x - x.mean()
    var0 = float(np.dot(x, x)) / n
    if var0 == 0.0:
        return float(n)
    max_lag = n - 1
    rho = np.empty(max_lag + 1)
    rho[0] = 1.0
    for k in range(1, max_lag + 1):
        rho[k] = float(np.dot(x[:-k], x[k:])) / n / var0
    tau = 0.0
    m = 0
    while True:
        lag0, lag1 = 2 * m, 2 * m + 1
        if lag1 > max_lag:
            break
        pair = rho[lag0] + rho[lag1]
        if pair <= 0.0:
            break
        tau += pair
        m += 1
    tau = max(2.0 * tau - 1.0, 1e-3)
    return n / tau


@dataclass(frozen=True)
class DiagnosticsReport:
    """Per-scalar PSRF and ESS with the PSRF > 1.1 flags."""

    psrf: dict
    ess: dict
    flagged: tuple

    @property
    def ok(self):
        return not self.flagged


def diagnostics(chains, threshold=1.1):
    """Multi-chain convergence report; needs >= 2 equal-length chains."""
    if len(chains) < 2:
        raise SpecError("diagnostics needs at least two chains")
    n = chains[0].n_draws
    names = chains[0].names
    for ch in chains[1:]:
        if ch.n_draws != n:
            raise SpecError("chains have mismatched lengths")
        if ch.names != names:
            raise SpecError("chains have mismatched parameter names")
    psrf = {}
    ess = {}
    flagged = []
    for idx, name in enumerate(names):
        mat = np.stack([ch.draws[:, idx] for ch in chains])
        r = _psrf(mat)
        psrf[name] = r
        ess[name] = float(sum(_ess_single(mat[c]) for c in range(mat.shape[0])))
        if r > threshold:
            flagged.append(name)
    return DiagnosticsReport(psrf=psrf, ess=ess, flagged=tuple(flagged))
