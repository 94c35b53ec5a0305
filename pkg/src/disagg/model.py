"""Observation model: aggregated datasets and the three covariance structures.

The measurement-error covariance between two domain points is a weighted
per-category sum of exponentially decaying kernels,

    Z_i(t, s) = sum_c C_ic eta_c(t) eta_c(s) exp(-phi_c |t - s|),

where eta_c is a constant sigma (uniformly homogeneous), a per-category
constant sigma_c (homogeneous), or a B-spline curve (heterogeneous). All
three kinds are assembled through the same kernel, so the tied-parameter
reduction identities hold bit-for-bit.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels, basis as basis_mod
from .basis import BasisSpec, curve_values
from .errors import NumericalError, SpecError

UNIFORM = "uniformly_homogeneous"
HOMOGENEOUS = "homogeneous"
HETEROGENEOUS = "heterogeneous"
COV_KINDS = (UNIFORM, HOMOGENEOUS, HETEROGENEOUS)


@dataclass(frozen=True)
class AggregatedDataset:
    """Observed aggregated curves with their aggregation weights.

    y has shape (I, J, T): I curves, J replicates each, observed on a
    shared grid of T increasing points. r (I, C) holds the mean
    aggregation weights, c_weights (I, C) the covariance weights.
    """

    grid: np.ndarray
    y: np.ndarray
    r: np.ndarray
    c_weights: np.ndarray
    labels: tuple = None
    category_labels: tuple = None

    @property
    def n_curves(self):
        return self.y.shape[0]

    @property
    def n_replicates(self):
        return self.y.shape[1]

    @property
    def n_points(self):
        return self.grid.shape[0]

    @property
    def n_categories(self):
        return self.r.shape[1]

    def replicate_mean(self):
        """Per-curve mean over replicates, shape (I, T)."""
        return self.y.mean(axis=1)


def make_dataset(grid, y, r, c_weights=None, labels=None, category_labels=None):
    """Assemble an AggregatedDataset; c_weights defaults to r when omitted."""
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    r = np.ascontiguousarray(r, dtype=np.float64)
    if y.ndim != 3:
        raise SpecError(f"y must have shape (I, J, T), got {y.shape}")
    cw = r if c_weights is None else np.ascontiguousarray(c_weights, dtype=np.float64)
    return AggregatedDataset(
        grid=grid, y=y, r=r, c_weights=cw,
        labels=tuple(labels) if labels is not None else None,
        category_labels=tuple(category_labels) if category_labels is not None else None)


@dataclass(frozen=True)
class CovarianceSpec:
    """Which covariance structure is in effect and, for the heterogeneous
    kind, the basis for the standard-deviation curves eta_c."""

    kind: str
    num_categories: int
    eta_basis: BasisSpec = None

    def __post_init__(self):
        if self.kind not in COV_KINDS:
            raise SpecError(f"unknown covariance kind {self.kind!r}; "
                            f"expected one of {COV_KINDS}")
        if self.kind == HETEROGENEOUS and self.eta_basis is None:
            raise SpecError("heterogeneous covariance requires eta_basis")
        if self.num_categories < 1:
            raise SpecError("num_categories must be >= 1")


@dataclass(frozen=True)
class CovarianceParams:
    """Parameter values for one covariance structure.

    uniformly homogeneous: sigma2 scalar, phi scalar
    homogeneous:           sigma2 (C,), phi (C,)
    heterogeneous:         theta (C, L), phi (C,)

    theta is unconstrained: the covariance depends on eta_c only through
    products eta_c(t) eta_c(s), so theta_c and -theta_c are equivalent.
    """

    sigma2: object = None
    phi: object = None
    theta: np.ndarray = None


def validate_params(spec, params):
    """Check a CovarianceParams layout against its CovarianceSpec."""
    C = spec.num_categories
    phi = np.atleast_1d(np.asarray(params.phi, dtype=np.float64))
    if spec.kind == UNIFORM:
        if np.ndim(params.sigma2) != 0 or np.ndim(params.phi) != 0:
            raise SpecError("uniformly homogeneous case takes scalar sigma2 and phi")
        if params.sigma2 <= 0:
            raise SpecError(f"sigma2 must be positive, got {params.sigma2}")
    elif spec.kind == HOMOGENEOUS:
        s2 = np.asarray(params.sigma2, dtype=np.float64)
        if s2.shape != (C,) or phi.shape != (C,):
            raise SpecError(f"homogeneous case takes sigma2 and phi of shape ({C},)")
        if np.any(s2 <= 0):
            raise SpecError("all sigma2 entries must be positive")
    else:
        if params.theta is None:
            raise SpecError("heterogeneous case requires theta")
        L = spec.eta_basis.dimension
        th = np.asarray(params.theta, dtype=np.float64)
        if th.shape != (C, L):
            raise SpecError(f"theta must have shape ({C}, {L}), got {th.shape}")
        if phi.shape != (C,):
            raise SpecError(f"phi must have shape ({C},)")
    if np.any(phi <= 0):
        raise SpecError("all phi entries must be positive")


def phi_vector(spec, params):
    """Decay parameters as a length-C vector (shared value replicated for
    the uniformly homogeneous kind)."""
    C = spec.num_categories
    if spec.kind == UNIFORM:
        return np.full(C, float(params.phi))
    return np.ascontiguousarray(params.phi, dtype=np.float64)


def eta_values(spec, params, grid):
    """Standard-deviation curves eta_c evaluated on a grid, shape (C, T)."""
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    C = spec.num_categories
    T = grid.shape[0]
    out = np.empty((C, T))
    if spec.kind == UNIFORM:
        out[:] = np.sqrt(float(params.sigma2))
    elif spec.kind == HOMOGENEOUS:
        s2 = np.asarray(params.sigma2, dtype=np.float64)
        for c in range(C):
            out[c] = np.sqrt(s2[c])
    else:
        th = np.asarray(params.theta, dtype=np.float64)
        for c in range(C):
            out[c] = curve_values(spec.eta_basis, th[c], grid)
    return out


def eta_curve(spec, params, c, grid):
    """eta_c on a grid for one category index c."""
    if not 0 <= c < spec.num_categories:
        raise SpecError(f"category index {c} out of range [0, {spec.num_categories})")
    return eta_values(spec, params, grid)[c]


def cross_covariance(spec, params, c_weights_row, grid_a, grid_b):
    """Covariance block between two grids, shape (len(grid_a), len(grid_b))."""
    grid_a = np.ascontiguousarray(grid_a, dtype=np.float64)
    grid_b = np.ascontiguousarray(grid_b, dtype=np.float64)
    w = np.ascontiguousarray(c_weights_row, dtype=np.float64)
    phis = phi_vector(spec, params)
    eta_a = eta_values(spec, params, grid_a)
    eta_b = eta_values(spec, params, grid_b)
    corr = np.empty((spec.num_categories, grid_a.shape[0], grid_b.shape[0]))
    for c in range(spec.num_categories):
        corr[c] = _kernels.corr_matrix(phis[c], grid_a, grid_b)
    return _kernels.cov_cross(eta_a, eta_b, corr, w)


def covariance_matrix(spec, params, c_weights_row, grid):
    """Z_i on a single grid: symmetric, PSD by construction."""
    return cross_covariance(spec, params, c_weights_row, grid, grid)


def mean_vector(beta, basis, r_row, grid):
    """X_i beta for one curve: the weighted sum of category mean curves."""
    beta = np.asarray(beta, dtype=np.float64)
    r_row = np.asarray(r_row, dtype=np.float64)
    C, K = beta.shape
    if r_row.shape != (C,):
        raise SpecError(f"r_row has shape {r_row.shape}, expected ({C},)")
    X = basis_mod.design_matrix(basis, grid, r_row)
    return X @ beta.reshape(C * K)


@dataclass(frozen=True)
class ParameterState:
    """A full point in parameter space: mean coefficients plus covariance
    parameters."""

    beta: np.ndarray
    cov: CovarianceParams


def factor_covariance(Z, jitters=None):
    """Cholesky factor of Z with the jitter escalation policy.

    Adds eps * mean(diag) to the diagonal, eps stepping from 0 through
    1e-10..1e-6, and raises NumericalError when every attempt fails.
    Returns (L, logdet).
    """
    if jitters is None:
        jitters = _kernels.JITTER_LADDER
    L = _kernels._chol_jittered_np(np.asarray(Z, dtype=np.float64), jitters)
    if L is None:
        raise NumericalError("covariance not positive definite after jitter escalation")
    return L, 2.0 * float(np.sum(np.log(np.diagonal(L))))


class ValidationReport:
    """All dataset violations found; empty means the dataset is usable."""

    def __init__(self, violations):
        self.violations = list(violations)

    @property
    def ok(self):
        return not self.violations

    def raise_if_invalid(self):
        from .errors import DatasetError
        if not self.ok:
            raise DatasetError("; ".join(self.violations))
        return None

    def __repr__(self):
        status = "ok" if self.ok else f"{len(self.violations)} violation(s)"
        return f"ValidationReport({status})"


RANK_RTOL = 1e-10


def validate_dataset(data, spec):
    """Collect every violation of the dataset invariants (never raises).

    A dataset with I = 0 curves is allowed: it drives a prior-only
    sampler run, so the identifiability rank check is skipped.
    """
    v = []
    grid = data.grid
    if grid.ndim != 1 or grid.size == 0:
        v.append("grid must be a nonempty 1-d array")
    elif np.any(np.diff(grid) <= 0):
        k = int(np.argmax(np.diff(grid) <= 0))
        v.append(f"grid not strictly increasing at index {k + 1}")
    if data.y.ndim != 3:
        v.append(f"y must have shape (I, J, T), got {data.y.shape}")
    else:
        I, J, T = data.y.shape
        if T != grid.size:
            v.append(f"y has {T} grid points but grid has {grid.size}")
        bad = np.argwhere(~np.isfinite(data.y))
        for i, j, k in bad[:10]:
            v.append(f"non-finite y at (curve {i}, replicate {j}, point {k})")
        if data.r.shape != (I, spec.num_categories):
            v.append(f"r has shape {data.r.shape}, expected ({I}, {spec.num_categories})")
        elif I > 0:
            svals = np.linalg.svd(data.r, compute_uv=False)
            rank = int(np.sum(svals > RANK_RTOL * svals[0])) if svals.size else 0
            if rank < spec.num_categories:
                v.append(
                    f"aggregation weights r are rank deficient (rank {rank} < "
                    f"{spec.num_categories}); the category curves are not identifiable")
        if data.c_weights.shape != data.r.shape:
            v.append(f"c_weights has shape {data.c_weights.shape}, expected {data.r.shape}")
        elif np.any(data.c_weights < 0):
            i, c = np.argwhere(data.c_weights < 0)[0]
            v.append(f"negative covariance weight at (curve {i}, category {c})")
    if spec.kind == HETEROGENEOUS and grid.size:
        eb = spec.eta_basis
        if grid.min() < eb.domain_lo or grid.max() > eb.domain_hi:
            v.append("grid extends outside the eta basis domain")
    return ValidationReport(v)
