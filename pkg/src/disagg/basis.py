"""Cubic B-spline bases: knot construction, evaluation, design matrices.

Bases are clamped (open) cubic splines: the boundary knot is repeated
degree + 1 times, so the basis dimension is K = n_interior + degree + 1,
the basis is a partition of unity on the domain, and the first/last basis
functions interpolate the endpoints. Evaluation outside the domain is an
error; these splines are never extrapolated.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DomainError, SpecError

DEGREE = 3


@dataclass(frozen=True)
class BasisSpec:
    """A clamped cubic B-spline basis on [domain_lo, domain_hi]."""

    interior_knots: tuple
    domain_lo: float
    domain_hi: float
    degree: int = DEGREE
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        full = np.concatenate([
            np.full(self.degree + 1, self.domain_lo),
            np.asarray(self.interior_knots, dtype=np.float64),
            np.full(self.degree + 1, self.domain_hi),
        ])
        object.__setattr__(self, "knots", full)

    @property
    def dimension(self):
        """Basis dimension K = n_interior + degree + 1."""
        return len(self.interior_knots) + self.degree + 1

    def contains(self, t):
        return self.domain_lo <= t <= self.domain_hi

    def _check_grid(self, grid):
        grid = np.ascontiguousarray(grid, dtype=np.float64)
        if grid.size == 0:
            raise SpecError("empty evaluation grid")
        if grid.min() < self.domain_lo or grid.max() > self.domain_hi:
            bad = int(np.argmax((grid < self.domain_lo) | (grid > self.domain_hi)))
            raise DomainError(
                f"grid point {grid[bad]!r} (index {bad}) outside basis domain "
                f"[{self.domain_lo}, {self.domain_hi}]")
        return grid


def make_basis(interior_knots, domain):
    """Build a cubic basis from interior knots and an open domain interval.

    Knots must be strictly increasing and strictly inside the domain;
    violations report the offending knot index.
    """
    lo, hi = float(domain[0]), float(domain[1])
    if not lo < hi:
        raise SpecError(f"domain must satisfy lo < hi, got ({lo}, {hi})")
    kn = np.asarray(interior_knots, dtype=np.float64)
    if kn.ndim != 1:
        raise SpecError("interior_knots must be a 1-d sequence")
    for idx in range(kn.size):
        if not lo < kn[idx] < hi:
            raise SpecError(
                f"interior knot {kn[idx]!r} at index {idx} outside open domain "
                f"({lo}, {hi})")
        if idx > 0 and not kn[idx] > kn[idx - 1]:
            raise SpecError(
                f"interior knots not strictly increasing at index {idx}: "
                f"{kn[idx - 1]!r} followed by {kn[idx]!r}")
    return BasisSpec(interior_knots=tuple(kn.tolist()), domain_lo=lo, domain_hi=hi)


def equispaced_basis(n_interior, domain):
    """Basis with n_interior equally spaced interior knots over the domain."""
    if n_interior < 0:
        raise SpecError(f"n_interior must be >= 0, got {n_interior}")
    lo, hi = float(domain[0]), float(domain[1])
    interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
    return make_basis(interior, (lo, hi))


def eval_basis(spec, t):
    """All K basis functions at a single point t (nonnegative, sum to 1)."""
    if not spec.contains(t):
        raise DomainError(
            f"t={t!r} outside basis domain [{spec.domain_lo}, {spec.domain_hi}]")
    return _kernels.basis_matrix(spec.knots, spec.degree,
                                 np.asarray([t], dtype=np.float64))[0]


def basis_matrix(spec, grid):
    """Evaluation matrix B with B[m, k] = B_k(grid[m]); shape (T, K)."""
    grid = spec._check_grid(grid)
    return _kernels.basis_matrix(spec.knots, spec.degree, grid)


def curve_values(spec, coeffs, grid):
    """Evaluate the spline curve sum_k coeffs[k] B_k on a grid.

    Uses de Boor's recurrence; equals basis_matrix(spec, grid) @ coeffs up
    to roundoff, and is exact for constant coefficient vectors.
    """
    coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
    if coeffs.shape != (spec.dimension,):
        raise SpecError(
            f"coefficient vector has length {coeffs.shape}, expected "
            f"({spec.dimension},)")
    grid = spec._check_grid(grid)
    return _kernels.curve_eval(spec.knots, spec.degree, coeffs, grid)


def design_matrix(spec, grid, weights):
    """Stacked per-category design matrix [w_1 B | w_2 B | ... | w_C B].

    weights is one curve's row of the aggregation weight matrix; the result
    has shape (T, C*K) and multiplies the category-major stacked coefficient
    vector.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 1 or weights.size == 0:
        raise SpecError("weights must be a nonempty 1-d vector")
    B = basis_matrix(spec, grid)
    return np.hstack([w * B for w in weights])
