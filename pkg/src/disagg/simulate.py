"""Synthetic aggregated-curve generator and the named recovery scenarios.

The true mean curves are

    alpha_1(t) = 5 exp(-t)       sin(pi t / 2) cos(pi t)
    alpha_2(t) = 5 exp(-(t-0.2)) cos(pi t / 2) sin(pi t)

observed through known aggregation weights and corrupted by Gaussian noise
with one of the three covariance structures. Scenario presets cover the
uniformly homogeneous case without replicates (I = 10 and I = 30), the
homogeneous case with J = 15 replicates, and the heterogeneous case with
J in {15, 50, 150}.

Preset conventions not pinned by the scenarios themselves: curves are
sampled on 50 equally spaced points of [0, 2] (both true curves complete
their oscillations and decay there); the uniformly homogeneous presets
extend the 3 base weight rows to I curves with fixed seeded draws from
[1, 4]; the heterogeneous eta curves are fixed coefficient vectors on the
same 10-interior-knot cubic basis used for fitting.
"""

from dataclasses import dataclass

import numpy as np

from .basis import equispaced_basis
from .errors import SpecError
from .model import (HETEROGENEOUS, HOMOGENEOUS, UNIFORM, CovarianceParams,
                    CovarianceSpec, covariance_matrix, eta_values,
                    factor_covariance, make_dataset)

DEFAULT_SEED = 7

_R_BASE = [[1.0, 4.0], [4.0, 1.0], [2.5, 2.5]]
# fixed extension rows (uniform draws from [1,4], seeded once) for I > 3
_R_EXTRA = [
    [2.1232, 1.2426], [3.9744, 1.3387], [1.524, 3.8584], [3.1105, 2.7272],
    [2.3031, 3.2132], [3.3503, 1.1771], [2.3054, 3.8666], [2.577, 1.846],
    [3.0457, 3.2106], [2.8268, 1.2665], [2.456, 1.3363], [3.2083, 1.6693],
    [3.3466, 2.213], [2.1093, 2.3302], [2.1509, 1.7859], [1.4999, 1.4005],
    [3.9268, 2.501], [2.1176, 1.1587], [2.1505, 3.9119], [3.0005, 1.9629],
    [3.6194, 1.2512], [2.8284, 2.7791], [3.2734, 3.3946], [3.7628, 3.7208],
    [1.7457, 2.5308], [1.3506, 3.7666], [2.2838, 1.5011],
]
_C_WEIGHTS_23 = [[1.0, 1.3], [1.4, 1.3], [1.5, 1.5]]
# fixed eta coefficients for the heterogeneous presets (seeded once)
_THETA_TRUE = [
    [1.475, 0.7489, 1.1086, 0.7476, 0.6498, 0.6789, 0.7926, 1.0353, 1.1663,
     0.9309, 1.0831, 1.4659, 1.4456, 0.759],
    [1.193, 0.8021, 1.2028, 1.1348, 0.8146, 0.6021, 1.4664, 1.4713, 1.3808,
     0.6058, 1.0277, 0.9647, 0.6677, 1.1155],
]


def true_alpha1(t):
    """First true mean curve."""
    t = np.asarray(t, dtype=np.float64)
    return 5.0 * np.exp(-t) * np.sin(np.pi * t / 2.0) * np.cos(np.pi * t)


def true_alpha2(t):
    """Second true mean curve."""
    t = np.asarray(t, dtype=np.float64)
    return 5.0 * np.exp(-(t - 0.2)) * np.cos(np.pi * t / 2.0) * np.sin(np.pi * t)


@dataclass(frozen=True)
class SimulationScenario:
    """Everything needed to draw a synthetic aggregated dataset."""

    name: str
    grid: np.ndarray
    alpha: tuple                 # per-category callables t -> alpha_c(t)
    r: np.ndarray
    c_weights: np.ndarray
    cov_spec: CovarianceSpec
    cov_params: CovarianceParams
    n_replicates: int
    seed: int = DEFAULT_SEED

    @property
    def n_curves(self):
        return self.r.shape[0]

    @property
    def n_categories(self):
        return self.r.shape[1]

    def alpha_values(self, grid=None):
        """True mean curves evaluated on a grid, shape (C, T)."""
        grid = self.grid if grid is None else np.asarray(grid, dtype=np.float64)
        return np.stack([np.asarray(f(grid), dtype=np.float64) for f in self.alpha])

    def eta_true_values(self, grid=None):
        """True standard-deviation curves on a grid, shape (C, T)."""
        grid = self.grid if grid is None else np.asarray(grid, dtype=np.float64)
        return eta_values(self.cov_spec, self.cov_params, grid)

    def noiseless(self):
        """Aggregate mean curves r @ alpha, shape (I, T)."""
        return self.r @ self.alpha_values()


def generate(scenario, rng=None):
    """Draw an AggregatedDataset from the scenario; deterministic per seed.

    The noiseless aggregate depends only on the scenario, so different
    seeds change only the noise realizations.
    """
    if rng is None:
        rng = np.random.default_rng(scenario.seed)
    elif not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    grid = np.asarray(scenario.grid, dtype=np.float64)
    I, J, T = scenario.n_curves, scenario.n_replicates, grid.size
    mean = scenario.noiseless()
    y = np.empty((I, J, T))
    for i in range(I):
        Z = covariance_matrix(scenario.cov_spec, scenario.cov_params,
                              scenario.c_weights[i], grid)
        L, _ = factor_covariance(Z)
        for j in range(J):
            y[i, j] = mean[i] + L @ rng.standard_normal(T)
    return make_dataset(grid=grid, y=y, r=scenario.r,
                        c_weights=scenario.c_weights)


def _case1(I):
    rows = _R_BASE + _R_EXTRA[:I - 3]
    r = np.asarray(rows, dtype=np.float64)
    return SimulationScenario(
        name=f"case1_I{I}",
        grid=np.linspace(0.0, 2.0, 50),
        alpha=(true_alpha1, true_alpha2),
        r=r,
        c_weights=np.ones_like(r),
        cov_spec=CovarianceSpec(kind=UNIFORM, num_categories=2),
        cov_params=CovarianceParams(sigma2=1.0, phi=0.5),
        n_replicates=1)


def _case2(J):
    r = np.asarray(_R_BASE, dtype=np.float64)
    return SimulationScenario(
        name=f"case2_J{J}",
        grid=np.linspace(0.0, 2.0, 50),
        alpha=(true_alpha1, true_alpha2),
        r=r,
        c_weights=np.asarray(_C_WEIGHTS_23, dtype=np.float64),
        cov_spec=CovarianceSpec(kind=HOMOGENEOUS, num_categories=2),
        cov_params=CovarianceParams(sigma2=np.array([1.0, 1.0]),
                                    phi=np.array([4.0, 4.0])),
        n_replicates=J)


def _case3(J):
    r = np.asarray(_R_BASE, dtype=np.float64)
    eta_basis = equispaced_basis(10, (0.0, 2.0))
    return SimulationScenario(
        name=f"case3_J{J}",
        grid=np.linspace(0.0, 2.0, 50),
        alpha=(true_alpha1, true_alpha2),
        r=r,
        c_weights=np.asarray(_C_WEIGHTS_23, dtype=np.float64),
        cov_spec=CovarianceSpec(kind=HETEROGENEOUS, num_categories=2,
                                eta_basis=eta_basis),
        cov_params=CovarianceParams(
            theta=np.asarray(_THETA_TRUE, dtype=np.float64),
            phi=np.array([4.0, 4.0])),
        n_replicates=J)


def scenario_presets():
    """The named recovery scenarios keyed by preset name."""
    presets = [_case1(10), _case1(30), _case2(15), _case3(15), _case3(50),
               _case3(150)]
    return {s.name: s for s in presets}


def get_preset(name):
    presets = scenario_presets()
    if name not in presets:
        raise SpecError(f"unknown preset {name!r}; available: "
                        f"{sorted(presets)}")
    return presets[name]


def scenario_truth(scenario):
    """JSON-ready record of the scenario's true quantities, for later
    scoring of a fit against the generating truth."""
    cov = scenario.cov_params
    cov_dict = {"kind": scenario.cov_spec.kind}
    if scenario.cov_spec.kind == UNIFORM:
        cov_dict.update(sigma2=float(cov.sigma2), phi=float(cov.phi))
    elif scenario.cov_spec.kind == HOMOGENEOUS:
        cov_dict.update(sigma2=np.asarray(cov.sigma2).tolist(),
                        phi=np.asarray(cov.phi).tolist())
    else:
        cov_dict.update(theta=np.asarray(cov.theta).tolist(),
                        phi=np.asarray(cov.phi).tolist(),
                        eta=scenario.eta_true_values().tolist())
    return {
        "preset": scenario.name,
        "seed": scenario.seed,
        "grid": scenario.grid.tolist(),
        "alpha": scenario.alpha_values().tolist(),
        "r": scenario.r.tolist(),
        "c_weights": scenario.c_weights.tolist(),
        "n_curves": scenario.n_curves,
        "n_replicates": scenario.n_replicates,
        "covariance": cov_dict,
    }
