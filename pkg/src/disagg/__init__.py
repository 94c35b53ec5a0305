"""Bayesian estimation of latent disaggregated mean and covariance curves
from aggregated functional observations."""

from ._kernels import active_backend
from .basis import (BasisSpec, basis_matrix, curve_values, design_matrix,
                    equispaced_basis, eval_basis, make_basis)
from .errors import (DatasetError, DisaggError, DomainError, NumericalError,
                     SpecError)
from .inference import (ChainOutput, DiagnosticsReport, McmcConfig, PriorSpec,
                        beta_full_conditional, default_prior, diagnostics,
                        gibbs_update_beta, log_likelihood,
                        mh_update_positive_scalar, practical_range_phi_prior,
                        run_mcmc, update_covariance_params)
from .model import (HETEROGENEOUS, HOMOGENEOUS, UNIFORM, AggregatedDataset,
                    CovarianceParams, CovarianceSpec, ParameterState,
                    covariance_matrix, cross_covariance, eta_curve,
                    make_dataset, mean_vector, validate_dataset)
from .predictive import (PredictiveRequest, PredictiveSummary,
                         conditional_predictive, predictive_draws)
from .simulate import (SimulationScenario, generate, get_preset,
                       scenario_presets, true_alpha1, true_alpha2)

__version__ = "0.1.0"
