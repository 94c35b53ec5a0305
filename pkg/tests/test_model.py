import numpy as np
import pytest

from disagg.basis import equispaced_basis
from disagg.errors import SpecError
from disagg.model import (HETEROGENEOUS, HOMOGENEOUS, UNIFORM,
                          CovarianceParams, CovarianceSpec, covariance_matrix,
                          cross_covariance, eta_curve, factor_covariance,
                          make_dataset, mean_vector, validate_dataset,
                          validate_params)


def uniform_spec(C=2):
    return CovarianceSpec(kind=UNIFORM, num_categories=C)


def homog_spec(C=2):
    return CovarianceSpec(kind=HOMOGENEOUS, num_categories=C)


def het_spec(C=2, n_interior=4, domain=(0.0, 2.0)):
    return CovarianceSpec(kind=HETEROGENEOUS, num_categories=C,
                          eta_basis=equispaced_basis(n_interior, domain))


def random_het_params(rng, spec):
    L = spec.eta_basis.dimension
    return CovarianceParams(theta=rng.normal(0.8, 0.4, (spec.num_categories, L)),
                            phi=rng.uniform(0.3, 6.0, spec.num_categories))


class TestEtaCurve:
    def test_uniform_unit_variance(self):
        grid = np.linspace(0, 2, 11)
        vals = eta_curve(uniform_spec(), CovarianceParams(sigma2=1.0, phi=0.5),
                         0, grid)
        assert np.all(vals == 1.0)

    def test_heterogeneous_zero_theta(self):
        spec = het_spec()
        params = CovarianceParams(theta=np.zeros((2, spec.eta_basis.dimension)),
                                  phi=np.array([1.0, 1.0]))
        vals = eta_curve(spec, params, 1, np.linspace(0, 2, 9))
        assert np.all(vals == 0.0)

    def test_heterogeneous_constant_theta_is_exact(self):
        spec = het_spec()
        L = spec.eta_basis.dimension
        params = CovarianceParams(theta=np.vstack([np.full(L, 1.7),
                                                   np.full(L, 0.3)]),
                                  phi=np.array([1.0, 1.0]))
        grid = np.linspace(0, 2, 31)
        assert np.all(eta_curve(spec, params, 0, grid) == 1.7)
        assert np.all(eta_curve(spec, params, 1, grid) == 0.3)

    def test_bad_category_index(self):
        with pytest.raises(SpecError):
            eta_curve(uniform_spec(), CovarianceParams(sigma2=1.0, phi=1.0),
                      5, np.linspace(0, 1, 3))


class TestCovarianceMatrix:
    def test_uniform_diagonal_case1_values(self):
        # sigma2 = 1, phi = 0.5, both covariance weights 1 -> Z(t,t) = 2
        grid = np.linspace(0, 2, 20)
        Z = covariance_matrix(uniform_spec(), CovarianceParams(sigma2=1.0, phi=0.5),
                              np.array([1.0, 1.0]), grid)
        np.testing.assert_allclose(np.diag(Z), 2.0, rtol=1e-15)

    def test_homogeneous_diagonal_case2_values(self):
        # sigma_c^2 = 1, phi_c = 4, weights (1, 1.3) -> Z(t,t) = 2.3
        grid = np.linspace(0, 2, 20)
        params = CovarianceParams(sigma2=np.array([1.0, 1.0]),
                                  phi=np.array([4.0, 4.0]))
        Z = covariance_matrix(homog_spec(), params, np.array([1.0, 1.3]), grid)
        np.testing.assert_allclose(np.diag(Z), 2.3, rtol=1e-15)

    def test_exponential_decay_ratio(self):
        # Z(t,s)/Z(t,t) = exp(-0.5 |t-s|); at |t-s| = 2 the ratio is 1/e
        grid = np.array([0.0, 2.0])
        Z = covariance_matrix(uniform_spec(), CovarianceParams(sigma2=1.0, phi=0.5),
                              np.array([1.0, 1.0]), grid)
        np.testing.assert_allclose(Z[0, 1] / Z[0, 0], 0.36787944117144233,
                                   rtol=1e-14)

    def test_symmetry_and_psd_randomized(self):
        rng = np.random.default_rng(4)
        grid = np.sort(rng.uniform(0, 2, 25))
        for _ in range(25):
            spec = het_spec()
            params = random_het_params(rng, spec)
            w = rng.uniform(0, 2, 2)
            Z = covariance_matrix(spec, params, w, grid)
            assert np.max(np.abs(Z - Z.T)) < 1e-12
            evals = np.linalg.eigvalsh(Z)
            assert evals.min() >= -1e-8 * max(evals.max(), 1e-300)

    def test_cholesky_succeeds_with_jitter(self):
        rng = np.random.default_rng(9)
        spec = het_spec()
        grid = np.linspace(0, 2, 30)
        for _ in range(10):
            params = random_het_params(rng, spec)
            Z = covariance_matrix(spec, params, rng.uniform(0.1, 2, 2), grid)
            L, logdet = factor_covariance(Z)
            assert np.isfinite(logdet)

    def test_heterogeneous_reduces_to_homogeneous_bitwise(self):
        spec_c = het_spec()
        L = spec_c.eta_basis.dimension
        sig = np.array([1.3, 0.6])
        phi = np.array([0.7, 2.5])
        params_c = CovarianceParams(theta=np.vstack([np.full(L, sig[0]),
                                                     np.full(L, sig[1])]),
                                    phi=phi)
        params_b = CovarianceParams(sigma2=sig ** 2, phi=phi)
        grid = np.linspace(0, 2, 23)
        w = np.array([1.0, 1.4])
        Z_c = covariance_matrix(spec_c, params_c, w, grid)
        Z_b = covariance_matrix(homog_spec(), params_b, w, grid)
        assert np.array_equal(Z_c, Z_b)

    def test_homogeneous_reduces_to_uniform_bitwise(self):
        sig2, phi = 1.9, 0.8
        params_b = CovarianceParams(sigma2=np.array([sig2, sig2]),
                                    phi=np.array([phi, phi]))
        params_a = CovarianceParams(sigma2=sig2, phi=phi)
        grid = np.linspace(0, 2, 23)
        w = np.array([2.0, 0.7])
        Z_b = covariance_matrix(homog_spec(), params_b, w, grid)
        Z_a = covariance_matrix(uniform_spec(), params_a, w, grid)
        assert np.array_equal(Z_b, Z_a)

    def test_theta_sign_invariance_bitwise(self):
        rng = np.random.default_rng(12)
        spec = het_spec()
        params = random_het_params(rng, spec)
        flipped = CovarianceParams(theta=-params.theta, phi=params.phi)
        grid = np.linspace(0, 2, 17)
        w = np.array([1.0, 1.3])
        assert np.array_equal(covariance_matrix(spec, params, w, grid),
                              covariance_matrix(spec, flipped, w, grid))

    def test_cross_covariance_consistency(self):
        rng = np.random.default_rng(13)
        spec = het_spec()
        params = random_het_params(rng, spec)
        grid = np.linspace(0, 2, 12)
        w = np.array([1.0, 1.3])
        full = covariance_matrix(spec, params, w, grid)
        cross = cross_covariance(spec, params, w, grid[:5], grid[5:])
        np.testing.assert_array_equal(cross, full[:5, 5:])


class TestMeanVector:
    def test_zero_beta(self):
        basis = equispaced_basis(3, (0.0, 1.0))
        grid = np.linspace(0, 1, 7)
        mv = mean_vector(np.zeros((2, basis.dimension)), basis,
                         np.array([1.0, 4.0]), grid)
        assert np.all(mv == 0.0)

    def test_weighted_sum_of_category_curves(self):
        from disagg.basis import curve_values
        rng = np.random.default_rng(2)
        basis = equispaced_basis(5, (0.0, 2.0))
        grid = np.linspace(0, 2, 15)
        beta = rng.normal(0, 2, (2, basis.dimension))
        mv = mean_vector(beta, basis, np.array([1.0, 4.0]), grid)
        expected = (curve_values(basis, beta[0], grid)
                    + 4.0 * curve_values(basis, beta[1], grid))
        np.testing.assert_allclose(mv, expected, atol=1e-12)

    def test_dimension_mismatch(self):
        basis = equispaced_basis(3, (0.0, 1.0))
        with pytest.raises(SpecError):
            mean_vector(np.zeros((2, basis.dimension)), basis,
                        np.array([1.0, 2.0, 3.0]), np.linspace(0, 1, 5))


class TestValidateParams:
    def test_uniform_rejects_vector(self):
        with pytest.raises(SpecError):
            validate_params(uniform_spec(),
                            CovarianceParams(sigma2=np.array([1.0, 2.0]),
                                             phi=1.0))

    def test_negative_sigma2(self):
        with pytest.raises(SpecError):
            validate_params(uniform_spec(), CovarianceParams(sigma2=-1.0, phi=1.0))

    def test_negative_phi(self):
        with pytest.raises(SpecError):
            validate_params(homog_spec(),
                            CovarianceParams(sigma2=np.array([1.0, 1.0]),
                                             phi=np.array([1.0, -2.0])))

    def test_theta_shape(self):
        spec = het_spec()
        with pytest.raises(SpecError):
            validate_params(spec, CovarianceParams(theta=np.zeros((2, 3)),
                                                   phi=np.array([1.0, 1.0])))


class TestValidateDataset:
    def grid(self):
        return np.linspace(0, 2, 10)

    def test_rank_deficient_r(self):
        g = self.grid()
        y = np.zeros((2, 1, 10))
        r = np.array([[1.0, 1.0], [2.0, 2.0]])
        report = validate_dataset(make_dataset(g, y, r), uniform_spec())
        assert not report.ok
        assert any("rank deficient" in v for v in report.violations)

    def test_market_table_is_valid(self):
        g = self.grid()
        y = np.zeros((2, 5, 10))
        r = np.array([[87.0, 5.0], [25.0, 25.0]])
        report = validate_dataset(make_dataset(g, y, r), uniform_spec())
        assert report.ok

    def test_nan_names_position(self):
        g = self.grid()
        y = np.zeros((2, 2, 10))
        y[1, 0, 3] = np.nan
        r = np.array([[1.0, 4.0], [4.0, 1.0]])
        report = validate_dataset(make_dataset(g, y, r), uniform_spec())
        assert any("curve 1" in v and "replicate 0" in v and "point 3" in v
                   for v in report.violations)

    def test_decreasing_grid(self):
        g = np.array([0.0, 1.0, 0.5])
        y = np.zeros((1, 1, 3))
        r = np.array([[1.0]])
        report = validate_dataset(make_dataset(g, y, r),
                                  CovarianceSpec(kind=UNIFORM, num_categories=1))
        assert any("increasing" in v for v in report.violations)

    def test_negative_c_weight(self):
        g = self.grid()
        y = np.zeros((2, 1, 10))
        r = np.array([[1.0, 4.0], [4.0, 1.0]])
        cw = np.array([[1.0, 1.0], [1.0, -0.5]])
        report = validate_dataset(make_dataset(g, y, r, cw), uniform_spec())
        assert any("negative covariance weight" in v for v in report.violations)

    def test_empty_dataset_allowed_for_prior_runs(self):
        g = self.grid()
        data = make_dataset(g, np.zeros((0, 1, 10)), np.zeros((0, 2)))
        assert validate_dataset(data, uniform_spec()).ok

    def test_report_collects_multiple(self):
        g = np.array([0.0, 0.0, 1.0])
        y = np.full((2, 1, 3), np.nan)
        r = np.array([[1.0, 1.0], [1.0, 1.0]])
        report = validate_dataset(make_dataset(g, y, r), uniform_spec())
        assert len(report.violations) >= 3
