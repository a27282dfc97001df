import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clustreg._em import EMControl
from clustreg.covariance import COV_PARAMS
from clustreg.cwreg import SHARED_B, SUR, CwRegParams, count_params_cwreg, cwreg_logpdf, fit_cwreg
from clustreg.data import generate, monte_carlo_design
from clustreg.errors import RankDeficientError, ValidationError
from clustreg.linreg import fit_linreg
from oracles import profile_grid_two_lines, two_lines_data

# profile_grid_two_lines on two_lines_data() over slope 0.90:0.01:1.10,
# a1 -0.5:0.05:0.5, a2 4.5:0.05:5.5 (tests/oracles.py)
GRID_OPTIMUM = (1.02, -0.1, 4.9)
GRID_STEP = (0.01, 0.05, 0.05)

PRINTED_B21 = np.array([[1.5, 2, 1.5], [1.5, -2.5, -2], [1.5, 2, -2.5]])


class TestCounts:
    def test_shared_variance_two_components(self):
        assert count_params_cwreg(1, 1, 2, "EII") == 5
        assert count_params_cwreg(1, 1, 2, "EII") + 3 == 8

    def test_single_component(self):
        assert count_params_cwreg(1, 1, 1, "VVV") == 3

    def test_full_varying(self):
        assert count_params_cwreg(3, 3, 2, "VVV") == 28

    def test_sur_counts_sets(self):
        assert count_params_cwreg(2, 3, 2, "VVV", SUR, [(0, 1), (2,)]) == 1 + 4 + 3 + 6
        with pytest.raises(ValidationError):
            count_params_cwreg(2, 3, 2, "VVV", SUR)


@pytest.fixture(scope="module")
def fit():
    x, y, _ = two_lines_data()
    return fit_cwreg(y, x[:, None], 2, "VVV")


class TestTwoLines:
    def test_truth_neighbourhood(self, fit):
        b = sorted(fit.params.intercepts.ravel())
        assert b[0] == pytest.approx(0.0, abs=0.2)
        assert b[1] == pytest.approx(5.0, abs=0.2)
        assert fit.params.slopes[0, 0] == pytest.approx(1.0, abs=0.05)

    def test_within_one_lattice_step_of_grid_oracle(self, fit):
        got = (fit.params.slopes[0, 0], *sorted(fit.params.intercepts.ravel()))
        for g, o, h in zip(got, GRID_OPTIMUM, GRID_STEP):
            assert abs(g - o) <= h

    def test_shared_slope_in_every_iterate(self, fit):
        # only one slope matrix exists in the parameterization; check it is reported once
        assert fit.params.slopes.shape == (1, 1)
        assert np.all(np.diff(fit.trace) >= -1e-8)

    @pytest.mark.slow
    def test_grid_oracle_reproduces(self):
        x, y, _ = two_lines_data()
        s, a1, a2, _ = profile_grid_two_lines(x, y, [1.01, 1.02, 1.03], [-0.15, -0.1, -0.05], [4.85, 4.9, 4.95])
        assert (round(s, 2), round(a1, 2), round(a2, 2)) == GRID_OPTIMUM


class TestK1:
    def test_matches_multivariate_regression(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((120, 2))
        Y = X @ np.array([[1.0, -1.0], [0.5, 2.0]]).T + rng.standard_normal((120, 2))
        a = fit_cwreg(Y, X, 1, "VVV")
        b = fit_linreg(Y, X, "FULL")
        assert a.n_iter == 0
        assert a.loglik == pytest.approx(b.loglik, abs=1e-6)
        np.testing.assert_allclose(a.params.slopes, b.params.coef, atol=1e-10)
        np.testing.assert_allclose(a.params.intercepts[0], b.params.intercept, atol=1e-10)

    def test_no_regressors_is_a_mixture(self):
        rng = np.random.default_rng(4)
        Y = rng.standard_normal((50, 2))
        fit = fit_cwreg(Y, None, 1)
        np.testing.assert_allclose(fit.params.intercepts[0], Y.mean(axis=0))


TIGHT = EMControl(n_starts=2, tol=1e-12, max_iter=5000)


@pytest.fixture(scope="module")
def mc():
    return generate(monte_carlo_design(77), 2000)


class TestStructure:
    def test_sur_with_full_sets_equals_shared(self, mc):
        data, _ = mc
        X = data.values
        a = fit_cwreg(X[:, 3:6], X[:, :3], 2, "VVV", ctrl=TIGHT)
        b = fit_cwreg(X[:, 3:6], X[:, :3], 2, "VVV", [(0, 1, 2)] * 3, ctrl=TIGHT)
        # a full mask is reported as the shared mode
        assert a.params.mode == b.params.mode == SHARED_B
        assert a.loglik == pytest.approx(b.loglik, abs=1e-6)

    def test_translation_equivariance(self, mc):
        data, _ = mc
        X = data.values
        c = np.array([3.0, -2.0, 10.0])
        a = fit_cwreg(X[:, 3:6], X[:, :3], 2, "VVV", ctrl=TIGHT)
        b = fit_cwreg(X[:, 3:6], X[:, :3] + c, 2, "VVV", ctrl=TIGHT)
        assert a.loglik == pytest.approx(b.loglik, abs=1e-6)
        np.testing.assert_allclose(b.params.slopes, a.params.slopes, atol=1e-5)
        shifted = a.params.intercepts - a.params.slopes @ c
        order_a = np.argsort(shifted[:, 0])
        order_b = np.argsort(b.params.intercepts[:, 0])
        np.testing.assert_allclose(b.params.intercepts[order_b], shifted[order_a], atol=1e-4)

    def test_sur_zero_structure(self, mc):
        data, _ = mc
        X = data.values
        fit = fit_cwreg(X[:, 3:6], X[:, :3], 2, "VVV", [(0,), (1, 2), (0, 2)], ctrl=EMControl(n_starts=2))
        np.testing.assert_array_equal(fit.params.slopes == 0, ~fit.params.mask)
        assert fit.npar == 1 + 6 + 5 + 12

    def test_logpdf_matches_loglik(self, mc):
        data, _ = mc
        X = data.values
        fit = fit_cwreg(X[:, 3:6], X[:, :3], 2, "VVV", ctrl=EMControl(n_starts=1))
        assert cwreg_logpdf(fit.params, X[:, 3:6], X[:, :3]).sum() == pytest.approx(fit.loglik, abs=1e-8)
        again = CwRegParams.from_dict(fit.params.to_dict())
        assert cwreg_logpdf(again, X[:, 3:6], X[:, :3]).sum() == pytest.approx(fit.loglik, abs=1e-8)


@pytest.mark.slow
def test_recovers_printed_slopes_at_large_n():
    data, _ = generate(monte_carlo_design(31), 10_000)
    X = data.values
    fit = fit_cwreg(X[:, 3:6], X[:, :3], 2, "VVV", ctrl=EMControl(n_starts=2))
    np.testing.assert_allclose(fit.params.slopes, PRINTED_B21, atol=0.1)


class TestErrors:
    def test_rank_deficient_names_columns(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((40, 1))
        X = np.hstack([x, 2 * x])
        with pytest.raises(RankDeficientError) as exc:
            fit_cwreg(rng.standard_normal(40), X, 2)
        assert exc.value.columns in ((0,), (1,))

    def test_too_few_observations(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValidationError, match="cannot support"):
            fit_cwreg(rng.standard_normal((10, 3)), rng.standard_normal((10, 2)), 2)

    def test_nonzero_outside_mask(self):
        with pytest.raises(ValidationError):
            CwRegParams([1.0], [[0.0]], [[1.0]], [[[1.0]]], mask=[[False]])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(1, 3), param=st.sampled_from(COV_PARAMS))
def test_ecm_monotone(seed, K, param):
    rng = np.random.default_rng(seed)
    n = 150
    X = rng.standard_normal((n, 2))
    z = rng.integers(0, 2, n)
    Y = X @ np.array([[1.0, 0.5], [-0.5, 2.0]]).T + 3 * z[:, None] + rng.standard_normal((n, 2))
    fit = fit_cwreg(Y, X, K, param, ctrl=EMControl(n_starts=1, seed=seed))
    assert np.all(np.diff(fit.trace) >= -1e-8)
    np.testing.assert_allclose(fit.posteriors.sum(axis=1), 1.0, atol=1e-8)
