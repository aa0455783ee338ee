import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from pima.glm import (
    Family,
    NotConvergedError,
    RankDeficientError,
    fit_full,
    fit_null,
    irls_fit,
    wald_test,
)


def _logistic_instance(n=30, seed=11):
    rng = np.random.default_rng(seed)
    z = np.column_stack([np.ones(n), rng.normal(size=n)])
    x = rng.normal(size=n)
    eta = 0.3 + 0.8 * z[:, 1] + 0.6 * x
    y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    return x, z, y


class TestFamily:
    @pytest.mark.parametrize("kind", ["gaussian", "binomial", "poisson"])
    def test_link_roundtrip(self, kind):
        fam = Family(kind)
        mu = np.array([0.1, 0.4, 0.8]) if kind == "binomial" else np.array([0.5, 2.0, 7.0])
        np.testing.assert_allclose(fam.linkinv(fam.linkfun(mu)), mu, rtol=1e-12)

    @pytest.mark.parametrize(
        "kind, mu, v, d",
        [
            ("gaussian", 0.3, 1.0, 1.0),
            ("binomial", 0.3, 0.21, 0.21),
            ("poisson", 2.5, 2.5, 2.5),
        ],
    )
    def test_variance_and_mean_derivative(self, kind, mu, v, d):
        fam = Family(kind)
        assert fam.variance(np.array([mu]))[0] == pytest.approx(v)
        assert fam.mu_eta(np.array([mu]))[0] == pytest.approx(d)

    @pytest.mark.parametrize("kind", ["binomial", "poisson"])
    def test_mean_derivative_matches_numerical(self, kind):
        fam = Family(kind)
        eta = np.array([-1.0, 0.2, 1.3])
        h = 1e-6
        num = (fam.linkinv(eta + h) - fam.linkinv(eta - h)) / (2 * h)
        np.testing.assert_allclose(fam.mu_eta(fam.linkinv(eta)), num, rtol=1e-7)

    def test_rejects_non_canonical_link(self):
        with pytest.raises(ValueError):
            Family("binomial", "probit")

    @pytest.mark.parametrize("kind, y", [("binomial", [0, 1, 2]), ("poisson", [1, -1, 3]), ("poisson", [0.5, 1, 2])])
    def test_support_errors(self, kind, y):
        with pytest.raises(ValueError):
            Family(kind).check_support(np.array(y, dtype=float))


class TestIRLS:
    def test_intercept_only_gaussian(self):
        fit = irls_fit(np.ones((3, 1)), np.array([1.0, 2.0, 3.0]), "gaussian")
        np.testing.assert_allclose(fit.mu, [2, 2, 2])
        assert fit.dispersion == pytest.approx(1.0)

    def test_intercept_only_binomial(self):
        fit = irls_fit(np.ones((4, 1)), np.array([0.0, 0, 1, 1]), "binomial")
        np.testing.assert_allclose(fit.mu, [0.5] * 4, atol=1e-12)

    def test_gaussian_matches_normal_equations(self):
        rng = np.random.default_rng(3)
        X = np.column_stack([np.ones(50), rng.normal(size=(50, 2))])
        y = X @ [1.0, -2.0, 0.5] + rng.normal(size=50)
        fit = irls_fit(X, y, "gaussian")
        oracle = np.linalg.solve(X.T @ X, X.T @ y)
        np.testing.assert_allclose(fit.coef, oracle, atol=1e-8)
        assert fit.converged

    @pytest.mark.parametrize("kind", ["binomial", "poisson"])
    def test_matches_direct_likelihood_maximisation(self, kind):
        rng = np.random.default_rng(5)
        n = 200
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        eta = X @ [0.2, 0.7]
        y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float) if kind == "binomial" else rng.poisson(np.exp(eta))
        fit = irls_fit(X, y, kind)

        def nll(b):
            e = X @ b
            if kind == "binomial":
                return np.sum(np.logaddexp(0, e) - y * e)
            return np.sum(np.exp(e) - y * e)

        oracle = optimize.minimize(nll, np.zeros(2), method="BFGS", options={"gtol": 1e-10}).x
        np.testing.assert_allclose(fit.coef, oracle, atol=1e-5)

    def test_column_permutation(self):
        rng = np.random.default_rng(8)
        X = np.column_stack([np.ones(60), rng.normal(size=(60, 2))])
        y = rng.poisson(np.exp(X @ [0.1, 0.3, -0.2])).astype(float)
        a = irls_fit(X, y, "poisson")
        perm = [2, 0, 1]
        b = irls_fit(X[:, perm], y, "poisson")
        np.testing.assert_allclose(b.coef, a.coef[perm], atol=1e-10)
        np.testing.assert_allclose(b.mu, a.mu, atol=1e-10)

    def test_rank_deficiency_names_columns(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=20)
        X = np.column_stack([np.ones(20), z, 2 * z])
        with pytest.raises(RankDeficientError, match="collinear columns: slope2"):
            irls_fit(X, rng.normal(size=20), "gaussian", column_names=["const", "slope", "slope2"])

    def test_too_few_observations(self):
        with pytest.raises(RankDeficientError):
            irls_fit(np.ones((2, 2)) + np.eye(2), np.array([1.0, 2.0]), "gaussian")

    def test_separation_flags_non_convergence(self):
        x = np.arange(10.0)
        X = np.column_stack([np.ones(10), x])
        y = (x > 4.5).astype(float)
        fit = irls_fit(X, y, "binomial")
        assert not fit.converged
        assert fit.message


class TestNullFit:
    @pytest.mark.parametrize("kind", ["gaussian", "binomial", "poisson"])
    def test_weights_identity(self, kind):
        rng = np.random.default_rng(1)
        n = 80
        z = np.column_stack([np.ones(n), rng.normal(size=n)])
        eta = 0.2 + 0.5 * z[:, 1]
        if kind == "gaussian":
            y = eta + rng.normal(size=n)
        elif kind == "binomial":
            y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
        else:
            y = rng.poisson(np.exp(eta)).astype(float)
        fit = fit_null(z, y, kind)
        np.testing.assert_allclose(fit.w, fit.d**2 / fit.v, rtol=1e-14)
        assert np.all(fit.w > 0)
        if kind == "binomial":
            assert np.all((fit.mu_hat > 0) & (fit.mu_hat < 1))
        if kind == "poisson":
            assert np.all(fit.mu_hat > 0)

    def test_gaussian_constant_weights(self):
        rng = np.random.default_rng(2)
        z = np.column_stack([np.ones(40), rng.normal(size=40)])
        y = rng.normal(size=40) * 3
        fit = fit_null(z, y, "gaussian")
        np.testing.assert_array_equal(fit.d, 1.0)
        np.testing.assert_allclose(fit.v, fit.dispersion)
        np.testing.assert_allclose(fit.w, 1 / fit.dispersion)


class TestWald:
    def test_zero_estimate(self):
        # y orthogonal to the residualised x gives beta_hat = 0 exactly
        x = np.array([1.0, -1.0, 1.0, -1.0, 0.0, 0.0])
        z = np.ones((6, 1))
        y = np.array([1.0, 1.0, 2.0, 2.0, 5.0, -1.0])
        full = fit_full(x, z, y, "gaussian")
        assert full.beta_hat == pytest.approx(0.0, abs=1e-12)
        zstat, p = wald_test(full)
        assert p == pytest.approx(1.0)

    def test_logistic_matches_information_oracle(self):
        x, z, y = _logistic_instance()
        full = fit_full(x, z, y, "binomial")
        X = np.column_stack([x, z])
        mu = 1 / (1 + np.exp(-X @ full.coef))
        info = X.T @ (X * (mu * (1 - mu))[:, None])
        se = np.sqrt(np.linalg.inv(info)[0, 0])
        zstat, p = wald_test(full)
        assert zstat == pytest.approx(full.coef[0] / se, abs=1e-6)
        assert p == pytest.approx(2 * stats.norm.sf(abs(full.coef[0] / se)), abs=1e-6)

    def test_gaussian_is_ols_t_test(self):
        rng = np.random.default_rng(4)
        n = 25
        x = rng.normal(size=n)
        z = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = 0.4 * x + z[:, 1] + rng.normal(size=n)
        X = np.column_stack([x, z])
        b = np.linalg.lstsq(X, y, rcond=None)[0]
        s2 = np.sum((y - X @ b) ** 2) / (n - 3)
        t = b[0] / np.sqrt(s2 * np.linalg.inv(X.T @ X)[0, 0])
        zstat, p = wald_test(fit_full(x, z, y, "gaussian"))
        assert zstat == pytest.approx(t, rel=1e-8)
        assert p == pytest.approx(2 * stats.t.sf(abs(t), n - 3), rel=1e-8)

    @given(c=st.floats(0.01, 100.0))
    @settings(max_examples=25, deadline=None)
    def test_dispersion_invariance(self, c):
        rng = np.random.default_rng(9)
        n = 30
        x = rng.normal(size=n)
        z = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = rng.normal(size=n)
        a = fit_full(x, z, y, "gaussian")
        b = fit_full(x, z, c * y, "gaussian")
        assert wald_test(b)[0] == pytest.approx(wald_test(a)[0], rel=1e-8)
        np.testing.assert_allclose(
            fit_null(z, c * y, "gaussian").dispersion, c**2 * fit_null(z, y, "gaussian").dispersion, rtol=1e-8
        )

    def test_unconverged_fit_raises(self):
        x = np.arange(10.0)
        z = np.ones((10, 1))
        full = fit_full(x, z, (x > 4.5).astype(float), "binomial")
        with pytest.raises(NotConvergedError):
            wald_test(full)
