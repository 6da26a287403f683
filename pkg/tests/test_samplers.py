import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bmfpp.errors import CholeskyError
from bmfpp.rng import derive_stream
from bmfpp.samplers import cholesky, sample_mvn, sample_wishart


def random_spd(k, rng, eps=1e-3):
    m = rng.standard_normal((k, k))
    return m.T @ m + eps * np.eye(k)


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))

    def test_hand_two_by_two(self):
        # elimination by hand: [[4,2],[2,3]] = L L^T with L = [[2,0],[1,sqrt(2)]]
        lower = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
        np.testing.assert_allclose(lower, [[2.0, 0.0], [1.0, np.sqrt(2.0)]])

    def test_indefinite_reports_pivot(self):
        with pytest.raises(CholeskyError) as err:
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert err.value.pivot == 1

    def test_nonsymmetric_rejected(self):
        with pytest.raises(ValueError):
            cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))

    @given(st.integers(1, 8), st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_reconstruction_on_random_spd(self, k, seed):
        a = random_spd(k, np.random.default_rng(seed))
        lower = cholesky(a)
        np.testing.assert_array_equal(lower, np.tril(lower))
        err = np.abs(lower @ lower.T - a).max()
        assert err <= 1e-10 * max(np.abs(a).max(), 1.0)


class TestSampleMvn:
    def test_standard_normal_mean(self):
        rng = derive_stream(0, [1])
        draws = sample_mvn(np.zeros(3), np.eye(3), rng, size=50_000)
        assert np.abs(draws.mean(axis=0)).max() < 3.0 / np.sqrt(50_000)

    def test_diagonal_precision_variance(self):
        # precision diag(4, 4) -> variance 0.25
        rng = derive_stream(1, [1])
        draws = sample_mvn(np.zeros(2), np.diag([4.0, 4.0]), rng, size=50_000)
        se = 0.25 * np.sqrt(2.0 / 50_000)
        assert np.abs(draws.var(axis=0, ddof=1) - 0.25).max() < 3 * se

    def test_deterministic_given_stream(self):
        a = sample_mvn(np.ones(4), np.eye(4), derive_stream(9, [2]))
        b = sample_mvn(np.ones(4), np.eye(4), derive_stream(9, [2]))
        np.testing.assert_array_equal(a, b)

    def test_correlated_covariance_recovered(self):
        rng_gen = np.random.default_rng(3)
        prec = random_spd(3, rng_gen)
        cov = np.linalg.inv(prec)
        draws = sample_mvn(np.array([1.0, -2.0, 0.5]), prec, derive_stream(4, [0]), size=60_000)
        emp = np.cov(draws.T)
        for i in range(3):
            for j in range(3):
                se = np.sqrt((cov[i, i] * cov[j, j] + cov[i, j] ** 2) / 60_000)
                assert abs(emp[i, j] - cov[i, j]) < 4 * se

    def test_marginals_pass_ks(self):
        # each marginal of the MVN against its analytic normal, alpha = 0.001
        rng_gen = np.random.default_rng(5)
        prec = random_spd(2, rng_gen)
        cov = np.linalg.inv(prec)
        mean = np.array([0.3, -1.2])
        draws = sample_mvn(mean, prec, derive_stream(6, [0]), size=50_000)
        for k in range(2):
            _, pvalue = stats.kstest(draws[:, k], "norm",
                                     args=(mean[k], np.sqrt(cov[k, k])))
            assert pvalue > 0.001

    def test_propagates_cholesky_error(self):
        with pytest.raises(CholeskyError):
            sample_mvn(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), derive_stream(0, [0]))


class TestSampleWishart:
    def test_mean_matches_dof_times_scale(self):
        k, dof, n = 2, 5.0, 20_000
        scale = np.eye(k)
        rng = derive_stream(7, [0])
        total = np.zeros((k, k))
        sq = np.zeros((k, k))
        for _ in range(n):
            w = sample_wishart(scale, dof, rng)
            total += w
            sq += w ** 2
        emp_mean = total / n
        emp_sd = np.sqrt(np.maximum(sq / n - emp_mean ** 2, 0.0))
        se = emp_sd / np.sqrt(n)
        assert (np.abs(emp_mean - dof * scale) < 3 * se + 1e-12).all()

    def test_output_always_pd(self):
        rng = derive_stream(8, [0])
        scale = random_spd(3, np.random.default_rng(11))
        for _ in range(10_000):
            w = sample_wishart(scale, 3.5, rng)
            cholesky(w)  # raises if not PD

    def test_dof_below_dimension_rejected(self):
        with pytest.raises(ValueError):
            sample_wishart(np.eye(3), 2.5, derive_stream(0, [0]))

    def test_deterministic_given_stream(self):
        a = sample_wishart(np.eye(2), 4.0, derive_stream(3, [1]))
        b = sample_wishart(np.eye(2), 4.0, derive_stream(3, [1]))
        np.testing.assert_array_equal(a, b)
