import math

import numpy as np
import pytest
from scipy.integrate import quad_vec
from scipy.linalg import expm

from jordan_exit.errors import InvalidInputError, NumericDomainError
from jordan_exit.linalg_jordan import (
    JordanBlock,
    cholesky_or_psd_factor,
    exp_action,
    exp_matrix,
    finite_noise_covariance,
    limit_noise_covariance,
)


def random_psd(rng, d, rank=None):
    B = rng.standard_normal((d, rank or d))
    return B @ B.T


def quad_cov(block, a0, upper):
    # oracle: integrate exp(-A s) a0 exp(-A^T s) with scipy's expm
    A = block.matrix()

    def integrand(s):
        E = expm(-A * s)
        return E @ a0 @ E.T

    val, _ = quad_vec(integrand, 0.0, upper, epsabs=1e-13, epsrel=1e-12, limit=2000)
    return val


class TestJordanBlock:
    def test_matrix(self):
        m = JordanBlock(3, 2.0).matrix()
        assert np.array_equal(m, [[2, 1, 0], [0, 2, 1], [0, 0, 2]])

    @pytest.mark.parametrize("dim,lam", [(0, 1.0), (2, 0.0), (2, -1.0), (2, math.nan), (21, 1.0)])
    def test_rejects(self, dim, lam):
        with pytest.raises(InvalidInputError):
            JordanBlock(dim, lam)


class TestExpAction:
    def test_scalar(self):
        assert exp_action(JordanBlock(1, 1.0), 2.0, [3.0]) == pytest.approx([3 * math.e**2], rel=1e-15)

    def test_zero_time_is_identity(self):
        v = np.array([0.3, -1.2, 4.0])
        assert np.array_equal(exp_action(JordanBlock(3, 1.5), 0.0, v), v)

    def test_d3_top_coordinate(self):
        out = exp_action(JordanBlock(3, 1.0), 1.0, [0.0, 0.0, 1.0])
        assert out == pytest.approx(math.e * np.array([0.5, 1.0, 1.0]), rel=1e-15)

    def test_negative_time_inverts(self):
        rng = np.random.default_rng(1)
        b = JordanBlock(5, 0.5)
        v = rng.standard_normal(5)
        back = exp_action(b, -3.0, exp_action(b, 3.0, v))
        assert np.max(np.abs(back - v)) <= 1e-10 * np.max(np.abs(v))

    def test_batch(self):
        rng = np.random.default_rng(2)
        b = JordanBlock(4, 1.0)
        V = rng.standard_normal((7, 4))
        out = exp_action(b, 0.7, V)
        for row, v in zip(out, V):
            assert np.allclose(row, exp_action(b, 0.7, v), rtol=1e-15, atol=0)

    @pytest.mark.parametrize("t,v", [(math.inf, [1.0, 0.0]), (1.0, [math.nan, 0.0])])
    def test_non_finite(self, t, v):
        with pytest.raises(InvalidInputError):
            exp_action(JordanBlock(2, 1.0), t, v)

    def test_semigroup(self):
        rng = np.random.default_rng(3)
        for d in range(1, 9):
            for lam in (0.5, 1.0, 2.0):
                b = JordanBlock(d, lam)
                t, s = rng.uniform(-5, 5, 2)
                v = rng.standard_normal(d)
                lhs = exp_action(b, t + s, v)
                rhs = exp_action(b, t, exp_action(b, s, v))
                assert np.max(np.abs(lhs - rhs)) <= 1e-10 * np.max(np.abs(lhs))

    def test_exp_matrix_matches_expm(self):
        for d in (1, 3, 6):
            b = JordanBlock(d, 1.3)
            assert np.allclose(exp_matrix(b, -2.1), expm(-2.1 * b.matrix()), rtol=1e-13, atol=0)


class TestLimitCovariance:
    def test_scalar_cases(self):
        assert limit_noise_covariance(JordanBlock(1, 1.0), [[1.0]])[0, 0] == pytest.approx(0.5, rel=1e-15)
        assert limit_noise_covariance(JordanBlock(1, 2.0), [[4.0]])[0, 0] == pytest.approx(1.0, rel=1e-15)

    def test_d2_identity(self):
        # hand integral: exp(-As) exp(-A^T s) = e^{-2s} [[1+s^2, -s], [-s, 1]]
        cov = limit_noise_covariance(JordanBlock(2, 1.0), np.eye(2))
        assert np.max(np.abs(cov - np.array([[0.75, -0.25], [-0.25, 0.5]]))) < 1e-12

    def test_matches_quadrature(self):
        rng = np.random.default_rng(4)
        for d in (2, 3, 4):
            b = JordanBlock(d, rng.choice([0.5, 1.0, 2.0]))
            a0 = random_psd(rng, d)
            ref = quad_cov(b, a0, 80.0 / b.lam)
            got = limit_noise_covariance(b, a0)
            assert np.max(np.abs(got - ref)) <= 1e-8 * np.max(np.abs(ref))

    def test_symmetric_psd(self):
        rng = np.random.default_rng(5)
        cov = limit_noise_covariance(JordanBlock(5, 0.7), random_psd(rng, 5, rank=2))
        assert np.max(np.abs(cov - cov.T)) < 1e-12
        assert np.min(np.linalg.eigvalsh(cov)) > -1e-10

    def test_rejects_asymmetric(self):
        with pytest.raises(InvalidInputError):
            limit_noise_covariance(JordanBlock(2, 1.0), [[1.0, 0.1], [0.0, 1.0]])

    def test_rejects_wrong_shape(self):
        with pytest.raises(InvalidInputError):
            limit_noise_covariance(JordanBlock(2, 1.0), np.eye(3))


class TestFiniteCovariance:
    def test_zero_horizon(self):
        assert np.array_equal(finite_noise_covariance(JordanBlock(3, 1.0), np.eye(3), 0.0), np.zeros((3, 3)))

    def test_scalar_hand_value(self):
        got = finite_noise_covariance(JordanBlock(1, 1.0), [[1.0]], math.log(2) / 2)
        assert got[0, 0] == pytest.approx(0.25, rel=1e-14)

    @pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
    def test_long_horizon_limit(self, lam):
        rng = np.random.default_rng(6)
        b = JordanBlock(4, lam)
        a0 = random_psd(rng, 4)
        lim = limit_noise_covariance(b, a0)
        assert np.max(np.abs(finite_noise_covariance(b, a0, 50.0 / lam) - lim)) < 1e-12 * max(1, np.max(np.abs(lim)))
        assert np.max(np.abs(finite_noise_covariance(b, a0, 60.0 / lam) - lim)) < 1e-10

    @pytest.mark.parametrize("delta", [1e-4, 1e-2, 0.7, 3.0])
    def test_matches_quadrature(self, delta):
        rng = np.random.default_rng(7)
        b = JordanBlock(3, 1.0)
        a0 = random_psd(rng, 3)
        ref = quad_cov(b, a0, delta)
        got = finite_noise_covariance(b, a0, delta)
        assert np.max(np.abs(got - ref)) <= 1e-9 * np.max(np.abs(ref))

    def test_negative_delta(self):
        with pytest.raises(InvalidInputError):
            finite_noise_covariance(JordanBlock(2, 1.0), np.eye(2), -1e-3)


class TestFactor:
    def test_identity_and_diagonal(self):
        assert np.array_equal(cholesky_or_psd_factor(np.eye(3)), np.eye(3))
        assert np.allclose(cholesky_or_psd_factor([[4.0, 0.0], [0.0, 9.0]]), [[2.0, 0.0], [0.0, 3.0]])

    def test_multiply_back(self):
        cov = np.array([[0.75, -0.25], [-0.25, 0.5]])
        L = cholesky_or_psd_factor(cov)
        assert np.allclose(L, np.tril(L))
        assert np.max(np.abs(L @ L.T - cov)) < 1e-12

    def test_rank_deficient(self):
        rng = np.random.default_rng(8)
        cov = random_psd(rng, 4, rank=2)
        L = cholesky_or_psd_factor(cov)
        assert np.linalg.norm(L @ L.T - cov) < 1e-10
        assert np.allclose(L, np.tril(L))

    def test_zero_matrix(self):
        assert np.array_equal(cholesky_or_psd_factor(np.zeros((2, 2))), np.zeros((2, 2)))

    def test_indefinite(self):
        with pytest.raises(NumericDomainError):
            cholesky_or_psd_factor([[1.0, 0.0], [0.0, -1e-3]])
