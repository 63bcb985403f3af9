import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fedtdd.numerics import (
    ContractError,
    GaussianMoments,
    InsufficientDataError,
    fft_pow2,
    frechet_distance,
    gaussian_moments,
    naive_dft,
    next_pow2,
    rfft,
    rfft_adjoint,
    spd_sqrt,
)

reals = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


class TestRfft:
    def test_constant(self):
        c = 1.7
        spec = rfft(np.full(4, c))
        assert spec[0] == pytest.approx(4 * c)
        np.testing.assert_allclose(spec[1:], 0, atol=1e-15)

    def test_impulse(self):
        np.testing.assert_allclose(rfft(np.array([1.0, 0, 0, 0])), np.ones(3), atol=1e-15)

    def test_matches_naive_dft(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(200, 24))
        fast = rfft(x)
        assert fast.shape == (200, 17)
        err = max(np.abs(fast[i] - naive_dft(x[i])).max() for i in range(200))
        assert err < 1e-9

    def test_padded_length(self):
        assert [next_pow2(n) for n in (1, 2, 3, 24, 32, 33)] == [1, 2, 4, 32, 32, 64]
        assert rfft(np.ones(24)).shape == (17,)
        assert rfft(np.ones(1)).shape == (1,)

    def test_real_dc_and_nyquist(self):
        spec = rfft(np.random.default_rng(1).normal(size=24))
        assert spec[0].imag == pytest.approx(0, abs=1e-12)
        assert spec[-1].imag == pytest.approx(0, abs=1e-12)

    def test_non_power_of_two_rejected(self):
        with pytest.raises(ValueError):
            fft_pow2(np.ones(6))

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(1, 40), a=reals, b=reals, seed=st.integers(0, 2 ** 32 - 1))
    def test_linearity(self, n, a, b, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=n), rng.normal(size=n)
        assert np.abs(rfft(a * x + b * y) - a * rfft(x) - b * rfft(y)).max() < 1e-9

    @settings(max_examples=50, deadline=None)
    @given(x=arrays(float, st.integers(1, 64), elements=st.floats(-10, 10)))
    def test_parseval(self, x):
        n = next_pow2(len(x))
        half = rfft(x)
        full = np.concatenate([half, np.conj(half[1:n - n // 2][::-1])]) if n > 1 else half
        assert len(full) == n
        assert abs(np.sum(x ** 2) - np.sum(np.abs(full) ** 2) / n) < 1e-8 * max(1, np.sum(x ** 2))

    def test_adjoint_identity(self):
        rng = np.random.default_rng(2)
        for length in (1, 5, 24, 32):
            x = rng.normal(size=length)
            n = next_pow2(length)
            y = rng.normal(size=n // 2 + 1) + 1j * rng.normal(size=n // 2 + 1)
            lhs = np.real(np.vdot(y, rfft(x)))
            rhs = x @ rfft_adjoint(y, length)
            assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


class TestMoments:
    def test_two_points(self):
        g = gaussian_moments(np.array([[0.0, 0.0], [2.0, 2.0]]))
        np.testing.assert_allclose(g.mean, [1, 1])
        np.testing.assert_allclose(g.cov, [[2, 2], [2, 2]])

    def test_identical_samples(self):
        g = gaussian_moments(np.tile([3.0, -1.0, 2.0], (5, 1)))
        np.testing.assert_array_equal(g.cov, np.zeros((3, 3)))

    def test_too_few(self):
        with pytest.raises(InsufficientDataError):
            gaussian_moments(np.ones((1, 3)))

    def test_monte_carlo(self):
        rng = np.random.default_rng(3)
        mean = np.array([1.0, -2.0, 3.0])
        a = rng.normal(size=(3, 3))
        cov = a @ a.T + np.eye(3)
        g = gaussian_moments(rng.multivariate_normal(mean, cov, size=10_000))
        assert np.abs(g.mean - mean).max() < 0.05 * np.abs(mean).max()
        assert np.abs(g.cov - cov).max() < 0.05 * np.abs(cov).max()


class TestSpdSqrt:
    def test_identity(self):
        np.testing.assert_allclose(spd_sqrt(np.eye(4)), np.eye(4), atol=1e-14)

    def test_diag(self):
        np.testing.assert_allclose(spd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)

    def test_reconstruction(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            a = rng.normal(size=(5, 5))
            m = a @ a.T
            s = spd_sqrt(m)
            assert np.linalg.norm(s @ s - m) < 1e-6
            np.testing.assert_allclose(s, s.T, atol=1e-12)

    def test_negative_eigen_clipped(self):
        s = spd_sqrt(np.diag([1.0, -1e-10]))
        np.testing.assert_allclose(s, np.diag([1.0, 0.0]))

    def test_asymmetric_rejected(self):
        with pytest.raises(ContractError):
            spd_sqrt(np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestFrechet:
    def test_self_zero(self):
        rng = np.random.default_rng(5)
        g = gaussian_moments(rng.normal(size=(50, 4)))
        assert frechet_distance(g, g) < 1e-6

    def test_mean_shift(self):
        cov = np.array([[2.0, 0.3], [0.3, 1.0]])
        v = np.array([1.5, -0.5])
        a = GaussianMoments(np.zeros(2), cov)
        b = GaussianMoments(v, cov)
        assert frechet_distance(a, b) == pytest.approx(v @ v, abs=1e-6)

    def test_one_dim_closed_form(self):
        a = GaussianMoments(np.array([0.0]), np.array([[1.0]]))
        b = GaussianMoments(np.array([1.0]), np.array([[4.0]]))
        assert abs(frechet_distance(a, b) - 2.0) < 1e-9

    def test_commuting_covariances(self):
        # diagonal covariances: distance reduces to |dmu|^2 + sum (sa - sb)^2
        sa, sb = np.array([1.0, 2.0, 0.5]), np.array([3.0, 1.0, 0.5])
        a = GaussianMoments(np.zeros(3), np.diag(sa ** 2))
        b = GaussianMoments(np.ones(3), np.diag(sb ** 2))
        assert frechet_distance(a, b) == pytest.approx(3 + np.sum((sa - sb) ** 2), abs=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            frechet_distance(GaussianMoments(np.zeros(2), np.eye(2)),
                             GaussianMoments(np.zeros(3), np.eye(3)))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1), d=st.integers(1, 6))
    def test_symmetric_and_nonnegative(self, seed, d):
        rng = np.random.default_rng(seed)
        a = gaussian_moments(rng.normal(size=(d + 5, d)))
        b = gaussian_moments(rng.normal(size=(d + 5, d)) * 2 + 1)
        ab, ba = frechet_distance(a, b), frechet_distance(b, a)
        assert ab >= 0
        assert abs(ab - ba) < 1e-6 * max(1.0, ab)
