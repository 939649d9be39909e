import math

import numpy as np
import pytest

from obskit.numerics import (
    IntegrationDivergedError,
    ToleranceConfig,
    central_diff_weights,
    fd_weights,
    integrate_rk4,
    numeric_rank,
    symmetric_eig,
    trapezoid_quadrature,
)


class TestIntegrateRK4:
    def test_zero_field_constant(self):
        ts, xs = integrate_rk4(lambda t, x: np.zeros(2), [1.0, 2.0], 0.0, 2.0, 0.1)
        assert np.allclose(xs, [1.0, 2.0])
        assert ts[0] == 0.0 and ts[-1] == 2.0

    def test_double_integrator_closed_form(self):
        ts, xs = integrate_rk4(lambda t, x: np.array([x[1], 0.0]), [0.0, 1.0], 0.0, 1.0, 0.01)
        assert np.allclose(xs[-1], [1.0, 1.0], atol=1e-12)

    def test_exponential_decay(self):
        # oracle: closed form exp(-1)
        ts, xs = integrate_rk4(lambda t, x: -x, [1.0], 0.0, 1.0, 1e-3)
        assert abs(xs[-1, 0] - math.exp(-1.0)) < 1e-9

    def test_final_sample_exact_with_ragged_step(self):
        ts, xs = integrate_rk4(lambda t, x: -x, [1.0], 0.0, 1.0, 0.3)
        assert ts[-1] == 1.0
        assert abs(xs[-1, 0] - math.exp(-1.0)) < 1e-4

    def test_divergence_reported_with_time(self):
        with pytest.raises(IntegrationDivergedError) as err:
            integrate_rk4(lambda t, x: x * x, [1.0], 0.0, 5.0, 0.01)
        assert err.value.t > 0.0

    def test_rejects_bad_span_and_step(self):
        with pytest.raises(ValueError):
            integrate_rk4(lambda t, x: -x, [1.0], 1.0, 0.5, 0.1)
        with pytest.raises(ValueError):
            integrate_rk4(lambda t, x: -x, [1.0], 0.0, 1.0, -0.1)

    def test_fourth_order_convergence(self):
        # halving the step must shrink the global error by at least 12x
        def solve(step):
            _, xs = integrate_rk4(lambda t, x: np.array([x[1], -x[0]]),
                                  [1.0, 0.0], 0.0, 2.0, step)
            return xs[-1]

        exact = np.array([math.cos(2.0), -math.sin(2.0)])
        err_h = np.linalg.norm(solve(0.02) - exact)
        err_h2 = np.linalg.norm(solve(0.01) - exact)
        assert err_h / err_h2 >= 12.0


class TestSymmetricEig:
    def test_identity(self):
        evals, evecs = symmetric_eig(np.eye(3))
        assert np.allclose(evals, 1.0)

    def test_diagonal_sorted_ascending(self):
        evals, evecs = symmetric_eig(np.diag([4.0, 1.0]))
        assert np.allclose(evals, [1.0, 4.0])
        assert np.allclose(np.abs(evecs), np.eye(2)[:, ::-1])

    def test_two_by_two_hand_computed(self):
        # characteristic polynomial of [[2,1],[1,2]]: (2-l)^2 - 1 = 0
        evals, _ = symmetric_eig([[2.0, 1.0], [1.0, 2.0]])
        assert np.allclose(evals, [1.0, 3.0])

    def test_reconstruction_bound(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.normal(size=(5, 5))
            w = a @ a.T
            evals, evecs = symmetric_eig(w)
            recon = evecs @ np.diag(evals) @ evecs.T
            assert np.linalg.norm(recon - w) <= 1e-10 * np.linalg.norm(w)

    def test_psd_eigenvalue_floor(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = rng.normal(size=(4, 4))
            w = a @ a.T
            evals, _ = symmetric_eig(w)
            assert evals[0] >= -1e-12 * np.linalg.norm(w)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            symmetric_eig(np.ones((2, 3)))


class TestNumericRank:
    def test_identity(self):
        assert numeric_rank(np.eye(7)) == 7

    def test_delayed_differencing_observability_matrix(self):
        for ts in (0.01, 0.1, 1.0):
            assert numeric_rank([[0.0, ts], [0.0, ts]]) == 1

    def test_outer_product(self):
        u = np.array([1.0, -2.0, 3.0])
        v = np.array([0.5, 4.0])
        assert numeric_rank(np.outer(u, v)) == 1

    def test_zero_matrix(self):
        assert numeric_rank(np.zeros((3, 3))) == 0

    def test_invariance_under_permutation_and_conditioning(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n, r = 6, 3
            m = rng.normal(size=(n, r)) @ rng.normal(size=(r, n))
            perm = rng.permutation(n)
            assert numeric_rank(m[perm]) == r
            assert numeric_rank(m[:, perm]) == r
            good = np.eye(n) + 0.1 * rng.normal(size=(n, n))
            assert numeric_rank(m @ good) == r

    def test_rejects_nonpositive_rtol(self):
        with pytest.raises(ValueError):
            numeric_rank(np.eye(2), rtol=0.0)


class TestTrapezoid:
    def test_constant(self):
        assert trapezoid_quadrature(np.ones(11), 0.1) == pytest.approx(1.0)

    def test_linear_exact(self):
        assert trapezoid_quadrature([0.0, 0.5, 1.0], 0.5) == pytest.approx(0.5)

    def test_quadratic(self):
        # closed form 1/3; composite trapezoid carries +h^2/6 bias
        grid = np.arange(101) * 0.01
        value = trapezoid_quadrature(grid**2, 0.01)
        assert value == pytest.approx(0.33335, abs=1e-4)

    def test_matrix_valued(self):
        samples = np.stack([np.eye(2) * t for t in (0.0, 0.5, 1.0)])
        out = trapezoid_quadrature(samples, 0.5)
        assert np.allclose(out, 0.5 * np.eye(2))

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            trapezoid_quadrature([1.0], 0.1)


class TestStencils:
    def test_first_derivative_weights(self):
        _, w = central_diff_weights(1)
        assert np.allclose(w, [-0.5, 0.0, 0.5])

    def test_third_derivative_weights(self):
        _, w = central_diff_weights(3)
        assert np.allclose(w, [-0.5, 1.0, 0.0, -1.0, 0.5])

    def test_weights_differentiate_exponential(self):
        h = 0.01
        for order in range(1, 6):
            offsets, w = central_diff_weights(order)
            approx = (w @ np.exp(offsets * h)) / h**order
            assert approx == pytest.approx(1.0, rel=1e-3)

    def test_fd_weights_rejects_short_stencils(self):
        with pytest.raises(ValueError):
            fd_weights(3, [-1, 0, 1])


def test_tolerance_config_validation():
    with pytest.raises(ValueError):
        ToleranceConfig(rank_rtol=-1.0)
    cfg = ToleranceConfig()
    assert cfg.rank_rtol == 1e-10
