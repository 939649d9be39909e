import numpy as np
import pytest

from obskit.linear_delay import (
    HeterogeneousTaps,
    LinearDelaySystem,
    UniformTaps,
    UnobservableError,
    analyze,
    delayed_observability_matrix,
    effective_output_matrix,
    heterogeneous_rank_bound,
    load_system,
    reconstruct_initial_state,
    simulate,
    tstep_observability,
    uniform_factorization,
)
from obskit.numerics import numeric_rank


def double_integrator(ts=0.1):
    return np.array([[1.0, ts], [0.0, 1.0]])


def differencing_system(ts=0.1):
    c = np.array([[1.0, 0.0]])
    return LinearDelaySystem(A=double_integrator(ts), B=np.zeros((2, 1)), taps=(c, -c))


def random_system(rng, n, m, p, window):
    a = rng.uniform(-1.0, 1.0, size=(n, n)) / n
    b = rng.uniform(-1.0, 1.0, size=(n, m))
    taps = tuple(rng.uniform(-1.0, 1.0, size=(p, n)) for _ in range(window + 1))
    return LinearDelaySystem(A=a, B=b, taps=taps)


class TestTstepObservability:
    def test_identity_dynamics(self):
        obs = tstep_observability(np.eye(2), np.array([[1.0, 0.0]]), 2)
        assert np.allclose(obs, [[1.0, 0.0], [1.0, 0.0]])
        assert numeric_rank(obs) == 1

    def test_double_integrator(self):
        obs = tstep_observability(double_integrator(), np.array([[1.0, 0.0]]), 2)
        assert np.allclose(obs, [[1.0, 0.0], [1.0, 0.1]])
        assert numeric_rank(obs) == 2

    def test_full_output(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(4, 4))
        assert np.allclose(tstep_observability(a, np.eye(4), 1), np.eye(4))

    def test_rejects_bad_T(self):
        with pytest.raises(ValueError):
            tstep_observability(np.eye(2), np.eye(2), 0)


class TestEffectiveOutputMatrix:
    def test_differencing_double_integrator(self):
        # the delayed differencing output collapses to [0, Ts]
        for ts in (0.01, 0.1, 1.0):
            cbar = effective_output_matrix(differencing_system(ts))
            assert np.allclose(cbar, [[0.0, ts]])

    def test_no_delay_is_c0(self):
        c = np.array([[1.0, 2.0]])
        sys = LinearDelaySystem(A=double_integrator(), B=np.zeros((2, 0)), taps=(c,))
        assert np.allclose(effective_output_matrix(sys), c)

    def test_zero_taps(self):
        z = np.zeros((1, 2))
        sys = LinearDelaySystem(A=double_integrator(), B=np.zeros((2, 0)), taps=(z, z))
        assert np.allclose(effective_output_matrix(sys), 0.0)


class TestDelayedObservabilityMatrix:
    def test_differencing_rank_deficient_for_any_ts(self):
        for ts in (0.01, 0.1, 1.0):
            obs = delayed_observability_matrix(differencing_system(ts))
            assert np.allclose(obs, [[0.0, ts], [0.0, ts]])
            assert numeric_rank(obs) == 1

    def test_undelayed_identity_tap_full_rank(self):
        sys = LinearDelaySystem(A=double_integrator(), B=np.zeros((2, 0)),
                                taps=(np.eye(2),))
        assert numeric_rank(delayed_observability_matrix(sys)) == 2

    def test_no_delay_matches_classical_definition(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = rng.normal(size=(3, 3))
            c = rng.normal(size=(2, 3))
            sys = LinearDelaySystem(A=a, B=np.zeros((3, 0)), taps=(c,))
            assert numeric_rank(delayed_observability_matrix(sys)) == \
                numeric_rank(tstep_observability(a, c, 3))


class TestUniformFactorization:
    def test_differencing_polynomial_singular(self):
        uni = UniformTaps(C=np.array([[1.0, 0.0]]), gammas=[1.0, -1.0])
        for ts in (0.01, 0.1, 1.0):
            res = uniform_factorization(double_integrator(ts), uni)
            assert res.poly_singular
            assert res.rank_delayed == 1

    def test_pure_delay_of_nonsingular_dynamics(self):
        rng = np.random.default_rng(4)
        a = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
        c = rng.normal(size=(1, 3))
        uni = UniformTaps(C=c, gammas=[1.0, 0.0, 0.0])
        res = uniform_factorization(a, uni)
        assert np.allclose(res.poly, a @ a)
        if not res.poly_singular:
            assert res.rank_delayed == res.rank_delayfree

    def test_factorization_identity_random(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = rng.integers(2, 7)
            window = rng.integers(0, 7)
            a = rng.uniform(-1.0, 1.0, size=(n, n))
            c = rng.uniform(-1.0, 1.0, size=(rng.integers(1, 3), n))
            gammas = rng.uniform(-1.0, 1.0, size=window + 1)
            res = uniform_factorization(a, UniformTaps(C=c, gammas=gammas))
            if not res.poly_singular:
                assert res.rank_delayed == res.rank_delayfree

    def test_requires_nonzero_gammas(self):
        with pytest.raises(ValueError):
            UniformTaps(C=np.eye(2), gammas=[0.0, 0.0])


class TestHeterogeneousRankBound:
    def test_uniform_special_case_matches(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(3, 3))
        c = rng.normal(size=(2, 3))
        gammas = [0.7, -0.3]
        het = HeterogeneousTaps(C=c, gains=tuple(g * np.eye(2) for g in gammas))
        uni = UniformTaps(C=c, gammas=gammas)
        res_h = heterogeneous_rank_bound(a, het)
        res_u = uniform_factorization(a, uni)
        assert res_h.rank_delayed == res_u.rank_delayed
        assert res_h.rank_delayfree == res_u.rank_delayfree

    def test_unobservable_stays_unobservable(self):
        # block-triangular dynamics with output blind to the second block
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = np.zeros((4, 4))
            a[:2, :2] = rng.normal(size=(2, 2))
            a[2:, :] = rng.normal(size=(2, 4))
            c = np.hstack([rng.normal(size=(2, 2)), np.zeros((2, 2))])
            gains = tuple(np.diag(rng.normal(size=2)) for _ in range(3))
            res = heterogeneous_rank_bound(a, HeterogeneousTaps(C=c, gains=gains))
            assert res.bound_holds
            assert res.rank_delayed < 4

    def test_pure_delay_preserves_observable(self):
        a = double_integrator()
        c = np.array([[1.0, 0.0]])
        gains = (np.eye(1), np.zeros((1, 1)))
        res = heterogeneous_rank_bound(a, HeterogeneousTaps(C=c, gains=gains))
        assert res.rank_delayed == 2

    def test_monotone_rank_random(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            n = rng.integers(2, 6)
            p = rng.integers(1, 3)
            a = rng.uniform(-1.0, 1.0, size=(n, n))
            c = rng.uniform(-1.0, 1.0, size=(p, n))
            gains = tuple(np.diag(rng.uniform(-1.0, 1.0, size=p))
                          for _ in range(rng.integers(1, 5)))
            res = heterogeneous_rank_bound(a, HeterogeneousTaps(C=c, gains=gains))
            assert res.bound_holds


class TestReconstruction:
    def test_round_trip_zero_inputs(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            sys = random_system(rng, n=3, m=1, p=2, window=2)
            x0 = rng.normal(size=3)
            inputs = np.zeros((sys.window + sys.n - 1, 1))
            outputs = simulate(sys, x0, inputs, sys.n)
            x_hat, residual = reconstruct_initial_state(sys, outputs, inputs)
            assert np.linalg.norm(x_hat - x0) <= 1e-9 * max(1.0, np.linalg.norm(x0))
            assert residual <= 1e-9

    def test_round_trip_random_inputs(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            sys = random_system(rng, n=3, m=2, p=2, window=3)
            x0 = rng.normal(size=3)
            inputs = rng.normal(size=(sys.window + sys.n - 1, 2))
            outputs = simulate(sys, x0, inputs, sys.n)
            x_hat, residual = reconstruct_initial_state(sys, outputs, inputs)
            assert np.linalg.norm(x_hat - x0) <= 1e-9 * max(1.0, np.linalg.norm(x0))
            assert residual <= 1e-9

    def test_no_delay_reduces_to_classical_inversion(self):
        rng = np.random.default_rng(11)
        a = double_integrator()
        sys = LinearDelaySystem(A=a, B=np.zeros((2, 1)),
                                taps=(np.array([[1.0, 0.0]]),))
        x0 = rng.normal(size=2)
        inputs = np.zeros((1, 1))
        outputs = simulate(sys, x0, inputs, 2)
        x_hat, _ = reconstruct_initial_state(sys, outputs, inputs)
        assert np.allclose(x_hat, x0, atol=1e-10)

    def test_estimate_independent_of_inputs(self):
        # same initial state, two input records: identical reconstruction
        rng = np.random.default_rng(12)
        sys = random_system(rng, n=4, m=1, p=2, window=2)
        x0 = rng.normal(size=4)
        estimates = []
        for _ in range(2):
            inputs = rng.normal(size=(sys.window + sys.n - 1, 1))
            outputs = simulate(sys, x0, inputs, sys.n)
            x_hat, _ = reconstruct_initial_state(sys, outputs, inputs)
            estimates.append(x_hat)
        assert np.allclose(estimates[0], estimates[1], atol=1e-9)

    def test_unobservable_raises(self):
        sys = differencing_system()
        outputs = np.zeros((2, 1))
        inputs = np.zeros((2, 1))
        with pytest.raises(UnobservableError):
            reconstruct_initial_state(sys, outputs, inputs)

    def test_wrong_history_length_raises(self):
        sys = differencing_system()
        with pytest.raises(ValueError):
            simulate(sys, np.zeros(2), np.zeros((5, 1)), 2)


class TestLoadAndAnalyze:
    def test_load_from_dict(self):
        doc = {"A": [[1.0, 0.1], [0.0, 1.0]], "B": [[0.0], [0.1]],
               "taps": [[[1.0, 0.0]], [[-1.0, 0.0]]]}
        sys = load_system(doc)
        assert sys.window == 1
        assert sys.m == 1

    def test_load_from_file(self, tmp_path):
        import json
        path = tmp_path / "sys.json"
        path.write_text(json.dumps({"A": [[0.5]], "taps": [[[1.0]]]}))
        sys = load_system(str(path))
        assert sys.n == 1 and sys.m == 0

    def test_analyze_verdict(self):
        report = analyze(differencing_system())
        assert report["rank_delayed"] == 1
        assert report["rank_delayfree_c0"] == 2
        assert report["observable"] is False

    def test_missing_keys_rejected(self):
        with pytest.raises(ValueError):
            load_system({"A": [[1.0]]})


def test_tap_shape_validation():
    with pytest.raises(ValueError):
        LinearDelaySystem(A=np.eye(2), B=np.zeros((2, 0)),
                          taps=(np.ones((1, 2)), np.ones((2, 2))))
    with pytest.raises(ValueError):
        LinearDelaySystem(A=np.eye(2), B=np.zeros((3, 0)), taps=(np.ones((1, 2)),))
