import numpy as np
import pytest
from hypothesis import given, strategies as st

from regadmm.errors import DimensionError, NonConvergenceError, SingularSystemError
from regadmm.hpe import (AffineOperator, ExactAffineOracle, HpeParams, check_reldist, hpe_run,
                         regularized_solution_affine)
from regadmm.operators import PsdOperator


def _scalar(g, h=0.0):
    return AffineOperator(np.array([[g]]), np.array([h]))


def _random_pd_affine(rng, dim):
    L = rng.standard_normal((dim, dim))
    skew = rng.standard_normal((dim, dim))
    # monotone but not symmetric: PD symmetric part plus a skew part
    G = L.T @ L + 0.1 * np.eye(dim) + (skew - skew.T)
    return AffineOperator(G, rng.standard_normal(dim))


def test_first_exact_step():
    T, M = _scalar(1.0), PsdOperator.identity(1)
    z, zt, eta = ExactAffineOracle(T, M).produce(np.array([10.0]), 1.0, np.array([10.0]))
    assert z[0] == pytest.approx(20 / 3, abs=1e-14)
    assert np.array_equal(z, zt) and eta == 0.0


def test_fixed_point_start_terminates():
    T = _scalar(3.0, -6.0)  # zero at z = 2
    z0 = np.array([2.0])
    out = hpe_run(ExactAffineOracle(T, PsdOperator.identity(1)), z0, PsdOperator.identity(1),
                  HpeParams(rho=1e-8))
    assert out.cycles == 1 and out.total_iters == 1
    assert np.allclose(out.z_tilde, z0) and np.linalg.norm(out.v) <= 1e-8


def _hand_recursion(g, z0, rho, warm=True):
    """Exact proximal recursion for T(z) = g z, M = 1, written out by hand."""
    mu, z_prev, iters = 1.0, z0, []
    while True:
        while True:
            z = (z_prev + mu * z0) / (g + 1 + mu)
            iters.append(z)
            step = abs(z_prev - z)
            v = (z_prev - z) - mu * (z - z0)
            z_prev = z
            if step <= rho / 2:
                break
        if abs(v) <= rho:
            return z, v, mu, iters
        mu /= 2
        if not warm:
            z_prev = z0


@pytest.mark.parametrize("warm", [True, False])
def test_matches_hand_rolled_recursion(warm):
    z_h, v_h, mu_h, iters_h = _hand_recursion(2.0, 1.0, 0.5, warm)
    out = hpe_run(ExactAffineOracle(_scalar(2.0), PsdOperator.identity(1)), np.array([1.0]),
                  PsdOperator.identity(1), HpeParams(rho=0.5, warm_start=warm), record=True)
    assert out.z_tilde[0] == pytest.approx(z_h, abs=1e-15)
    assert out.v[0] == pytest.approx(v_h, abs=1e-15)
    assert out.mu == mu_h and out.total_iters == len(iters_h)
    assert np.allclose([s.z[0] for s in out.history], iters_h, atol=1e-15)


def test_tight_tolerance_recursion_matches():
    z_h, v_h, mu_h, iters_h = _hand_recursion(2.0, 1.0, 1e-6)
    out = hpe_run(ExactAffineOracle(_scalar(2.0), PsdOperator.identity(1)), np.array([1.0]),
                  PsdOperator.identity(1), HpeParams(rho=1e-6))
    assert out.total_iters == len(iters_h) and out.mu == mu_h
    assert abs(out.z_tilde[0]) <= 1e-5


def test_regularized_solution_examples(rng):
    I = np.eye(1)
    assert regularized_solution_affine(_scalar(1.0), [10.0], 1.0, I)[0] == pytest.approx(5.0)
    G = rng.standard_normal((4, 4))
    G = G.T @ G
    z0 = rng.standard_normal(4)
    T = AffineOperator(G, -G @ z0)
    assert np.allclose(regularized_solution_affine(T, z0, 0.3, np.eye(4)), z0, atol=1e-12)
    for _ in range(20):
        T = _random_pd_affine(rng, 5)
        M = PsdOperator.diagonal(rng.uniform(0.5, 2, 5))
        mu = rng.uniform(0.01, 2)
        z0 = rng.standard_normal(5)
        z = regularized_solution_affine(T, z0, mu, M)
        assert np.linalg.norm(T(z) + mu * M.apply(z - z0)) <= 1e-10 * (1 + np.linalg.norm(z))


def test_regularized_solution_dimension_mismatch():
    with pytest.raises(DimensionError):
        regularized_solution_affine(_scalar(1.0), np.zeros(2), 1.0, np.eye(1))


def test_regularized_solution_singular():
    T = AffineOperator(np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(SingularSystemError):
        regularized_solution_affine(T, np.zeros(2), 1.0, PsdOperator.zero(2))


def test_check_reldist_examples():
    assert check_reldist(_scalar(1.0), np.array([10.0]), 1.0, np.eye(1))
    T = _scalar(2.0, -4.0)
    assert check_reldist(T, np.array([2.0]), 0.5, np.eye(1))


def test_check_reldist_random_pd(rng):
    for _ in range(50):
        dim = int(rng.integers(1, 8))
        T = _random_pd_affine(rng, dim)
        M = PsdOperator.dense(np.diag(rng.uniform(0.2, 3, dim)))
        assert check_reldist(T, rng.standard_normal(dim), rng.uniform(1e-4, 2), M)


def test_proximal_point_degeneration(rng):
    for _ in range(10):
        dim = 4
        T = _random_pd_affine(rng, dim)
        M = PsdOperator.identity(dim)
        out = hpe_run(ExactAffineOracle(T, M), rng.standard_normal(dim), M,
                      HpeParams(eta0=0.0, sigma=0.0, rho=1e-8), record=True)
        assert max(np.abs(s.z - s.z_tilde).max() for s in out.history) <= 1e-12


def test_mu_is_dyadic_and_v_recomputed(rng):
    T = _random_pd_affine(rng, 3)
    M = PsdOperator.identity(3)
    z0 = rng.standard_normal(3)
    out = hpe_run(ExactAffineOracle(T, M), z0, M, HpeParams(rho=1e-7), record=True)
    for s in out.history:
        assert s.mu == 2.0 ** -(s.cycle - 1)
    assert out.mu == 2.0 ** -(out.cycles - 1)
    last = out.history[-1]
    v = last.z_prev - last.z - last.mu * (last.z_tilde - z0)
    assert np.array_equal(v, out.v) and M.norm(v) <= 1e-7
    assert sum(out.cycle_iters) == out.total_iters == len(out.history)


def test_inner_loop_contracts_towards_regularized_zero(rng):
    for _ in range(10):
        T = _random_pd_affine(rng, 4)
        M = PsdOperator.diagonal(rng.uniform(0.5, 2, 4))
        z0 = rng.standard_normal(4)
        out = hpe_run(ExactAffineOracle(T, M), z0, M, HpeParams(rho=1e-9), record=True)
        for cycle in range(1, out.cycles + 1):
            steps = [s for s in out.history if s.cycle == cycle]
            zbar = regularized_solution_affine(T, z0, steps[0].mu, M)
            d = [M.norm(s.z - zbar) for s in steps]
            assert all(b <= a + 1e-13 for a, b in zip(d, d[1:]))


def test_nonconvergence_carries_trace():
    with pytest.raises(NonConvergenceError) as err:
        hpe_run(ExactAffineOracle(_scalar(1e-3), PsdOperator.identity(1)), np.array([100.0]),
                PsdOperator.identity(1), HpeParams(rho=1e-12, max_inner_iters=3), record=True)
    assert len(err.value.trace) == 3
    with pytest.raises(NonConvergenceError):
        hpe_run(ExactAffineOracle(_scalar(1e-3), PsdOperator.identity(1)), np.array([100.0]),
                PsdOperator.identity(1), HpeParams(rho=1e-12, max_cycles=2))


@pytest.mark.parametrize("kw", [{"eta0": -1}, {"sigma": 1.0}, {"tau": 0.0}, {"rho": 0.0},
                                {"mu0": 0.5}])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        HpeParams(**kw)


@given(g=st.floats(0.01, 10), z0=st.floats(-100, 100), mu=st.floats(1e-6, 1))
def test_reldist_scalar_property(g, z0, mu):
    assert check_reldist(_scalar(g, 0.0), np.array([z0]), mu, np.eye(1))
