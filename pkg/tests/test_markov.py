import numpy as np
import pytest
import scipy.sparse as sp

from tclcoord import (CflViolationError, OFF, PolicyPair, TclParams,
                      apply_policy, build_grid, build_rate_matrix, drift,
                      factorize, gamma_for_timestep, thermostat_policy,
                      transition_matrix)
from tclcoord.errors import PolicyStructureError
from tclcoord.generator import RateMatrix
from tclcoord.markov import cfl_bound_minutes, selection_matrix


@pytest.fixture
def g():
    return build_grid(20.0, 22.0, q=10, m=2)


@pytest.fixture
def params():
    return TclParams(r_th=2.0, c_th=1.0, p0=5.5, cop=2.5, sigma2=0.05,
                     setpoint=21.0)


def _rate(g, params, theta_a=32.0, dt=1.0):
    return build_rate_matrix(g, params, theta_a, gamma_for_timestep(dt, g, params))


def test_zero_generator_gives_identity(g):
    rm = RateMatrix(matrix=sp.csr_matrix((24, 24)), alpha=0.0, diffusion=0.0,
                    grid=g)
    p = transition_matrix(rm, 1.0)
    np.testing.assert_array_equal(p.matrix, np.eye(24))


def test_cfl_bound_pure_advection(g):
    p = TclParams(r_th=2.0, c_th=1.0, p0=5.5, cop=2.5, sigma2=0.0, setpoint=21.0)
    rm = build_rate_matrix(g, p, 32.0, gamma=1e-6)
    # fastest interior speed wins: dt <= delta_lambda / max |f| at an
    # internal CV edge (the outermost edges carry no upwind flux)
    speeds = [abs(drift(t, m, 32.0, p))
              for m in ("off", "on") for t in g.edges(m)[1:-1]]
    assert cfl_bound_minutes(rm) == pytest.approx(
        60.0 * g.delta_lambda / max(speeds))


def test_cfl_violation_raises(g, params):
    rm = _rate(g, params)
    bound = cfl_bound_minutes(rm)
    transition_matrix(rm, bound)  # at the bound: fine
    with pytest.raises(CflViolationError) as err:
        transition_matrix(rm, bound * 1.01)
    assert err.value.bound_minutes == pytest.approx(bound)


def test_transition_is_stochastic(g, params):
    p = transition_matrix(_rate(g, params), 1.0)
    np.testing.assert_allclose(p.matrix.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p.matrix >= 0) and np.all(p.matrix <= 1 + 1e-12)


def test_boundary_rows_deterministic(g, params):
    # alpha = 1/dt makes the sink rows of P pure switches
    p = transition_matrix(_rate(g, params), 1.0).matrix
    n = g.n_bins
    assert p[n - 1, n - 1] == 0.0
    assert p[n - 1, n + g.q] == pytest.approx(1.0)
    assert p[n, n] == 0.0
    assert p[n, g.m - 1] == pytest.approx(1.0)


def test_thermostat_policy_structure(g):
    ts = thermostat_policy(g)
    np.testing.assert_array_equal(ts.kappa_on, np.eye(g.n_bins)[g.n_bins - 1])
    np.testing.assert_array_equal(ts.kappa_off, np.eye(g.n_bins)[0])


def test_policy_validation(g):
    n = g.n_bins
    ts = thermostat_policy(g)
    bad_on = ts.kappa_on.copy()
    bad_on[0] = 0.3  # bins 1..m must stay 0
    with pytest.raises(PolicyStructureError):
        PolicyPair(kappa_on=bad_on, kappa_off=ts.kappa_off, grid=g)
    bad_off = ts.kappa_off.copy()
    bad_off[g.q - 1] = 0.2  # bins q..N must stay 0
    with pytest.raises(PolicyStructureError):
        PolicyPair(kappa_on=ts.kappa_on, kappa_off=bad_off, grid=g)
    with pytest.raises(PolicyStructureError):
        PolicyPair(kappa_on=np.zeros(n), kappa_off=ts.kappa_off, grid=g)


def test_factorization_exact(g, params):
    p = transition_matrix(_rate(g, params), 1.0)
    f = factorize(p)
    phi = selection_matrix(thermostat_policy(g))
    assert np.max(np.abs(phi @ f.g - p.matrix)) < 1e-12


def test_shift_block_structure(g, params):
    f = factorize(transition_matrix(_rate(g, params), 1.0))
    m, q, n = g.m, g.q, g.n_bins
    # S_off is P_off re-read through the axis alignment shift by m-1
    assert f.s_off[m - 1, 0] == pytest.approx(f.p_off[m - 1, m - 1])
    assert np.all(f.s_off[:m - 1, :] == 0)
    assert np.all(f.s_on[q:, :] == 0)
    assert f.s_on[0, m - 1] == pytest.approx(f.p_on[0, 0])


def test_conditional_independence_entrywise(g, params):
    # each entry of P equals policy probability times motion probability
    p = transition_matrix(_rate(g, params), 1.0)
    f = factorize(p)
    ts = thermostat_policy(g)
    n = g.n_bins
    for i in range(n):  # off rows
        stay, switch = 1.0 - ts.kappa_on[i], ts.kappa_on[i]
        np.testing.assert_allclose(
            p.matrix[i], np.concatenate([stay * f.p_off[i], switch * f.s_off[i]]),
            atol=1e-14)
    for i in range(n):  # on rows
        stay, switch = 1.0 - ts.kappa_off[i], ts.kappa_off[i]
        np.testing.assert_allclose(
            p.matrix[n + i], np.concatenate([switch * f.s_on[i], stay * f.p_on[i]]),
            atol=1e-14)


def test_apply_policy_stochastic(g, params):
    f = factorize(transition_matrix(_rate(g, params), 1.0))
    kappa_on = np.zeros(g.n_bins)
    kappa_on[g.m:g.n_bins - 1] = 0.3
    kappa_on[-1] = 1.0
    kappa_off = np.zeros(g.n_bins)
    kappa_off[0] = 1.0
    kappa_off[1:g.q - 1] = 0.6
    pol = PolicyPair(kappa_on=kappa_on, kappa_off=kappa_off, grid=g)
    pk = apply_policy(f, pol)
    np.testing.assert_allclose(pk.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(pk >= -1e-15)
