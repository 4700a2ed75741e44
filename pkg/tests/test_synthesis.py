import numpy as np
import pytest

from tclcoord import (PlanProblem, SolverCapError, TclParams, build_grid,
                      extract_policies, models_for_trajectory, plan,
                      thermostat_policy, thermostat_stationary,
                      verify_equivalence)
from tclcoord.errors import ConstraintResidualError, InvalidParameterError
from tclcoord.expanded import expand_policy, step
from tclcoord import synthesis

TAU = 5
T = 30
N_TCL = 20000


@pytest.fixture(scope="module")
def setup():
    g = build_grid(20.0, 22.0, q=10, m=2)
    params = TclParams(r_th=2.0, c_th=1.0, p0=5.5, cop=2.5, sigma2=0.05,
                       setpoint=21.0)
    theta = np.full(T, 32.0)
    models = models_for_trajectory(g, params, 1.0, TAU, theta, N_TCL * 5.5)
    nu0 = thermostat_stationary(models[0])
    return g, params, theta, models, nu0


def _problem(setup, r_ba, **kw):
    g, params, theta, models, nu0 = setup
    return PlanProblem(grid=g, params=params, dt_minutes=1.0, tau=TAU,
                       n_tcl=N_TCL, theta_a=theta, r_ba=r_ba, nu0=nu0, **kw)


def _thermostat_power(setup):
    g, params, theta, models, nu0 = setup
    phi = expand_policy(thermostat_policy(g), TAU)
    half = g.n_bins * (TAU + 1)
    nu, out = nu0.copy(), []
    for k in range(T):
        out.append(N_TCL * 5.5 * nu[half:].sum())
        nu = step(nu, phi, models[k])
    return np.array(out)


def test_variable_count(setup):
    g = setup[0]
    qp = synthesis.assemble(_problem(setup, np.full(T, 44_000.0)), setup[3])
    assert qp.n_vars == 2 * g.n_bins * T * (TAU + 3)


def test_thermostat_point_feasible(setup):
    qp = synthesis.assemble(_problem(setup, np.full(T, 44_000.0)), setup[3])
    x = synthesis.thermostat_point(qp)
    ax = qp.a @ x
    assert float(np.maximum(qp.lower - ax, ax - qp.upper).max()) < 1e-9


def test_feasible_target_costs_nothing(setup):
    r = _thermostat_power(setup)
    sol = plan(_problem(setup, r), setup[3])
    assert sol.cost == pytest.approx(0.0, abs=1e-8)
    rep = verify_equivalence(sol, _problem(setup, r), setup[3])
    assert rep.rollout_cost == pytest.approx(0.0, abs=1e-8)


def test_infeasible_targets_accepted_and_reference_bounded(setup):
    r = np.full(T, -50_000.0)
    r[T // 2:] = 400_000.0  # far above the fleet maximum
    sol = plan(_problem(setup, r), setup[3])
    assert np.all(sol.reference >= -1e-6)
    assert np.all(sol.reference <= N_TCL * 5.5 + 1e-6)
    assert sol.cost > 0


def test_rollout_matches_qp(setup):
    r = _thermostat_power(setup) * 0.9
    prob = _problem(setup, r)
    sol = plan(prob, setup[3])
    rep = verify_equivalence(sol, prob, setup[3])
    assert rep.relative_gap <= 1e-3
    assert rep.max_marginal_deviation < 1e-6


def test_cost_invariant_under_variable_permutation(setup):
    r = _thermostat_power(setup) * 0.9
    qp = synthesis.assemble(_problem(setup, r), setup[3])
    x0, _ = synthesis.solve(qp, warm=synthesis.thermostat_point(qp))
    perm = np.random.default_rng(1).permutation(qp.n_vars)
    x1, _ = synthesis.solve(qp, perm=perm)

    def cost(x):
        half = qp.problem.grid.n_bins * (TAU + 1)
        gamma = N_TCL * 5.5 * x.reshape(T, -1)[:, half:2 * half].sum(axis=1)
        return float(np.sum((r - gamma) ** 2))

    assert cost(x1) == pytest.approx(cost(x0), rel=1e-6, abs=1e-6)


def test_monotone_joint_masses(setup):
    g = setup[0]
    r = _thermostat_power(setup) * 0.85
    sol = plan(_problem(setup, r), setup[3])
    n, q, m = g.n_bins, g.q, g.m
    for k in range(T):
        b_offon = sol.joints[k, n:2 * n]
        b_onoff = sol.joints[k, 2 * n:3 * n]
        assert np.all(np.diff(b_offon[m:n - 1]) >= -1e-9)
        assert np.all(np.diff(b_onoff[1:q - 1]) <= 1e-9)


def test_extraction_positive_mass_is_exact_ratio(setup):
    g = setup[0]
    n = g.n_bins
    half = n * (TAU + 1)
    marg = np.zeros((1, 2 * half))
    marg[0, :n] = 0.04          # off bins, l = 0
    marg[0, half:half + n] = 0.04
    joints = np.zeros((1, 4 * n))
    kappa_on = np.zeros(n)
    kappa_on[g.m:n - 1] = 0.25
    kappa_on[n - 1] = 1.0
    kappa_off = np.zeros(n)
    kappa_off[0] = 1.0
    kappa_off[1:g.q - 1] = 0.75
    joints[0, :n] = marg[0, :n] * (1 - kappa_on)
    joints[0, n:2 * n] = marg[0, :n] * kappa_on
    joints[0, 2 * n:3 * n] = marg[0, half:half + n] * kappa_off
    joints[0, 3 * n:4 * n] = marg[0, half:half + n] * (1 - kappa_off)
    pols = extract_policies(marg, joints, g, TAU)
    np.testing.assert_allclose(pols[0].kappa_on, kappa_on, atol=1e-12)
    np.testing.assert_allclose(pols[0].kappa_off, kappa_off, atol=1e-12)


def test_extraction_zero_mass_fallback(setup):
    g = setup[0]
    n = g.n_bins
    half = n * (TAU + 1)
    marg = np.zeros((1, 2 * half))
    joints = np.zeros((1, 4 * n))
    pols = extract_policies(marg, joints, g, TAU)
    assert np.all(pols[0].kappa_on[g.m:n - 1] == 0.5)   # free, empty: 0.5
    assert pols[0].kappa_on[n - 1] == 1.0               # constrained: thermostat
    assert np.all(pols[0].kappa_off[g.q - 1:] == 0.0)


def test_extraction_rejects_inconsistent_joints(setup):
    g = setup[0]
    n = g.n_bins
    half = n * (TAU + 1)
    marg = np.zeros((1, 2 * half))
    marg[0, :n] = 0.04
    marg[0, half:half + n] = 0.04
    joints = np.zeros((1, 4 * n))
    joints[0, n + g.m] = 0.1  # switch mass exceeding the marginal
    with pytest.raises(ConstraintResidualError):
        extract_policies(marg, joints, g, TAU)


def test_solver_cap_error_carries_iterate(setup, monkeypatch):
    monkeypatch.setitem(synthesis._OSQP_SETTINGS, "max_iter", 20)
    r = _thermostat_power(setup) * 0.8
    qp = synthesis.assemble(_problem(setup, r), setup[3])
    with pytest.raises(SolverCapError) as err:
        synthesis.solve(qp)
    assert err.value.best_x is not None and len(err.value.best_x) == qp.n_vars
    assert err.value.residuals is not None


def test_problem_validation(setup):
    g, params, theta, models, nu0 = setup
    with pytest.raises(InvalidParameterError):
        PlanProblem(grid=g, params=params, dt_minutes=1.0, tau=TAU, n_tcl=N_TCL,
                    theta_a=theta, r_ba=np.zeros(T + 1), nu0=nu0)
    with pytest.raises(InvalidParameterError):
        PlanProblem(grid=g, params=params, dt_minutes=1.0, tau=TAU, n_tcl=N_TCL,
                    theta_a=theta, r_ba=np.zeros(T), nu0=nu0 * 2)
