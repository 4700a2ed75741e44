"""Joint-distribution planning QP and randomized-policy extraction.

The planner co-designs an achievable aggregate power trajectory and the
per-step switching policies that realize it.  Optimizing directly over
(policy, marginal) pairs is bilinear; optimizing over the per-step joint
masses J = diag(nu) Phi is linear, and the switch probabilities are
recovered afterwards by dividing joint mass by marginal mass.

Decision variables per step: the expanded marginal nu_k (2N(tau+1)
entries) plus the four diagonal joint blocks of the free l = 0 layer
(4N entries) -- 2N(tau+3) per step.  Locked-out layers follow the
thermostat, so their joint entries are fixed linear functions of nu_k and
never become variables.  All powers are scaled by the fleet maximum
``p_agg`` inside the QP for conditioning; reported costs are in kW^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import osqp
import scipy.sparse as sp

from .errors import ConstraintResidualError, InvalidParameterError, SolverCapError
from .expanded import (ExpandedModel, expand_policy, models_for_trajectory, step)
from .generator import TclParams, fleet_max_power
from .grid import GridSpec
from .markov import PolicyPair, thermostat_policy

MASS_EPS = 1e-10          # marginal mass below this uses the fallback policy
_EXTRACT_TOL = 1e-8       # joint-vs-marginal reconstruction tolerance
_OSQP_SETTINGS = dict(eps_abs=1e-8, eps_rel=1e-8, polishing=True,
                      max_iter=200_000, verbose=False)


@dataclass(frozen=True)
class PlanProblem:
    """Inputs to the planner."""

    grid: GridSpec
    params: TclParams
    dt_minutes: float
    tau: int
    n_tcl: int
    theta_a: np.ndarray    # ambient per step, length T
    r_ba: np.ndarray       # requested aggregate power per step (kW), length T
    nu0: np.ndarray        # initial expanded marginal, length 2N(tau+1)
    monotone: bool = True  # switch-probability monotonicity constraints

    def __post_init__(self):
        t = len(self.r_ba)
        if t < 1:
            raise InvalidParameterError("horizon must be >= 1")
        if len(self.theta_a) != t:
            raise InvalidParameterError("theta_a and r_ba must have equal length")
        n_states = 2 * self.grid.n_bins * (self.tau + 1)
        if self.nu0.shape != (n_states,):
            raise InvalidParameterError(f"nu0 must have length {n_states}")
        if np.any(self.nu0 < 0) or abs(self.nu0.sum() - 1.0) > 1e-9:
            raise InvalidParameterError("nu0 must be a probability vector")

    @property
    def horizon(self) -> int:
        return len(self.r_ba)

    @property
    def p_agg(self) -> float:
        return fleet_max_power(self.n_tcl, self.params)


@dataclass
class QpData:
    """Assembled sparse QP: min 1/2 x'Px + q'x + const, l <= Ax <= u."""

    p: sp.csc_matrix       # full symmetric quadratic term
    q: np.ndarray
    const: float           # additive constant completing the squared error
    a: sp.csc_matrix
    lower: np.ndarray
    upper: np.ndarray
    models: list[ExpandedModel]
    problem: PlanProblem

    @property
    def n_vars(self) -> int:
        return self.a.shape[1]


@dataclass
class PlanSolution:
    """Planner output: feasible reference, marginals, policies, diagnostics."""

    reference: np.ndarray         # achieved gamma_k (kW), length T
    r_ba: np.ndarray              # requested power (kW)
    marginals: np.ndarray         # (T, 2N(tau+1))
    joints: np.ndarray            # (T, 4N) free-layer joint blocks
    policies: list[PolicyPair]
    cost: float                   # eta* = sum (r_ba - gamma)^2 (kW^2)
    iterations: int
    residuals: tuple[float, float]
    p_agg: float


@dataclass
class RolloutReport:
    """Non-convex rollout of the extracted schedule vs. the QP optimum."""

    rollout_cost: float
    qp_cost: float
    relative_gap: float
    max_marginal_deviation: float
    power: np.ndarray


def _selector_matrices(grid: GridSpec, tau: int) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Maps from (nu, b) to the full joint vector J of length 4N(tau+1).

    ``e_fix`` carries the thermostat-tied l >= 1 layers; ``e_b`` places the
    free-layer joint variables.  J layout mirrors the four row-blocks of
    G^E: off-stay, off-switch, on-switch, on-stay.
    """
    n = grid.n_bins
    half = n * (tau + 1)
    rows, cols = [], []
    for l in range(1, tau + 1):
        for jj in range(n):
            s = l * n + jj
            rows.append(s)
            cols.append(s if jj < n - 1 else half + s)       # off: forced at bin N
            t = l * n + jj
            rows.append(half + t)
            cols.append(2 * half + t if jj == 0 else 3 * half + t)  # on: forced at bin 1
    e_fix = sp.csr_matrix((np.ones(len(rows)), (rows, cols)),
                          shape=(2 * half, 4 * half))

    jj = np.arange(n)
    rows = np.concatenate([jj, n + jj, 2 * n + jj, 3 * n + jj])
    cols = np.concatenate([jj, half + jj, 2 * half + jj, 3 * half + jj])
    e_b = sp.csr_matrix((np.ones(4 * n), (rows, cols)), shape=(4 * n, 4 * half))
    return e_fix, e_b


def assemble(problem: PlanProblem,
             models: list[ExpandedModel] | None = None) -> QpData:
    """Build the sparse QP over marginals and free-layer joint blocks.

    Constraints: initial condition, joint-driven dynamics, row-mass ties on
    the free layer, fixed-policy ties at the thermostat boundaries, [0, 1]
    boxes, and (optionally) monotonicity of the switch joint masses in
    temperature.
    """
    grid, tau, t_plan = problem.grid, problem.tau, problem.horizon
    n = grid.n_bins
    n_nu = 2 * n * (tau + 1)
    n_blk = n_nu + 4 * n
    n_vars = n_blk * t_plan
    half = n * (tau + 1)
    if models is None:
        models = models_for_trajectory(grid, problem.params, problem.dt_minutes,
                                       tau, problem.theta_a, problem.p_agg)
    e_fix, e_b = _selector_matrices(grid, tau)

    def nu_off(k):   # variable offset of nu_k
        return k * n_blk

    def b_off(k):    # variable offset of the joint blocks of step k
        return k * n_blk + n_nu

    ar, ac, av, lo, up = [], [], [], [], []
    row = 0

    def add_coo(mat, row0, col0):
        coo = sp.coo_matrix(mat)
        ar.append(coo.row + row0)
        ac.append(coo.col + col0)
        av.append(coo.data)

    def add_rows(count, lower, upper):
        nonlocal row
        lo.append(np.broadcast_to(lower, (count,)))
        up.append(np.broadcast_to(upper, (count,)))
        row += count

    # initial condition: nu_0 = nu0
    add_coo(sp.eye(n_nu), row, nu_off(0))
    add_rows(n_nu, problem.nu0, problem.nu0)

    # dynamics: nu_{k+1} = (nu_k E_fix + b_k E_b) G^E_k
    for k in range(t_plan - 1):
        m_nu = (e_fix @ models[k].g).T
        m_b = (e_b @ models[k].g).T
        add_coo(sp.eye(n_nu), row, nu_off(k + 1))
        add_coo(-m_nu, row, nu_off(k))
        add_coo(-m_b, row, b_off(k))
        add_rows(n_nu, 0.0, 0.0)

    jj = np.arange(n)
    for k in range(t_plan):
        bo = b_off(k)
        # row-mass on the free layer: b_stay + b_switch = nu[., l=0]
        add_coo(sp.eye(n), row, bo)            # b_offoff
        add_coo(sp.eye(n), row, bo + n)        # b_offon
        add_coo(-sp.eye(n), row, nu_off(k))    # nu off, l=0
        add_rows(n, 0.0, 0.0)
        add_coo(sp.eye(n), row, bo + 2 * n)    # b_onoff
        add_coo(sp.eye(n), row, bo + 3 * n)    # b_onon
        add_coo(-sp.eye(n), row, nu_off(k) + half)
        add_rows(n, 0.0, 0.0)

        # fixed-policy ties at the deadband boundaries
        for j in range(grid.m):                # b_offon = 0 on bins 1..m
            add_coo(sp.coo_matrix(([1.0], ([0], [0])), shape=(1, 1)), row, bo + n + j)
            add_rows(1, 0.0, 0.0)
        ar.append(np.array([row, row]))        # b_offon[N] = nu_off[N, 0]
        ac.append(np.array([bo + 2 * n - 1, nu_off(k) + n - 1]))
        av.append(np.array([1.0, -1.0]))
        add_rows(1, 0.0, 0.0)
        for j in range(grid.q - 1, n):         # b_onoff = 0 on bins q..N
            add_coo(sp.coo_matrix(([1.0], ([0], [0])), shape=(1, 1)), row, bo + 2 * n + j)
            add_rows(1, 0.0, 0.0)
        ar.append(np.array([row, row]))        # b_onoff[1] = nu_on[1, 0]
        ac.append(np.array([bo + 2 * n, nu_off(k) + half]))
        av.append(np.array([1.0, -1.0]))
        add_rows(1, 0.0, 0.0)

        if problem.monotone:
            # switch mass nondecreasing toward each thermostat boundary
            for j in range(grid.m + 1, n - 1):       # b_offon[j] <= b_offon[j+1], 1-based m+2..N-1
                ar.append(np.array([row, row]))
                ac.append(np.array([bo + n + j, bo + n + j - 1]))
                av.append(np.array([1.0, -1.0]))
                add_rows(1, 0.0, np.inf)
            for j in range(1, grid.q - 2):           # b_onoff[j+1] <= b_onoff[j], 1-based 2..q-2
                ar.append(np.array([row, row]))
                ac.append(np.array([bo + 2 * n + j, bo + 2 * n + j + 1]))
                av.append(np.array([1.0, -1.0]))
                add_rows(1, 0.0, np.inf)

    # box [0, 1] on every variable
    add_coo(sp.eye(n_vars), row, 0)
    add_rows(n_vars, 0.0, 1.0)

    a = sp.coo_matrix((np.concatenate(av),
                       (np.concatenate(ar), np.concatenate(ac))),
                      shape=(row, n_vars)).tocsc()

    # objective: sum_k (r_k - gamma_k)^2 / p_agg^2, gamma_k = p_agg * on-mass
    r_hat = np.asarray(problem.r_ba, dtype=float) / problem.p_agg
    on_idx = np.arange(half, n_nu)
    pr, pc = np.meshgrid(on_idx, on_idx, indexing="ij")
    p_rows = np.concatenate([nu_off(k) + pr.ravel() for k in range(t_plan)])
    p_cols = np.concatenate([nu_off(k) + pc.ravel() for k in range(t_plan)])
    p_vals = np.full(p_rows.size, 2.0)
    p = sp.coo_matrix((p_vals, (p_rows, p_cols)), shape=(n_vars, n_vars)).tocsc()
    q = np.zeros(n_vars)
    for k in range(t_plan):
        q[nu_off(k) + on_idx] = -2.0 * r_hat[k]
    const = float(np.sum(r_hat ** 2))

    return QpData(p=p, q=q, const=const, a=a, lower=np.concatenate(lo),
                  upper=np.concatenate(up), models=models, problem=problem)


def thermostat_point(qp: QpData) -> np.ndarray:
    """Feasible point: propagate nu0 under the pure thermostat policy."""
    problem = qp.problem
    grid, tau = problem.grid, problem.tau
    n = grid.n_bins
    n_nu = 2 * n * (tau + 1)
    half = n * (tau + 1)
    ts = thermostat_policy(grid)
    phi_ts = expand_policy(ts, tau)

    x = np.zeros(qp.n_vars)
    nu = problem.nu0.copy()
    blk = n_nu + 4 * n
    for k in range(problem.horizon):
        x[k * blk:k * blk + n_nu] = nu
        off0, on0 = nu[:n], nu[half:half + n]
        bo = k * blk + n_nu
        x[bo:bo + n] = off0 * (1.0 - ts.kappa_on)
        x[bo + n:bo + 2 * n] = off0 * ts.kappa_on
        x[bo + 2 * n:bo + 3 * n] = on0 * ts.kappa_off
        x[bo + 3 * n:bo + 4 * n] = on0 * (1.0 - ts.kappa_off)
        if k + 1 < problem.horizon:
            nu = step(nu, phi_ts, qp.models[k])
    return x


def solve(qp: QpData, warm: np.ndarray | None = None,
          perm: np.ndarray | None = None):
    """Run the operator-splitting QP solver; returns (x, info).

    ``perm`` optionally permutes the variable ordering (the optimum must
    not depend on it).  Raises SolverCapError, carrying the best iterate
    and residuals, when the iteration cap is hit before tolerance.
    """
    p, q, a = qp.p, qp.q, qp.a
    if perm is not None:
        p = p[perm][:, perm]
        q = q[perm]
        a = a[:, perm]
        if warm is not None:
            warm = warm[perm]
    solver = osqp.OSQP()
    solver.setup(P=sp.triu(p, format="csc"), q=q, A=a.tocsc(),
                 l=qp.lower, u=qp.upper, **_OSQP_SETTINGS)
    if warm is not None:
        solver.warm_start(x=warm)
    res = solver.solve(raise_error=False)
    x = np.asarray(res.x, dtype=float)
    if perm is not None and x.size:
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        x = x[inv]
    status = res.info.status.lower()
    if "solved" not in status:
        raise SolverCapError(
            f"QP solver stopped with status '{res.info.status}' after "
            f"{res.info.iter} iterations",
            best_x=x, residuals=(res.info.prim_res, res.info.dual_res))
    return x, res.info


def extract_policies(marginals: np.ndarray, joints: np.ndarray,
                     grid: GridSpec, tau: int,
                     check_tol: float = _EXTRACT_TOL) -> list[PolicyPair]:
    """Recover per-step switch probabilities from joint and marginal mass.

    Free bins with marginal mass above MASS_EPS use the ratio joint/mass
    (clipped to [0, 1]); empty free bins default to 0.5; structurally fixed
    bins take their thermostat-boundary values exactly.  Verifies that the
    recovered probabilities reproduce the joints to ``check_tol``.
    """
    n, q, m = grid.n_bins, grid.q, grid.m
    half = n * (tau + 1)
    out = []
    worst = 0.0
    for k in range(marginals.shape[0]):
        off0 = marginals[k, :n]
        on0 = marginals[k, half:half + n]
        b_offon = joints[k, n:2 * n]
        b_onoff = joints[k, 2 * n:3 * n]

        kappa_on = np.zeros(n)
        kappa_on[n - 1] = 1.0
        for jj in range(m, n - 1):
            if off0[jj] > MASS_EPS:
                kappa_on[jj] = min(max(b_offon[jj] / off0[jj], 0.0), 1.0)
            else:
                kappa_on[jj] = 0.5
        kappa_off = np.zeros(n)
        kappa_off[0] = 1.0
        for jj in range(1, q - 1):
            if on0[jj] > MASS_EPS:
                kappa_off[jj] = min(max(b_onoff[jj] / on0[jj], 0.0), 1.0)
            else:
                kappa_off[jj] = 0.5

        dev = max(float(np.max(np.abs(kappa_on * off0 - b_offon), initial=0.0)),
                  float(np.max(np.abs(kappa_off * on0 - b_onoff), initial=0.0)))
        worst = max(worst, dev)
        out.append(PolicyPair(kappa_on=kappa_on, kappa_off=kappa_off, grid=grid))
    if worst > check_tol:
        raise ConstraintResidualError(
            f"extracted policies reproduce the joint masses only to {worst:.3e} "
            f"(tolerance {check_tol:.1e})", residual=worst)
    return out


def plan(problem: PlanProblem, models: list[ExpandedModel] | None = None,
         extract_tol: float = _EXTRACT_TOL) -> PlanSolution:
    """Assemble, solve, and extract: the full planning pipeline."""
    qp = assemble(problem, models)
    x, info = solve(qp, warm=thermostat_point(qp))

    grid, tau, t_plan = problem.grid, problem.tau, problem.horizon
    n = grid.n_bins
    n_nu = 2 * n * (tau + 1)
    blk = n_nu + 4 * n
    xs = x.reshape(t_plan, blk)
    marginals = xs[:, :n_nu].copy()
    joints = xs[:, n_nu:].copy()

    half = n * (tau + 1)
    gamma = problem.p_agg * marginals[:, half:].sum(axis=1)
    cost = float(np.sum((problem.r_ba - gamma) ** 2))
    policies = extract_policies(marginals, joints, grid, tau, extract_tol)
    return PlanSolution(reference=gamma, r_ba=np.asarray(problem.r_ba, float),
                        marginals=marginals, joints=joints, policies=policies,
                        cost=cost, iterations=int(info.iter),
                        residuals=(float(info.prim_res), float(info.dual_res)),
                        p_agg=problem.p_agg)


def verify_equivalence(solution: PlanSolution, problem: PlanProblem,
                       models: list[ExpandedModel] | None = None) -> RolloutReport:
    """Roll the extracted schedule through the true dynamics; compare costs.

    The convexification is exact, so the rollout cost must match the QP
    optimum up to solver tolerance (contract: relative gap <= 1e-3).
    """
    if models is None:
        models = models_for_trajectory(problem.grid, problem.params,
                                       problem.dt_minutes, problem.tau,
                                       problem.theta_a, problem.p_agg)
    nu = problem.nu0.copy()
    half = problem.grid.n_bins * (problem.tau + 1)
    power = np.empty(problem.horizon)
    max_dev = 0.0
    for k in range(problem.horizon):
        max_dev = max(max_dev, float(np.max(np.abs(nu - solution.marginals[k]))))
        power[k] = problem.p_agg * nu[half:].sum()
        if k + 1 < problem.horizon:
            phi = expand_policy(solution.policies[k], problem.tau)
            nu = step(nu, phi, models[k])
    cost = float(np.sum((solution.r_ba - power) ** 2))
    gap = abs(cost - solution.cost) / max(1.0, solution.cost)
    return RolloutReport(rollout_cost=cost, qp_cost=solution.cost,
                         relative_gap=gap, max_marginal_deviation=max_dev,
                         power=power)
