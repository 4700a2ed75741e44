"""Monte Carlo simulation of a TCL fleet under broadcast policies.

Each unit carries a continuous temperature, a binary mode, and a lockout
counter.  Every step the unit bins its temperature on its current axis,
draws a switch decision from the broadcast policy (free units) or the
thermostat (locked-out units), then integrates its temperature for one
step using the pre-decision mode.  Units forced to switch at a sink bin
(off bin N, on bin 1) hold their temperature for that step, mirroring the
absorbing boundary rows of the chain; this also caps deadband excursions
at one step of drift.

Randomness is drawn per step from seed sequences [seed, stream, k], so a
run is reproducible given (seed, n_tcl) and independent across steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .expanded import expand_policy, flat_index
from .generator import MINUTES_PER_HOUR, TclParams, drift
from .grid import GridSpec, OFF, ON, bin_temperature
from .markov import PolicyPair, thermostat_policy

_STREAM_INIT = 0
_STREAM_POLICY = 1
_STREAM_NOISE = 2


@dataclass
class FleetState:
    """Per-unit state arrays; ``mode`` is 1 for on, 0 for off."""

    theta: np.ndarray    # (n,) float
    mode: np.ndarray     # (n,) int8
    lockout: np.ndarray  # (n,) int16, 0 = free to switch

    @property
    def n_units(self) -> int:
        return self.theta.size


@dataclass
class SimResult:
    """Trace of one fleet run; records are pre-decision snapshots."""

    power: np.ndarray        # (T,) aggregate kW
    histograms: np.ndarray   # (T, 2N(tau+1)) empirical expanded pmf
    min_gap_minutes: float   # smallest inter-switch time over all units
    n_gap_violations: int    # switch pairs closer than the lockout window
    max_excursion: float     # degC beyond the deadband, over units and steps
    n_switches: int


def init_fleet(nu0: np.ndarray, n_tcl: int, grid: GridSpec, tau: int,
               seed: int, max_excursion: float | None = None) -> FleetState:
    """Sample unit states i.i.d. from an expanded marginal.

    Temperatures are drawn uniformly inside the sampled bin.  The marginal
    carries a small diffusion tail beyond the deadband that no trajectory
    of the simulator can actually reach; ``max_excursion`` (typically one
    step of drift, see ``excursion_bound``) clips the samples to the
    reachable band so the initial fleet satisfies the same deadband
    guarantee as the dynamics.
    """
    n = grid.n_bins
    n_states = 2 * n * (tau + 1)
    if nu0.shape != (n_states,):
        raise InvalidParameterError(f"nu0 must have length {n_states}")
    rng = np.random.default_rng([seed, _STREAM_INIT])
    states = rng.choice(n_states, size=n_tcl, p=nu0 / nu0.sum())

    half = n * (tau + 1)
    mode = (states >= half).astype(np.int8)
    rem = np.where(mode == 1, states - half, states)
    lockout = (rem // n).astype(np.int16)
    bins = rem % n  # 0-based
    nodes = np.where(mode == 1, grid.nodes_on[bins], grid.nodes_off[bins])
    theta = nodes + grid.delta_lambda * (rng.random(n_tcl) - 0.5)
    if max_excursion is not None:
        theta = np.clip(theta, grid.lambda_min - max_excursion,
                        grid.lambda_max + max_excursion)
    return FleetState(theta=theta, mode=mode, lockout=lockout)


def _switch_probs(state: FleetState, policy: PolicyPair, ts: PolicyPair,
                  bins: np.ndarray) -> np.ndarray:
    """Per-unit switch probability: broadcast policy if free, else thermostat."""
    on = state.mode == 1
    free = state.lockout == 0
    p_free = np.where(on, policy.kappa_off[bins - 1], policy.kappa_on[bins - 1])
    p_locked = np.where(on, ts.kappa_off[bins - 1], ts.kappa_on[bins - 1])
    return np.where(free, p_free, p_locked)


def step_fleet(state: FleetState, policy: PolicyPair, theta_a: float,
               params: TclParams, grid: GridSpec, tau: int,
               dt_minutes: float, rng_policy, rng_noise=None,
               substeps: int = 1) -> np.ndarray:
    """Advance the fleet one step in place; returns the switch mask."""
    n = grid.n_bins
    on = state.mode == 1
    bins = np.where(on,
                    bin_temperature(state.theta, ON, grid),
                    bin_temperature(state.theta, OFF, grid))

    ts = thermostat_policy(grid)
    prob = _switch_probs(state, policy, ts, bins)
    switch = rng_policy.random(state.n_units) < prob

    # sink-bin units hold temperature for the switch step
    at_sink = np.where(on, bins == 1, bins == n)
    hold = switch & at_sink
    dt_h = dt_minutes / MINUTES_PER_HOUR / substeps
    theta = state.theta
    for _ in range(substeps):
        dtheta = np.where(on,
                          drift(theta, ON, theta_a, params),
                          drift(theta, OFF, theta_a, params)) * dt_h
        if rng_noise is not None and params.sigma2 > 0:
            dtheta = dtheta + np.sqrt(params.sigma2 * dt_h) * rng_noise.standard_normal(state.n_units)
        theta = theta + dtheta
    state.theta = np.where(hold, state.theta, theta)

    lock = state.lockout
    state.lockout = np.where(switch, 1,
                             np.where((lock >= 1) & (lock < tau), lock + 1, 0)
                             ).astype(np.int16)
    state.mode = np.where(switch, 1 - state.mode, state.mode).astype(np.int8)
    return switch


def _histogram(state: FleetState, grid: GridSpec, tau: int) -> np.ndarray:
    n = grid.n_bins
    half = n * (tau + 1)
    on = state.mode == 1
    bins = np.where(on,
                    bin_temperature(state.theta, ON, grid),
                    bin_temperature(state.theta, OFF, grid))
    flat = np.where(on, half, 0) + state.lockout * n + (bins - 1)
    return np.bincount(flat, minlength=2 * half) / state.n_units


def simulate(state: FleetState, policies: list[PolicyPair],
             theta_a: np.ndarray, params: TclParams, grid: GridSpec,
             tau: int, dt_minutes: float, seed: int,
             noise: bool = False, substeps: int = 1) -> SimResult:
    """Run the fleet through a policy schedule; mutates ``state``.

    ``noise`` enables the Euler-Maruyama temperature update; the default is
    the deterministic ODE update.
    """
    t_plan = len(policies)
    if len(theta_a) != t_plan:
        raise InvalidParameterError("theta_a and policies must have equal length")
    n_units = state.n_units
    half = grid.n_bins * (tau + 1)

    power = np.empty(t_plan)
    hists = np.empty((t_plan, 2 * half))
    last_switch = np.full(n_units, -10 ** 9)
    min_gap = np.inf
    n_viol = 0
    n_switches = 0
    max_exc = 0.0

    for k in range(t_plan):
        hists[k] = _histogram(state, grid, tau)
        power[k] = params.p0 * int(state.mode.sum())
        rng_policy = np.random.default_rng([seed, _STREAM_POLICY, k])
        rng_noise = np.random.default_rng([seed, _STREAM_NOISE, k]) if noise else None
        switch = step_fleet(state, policies[k], float(theta_a[k]), params,
                            grid, tau, dt_minutes, rng_policy, rng_noise,
                            substeps=substeps)
        if switch.any():
            idx = np.nonzero(switch)[0]
            gaps = (k - last_switch[idx]) * dt_minutes
            seen = gaps[gaps < 1e8]
            if seen.size:
                min_gap = min(min_gap, float(seen.min()))
                n_viol += int(np.sum(seen < tau * dt_minutes))
            last_switch[idx] = k
            n_switches += idx.size
        exc = np.maximum(state.theta - grid.lambda_max,
                         grid.lambda_min - state.theta)
        max_exc = max(max_exc, float(exc.max()))

    return SimResult(power=power, histograms=hists,
                     min_gap_minutes=float(min_gap), n_gap_violations=n_viol,
                     max_excursion=max(max_exc, 0.0), n_switches=n_switches)


def sample_states(nu0: np.ndarray, n_tcl: int, seed: int) -> np.ndarray:
    """Draw i.i.d. expanded bin states from a marginal."""
    rng = np.random.default_rng([seed, _STREAM_INIT])
    return rng.choice(nu0.size, size=n_tcl, p=nu0 / nu0.sum())


def simulate_chain(states: np.ndarray, policies: list[PolicyPair],
                   models, tau: int, seed: int) -> np.ndarray:
    """Simulate units as independent copies of the expanded chain.

    Ignores within-bin temperature: each unit's expanded bin state jumps
    according to the one-step matrix of its policy, which is exactly the
    mean-field model.  Returns the (T, 2N(tau+1)) pre-step histograms; as
    the fleet grows they converge to the propagated marginal.
    """
    t_plan = len(policies)
    n_states = 2 * policies[0].grid.n_bins * (tau + 1)
    hists = np.empty((t_plan, n_states))
    states = states.copy()
    for k in range(t_plan):
        hists[k] = np.bincount(states, minlength=n_states) / states.size
        m = (expand_policy(policies[k], tau) @ models[k].g).tocsr()
        rng = np.random.default_rng([seed, _STREAM_POLICY, k])
        u = rng.random(states.size)
        nxt = np.empty_like(states)
        for s in np.unique(states):
            sel = states == s
            row = m[s].toarray().ravel()
            cdf = np.cumsum(row)
            cdf[-1] = 1.0
            nxt[sel] = np.searchsorted(cdf, u[sel], side="right")
        states = nxt
    return hists


def tv_distance(hist: np.ndarray, nu: np.ndarray) -> float:
    """Total variation distance between two pmfs on the expanded bins."""
    return 0.5 * float(np.abs(hist - nu).sum())


def excursion_bound(grid: GridSpec, params: TclParams, theta_a: np.ndarray,
                    dt_minutes: float) -> float:
    """One step of the largest drift magnitude near the deadband (degC).

    Deterministic simulations never exceed the deadband by more than this.
    """
    worst = 0.0
    for th in np.unique(np.asarray(theta_a, dtype=float)):
        f_off = np.abs(drift(grid.edges(OFF), OFF, th, params))
        f_on = np.abs(drift(grid.edges(ON), ON, th, params))
        worst = max(worst, float(f_off.max()), float(f_on.max()))
    return worst * dt_minutes / MINUTES_PER_HOUR


@dataclass
class QosAudit:
    """Quality-of-service summary of a simulation against a plan."""

    min_gap_minutes: float
    n_gap_violations: int
    max_excursion: float
    excursion_limit: float
    rmse_tracking: float       # RMSE(y, r) / p_agg
    mean_tv: float
    ok: bool


def audit(result: SimResult, reference: np.ndarray, marginals: np.ndarray,
          grid: GridSpec, params: TclParams, theta_a: np.ndarray,
          dt_minutes: float, tau: int, p_agg: float,
          rmse_limit: float = 0.05) -> QosAudit:
    """Check cycling, deadband, and tracking quality of a finished run."""
    limit = excursion_bound(grid, params, theta_a, dt_minutes)
    rmse = float(np.sqrt(np.mean((result.power - reference) ** 2))) / p_agg
    tvs = [tv_distance(result.histograms[k], marginals[k])
           for k in range(result.histograms.shape[0])]
    mean_tv = float(np.mean(tvs))
    ok = (result.n_gap_violations == 0
          and result.max_excursion <= limit + 1e-12
          and rmse <= rmse_limit)
    return QosAudit(min_gap_minutes=result.min_gap_minutes,
                    n_gap_violations=result.n_gap_violations,
                    max_excursion=result.max_excursion, excursion_limit=limit,
                    rmse_tracking=rmse, mean_tv=mean_tv, ok=ok)
