"""Lockout-augmented chain: temperature bins crossed with a switch counter.

A unit that switched modes must hold the new mode for ``tau`` steps.  The
state space becomes (mode, bin j, counter l) with l in 0..tau; l = 0 means
free to switch, any switch sets l = 1, and the counter then increments each
step until it wraps from tau back to 0.  The flat index is counter-major
(off states first)::

    off (j, l) -> l * N + (j - 1)
    on  (j, l) -> N * (tau + 1) + l * N + (j - 1)

The expanded dynamics factor is built from the plain factors by Kronecker
products with the two counter maps: C (no switch) and D (switch, row -> 1).
The policy selector applies the randomized policy only on the l = 0 layer;
locked-out layers follow the thermostat.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidParameterError
from .grid import GridSpec, OFF, ON
from .markov import PolicyPair, TransitionFactors, thermostat_policy


def flat_index(bin_index: int, counter: int, mode: str, grid: GridSpec,
               tau: int) -> int:
    """Flat position of (mode, bin, counter) in the expanded state vector."""
    base = 0 if mode == OFF else grid.n_bins * (tau + 1)
    return base + counter * grid.n_bins + (bin_index - 1)


def lockout_matrices(tau: int) -> tuple[np.ndarray, np.ndarray]:
    """Counter maps (C, D): C for staying in mode, D for switching.

    C sends 0 -> 0, l -> l + 1 for 1 <= l < tau, and tau -> 0; D sends
    every counter to 1.  Both are (tau + 1) x (tau + 1) and row-stochastic.
    """
    if tau < 1:
        raise InvalidParameterError(f"tau must be >= 1, got {tau}")
    c = np.zeros((tau + 1, tau + 1))
    c[0, 0] = 1.0
    for l in range(1, tau):
        c[l, l + 1] = 1.0
    c[tau, 0] = 1.0
    d = np.zeros((tau + 1, tau + 1))
    d[:, 1] = 1.0
    return c, d


@dataclass(frozen=True)
class ExpandedModel:
    """Dynamics factor and output map of the lockout-augmented chain."""

    g: sp.csr_matrix        # (4N(tau+1), 2N(tau+1)) motion blocks
    output: np.ndarray      # length 2N(tau+1); y = nu @ output
    tau: int
    grid: GridSpec

    @property
    def n_states(self) -> int:
        return 2 * self.grid.n_bins * (self.tau + 1)


def expand_dynamics(factors: TransitionFactors, tau: int,
                    p_agg: float) -> ExpandedModel:
    """Lift the plain factors to the counter-augmented space.

    Staying in mode advances the counter by C; switching applies the shift
    blocks and resets the counter by D.  The output map reads total on-mass
    scaled by the fleet's maximum power ``p_agg``.
    """
    c, d = lockout_matrices(tau)
    blk = lambda counter_map, motion: sp.kron(sp.csr_matrix(counter_map),
                                              sp.csr_matrix(motion))
    n_half = factors.grid.n_bins * (tau + 1)
    zero = sp.csr_matrix((n_half, n_half))
    g = sp.vstack([
        sp.hstack([blk(c, factors.p_off), zero]),
        sp.hstack([zero, blk(d, factors.s_off)]),
        sp.hstack([blk(d, factors.s_on), zero]),
        sp.hstack([zero, blk(c, factors.p_on)]),
    ]).tocsr()
    output = np.concatenate([np.zeros(n_half), np.full(n_half, p_agg)])
    return ExpandedModel(g=g, output=output, tau=tau, grid=factors.grid)


def expand_policy(policy: PolicyPair, tau: int) -> sp.csr_matrix:
    """Selector Phi^E: the policy on the l = 0 layer, thermostat above.

    Shape (2N(tau+1), 4N(tau+1)); applied as nu @ Phi^E @ G^E.
    """
    grid = policy.grid
    n = grid.n_bins
    ts = thermostat_policy(grid)
    n_half = n * (tau + 1)

    # per-layer switch probabilities, counter-major
    k_on = np.concatenate([policy.kappa_on] + [ts.kappa_on] * tau)
    k_off = np.concatenate([policy.kappa_off] + [ts.kappa_off] * tau)

    r = np.arange(n_half)
    rows = np.concatenate([r, r, n_half + r, n_half + r])
    cols = np.concatenate([r, n_half + r, 2 * n_half + r, 3 * n_half + r])
    vals = np.concatenate([1.0 - k_on, k_on, k_off, 1.0 - k_off])
    return sp.csr_matrix((vals, (rows, cols)),
                         shape=(2 * n_half, 4 * n_half))


def step(nu: np.ndarray, phi_e: sp.csr_matrix, model: ExpandedModel) -> np.ndarray:
    """Advance the expanded distribution one step: nu @ Phi^E @ G^E."""
    return (nu @ phi_e) @ model.g


def aggregate_power(nu: np.ndarray, model: ExpandedModel) -> float:
    """Expected fleet power under the expanded distribution."""
    return float(nu @ model.output)


def models_for_trajectory(grid: GridSpec, params, dt_minutes: float, tau: int,
                          theta_a: np.ndarray, p_agg: float) -> list[ExpandedModel]:
    """One expanded dynamics factor per step of an ambient trajectory."""
    from .generator import build_rate_matrix, gamma_for_timestep
    from .markov import factorize, transition_matrix

    gamma = gamma_for_timestep(dt_minutes, grid, params)
    out = []
    for th in np.asarray(theta_a, dtype=float):
        rate = build_rate_matrix(grid, params, float(th), gamma)
        factors = factorize(transition_matrix(rate, dt_minutes))
        out.append(expand_dynamics(factors, tau, p_agg))
    return out


def thermostat_stationary(model: ExpandedModel, tol: float = 1e-12,
                          max_iter: int = 200_000) -> np.ndarray:
    """Stationary distribution of the thermostat-driven expanded chain.

    Power iteration from a uniform free-layer start; used as the default
    initial condition for planning when no fleet snapshot is supplied.
    """
    phi_ts = expand_policy(thermostat_policy(model.grid), model.tau)
    n = model.grid.n_bins
    nu = np.zeros(model.n_states)
    nu[:n] = 0.5 / n                       # off, l = 0
    half = n * (model.tau + 1)
    nu[half:half + n] = 0.5 / n            # on, l = 0
    for _ in range(max_iter):
        nxt = step(nu, phi_ts, model)
        if float(np.abs(nxt - nu).sum()) < tol:
            return nxt
        nu = nxt
    return nu
