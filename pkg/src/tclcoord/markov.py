"""One-step Markov chain on the binned state space and its factorization.

The chain over the 2N on/off temperature bins is ``P = I + dt * A``.  When
the boundary sink rate satisfies ``alpha = 1/dt`` the boundary rows of P
become deterministic switches, and P factors exactly into a mode-selection
part and a within/cross-axis motion part::

    P = Phi(kappa) @ G,   G = [[P_off, 0], [0, S_off], [S_on, 0], [0, P_on]]

where Phi stacks the switching probabilities (the thermostat policy for the
plain chain) and the four N x N blocks move probability mass along an axis
(P_off, P_on) or across axes with the temperature-preserving index shift
(S_off, S_on).  Replacing the thermostat probabilities in Phi with any
admissible randomized policy leaves the physics blocks untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CflViolationError, FactorizationError, PolicyStructureError
from .generator import MINUTES_PER_HOUR, RateMatrix
from .grid import GridSpec

# reconstruction of P from its factors is exact up to float rounding
_FACTORIZATION_TOL = 1e-12
_CFL_RTOL = 1e-9


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic one-step matrix over the 2N bins (off rows first)."""

    matrix: np.ndarray  # (2N, 2N) dense
    dt_minutes: float
    grid: GridSpec


@dataclass(frozen=True)
class PolicyPair:
    """Per-bin switching probabilities for one step.

    ``kappa_on[j - 1]`` is the probability that an off unit in off bin j
    turns on; ``kappa_off[j - 1]`` that an on unit in on bin j turns off.
    Admissible policies are pinned at the thermostat boundaries and zero
    where a switch would leave the deadband: kappa_on is 0 on bins 1..m and
    1 on bin N, kappa_off is 1 on bin 1 and 0 on bins q..N.
    """

    kappa_on: np.ndarray   # length N
    kappa_off: np.ndarray  # length N
    grid: GridSpec

    def __post_init__(self):
        n, q, m = self.grid.n_bins, self.grid.q, self.grid.m
        for name, k in (("kappa_on", self.kappa_on), ("kappa_off", self.kappa_off)):
            if k.shape != (n,):
                raise PolicyStructureError(f"{name} must have length {n}")
            if np.any(k < 0) or np.any(k > 1):
                raise PolicyStructureError(f"{name} must lie in [0, 1]")
        if np.any(self.kappa_on[:m] != 0):
            raise PolicyStructureError("kappa_on must be 0 on bins 1..m")
        if self.kappa_on[n - 1] != 1:
            raise PolicyStructureError("kappa_on must be 1 on bin N")
        if self.kappa_off[0] != 1:
            raise PolicyStructureError("kappa_off must be 1 on bin 1")
        if np.any(self.kappa_off[q - 1:] != 0):
            raise PolicyStructureError("kappa_off must be 0 on bins q..N")


def thermostat_policy(grid: GridSpec) -> PolicyPair:
    """Deterministic thermostat: switch only at the deadband boundaries."""
    n = grid.n_bins
    kappa_on = np.zeros(n)
    kappa_on[n - 1] = 1.0
    kappa_off = np.zeros(n)
    kappa_off[0] = 1.0
    return PolicyPair(kappa_on=kappa_on, kappa_off=kappa_off, grid=grid)


def cfl_bound_minutes(rate: RateMatrix) -> float:
    """Largest stable time step 1 / max|A_ii| in minutes."""
    diag = rate.matrix.diagonal()
    worst = float(np.max(np.abs(diag)))
    return np.inf if worst == 0 else MINUTES_PER_HOUR / worst


def transition_matrix(rate: RateMatrix, dt_minutes: float) -> TransitionMatrix:
    """P = I + dt * A, guarded by the stability bound dt <= 1/max|A_ii|."""
    diag = rate.matrix.diagonal()
    worst = int(np.argmax(np.abs(diag)))
    bound = (np.inf if diag[worst] == 0
             else MINUTES_PER_HOUR / float(np.abs(diag[worst])))
    if dt_minutes > bound * (1.0 + _CFL_RTOL):
        raise CflViolationError(
            f"dt = {dt_minutes} min exceeds stability bound {bound:.6g} min "
            f"set by state {worst}",
            bin_index=worst, bound_minutes=bound)
    p = np.eye(rate.matrix.shape[0]) + (dt_minutes / MINUTES_PER_HOUR) * rate.matrix.toarray()
    p = np.clip(p, 0.0, None)  # rounding can leave a tiny negative diagonal
    return TransitionMatrix(matrix=p, dt_minutes=dt_minutes, grid=rate.grid)


@dataclass(frozen=True)
class TransitionFactors:
    """Exact factors of a transition matrix: P = Phi(kappa) @ G."""

    p_off: np.ndarray  # stay-off motion (N x N)
    p_on: np.ndarray   # stay-on motion (N x N)
    s_off: np.ndarray  # off -> on switch motion, with the index shift
    s_on: np.ndarray   # on -> off switch motion, with the index shift
    g: np.ndarray      # (4N, 2N) stacked physics blocks
    grid: GridSpec


def selection_matrix(policy: PolicyPair) -> np.ndarray:
    """Phi(kappa): (2N, 4N) row selector mixing the four blocks of G."""
    n = policy.grid.n_bins
    phi = np.zeros((2 * n, 4 * n))
    r = np.arange(n)
    phi[r, r] = 1.0 - policy.kappa_on
    phi[r, n + r] = policy.kappa_on
    phi[n + r, 2 * n + r] = policy.kappa_off
    phi[n + r, 3 * n + r] = 1.0 - policy.kappa_off
    return phi


def factorize(p: TransitionMatrix) -> TransitionFactors:
    """Split P into switching and motion factors; verify the product.

    The boundary rows of the diagonal quadrants are replaced by the unit
    vector of their own bin (the sink emptied them), and the switch blocks
    are the boundary quadrants re-read through the axis alignment: off bin
    j maps to on bin j - (m - 1) and vice versa.
    """
    grid = p.grid
    n, q, m = grid.n_bins, grid.q, grid.m
    mat = p.matrix

    p_off = mat[:n, :n].copy()
    p_off[n - 1, :] = 0.0
    p_off[n - 1, n - 1] = 1.0
    p_on = mat[n:, n:].copy()
    p_on[0, :] = 0.0
    p_on[0, 0] = 1.0

    s_off = np.zeros((n, n))
    s_off[m - 1:, 0:n - m + 1] = p_off[m - 1:, m - 1:]
    s_on = np.zeros((n, n))
    s_on[0:q, m - 1:m - 1 + q] = p_on[0:q, 0:q]

    g = np.zeros((4 * n, 2 * n))
    g[0:n, 0:n] = p_off
    g[n:2 * n, n:2 * n] = s_off
    g[2 * n:3 * n, 0:n] = s_on
    g[3 * n:4 * n, n:2 * n] = p_on

    phi_ts = selection_matrix(thermostat_policy(grid))
    dev = float(np.max(np.abs(phi_ts @ g - mat)))
    if dev >= _FACTORIZATION_TOL:
        raise FactorizationError(
            f"factor product deviates from P by {dev:.3e}; the boundary "
            "rows are not deterministic (alpha != 1/dt?)",
            max_deviation=dev)
    return TransitionFactors(p_off=p_off, p_on=p_on, s_off=s_off, s_on=s_on,
                             g=g, grid=grid)


def apply_policy(factors: TransitionFactors, policy: PolicyPair) -> np.ndarray:
    """One-step matrix Phi(kappa) @ G under an admissible policy."""
    return selection_matrix(policy) @ factors.g
