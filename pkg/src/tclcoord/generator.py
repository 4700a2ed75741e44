"""Physical TCL model and assembly of the transition-rate matrix.

The rate matrix comes from a finite-volume discretization of the coupled
population densities: upwind convection, central diffusion, zero-gradient
far boundaries, and thermostat switching modeled as a sink of rate
``alpha = gamma + D`` at the boundary CVs (off bin N, on bin 1) with a
matching source on the opposite axis.  The source lands in the bin that is
temperature-aligned with the sink bin (on bin q+1 and off bin m), which
keeps the mode switch measure-preserving in temperature and makes the
policy/dynamics factorization exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import AssumptionViolationError, InvalidParameterError
from .grid import GridSpec, OFF, ON

MINUTES_PER_HOUR = 60.0


@dataclass(frozen=True)
class TclParams:
    """Nominal TCL parameters.  Thermal rates are per hour."""

    r_th: float      # thermal resistance (degC/kW)
    c_th: float      # thermal capacitance (kWh/degC)
    p0: float        # rated electrical power (kW)
    cop: float       # coefficient of performance
    sigma2: float    # Brownian variance (degC^2/h)
    setpoint: float  # thermostat setpoint (degC)

    def __post_init__(self):
        for name in ("r_th", "c_th", "p0", "cop"):
            if getattr(self, name) <= 0:
                raise InvalidParameterError(f"{name} must be positive")
        if self.sigma2 < 0:
            raise InvalidParameterError("sigma2 must be nonnegative")


@dataclass(frozen=True)
class RateMatrix:
    """Transition-rate matrix A (1/h) on the 2N-state space.

    Rows/columns 0..N-1 are the off bins, N..2N-1 the on bins.  Row sums
    are zero and off-diagonal entries nonnegative by construction.
    """

    matrix: sp.csr_matrix
    alpha: float       # boundary sink rate (1/h)
    diffusion: float   # D = sigma2 / delta_lambda^2 (1/h)
    grid: GridSpec


def drift(theta, mode: str, theta_a: float, params: TclParams):
    """Temperature drift f_mode(theta) in degC/h.  Vectorizes over theta."""
    theta = np.asarray(theta, dtype=float)
    out = -(theta - theta_a) / (params.r_th * params.c_th)
    if mode == ON:
        out = out - params.cop * params.p0 / params.c_th
    if out.ndim == 0:
        return float(out)
    return out


def baseline_power(theta_a: float, params: TclParams) -> float:
    """Per-unit steady power (kW) that holds temperature at the setpoint."""
    return (theta_a - params.setpoint) / (params.cop * params.r_th)


def fleet_baseline(n_tcl: int, theta_a: float, params: TclParams) -> float:
    """Baseline power (kW) of a homogeneous fleet."""
    return n_tcl * baseline_power(theta_a, params)


def fleet_max_power(n_tcl: int, params: TclParams) -> float:
    """Maximum aggregate power (kW): every unit running at rated power."""
    return n_tcl * params.p0


def diffusion_rate(grid: GridSpec, params: TclParams) -> float:
    """D = sigma2 / delta_lambda^2 in 1/h."""
    return params.sigma2 / grid.delta_lambda ** 2


def gamma_for_timestep(dt_minutes: float, grid: GridSpec, params: TclParams) -> float:
    """Sink design rate gamma making alpha = gamma + D equal 1/dt.

    Requires dt < delta_lambda^2 / sigma2 so that gamma stays positive;
    this is also what makes the exact policy/dynamics factorization
    available downstream.
    """
    if dt_minutes <= 0:
        raise InvalidParameterError("dt_minutes must be positive")
    dt_hours = dt_minutes / MINUTES_PER_HOUR
    d = diffusion_rate(grid, params)
    if d > 0 and dt_hours >= 1.0 / d:
        raise InvalidParameterError(
            f"dt = {dt_minutes} min violates dt < delta_lambda^2/sigma2 "
            f"(= {grid.delta_lambda ** 2 / params.sigma2 * MINUTES_PER_HOUR:.4g} min)")
    return 1.0 / dt_hours - d


def check_drift_signs(grid: GridSpec, params: TclParams, theta_a: float) -> None:
    """Verify f_off >= 0 and f_on <= 0 at every CV edge of both axes.

    The upwind scheme takes these signs for granted; they are checked with
    zero tolerance.
    """
    off_edges = grid.edges(OFF)
    on_edges = grid.edges(ON)
    f_off = drift(off_edges, OFF, theta_a, params)
    f_on = drift(on_edges, ON, theta_a, params)
    if np.any(f_off < 0):
        i = int(np.argmax(f_off < 0))
        raise AssumptionViolationError(
            f"off-mode drift negative ({f_off[i]:.4g} degC/h) at edge "
            f"{off_edges[i]:.4g} degC; ambient {theta_a} degC too cold for this grid")
    if np.any(f_on > 0):
        i = int(np.argmax(f_on > 0))
        raise AssumptionViolationError(
            f"on-mode drift positive ({f_on[i]:.4g} degC/h) at edge "
            f"{on_edges[i]:.4g} degC; ambient {theta_a} degC too hot for this grid")


def build_rate_matrix(grid: GridSpec, params: TclParams, theta_a: float,
                      gamma: float) -> RateMatrix:
    """Assemble A(t) for a fixed ambient temperature.

    Internal CVs use the upwind/central finite-volume coefficients; the far
    boundaries (off bin 1, on bin N) get half diffusion and no inflow from
    outside; the thermostat boundaries (off bin N, on bin 1) are pure sinks
    of rate alpha with sources into the temperature-aligned bin of the
    other axis.  Back-flow out of the sink bins into their own axis is
    zeroed so all their mass leaves through the mode switch.
    """
    if gamma <= 0:
        raise InvalidParameterError(f"gamma must be positive, got {gamma}")
    check_drift_signs(grid, params, theta_a)

    n = grid.n_bins
    d = diffusion_rate(grid, params)
    alpha = gamma + d
    dl = grid.delta_lambda

    # edge convection rates: entry e is the edge between bins e and e+1 (1-based)
    off_edge = drift(grid.nodes_off + dl / 2.0, OFF, theta_a, params) / dl
    on_edge = drift(grid.nodes_on + dl / 2.0, ON, theta_a, params) / dl

    def o(i):  # off bin i -> matrix index
        return i - 1

    def nn(i):  # on bin i -> matrix index
        return n + i - 1

    a = sp.dok_matrix((2 * n, 2 * n))

    # --- off axis: drift is upward ---
    a[o(1), o(1)] = -off_edge[0] - d / 2.0
    for i in range(2, n):
        a[o(i), o(i)] = -off_edge[i - 1] - d
    for i in range(2, n + 1):
        a[o(i - 1), o(i)] = off_edge[i - 2] + d / 2.0
    for i in range(1, n - 1):  # i = n-1 would be back-flow from the sink bin
        a[o(i + 1), o(i)] = d / 2.0
    a[o(n), o(n)] = -alpha
    a[o(n), nn(grid.q + 1)] = alpha

    # --- on axis: drift is downward ---
    a[nn(n), nn(n)] = on_edge[n - 2] - d / 2.0
    for i in range(2, n):
        a[nn(i), nn(i)] = on_edge[i - 2] - d
    for i in range(3, n + 1):  # i = 2 would be back-flow from the sink bin
        a[nn(i - 1), nn(i)] = d / 2.0
    for i in range(1, n):
        a[nn(i + 1), nn(i)] = d / 2.0 - on_edge[i - 1]
    a[nn(1), nn(1)] = -alpha
    a[nn(1), o(grid.m)] = alpha

    return RateMatrix(matrix=a.tocsr(), alpha=alpha, diffusion=d, grid=grid)
