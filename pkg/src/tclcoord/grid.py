"""Control-volume geometry for the on/off temperature axes.

Each mode (on/off) carries its own axis of N uniform control volumes (CVs)
of width ``delta_lambda``.  The two axes are aligned so that off-axis bin j
and on-axis bin ``j - (m - 1)`` share the same nodal temperature; a mode
switch therefore preserves temperature under that index shift.  The off
axis ends half a cell above the deadband (bin N at ``lambda_max + dl/2``)
and the on axis starts half a cell below it (bin 1 at ``lambda_min - dl/2``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

OFF = "off"
ON = "on"

# snap tolerance for temperatures that land on a bin edge up to rounding
_EDGE_SNAP = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the on/off temperature axes.

    Bin indices are 1-based in the public API; ``nodes_on[j - 1]`` is the
    nodal temperature of on-axis bin j.
    """

    n_bins: int            # N, CVs per mode
    q: int                 # on-side boundary index
    m: int                 # off-side boundary index
    lambda_min: float      # deadband lower bound (degC)
    lambda_max: float      # deadband upper bound (degC)
    delta_lambda: float    # CV width (degC)
    nodes_on: np.ndarray   # length N nodal temperatures, on axis
    nodes_off: np.ndarray  # length N nodal temperatures, off axis

    def node(self, bin_index: int, mode: str) -> float:
        nodes = self.nodes_on if mode == ON else self.nodes_off
        return float(nodes[bin_index - 1])

    def edges(self, mode: str) -> np.ndarray:
        """All N+1 CV edges of the mode's axis, ascending."""
        nodes = self.nodes_on if mode == ON else self.nodes_off
        half = self.delta_lambda / 2.0
        return np.concatenate([nodes - half, [nodes[-1] + half]])


def build_grid(lambda_min: float, lambda_max: float, q: int, m: int) -> GridSpec:
    """Construct the aligned on/off CV axes for a deadband.

    ``delta_lambda = (lambda_max - lambda_min) / (q - 1)``; the on axis
    starts at ``lambda_min - delta_lambda/2`` and the off axis is the same
    ladder shifted down by ``m - 1`` cells, so off bin m coincides with on
    bin 1 and off bin N sits at ``lambda_max + delta_lambda/2``.
    """
    if not lambda_max > lambda_min:
        raise InvalidParameterError(
            f"lambda_max ({lambda_max}) must exceed lambda_min ({lambda_min})")
    if q < 3:
        raise InvalidParameterError(f"q must be >= 3, got {q}")
    if m < 1:
        raise InvalidParameterError(f"m must be >= 1, got {m}")

    n_bins = q + m
    dl = (lambda_max - lambda_min) / (q - 1)
    nodes_on = lambda_min - dl / 2.0 + dl * np.arange(n_bins)
    nodes_off = nodes_on - dl * (m - 1)
    return GridSpec(
        n_bins=n_bins, q=q, m=m,
        lambda_min=float(lambda_min), lambda_max=float(lambda_max),
        delta_lambda=dl, nodes_on=nodes_on, nodes_off=nodes_off,
    )


def bin_temperature(theta, mode: str, grid: GridSpec):
    """Map temperature(s) to 1-based bin indices on the mode's axis.

    Bins are half-open ``[node - dl/2, node + dl/2)``; temperatures beyond
    the outermost edges clamp to bin 1 or N.  Accepts scalars or arrays.
    """
    nodes = grid.nodes_on if mode == ON else grid.nodes_off
    first_edge = nodes[0] - grid.delta_lambda / 2.0
    u = (np.asarray(theta, dtype=float) - first_edge) / grid.delta_lambda
    # values meant to sit exactly on an edge can round to just below it
    near_edge = np.abs(u - np.round(u)) < _EDGE_SNAP
    u = np.where(near_edge, np.round(u), u)
    idx = np.floor(u).astype(int) + 1
    idx = np.clip(idx, 1, grid.n_bins)
    if np.isscalar(theta) or np.ndim(theta) == 0:
        return int(idx)
    return idx
