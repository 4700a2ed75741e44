"""Scenario configuration, data ingestion, and file formats for the CLI.

A scenario is a YAML file naming the physical parameters, grid, horizon,
and the weather / target time series.  Validation is total: every module
precondition (grid sanity, the diffusion time-step bound, the drift-sign
assumption at each weather sample, and the stability bound) is checked
before any computation runs, and violations raise ConfigError naming the
failed precondition.

File formats (all plain CSV/text with '#' provenance headers):
  plan CSV        k, r_ba_kw, r_kw, kappa_on_1..N, kappa_off_1..N
  trace CSV       k, r_ba_kw, r_kw, y_kw, gamma_e_kw, tv
  broadcast text  k followed by the 2(q-1) free policy numbers, %.17g
Floats are printed with %.17g so every file round-trips bit-exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np
import yaml

from .errors import (AssumptionViolationError, CflViolationError, ConfigError,
                     InvalidParameterError)
from .generator import TclParams, build_rate_matrix, gamma_for_timestep
from .grid import GridSpec, build_grid
from .markov import PolicyPair, transition_matrix

_FMT = "%.17g"


@dataclass
class ScenarioConfig:
    """Resolved scenario: everything the pipeline needs."""

    grid: GridSpec
    params: TclParams
    n_tcl: int
    tau: int
    dt_minutes: float
    t_plan: int
    seed: int
    weather_csv: str
    r_ba_csv: str
    monotone: bool = True
    noise: bool = False
    substeps: int = 1
    raw: dict = field(default_factory=dict)


def load_config(path: str | Path) -> ScenarioConfig:
    """Read and structurally validate a scenario YAML file."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a YAML mapping")

    def need(key):
        if key not in raw:
            raise ConfigError(f"config is missing required key '{key}'")
        return raw[key]

    try:
        grid = build_grid(float(need("lambda_min")), float(need("lambda_max")),
                          int(need("q")), int(need("m")))
        params = TclParams(r_th=float(need("r_th")), c_th=float(need("c_th")),
                           p0=float(need("p0")), cop=float(need("cop")),
                           sigma2=float(need("sigma2")),
                           setpoint=float(need("setpoint")))
    except InvalidParameterError as exc:
        raise ConfigError(f"invalid parameter: {exc}") from exc

    dt = float(need("dt_minutes"))
    if "tau" in raw:
        tau = int(raw["tau"])
    elif "lockout_minutes" in raw:
        lm = float(raw["lockout_minutes"])
        tau = int(round(lm / dt))
        if abs(tau * dt - lm) > 1e-9:
            raise ConfigError(
                f"lockout_minutes = {lm} is not a multiple of dt_minutes = {dt}")
    else:
        raise ConfigError("config needs 'tau' (steps) or 'lockout_minutes'")
    if tau < 1:
        raise ConfigError(f"tau must be >= 1, got {tau}")

    t_plan = int(need("t_plan"))
    if t_plan < 1:
        raise ConfigError(f"t_plan must be >= 1, got {t_plan}")
    n_tcl = int(need("n_tcl"))
    if n_tcl < 1:
        raise ConfigError(f"n_tcl must be >= 1, got {n_tcl}")
    substeps = int(raw.get("substeps", 1))
    if substeps < 1:
        raise ConfigError(f"substeps must be >= 1, got {substeps}")

    base = Path(path).parent

    def resolve(p):
        p = Path(p)
        return str(p if p.is_absolute() else base / p)

    return ScenarioConfig(
        grid=grid, params=params, n_tcl=n_tcl, tau=tau, dt_minutes=dt,
        t_plan=t_plan, seed=int(raw.get("seed", 0)),
        weather_csv=resolve(need("weather_csv")),
        r_ba_csv=resolve(need("r_ba_csv")),
        monotone=bool(raw.get("monotone", True)),
        noise=bool(raw.get("noise", False)),
        substeps=substeps, raw=raw)


def load_weather(path: str | Path, dt_minutes: float,
                 t_plan: int) -> np.ndarray:
    """Interpolate a (timestamp, degC) CSV onto the planning grid.

    Timestamps are ISO-8601; the horizon starts at the first sample and
    must be covered by the series.
    """
    times, temps = [], []
    try:
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                if row[0].strip().lower() in ("timestamp", "time"):
                    continue
                times.append(datetime.fromisoformat(row[0].strip()))
                temps.append(float(row[1]))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read weather CSV {path}: {exc}") from exc
    if len(times) < 2:
        raise ConfigError(f"weather CSV {path} needs at least two samples")
    t0 = times[0]
    minutes = np.array([(t - t0).total_seconds() / 60.0 for t in times])
    if np.any(np.diff(minutes) <= 0):
        raise ConfigError(f"weather CSV {path} timestamps must increase")
    horizon_end = (t_plan - 1) * dt_minutes
    if minutes[-1] < horizon_end:
        raise ConfigError(
            f"weather CSV {path} covers {minutes[-1]:.1f} min but the horizon "
            f"needs {horizon_end:.1f} min")
    k_minutes = np.arange(t_plan) * dt_minutes
    return np.interp(k_minutes, minutes, np.array(temps))


def load_reference(path: str | Path, t_plan: int) -> np.ndarray:
    """Read a (step, kW) CSV; targets may be infeasible — passed through."""
    values = {}
    try:
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                if row[0].strip().lower() in ("step", "k"):
                    continue
                values[int(row[0])] = float(row[1])
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read reference CSV {path}: {exc}") from exc
    missing = [k for k in range(t_plan) if k not in values]
    if missing:
        raise ConfigError(
            f"reference CSV {path} is missing steps {missing[:5]}"
            f"{'...' if len(missing) > 5 else ''}")
    return np.array([values[k] for k in range(t_plan)])


def validate_scenario(cfg: ScenarioConfig, theta_a: np.ndarray) -> None:
    """Check every module precondition up front; raise ConfigError if any fails."""
    try:
        gamma = gamma_for_timestep(cfg.dt_minutes, cfg.grid, cfg.params)
    except InvalidParameterError as exc:
        raise ConfigError(f"diffusion bound: {exc}") from exc
    for th in np.unique(np.asarray(theta_a, dtype=float)):
        try:
            rate = build_rate_matrix(cfg.grid, cfg.params, float(th), gamma)
            transition_matrix(rate, cfg.dt_minutes)
        except AssumptionViolationError as exc:
            raise ConfigError(f"drift-sign assumption: {exc}") from exc
        except CflViolationError as exc:
            raise ConfigError(
                f"CFL: dt_minutes must be <= {exc.bound_minutes:.6g} ({exc})"
            ) from exc


def config_header(cfg: ScenarioConfig) -> str:
    """Provenance header: the resolved config, one '# ' line per entry."""
    lines = ["# tclcoord scenario"]
    for key in sorted(cfg.raw):
        lines.append(f"# {key}: {cfg.raw[key]}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# plan file

def write_plan(path: str | Path, cfg: ScenarioConfig, r_ba: np.ndarray,
               reference: np.ndarray, policies: list[PolicyPair]) -> None:
    n = cfg.grid.n_bins
    with open(path, "w", newline="") as fh:
        fh.write(config_header(cfg))
        cols = (["k", "r_ba_kw", "r_kw"]
                + [f"kappa_on_{j}" for j in range(1, n + 1)]
                + [f"kappa_off_{j}" for j in range(1, n + 1)])
        fh.write(",".join(cols) + "\n")
        for k, pol in enumerate(policies):
            nums = np.concatenate([[r_ba[k], reference[k]],
                                   pol.kappa_on, pol.kappa_off])
            fh.write(str(k) + "," + ",".join(_FMT % v for v in nums) + "\n")


def read_plan(path: str | Path, grid: GridSpec):
    """Load a plan CSV back into (r_ba, reference, policies)."""
    n = grid.n_bins
    r_ba, ref, policies = [], [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#") or row[0] == "k":
                continue
            vals = [float(v) for v in row[1:]]
            if len(vals) != 2 + 2 * n:
                raise ConfigError(f"plan row has {len(vals) + 1} fields, "
                                  f"expected {3 + 2 * n}")
            r_ba.append(vals[0])
            ref.append(vals[1])
            policies.append(PolicyPair(kappa_on=np.array(vals[2:2 + n]),
                                       kappa_off=np.array(vals[2 + n:]),
                                       grid=grid))
    return np.array(r_ba), np.array(ref), policies


# ---------------------------------------------------------------------------
# broadcast payload

def free_policy_numbers(policy: PolicyPair) -> np.ndarray:
    """The 2(q-1) per-step numbers a coordinator actually broadcasts.

    Everything else in the policy is structurally fixed: kappa_on is 0 up
    to bin m and 1 at bin N, kappa_off is 1 at bin 1 and 0 from bin q up.
    (The last broadcast slot, kappa_off at bin q, is structurally 0 and is
    included to complete the 2(q-1) payload.)
    """
    grid = policy.grid
    n, q, m = grid.n_bins, grid.q, grid.m
    return np.concatenate([policy.kappa_on[m:n - 1], policy.kappa_off[1:q]])


def policy_from_numbers(numbers: np.ndarray, grid: GridSpec) -> PolicyPair:
    """Inverse of free_policy_numbers."""
    n, q, m = grid.n_bins, grid.q, grid.m
    if len(numbers) != 2 * (q - 1):
        raise ConfigError(f"broadcast payload must have {2 * (q - 1)} numbers, "
                          f"got {len(numbers)}")
    kappa_on = np.zeros(n)
    kappa_on[m:n - 1] = numbers[:n - 1 - m]
    kappa_on[n - 1] = 1.0
    kappa_off = np.zeros(n)
    kappa_off[0] = 1.0
    kappa_off[1:q] = numbers[n - 1 - m:]
    return PolicyPair(kappa_on=np.asarray(kappa_on), kappa_off=kappa_off, grid=grid)


def write_broadcast(path: str | Path, cfg: ScenarioConfig,
                    policies: list[PolicyPair]) -> None:
    grid = cfg.grid
    with open(path, "w", newline="") as fh:
        fh.write(config_header(cfg))
        fh.write(f"# payload: {2 * (grid.q - 1)} numbers per step\n")
        fh.write(f"# fixed kappa_on: bins 1..{grid.m} = 0, bin {grid.n_bins} = 1\n")
        fh.write(f"# fixed kappa_off: bin 1 = 1, bins {grid.q}..{grid.n_bins} = 0\n")
        for k, pol in enumerate(policies):
            nums = free_policy_numbers(pol)
            fh.write(str(k) + "," + ",".join(_FMT % v for v in nums) + "\n")


def read_broadcast(path: str | Path, grid: GridSpec) -> list[PolicyPair]:
    policies = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            policies.append(policy_from_numbers(
                np.array([float(v) for v in row[1:]]), grid))
    return policies


# ---------------------------------------------------------------------------
# trace

def write_trace(path: str | Path, cfg: ScenarioConfig, r_ba: np.ndarray,
                reference: np.ndarray, power: np.ndarray,
                gamma_e: np.ndarray, tv: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(config_header(cfg))
        fh.write("k,r_ba_kw,r_kw,y_kw,gamma_e_kw,tv\n")
        for k in range(len(power)):
            nums = (r_ba[k], reference[k], power[k], gamma_e[k], tv[k])
            fh.write(str(k) + "," + ",".join(_FMT % v for v in nums) + "\n")
