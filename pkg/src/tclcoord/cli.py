"""Command-line entry points: plan, simulate, validate-model, export-broadcast, audit.

Exit codes: 0 success, 2 configuration error, 3 solver iteration cap,
4 QoS violation detected by the audit.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .config import (ScenarioConfig, config_header, load_config,
                     load_reference, load_weather, read_broadcast, read_plan,
                     validate_scenario, write_broadcast, write_plan,
                     write_trace)
from .errors import ConfigError, SolverCapError, TclCoordError
from .expanded import (expand_policy, models_for_trajectory, step,
                       thermostat_stationary)
from .fleet import (audit as qos_audit, excursion_bound, init_fleet,
                    sample_states, simulate, simulate_chain, tv_distance)
from .generator import fleet_max_power
from . import synthesis

EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_QOS = 4


def _load(config_path):
    cfg = load_config(config_path)
    theta_a = load_weather(cfg.weather_csv, cfg.dt_minutes, cfg.t_plan)
    validate_scenario(cfg, theta_a)
    return cfg, theta_a


def _models(cfg: ScenarioConfig, theta_a):
    return models_for_trajectory(cfg.grid, cfg.params, cfg.dt_minutes,
                                 cfg.tau, theta_a, fleet_max_power(cfg.n_tcl, cfg.params))


def _rollout(cfg, policies, theta_a, models):
    """Model marginals and power under a policy schedule from nu-hat."""
    nu = thermostat_stationary(models[0])
    half = cfg.grid.n_bins * (cfg.tau + 1)
    p_agg = fleet_max_power(cfg.n_tcl, cfg.params)
    marginals = np.empty((len(policies), 2 * half))
    power = np.empty(len(policies))
    for k, pol in enumerate(policies):
        marginals[k] = nu
        power[k] = p_agg * nu[half:].sum()
        nu = step(nu, expand_policy(pol, cfg.tau), models[k])
    return marginals, power


@click.group()
def main():
    """Coordinate fleets of thermostatically controlled loads."""


@main.command("plan")
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--out", default="plan.csv", show_default=True,
              help="Plan CSV output path.")
def cli_plan(config_path, out):
    """Solve the planning QP and write the policy schedule."""
    try:
        cfg, theta_a = _load(config_path)
        r_ba = load_reference(cfg.r_ba_csv, cfg.t_plan)
        models = _models(cfg, theta_a)
        nu0 = thermostat_stationary(models[0])
        problem = synthesis.PlanProblem(
            grid=cfg.grid, params=cfg.params, dt_minutes=cfg.dt_minutes,
            tau=cfg.tau, n_tcl=cfg.n_tcl, theta_a=theta_a, r_ba=r_ba,
            nu0=nu0, monotone=cfg.monotone)
        solution = synthesis.plan(problem, models)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except SolverCapError as exc:
        click.echo(f"solver cap: {exc} (residuals {exc.residuals})", err=True)
        sys.exit(EXIT_SOLVER)
    write_plan(out, cfg, r_ba, solution.reference, solution.policies)
    click.echo(f"plan: {cfg.t_plan} steps, cost {solution.cost:.6g} kW^2, "
               f"{solution.iterations} iterations -> {out}")


@main.command("simulate")
@click.argument("config_path", type=click.Path(exists=True))
@click.argument("plan_path", type=click.Path(exists=True))
@click.option("--trace", default="trace.csv", show_default=True)
@click.option("--audit-out", default="audit.json", show_default=True)
def cli_simulate(config_path, plan_path, trace, audit_out):
    """Replay a plan on a fresh Monte Carlo fleet; write trace and audit."""
    try:
        cfg, theta_a = _load(config_path)
        r_ba, reference, policies = read_plan(plan_path, cfg.grid)
        if len(policies) != cfg.t_plan:
            raise ConfigError(f"plan has {len(policies)} steps, config expects "
                              f"{cfg.t_plan}")
        models = _models(cfg, theta_a)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    marginals, gamma_e = _rollout(cfg, policies, theta_a, models)
    bound = excursion_bound(cfg.grid, cfg.params, theta_a, cfg.dt_minutes)
    state = init_fleet(marginals[0], cfg.n_tcl, cfg.grid, cfg.tau, cfg.seed,
                       max_excursion=bound)
    result = simulate(state, policies, theta_a, cfg.params, cfg.grid, cfg.tau,
                      cfg.dt_minutes, cfg.seed, noise=cfg.noise,
                      substeps=cfg.substeps)
    report = qos_audit(result, reference, marginals, cfg.grid, cfg.params,
                       theta_a, cfg.dt_minutes, cfg.tau,
                       fleet_max_power(cfg.n_tcl, cfg.params))
    tvs = np.array([tv_distance(result.histograms[k], marginals[k])
                    for k in range(cfg.t_plan)])
    write_trace(trace, cfg, r_ba, reference, result.power, gamma_e, tvs)
    Path(audit_out).write_text(json.dumps({
        "min_gap_minutes": report.min_gap_minutes,
        "n_gap_violations": report.n_gap_violations,
        "max_excursion_degc": report.max_excursion,
        "excursion_limit_degc": report.excursion_limit,
        "rmse_tracking": report.rmse_tracking,
        "mean_tv": report.mean_tv,
        "n_switches": result.n_switches,
        "ok": report.ok,
    }, indent=2) + "\n")
    click.echo(f"simulate: RMSE {report.rmse_tracking:.4f}, "
               f"min gap {report.min_gap_minutes:g} min, "
               f"max excursion {report.max_excursion:.4f} degC -> {trace}")
    if not report.ok:
        click.echo("QoS violation detected", err=True)
        sys.exit(EXIT_QOS)


@main.command("validate-model")
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--plan", "plan_path", type=click.Path(exists=True),
              default=None, help="Policy schedule to validate (default: thermostat).")
@click.option("--seeds", default=10, show_default=True)
@click.option("--out", default="validation.json", show_default=True)
def cli_validate_model(config_path, plan_path, seeds, out):
    """Mean-field check: bin-state fleet histogram vs. the model marginal."""
    try:
        cfg, theta_a = _load(config_path)
        models = _models(cfg, theta_a)
        if plan_path is not None:
            _, _, policies = read_plan(plan_path, cfg.grid)
        else:
            from .markov import thermostat_policy
            policies = [thermostat_policy(cfg.grid)] * cfg.t_plan
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    marginals, _ = _rollout(cfg, policies, theta_a, models)
    mean_tvs = []
    for s in range(seeds):
        states = sample_states(marginals[0], cfg.n_tcl, cfg.seed + s)
        hists = simulate_chain(states, policies, models, cfg.tau, cfg.seed + s)
        mean_tvs.append(float(np.mean(
            [tv_distance(hists[k], marginals[k]) for k in range(cfg.t_plan)])))
    Path(out).write_text(json.dumps({
        "n_tcl": cfg.n_tcl, "seeds": seeds,
        "mean_tv_per_seed": mean_tvs,
        "mean_tv": float(np.mean(mean_tvs)),
    }, indent=2) + "\n")
    click.echo(f"validate-model: mean TV {np.mean(mean_tvs):.5f} "
               f"over {seeds} seeds -> {out}")


@main.command("export-broadcast")
@click.argument("config_path", type=click.Path(exists=True))
@click.argument("plan_path", type=click.Path(exists=True))
@click.option("--out", default="broadcast.txt", show_default=True)
def cli_export_broadcast(config_path, plan_path, out):
    """Write the per-step broadcast payloads; verify the round trip."""
    try:
        cfg, _ = _load(config_path)
        _, _, policies = read_plan(plan_path, cfg.grid)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    write_broadcast(out, cfg, policies)
    back = read_broadcast(out, cfg.grid)
    exact = all(np.array_equal(a.kappa_on, b.kappa_on)
                and np.array_equal(a.kappa_off, b.kappa_off)
                for a, b in zip(policies, back)) and len(back) == len(policies)
    if not exact:
        click.echo("broadcast round-trip mismatch", err=True)
        sys.exit(1)
    click.echo(f"export-broadcast: {len(policies)} steps x "
               f"{2 * (cfg.grid.q - 1)} numbers -> {out} (round-trip exact)")


@main.command("audit")
@click.argument("audit_path", type=click.Path(exists=True))
def cli_audit(audit_path):
    """Re-examine a simulation audit report; exit 4 on QoS violations."""
    report = json.loads(Path(audit_path).read_text())
    for key, val in report.items():
        click.echo(f"{key}: {val}")
    if not report.get("ok", False):
        click.echo("QoS violation detected", err=True)
        sys.exit(EXIT_QOS)


if __name__ == "__main__":
    main()
