"""Command-line interface for running experiments and exact analyses."""

from __future__ import annotations

import json
import os

import click
import numpy as np

from . import drl as drl_mod
from . import harness, model, oracle


def _config(spec: str) -> model.ScenarioConfig:
    try:
        return model.resolve_config(spec)
    except model.ConfigError as exc:
        raise click.ClickException(str(exc))


def _outdir(out: str | None) -> str:
    path = out or harness.default_out_dir()
    os.makedirs(path, exist_ok=True)
    return path


@click.group()
def main():
    """Service chain composition experiments: distributed samplers, a
    best-response baseline, tree-search and learned composers, plus an
    exact oracle for small instances.

    --config accepts a YAML scenario file or a built-in name
    (t1, p-default, p-f2)."""


@main.command()
@click.option("--config", "config_spec", required=True, help="scenario file or built-in name")
@click.option("--scheme", type=click.Choice(harness.SCHEMES), required=True)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--duration-s", type=float, default=100.0, show_default=True,
              help="simulated seconds (one scheme iteration per slot)")
@click.option("--runs", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--out", type=click.Path(), default=None,
              help="output directory [default: $SCCASIM_OUT_DIR or ./out]")
@click.option("--beta", type=float, default=None, help="override the scenario beta")
@click.option("--mcts-budget", type=click.IntRange(min=1), default=500, show_default=True)
@click.option("--mcts-normalized-reward", is_flag=True,
              help="rescale back-propagated rewards to [-1, 0] by the running potential range")
@click.option("--trace-every", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--net", "net_path", type=click.Path(exists=True), default=None,
              help="trained policy net (required for --scheme drl)")
@click.option("--migrate-common", is_flag=True,
              help="on VM failure, migrate all displaced traffic to one common survivor")
def run(config_spec, scheme, seed, duration_s, runs, out, beta, mcts_budget,
        mcts_normalized_reward, trace_every, net_path, migrate_common):
    """Run one scheme for a duration over one or more seeds."""
    config = _config(config_spec)
    outdir = _outdir(out)
    kwargs = dict(
        duration_s=duration_s, beta=beta, trace_every=trace_every,
        mcts_budget=mcts_budget, mcts_normalized_reward=mcts_normalized_reward,
        migrate_common=migrate_common,
    )
    if scheme == "drl":
        if net_path is None:
            raise click.ClickException("--scheme drl requires --net")
        kwargs["net"] = drl_mod.load_net(net_path)[0]
    if mcts_normalized_reward and scheme != "mcts":
        raise click.ClickException("--mcts-normalized-reward only applies to --scheme mcts")
    try:
        traces = harness.run_many(config, scheme, seed, runs, **kwargs)
    except (ValueError, harness.UnrecoverableScenarioError) as exc:
        raise click.ClickException(str(exc))
    for t in traces:
        harness.write_trace_csv(t, os.path.join(outdir, f"run_{t.run_id:04d}.csv"))
    agg = harness.aggregate(traces)
    harness.write_aggregate_csv(agg, os.path.join(outdir, "aggregate.csv"))
    click.echo(
        f"{scheme}: {runs} run(s) x {duration_s}s -> {outdir}\n"
        f"converged potential {agg.converged_potential:.6g}, "
        f"converged weighted cost {agg.converged_cost:.6g}"
    )


def _parse_grid(spec: str) -> tuple[list[float], list[float]]:
    parts = dict(
        kv.split("=", 1) for kv in spec.split(";") if "=" in kv
    )
    if set(parts) != {"user", "vm"}:
        raise click.ClickException(
            'grid must look like "user=0,0.1,0.5;vm=0,0.1,0.5"'
        )
    return (
        [float(x) for x in parts["user"].split(",")],
        [float(x) for x in parts["vm"].split(",")],
    )


@main.command("sweep-failures")
@click.option("--config", "config_spec", required=True)
@click.option("--grid", required=True, help='failure probabilities, e.g. "user=0,0.1;vm=0,0.1"')
@click.option("--scheme", type=click.Choice(("mh", "ma", "uscs")), default="mh", show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--runs", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--duration-s", type=float, default=100.0, show_default=True)
@click.option("--trace-every", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def sweep_failures(config_spec, grid, scheme, seed, runs, duration_s, trace_every, out):
    """Converged weighted cost over a grid of user/VM failure probabilities."""
    config = _config(config_spec)
    user_bars, vm_bars = _parse_grid(grid)
    outdir = _outdir(out)
    result = harness.sweep_failures(
        config, user_bars, vm_bars, scheme=scheme, seed=seed,
        n_runs=runs, duration_s=duration_s, trace_every=trace_every,
    )
    harness.write_sweep_csv(result, os.path.join(outdir, "sweep_failures.csv"))
    click.echo(f"wrote {outdir}/sweep_failures.csv")
    header = "user\\vm " + " ".join(f"{v:>9.3g}" for v in result.vm_bars)
    click.echo(header)
    for a, ub in enumerate(result.user_bars):
        row = " ".join(f"{c:>9.4g}" for c in result.costs[a])
        click.echo(f"{ub:>7.3g} {row}")
    click.echo(f"monotone along both axes: {result.monotone}")
    for v in result.violations:
        click.echo(f"  violation: {v}")


@main.command("oracle")
@click.option("--config", "config_spec", required=True)
@click.option("--beta", type=float, default=None)
@click.option("--epsilon", type=float, default=1e-3, show_default=True)
@click.option("--cap", type=int, default=oracle.DEFAULT_MATRIX_CAP, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def oracle_cmd(config_spec, beta, epsilon, cap, out):
    """Exact analysis of an enumerable instance: optimum, chain checks,
    measured mixing times, and the closed-form bounds."""
    import dataclasses

    config = _config(config_spec)
    topology, players, params = model.build_scenario(config)
    if beta is not None:
        params = dataclasses.replace(params, beta=beta)
    try:
        profile, phi_star = oracle.enumerate_optimal(topology, players, params, cap=cap)
        reports = {
            kind: oracle.bound_report(topology, players, params, epsilon, kind, cap=cap)
            for kind in ("ma", "mh")
        }
    except oracle.EnumerationCapError as exc:
        raise click.ClickException(str(exc))
    n_states = 1
    for p in players:
        n_states *= len(model.strategy_space(p, topology))
    payload = {
        "beta": params.beta,
        "epsilon": epsilon,
        "n_states": n_states,
        "optimal_potential": phi_star,
        "optimal_profile": [list(s.vms) for s in profile.strategies],
        "ma": reports["ma"].to_dict(),
        "mh": reports["mh"].to_dict(),
    }
    text = json.dumps(payload, indent=2)
    click.echo(text)
    if out is not None:
        outdir = _outdir(out)
        with open(os.path.join(outdir, "bound_report.json"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


@main.command("drl-train")
@click.option("--config", "config_spec", required=True)
@click.option("--episodes", type=click.IntRange(min=1), required=True)
@click.option("--out", "net_path", type=click.Path(), required=True)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--hidden", type=click.IntRange(min=1), default=128, show_default=True)
@click.option("--lr", type=float, default=1e-4, show_default=True)
@click.option("--horizon", type=int, default=None, help="steps per episode [default: 20*N]")
@click.option("--discount", type=float, default=0.99, show_default=True)
def drl_train(config_spec, episodes, net_path, seed, hidden, lr, horizon, discount):
    """Train a policy net for one scenario and save it for `run --scheme drl`."""
    config = _config(config_spec)
    topology, players, params = model.build_scenario(config)
    codec = drl_mod.StateCodec(topology, players)
    rng = np.random.default_rng(seed)
    net = drl_mod.PolicyNet.create(codec.n_inputs, hidden, codec.n_actions, rng)
    horizon = horizon if horizon is not None else 20 * len(players)
    result = drl_mod.train(
        net, codec, topology, players, params,
        episodes=episodes, horizon=horizon, lr=lr, discount=discount, rng=rng,
    )
    drl_mod.save_net(result.net, net_path, seed=seed)
    curve = result.mean_potential_per_episode
    click.echo(
        f"trained {episodes} episodes (horizon {horizon}); "
        f"mean potential first 10: {curve[:10].mean():.6g}, "
        f"last 10: {curve[-10:].mean():.6g} -> {net_path}"
    )


if __name__ == "__main__":
    main()
