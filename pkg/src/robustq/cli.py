"""Command-line entry points.

Exit codes: 0 on success, 2 for configuration problems, 3 for runtime
failures.
"""

from __future__ import annotations

import json
import os
import sys

import click

from .errors import ParseError, RobustQError, UnknownKey, ValidationError
from .harness import (
    build_environment,
    emit_results,
    load_config,
    plot_runs,
    run_experiment,
)
from .mdp import load_mdp, solve_optimal_q, uniform_policy

CONFIG_ERROR, RUNTIME_ERROR = 2, 3


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load(path):
    try:
        return load_config(path)
    except (ParseError, ValidationError, UnknownKey) as exc:
        _fail(CONFIG_ERROR, str(exc))


@click.group()
def main():
    """Q-learning benchmark harness: training runs, bias and AMSE analyses."""


@main.command("run")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seeds", type=int, default=None, help="Override num_seeds.")
@click.option("--parallel", type=int, default=1, help="Worker processes.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--plots/--no-plots", default=False, help="Also write an SVG plot.")
@click.option("--log-y", is_flag=True, default=False, help="Log-scale the plot y-axis.")
def run_cmd(config_path, seeds, parallel, out, plots, log_y):
    """Run the experiment described by CONFIG_PATH and emit CSV results."""
    config = _load(config_path)
    if seeds is not None:
        raw = dict(config.raw)
        raw["num_seeds"] = seeds
        from .harness import validate_config

        try:
            config = validate_config(raw)
        except (ValidationError, UnknownKey) as exc:
            _fail(CONFIG_ERROR, str(exc))
    out_dir = out or config.output_dir
    try:
        records = run_experiment(config, parallelism=max(1, parallel))
        manifest = emit_results(records, out_dir, plots=plots, log_y=log_y)
    except RobustQError as exc:
        _fail(RUNTIME_ERROR, str(exc))
    for path in manifest:
        click.echo(path)


@main.command("solve-q")
@click.argument("mdp_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--tol", type=float, default=1e-10, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write JSON here instead of stdout.")
def solve_q_cmd(mdp_file, tol, out):
    """Solve the optimal Q-values of a serialized MDP."""
    try:
        mdp = load_mdp(mdp_file)
    except (RobustQError, OSError, ValueError, KeyError) as exc:
        _fail(CONFIG_ERROR, f"cannot load MDP: {exc}")
    try:
        q_star = solve_optimal_q(mdp, tol=tol)
    except RobustQError as exc:
        _fail(RUNTIME_ERROR, str(exc))
    payload = json.dumps(
        {
            "num_states": mdp.num_states,
            "num_actions": mdp.num_actions,
            "q_star": [float(f"{v:.17g}") for v in q_star],
        }
    )
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(payload + "\n")
        click.echo(out)
    else:
        click.echo(payload)


@main.command("bias")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None)
def bias_cmd(config_path, out):
    """Monte Carlo estimation-bias report for one configured agent."""
    config = _load(config_path)
    if config.bias is None:
        _fail(CONFIG_ERROR, "config has no 'bias' section")
    if config.environment["kind"] == "cartpole":
        _fail(CONFIG_ERROR, "bias measurement needs a tabular environment")
    from .analysis import measure_bias

    spec = next(
        (a for a in config.agents if a.agent_id == config.bias["agent_id"]), None
    )
    if spec is None:
        _fail(CONFIG_ERROR, f"bias.agent_id {config.bias['agent_id']!r} not in agents")
    try:
        mdp, features = build_environment(config)
        report = measure_bias(
            spec,
            mdp,
            features,
            int(config.bias.get("x", 0)),
            int(config.bias["s_prime"]),
            int(config.bias["n_snapshot"]),
            config.bias.get("rho"),
            int(config.bias["num_runs"]),
            config.master_seed,
        )
    except RobustQError as exc:
        _fail(RUNTIME_ERROR, str(exc))
    out_dir = out or config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "bias.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("method,N,rho,n,bias,se,band_hi,membership_freq\n")
        fh.write(
            f"{report.method},{report.num_copies},{report.rho:.17g},"
            f"{report.snapshot_step},{report.bias:.17g},{report.bias_se:.17g},"
            f"{report.band_high:.17g},{report.membership_freq:.17g}\n"
        )
    click.echo(path)


@main.command("amse")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None)
def amse_cmd(config_path, out):
    """Predicted vs empirical scaled asymptotic error for the linearized
    robust-averaging recursion."""
    config = _load(config_path)
    if config.amse is None:
        _fail(CONFIG_ERROR, "config has no 'amse' section")
    if config.environment["kind"] == "cartpole":
        _fail(CONFIG_ERROR, "amse analysis needs a tabular environment")
    from .analysis import (
        build_asymptotic_model,
        empirical_linearized_amse,
        lyapunov_amse,
    )

    section = config.amse
    try:
        mdp, features = build_environment(config)
        behavior = uniform_policy(mdp.num_states, mdp.num_actions)
        n_copies = int(section.get("num_copies", 10))
        probe = build_asymptotic_model(mdp, behavior, features, g=1.0, num_copies=1)
        g = float(section.get("g", 0.0)) or float(section.get("g_over_g0", 2.0)) * probe.g0
        model = build_asymptotic_model(mdp, behavior, features, g=g, num_copies=n_copies)
        _, predicted = lyapunov_amse(model)
        num_steps = int(section.get("num_steps", 10**6))
        steps, curve, se = empirical_linearized_amse(
            mdp,
            behavior,
            g,
            n_copies,
            num_steps=num_steps,
            num_seeds=int(section.get("num_seeds", 200)),
            seed=config.master_seed,
            cadence=int(section.get("cadence", 0)) or num_steps,
        )
    except RobustQError as exc:
        _fail(RUNTIME_ERROR, str(exc))
    out_dir = out or config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "amse.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("method,N,g,n,predicted_trace,empirical_trace\n")
        fh.write(
            f"twora-linearized,{n_copies},{g:.17g},{int(steps[-1])},"
            f"{predicted:.17g},{curve[-1]:.17g}\n"
        )
    click.echo(path)
    click.echo(
        f"predicted={predicted:.6g} empirical={curve[-1]:.6g} "
        f"rel_err={abs(curve[-1] - predicted) / predicted:.3f}"
    )


@main.command("plot")
@click.argument("runs_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=".")
@click.option("--log-y", is_flag=True, default=False)
@click.option("--scale-by-step", is_flag=True, default=False,
              help="Plot n * metric instead of the raw metric.")
def plot_cmd(runs_csv, out, log_y, scale_by_step):
    """Render runs.csv as an SVG line plot with standard-error bands."""
    try:
        path = plot_runs(runs_csv, out, log_y=log_y, scale_by_step=scale_by_step)
    except (OSError, ValueError) as exc:
        _fail(RUNTIME_ERROR, str(exc))
    click.echo(path)


if __name__ == "__main__":
    main()
