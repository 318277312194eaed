"""Configuration-driven experiment runner with seeded, reproducible output.

A run is a pure function of (config, master_seed): every worker derives its
randomness from streams keyed by (master_seed, seed_index, purpose), so the
emitted CSVs are byte-identical across repetitions and parallelism levels.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .agents import AgentState, agent_step, policy_values
from .environments import (
    CartPoleParams,
    CartPoleTask,
    Discretizer,
    BairdSpec,
    RandomEnvSpec,
    build_baird,
    build_random_env,
    epsilon_greedy_action,
)
from .errors import (
    EnvironmentBuildError,
    IoError,
    ParseError,
    UnknownKey,
    ValidationError,
)
from .mdp import (
    CanonicalFeatureMap,
    FeatureMap,
    TabularMDP,
    Transition,
    canonical_features,
    greedy_policy,
    solve_optimal_q,
    uniform_policy,
)
from .rng import stream
from .simulate import AgentSpec, run_tabular, run_tabular_batch

SCHEMA_VERSION = 1

NOT_SOLVED = None  # hit-time sentinel: training ended without reaching the threshold


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------

_TOP_KEYS = {
    "schema_version",
    "master_seed",
    "num_seeds",
    "max_steps",
    "max_episodes",
    "metric_cadence",
    "output_dir",
    "environment",
    "agents",
    "evaluation",
    "bias",
    "amse",
}

_ENV_KEYS = {
    "baird": {"kind", "seed", "reward_low", "reward_high", "discount", "feature_mode"},
    "random-env": {
        "kind",
        "seed",
        "num_states",
        "num_actions",
        "dirichlet_alpha",
        "q",
        "p",
        "discount",
    },
    "cartpole": {
        "kind",
        "discount",
        "bins",
        "clip_low",
        "clip_high",
        "epsilon",
        "train_step_cap",
    },
}

_AGENT_KEYS = {
    "id",
    "variant",
    "num_copies",
    "buffer_size",
    "alpha0",
    "w_alpha",
    "lr_mode",
    "decay_index",
    "rho0",
    "w_rho",
    "rho_mode",
    "init",
    "init_low",
    "init_high",
    "identical_init",
    "epsilon",
    "lr_scale_copies",
}

_EVAL_KEYS = {"eval_every", "eval_episodes", "eval_step_cap", "solve_threshold"}

_BIAS_KEYS = {"agent_id", "x", "s_prime", "n_snapshot", "rho", "num_runs"}

_AMSE_KEYS = {"g", "g_over_g0", "num_copies", "num_seeds", "num_steps", "cadence"}


@dataclass(frozen=True)
class EvalProtocol:
    eval_every: int = 50
    eval_episodes: int = 100
    eval_step_cap: int = 210
    solve_threshold: float = 195.0


@dataclass(frozen=True)
class ExperimentConfig:
    environment: dict
    agents: tuple[AgentSpec, ...]
    num_seeds: int
    master_seed: int
    max_steps: int
    max_episodes: int
    metric_cadence: int
    output_dir: str
    evaluation: EvalProtocol
    bias: dict | None = None
    amse: dict | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _collect_unknown(data: dict, allowed: set, prefix: str, unknown: list) -> None:
    for key in data:
        if key not in allowed:
            unknown.append(f"{prefix}{key}")


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON experiment config.

    Raises ``ParseError`` for malformed JSON, ``UnknownKey`` for any key
    outside the schema, and ``ValidationError`` naming every invalid field.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc}") from exc
    return validate_config(data)


def validate_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ParseError("config root must be an object")

    unknown: list[str] = []
    problems: list[str] = []

    _collect_unknown(data, _TOP_KEYS, "", unknown)

    env = data.get("environment")
    if not isinstance(env, dict):
        problems.append("environment: required object")
        env = {}
    kind = env.get("kind")
    if kind not in _ENV_KEYS:
        problems.append(f"environment.kind: must be one of {sorted(_ENV_KEYS)}")
    else:
        _collect_unknown(env, _ENV_KEYS[kind], "environment.", unknown)
        if "discount" not in env:
            problems.append("environment.discount: required")
        elif not (0.0 < float(env["discount"]) < 1.0):
            problems.append("environment.discount: must lie in (0, 1)")
        if kind != "cartpole" and "seed" not in env:
            problems.append("environment.seed: required")

    agents_raw = data.get("agents")
    agent_specs: list[AgentSpec] = []
    if not isinstance(agents_raw, list) or not agents_raw:
        problems.append("agents: required non-empty list")
    else:
        seen_ids = set()
        for i, a in enumerate(agents_raw):
            if not isinstance(a, dict):
                problems.append(f"agents[{i}]: must be an object")
                continue
            _collect_unknown(a, _AGENT_KEYS, f"agents[{i}].", unknown)
            if "id" not in a or "variant" not in a:
                problems.append(f"agents[{i}]: id and variant are required")
                continue
            if a["id"] in seen_ids:
                problems.append(f"agents[{i}].id: duplicate id {a['id']!r}")
            seen_ids.add(a["id"])
            kwargs = {k: v for k, v in a.items() if k in _AGENT_KEYS and k != "id"}
            for fkey in ("alpha0", "w_alpha", "rho0", "w_rho", "init_low", "init_high", "epsilon"):
                if fkey in kwargs:
                    kwargs[fkey] = float(kwargs[fkey])
            try:
                spec = AgentSpec(agent_id=str(a["id"]), **kwargs)
                spec.lr_schedule()
                spec.rho_schedule()
            except (ValueError, TypeError) as exc:
                problems.append(f"agents[{i}] ({a.get('id')}): {exc}")
                continue
            agent_specs.append(spec)

    num_seeds = data.get("num_seeds", 1)
    if not isinstance(num_seeds, int) or num_seeds < 1:
        problems.append("num_seeds: must be an integer >= 1")
    master_seed = data.get("master_seed", 0)
    if not isinstance(master_seed, int) or master_seed < 0:
        problems.append("master_seed: must be a non-negative integer")
    max_steps = data.get("max_steps", 0)
    max_episodes = data.get("max_episodes", 3000)
    if kind in ("baird", "random-env") and (not isinstance(max_steps, int) or max_steps < 1):
        problems.append("max_steps: required integer >= 1 for MDP environments")
    if not isinstance(max_episodes, int) or max_episodes < 1:
        problems.append("max_episodes: must be an integer >= 1")
    cadence = data.get("metric_cadence", 1000 if kind != "cartpole" else 1)
    if not isinstance(cadence, int) or cadence < 1:
        problems.append("metric_cadence: must be an integer >= 1")

    eval_raw = data.get("evaluation", {})
    protocol = EvalProtocol()
    if not isinstance(eval_raw, dict):
        problems.append("evaluation: must be an object")
    else:
        _collect_unknown(eval_raw, _EVAL_KEYS, "evaluation.", unknown)
        try:
            protocol = EvalProtocol(
                eval_every=int(eval_raw.get("eval_every", 50)),
                eval_episodes=int(eval_raw.get("eval_episodes", 100)),
                eval_step_cap=int(eval_raw.get("eval_step_cap", 210)),
                solve_threshold=float(eval_raw.get("solve_threshold", 195.0)),
            )
        except (TypeError, ValueError) as exc:
            problems.append(f"evaluation: {exc}")
        else:
            if min(protocol.eval_every, protocol.eval_episodes, protocol.eval_step_cap) < 1:
                problems.append("evaluation: protocol fields must be positive")

    bias = data.get("bias")
    if bias is not None:
        if not isinstance(bias, dict):
            problems.append("bias: must be an object")
        else:
            _collect_unknown(bias, _BIAS_KEYS, "bias.", unknown)
            for req in ("agent_id", "s_prime", "n_snapshot", "num_runs"):
                if req not in bias:
                    problems.append(f"bias.{req}: required")

    amse = data.get("amse")
    if amse is not None:
        if not isinstance(amse, dict):
            problems.append("amse: must be an object")
        else:
            _collect_unknown(amse, _AMSE_KEYS, "amse.", unknown)

    if unknown:
        raise UnknownKey(unknown)
    if problems:
        raise ValidationError(problems)

    return ExperimentConfig(
        environment=env,
        agents=tuple(agent_specs),
        num_seeds=num_seeds,
        master_seed=master_seed,
        max_steps=int(max_steps) if max_steps else 0,
        max_episodes=int(max_episodes),
        metric_cadence=int(cadence),
        output_dir=str(data.get("output_dir", "results")),
        evaluation=protocol,
        bias=bias,
        amse=amse,
        raw=data,
    )


# ---------------------------------------------------------------------------
# environment construction
# ---------------------------------------------------------------------------


def build_environment(config: ExperimentConfig):
    """Returns (mdp, features) for tabular kinds, or a CartPoleTask."""
    env = config.environment
    kind = env["kind"]
    try:
        if kind == "baird":
            return build_baird(
                BairdSpec(
                    reward_low=float(env.get("reward_low", -0.05)),
                    reward_high=float(env.get("reward_high", 0.05)),
                    discount=float(env["discount"]),
                    feature_mode=env.get("feature_mode", "canonical-12"),
                    seed=int(env.get("seed", 0)),
                )
            )
        if kind == "random-env":
            mdp = build_random_env(
                RandomEnvSpec(
                    num_states=int(env.get("num_states", 10)),
                    num_actions=int(env.get("num_actions", 3)),
                    dirichlet_alpha=float(env.get("dirichlet_alpha", 0.1)),
                    q=float(env.get("q", 0.1)),
                    p=float(env.get("p", 0.01)),
                    discount=float(env["discount"]),
                    seed=int(env.get("seed", 0)),
                )
            )
            return mdp, canonical_features(mdp.num_states, mdp.num_actions)
        if kind == "cartpole":
            disc = Discretizer(
                bins=tuple(env.get("bins", (10, 10, 10, 10))),
                clip_low=tuple(env.get("clip_low", (-2.4, -3.0, -0.21, -3.0))),
                clip_high=tuple(env.get("clip_high", (2.4, 3.0, 0.21, 3.0))),
            )
            return CartPoleTask(
                params=CartPoleParams(),
                discretizer=disc,
                epsilon=float(env.get("epsilon", 0.1)),
                train_step_cap=int(env.get("train_step_cap", 500)),
            )
    except Exception as exc:  # validated inputs; surface builder failures
        raise EnvironmentBuildError(f"cannot build {kind}: {exc}") from exc
    raise EnvironmentBuildError(f"unknown environment kind {kind!r}")


# ---------------------------------------------------------------------------
# run records
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    """Per-(seed, agent) metric series with provenance."""

    config_hash: str
    seed: int
    agent_id: str
    rows: list[tuple[int, str, float]]   # (step, metric_name, value)
    wall_clock: float
    params_digest: str


def _digest(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# cart-pole training / evaluation
# ---------------------------------------------------------------------------


def _greedy_episode_return(
    agent: AgentState,
    task: CartPoleTask,
    features: CanonicalFeatureMap,
    rng: np.random.Generator,
    step_cap: int,
) -> float:
    total = 0.0
    state = task.reset(rng)
    for _ in range(step_cap):
        cell = task.cell(state)
        action = epsilon_greedy_action(policy_values(agent, features, cell), 0.0, rng)
        state, reward, done = task.step(state, action)
        total += reward
        if done:
            break
    return total


def evaluate_hit_time(
    agent: AgentState,
    cartpole_env: CartPoleTask,
    protocol: EvalProtocol,
    rng: np.random.Generator,
    *,
    max_episodes: int = 3000,
    rng_eval: np.random.Generator | None = None,
) -> int | None:
    """Train with per-step updates; every ``eval_every`` episodes freeze the
    parameters and run greedy evaluation episodes. Returns the training
    episode count at the first passing evaluation, or ``NOT_SOLVED``.

    Evaluation draws come from a separate stream so the training trajectory
    is invariant to the evaluation cadence; evaluation never writes to the
    agent.
    """
    features = CanonicalFeatureMap(cartpole_env.num_cells, cartpole_env.num_actions)
    if rng_eval is None:
        rng_eval = rng.spawn(1)[0]
    for episode in range(1, max_episodes + 1):
        state = cartpole_env.reset(rng)
        for _ in range(cartpole_env.train_step_cap):
            cell = cartpole_env.cell(state)
            action = epsilon_greedy_action(
                policy_values(agent, features, cell), cartpole_env.epsilon, rng
            )
            nxt, reward, done = cartpole_env.step(state, action)
            transition = Transition(cell, action, reward, cartpole_env.cell(nxt))
            agent_step(agent, transition, features, rng, terminal=done)
            state = nxt
            if done:
                break
        agent.episode = episode
        if episode % protocol.eval_every == 0:
            total = 0.0
            for _ in range(protocol.eval_episodes):
                total += _greedy_episode_return(
                    agent, cartpole_env, features, rng_eval, protocol.eval_step_cap
                )
            if total / protocol.eval_episodes >= protocol.solve_threshold:
                return episode
    return NOT_SOLVED


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------


def _tabular_seed_chunk(args):
    (config, mdp, features, spec, seeds, theta_star, pi_star) = args
    behavior = uniform_policy(mdp.num_states, mdp.num_actions)
    records = []
    if features.is_canonical:
        env_streams = [stream(config.master_seed, k, "env") for k in seeds]
        agent_streams = [stream(config.master_seed, k, "agent") for k in seeds]
        t0 = time.perf_counter()
        result = run_tabular_batch(
            mdp,
            behavior,
            spec,
            num_steps=config.max_steps,
            env_streams=env_streams,
            agent_streams=agent_streams,
            theta_star=theta_star,
            cadence=config.metric_cadence,
            pi_star=pi_star,
        )
        wall = time.perf_counter() - t0
        for j, seed in enumerate(seeds):
            rows = [
                (int(step), "mse", float(result.mse[j, p]))
                for p, step in enumerate(result.steps)
            ]
            records.append(
                RunRecord(
                    config_hash=config.config_hash,
                    seed=seed,
                    agent_id=spec.agent_id,
                    rows=rows,
                    wall_clock=wall / len(seeds),
                    params_digest=_digest(result.thetas[j]),
                )
            )
    else:
        for seed in seeds:
            t0 = time.perf_counter()
            result = run_tabular(
                mdp,
                behavior,
                spec,
                num_steps=config.max_steps,
                env_stream=stream(config.master_seed, seed, "env"),
                agent_stream=stream(config.master_seed, seed, "agent"),
                features=features,
                theta_star=theta_star,
                cadence=config.metric_cadence,
                pi_star=pi_star,
            )
            rows = [
                (int(step), "mse", float(result.mse[0, p]))
                for p, step in enumerate(result.steps)
            ]
            records.append(
                RunRecord(
                    config_hash=config.config_hash,
                    seed=seed,
                    agent_id=spec.agent_id,
                    rows=rows,
                    wall_clock=time.perf_counter() - t0,
                    params_digest=_digest(result.thetas[0]),
                )
            )
    return records


def _cartpole_seed(args):
    (config, task, spec, seed) = args
    features = CanonicalFeatureMap(task.num_cells, task.num_actions)
    rng_train = stream(config.master_seed, seed, "env")
    rng_agent = stream(config.master_seed, seed, "agent")
    rng_eval = stream(config.master_seed, seed, "eval")
    agent = spec.make_state(features, config.environment["discount"], init_rng=rng_agent)
    t0 = time.perf_counter()
    hit = evaluate_hit_time(
        agent,
        task,
        config.evaluation,
        rng_train,
        max_episodes=config.max_episodes,
        rng_eval=rng_eval,
    )
    wall = time.perf_counter() - t0
    if hit is NOT_SOLVED:
        rows = [(config.max_episodes, "not_solved", 1.0)]
    else:
        rows = [(0, "hit_time", float(hit))]
    return RunRecord(
        config_hash=config.config_hash,
        seed=seed,
        agent_id=spec.agent_id,
        rows=rows,
        wall_clock=wall,
        params_digest=_digest(agent.thetas),
    )


def run_experiment(config: ExperimentConfig, parallelism: int = 1) -> list[RunRecord]:
    """One record per (seed, agent); byte-identical output for identical
    configs at any parallelism level."""
    kind = config.environment["kind"]
    records: list[RunRecord] = []
    if kind == "cartpole":
        task = build_environment(config)
        jobs = [
            (config, task, spec, seed)
            for spec in config.agents
            for seed in range(config.num_seeds)
        ]
        if parallelism > 1:
            with ProcessPoolExecutor(max_workers=parallelism) as pool:
                records = list(pool.map(_cartpole_seed, jobs, chunksize=1))
        else:
            records = [_cartpole_seed(job) for job in jobs]
    else:
        mdp, features = build_environment(config)
        theta_star = _feature_theta_star(mdp, features)
        pi_star = greedy_policy(solve_optimal_q(mdp, tol=1e-12), mdp.num_actions)
        seeds = list(range(config.num_seeds))
        if parallelism > 1:
            per = max(1, (len(seeds) + parallelism - 1) // parallelism)
            chunks = [seeds[i : i + per] for i in range(0, len(seeds), per)]
        else:
            chunks = [seeds]
        jobs = [
            (config, mdp, features, spec, chunk, theta_star, pi_star)
            for spec in config.agents
            for chunk in chunks
        ]
        if parallelism > 1:
            with ProcessPoolExecutor(max_workers=parallelism) as pool:
                for recs in pool.map(_tabular_seed_chunk, jobs, chunksize=1):
                    records.extend(recs)
        else:
            for job in jobs:
                records.extend(_tabular_seed_chunk(job))
    records.sort(key=lambda r: (r.agent_id, r.seed))
    return records


def _feature_theta_star(mdp: TabularMDP, features: FeatureMap) -> np.ndarray:
    """Best parameter vector: Q* itself in the canonical case, otherwise the
    stationary point of the linearized recursion."""
    q_star = solve_optimal_q(mdp, tol=1e-12)
    if features.is_canonical:
        return q_star
    from .analysis import build_asymptotic_model  # local import to avoid a cycle

    behavior = uniform_policy(mdp.num_states, mdp.num_actions)
    model = build_asymptotic_model(mdp, behavior, features, g=1.0, num_copies=1)
    return model.theta_star


# ---------------------------------------------------------------------------
# result emission
# ---------------------------------------------------------------------------


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def emit_results(records: list[RunRecord], out_dir, *, plots: bool = False,
                 log_y: bool = False) -> list[str]:
    """Write runs.csv and summary.csv (and optional SVG plots); returns the
    manifest of paths. Stable column order, LF endings, 17-digit floats."""
    if not records:
        raise IoError("no records to emit")
    try:
        os.makedirs(out_dir, exist_ok=True)
        runs_path = os.path.join(out_dir, "runs.csv")
        lines = ["config_hash,seed,agent,step,metric_name,value"]
        for rec in records:
            for step, metric, value in rec.rows:
                lines.append(
                    f"{rec.config_hash},{rec.seed},{rec.agent_id},{step},{metric},{_fmt(value)}"
                )
        with open(runs_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

        groups: dict[tuple[str, int, str], list[float]] = {}
        for rec in records:
            for step, metric, value in rec.rows:
                groups.setdefault((rec.agent_id, step, metric), []).append(value)
        summary_path = os.path.join(out_dir, "summary.csv")
        out = ["agent,step,metric_name,mean,stderr,count"]
        for (agent_id, step, metric) in sorted(groups):
            vals = np.asarray(groups[(agent_id, step, metric)])
            mean = float(vals.mean())
            stderr = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
            out.append(
                f"{agent_id},{step},{metric},{_fmt(mean)},{_fmt(stderr)},{len(vals)}"
            )
        with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(out) + "\n")
        manifest = [runs_path, summary_path]
        if plots:
            manifest.append(plot_runs(runs_path, out_dir, log_y=log_y))
        return manifest
    except OSError as exc:
        raise IoError(f"cannot write results: {exc}") from exc


def plot_runs(runs_csv, out_dir, *, log_y: bool = False, scale_by_step: bool = False) -> str:
    """Line plot of per-agent mean metric vs step with standard-error bands."""
    import csv

    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "robustq"
    import matplotlib.pyplot as plt

    series: dict[tuple[str, str], dict[int, list[float]]] = {}
    with open(runs_csv, "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (row["agent"], row["metric_name"])
            series.setdefault(key, {}).setdefault(int(row["step"]), []).append(
                float(row["value"])
            )
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for (agent_id, metric), by_step in sorted(series.items()):
        steps = np.asarray(sorted(by_step))
        means = np.asarray([np.mean(by_step[s]) for s in steps])
        ses = np.asarray(
            [
                np.std(by_step[s], ddof=1) / np.sqrt(len(by_step[s]))
                if len(by_step[s]) > 1
                else 0.0
                for s in steps
            ]
        )
        if scale_by_step:
            means = means * steps
            ses = ses * steps
        label = agent_id if metric == "mse" else f"{agent_id} ({metric})"
        ax.plot(steps, means, label=label)
        ax.fill_between(steps, means - ses, means + ses, alpha=0.25)
    if log_y:
        ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel(("n * " if scale_by_step else "") + "metric")
    ax.legend(fontsize=8)
    fig.tight_layout()
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "plot.svg")
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return path
