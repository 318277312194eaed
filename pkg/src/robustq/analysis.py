"""Verification quantities: error curves, estimation-bias statistics, and
the asymptotic mean-squared-error predictor.

The AMSE predictor works in coordinates shifted by the optimal parameter
vector. In those coordinates the per-step noise is the temporal-difference
residual evaluated at the optimum,

    b~(x, s') = phi(x) * ( r(x) + gamma * phi(s', pi*(s'))^T theta*
                           - phi(x)^T theta* ),

whose stationary mean vanishes because theta* solves the projected fixed
point equation. b~ depends on the pair (X_n, S_{n+1}), so the
autocovariance series is summed over the pair chain Z_n = (X_n, S_{n+1})
using its fundamental matrix; a direct truncated summation is used as the
test oracle for this closed form.

The stacked-copy noise has covariance blocks
    diagonal: N * E[b~ b~^T] + 2 B2,   off-diagonal: 2 B2,
with B2 the symmetrized tail sum, and the scaled asymptotic covariance
solves  Sigma (I/2 + g Abar^T) + (I/2 + g Abar) Sigma + g^2 Sigma_b = 0.
The averaged estimator's predicted limit of n * E||theta_hat - theta*||^2
is trace((V + (N-1) C) / N) with V and C the diagonal and off-diagonal
blocks of the solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatch,
    EmptySeries,
    GainBelowThreshold,
    InsufficientRuns,
    NonUniqueOptimalPolicy,
    NotConverged,
    NotErgodic,
    SeriesDiverged,
    SingularSystem,
)
from .mdp import (
    FeatureMap,
    Policy,
    TabularMDP,
    greedy_policy,
    solve_optimal_q,
    stationary_distribution,
)
from .rng import stream
from .simulate import AgentSpec, run_tabular_batch

# ---------------------------------------------------------------------------
# pointwise error metrics
# ---------------------------------------------------------------------------


def mse_to_optimal(theta_hat: np.ndarray, theta_star: np.ndarray) -> float:
    """Squared Euclidean distance ||theta_hat - theta*||^2."""
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    theta_star = np.asarray(theta_star, dtype=np.float64)
    if theta_hat.shape != theta_star.shape:
        raise DimensionMismatch(
            f"shapes {theta_hat.shape} and {theta_star.shape} differ"
        )
    diff = theta_hat - theta_star
    return float(diff @ diff)


def empirical_amse(steps, mse_per_seed) -> tuple[np.ndarray, np.ndarray]:
    """n * mean-MSE curve over a seed ensemble, with standard errors."""
    steps = np.asarray(steps, dtype=np.float64)
    mse = np.asarray(mse_per_seed, dtype=np.float64)
    if mse.ndim != 2 or mse.shape[0] < 1 or mse.shape[1] < 1:
        raise EmptySeries("need at least one seed trajectory with one point")
    if mse.shape[1] != steps.shape[0]:
        raise DimensionMismatch("mse columns must align with the step grid")
    num_seeds = mse.shape[0]
    curve = steps * mse.mean(axis=0)
    if num_seeds > 1:
        se = steps * mse.std(axis=0, ddof=1) / np.sqrt(num_seeds)
    else:
        se = np.zeros_like(curve)
    return curve, se


# ---------------------------------------------------------------------------
# estimation bias
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BiasReport:
    """Monte Carlo bias of a method's bootstrap value at a fixed (x, s').

    ``bias = reference - estimator_mean``: positive means underestimation.
    The theoretical band for the robust-averaged estimator is
    [0, sqrt(rho) * gamma * max_a ||phi(s', a)||] and applies when the
    plug-in mean parameter lies inside the radius-sqrt(rho) ball around the
    run's copy average; ``membership_freq`` reports how often it does.
    """

    method: str
    num_copies: int
    rho: float
    snapshot_step: int
    num_runs: int
    estimator_mean: float
    estimator_se: float
    reference_value: float
    bias: float
    bias_se: float
    band_low: float
    band_high: float
    membership_freq: float


_BIAS_VARIANTS = ("watkins", "double", "maxmin", "twora")


def measure_bias(
    agent_spec: AgentSpec,
    mdp: TabularMDP,
    features: FeatureMap,
    x: int,
    s_prime: int,
    n_snapshot: int,
    rho: float | None,
    num_runs: int,
    seed: int,
    *,
    behavior: Policy | None = None,
) -> BiasReport:
    """Train ``num_runs`` independent agents, then compare the mean bootstrap
    value at (x, s') against the average-then-max reference.

    ``rho`` defaults to the agent's schedule value at the snapshot step.
    Runs are fanned out on streams keyed by (seed, run, name), so two calls
    with the same seed and different specs see identical trajectories.
    """
    if num_runs < 100:
        raise InsufficientRuns("need at least 100 Monte Carlo runs")
    if agent_spec.variant not in _BIAS_VARIANTS:
        raise ValueError(f"bias measurement not defined for {agent_spec.variant!r}")
    if not features.is_canonical:
        raise ValueError("bias measurement requires canonical features")
    if behavior is None:
        from .mdp import uniform_policy

        behavior = uniform_policy(mdp.num_states, mdp.num_actions)
    if rho is None:
        rho = float(agent_spec.rho_schedule().value(n_snapshot))

    env_streams = [stream(seed, k, "env") for k in range(num_runs)]
    agent_streams = [stream(seed, k, "agent") for k in range(num_runs)]
    result = run_tabular_batch(
        mdp,
        behavior,
        agent_spec,
        num_steps=n_snapshot,
        env_streams=env_streams,
        agent_streams=agent_streams,
    )
    thetas = result.thetas  # (R, N, X)
    num_actions = mdp.num_actions
    gamma = mdp.discount
    cols = slice(s_prime * num_actions, (s_prime + 1) * num_actions)
    sr = float(np.sqrt(rho))

    rows0 = thetas[:, 0, cols]  # copy-0 scores at s', (R, A)
    if agent_spec.variant == "watkins":
        est = gamma * rows0.max(axis=1)
    elif agent_spec.variant == "twora":
        hat_rows = thetas[:, :, cols].mean(axis=1)
        est = gamma * (hat_rows - sr).max(axis=1)
    elif agent_spec.variant == "maxmin":
        est = gamma * thetas[:, :, cols].min(axis=1).max(axis=1)
    else:  # double: greedy action of block 0 evaluated under block 1
        a_star = rows0.argmax(axis=1)
        est = gamma * thetas[np.arange(num_runs), 1, s_prime * num_actions + a_star]

    mean_rows = rows0.mean(axis=0)
    reference = gamma * float(mean_rows.max())
    est_mean = float(est.mean())
    est_se = float(est.std(ddof=1) / np.sqrt(num_runs))
    bias = reference - est_mean

    # jackknife over runs: the reference itself depends on the cross-run mean
    sums = rows0.sum(axis=0)
    loo_rows = (sums[None, :] - rows0) / (num_runs - 1)
    ref_loo = gamma * loo_rows.max(axis=1)
    est_sum = est.sum()
    est_loo = (est_sum - est) / (num_runs - 1)
    bias_loo = ref_loo - est_loo
    bias_se = float(
        np.sqrt((num_runs - 1) / num_runs * ((bias_loo - bias_loo.mean()) ** 2).sum())
    )

    band_high = sr * gamma * float(features.column_norms[cols].max())

    theta_plug = thetas[:, 0, :].mean(axis=0)
    theta_hat_runs = thetas.mean(axis=1)
    dist2 = ((theta_hat_runs - theta_plug[None, :]) ** 2).sum(axis=1)
    membership = float((dist2 <= rho).mean())

    return BiasReport(
        method=agent_spec.variant,
        num_copies=agent_spec.num_copies,
        rho=float(rho),
        snapshot_step=n_snapshot,
        num_runs=num_runs,
        estimator_mean=est_mean,
        estimator_se=est_se,
        reference_value=reference,
        bias=bias,
        bias_se=bias_se,
        band_low=0.0,
        band_high=band_high,
        membership_freq=membership,
    )


# ---------------------------------------------------------------------------
# asymptotic model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AsymptoticModel:
    """Stationary matrices driving the scaled-covariance Lyapunov equation."""

    a1_bar: np.ndarray        # (d, d)  Phi D Phi^T
    a2_bar: np.ndarray        # (d, d)  gamma Phi D P S_pi* Phi^T
    b_outer: np.ndarray       # (d, d)  E[b~ b~^T]
    b1: np.ndarray            # (d, d)  E[b~ b~^T] + B2
    b2: np.ndarray            # (d, d)  symmetrized tail sum
    sigma_b: np.ndarray       # (N d, N d) stacked-noise covariance
    g: float
    g0: float
    num_copies: int
    mu: np.ndarray            # (S A,) stationary law of the pair chain
    theta_star: np.ndarray    # (d,)
    pi_star: Policy
    gamma: float


def unique_greedy_policy(q: np.ndarray, num_actions: int, gap: float = 1e-9) -> Policy:
    """Greedy policy of ``q``; requires a strict per-state argmax gap."""
    q = np.asarray(q, dtype=np.float64)
    num_states = q.size // num_actions
    table = q.reshape(num_states, num_actions)
    sorted_rows = np.sort(table, axis=1)
    gaps = sorted_rows[:, -1] - sorted_rows[:, -2]
    if np.any(gaps <= gap):
        bad = np.flatnonzero(gaps <= gap)
        raise NonUniqueOptimalPolicy(
            f"states {bad.tolist()} have argmax gap <= {gap}"
        )
    return greedy_policy(q, num_actions)


def pair_chain(mdp: TabularMDP, behavior: Policy, mu: np.ndarray):
    """The chain on pairs z = (x, s') with its stationary law.

    z is indexed x * S + s'. The pair chain carries functions of
    (X_n, S_{n+1}), which is what the shifted TD noise is.
    """
    num_pairs, num_states = mdp.kernel.shape
    num_z = num_pairs * num_states
    # T_Z[(x0, s1), (x1, s2)] = 1{state(x1) = s1} pi_b(action(x1)|s1) P(s2|x1)
    t_z = np.zeros((num_z, num_z))
    num_actions = mdp.num_actions
    for s1 in range(num_states):
        rows = [x0 * num_states + s1 for x0 in range(num_pairs)]
        block = np.zeros(num_z)
        for a1 in range(num_actions):
            x1 = s1 * num_actions + a1
            block[x1 * num_states : (x1 + 1) * num_states] = (
                behavior.table[s1, a1] * mdp.kernel[x1]
            )
        t_z[rows, :] = block[None, :]
    mu_z = (mu[:, None] * mdp.kernel).reshape(num_z)
    return t_z, mu_z


def tail_autocovariance(t_z: np.ndarray, mu_z: np.ndarray, g_mat: np.ndarray) -> np.ndarray:
    """sum_{n>=1} E[f(Z_n) f(Z_0)^T] for the mean-zero rows of ``g_mat``,
    in closed form through the fundamental matrix (I - (T - 1 mu^T))^{-1}."""
    num_z = len(mu_z)
    fund = np.linalg.inv(np.eye(num_z) - t_z + np.outer(np.ones(num_z), mu_z))
    weight = mu_z[:, None] * (fund - np.eye(num_z))
    return g_mat.T @ weight.T @ g_mat


def sigma_b_series(
    mdp: TabularMDP,
    behavior: Policy,
    features: FeatureMap,
    theta_star: np.ndarray,
    pi_star: Policy,
    mu: np.ndarray,
    tol: float = 1e-9,
):
    """Noise covariance pieces (b_outer, B1, B2) of the shifted TD noise.

    Autocovariances are computed exactly on the pair chain; the tail sum
    uses the fundamental matrix (I - (T - 1 mu^T))^{-1}.
    """
    num_pairs, num_states = mdp.kernel.shape
    num_actions = mdp.num_actions
    phi = features.matrix  # (d, X); canonical maps materialize the identity here
    d = features.dim

    # scores of theta* at every pair, and at the reference action per state
    scores = phi.T @ theta_star                      # (X,)
    pi_actions = np.asarray(pi_star.actions)
    pi_pair = np.arange(num_states) * num_actions + pi_actions
    next_scores = scores[pi_pair]                    # (S,)

    # G[z] = td(x, s') * phi(x) on the pair chain z = x * S + s'
    td = (
        mdp.reward[:, None]
        + mdp.discount * next_scores[None, :]
        - scores[:, None]
    )                                                # (X, S)
    g_mat = (phi.T[:, None, :] * td[:, :, None]).reshape(num_pairs * num_states, d)

    t_z, mu_z = pair_chain(mdp, behavior, mu)

    mean_noise = g_mat.T @ mu_z
    scale = max(1.0, float(np.abs(g_mat).max()))
    if np.abs(mean_noise).max() > tol * scale * 100:
        raise SeriesDiverged(
            "shifted noise has non-zero stationary mean; theta* is inconsistent"
        )

    b_outer = g_mat.T @ (mu_z[:, None] * g_mat)
    s_plus = tail_autocovariance(t_z, mu_z, g_mat)
    b2 = 0.5 * (s_plus + s_plus.T)
    b1 = b_outer + b2
    return b_outer, b1, b2


def assemble_sigma_b(b_outer: np.ndarray, b2: np.ndarray, num_copies: int) -> np.ndarray:
    """Stacked-noise covariance: diag N*E[bb^T] + 2B2, off-diag 2B2."""
    d = b_outer.shape[0]
    n = num_copies
    sigma = np.tile(2.0 * b2, (n, n))
    for i in range(n):
        sigma[i * d : (i + 1) * d, i * d : (i + 1) * d] += n * b_outer
    return sigma


def build_asymptotic_model(
    mdp: TabularMDP,
    behavior: Policy,
    features: FeatureMap,
    g: float,
    num_copies: int,
    *,
    stationary_tol: float = 1e-12,
    unique_gap: float = 1e-9,
) -> AsymptoticModel:
    """Assemble the stationary matrices of the linearized recursion.

    Tabular (canonical-feature) models report the closed-form gain
    threshold 1 / (mu_min (1 - gamma)); dense feature maps fall back to the
    eigenvalue characterization of the same threshold.
    """
    try:
        mu = stationary_distribution(mdp, behavior, tol=stationary_tol)
    except NotConverged as exc:
        raise NotErgodic("behavioral chain has no stationary law") from exc

    q_star = solve_optimal_q(mdp, tol=1e-12)
    pi_star = unique_greedy_policy(q_star, mdp.num_actions, gap=unique_gap)

    phi = features.matrix
    d_mat = mu[:, None] * phi.T                     # D Phi^T, (X, d)
    a1_bar = phi @ d_mat
    pi_actions = np.asarray(pi_star.actions)
    s_sel = np.zeros((mdp.num_states, mdp.num_pairs))
    s_sel[np.arange(mdp.num_states), np.arange(mdp.num_states) * mdp.num_actions + pi_actions] = 1.0
    a2_bar = mdp.discount * phi @ (mu[:, None] * (mdp.kernel @ s_sel @ phi.T))

    if features.is_canonical:
        theta_star = q_star
    else:
        theta_star = np.linalg.solve(a1_bar - a2_bar, phi @ (mu * mdp.reward))

    b_outer, b1, b2 = sigma_b_series(mdp, behavior, features, theta_star, pi_star, mu)
    sigma_b = assemble_sigma_b(b_outer, b2, num_copies)

    if features.is_canonical:
        g0 = 1.0 / (float(mu.min()) * (1.0 - mdp.discount))
    else:
        a_bar = a2_bar - a1_bar
        abar_stack = _stacked_mean_matrix(a1_bar, a2_bar, num_copies)
        lam = max(
            float(np.max(np.linalg.eigvals(a_bar).real)),
            float(np.max(np.linalg.eigvals(abar_stack).real)),
        )
        if lam >= 0:
            raise SingularSystem("mean dynamics matrix is not Hurwitz")
        g0 = 1.0 / (-lam)

    return AsymptoticModel(
        a1_bar=a1_bar,
        a2_bar=a2_bar,
        b_outer=b_outer,
        b1=b1,
        b2=b2,
        sigma_b=sigma_b,
        g=float(g),
        g0=float(g0),
        num_copies=num_copies,
        mu=mu,
        theta_star=theta_star,
        pi_star=pi_star,
        gamma=mdp.discount,
    )


def _stacked_mean_matrix(a1_bar: np.ndarray, a2_bar: np.ndarray, num_copies: int) -> np.ndarray:
    """Block matrix with (1/N) A2 - A1 on the diagonal and (1/N) A2 off it."""
    n = num_copies
    stacked = np.tile(a2_bar / n, (n, n))
    d = a1_bar.shape[0]
    for i in range(n):
        stacked[i * d : (i + 1) * d, i * d : (i + 1) * d] -= a1_bar
    return stacked


def lyapunov_amse(model: AsymptoticModel) -> tuple[np.ndarray, float]:
    """Solve the scaled-covariance equation; return (Sigma_inf, trace).

    The returned trace is the predicted limit of n * E||theta_hat - theta*||^2
    for the copy average, trace((V + (N-1) C) / N).
    """
    if model.g <= model.g0:
        raise GainBelowThreshold(f"g = {model.g} must exceed g0 = {model.g0}")
    n = model.num_copies
    d = model.a1_bar.shape[0]
    abar = _stacked_mean_matrix(model.a1_bar, model.a2_bar, n)
    m = 0.5 * np.eye(n * d) + model.g * abar
    eig_max = float(np.max(np.linalg.eigvals(m).real))
    if eig_max >= 0:
        raise SingularSystem(
            f"I/2 + g Abar has eigenvalue with real part {eig_max:.3e} >= 0"
        )
    q = -(model.g**2) * model.sigma_b
    sigma = scipy.linalg.solve_continuous_lyapunov(m, q)
    sigma = 0.5 * (sigma + sigma.T)
    v_block = sigma[:d, :d]
    c_block = sigma[:d, d : 2 * d] if n > 1 else np.zeros_like(v_block)
    predicted = float(np.trace((v_block + (n - 1) * c_block) / n))
    return sigma, predicted


def lyapunov_residual(model: AsymptoticModel, sigma: np.ndarray) -> float:
    """Max-abs residual of the defining equation at ``sigma``."""
    n = model.num_copies
    d = model.a1_bar.shape[0]
    abar = _stacked_mean_matrix(model.a1_bar, model.a2_bar, n)
    m = 0.5 * np.eye(n * d) + model.g * abar
    res = sigma @ m.T + m @ sigma + model.g**2 * model.sigma_b
    return float(np.abs(res).max())


# ---------------------------------------------------------------------------
# empirical check of the linearized recursion
# ---------------------------------------------------------------------------


def empirical_linearized_amse(
    mdp: TabularMDP,
    behavior: Policy,
    g: float,
    num_copies: int,
    *,
    num_steps: int,
    num_seeds: int,
    seed: int,
    cadence: int = 0,
    theta_star: np.ndarray | None = None,
    pi_star: Policy | None = None,
):
    """Run the linearized recursion at rate N*g/n and return its scaled
    error curve (steps, n * mean-MSE, standard errors)."""
    if theta_star is None:
        theta_star = solve_optimal_q(mdp, tol=1e-12)
    if pi_star is None:
        pi_star = unique_greedy_policy(theta_star, mdp.num_actions)
    spec = AgentSpec(
        agent_id=f"linearized-n{num_copies}",
        variant="twora-linearized",
        num_copies=num_copies,
        alpha0=g,
        lr_mode="gain",
    )
    env_streams = [stream(seed, k, "env") for k in range(num_seeds)]
    agent_streams = [stream(seed, k, "agent") for k in range(num_seeds)]
    result = run_tabular_batch(
        mdp,
        behavior,
        spec,
        num_steps=num_steps,
        env_streams=env_streams,
        agent_streams=agent_streams,
        theta_star=theta_star,
        cadence=cadence if cadence else num_steps,
        pi_star=pi_star,
    )
    curve, se = empirical_amse(result.steps, result.mse)
    return result.steps, curve, se
