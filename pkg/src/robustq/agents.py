"""Asynchronous learning rules operating on one transition per call.

Six variants share one parameter layout: ``thetas`` is an (N, d) array of
parameter copies (N = 1 for the single-estimate methods, N = 2 for the
double estimator). Each update touches exactly one copy:

* ``watkins_step``      - classic bootstrapped max target.
* ``double_step``       - a fair coin picks a block; the updated block's
  greedy action is evaluated under the other block.
* ``maxmin_step``       - target maxes over the pointwise minimum of all
  copies; a uniformly drawn copy moves toward it.
* ``averaged_step``     - target uses the mean of the last K parameter
  snapshots kept in a ring buffer.
* ``twora_step``        - target maxes the norm-penalized score of the
  copies' average; the penalty is sqrt(rho_n) per unit feature norm, the
  closed form of a worst-case minimization over a Euclidean ball of radius
  sqrt(rho_n) around the average.
* ``twora_linearized_step`` - same averaging structure with the max replaced
  by a fixed reference policy's action and rho pinned to zero; used to
  study asymptotic variance.

With a single copy and zero radius, the robust-averaged rule reproduces
Watkins' update bit for bit; the same holds for maxmin with N = 1 and
averaged with K = 1. Those collapses are part of the test contract, so the
arithmetic below is written to keep the float expression trees identical
across variants.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFiniteTheta
from .mdp import FeatureMap, Policy, Transition
from .schedules import LearningRateSchedule, RhoSchedule, ZERO_RHO

VARIANTS = ("watkins", "double", "maxmin", "averaged", "twora", "twora-linearized")

# variants whose learning-rate schedule carries the copy-count factor
SCALED_VARIANTS = ("maxmin", "averaged", "twora", "twora-linearized")


@dataclass
class AgentState:
    """Mutable state of one learner: parameter copies, counters, schedules."""

    variant: str
    thetas: np.ndarray                 # (N, d)
    gamma: float
    lr: LearningRateSchedule
    rho: RhoSchedule = ZERO_RHO
    step: int = 0
    episode: int = 0
    theta_hat: np.ndarray | None = None        # maintained mean, twora variants
    snapshots: np.ndarray | None = None        # (K, d) ring buffer, averaged
    snapshot_head: int = 0
    pi_star_actions: np.ndarray | None = None  # (S,) fixed policy, linearized

    @property
    def num_copies(self) -> int:
        return self.thetas.shape[0]

    @property
    def dim(self) -> int:
        return self.thetas.shape[1]

    def mean_theta(self) -> np.ndarray:
        """Exact average of the copies (recomputed, not the running value)."""
        return self.thetas.mean(axis=0)


def draw_selector(rng_stream: np.random.Generator, num_copies: int) -> int:
    """Uniform index in {0, ..., num_copies-1} from one uniform variate."""
    return min(int(rng_stream.random() * num_copies), num_copies - 1)


def make_agent(
    variant: str,
    features: FeatureMap,
    gamma: float,
    lr: LearningRateSchedule,
    rho: RhoSchedule = ZERO_RHO,
    *,
    num_copies: int = 1,
    buffer_size: int = 1,
    init: str = "zero",
    init_low: float = 0.0,
    init_high: float = 2.0,
    identical_init: bool = True,
    init_rng: np.random.Generator | None = None,
    theta0: np.ndarray | None = None,
    pi_star: Policy | None = None,
) -> AgentState:
    """Build a fresh agent.

    ``init`` is one of "zero", "uniform" (entries in [init_low, init_high],
    one draw shared by all copies when ``identical_init``), or "custom"
    (``theta0`` supplied, broadcast to all copies).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if variant == "watkins" and num_copies != 1:
        raise ValueError("watkins keeps a single estimate")
    if variant == "double" and num_copies != 2:
        raise ValueError("double keeps exactly two estimates")
    if variant == "averaged" and num_copies != 1:
        raise ValueError("averaged keeps one estimate plus snapshots")
    if num_copies < 1 or buffer_size < 1:
        raise ValueError("num_copies and buffer_size must be at least 1")

    d = features.dim
    if init == "zero":
        thetas = np.zeros((num_copies, d))
    elif init == "uniform":
        if init_rng is None:
            raise ValueError("uniform init requires init_rng")
        span = init_high - init_low
        if identical_init:
            row = init_low + span * init_rng.random(d)
            thetas = np.tile(row, (num_copies, 1))
        else:
            thetas = init_low + span * init_rng.random((num_copies, d))
    elif init == "custom":
        if theta0 is None:
            raise ValueError("custom init requires theta0")
        theta0 = np.asarray(theta0, dtype=np.float64)
        if theta0.shape == (d,):
            thetas = np.tile(theta0, (num_copies, 1))
        elif theta0.shape == (num_copies, d):
            thetas = theta0.copy()
        else:
            raise DimensionMismatch(f"theta0 has shape {theta0.shape}")
    else:
        raise ValueError(f"unknown init mode {init!r}")

    state = AgentState(
        variant=variant,
        thetas=thetas,
        gamma=float(gamma),
        lr=lr,
        rho=rho,
    )
    if variant in ("twora", "twora-linearized"):
        state.theta_hat = thetas.mean(axis=0)
    if variant == "averaged":
        state.snapshots = np.tile(thetas[0], (buffer_size, 1))
    if variant == "twora-linearized":
        if pi_star is None:
            raise ValueError("twora-linearized requires pi_star")
        state.pi_star_actions = np.asarray(pi_star.actions, dtype=np.int64)
    return state


def robust_target(
    features: FeatureMap,
    next_state: int,
    theta_hat: np.ndarray,
    rho: float,
    gamma: float,
) -> float:
    """gamma * max_a' { phi(s',a')^T theta_hat - sqrt(rho) ||phi(s',a')||_2 }.

    The penalized score is the minimum of the linear score over the
    Euclidean ball of radius sqrt(rho) centered at ``theta_hat``; with
    rho = 0 this is the plain greedy value.
    """
    if rho < 0:
        raise ValueError("rho must be non-negative")
    sr = math.sqrt(rho)
    a = features.num_actions
    if features.is_canonical:
        scores = theta_hat[next_state * a : (next_state + 1) * a] - sr
    else:
        cols = slice(next_state * a, (next_state + 1) * a)
        scores = features.state_scores(theta_hat, next_state) - sr * features.column_norms[cols]
    val = float(np.max(scores))
    if not math.isfinite(val):
        raise NonFiniteTheta("penalized greedy score is not finite")
    return gamma * val


def _lr_index(state: AgentState) -> int:
    return state.step if state.lr.decay_index == "n" else state.episode


def _check_features(state: AgentState, features: FeatureMap) -> None:
    if features.dim != state.dim:
        raise DimensionMismatch(
            f"feature dim {features.dim} != parameter dim {state.dim}"
        )


def _apply(
    state: AgentState,
    copy_index: int,
    x: int,
    target: float,
    alpha: float,
    features: FeatureMap,
) -> float:
    """Move one copy toward ``target`` at pair x; returns the applied delta."""
    th = state.thetas[copy_index]
    if features.is_canonical:
        cur = th[x]
        delta = alpha * (target - cur)
        th[x] = cur + delta
    else:
        phi = features.column(x)
        cur = float(phi @ th)
        delta = alpha * (target - cur)
        th += delta * phi
    return delta


def watkins_step(
    state: AgentState,
    t: Transition,
    features: FeatureMap,
    *,
    terminal: bool = False,
) -> AgentState:
    _check_features(state, features)
    alpha = state.lr.value(_lr_index(state))
    x = t.state * features.num_actions + t.action
    boot = 0.0 if terminal else robust_target(features, t.next_state, state.thetas[0], 0.0, state.gamma)
    target = t.reward + boot
    _apply(state, 0, x, target, alpha, features)
    state.step += 1
    return state


def twora_step(
    state: AgentState,
    t: Transition,
    features: FeatureMap,
    rng_stream: np.random.Generator,
    *,
    terminal: bool = False,
) -> AgentState:
    _check_features(state, features)
    n_copies = state.num_copies
    i = draw_selector(rng_stream, n_copies)
    alpha = state.lr.value(_lr_index(state))
    # the radius follows the update-step counter even under episodic decay
    rho_n = state.rho.value(state.step)
    x = t.state * features.num_actions + t.action
    boot = 0.0 if terminal else robust_target(features, t.next_state, state.theta_hat, rho_n, state.gamma)
    target = t.reward + boot
    delta = _apply(state, i, x, target, alpha, features)
    if features.is_canonical:
        state.theta_hat[x] += delta / n_copies
    else:
        state.theta_hat += (delta / n_copies) * features.column(x)
    state.step += 1
    return state


def twora_linearized_step(
    state: AgentState,
    t: Transition,
    features: FeatureMap,
    rng_stream: np.random.Generator,
    *,
    pi_star: Policy | None = None,
    terminal: bool = False,
) -> AgentState:
    _check_features(state, features)
    actions = state.pi_star_actions if pi_star is None else np.asarray(pi_star.actions)
    n_copies = state.num_copies
    i = draw_selector(rng_stream, n_copies)
    alpha = state.lr.value(_lr_index(state))
    a = features.num_actions
    x = t.state * a + t.action
    if terminal:
        boot = 0.0
    else:
        xp = t.next_state * a + int(actions[t.next_state])
        if features.is_canonical:
            boot = state.gamma * state.theta_hat[xp]
        else:
            boot = state.gamma * features.score(state.theta_hat, xp)
    target = t.reward + boot
    delta = _apply(state, i, x, target, alpha, features)
    if features.is_canonical:
        state.theta_hat[x] += delta / n_copies
    else:
        state.theta_hat += (delta / n_copies) * features.column(x)
    state.step += 1
    return state


def double_step(
    state: AgentState,
    t: Transition,
    features: FeatureMap,
    rng_stream: np.random.Generator,
    *,
    terminal: bool = False,
) -> AgentState:
    _check_features(state, features)
    upd = 0 if rng_stream.random() < 0.5 else 1
    other = 1 - upd
    alpha = state.lr.value(_lr_index(state))
    a = features.num_actions
    x = t.state * a + t.action
    if terminal:
        boot = 0.0
    else:
        if features.is_canonical:
            row = state.thetas[upd][t.next_state * a : (t.next_state + 1) * a]
            a_star = int(np.argmax(row))
            boot = state.gamma * state.thetas[other][t.next_state * a + a_star]
        else:
            scores = features.state_scores(state.thetas[upd], t.next_state)
            a_star = int(np.argmax(scores))
            boot = state.gamma * features.score(state.thetas[other], t.next_state * a + a_star)
    target = t.reward + boot
    _apply(state, upd, x, target, alpha, features)
    state.step += 1
    return state


def maxmin_step(
    state: AgentState,
    t: Transition,
    features: FeatureMap,
    rng_stream: np.random.Generator,
    *,
    terminal: bool = False,
) -> AgentState:
    _check_features(state, features)
    i = draw_selector(rng_stream, state.num_copies)
    alpha = state.lr.value(_lr_index(state))
    a = features.num_actions
    x = t.state * a + t.action
    if terminal:
        boot = 0.0
    else:
        if features.is_canonical:
            block = state.thetas[:, t.next_state * a : (t.next_state + 1) * a]
        else:
            cols = features.matrix[:, t.next_state * a : (t.next_state + 1) * a]
            block = state.thetas @ cols
        boot = state.gamma * float(np.max(block.min(axis=0)))
    target = t.reward + boot
    _apply(state, i, x, target, alpha, features)
    state.step += 1
    return state


def averaged_step(
    state: AgentState,
    t: Transition,
    features: FeatureMap,
    *,
    terminal: bool = False,
) -> AgentState:
    _check_features(state, features)
    alpha = state.lr.value(_lr_index(state))
    a = features.num_actions
    x = t.state * a + t.action
    k = state.snapshots.shape[0]
    if terminal:
        boot = 0.0
    else:
        if features.is_canonical:
            rows = state.snapshots[:, t.next_state * a : (t.next_state + 1) * a]
        else:
            cols = features.matrix[:, t.next_state * a : (t.next_state + 1) * a]
            rows = state.snapshots @ cols
        qbar = rows.sum(axis=0) / k
        boot = state.gamma * float(np.max(qbar))
    target = t.reward + boot
    _apply(state, 0, x, target, alpha, features)
    state.snapshots[state.snapshot_head] = state.thetas[0]
    state.snapshot_head = (state.snapshot_head + 1) % k
    state.step += 1
    return state


_STEP_FNS = {
    "watkins": lambda s, t, f, rng, terminal: watkins_step(s, t, f, terminal=terminal),
    "double": lambda s, t, f, rng, terminal: double_step(s, t, f, rng, terminal=terminal),
    "maxmin": lambda s, t, f, rng, terminal: maxmin_step(s, t, f, rng, terminal=terminal),
    "averaged": lambda s, t, f, rng, terminal: averaged_step(s, t, f, terminal=terminal),
    "twora": lambda s, t, f, rng, terminal: twora_step(s, t, f, rng, terminal=terminal),
    "twora-linearized": lambda s, t, f, rng, terminal: twora_linearized_step(
        s, t, f, rng, terminal=terminal
    ),
}


def agent_step(
    state: AgentState,
    t: Transition,
    features: FeatureMap,
    rng_stream: np.random.Generator,
    *,
    terminal: bool = False,
) -> AgentState:
    """Dispatch one update to the state's variant."""
    return _STEP_FNS[state.variant](state, t, features, rng_stream, terminal)


# ---------------------------------------------------------------------------
# greedy value sources used for action selection / evaluation
# ---------------------------------------------------------------------------


def policy_values(state: AgentState, features: FeatureMap, obs_state: int) -> np.ndarray:
    """Action values the agent acts on in ``obs_state``.

    watkins/averaged: the single estimate; double: the block average;
    maxmin: the pointwise minimum; robust-averaged variants: the running
    copy average.
    """
    a = features.num_actions
    if features.is_canonical:
        block = state.thetas[:, obs_state * a : (obs_state + 1) * a]
    else:
        block = state.thetas @ features.matrix[:, obs_state * a : (obs_state + 1) * a]
    if state.variant == "maxmin":
        return block.min(axis=0)
    if state.variant == "double":
        return block.sum(axis=0) / 2.0
    if state.variant in ("twora", "twora-linearized"):
        if features.is_canonical:
            return state.theta_hat[obs_state * a : (obs_state + 1) * a]
        return features.state_scores(state.theta_hat, obs_state)
    return block[0]


# ---------------------------------------------------------------------------
# snapshot serialization (bit-exact round trip)
# ---------------------------------------------------------------------------


def agent_to_dict(state: AgentState) -> dict:
    return {
        "variant": state.variant,
        "thetas": state.thetas.tolist(),
        "gamma": state.gamma,
        "step": state.step,
        "episode": state.episode,
        "lr": {
            "alpha0": state.lr.alpha0,
            "w_alpha": state.lr.w_alpha,
            "copies": state.lr.copies,
            "decay_index": state.lr.decay_index,
            "mode": state.lr.mode,
        },
        "rho": {
            "rho0": state.rho.rho0,
            "w_rho": state.rho.w_rho,
            "mode": state.rho.mode,
        },
        "theta_hat": None if state.theta_hat is None else state.theta_hat.tolist(),
        "snapshots": None if state.snapshots is None else state.snapshots.tolist(),
        "snapshot_head": state.snapshot_head,
        "pi_star_actions": None
        if state.pi_star_actions is None
        else state.pi_star_actions.tolist(),
    }


def agent_from_dict(data: dict) -> AgentState:
    state = AgentState(
        variant=data["variant"],
        thetas=np.asarray(data["thetas"], dtype=np.float64),
        gamma=float(data["gamma"]),
        lr=LearningRateSchedule(**data["lr"]),
        rho=RhoSchedule(**data["rho"]),
        step=int(data["step"]),
        episode=int(data["episode"]),
        snapshot_head=int(data["snapshot_head"]),
    )
    if data["theta_hat"] is not None:
        state.theta_hat = np.asarray(data["theta_hat"], dtype=np.float64)
    if data["snapshots"] is not None:
        state.snapshots = np.asarray(data["snapshots"], dtype=np.float64)
    if data["pi_star_actions"] is not None:
        state.pi_star_actions = np.asarray(data["pi_star_actions"], dtype=np.int64)
    return state


def save_agent(state: AgentState, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(agent_to_dict(state), fh)
        fh.write("\n")


def load_agent(path) -> AgentState:
    with open(path, "r", encoding="utf-8") as fh:
        return agent_from_dict(json.load(fh))
