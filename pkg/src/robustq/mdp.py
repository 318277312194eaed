"""Finite MDPs, linear feature maps, exact solvers, and trajectory sampling.

State-action pairs are flattened in state-major order: the pair ``(s, a)``
lives at index ``x = s * num_actions + a``. The transition kernel is a
row-stochastic matrix of shape ``(S*A, S)``, rewards are a deterministic
vector of length ``S*A``, and all sampling goes through inverse-CDF lookups
over rows in index order so that identical streams reproduce identical
trajectories on any platform.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (
    BadDiscount,
    NonFiniteInput,
    NotConverged,
    RowNotStochastic,
    ShapeMismatch,
)

STOCHASTIC_ATOL = 1e-12


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TabularMDP:
    """A finite MDP: kernel, deterministic rewards, discount, initial law."""

    num_states: int
    num_actions: int
    kernel: np.ndarray        # (S*A, S), row x = s*A + a
    reward: np.ndarray        # (S*A,)
    discount: float
    initial_dist: np.ndarray  # (S,)

    @property
    def num_pairs(self) -> int:
        return self.num_states * self.num_actions

    @cached_property
    def kernel_cdf(self) -> np.ndarray:
        out = np.cumsum(self.kernel, axis=1)
        out.setflags(write=False)
        return out

    @cached_property
    def initial_cdf(self) -> np.ndarray:
        out = np.cumsum(self.initial_dist)
        out.setflags(write=False)
        return out


@dataclass(frozen=True)
class Policy:
    """Stationary Markov policy as a row-stochastic S x A table."""

    table: np.ndarray

    def __post_init__(self):
        table = _frozen(self.table)
        if table.ndim != 2:
            raise ShapeMismatch("policy table must be 2-D")
        if np.any(table < 0):
            raise RowNotStochastic("policy table has negative entries")
        sums = table.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > STOCHASTIC_ATOL):
            bad = np.flatnonzero(np.abs(sums - 1.0) > STOCHASTIC_ATOL)
            raise RowNotStochastic(f"policy rows {bad.tolist()} do not sum to 1")
        object.__setattr__(self, "table", table)

    @property
    def num_states(self) -> int:
        return self.table.shape[0]

    @property
    def num_actions(self) -> int:
        return self.table.shape[1]

    @cached_property
    def cdf(self) -> np.ndarray:
        out = np.cumsum(self.table, axis=1)
        out.setflags(write=False)
        return out

    @cached_property
    def actions(self) -> np.ndarray:
        """Per-state action of a deterministic policy (argmax of each row)."""
        out = np.argmax(self.table, axis=1)
        out.setflags(write=False)
        return out


def uniform_policy(num_states: int, num_actions: int) -> Policy:
    return Policy(np.full((num_states, num_actions), 1.0 / num_actions))


@dataclass(frozen=True)
class Transition:
    """One sampled step: (state, action, reward, next_state)."""

    state: int
    action: int
    reward: float
    next_state: int


class FeatureMap:
    """Linear features phi(s, a) stored as the columns of a d x (S*A) matrix.

    The canonical construction (``canonical_features``) is the identity map;
    it is represented implicitly so q-value lookups and updates on it cost
    O(1) instead of O(d). Accessing ``.matrix`` on a canonical map of
    dimension d materializes a fresh d x d identity, so avoid it when d is
    large (e.g. discretized control tasks).
    """

    def __init__(self, matrix: np.ndarray, num_states: int, num_actions: int):
        matrix = np.array(matrix, dtype=np.float64, copy=True)
        if matrix.ndim != 2:
            raise ShapeMismatch("feature matrix must be 2-D")
        if matrix.shape[1] != num_states * num_actions:
            raise ShapeMismatch(
                f"feature matrix has {matrix.shape[1]} columns, "
                f"expected {num_states * num_actions}"
            )
        if not np.isfinite(matrix).all():
            raise NonFiniteInput("feature matrix contains non-finite entries")
        matrix.setflags(write=False)
        self._matrix = matrix
        self.dim = matrix.shape[0]
        self.num_states = num_states
        self.num_actions = num_actions
        norms = np.sqrt((matrix * matrix).sum(axis=0))
        norms.setflags(write=False)
        self.column_norms = norms

    @property
    def is_canonical(self) -> bool:
        return False

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def column(self, x: int) -> np.ndarray:
        return self._matrix[:, x]

    def state_scores(self, theta: np.ndarray, state: int) -> np.ndarray:
        """phi(state, a)^T theta for every action a."""
        a = self.num_actions
        return self._matrix[:, state * a : (state + 1) * a].T @ theta

    def score(self, theta: np.ndarray, x: int) -> float:
        return float(self._matrix[:, x] @ theta)


class CanonicalFeatureMap(FeatureMap):
    """Identity features: phi(s, a) = e_{(s,a)}, so Phi^T theta = theta."""

    def __init__(self, num_states: int, num_actions: int):
        self.dim = num_states * num_actions
        self.num_states = num_states
        self.num_actions = num_actions
        norms = np.ones(self.dim)
        norms.setflags(write=False)
        self.column_norms = norms
        self._matrix = None

    @property
    def is_canonical(self) -> bool:
        return True

    @property
    def matrix(self) -> np.ndarray:
        return np.eye(self.dim)

    def column(self, x: int) -> np.ndarray:
        out = np.zeros(self.dim)
        out[x] = 1.0
        return out

    def state_scores(self, theta: np.ndarray, state: int) -> np.ndarray:
        a = self.num_actions
        return theta[state * a : (state + 1) * a]

    def score(self, theta: np.ndarray, x: int) -> float:
        return float(theta[x])


def canonical_features(num_states: int, num_actions: int) -> CanonicalFeatureMap:
    """Identity feature map of dimension S*A."""
    if num_states < 1 or num_actions < 1:
        raise ShapeMismatch("need at least one state and one action")
    return CanonicalFeatureMap(num_states, num_actions)


def build_tabular_mdp(
    kernel: np.ndarray,
    reward: np.ndarray,
    discount: float,
    initial_dist: np.ndarray,
    *,
    num_actions: int | None = None,
) -> TabularMDP:
    """Validate the pieces of a finite MDP and freeze them into a TabularMDP.

    ``num_actions`` may be omitted when it is implied by the shapes
    (rows / states); it must be given when ambiguous.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    reward = np.asarray(reward, dtype=np.float64)
    initial_dist = np.asarray(initial_dist, dtype=np.float64)

    if kernel.ndim != 2:
        raise ShapeMismatch("kernel must be a 2-D array")
    num_pairs, num_states = kernel.shape
    if initial_dist.shape != (num_states,):
        raise ShapeMismatch(
            f"initial_dist has shape {initial_dist.shape}, expected ({num_states},)"
        )
    if reward.shape != (num_pairs,):
        raise ShapeMismatch(f"reward has shape {reward.shape}, expected ({num_pairs},)")
    if num_actions is None:
        if num_states == 0 or num_pairs % num_states != 0:
            raise ShapeMismatch(
                f"kernel has {num_pairs} rows which is not a multiple of "
                f"{num_states} states"
            )
        num_actions = num_pairs // num_states
    if num_actions < 1 or num_states * num_actions != num_pairs:
        raise ShapeMismatch(
            f"{num_states} states x {num_actions} actions != {num_pairs} kernel rows"
        )

    if not np.isfinite(kernel).all() or not np.isfinite(reward).all():
        raise NonFiniteInput("kernel or reward contains non-finite entries")
    if np.any(kernel < 0):
        bad = np.flatnonzero((kernel < 0).any(axis=1))
        raise RowNotStochastic(f"kernel rows {bad.tolist()} have negative entries")
    sums = kernel.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > STOCHASTIC_ATOL):
        bad = np.flatnonzero(np.abs(sums - 1.0) > STOCHASTIC_ATOL)
        raise RowNotStochastic(f"kernel rows {bad.tolist()} do not sum to 1")
    if np.any(initial_dist < 0) or abs(initial_dist.sum() - 1.0) > STOCHASTIC_ATOL:
        raise RowNotStochastic("initial_dist is not a probability vector")

    discount = float(discount)
    if not (0.0 < discount < 1.0):
        raise BadDiscount(f"discount must lie in (0, 1), got {discount}")

    return TabularMDP(
        num_states=num_states,
        num_actions=num_actions,
        kernel=_frozen(kernel),
        reward=_frozen(reward),
        discount=discount,
        initial_dist=_frozen(initial_dist),
    )


def bellman_backup(
    kernel: np.ndarray, reward: np.ndarray, discount: float, q: np.ndarray
) -> np.ndarray:
    """One application of the Bellman optimality operator T."""
    num_pairs, num_states = kernel.shape
    num_actions = num_pairs // num_states
    vmax = q.reshape(num_states, num_actions).max(axis=1)
    return reward + discount * (kernel @ vmax)


def solve_q_table(
    kernel: np.ndarray, reward: np.ndarray, discount: float, tol: float
) -> np.ndarray:
    """Value iteration on raw arrays; accepts discount in [0, 1)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    kernel = np.asarray(kernel, dtype=np.float64)
    reward = np.asarray(reward, dtype=np.float64)
    if discount == 0.0:
        return reward.copy()
    r_inf = float(np.max(np.abs(reward)))
    if r_inf == 0.0:
        return np.zeros_like(reward)
    # contraction bound on the iteration count, plus slack for rounding
    cap = max(1, math.ceil(math.log(tol * (1 - discount) / r_inf) / math.log(discount)) + 1)
    q = np.zeros_like(reward)
    for _ in range(cap + 64):
        tq = bellman_backup(kernel, reward, discount, q)
        delta = float(np.max(np.abs(tq - q)))
        q = tq
        if delta <= tol:
            # residual of the returned iterate: ||T(q) - q|| <= gamma * delta <= tol
            return q
    raise NotConverged("value iteration failed to reach tolerance within its cap")


def solve_optimal_q(mdp: TabularMDP, tol: float = 1e-10) -> np.ndarray:
    """Q* with sup-norm Bellman residual at most ``tol``."""
    return solve_q_table(mdp.kernel, mdp.reward, mdp.discount, tol)


def greedy_policy(q: np.ndarray, num_actions: int) -> Policy:
    """Deterministic policy choosing the lowest-index maximizing action."""
    q = np.asarray(q, dtype=np.float64)
    if not np.isfinite(q).all():
        raise NonFiniteInput("q contains non-finite entries")
    if q.size % num_actions != 0:
        raise ShapeMismatch("q length is not a multiple of num_actions")
    num_states = q.size // num_actions
    best = np.argmax(q.reshape(num_states, num_actions), axis=1)
    table = np.zeros((num_states, num_actions))
    table[np.arange(num_states), best] = 1.0
    return Policy(table)


def inverse_cdf(cdf: np.ndarray, u: float) -> int:
    """Index of the first CDF entry exceeding u (inverse-CDF sampling)."""
    return min(int(np.searchsorted(cdf, u, side="right")), len(cdf) - 1)


def sample_step(
    mdp: TabularMDP, state: int, action: int, rng_stream: np.random.Generator
) -> Transition:
    """Draw one transition from (state, action) using one uniform variate."""
    if not (0 <= state < mdp.num_states and 0 <= action < mdp.num_actions):
        raise ShapeMismatch(f"state/action ({state}, {action}) out of range")
    x = state * mdp.num_actions + action
    u = rng_stream.random()
    next_state = inverse_cdf(mdp.kernel_cdf[x], u)
    return Transition(state, action, float(mdp.reward[x]), next_state)


def sample_initial_state(mdp: TabularMDP, rng_stream: np.random.Generator) -> int:
    return inverse_cdf(mdp.initial_cdf, rng_stream.random())


def sample_policy_action(
    policy: Policy, state: int, rng_stream: np.random.Generator
) -> int:
    return inverse_cdf(policy.cdf[state], rng_stream.random())


def behavior_chain(mdp: TabularMDP, behavior: Policy) -> np.ndarray:
    """The (S*A) x (S*A) chain on state-action pairs under ``behavior``."""
    if behavior.table.shape != (mdp.num_states, mdp.num_actions):
        raise ShapeMismatch("behavior policy shape does not match the MDP")
    chain = mdp.kernel[:, :, None] * behavior.table[None, :, :]
    return chain.reshape(mdp.num_pairs, mdp.num_pairs)


def stationary_distribution(
    mdp: TabularMDP,
    behavior: Policy,
    tol: float = 1e-10,
    max_iter: int = 10**6,
) -> np.ndarray:
    """Invariant law of the state-action chain, by power iteration.

    Starts from a point mass so that periodic chains oscillate instead of
    landing on a fixed point by symmetry; hitting the cap raises
    ``NotConverged``, which is the detection mechanism for reducible or
    periodic behavioral chains.
    """
    chain = behavior_chain(mdp, behavior)
    mu = np.zeros(mdp.num_pairs)
    mu[0] = 1.0
    for _ in range(max_iter):
        nxt = mu @ chain
        total = nxt.sum()
        if total > 0:
            nxt /= total
        err = float(np.abs(nxt - mu).sum())
        mu = nxt
        if err <= tol:
            return mu
    raise NotConverged("power iteration did not converge; chain may be periodic or reducible")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def mdp_to_dict(mdp: TabularMDP) -> dict:
    return {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "kernel": mdp.kernel.ravel().tolist(),
        "reward": mdp.reward.tolist(),
        "discount": mdp.discount,
        "initial_dist": mdp.initial_dist.tolist(),
    }


def mdp_from_dict(data: dict) -> TabularMDP:
    num_states = int(data["num_states"])
    num_actions = int(data["num_actions"])
    kernel = np.asarray(data["kernel"], dtype=np.float64).reshape(
        num_states * num_actions, num_states
    )
    return build_tabular_mdp(
        kernel,
        np.asarray(data["reward"], dtype=np.float64),
        float(data["discount"]),
        np.asarray(data["initial_dist"], dtype=np.float64),
        num_actions=num_actions,
    )


def save_mdp(mdp: TabularMDP, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(mdp_to_dict(mdp), fh)
        fh.write("\n")


def load_mdp(path) -> TabularMDP:
    with open(path, "r", encoding="utf-8") as fh:
        return mdp_from_dict(json.load(fh))


def feature_map_to_dict(features: FeatureMap) -> dict:
    return {
        "dim": features.dim,
        "num_states": features.num_states,
        "num_actions": features.num_actions,
        "canonical": features.is_canonical,
        "matrix": None if features.is_canonical else features.matrix.ravel().tolist(),
    }


def feature_map_from_dict(data: dict) -> FeatureMap:
    if data.get("canonical"):
        return canonical_features(int(data["num_states"]), int(data["num_actions"]))
    num_states = int(data["num_states"])
    num_actions = int(data["num_actions"])
    matrix = np.asarray(data["matrix"], dtype=np.float64).reshape(
        int(data["dim"]), num_states * num_actions
    )
    return FeatureMap(matrix, num_states, num_actions)
