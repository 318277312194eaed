"""Benchmark environments: a six-state counterexample-style MDP, random
Dirichlet MDPs with quadratic rewards, and a from-scratch cart-pole task
with a uniform grid discretizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadBounds, BadCoefficients, ShapeMismatch, SteppedTerminal
from .mdp import FeatureMap, TabularMDP, build_tabular_mdp, canonical_features
from .rng import stream


# ---------------------------------------------------------------------------
# six-state / two-action example
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BairdSpec:
    """Six states, two actions: action one scatters uniformly over all six
    states, action two jumps deterministically to the last state. Rewards
    are drawn once, uniformly from [reward_low, reward_high]."""

    reward_low: float = -0.05
    reward_high: float = 0.05
    discount: float = 0.8
    feature_mode: str = "canonical-12"   # or "custom" with feature_matrix
    feature_matrix: np.ndarray | None = None
    seed: int = 0


def build_baird(spec: BairdSpec) -> tuple[TabularMDP, FeatureMap]:
    if spec.reward_low > spec.reward_high:
        raise BadBounds("reward_low must not exceed reward_high")
    num_states, num_actions = 6, 2
    num_pairs = num_states * num_actions
    kernel = np.zeros((num_pairs, num_states))
    for s in range(num_states):
        kernel[s * num_actions + 0, :] = 1.0 / num_states
        kernel[s * num_actions + 1, num_states - 1] = 1.0
    rng = stream(spec.seed, "baird-rewards")
    span = spec.reward_high - spec.reward_low
    reward = spec.reward_low + span * rng.random(num_pairs)
    initial = np.full(num_states, 1.0 / num_states)
    mdp = build_tabular_mdp(kernel, reward, spec.discount, initial, num_actions=num_actions)

    if spec.feature_mode == "canonical-12":
        features: FeatureMap = canonical_features(num_states, num_actions)
    elif spec.feature_mode == "custom":
        if spec.feature_matrix is None:
            raise ShapeMismatch("custom feature_mode requires feature_matrix")
        matrix = np.asarray(spec.feature_matrix, dtype=np.float64)
        if matrix.shape != (12, 12):
            raise ShapeMismatch(f"feature matrix must be 12x12, got {matrix.shape}")
        features = FeatureMap(matrix, num_states, num_actions)
    else:
        raise ShapeMismatch(f"unknown feature_mode {spec.feature_mode!r}")
    return mdp, features


# ---------------------------------------------------------------------------
# random Dirichlet environments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomEnvSpec:
    """Kernel rows and the initial law are independent Dirichlet(alpha * 1)
    draws; the reward is r(s, a) = -q s^2 - p a^2 with 1-based indices."""

    num_states: int = 10
    num_actions: int = 3
    dirichlet_alpha: float = 0.1
    q: float = 0.1
    p: float = 0.01
    discount: float = 0.9
    seed: int = 0


def build_random_env(spec: RandomEnvSpec) -> TabularMDP:
    if spec.p >= spec.q:
        raise BadCoefficients(f"need p < q, got p={spec.p}, q={spec.q}")
    rng = stream(spec.seed, "random-env")
    num_pairs = spec.num_states * spec.num_actions
    alpha = np.full(spec.num_states, spec.dirichlet_alpha)
    kernel = rng.dirichlet(alpha, size=num_pairs)
    initial = rng.dirichlet(alpha)
    s_idx = np.repeat(np.arange(1, spec.num_states + 1), spec.num_actions)
    a_idx = np.tile(np.arange(1, spec.num_actions + 1), spec.num_states)
    reward = -spec.q * s_idx.astype(np.float64) ** 2 - spec.p * a_idx.astype(np.float64) ** 2
    return build_tabular_mdp(
        kernel, reward, spec.discount, initial, num_actions=spec.num_actions
    )


# ---------------------------------------------------------------------------
# cart-pole
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CartPoleState:
    x: float
    x_dot: float
    theta: float
    theta_dot: float


@dataclass(frozen=True)
class CartPoleParams:
    """Standard published constants; Euler integration at 0.02 s."""

    gravity: float = 9.8
    mass_cart: float = 1.0
    mass_pole: float = 0.1
    half_length: float = 0.5
    force_mag: float = 10.0
    tau: float = 0.02
    theta_threshold: float = 12.0 * 2.0 * math.pi / 360.0
    x_threshold: float = 2.4
    init_low: float = -0.05
    init_high: float = 0.05


DEFAULT_CARTPOLE = CartPoleParams()


def cartpole_done(state: CartPoleState, params: CartPoleParams = DEFAULT_CARTPOLE) -> bool:
    return (
        abs(state.x) > params.x_threshold or abs(state.theta) > params.theta_threshold
    )


def cartpole_step(
    state: CartPoleState,
    action: int,
    params: CartPoleParams = DEFAULT_CARTPOLE,
) -> tuple[CartPoleState, float, bool]:
    """One Euler step; action 0 pushes left, 1 pushes right. Reward is +1
    per step taken, including the step that crosses a threshold."""
    if cartpole_done(state, params):
        raise SteppedTerminal("episode already ended")
    force = params.force_mag if action == 1 else -params.force_mag
    total_mass = params.mass_cart + params.mass_pole
    polemass_length = params.mass_pole * params.half_length
    cos_t = math.cos(state.theta)
    sin_t = math.sin(state.theta)
    temp = (force + polemass_length * state.theta_dot**2 * sin_t) / total_mass
    theta_acc = (params.gravity * sin_t - cos_t * temp) / (
        params.half_length * (4.0 / 3.0 - params.mass_pole * cos_t**2 / total_mass)
    )
    x_acc = temp - polemass_length * theta_acc * cos_t / total_mass
    nxt = CartPoleState(
        x=state.x + params.tau * state.x_dot,
        x_dot=state.x_dot + params.tau * x_acc,
        theta=state.theta + params.tau * state.theta_dot,
        theta_dot=state.theta_dot + params.tau * theta_acc,
    )
    return nxt, 1.0, cartpole_done(nxt, params)


def cartpole_reset(
    rng: np.random.Generator, params: CartPoleParams = DEFAULT_CARTPOLE
) -> CartPoleState:
    span = params.init_high - params.init_low
    vals = params.init_low + span * rng.random(4)
    return CartPoleState(*[float(v) for v in vals])


@dataclass(frozen=True)
class Discretizer:
    """Uniform grid over clipped physical coordinates; one cell per bin
    product, feature index = row-major cell * num_actions + action."""

    bins: tuple[int, int, int, int] = (10, 10, 10, 10)
    clip_low: tuple[float, float, float, float] = (-2.4, -3.0, -0.21, -3.0)
    clip_high: tuple[float, float, float, float] = (2.4, 3.0, 0.21, 3.0)
    num_actions: int = 2

    @property
    def num_cells(self) -> int:
        n = 1
        for b in self.bins:
            n *= b
        return n

    @property
    def dim(self) -> int:
        return self.num_cells * self.num_actions

    def cell(self, state: CartPoleState) -> int:
        idx = 0
        for value, bins, lo, hi in zip(
            (state.x, state.x_dot, state.theta, state.theta_dot),
            self.bins,
            self.clip_low,
            self.clip_high,
        ):
            v = min(max(value, lo), hi)
            b = int((v - lo) / (hi - lo) * bins)
            if b >= bins:
                b = bins - 1
            idx = idx * bins + b
        return idx


def discretize(disc: Discretizer, state: CartPoleState, action: int) -> int:
    """Feature index of (state, action) under the grid; always < disc.dim."""
    return disc.cell(state) * disc.num_actions + action


def epsilon_greedy_action(
    q_values: np.ndarray, epsilon: float, rng_stream: np.random.Generator
) -> int:
    """Uniform action with probability epsilon, else lowest-index argmax."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    n = len(q_values)
    if rng_stream.random() < epsilon:
        return min(int(rng_stream.random() * n), n - 1)
    return int(np.argmax(q_values))


@dataclass(frozen=True)
class CartPoleTask:
    """Episodic task bundle: dynamics, grid features, exploration constant."""

    params: CartPoleParams = DEFAULT_CARTPOLE
    discretizer: Discretizer = field(default_factory=Discretizer)
    epsilon: float = 0.1
    train_step_cap: int = 500

    @property
    def num_actions(self) -> int:
        return self.discretizer.num_actions

    @property
    def feature_dim(self) -> int:
        return self.discretizer.dim

    @property
    def num_cells(self) -> int:
        return self.discretizer.num_cells

    def reset(self, rng: np.random.Generator) -> CartPoleState:
        return cartpole_reset(rng, self.params)

    def step(self, state: CartPoleState, action: int):
        return cartpole_step(state, action, self.params)

    def cell(self, state: CartPoleState) -> int:
        return self.discretizer.cell(state)
