"""Training drivers for tabular MDP experiments.

Two execution paths produce the same numbers:

* ``run_tabular`` walks one trajectory with the per-transition agent API;
  it is the readable reference used by unit tests and episodic tasks.
* ``run_tabular_batch`` advances many independent runs in lock step with
  JIT-compiled kernels, one per variant. Each run owns its own named
  streams, so results per run are independent of how runs are grouped
  into batches or processes.

Both paths consume, per run and per step, the same draws in the same
order: one uniform for the next state (inverse CDF over the kernel row),
one for the behavioral action (inverse CDF over the policy row), and,
for the variants that need one, one selector/coin uniform from the agent
stream. The kernels replicate the float expression trees of the agent
step functions, so trajectories agree bit for bit; this is asserted by
the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .agents import AgentState, SCALED_VARIANTS, VARIANTS, agent_step, make_agent
from .mdp import (
    FeatureMap,
    Policy,
    TabularMDP,
    canonical_features,
    inverse_cdf,
    sample_initial_state,
    sample_policy_action,
    sample_step,
)
from .rng import stream
from .schedules import LearningRateSchedule, RhoSchedule

MAX_DRAW_BLOCK = 8_000_000  # cap on pre-generated uniforms per sub-chunk (per array)


@dataclass(frozen=True)
class AgentSpec:
    """Declarative description of one learner, shared by harness and analysis."""

    agent_id: str
    variant: str
    num_copies: int = 1
    buffer_size: int = 1
    alpha0: float = 0.01
    w_alpha: float = 1e5
    lr_mode: str = "weighted"
    decay_index: str = "n"
    rho0: float = 0.0
    w_rho: float = 1.0
    rho_mode: str = "linear-denominator"
    init: str = "zero"
    init_low: float = 0.0
    init_high: float = 2.0
    identical_init: bool = True
    epsilon: float = 0.1
    lr_scale_copies: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "watkins" and self.num_copies != 1:
            raise ValueError("watkins keeps a single estimate")
        if self.variant == "double" and self.num_copies != 2:
            raise ValueError("double keeps exactly two estimates")
        if self.variant == "averaged" and self.num_copies != 1:
            raise ValueError("averaged keeps one estimate plus snapshots")

    def lr_copies(self) -> int:
        """Copy count entering the step-size scaling for this variant.

        The copy-count factor pairs the multi-estimate methods with the
        asymptotic-variance analysis; ``lr_scale_copies=False`` keeps the
        base schedule for studies (e.g. bias sweeps over N) where the copy
        count must not change the effective step size.
        """
        if not self.lr_scale_copies:
            return 1
        if self.variant == "averaged":
            return self.buffer_size
        if self.variant in SCALED_VARIANTS:
            return self.num_copies
        return 1

    def lr_schedule(self) -> LearningRateSchedule:
        return LearningRateSchedule(
            alpha0=self.alpha0,
            w_alpha=self.w_alpha,
            copies=self.lr_copies(),
            decay_index=self.decay_index,
            mode=self.lr_mode,
        )

    def rho_schedule(self) -> RhoSchedule:
        return RhoSchedule(rho0=self.rho0, w_rho=self.w_rho, mode=self.rho_mode)

    def make_state(
        self,
        features: FeatureMap,
        gamma: float,
        init_rng: np.random.Generator | None = None,
        pi_star: Policy | None = None,
    ) -> AgentState:
        return make_agent(
            self.variant,
            features,
            gamma,
            self.lr_schedule(),
            self.rho_schedule(),
            num_copies=self.num_copies,
            buffer_size=self.buffer_size,
            init=self.init,
            init_low=self.init_low,
            init_high=self.init_high,
            identical_init=self.identical_init,
            init_rng=init_rng,
            pi_star=pi_star,
        )


@dataclass
class TrainResult:
    """Per-run metric series plus final parameters for a batch of runs."""

    steps: np.ndarray                       # (P,) recorded step counts
    mse: np.ndarray                         # (R, P) ||mean theta - theta*||^2
    sup: np.ndarray | None                  # (R, P) sup-norm error, if requested
    thetas: np.ndarray                      # (R, N, X) final copies
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def theta_hat(self) -> np.ndarray:
        return self.thetas.mean(axis=1)


# ---------------------------------------------------------------------------
# JIT kernels: one chunk of lock-step updates per call
# ---------------------------------------------------------------------------


@njit(cache=True)
def _sample(kcdf, bcdf, xr, u1, u2):
    s_dim = kcdf.shape[1]
    a_dim = bcdf.shape[1]
    row = kcdf[xr]
    sn = 0
    while sn < s_dim - 1 and row[sn] <= u1:
        sn += 1
    brow = bcdf[sn]
    an = 0
    while an < a_dim - 1 and brow[an] <= u2:
        an += 1
    return sn, an


@njit(cache=True)
def _watkins_chunk(q, kcdf, bcdf, rew, gamma, x, u, alphas):
    length, runs = u.shape[0], x.shape[0]
    a_dim = bcdf.shape[1]
    for t in range(length):
        alpha = alphas[t]
        for r in range(runs):
            xr = x[r]
            sn, an = _sample(kcdf, bcdf, xr, u[t, r, 0], u[t, r, 1])
            base = sn * a_dim
            m = q[r, 0, base]
            for a in range(1, a_dim):
                v = q[r, 0, base + a]
                if v > m:
                    m = v
            target = rew[xr] + gamma * m
            cur = q[r, 0, xr]
            q[r, 0, xr] = cur + alpha * (target - cur)
            x[r] = base + an


@njit(cache=True)
def _twora_chunk(q, qhat, kcdf, bcdf, rew, gamma, x, u, su, alphas, srhos):
    length, runs = u.shape[0], x.shape[0]
    n_copies = q.shape[1]
    a_dim = bcdf.shape[1]
    for t in range(length):
        alpha = alphas[t]
        sr = srhos[t]
        for r in range(runs):
            xr = x[r]
            sn, an = _sample(kcdf, bcdf, xr, u[t, r, 0], u[t, r, 1])
            i = int(su[t, r] * n_copies)
            if i > n_copies - 1:
                i = n_copies - 1
            base = sn * a_dim
            m = qhat[r, base] - sr
            for a in range(1, a_dim):
                v = qhat[r, base + a] - sr
                if v > m:
                    m = v
            target = rew[xr] + gamma * m
            cur = q[r, i, xr]
            delta = alpha * (target - cur)
            q[r, i, xr] = cur + delta
            qhat[r, xr] += delta / n_copies
            x[r] = base + an


@njit(cache=True)
def _linearized_chunk(q, qhat, kcdf, bcdf, rew, gamma, x, u, su, alphas, pi_actions):
    length, runs = u.shape[0], x.shape[0]
    n_copies = q.shape[1]
    a_dim = bcdf.shape[1]
    for t in range(length):
        alpha = alphas[t]
        for r in range(runs):
            xr = x[r]
            sn, an = _sample(kcdf, bcdf, xr, u[t, r, 0], u[t, r, 1])
            i = int(su[t, r] * n_copies)
            if i > n_copies - 1:
                i = n_copies - 1
            boot = gamma * qhat[r, sn * a_dim + pi_actions[sn]]
            target = rew[xr] + boot
            cur = q[r, i, xr]
            delta = alpha * (target - cur)
            q[r, i, xr] = cur + delta
            qhat[r, xr] += delta / n_copies
            x[r] = sn * a_dim + an


@njit(cache=True)
def _double_chunk(q, kcdf, bcdf, rew, gamma, x, u, su, alphas):
    length, runs = u.shape[0], x.shape[0]
    a_dim = bcdf.shape[1]
    for t in range(length):
        alpha = alphas[t]
        for r in range(runs):
            xr = x[r]
            sn, an = _sample(kcdf, bcdf, xr, u[t, r, 0], u[t, r, 1])
            upd = 0 if su[t, r] < 0.5 else 1
            other = 1 - upd
            base = sn * a_dim
            a_star = 0
            m = q[r, upd, base]
            for a in range(1, a_dim):
                v = q[r, upd, base + a]
                if v > m:
                    m = v
                    a_star = a
            boot = gamma * q[r, other, base + a_star]
            target = rew[xr] + boot
            cur = q[r, upd, xr]
            q[r, upd, xr] = cur + alpha * (target - cur)
            x[r] = base + an


@njit(cache=True)
def _maxmin_chunk(q, kcdf, bcdf, rew, gamma, x, u, su, alphas):
    length, runs = u.shape[0], x.shape[0]
    n_copies = q.shape[1]
    a_dim = bcdf.shape[1]
    for t in range(length):
        alpha = alphas[t]
        for r in range(runs):
            xr = x[r]
            sn, an = _sample(kcdf, bcdf, xr, u[t, r, 0], u[t, r, 1])
            i = int(su[t, r] * n_copies)
            if i > n_copies - 1:
                i = n_copies - 1
            base = sn * a_dim
            m = -np.inf
            for a in range(a_dim):
                mn = q[r, 0, base + a]
                for j in range(1, n_copies):
                    v = q[r, j, base + a]
                    if v < mn:
                        mn = v
                if mn > m:
                    m = mn
            boot = gamma * m
            target = rew[xr] + boot
            cur = q[r, i, xr]
            q[r, i, xr] = cur + alpha * (target - cur)
            x[r] = base + an


@njit(cache=True)
def _averaged_chunk(q, buf, head0, kcdf, bcdf, rew, gamma, x, u, alphas):
    length, runs = u.shape[0], x.shape[0]
    k_snap = buf.shape[1]
    x_dim = q.shape[2]
    a_dim = bcdf.shape[1]
    for t in range(length):
        alpha = alphas[t]
        head = (head0 + t) % k_snap
        for r in range(runs):
            xr = x[r]
            sn, an = _sample(kcdf, bcdf, xr, u[t, r, 0], u[t, r, 1])
            base = sn * a_dim
            m = -np.inf
            for a in range(a_dim):
                s = 0.0
                for k in range(k_snap):
                    s += buf[r, k, base + a]
                qa = s / k_snap
                if qa > m:
                    m = qa
            boot = gamma * m
            target = rew[xr] + boot
            cur = q[r, 0, xr]
            q[r, 0, xr] = cur + alpha * (target - cur)
            for j in range(x_dim):
                buf[r, head, j] = q[r, 0, j]
            x[r] = base + an


# ---------------------------------------------------------------------------
# batch driver
# ---------------------------------------------------------------------------


def seed_streams(master_seed: int, num_runs: int, name: str, *prefix) -> list[np.random.Generator]:
    """One named stream per run index, keyed (master, *prefix, run, name)."""
    return [stream(master_seed, *prefix, k, name) for k in range(num_runs)]


def _record_points(num_steps: int, cadence: int, snapshot_steps) -> list[int]:
    points = set()
    if cadence and cadence > 0:
        points.update(range(cadence, num_steps + 1, cadence))
    points.update(int(s) for s in snapshot_steps)
    points.add(num_steps)
    points.discard(0)
    return sorted(p for p in points if p <= num_steps)


def _init_thetas_batch(
    spec: AgentSpec, dim: int, num_runs: int, agent_streams
) -> np.ndarray:
    thetas = np.zeros((num_runs, spec.num_copies, dim))
    if spec.init == "uniform":
        span = spec.init_high - spec.init_low
        for r in range(num_runs):
            if spec.identical_init:
                row = spec.init_low + span * agent_streams[r].random(dim)
                thetas[r, :, :] = row
            else:
                thetas[r] = spec.init_low + span * agent_streams[r].random(
                    (spec.num_copies, dim)
                )
    elif spec.init != "zero":
        raise ValueError(f"batch driver supports zero/uniform init, got {spec.init!r}")
    return thetas


def run_tabular_batch(
    mdp: TabularMDP,
    behavior: Policy,
    spec: AgentSpec,
    *,
    num_steps: int,
    env_streams,
    agent_streams,
    theta_star: np.ndarray | None = None,
    cadence: int = 0,
    collect_sup: bool = False,
    snapshot_steps=(),
    pi_star: Policy | None = None,
) -> TrainResult:
    """Train ``len(env_streams)`` independent runs of ``spec`` in lock step.

    Canonical (identity) features only; the dense-feature path lives in
    ``run_tabular``. ``theta_star`` enables the mse/sup series.
    """
    num_runs = len(env_streams)
    x_dim = mdp.num_pairs
    a_dim = mdp.num_actions
    kcdf = np.ascontiguousarray(mdp.kernel_cdf)
    bcdf = np.ascontiguousarray(behavior.cdf)
    rew = np.ascontiguousarray(mdp.reward)
    gamma = mdp.discount

    lr = spec.lr_schedule()
    rho = spec.rho_schedule()
    if lr.decay_index != "n":
        raise ValueError("tabular batch training decays per step")

    needs_selector = spec.variant in ("twora", "twora-linearized", "maxmin", "double")
    pi_actions = None
    if spec.variant == "twora-linearized":
        if pi_star is None:
            raise ValueError("twora-linearized requires pi_star")
        pi_actions = np.ascontiguousarray(pi_star.actions, dtype=np.int64)

    thetas = _init_thetas_batch(spec, x_dim, num_runs, agent_streams)
    qhat = thetas.mean(axis=1) if spec.variant in ("twora", "twora-linearized") else None
    buf = None
    if spec.variant == "averaged":
        buf = np.repeat(thetas[:, 0:1, :], spec.buffer_size, axis=1).copy()

    # initial state-action per run: two env draws, inverse CDF in index order
    x = np.empty(num_runs, dtype=np.int64)
    for r in range(num_runs):
        s0 = inverse_cdf(mdp.initial_cdf, env_streams[r].random())
        a0 = inverse_cdf(behavior.cdf[s0], env_streams[r].random())
        x[r] = s0 * a_dim + a0

    points = _record_points(num_steps, cadence, snapshot_steps)
    snapshot_set = {int(s) for s in snapshot_steps}
    mse = np.zeros((num_runs, len(points)))
    sup = np.zeros((num_runs, len(points))) if collect_sup else None
    snapshots: dict[int, np.ndarray] = {}

    max_len = max(1, MAX_DRAW_BLOCK // max(num_runs, 1))
    env_u = None
    sel_u = None

    def record(idx: int, step_count: int) -> None:
        if theta_star is not None:
            th = thetas.mean(axis=1)
            diff = th - theta_star[None, :]
            mse[:, idx] = (diff * diff).sum(axis=1)
            if collect_sup:
                sup[:, idx] = np.abs(diff).max(axis=1)
        if step_count in snapshot_set:
            snapshots[step_count] = thetas.copy()

    done = 0
    for p_idx, point in enumerate(points):
        while done < point:
            length = min(point - done, max_len)
            if env_u is None or env_u.shape[0] != length:
                env_u = np.empty((length, num_runs, 2))
                sel_u = np.empty((length, num_runs)) if needs_selector else None
            for r in range(num_runs):
                env_u[:, r, :] = env_streams[r].random((length, 2))
                if needs_selector:
                    sel_u[:, r] = agent_streams[r].random(length)
            idx_range = np.arange(done, done + length, dtype=np.float64)
            alphas = np.ascontiguousarray(lr.value(idx_range), dtype=np.float64)
            if spec.variant == "watkins":
                _watkins_chunk(thetas, kcdf, bcdf, rew, gamma, x, env_u, alphas)
            elif spec.variant == "twora":
                srhos = np.ascontiguousarray(np.sqrt(rho.value(idx_range)))
                _twora_chunk(
                    thetas, qhat, kcdf, bcdf, rew, gamma, x, env_u, sel_u, alphas, srhos
                )
            elif spec.variant == "twora-linearized":
                _linearized_chunk(
                    thetas, qhat, kcdf, bcdf, rew, gamma, x, env_u, sel_u, alphas, pi_actions
                )
            elif spec.variant == "double":
                _double_chunk(thetas, kcdf, bcdf, rew, gamma, x, env_u, sel_u, alphas)
            elif spec.variant == "maxmin":
                _maxmin_chunk(thetas, kcdf, bcdf, rew, gamma, x, env_u, sel_u, alphas)
            elif spec.variant == "averaged":
                head0 = done % spec.buffer_size
                _averaged_chunk(
                    thetas, buf, head0, kcdf, bcdf, rew, gamma, x, env_u, alphas
                )
            else:
                raise ValueError(f"unsupported variant {spec.variant!r}")
            done += length
        record(p_idx, done)

    return TrainResult(
        steps=np.asarray(points, dtype=np.int64),
        mse=mse,
        sup=sup,
        thetas=thetas,
        snapshots=snapshots,
    )


# ---------------------------------------------------------------------------
# sequential reference driver (per-transition API)
# ---------------------------------------------------------------------------


def run_tabular(
    mdp: TabularMDP,
    behavior: Policy,
    spec: AgentSpec,
    *,
    num_steps: int,
    env_stream: np.random.Generator,
    agent_stream: np.random.Generator,
    features: FeatureMap | None = None,
    theta_star: np.ndarray | None = None,
    cadence: int = 0,
    collect_sup: bool = False,
    snapshot_steps=(),
    pi_star: Policy | None = None,
) -> TrainResult:
    """Single-run training through the agent step functions."""
    if features is None:
        features = canonical_features(mdp.num_states, mdp.num_actions)
    state = spec.make_state(features, mdp.discount, init_rng=agent_stream, pi_star=pi_star)

    s = sample_initial_state(mdp, env_stream)
    a = sample_policy_action(behavior, s, env_stream)

    points = _record_points(num_steps, cadence, snapshot_steps)
    snapshot_set = {int(p) for p in snapshot_steps}
    mse = np.zeros((1, len(points)))
    sup = np.zeros((1, len(points))) if collect_sup else None
    snapshots: dict[int, np.ndarray] = {}
    point_iter = iter(enumerate(points))
    next_idx, next_point = next(point_iter, (None, None))

    for n in range(num_steps):
        t = sample_step(mdp, s, a, env_stream)
        a_next = sample_policy_action(behavior, t.next_state, env_stream)
        agent_step(state, t, features, agent_stream)
        s, a = t.next_state, a_next
        if next_point is not None and n + 1 == next_point:
            if theta_star is not None:
                th = state.thetas.mean(axis=0)
                diff = th - theta_star
                mse[0, next_idx] = float((diff * diff).sum())
                if collect_sup:
                    sup[0, next_idx] = float(np.abs(diff).max())
            if n + 1 in snapshot_set:
                snapshots[n + 1] = state.thetas[None, :, :].copy()
            next_idx, next_point = next(point_iter, (None, None))

    return TrainResult(
        steps=np.asarray(points, dtype=np.int64),
        mse=mse,
        sup=sup,
        thetas=state.thetas[None, :, :].copy(),
        snapshots=snapshots,
    )
