"""Trust-region policy optimization with GAE advantages and an MLP value baseline."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nets
from .env import PivotEnv
from .nets import GaussianPolicy, ValueNet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrpoConfig:
    max_kl: float = 0.01
    cg_iters: int = 10
    cg_damping: float = 0.1
    backtrack_ratio: float = 0.8
    max_backtracks: int = 15
    discount: float = 0.99
    gae_lambda: float = 0.97
    episodes_per_iter: int = 50
    vf_epochs: int = 10
    vf_lr: float = 3e-3
    vf_minibatch: int = 256

    def __post_init__(self):
        if not self.max_kl > 0:
            raise ValueError("max_kl must be positive")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.episodes_per_iter < 1:
            raise ValueError("episodes_per_iter must be >= 1")
        if not 0 < self.backtrack_ratio < 1:
            raise ValueError("backtrack_ratio must lie in (0, 1)")
        if self.cg_iters < 1 or self.max_backtracks < 0 or self.vf_epochs < 0 or self.vf_minibatch < 1:
            raise ValueError("iteration counts must be non-negative (cg_iters, vf_minibatch >= 1)")


@dataclass
class RolloutBatch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    episode_ids: np.ndarray
    successes: np.ndarray  # one flag per episode: success at its final step
    returns: np.ndarray | None = None
    advantages: np.ndarray | None = None

    def __len__(self):
        return len(self.rewards)

    @property
    def n_episodes(self) -> int:
        return len(self.successes)

    def episode_returns(self) -> np.ndarray:
        return np.bincount(self.episode_ids, weights=self.rewards, minlength=self.n_episodes)


@dataclass
class IterationStats:
    mean_return: float
    success_rate: float
    kl: float
    surrogate_improvement: float
    accepted: bool
    vf_loss_before: float
    vf_loss_after: float
    wall_time: float


def episode_seeds(rng: np.random.Generator, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(int(rng.integers(2**63))).spawn(n)


def collect_rollouts(env_factory: Callable[[], PivotEnv], policy: GaussianPolicy, n_episodes: int,
                     rng: np.random.Generator) -> RolloutBatch:
    """Run ``n_episodes`` full episodes in lock-step with the stochastic policy.

    Each episode owns two random streams (environment, exploration) derived
    from ``rng``, so results do not depend on how episodes are batched.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    envs = [env_factory() for _ in range(n_episodes)]
    streams = [[np.random.default_rng(s) for s in seq.spawn(2)] for seq in episode_seeds(rng, n_episodes)]
    obs = np.stack([env.reset(env_rng) for env, (env_rng, _) in zip(envs, streams)])
    horizon = envs[0].task.horizon
    obs_buf = np.empty((n_episodes, horizon, obs.shape[1]))
    act_buf = np.empty((n_episodes, horizon, policy.act_dim))
    rew_buf = np.empty((n_episodes, horizon))
    done_buf = np.zeros((n_episodes, horizon), dtype=bool)
    successes = np.zeros(n_episodes, dtype=bool)
    std = np.exp(policy.log_std)
    for t in range(horizon):
        mu = policy.mean(obs)
        for i, env in enumerate(envs):
            a = mu[i] + std * streams[i][1].standard_normal(policy.act_dim)
            obs_buf[i, t] = obs[i]
            act_buf[i, t] = a
            obs[i], rew_buf[i, t], done, info = env.step(a)
            done_buf[i, t] = done
            if done:
                successes[i] = info["success"]
    if not done_buf[:, -1].all():
        raise RuntimeError("episodes did not terminate at the horizon")
    return RolloutBatch(
        obs=obs_buf.reshape(-1, obs.shape[1]),
        actions=act_buf.reshape(-1, policy.act_dim),
        rewards=rew_buf.ravel(),
        dones=done_buf.ravel(),
        episode_ids=np.repeat(np.arange(n_episodes), horizon),
        successes=successes,
    )


def compute_advantages(batch: RolloutBatch, value_net: ValueNet, discount: float, gae_lambda: float,
                       normalize: bool = True) -> RolloutBatch:
    """Fill in GAE advantages and value targets (returns = A + V) in place."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    values = value_net.predict(batch.obs)
    n = len(batch)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        if batch.dones[t] or t == n - 1 or batch.episode_ids[t + 1] != batch.episode_ids[t]:
            next_value, running = 0.0, 0.0
        else:
            next_value = values[t + 1]
        delta = batch.rewards[t] + discount * next_value - values[t]
        running = delta + discount * gae_lambda * running
        adv[t] = running
    batch.returns = adv + values
    if normalize:
        std = adv.std()
        adv = adv - adv.mean()
        if std > 0:
            adv = adv / std
    batch.advantages = adv
    return batch


def surrogate_loss(policy: GaussianPolicy, old_policy: GaussianPolicy, batch: RolloutBatch,
                   old_log_prob: np.ndarray | None = None) -> float:
    if old_log_prob is None:
        old_log_prob = nets.log_prob(old_policy, batch.obs, batch.actions)
    ratio = np.exp(nets.log_prob(policy, batch.obs, batch.actions) - old_log_prob)
    return float(np.mean(ratio * batch.advantages))


def surrogate_gradient(policy: GaussianPolicy, old_policy: GaussianPolicy, batch: RolloutBatch,
                       old_log_prob: np.ndarray | None = None) -> np.ndarray:
    if old_log_prob is None:
        old_log_prob = nets.log_prob(old_policy, batch.obs, batch.actions)
    ratio = np.exp(nets.log_prob(policy, batch.obs, batch.actions) - old_log_prob)
    return nets.log_prob_gradient(policy, batch.obs, batch.actions, ratio * batch.advantages / len(batch))


def conjugate_gradient(matvec: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
                       iters: int = 10, tol: float = 1e-10) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite ``A`` given as a mat-vec."""
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    b_norm = math.sqrt(rr)
    for _ in range(iters):
        if math.sqrt(rr) <= tol * b_norm:
            break
        Ap = matvec(p)
        pAp = p @ Ap
        if not math.isfinite(pAp):
            raise FloatingPointError("conjugate gradient hit a non-finite curvature")
        if pAp <= 0:
            break
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("conjugate gradient produced non-finite iterate")
    return x


@dataclass
class LineSearchResult:
    params: np.ndarray
    accepted: bool
    kl: float
    improvement: float
    backtracks: int


def line_search(policy: GaussianPolicy, old_policy: GaussianPolicy, batch: RolloutBatch,
                full_step: np.ndarray, max_kl: float, backtrack_ratio: float = 0.8,
                max_backtracks: int = 15, old_log_prob: np.ndarray | None = None) -> LineSearchResult:
    """Backtrack along ``full_step`` until KL <= max_kl and the surrogate improves.

    ``policy`` is used as scratch space and is left holding the returned parameters.
    """
    theta_old = old_policy.get_flat()
    if old_log_prob is None:
        old_log_prob = nets.log_prob(old_policy, batch.obs, batch.actions)
    base = surrogate_loss(old_policy, old_policy, batch, old_log_prob)
    for k in range(max_backtracks + 1):
        theta = theta_old + backtrack_ratio**k * full_step
        policy.set_flat(theta)
        kl = nets.kl_divergence(old_policy, policy, batch.obs)
        improvement = surrogate_loss(policy, old_policy, batch, old_log_prob) - base
        if kl <= max_kl and improvement > 0:
            return LineSearchResult(theta, True, kl, improvement, k)
    policy.set_flat(theta_old)
    return LineSearchResult(theta_old.copy(), False, 0.0, 0.0, max_backtracks + 1)


def natural_gradient_step(policy: GaussianPolicy, batch: RolloutBatch, config: TrpoConfig) -> LineSearchResult:
    old = policy.copy()
    old_lp = nets.log_prob(old, batch.obs, batch.actions)
    g = surrogate_gradient(policy, old, batch, old_lp)
    if not np.any(g):
        return LineSearchResult(old.get_flat(), False, 0.0, 0.0, 0)

    def fvp(v):
        return nets.fisher_vector_product(old, batch.obs, v, config.cg_damping)

    direction = conjugate_gradient(fvp, g, config.cg_iters)
    shs = direction @ fvp(direction)
    full_step = math.sqrt(2.0 * config.max_kl / shs) * direction
    return line_search(policy, old, batch, full_step, config.max_kl,
                       config.backtrack_ratio, config.max_backtracks, old_lp)


def fit_value_function(value_net: ValueNet, batch: RolloutBatch, epochs: int = 5, lr: float = 1e-3,
                       minibatch: int = 256, rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Regress the value net on ``batch.returns`` with minibatch Adam.

    Keeps the starting parameters if fitting did not lower the full-batch MSE.
    Returns (mse_before, mse_after).
    """
    rng = np.random.default_rng(rng)
    obs, targets = batch.obs, batch.returns
    before = nets.value_loss(value_net, obs, targets)
    if epochs == 0:
        return before, before
    theta0 = value_net.net.get_flat()
    theta = theta0.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    n = len(targets)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, minibatch):
            idx = order[start:start + minibatch]
            value_net.net.set_flat(theta)
            g = nets.value_loss_gradient(value_net, obs[idx], targets[idx])
            step += 1
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            theta = theta - lr * (m / (1 - beta1**step)) / (np.sqrt(v / (1 - beta2**step)) + eps)
    value_net.net.set_flat(theta)
    after = nets.value_loss(value_net, obs, targets)
    if not after <= before:
        value_net.net.set_flat(theta0)
        after = before
    return before, after


def trpo_iteration(env_factory: Callable[[], PivotEnv], policy: GaussianPolicy, value_net: ValueNet,
                   config: TrpoConfig, rng: np.random.Generator) -> IterationStats:
    """One collect / advantage / natural-gradient / value-fit cycle. Updates in place."""
    t0 = time.perf_counter()
    batch = collect_rollouts(env_factory, policy, config.episodes_per_iter, rng)
    compute_advantages(batch, value_net, config.discount, config.gae_lambda)
    result = natural_gradient_step(policy, batch, config)
    vf_before, vf_after = fit_value_function(value_net, batch, config.vf_epochs, config.vf_lr,
                                             config.vf_minibatch, rng)
    return IterationStats(
        mean_return=float(batch.episode_returns().mean()),
        success_rate=float(batch.successes.mean()),
        kl=result.kl,
        surrogate_improvement=result.improvement,
        accepted=result.accepted,
        vf_loss_before=vf_before,
        vf_loss_after=vf_after,
        wall_time=time.perf_counter() - t0,
    )
