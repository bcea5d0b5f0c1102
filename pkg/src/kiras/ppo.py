"""Dual-critic PPO: per-critic GAE, normalized advantage mixing, scheduled weights."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import Adam, DenseNet, NonFiniteError, ParamVector, check_finite

LOG_2PI = math.log(2.0 * math.pi)


def gae(rewards, values, dones, bootstrap_value, gamma=0.99, lam=0.95):
    """Generalized advantage estimation along axis 0 (time); extra axes are env streams.

    ``dones[t]`` marks that the episode ended after step ``t``; the value of
    the following state is then not bootstrapped.
    """
    rewards = np.asarray(rewards, float)
    values = np.asarray(values, float)
    dones = np.asarray(dones, float)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ValueError("rewards, values and dones must have the same shape")
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    next_value = np.asarray(bootstrap_value, float)
    for t in reversed(range(T)):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


def omega_schedule(t, t1, sigma=0.8):
    """Task/imitation advantage weights: linear ramp from 1-sigma at t=0 to 1 at t=T1."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t >= t1:
        w1 = 1.0
    else:
        w1 = min(max((1.0 - sigma) + sigma * t / t1, 0.0), 1.0)
    return w1, 1.0 - w1


def normalize(a, floor=1e-8):
    a = np.asarray(a, float)
    return (a - a.mean()) / max(a.std(), floor)


def mix_advantages(a_task, a_imit, w1, w2):
    """Each stream normalized by its own batch statistics, then weighted."""
    n_task = normalize(a_task)
    if w2 == 0.0:
        return n_task
    return w1 * n_task + w2 * normalize(a_imit)


class GaussianPolicy:
    """Mean from a DenseNet, state-independent learnable log-std."""

    def __init__(self, obs_dim, act_dim, hidden=(64, 64), rng=None, init_log_std=-1.0):
        self.net = DenseNet([obs_dim, *hidden, act_dim], rng=rng, out_gain=0.01)
        self.log_std = ParamVector(np.full(act_dim, init_log_std))

    @property
    def act_dim(self):
        return self.net.out_dim

    def mean(self, obs):
        return self.net(obs)

    def sample(self, obs, rng):
        mu = self.net(obs)
        std = np.exp(self.log_std.value)
        a = mu + std * rng.standard_normal(mu.shape)
        return a, self.log_prob(a, mu), mu

    def log_prob(self, a, mu):
        ls = self.log_std.value
        z = (a - mu) / np.exp(ls)
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(ls) - 0.5 * len(ls) * LOG_2PI

    def entropy(self):
        return float(np.sum(self.log_std.value) + 0.5 * len(self.log_std.value) * (1.0 + LOG_2PI))

    def copy(self) -> "GaussianPolicy":
        other = GaussianPolicy.__new__(GaussianPolicy)
        other.net = self.net.copy()
        other.log_std = ParamVector(self.log_std.value.copy())
        return other


def surrogate_loss(policy: GaussianPolicy, obs, actions, old_logp, adv, clip=0.2, entropy_coef=0.005):
    """Clipped surrogate plus entropy bonus; returns (loss, grads for net + log_std, info)."""
    mu, cache = policy.net.forward_cached(obs)
    ls = policy.log_std.value
    std = np.exp(ls)
    z = (actions - mu) / std
    logp = -0.5 * np.sum(z * z, axis=-1) - np.sum(ls) - 0.5 * len(ls) * LOG_2PI
    ratio = np.exp(logp - old_logp)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    n = len(adv)
    loss = -np.mean(np.minimum(unclipped, clipped)) - entropy_coef * policy.entropy()
    # the min picks the unclipped branch unless clipping strictly lowers the objective
    active = unclipped <= clipped
    dlogp = np.where(active, -ratio * adv, 0.0) / n
    dmu = dlogp[:, None] * z / std
    dls = np.sum(dlogp[:, None] * (z * z - 1.0), axis=0) - entropy_coef
    grads, _ = policy.net.backward(cache, dmu)
    info = {"clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip)), "approx_kl": float(np.mean(old_logp - logp))}
    return float(loss), grads + [dls], info


def value_loss(critic: DenseNet, obs, returns):
    v, cache = critic.forward_cached(obs)
    err = v[:, 0] - returns
    loss = 0.5 * np.mean(err ** 2)
    grads, _ = critic.backward(cache, (err / len(err))[:, None])
    return float(loss), grads


@dataclass
class PPOConfig:
    clip: float = 0.2
    epochs: int = 5
    minibatches: int = 4
    entropy_coef: float = 0.005
    gamma: float = 0.99
    lam: float = 0.95
    lr: float = 1e-3
    max_grad_norm: float = 1.0


class MultiCriticPPO:
    """Actor plus independent task and imitation critics, each with its own Adam."""

    def __init__(self, actor_obs_dim, critic_obs_dim, act_dim, hidden=(64, 64), rng=None, cfg: PPOConfig | None = None):
        self.cfg = cfg or PPOConfig()
        rng = np.random.default_rng(0) if rng is None else rng
        self.actor = GaussianPolicy(actor_obs_dim, act_dim, hidden, rng)
        self.task_critic = DenseNet([critic_obs_dim, *hidden, 1], rng=rng)
        self.imit_critic = DenseNet([critic_obs_dim, *hidden, 1], rng=rng)
        self.actor_opt = Adam([self.actor.net, self.actor.log_std], self.cfg.lr, self.cfg.max_grad_norm)
        self.task_opt = Adam([self.task_critic], self.cfg.lr, self.cfg.max_grad_norm)
        self.imit_opt = Adam([self.imit_critic], self.cfg.lr, self.cfg.max_grad_norm)

    def values(self, critic_obs):
        return self.task_critic(critic_obs)[..., 0], self.imit_critic(critic_obs)[..., 0]

    def update(self, batch: dict, rng) -> dict:
        """batch: flat arrays actor_obs, critic_obs, actions, logp, adv (mixed), ret_task, ret_imit."""
        cfg = self.cfg
        n = len(batch["adv"])
        mb = n // cfg.minibatches
        stats = {"actor_loss": 0.0, "task_value_loss": 0.0, "imit_value_loss": 0.0, "clip_frac": 0.0, "approx_kl": 0.0}
        count = 0
        for _ in range(cfg.epochs):
            perm = rng.permutation(n)
            for k in range(cfg.minibatches):
                idx = perm[k * mb:(k + 1) * mb]
                al, ag, info = surrogate_loss(self.actor, batch["actor_obs"][idx], batch["actions"][idx],
                                              batch["logp"][idx], batch["adv"][idx], cfg.clip, cfg.entropy_coef)
                tl, tg = value_loss(self.task_critic, batch["critic_obs"][idx], batch["ret_task"][idx])
                il, ig = value_loss(self.imit_critic, batch["critic_obs"][idx], batch["ret_imit"][idx])
                if not np.isfinite(al + tl + il):
                    raise NonFiniteError(f"PPO loss not finite: actor={al} task={tl} imit={il}")
                self.actor_opt.step(ag)
                self.task_opt.step(tg)
                self.imit_opt.step(ig)
                stats["actor_loss"] += al
                stats["task_value_loss"] += tl
                stats["imit_value_loss"] += il
                stats["clip_frac"] += info["clip_frac"]
                stats["approx_kl"] += info["approx_kl"]
                count += 1
        return {k: v / count for k, v in stats.items()}
