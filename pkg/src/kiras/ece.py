"""Environmental context estimator: a skill-conditioned CVAE over proprioceptive history.

The encoder maps the flattened history to ``[v_hat, posterior mean, posterior log-var]``,
the decoder maps ``[z_lat, skill one-hot]`` to the next proprioceptive
observation, and a single linear layer maps the skill one-hot to the prior
mean and log-variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Adam, DenseNet, check_finite


@dataclass
class ContextLatent:
    v_hat: np.ndarray
    z_lat: np.ndarray
    post_mean: np.ndarray
    post_logvar: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.v_hat, self.z_lat], axis=-1)


def gaussian_kl(mq, lq, mp, lp):
    """KL(N(mq, e^lq) || N(mp, e^lp)) summed over the last axis."""
    return 0.5 * np.sum(lp - lq + (np.exp(lq) + (mq - mp) ** 2) / np.exp(lp) - 1.0, axis=-1)


class ECE:
    def __init__(self, prop_dim, history_len, n_skills, vel_dim=2, latent_dim=8,
                 enc_hidden=(64, 64), dec_hidden=(64, 64), rng=None, lr=1e-3, beta=0.1, max_grad_norm=1.0):
        rng = np.random.default_rng(0) if rng is None else rng
        self.prop_dim = prop_dim
        self.history_len = history_len
        self.n_skills = n_skills
        self.vel_dim = vel_dim
        self.latent_dim = latent_dim
        self.beta = beta
        self.encoder = DenseNet([prop_dim * history_len, *enc_hidden, vel_dim + 2 * latent_dim], rng=rng)
        self.decoder = DenseNet([latent_dim + n_skills, *dec_hidden, prop_dim], rng=rng)
        self.prior = DenseNet([n_skills, 2 * latent_dim], activations=["linear"], rng=rng, zero=True)
        self.opt = Adam([self.encoder, self.decoder, self.prior], lr, max_grad_norm)

    @property
    def context_dim(self) -> int:
        return self.vel_dim + self.latent_dim

    def nets(self):
        return [self.encoder, self.decoder, self.prior]

    def _split(self, enc_out):
        v = enc_out[..., :self.vel_dim]
        m = enc_out[..., self.vel_dim:self.vel_dim + self.latent_dim]
        lv = np.clip(enc_out[..., self.vel_dim + self.latent_dim:], -10.0, 10.0)
        return v, m, lv

    def forward(self, history, skill_onehot, rng=None):
        """Returns (ContextLatent, reconstruction). With ``rng`` the latent is sampled, else the mean."""
        history = np.asarray(history, float)
        if history.shape[-2:] != (self.history_len, self.prop_dim):
            raise ValueError(f"history must have shape (..., {self.history_len}, {self.prop_dim})")
        enc = self.encoder(history.reshape(history.shape[:-2] + (-1,)))
        v, m, lv = self._split(enc)
        z = m if rng is None else m + np.exp(0.5 * lv) * rng.standard_normal(m.shape)
        recon = self.decoder(np.concatenate([z, skill_onehot], axis=-1))
        return ContextLatent(v, z, m, lv), recon

    def context(self, history, skill_onehot):
        """Inference-mode context fed to the actor: [v_hat, posterior mean]."""
        history = np.asarray(history, float)
        enc = self.encoder(history.reshape(history.shape[:-2] + (-1,)))
        v, m, _ = self._split(enc)
        return np.concatenate([v, m], axis=-1)

    def loss_and_grads(self, history, skill_onehot, v_true, next_obs, eps):
        """Loss: MSE(v) + MSE(o_next) + beta * KL(q || p), per-sample mean; ``eps`` is the reparameterization noise."""
        B = len(history)
        x = np.asarray(history, float).reshape(B, -1)
        enc, enc_cache = self.encoder.forward_cached(x)
        vd, ld = self.vel_dim, self.latent_dim
        v = enc[:, :vd]
        m = enc[:, vd:vd + ld]
        raw_lv = enc[:, vd + ld:]
        lv = np.clip(raw_lv, -10.0, 10.0)
        std = np.exp(0.5 * lv)
        z = m + std * eps
        dec_in = np.concatenate([z, skill_onehot], axis=-1)
        recon, dec_cache = self.decoder.forward_cached(dec_in)
        pr, pr_cache = self.prior.forward_cached(np.asarray(skill_onehot, float))
        mp, lp = pr[:, :ld], pr[:, ld:]

        ev = v - v_true
        eo = recon - next_obs
        mse_v = np.mean(ev ** 2)
        mse_o = np.mean(eo ** 2)
        kl = np.mean(gaussian_kl(m, lv, mp, lp))
        loss = mse_v + mse_o + self.beta * kl

        g_v = 2.0 * ev / ev.size
        g_recon = 2.0 * eo / eo.size
        dec_grads, g_dec_in = self.decoder.backward(dec_cache, g_recon)
        g_z = g_dec_in[:, :ld]
        b = self.beta / B
        inv_p = np.exp(-lp)
        g_m = g_z + b * (m - mp) * inv_p
        g_lv = g_z * eps * 0.5 * std + b * 0.5 * (np.exp(lv) * inv_p - 1.0)
        g_lv = g_lv * ((raw_lv > -10.0) & (raw_lv < 10.0))
        g_mp = -b * (m - mp) * inv_p
        g_lp = b * 0.5 * (1.0 - (np.exp(lv) + (m - mp) ** 2) * inv_p)
        enc_grads, _ = self.encoder.backward(enc_cache, np.concatenate([g_v, g_m, g_lv], axis=1))
        pr_grads, _ = self.prior.backward(pr_cache, np.concatenate([g_mp, g_lp], axis=1))
        parts = {"loss": float(loss), "mse_v": float(mse_v), "mse_o": float(mse_o), "kl": float(kl)}
        return parts, enc_grads + dec_grads + pr_grads

    def update(self, history, skill_onehot, v_true, next_obs, rng) -> dict:
        eps = rng.standard_normal((len(history), self.latent_dim))
        parts, grads = self.loss_and_grads(history, skill_onehot, v_true, next_obs, eps)
        check_finite([np.array(parts["loss"])], "ECE loss")
        self.opt.step(grads)
        return parts


def ece_loss(v_true, v_hat, o_next, o_hat, post_mean, post_logvar, prior_mean, prior_logvar, beta):
    """Stand-alone evaluation of the estimator loss."""
    mse_v = np.mean((np.asarray(v_hat) - v_true) ** 2)
    mse_o = np.mean((np.asarray(o_hat) - o_next) ** 2)
    kl = np.mean(gaussian_kl(np.atleast_2d(post_mean), np.atleast_2d(post_logvar),
                             np.atleast_2d(prior_mean), np.atleast_2d(prior_logvar)))
    return float(mse_v + mse_o + beta * kl)


def adaboot_gate(batch_mean_reward: float, running_best: float) -> float:
    """Probability of applying an estimator update this iteration."""
    return float(min(max(batch_mean_reward / max(running_best, 1e-6), 0.2), 1.0))
