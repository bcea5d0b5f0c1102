"""Premium trajectory selection, DTW scoring, LS-GAN discriminator and the SIL reward."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .numerics import Adam, DenseNet, check_finite


# ------------------------------------------------------------------- DTW

def dtw_distance(a, b) -> float:
    """Classic DTW with Euclidean frame cost and unit match/insert/delete steps."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("DTW needs non-empty sequences")
    if a.shape[1] != b.shape[1]:
        raise ValueError("frame dimensions differ")
    return float(dtw_batch(a[None], b[None])[0])


def dtw_batch(a, b) -> np.ndarray:
    """DTW for a batch of equal-shape pairs, a (B, n, d), b (B, m, d) -> (B,).

    Anti-diagonal sweep: every cell on diagonal i+j=k depends only on the two
    previous diagonals, so each sweep step is one vectorized update.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[1] == 0 or b.shape[1] == 0:
        raise ValueError("DTW needs non-empty sequences")
    n, m = a.shape[1], b.shape[1]
    cost = np.sqrt(np.sum((a[:, :, None, :] - b[:, None, :, :]) ** 2, axis=-1))  # (B, n, m)
    acc = np.full((a.shape[0], n + 1, m + 1), np.inf)
    acc[:, 0, 0] = 0.0
    for k in range(2, n + m + 1):
        i = np.arange(max(1, k - m), min(n, k - 1) + 1)
        j = k - i
        best = np.minimum(np.minimum(acc[:, i - 1, j - 1], acc[:, i - 1, j]), acc[:, i, j - 1])
        acc[:, i, j] = cost[:, i - 1, j - 1] + best
    return acc[:, n, m]


def cosine_similarity(traj, ref) -> float:
    """Mean per-frame cosine similarity between two equal-length frame sequences."""
    traj = np.atleast_2d(traj)
    ref = np.atleast_2d(ref)
    num = np.sum(traj * ref, axis=-1)
    den = np.linalg.norm(traj, axis=-1) * np.linalg.norm(ref, axis=-1)
    return float(np.mean(num / np.maximum(den, 1e-12)))


# ------------------------------------------------------------ normalization

class FrameNormalizer:
    """Running per-dimension mean/std of imitation frames; can be frozen."""

    def __init__(self, dim: int, clip: float = 5.0):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4
        self.clip = clip
        self.frozen = False

    def update(self, x) -> None:
        if self.frozen:
            return
        x = np.asarray(x, dtype=float).reshape(-1, len(self.mean))
        bm, bv, bn = x.mean(0), x.var(0), len(x)
        delta = bm - self.mean
        tot = self.count + bn
        self.mean = self.mean + delta * bn / tot
        self.var = (self.var * self.count + bv * bn + delta ** 2 * self.count * bn / tot) / tot
        self.count = tot

    def __call__(self, x):
        std = np.sqrt(self.var) + 1e-6
        return np.clip((np.asarray(x) - self.mean) / std, -self.clip, self.clip)

    def state_dict(self):
        return {"mean": self.mean, "var": self.var, "count": np.array([self.count]), "frozen": np.array([float(self.frozen)])}

    def load_state_dict(self, d):
        self.mean = np.array(d["mean"], float)
        self.var = np.array(d["var"], float)
        self.count = float(d["count"][0])
        self.frozen = bool(d["frozen"][0])


# ---------------------------------------------------------- premium buffer

@dataclass
class SkillSlot:
    keyframe_trajectory: np.ndarray
    premium: list = field(default_factory=list)
    best_score: float = -np.inf


class PremiumBuffer:
    """Per-skill store of high-scoring trajectories plus the fixed keyframe trajectory."""

    def __init__(self, keyframe_trajectories, capacity: int = 8):
        self.capacity = int(capacity)
        self.slots = [SkillSlot(np.array(k, dtype=float, copy=True)) for k in keyframe_trajectories]
        self.T = self.slots[0].keyframe_trajectory.shape[0]

    @property
    def n_skills(self) -> int:
        return len(self.slots)

    def add_skill(self, keyframe_trajectory) -> None:
        self.slots.append(SkillSlot(np.array(keyframe_trajectory, dtype=float, copy=True)))

    def trajectories(self, skill: int) -> list:
        s = self.slots[skill]
        return [s.keyframe_trajectory] + s.premium

    def best_score(self, skill: int) -> float:
        return self.slots[skill].best_score

    def maybe_admit(self, skill: int, traj, score: float) -> bool:
        """Store ``traj`` iff its score strictly exceeds the skill's running best."""
        slot = self.slots[skill]
        traj = np.asarray(traj, dtype=float)
        if traj.shape != slot.keyframe_trajectory.shape:
            raise ValueError(f"trajectory shape {traj.shape} != {slot.keyframe_trajectory.shape}")
        if not score > slot.best_score:
            return False
        slot.premium.append(traj.copy())
        if len(slot.premium) > self.capacity:
            slot.premium.pop(0)
        slot.best_score = float(score)
        return True

    def sample_transitions(self, skills, rng):
        """One (prev, cur) frame pair per requested skill, uniform over stored trajectories."""
        skills = np.asarray(skills, dtype=np.int64)
        out_prev = np.empty((len(skills), self.slots[0].keyframe_trajectory.shape[1]))
        out_cur = np.empty_like(out_prev)
        for sk in np.unique(skills):
            rows = np.flatnonzero(skills == sk)
            stack = np.stack(self.trajectories(int(sk)))
            which = rng.integers(len(stack), size=len(rows))
            t = rng.integers(1, stack.shape[1], size=len(rows))
            out_prev[rows] = stack[which, t - 1]
            out_cur[rows] = stack[which, t]
        return out_prev, out_cur

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            dim = self.slots[0].keyframe_trajectory.shape[1]
            w.writerow(["skill", "entry", "kind", "t"] + [f"f{k}" for k in range(dim)])
            for s, slot in enumerate(self.slots):
                for e, tr in enumerate(self.trajectories(s)):
                    kind = "keyframe" if e == 0 else "premium"
                    for t, row in enumerate(tr):
                        w.writerow([s, e, kind, t] + [repr(float(v)) for v in row])


def score_trajectory(traj, keyframe_traj, rewards, dtw_weight: float = 1.0, verbatim_sign: bool = False) -> float:
    """Combined evaluation: summed combined reward and a DTW term to the keyframe trajectory.

    By default the distance is subtracted so that closer trajectories score
    higher; ``verbatim_sign`` adds it instead.
    """
    rewards = np.asarray(rewards, dtype=float)
    if len(rewards) != len(traj):
        raise ValueError("reward sequence length differs from trajectory length")
    d = dtw_distance(traj, keyframe_traj)
    sign = 1.0 if verbatim_sign else -1.0
    return float(np.sum(rewards) + sign * dtw_weight * d)


def score_batch(trajs, keyframe_trajs, rewards, dtw_weight=1.0, verbatim_sign=False) -> np.ndarray:
    d = dtw_batch(trajs, keyframe_trajs)
    sign = 1.0 if verbatim_sign else -1.0
    return np.sum(rewards, axis=1) + sign * dtw_weight * d


# ----------------------------------------------------------- discriminator

def sil_reward(score):
    """max(1 - 0.25 (D - 1)^2, 0)."""
    score = np.asarray(score, dtype=float)
    return np.maximum(1.0 - 0.25 * (score - 1.0) ** 2, 0.0)


def lsgan_loss(d_real, d_fake):
    """Least-squares loss and its gradients w.r.t. the two score arrays (per-sample means)."""
    d_real = np.asarray(d_real, float)
    d_fake = np.asarray(d_fake, float)
    loss = np.mean((d_real - 1.0) ** 2) + np.mean((d_fake + 1.0) ** 2)
    return loss, 2.0 * (d_real - 1.0) / d_real.size, 2.0 * (d_fake + 1.0) / d_fake.size


class Discriminator:
    """Scores a transition (frame_{t-1}, frame_t); input is the concatenated pair."""

    def __init__(self, frame_dim: int, hidden=(64, 64), rng=None, lr=1e-3, max_grad_norm=1.0):
        self.frame_dim = frame_dim
        self.net = DenseNet([2 * frame_dim, *hidden, 1], rng=rng)
        self.opt = Adam([self.net], learning_rate=lr, max_grad_norm=max_grad_norm)

    def score(self, prev, cur):
        x = np.concatenate([prev, cur], axis=-1)
        return self.net(x)[..., 0]

    def reward(self, prev, cur):
        return sil_reward(self.score(prev, cur))

    def loss_and_grads(self, real_prev, real_cur, fake_prev, fake_cur):
        xr = np.concatenate([real_prev, real_cur], axis=-1)
        xf = np.concatenate([fake_prev, fake_cur], axis=-1)
        x = np.concatenate([xr, xf], axis=0)
        out, cache = self.net.forward_cached(x)
        nr = len(xr)
        loss, gr, gf = lsgan_loss(out[:nr, 0], out[nr:, 0])
        g = np.concatenate([gr, gf])[:, None]
        grads, _ = self.net.backward(cache, g)
        return loss, grads

    def update(self, real_prev, real_cur, fake_prev, fake_cur) -> float:
        """One Adam step on the LS-GAN loss; returns the pre-step loss."""
        if len(real_prev) == 0 or len(fake_prev) == 0:
            raise ValueError("discriminator batches must be non-empty")
        loss, grads = self.loss_and_grads(real_prev, real_cur, fake_prev, fake_cur)
        check_finite([np.array(loss)], "discriminator loss")
        self.opt.step(grads)
        return float(loss)
