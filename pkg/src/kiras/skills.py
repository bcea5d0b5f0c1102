"""Proficiency-based skill sampling, coverage enforcement and keyframe state initialization."""

from __future__ import annotations

from collections import deque

import numpy as np

from . import sim
from .keyframes import Keyframe

VALUE_SHIFT = 1e-3


def eq5_probs(values) -> np.ndarray:
    """p_i = (1 - V_i / sum V) / (N - 1), applied as is (values must be positive)."""
    v = np.asarray(values, dtype=float)
    n = len(v)
    if n < 2:
        raise ValueError("need at least two skills")
    return (1.0 - v / v.sum()) / (n - 1)


def skill_probs(values) -> np.ndarray:
    """Skill probabilities from task values: lower value, higher probability.

    Values are first shifted to ``V - min V + 1e-3`` so the result is always a
    valid distribution and invariant to adding a constant to all values.
    """
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        raise ValueError("need at least two skills")
    return eq5_probs(v - v.min() + VALUE_SHIFT)


class SkillSampler:
    """Draws the commanded skill at each episode reset."""

    def __init__(self, keyframes, window: int = 200, cross_skill_prob: float = 0.25,
                 joint_noise: float = 0.05, height_noise: float = 0.02, pitch_noise_deg: float = 2.0,
                 coverage: bool = True):
        self.keyframes = list(keyframes)
        self.coverage = coverage
        self.window = int(window)
        self.recent = deque(maxlen=self.window)
        self.counts = np.zeros(len(self.keyframes), dtype=np.int64)
        self.cross_skill_prob = cross_skill_prob
        self.joint_noise = joint_noise
        self.height_noise = height_noise
        self.pitch_noise = np.radians(pitch_noise_deg)
        self.probs = np.full(len(self.keyframes), 1.0 / len(self.keyframes))

    @property
    def n_skills(self) -> int:
        return len(self.keyframes)

    def add_skill(self, kf: Keyframe) -> None:
        self.keyframes.append(kf)
        self.counts = np.append(self.counts, 0)
        self.probs = np.full(self.n_skills, 1.0 / self.n_skills)

    def set_values(self, values) -> np.ndarray:
        self.probs = skill_probs(values)
        return self.probs

    def coverage_check(self, proposed: int) -> int:
        """Swap a most-frequent proposal for a skill missing from the recent window."""
        if len(self.recent) == 0:
            return int(proposed)
        freq = np.bincount(np.fromiter(self.recent, dtype=np.int64), minlength=self.n_skills)
        absent = np.flatnonzero(freq == 0)
        if len(absent) and freq[proposed] == freq.max():
            return int(absent[0])
        return int(proposed)

    def sample_skill(self, rng, probs=None) -> int:
        p = self.probs if probs is None else np.asarray(probs, float)
        proposed = int(rng.choice(self.n_skills, p=p / p.sum()))
        final = self.coverage_check(proposed) if self.coverage else proposed
        self.recent.append(final)
        self.counts[final] += 1
        return final

    def initialize_state(self, skill: int, rng, base_x=0.0, ground=0.0, noise=True):
        """Keyframe-based start pose; sometimes borrowed from another skill. Returns (state, pose_skill)."""
        pose_skill = int(skill)
        if noise and self.n_skills > 1 and rng.random() < self.cross_skill_prob:
            others = [k for k in range(self.n_skills) if k != skill]
            pose_skill = int(others[rng.integers(len(others))])
        return initialize_state(self.keyframes[pose_skill], rng, base_x, ground,
                                self.joint_noise if noise else 0.0,
                                self.height_noise if noise else 0.0,
                                self.pitch_noise if noise else 0.0), pose_skill

    def state_dict(self):
        return {"counts": self.counts.copy(), "recent": np.array(list(self.recent), dtype=np.int64),
                "probs": self.probs.copy()}

    def load_state_dict(self, d):
        self.counts = np.array(d["counts"], dtype=np.int64)
        self.recent = deque((int(v) for v in d["recent"]), maxlen=self.window)
        self.probs = np.array(d["probs"], float)


def initialize_state(kf: Keyframe, rng, base_x=0.0, ground=0.0, joint_noise=0.05, height_noise=0.02, pitch_noise=np.radians(2.0)):
    q = kf.as_array() + rng.uniform(-joint_noise, joint_noise, 4)
    z = ground + kf.base_height + rng.uniform(-height_noise, height_noise)
    pitch = kf.pitch + rng.uniform(-pitch_noise, pitch_noise)
    return sim.make_state(base_x, z, pitch, q)
