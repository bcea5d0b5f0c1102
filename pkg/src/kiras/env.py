"""Observation layouts and a batched environment around the planar simulator.

Proprioceptive vector (actor side), with N skills::

    [pitch, command_vx, skill one-hot (N), joint_pos - default (4), 0.1 * joint_vel (4), prev_action (4)]

Privileged vector (critics) appends::

    [base_vx, base_vz, 0.25 * pitch_rate, foot heights above terrain (2), sin(pitch), cos(pitch),
     terrain height minus base height at 9 points spanning 0.4 m ahead]

The imitation frame is ``[pitch, one-hot (N), joint_pos (4), base height above terrain]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sim
from .keyframes import make_frame, onehot

ACTION_SCALE = 0.5
JOINT_VEL_SCALE = 0.1
PITCH_RATE_SCALE = 0.25
PRIV_EXTRA = 7 + sim.N_HEIGHT_SAMPLES


def prop_dim(n_skills: int) -> int:
    return 14 + n_skills


def priv_dim(n_skills: int) -> int:
    return prop_dim(n_skills) + PRIV_EXTRA


def skill_slice(n_skills: int) -> slice:
    """Where the one-hot lives inside the proprioceptive vector."""
    return slice(2, 2 + n_skills)


@dataclass
class ObservationBundle:
    prop: np.ndarray
    priv: np.ndarray
    frame: np.ndarray
    history: np.ndarray     # (n, H, prop_dim), oldest first, newest = prop


def observe(state: sim.RobotState, command, skill_onehot, maps, prev_action, default_joint_pos, history=None):
    """Build an ObservationBundle; ``history`` (if given) is shifted and the new frame appended."""
    n = state.n
    skill_onehot = np.broadcast_to(np.asarray(skill_onehot, float), (n, np.shape(skill_onehot)[-1]))
    command = np.broadcast_to(np.asarray(command, float), (n,))
    prev_action = np.broadcast_to(np.asarray(prev_action, float), (n, 4))
    if isinstance(maps, sim.TerrainMap):
        maps = maps.height_samples[None, :].repeat(n, 0)
    prop = np.concatenate([
        state.pitch[:, None], command[:, None], skill_onehot,
        state.joint_pos - default_joint_pos, JOINT_VEL_SCALE * state.joint_vel, prev_action], axis=1)
    fx, fz = sim.foot_positions(state.base_x, state.base_z, state.pitch, state.joint_pos)
    foot_h = fz - sim.interp_height(maps, fx)
    xs = state.base_x[:, None] + np.linspace(0.0, sim.HEIGHT_SAMPLE_SPAN, sim.N_HEIGHT_SAMPLES)[None, :]
    samples = sim.interp_height(maps, xs) - state.base_z[:, None]
    priv = np.concatenate([
        prop, state.base_vx[:, None], state.base_vz[:, None], PITCH_RATE_SCALE * state.pitch_rate[:, None],
        foot_h, np.sin(state.pitch)[:, None], np.cos(state.pitch)[:, None], samples], axis=1)
    ground = sim.interp_height(maps, state.base_x[:, None])[:, 0]
    frame = make_frame(state.pitch, skill_onehot, state.joint_pos, state.base_z - ground)
    if history is not None:
        history = np.concatenate([history[:, 1:], prop[:, None, :]], axis=1)
    return ObservationBundle(prop, priv, frame, history)


class VecEnv:
    """A batch of independent episodes sharing one simulator call per control step."""

    def __init__(self, n_envs, n_skills, default_joint_pos, history_len=4, seed=0,
                 episode_steps=sim.EPISODE_STEPS, randomize=True, command_range=sim.COMMAND_RANGE):
        self.n = int(n_envs)
        self.n_skills = int(n_skills)
        self.default_joint_pos = np.asarray(default_joint_pos, float)
        self.history_len = history_len
        self.episode_steps = episode_steps
        self.randomize = randomize
        self.command_range = command_range
        self.rng = np.random.default_rng(seed)
        self.terrain_seed = int(seed)
        n_samples = int(round(sim.TERRAIN_LENGTH / sim.TERRAIN_SPACING)) + 1
        self.maps = np.zeros((self.n, n_samples))
        self.terrain_type = np.zeros(self.n, dtype=np.int64)
        self.level = np.zeros(self.n, dtype=np.int64)
        self.rnd = sim.nominal_randomization(self.n)
        self.state = None
        self.command = np.zeros(self.n)
        self.skill = np.zeros(self.n, dtype=np.int64)
        self.prev_action = np.zeros((self.n, 4))
        self.prev_torque = np.zeros((self.n, 4))
        self.prev_joint_vel = np.zeros((self.n, 4))
        self.history = None
        self.ep_step = np.zeros(self.n, dtype=np.int64)
        self.ep_start_x = np.zeros(self.n)
        self._terrain_cache = {}

    @property
    def control_dt(self):
        return sim.DT * sim.DECIMATION

    def terrain_map(self, type_index: int, level: int) -> np.ndarray:
        key = (int(type_index), int(level))
        if key not in self._terrain_cache:
            self._terrain_cache[key] = sim.generate_terrain(sim.TERRAIN_TYPES[key[0]], key[1], self.terrain_seed).height_samples
        return self._terrain_cache[key]

    def reset_envs(self, ids, skills, states, terrain_types=None, levels=None):
        """Start new episodes in ``ids`` with given skills and initial (batched) states."""
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) == 0:
            return
        if terrain_types is not None:
            self.terrain_type[ids] = terrain_types
        if levels is not None:
            self.level[ids] = levels
        for i in ids:
            self.maps[i] = self.terrain_map(self.terrain_type[i], self.level[i])
        if self.randomize:
            r = sim.sample_randomization(self.rng, len(ids))
        else:
            r = sim.nominal_randomization(len(ids))
        for name in ("friction_coeff", "payload_kg", "com_shift", "push_velocity", "actuation_delay_s",
                     "pd_stiffness_mult", "pd_damping_mult"):
            getattr(self.rnd, name)[ids] = getattr(r, name)
        self.command[ids] = sim.sample_command(self.rng, len(ids), self.command_range)
        self.skill[ids] = skills
        if self.state is None:
            self.state = states.take(np.zeros(self.n, dtype=np.int64))
        # place the base on the local ground
        ground = sim.interp_height(self.maps[ids], states.base_x[:, None])[:, 0]
        states = states.copy()
        states.base_z = states.base_z + ground
        self.state.put(ids, states)
        self.prev_action[ids] = 0.0
        self.prev_torque[ids] = 0.0
        self.prev_joint_vel[ids] = 0.0
        self.ep_step[ids] = 0
        self.ep_start_x[ids] = states.base_x
        obs = self._observe_ids(ids)
        if self.history is None:
            self.history = np.zeros((self.n, self.history_len, obs.prop.shape[1]))
        # pad by repeating the first frame
        self.history[ids] = np.repeat(obs.prop[:, None, :], self.history_len, axis=1)

    def _observe_ids(self, ids):
        st = self.state.take(ids)
        return observe(st, self.command[ids], onehot(self.skill[ids], self.n_skills), self.maps[ids],
                       self.prev_action[ids], self.default_joint_pos)

    def observe(self) -> ObservationBundle:
        obs = observe(self.state, self.command, onehot(self.skill, self.n_skills), self.maps,
                      self.prev_action, self.default_joint_pos)
        obs.history = self.history.copy()
        return obs

    def step(self, actions):
        """Apply actions; returns (obs_after, info dict). Episodes are NOT auto-reset."""
        actions = np.asarray(actions, float)
        targets = np.clip(self.default_joint_pos + ACTION_SCALE * actions, -np.pi, np.pi)
        prev_state = self.state
        self.state, info = sim.step(prev_state, targets, self.maps, self.rnd)
        bad = info.diverged
        if np.any(bad):
            # keep the batch finite; the episode is terminated and flagged
            self.state.put(np.flatnonzero(bad), prev_state.take(np.flatnonzero(bad)))
        self.ep_step += 1
        obs = observe(self.state, self.command, onehot(self.skill, self.n_skills), self.maps,
                      actions, self.default_joint_pos, self.history)
        self.history = obs.history.copy()
        out = {
            "collision": info.collision,
            "diverged": bad,
            "timeout": self.ep_step >= self.episode_steps,
            "contact": info.contact,
            "foot_force": info.foot_force,
            "foot_vx": info.foot_vx,
            "torque": info.torque,
            "prev_torque": self.prev_torque.copy(),
            "prev_action": self.prev_action.copy(),
            "prev_joint_vel": self.prev_joint_vel.copy(),
        }
        self.prev_action = actions.copy()
        self.prev_torque = info.torque.copy()
        self.prev_joint_vel = self.state.joint_vel.copy()
        return obs, out

    def progress(self, ids):
        dist = self.state.base_x[ids] - self.ep_start_x[ids]
        return dist
