"""Termination, regularization, residual and combined rewards.

Regularization terms follow the usual legged-locomotion forms; every term
is reported already multiplied by its coefficient. Yaw/lateral terms of the
full 3-D robot have no planar counterpart and are omitted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REG_COEFFS = {
    "feet_contact_forces": -1.0,
    "action_rate": -0.2,
    "torques": -2.5e-5,
    "delta_torques": -1.0e-3,
    "tracking_lin_vel": 1.0,
    "tracking_ang_vel": 0.5,
    "feet_drag": 0.5,
    "ang_vel": -0.1,
    "stand_still": -0.2,
    "joint_acc": -1.25e-8,
}
REG_TERMS = tuple(REG_COEFFS)
COLLISION_PENALTY = -0.5
RESIDUAL_COEFF = 0.15
TRACKING_SIGMA = 0.25
FOOT_FORCE_MAX = 30.0
STAND_STILL_CMD = 0.1

OMEGA_T = 1.0
OMEGA_R = 1.0
OMEGA_RES = RESIDUAL_COEFF
OMEGA_SI = 1.0


@dataclass
class RewardInputs:
    """Per-step quantities for a batch of environments."""
    base_vx: np.ndarray
    pitch_rate: np.ndarray
    command: np.ndarray
    action: np.ndarray
    prev_action: np.ndarray
    torque: np.ndarray
    prev_torque: np.ndarray
    joint_vel: np.ndarray
    prev_joint_vel: np.ndarray
    joint_pos: np.ndarray
    default_joint_pos: np.ndarray   # stand-still reference pose, (4,) or per env (n, 4)
    foot_force: np.ndarray      # (n, 2, 2): fx, fz per foot
    foot_vx: np.ndarray         # (n, 2)
    contact: np.ndarray         # (n, 2) bool
    control_dt: float = 0.02


def regularization_reward(inp: RewardInputs) -> dict:
    """Coefficient-scaled regularization terms, one array (n,) per term."""
    err = inp.command - inp.base_vx
    qdd = (inp.joint_vel - inp.prev_joint_vel) / inp.control_dt
    still = np.abs(inp.command) < STAND_STILL_CMD
    # positive magnitudes; the coefficient carries the sign
    raw = {
        "tracking_lin_vel": np.exp(-err ** 2 / TRACKING_SIGMA),
        "tracking_ang_vel": np.exp(-inp.pitch_rate ** 2 / TRACKING_SIGMA),
        "action_rate": np.sum((inp.action - inp.prev_action) ** 2, axis=-1),
        "torques": np.sum(inp.torque ** 2, axis=-1),
        "delta_torques": np.sum((inp.torque - inp.prev_torque) ** 2, axis=-1),
        "joint_acc": np.sum(qdd ** 2, axis=-1),
        "feet_contact_forces": np.sum(np.maximum(inp.foot_force[..., 1] - FOOT_FORCE_MAX, 0.0), axis=-1),
        "ang_vel": inp.pitch_rate ** 2,
        "stand_still": np.linalg.norm(inp.joint_pos - inp.default_joint_pos, axis=-1) * still,
        "feet_drag": np.sum(np.abs(inp.foot_vx) * inp.contact, axis=-1),
    }
    terms = {k: REG_COEFFS[k] * raw[k] for k in REG_TERMS}
    # drag is a penalty although its coefficient is listed positive
    terms["feet_drag"] = -REG_COEFFS["feet_drag"] * raw["feet_drag"]
    return terms


def termination_penalty(collision) -> np.ndarray:
    return np.where(np.asarray(collision, bool), COLLISION_PENALTY, 0.0)


def residual_reward(action, action_flat, iteration: int, t1: int, t2: int | None = None) -> np.ndarray:
    """0 before T1, -||a - a_flat|| afterwards (before the coefficient)."""
    action = np.asarray(action, float)
    if iteration < t1:
        return np.zeros(action.shape[:-1])
    return -np.linalg.norm(action - np.asarray(action_flat, float), axis=-1)


def combined_reward(r_t, r_r, r_res, w_t=OMEGA_T, w_r=OMEGA_R, w_res=OMEGA_RES):
    return w_t * np.asarray(r_t) + w_r * np.asarray(r_r) + w_res * np.asarray(r_res)


@dataclass
class RewardBreakdown:
    terms: dict
    r_T: np.ndarray
    r_R: np.ndarray
    r_res: np.ndarray
    r_SI: np.ndarray
    r_c: np.ndarray


def compute_rewards(inp: RewardInputs, collision, r_res_raw, r_si, w_si=OMEGA_SI) -> RewardBreakdown:
    terms = regularization_reward(inp)
    r_r = np.sum(np.stack(list(terms.values())), axis=0)
    r_t = termination_penalty(collision)
    return RewardBreakdown(terms=terms, r_T=r_t, r_R=r_r, r_res=r_res_raw, r_SI=w_si * np.asarray(r_si),
                           r_c=combined_reward(r_t, r_r, r_res_raw))
