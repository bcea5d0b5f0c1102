"""Skills as single keyframes, keyframe trajectories and the imitation projection.

An imitation frame is laid out as ``[pitch, skill one-hot (N), joint_pos (4), base_height]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import yaml

from . import sim

BUILTIN_SKILLS = (
    # name, base height (m), pitch (deg)
    ("walk", 0.20, 0.0),
    ("crawl", 0.10, 0.0),
    ("stilt", 0.30, 0.0),
    ("pitch_up", 0.20, -15.0),
    ("pitch_down", 0.20, 15.0),
)


class OutOfWorkspace(ValueError):
    pass


@dataclass(frozen=True)
class Keyframe:
    skill_index: int
    joint_pos: tuple
    base_height: float
    pitch: float
    name: str = ""

    def as_array(self) -> np.ndarray:
        return np.asarray(self.joint_pos, dtype=float)


def leg_ik(drop: float):
    """Hip/knee angles (world-vertical reference) placing the foot ``drop`` below the hip.

    Knee-backward branch: the knee sits behind the hip-foot line.
    """
    reach = sim.THIGH + sim.SHANK
    if not 0.0 < drop <= reach + 1e-12:
        raise OutOfWorkspace(f"foot drop {drop:.4f} m outside (0, {reach}]")
    # law of cosines; general link lengths
    cos_k = (drop * drop - sim.THIGH ** 2 - sim.SHANK ** 2) / (2 * sim.THIGH * sim.SHANK)
    knee = math.acos(min(1.0, max(-1.0, cos_k)))
    # interior angle between thigh and the hip-foot line
    hip = -math.atan2(sim.SHANK * math.sin(knee), sim.THIGH + sim.SHANK * math.cos(knee))
    return hip, knee


def keyframe_from_posture(skill_index: int, base_height: float, pitch: float, name: str = "") -> Keyframe:
    """Joint angles that put both feet on flat ground, directly under the hips, at the given base pose."""
    joints = []
    for hx in sim.HIP_X:
        hip_x, hip_z = sim.rotate(pitch, hx, 0.0)
        drop = base_height + hip_z
        h, k = leg_ik(drop)
        # body-frame hip angle = world angle + pitch
        joints += [h + pitch, k]
    return Keyframe(int(skill_index), tuple(float(j) for j in joints), float(base_height), float(pitch), name)


def builtin_keyframes() -> list[Keyframe]:
    return [keyframe_from_posture(i, h, math.radians(p), name) for i, (name, h, p) in enumerate(BUILTIN_SKILLS)]


def foot_residual(kf: Keyframe) -> float:
    """Largest |foot height| when the keyframe pose sits above flat ground at z=0."""
    _, fz = sim.foot_positions(0.0, kf.base_height, kf.pitch, kf.as_array())
    return float(np.max(np.abs(fz)))


def frame_dim(n_skills: int) -> int:
    return n_skills + 6


def make_frame(pitch, onehot, joint_pos, base_height) -> np.ndarray:
    """Assemble imitation frame(s); inputs may carry a leading batch axis."""
    pitch = np.asarray(pitch, float)
    return np.concatenate([pitch[..., None], np.asarray(onehot, float), np.asarray(joint_pos, float),
                           np.asarray(base_height, float)[..., None]], axis=-1)


def onehot(index, n_skills: int) -> np.ndarray:
    index = np.asarray(index)
    out = np.zeros(index.shape + (n_skills,))
    np.put_along_axis(out, index[..., None], 1.0, axis=-1)
    return out


def keyframe_frame(kf: Keyframe, n_skills: int) -> np.ndarray:
    return make_frame(kf.pitch, onehot(kf.skill_index, n_skills), kf.as_array(), kf.base_height)


def keyframe_trajectory(kf: Keyframe, T: int, n_skills: int) -> np.ndarray:
    """The keyframe frame repeated ``T`` times, shape (T, frame_dim)."""
    if T < 2:
        raise ValueError("T must be >= 2")
    return np.repeat(keyframe_frame(kf, n_skills)[None, :], T, axis=0)


def phi(bundle) -> np.ndarray:
    """Imitation projection of an observation bundle (already carried as ``bundle.frame``)."""
    return np.array(bundle.frame, copy=True)


# ------------------------------------------------------------ config files

def load_keyframes(path, start_index: int = 0) -> list[Keyframe]:
    """Read keyframes from a YAML or JSON file.

    Either a list or ``{"skills": [...]}``; each entry has ``name`` and either
    ``joint_pos`` (4 angles, radians) plus ``base_height``/``pitch``, or just
    ``base_height`` and ``pitch_deg`` (or ``pitch`` in radians) solved by IK.
    """
    with open(path) as f:
        data = yaml.safe_load(f)
    entries = data["skills"] if isinstance(data, dict) else data
    out = []
    for k, e in enumerate(entries):
        if "base_height" not in e:
            raise ValueError(f"keyframe entry {k}: missing 'base_height'")
        idx = int(e.get("skill_index", start_index + k))
        pitch = math.radians(e["pitch_deg"]) if "pitch_deg" in e else float(e.get("pitch", 0.0))
        if "joint_pos" in e:
            jp = [float(v) for v in e["joint_pos"]]
            if len(jp) != 4:
                raise ValueError(f"{e.get('name')}: joint_pos needs 4 values")
            kf = Keyframe(idx, tuple(jp), float(e["base_height"]), pitch, e.get("name", ""))
            if foot_residual(kf) > 1e-3:
                raise OutOfWorkspace(f"{kf.name}: feet not on the ground for the given joint angles")
            out.append(kf)
        else:
            out.append(keyframe_from_posture(idx, float(e["base_height"]), pitch, e.get("name", "")))
    return out


def save_keyframes(path, keyframes) -> None:
    entries = [{"name": k.name, "skill_index": k.skill_index, "base_height": k.base_height,
                "pitch": k.pitch, "joint_pos": list(k.joint_pos)} for k in keyframes]
    with open(path, "w") as f:
        json.dump({"skills": entries}, f, indent=2)
