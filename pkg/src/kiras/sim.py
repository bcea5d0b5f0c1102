"""Planar (sagittal) quadruped-analog simulator.

The robot is a rigid base (x, z, pitch) carrying two massless 2-link legs,
front and rear. Each planar joint lumps the left/right motor pair of the
real robot. Joints carry a reflected rotor inertia so their dynamics are
well posed; the feet touch a 1-D heightfield through a penalty spring-damper
with a stick-slip Coulomb friction clamp. Integration is semi-implicit
Euler at 5 ms, four substeps per control step.

Conventions: x forward, z up, positive pitch is nose down. Hip angle is
measured from the body's downward axis, positive rotating the foot
forward; knee angle is relative to the thigh.

All state arrays are batched over environments (leading axis ``n``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields, replace

import numpy as np

GRAVITY = 9.81
BASE_MASS = 2.0
BASE_INERTIA = 0.04          # kg m^2, pitch axis (base plus lumped leg mass)
HIP_X = np.array([0.19, -0.19])  # front, rear hip offsets in the body frame
BODY_CORNERS = np.array([[0.21, -0.03], [-0.21, -0.03], [0.21, 0.02], [-0.21, 0.02]])
THIGH = 0.16
SHANK = 0.16
JOINT_ARMATURE = 0.03         # kg m^2 reflected rotor inertia per planar joint
JOINT_FRICTION = 0.01         # N m s / rad
KP = 8.0                      # per planar joint = 2 x 4 N m/rad
KD = 0.2                      # per planar joint = 2 x 0.1 N m s/rad
TORQUE_LIMIT = 2.0            # per planar joint = 2 x 1 N m
CONTACT_KN = 2000.0
CONTACT_CN = 50.0
CONTACT_KT = 1000.0
CONTACT_CT = 10.0
JOINT_LIMIT = np.pi

DT = 0.005
DECIMATION = 4
EPISODE_STEPS = 300           # 6 s at 50 Hz
COMMAND_RANGE = (-0.6, 1.0)

TERRAIN_TYPES = ("flat", "slope", "bars", "discrete_footholds", "stairs")
TERRAIN_SPACING = 0.05
TERRAIN_X0 = -6.0
TERRAIN_LENGTH = 18.0
NOISE_RANGE = (0.02, 0.07)
N_HEIGHT_SAMPLES = 9
HEIGHT_SAMPLE_SPAN = 0.4


class SimulationDiverged(FloatingPointError):
    pass


# ---------------------------------------------------------------- kinematics

def leg_fk(q_hip, q_knee):
    """Foot position relative to the hip, body frame. Returns (x, z)."""
    s = q_hip + q_knee
    x = THIGH * np.sin(q_hip) + SHANK * np.sin(s)
    z = -THIGH * np.cos(q_hip) - SHANK * np.cos(s)
    return x, z


def leg_jacobian(q_hip, q_knee):
    """d(foot x, foot z)/d(q_hip, q_knee) in the body frame; each entry batched."""
    s = q_hip + q_knee
    dxh = THIGH * np.cos(q_hip) + SHANK * np.cos(s)
    dzh = THIGH * np.sin(q_hip) + SHANK * np.sin(s)
    dxk = SHANK * np.cos(s)
    dzk = SHANK * np.sin(s)
    return dxh, dzh, dxk, dzk


def rotate(pitch, bx, bz):
    """Body-frame vector to world frame."""
    c, s = np.cos(pitch), np.sin(pitch)
    return c * bx + s * bz, -s * bx + c * bz


def foot_positions(base_x, base_z, pitch, joint_pos):
    """World foot positions, arrays of shape (..., 2) for x and z (front, rear)."""
    q = np.asarray(joint_pos)
    fx, fz = leg_fk(q[..., 0::2], q[..., 1::2])
    bx = fx + HIP_X
    wx, wz = rotate(np.asarray(pitch)[..., None], bx, fz)
    return np.asarray(base_x)[..., None] + wx, np.asarray(base_z)[..., None] + wz


# ------------------------------------------------------------------- terrain

@dataclass
class TerrainMap:
    height_samples: np.ndarray
    spacing: float = TERRAIN_SPACING
    terrain_type: str = "flat"
    difficulty_level: int = 0
    noise_amplitude: float = 0.0
    x0: float = TERRAIN_X0

    def height_at(self, x):
        return interp_height(self.height_samples[None, :], np.atleast_1d(x)[None, :], self.x0, self.spacing)[0]

    def to_csv(self, path) -> None:
        xs = self.x0 + self.spacing * np.arange(len(self.height_samples))
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["position", "height"])
            for x, h in zip(xs, self.height_samples):
                w.writerow([f"{x:.4f}", repr(float(h))])


def interp_height(maps, x, x0=TERRAIN_X0, spacing=TERRAIN_SPACING):
    """Linear interpolation of per-env heightfields. maps (n, m), x (n, k) -> (n, k)."""
    m = maps.shape[1]
    u = (x - x0) / spacing
    i0 = np.clip(np.floor(u).astype(np.int64), 0, m - 2)
    w = np.clip(u - i0, 0.0, 1.0)
    h0 = np.take_along_axis(maps, i0, axis=1)
    h1 = np.take_along_axis(maps, i0 + 1, axis=1)
    return h0 + w * (h1 - h0)


def fractal_noise(rng, n, amplitude, octaves=4):
    out = np.zeros(n)
    for k in range(octaves):
        step = max(1, 16 >> k)
        coarse = rng.uniform(-1.0, 1.0, n // step + 2)
        xs = np.arange(n) / step
        out += np.interp(xs, np.arange(len(coarse)), coarse) * 0.5 ** k
    peak = np.max(np.abs(out))
    return out * (amplitude / peak) if peak > 0 else out


def generate_terrain(terrain_type: str, difficulty_level: int, rng_seed: int) -> TerrainMap:
    """Procedural 1-D terrain; obstacle size grows monotonically with the level."""
    if terrain_type not in TERRAIN_TYPES:
        raise ValueError(f"unknown terrain type {terrain_type!r}")
    if not 0 <= int(difficulty_level) <= 9:
        raise ValueError("difficulty_level must be in 0..9")
    level = int(difficulty_level)
    s = level / 9.0
    n = int(round(TERRAIN_LENGTH / TERRAIN_SPACING)) + 1
    xs = TERRAIN_X0 + TERRAIN_SPACING * np.arange(n)
    h = np.zeros(n)
    if terrain_type == "flat":
        return TerrainMap(h, terrain_type="flat", difficulty_level=level, noise_amplitude=0.0)

    rng = np.random.default_rng([int(rng_seed), TERRAIN_TYPES.index(terrain_type), level])
    d = np.abs(xs)
    start = 0.5  # keep the spawn patch flat
    if terrain_type == "slope":
        angle = 0.05 + 0.35 * s
        period = 3.0
        tri = np.abs(((d - start) % period) - period / 2)
        h = np.where(d > start, np.tan(angle) * (period / 2 - tri), 0.0)
    elif terrain_type == "bars":
        bar_h = 0.02 + 0.08 * s
        phase = (d - start) % 0.6
        h = np.where((d > start) & (phase < 0.1), bar_h, 0.0)
    elif terrain_type == "discrete_footholds":
        gap = 0.02 + 0.12 * s
        phase = (d - start) % 0.4
        h = np.where((d > start) & (phase < gap), -0.15, 0.0)
    elif terrain_type == "stairs":
        rise = 0.02 + 0.08 * s
        tread = 0.3
        h = np.where(xs > start, rise * np.ceil((xs - start) / tread), 0.0)
    amp = NOISE_RANGE[0] + (NOISE_RANGE[1] - NOISE_RANGE[0]) * s
    noise = fractal_noise(rng, n, amp)
    noise[d <= start] = 0.0
    return TerrainMap(h + noise, terrain_type=terrain_type, difficulty_level=level, noise_amplitude=amp)


def max_step_rise(terrain: TerrainMap) -> float:
    return float(np.max(np.abs(np.diff(terrain.height_samples))))


# ------------------------------------------------------- domain randomization

@dataclass
class DomainRandomization:
    friction_coeff: np.ndarray
    payload_kg: np.ndarray
    com_shift: np.ndarray          # (n, 2): body-frame x, z
    push_velocity: np.ndarray
    push_interval_s: float
    actuation_delay_s: np.ndarray
    pd_stiffness_mult: np.ndarray
    pd_damping_mult: np.ndarray

    def subset(self, idx) -> "DomainRandomization":
        kw = {}
        for f in fields(self):
            v = getattr(self, f.name)
            kw[f.name] = v if np.isscalar(v) else v[idx]
        return DomainRandomization(**kw)


RANDOMIZATION_RANGES = {
    "friction_coeff": (0.5, 1.25),
    "payload_kg": (-0.5, 0.25),
    "com_shift": (-0.02, 0.05),
    "push_velocity": (-0.1, 0.1),
    "actuation_delay_s": (0.0, 0.015),
    "pd_stiffness_mult": (0.8, 1.2),
    "pd_damping_mult": (0.8, 1.2),
}
PUSH_INTERVAL_S = 5.0


def nominal_randomization(n: int) -> DomainRandomization:
    return DomainRandomization(
        friction_coeff=np.ones(n), payload_kg=np.zeros(n), com_shift=np.zeros((n, 2)),
        push_velocity=np.zeros(n), push_interval_s=PUSH_INTERVAL_S,
        actuation_delay_s=np.zeros(n), pd_stiffness_mult=np.ones(n), pd_damping_mult=np.ones(n))


def sample_randomization(rng: np.random.Generator, n: int = 1, ranges=None) -> DomainRandomization:
    r = dict(RANDOMIZATION_RANGES)
    if ranges:
        r.update(ranges)
    u = lambda key, shape: rng.uniform(r[key][0], r[key][1], shape)
    return DomainRandomization(
        friction_coeff=u("friction_coeff", n),
        payload_kg=u("payload_kg", n),
        com_shift=u("com_shift", (n, 2)),
        push_velocity=u("push_velocity", n),
        push_interval_s=PUSH_INTERVAL_S,
        actuation_delay_s=u("actuation_delay_s", n),
        pd_stiffness_mult=u("pd_stiffness_mult", n),
        pd_damping_mult=u("pd_damping_mult", n),
    )


def sample_command(rng: np.random.Generator, n: int = 1, command_range=COMMAND_RANGE) -> np.ndarray:
    """Target forward velocities in m/s."""
    return rng.uniform(command_range[0], command_range[1], n)


# --------------------------------------------------------------------- state

@dataclass
class RobotState:
    base_x: np.ndarray
    base_z: np.ndarray
    pitch: np.ndarray
    base_vx: np.ndarray
    base_vz: np.ndarray
    pitch_rate: np.ndarray
    joint_pos: np.ndarray       # (n, 4): front hip, front knee, rear hip, rear knee
    joint_vel: np.ndarray
    # simulator internals
    delay_buffer: np.ndarray = None   # (n, 3, 4) targets issued in the last 3 substeps
    anchor_x: np.ndarray = None       # (n, 2) stick anchors
    in_contact: np.ndarray = None     # (n, 2) bool
    substep: np.ndarray = None        # (n,) int substeps since reset
    torque: np.ndarray = None         # (n, 4) last applied torque
    contact_force: np.ndarray = None  # (n, 2, 2) last foot forces (fx, fz)

    def __post_init__(self):
        n = len(self.base_x)
        if self.delay_buffer is None:
            self.delay_buffer = np.repeat(np.asarray(self.joint_pos, float)[:, None, :], 3, axis=1)
        if self.anchor_x is None:
            self.anchor_x = np.zeros((n, 2))
        if self.in_contact is None:
            self.in_contact = np.zeros((n, 2), dtype=bool)
        if self.substep is None:
            self.substep = np.zeros(n, dtype=np.int64)
        if self.torque is None:
            self.torque = np.zeros((n, 4))
        if self.contact_force is None:
            self.contact_force = np.zeros((n, 2, 2))

    @property
    def n(self) -> int:
        return len(self.base_x)

    def copy(self) -> "RobotState":
        return RobotState(**{f.name: np.array(getattr(self, f.name), copy=True) for f in fields(self)})

    def take(self, idx) -> "RobotState":
        return RobotState(**{f.name: np.array(getattr(self, f.name))[idx] for f in fields(self)})

    def put(self, idx, other: "RobotState") -> None:
        for f in fields(self):
            getattr(self, f.name)[idx] = getattr(other, f.name)

    def is_finite(self) -> np.ndarray:
        ok = np.ones(self.n, dtype=bool)
        for name in ("base_x", "base_z", "pitch", "base_vx", "base_vz", "pitch_rate"):
            ok &= np.isfinite(getattr(self, name))
        ok &= np.all(np.isfinite(self.joint_pos), axis=1) & np.all(np.isfinite(self.joint_vel), axis=1)
        return ok


def make_state(base_x, base_z, pitch, joint_pos, base_vx=None, base_vz=None, pitch_rate=None, joint_vel=None):
    base_x = np.atleast_1d(np.asarray(base_x, dtype=float))
    n = len(base_x)
    z = np.zeros(n)
    bc = lambda v: np.broadcast_to(np.asarray(v, float), (n,)).copy()
    jp = np.broadcast_to(np.asarray(joint_pos, float), (n, 4)).copy()
    return RobotState(
        base_x=base_x.copy(), base_z=bc(base_z), pitch=bc(pitch),
        base_vx=z.copy() if base_vx is None else bc(base_vx),
        base_vz=z.copy() if base_vz is None else bc(base_vz),
        pitch_rate=z.copy() if pitch_rate is None else bc(pitch_rate),
        joint_pos=jp,
        joint_vel=np.zeros((n, 4)) if joint_vel is None else np.broadcast_to(np.asarray(joint_vel, float), (n, 4)).copy(),
    )


@dataclass
class SimParams:
    dt: float = DT
    gravity: float = GRAVITY
    kp: float = KP
    kd: float = KD
    torque_limit: float = TORQUE_LIMIT
    contact: bool = True
    torque_override: np.ndarray | None = None   # fixed torques bypassing the PD loop


@dataclass
class StepInfo:
    collision: np.ndarray
    diverged: np.ndarray
    contact: np.ndarray           # (n, 2) bool, any contact during the step
    foot_force: np.ndarray        # (n, 2, 2) at last substep
    foot_vx: np.ndarray           # (n, 2) foot tangential speed at last substep
    torque: np.ndarray            # (n, 4) at last substep


def _substep(st: RobotState, target, maps, rnd: DomainRandomization, prm: SimParams):
    dt = prm.dt
    n = st.n
    q, qd = st.joint_pos, st.joint_vel
    # delay buffer: apply target issued `delay` substeps ago
    delay = np.minimum((rnd.actuation_delay_s / dt + 1e-9).astype(np.int64), 3)
    hist = np.concatenate([st.delay_buffer, target[:, None, :]], axis=1)  # (n, 4, 4), last = newest
    applied = hist[np.arange(n), 3 - delay]
    st.delay_buffer = hist[:, 1:]

    if prm.torque_override is not None:
        tau = np.broadcast_to(prm.torque_override, (n, 4)).astype(float)
    else:
        tau = prm.kp * rnd.pd_stiffness_mult[:, None] * (applied - q) - prm.kd * rnd.pd_damping_mult[:, None] * qd
        tau = np.clip(tau, -prm.torque_limit, prm.torque_limit)

    qh, qk = q[:, 0::2], q[:, 1::2]
    qdh, qdk = qd[:, 0::2], qd[:, 1::2]
    fbx, fbz = leg_fk(qh, qk)
    fbx = fbx + HIP_X
    th = st.pitch[:, None]
    c, s = np.cos(th), np.sin(th)
    rx, rz = c * fbx + s * fbz, -s * fbx + c * fbz
    px = st.base_x[:, None] + rx
    pz = st.base_z[:, None] + rz
    dxh, dzh, dxk, dzk = leg_jacobian(qh, qk)
    vbx = dxh * qdh + dxk * qdk
    vbz = dzh * qdh + dzk * qdk
    w = st.pitch_rate[:, None]
    # d/dt R(theta) b = w * R'(theta) b,  R' = [[-s, c], [-c, -s]]
    vx = st.base_vx[:, None] + w * (-s * fbx + c * fbz) + c * vbx + s * vbz
    vz = st.base_vz[:, None] + w * (-c * fbx - s * fbz) - s * vbx + c * vbz

    fx = np.zeros((n, 2))
    fz = np.zeros((n, 2))
    contact = np.zeros((n, 2), dtype=bool)
    if prm.contact:
        ground = interp_height(maps, px)
        pen = ground - pz
        contact = pen > 0.0
        fz = np.where(contact, np.maximum(CONTACT_KN * pen - CONTACT_CN * vz, 0.0), 0.0)
        anchor = np.where(contact & ~st.in_contact, px, st.anchor_x)
        ft = -CONTACT_KT * (px - anchor) - CONTACT_CT * vx
        lim = rnd.friction_coeff[:, None] * fz
        slip = np.abs(ft) > lim
        ft = np.where(slip, np.sign(ft) * lim, ft)
        anchor = np.where(slip, px + (ft + CONTACT_CT * vx) / CONTACT_KT, anchor)
        fx = np.where(contact, ft, 0.0)
        st.anchor_x = np.where(contact, anchor, 0.0)
    st.in_contact = contact

    # joint torques from foot forces: J^T R^T f
    fbx_f = c * fx - s * fz
    fbz_f = s * fx + c * fz
    tau_c = np.empty((n, 4))
    tau_c[:, 0::2] = dxh * fbx_f + dzh * fbz_f
    tau_c[:, 1::2] = dxk * fbx_f + dzk * fbz_f
    qdd = (tau + tau_c - JOINT_FRICTION * qd) / JOINT_ARMATURE
    qd_new = qd + dt * qdd
    q_new = q + dt * qd_new
    hit = np.abs(q_new) > JOINT_LIMIT
    q_new = np.clip(q_new, -JOINT_LIMIT, JOINT_LIMIT)
    qd_new = np.where(hit, 0.0, qd_new)

    mass = BASE_MASS + rnd.payload_kg
    cx, cz = rotate(st.pitch, rnd.com_shift[:, 0], rnd.com_shift[:, 1])
    moment = np.sum(rz * fx - rx * fz, axis=1) + cx * mass * prm.gravity
    ax = np.sum(fx, axis=1) / mass
    az = np.sum(fz, axis=1) / mass - prm.gravity
    alpha = moment / BASE_INERTIA

    st.base_vx = st.base_vx + dt * ax
    st.base_vz = st.base_vz + dt * az
    st.pitch_rate = st.pitch_rate + dt * alpha
    st.base_x = st.base_x + dt * st.base_vx
    st.base_z = st.base_z + dt * st.base_vz
    st.pitch = st.pitch + dt * st.pitch_rate
    st.joint_pos, st.joint_vel = q_new, qd_new
    st.torque = tau
    st.contact_force = np.stack([fx, fz], axis=-1)
    st.substep = st.substep + 1

    # periodic pushes
    period = int(round(rnd.push_interval_s / dt))
    push = (st.substep % period) == 0
    st.base_vx = st.base_vx + np.where(push, rnd.push_velocity, 0.0)
    return contact, vx


def body_collision(st: RobotState, maps) -> np.ndarray:
    cx, cz = rotate(st.pitch[:, None], BODY_CORNERS[:, 0], BODY_CORNERS[:, 1])
    px = st.base_x[:, None] + cx
    pz = st.base_z[:, None] + cz
    return np.any(pz < interp_height(maps, px), axis=1)


def step(state: RobotState, joint_targets, terrain, randomization: DomainRandomization,
         dt: float = DT, decimation: int = DECIMATION, params: SimParams | None = None):
    """Advance one control step. Returns ``(next_state, StepInfo)``; the input state is untouched.

    ``terrain`` is a TerrainMap (shared by all envs) or an (n, m) array of heightfields.
    """
    prm = params or SimParams()
    if dt != prm.dt:
        prm = replace(prm, dt=dt)
    targets = np.asarray(joint_targets, dtype=float)
    targets = np.broadcast_to(targets, (state.n, 4))
    if not np.all(np.isfinite(targets)):
        raise ValueError("joint targets must be finite")
    maps = terrain.height_samples[None, :].repeat(state.n, 0) if isinstance(terrain, TerrainMap) else terrain
    st = state.copy()
    any_contact = np.zeros((st.n, 2), dtype=bool)
    collision = np.zeros(st.n, dtype=bool)
    with np.errstate(all="ignore"):
        for _ in range(decimation):
            contact, foot_vx = _substep(st, targets, maps, randomization, prm)
            any_contact |= contact
            collision |= body_collision(st, maps)
    diverged = ~st.is_finite()
    info = StepInfo(collision=collision & ~diverged, diverged=diverged, contact=any_contact,
                    foot_force=st.contact_force.copy(), foot_vx=foot_vx, torque=st.torque.copy())
    return st, info


# --------------------------------------------------------------- curriculum

PROMOTE_AT = 0.8
DEMOTE_AT = 0.4


def update_curriculum(level: int, progress: float) -> int:
    """Promote on >= 80% of the commanded distance, demote below 40%, clamp to 0..9."""
    if not 0 <= level <= 9:
        raise ValueError("level must be in 0..9")
    if progress >= PROMOTE_AT:
        level += 1
    elif progress < DEMOTE_AT:
        level -= 1
    return int(min(max(level, 0), 9))


def traversal_progress(distance: float, command: float, duration: float, collided: bool) -> float:
    """Fraction of the commanded distance covered along the command direction."""
    target = abs(command) * duration
    if collided:
        return 0.0 if target < 0.1 else min(max(distance * np.sign(command) / target, 0.0), 1.0)
    if target < 0.1:
        return 1.0
    return float(min(max(distance * np.sign(command) / target, 0.0), 1.0))
