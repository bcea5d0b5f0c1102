# coding: utf-8

# # Keyframes and the planar robot
#
# Each skill is defined by one pose: base height, body pitch and the four planar
# joint angles (hip and knee of the front and rear leg pairs). When only height
# and pitch are given, the joint angles come from leg inverse kinematics with the
# feet placed under the hips.

import numpy as np

from kiras import builtin_keyframes, sim
from kiras.keyframes import foot_residual, keyframe_from_posture, OutOfWorkspace

kfs = builtin_keyframes()
for kf in kfs:
    print(f"{kf.name:11s} height {kf.base_height:.2f} m  pitch {np.degrees(kf.pitch):6.1f} deg  "
          f"joints {np.round(kf.joint_pos, 3)}  foot residual {foot_residual(kf):.1e}")

# A height the legs cannot reach is rejected up front.

try:
    keyframe_from_posture(5, 0.40, 0.0, "too_tall")
except OutOfWorkspace as e:
    print("rejected:", e)

# ## Holding a pose
#
# Drop every keyframe pose on flat ground and hold the PD targets at the keyframe
# angles for two seconds. A well-posed keyframe should stay put.

flat = sim.generate_terrain("flat", 0, 0)
state = sim.make_state(np.zeros(len(kfs)), [k.base_height for k in kfs], [k.pitch for k in kfs],
                       np.array([k.joint_pos for k in kfs]))
targets = state.joint_pos.copy()
rnd = sim.nominal_randomization(len(kfs))
for _ in range(100):
    state, info = sim.step(state, targets, flat, rnd)
for kf, z, p in zip(kfs, state.base_z, state.pitch):
    print(f"{kf.name:11s} after 2 s: height {z:.3f} (target {kf.base_height:.3f}), pitch {np.degrees(p):5.1f} deg")

# ## Terrain
#
# Five terrain families at levels 0 to 9. The profile is a 1-D heightfield; the
# largest rise between neighbouring samples grows with the level.

for t in sim.TERRAIN_TYPES:
    rises = [sim.max_step_rise(sim.generate_terrain(t, lvl, 0)) for lvl in (0, 5, 9)]
    print(f"{t:19s} max rise at levels 0/5/9: {np.round(rises, 3)}")
