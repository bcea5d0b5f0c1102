# coding: utf-8

# # Self-imitation building blocks
#
# Rollouts are compared to a skill's keyframe in a small imitation space: pitch,
# skill one-hot, joint angles and base height. A rollout segment is scored by its
# accumulated task reward minus its DTW distance to the (constant) keyframe
# trajectory. Segments that beat the running best join a premium buffer, which a
# least-squares GAN discriminator treats as real data.

import numpy as np

from kiras import builtin_keyframes
from kiras.keyframes import keyframe_trajectory
from kiras.self_imitation import Discriminator, PremiumBuffer, cosine_similarity, dtw_distance, score_trajectory, sil_reward

rng = np.random.default_rng(0)
T, N = 20, 5
kf = builtin_keyframes()[1]
ref = keyframe_trajectory(kf, T, N)

close = ref + rng.normal(0, 0.02, ref.shape)
far = ref + rng.normal(0, 0.3, ref.shape)
for name, traj in (("close", close), ("far", far)):
    print(f"{name}: DTW {dtw_distance(traj, ref):.3f}  cosine {cosine_similarity(traj, ref):.4f}")

# ## Premium buffer
#
# The keyframe trajectory is always the first entry. A candidate needs a strictly
# better score than everything admitted so far.

buf = PremiumBuffer([ref], capacity=4)
for name, traj in (("far", far), ("close", close), ("far again", far)):
    s = score_trajectory(traj, ref, np.full(T, 0.05))
    print(f"{name:9s} score {s:7.3f} admitted {buf.maybe_admit(0, traj, s)}  best {buf.best_score(0):.3f}")

# ## Discriminator and reward
#
# Real transitions come from the buffer, fake ones from the policy. The reward
# maps the score so that D = 1 (looks real) gives 1 and D = -1 gives 0.

disc = Discriminator(ref.shape[1], hidden=(32, 32), rng=rng, lr=3e-3)
real_prev, real_cur = buf.sample_transitions(np.zeros(256, dtype=int), rng)
fake = far[rng.integers(1, T, 256)]
for it in range(300):
    loss = disc.update(real_prev, real_cur, fake, fake)
    if it % 100 == 0:
        print(f"update {it}: loss {loss:.4f}")
print("reward on buffer data", disc.reward(real_prev, real_cur).mean().round(3),
      "| on far data", disc.reward(fake, fake).mean().round(3))
print("reward curve at D = -1, 0, 1, 2, 3:", sil_reward(np.array([-1.0, 0.0, 1.0, 2.0, 3.0])))
