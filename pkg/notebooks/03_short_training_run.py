# coding: utf-8

# # A short training run
#
# A shrunken config (8 envs, small networks, 20 stage-1 and 10 stage-2 iterations)
# runs in well under a minute. It does not learn much, but it touches every part
# of the loop: premium admission, discriminator and estimator updates, the skill
# sampler, the switch to terrain finetuning, checkpoints, evaluation, replay and
# adding a new skill. The desk preset (`kiras train`) is the real thing.

import csv
import tempfile
from pathlib import Path

import numpy as np

from kiras import Trainer, evaluate, preset, replay
from kiras.keyframes import keyframe_from_posture

out = Path(tempfile.mkdtemp(prefix="kiras_demo_"))
cfg = preset("desk", seed=1, num_envs=8, horizon=16, t1=20, t2=30, premium_T=10, out_dir=str(out),
             hidden=(32, 32), disc_hidden=(32, 32), enc_hidden=(32, 32), dec_hidden=(32, 32))
tr = Trainer(cfg)
tr.train(out_dir=str(out), checkpoint_every=10)

with open(out / "metrics.csv") as f:
    rows = list(csv.DictReader(f))
for r in rows[::5]:
    probs = [round(float(r[f"p_skill{s}"]), 3) for s in range(5)]
    print(f"it {r['iteration']:>3} stage {r['stage']} omega1 {float(r['omega1']):.2f} "
          f"r_c {float(r['r_c']):.3f} r_SI {float(r['r_SI']):.3f} p {probs}")

# ## Evaluation
#
# Deterministic mean actions, starting from the exact keyframe pose on flat ground.

for s, kf in enumerate(tr.keyframes):
    rep = evaluate(tr, s, n_episodes=2, steps=60)
    print(f"{kf.name:11s} height {rep['mean_base_height']:.3f}/{kf.base_height:.3f}  "
          f"pitch {rep['mean_pitch_deg']:6.1f}/{np.degrees(kf.pitch):5.1f}  cosine {rep['cosine_similarity']:.3f}")

# ## Scripted replay
#
# Walk, switch to crawl at 1 s, then stilt at 2 s.

script = out / "script.txt"
script.write_text("0.0 0 0.3\n1.0 1 0.2\n2.0 2 0.0\n")
replay(tr, script, out / "replay.csv", hold_s=1.0)
with open(out / "replay.csv") as f:
    rep_rows = list(csv.DictReader(f))
for r in rep_rows[::25]:
    print(f"t {r['time']:>5}  skill {r['skill']}  height {float(r['base_height']):.3f}")

# ## Adding a skill
#
# The new one-hot slot enters every network through zero-initialised weights, so
# the old skills behave exactly as before until training resumes.

tr.add_skill(keyframe_from_posture(5, 0.25, 0.0, "tall"), 10, 5)
print("skills now:", [k.name for k in tr.keyframes], "| next stage boundaries", tr.t1, tr.t2)
tr.train(out_dir=str(out / "tall"), checkpoint_every=0)
print("finished at iteration", tr.iteration, "- outputs in", out)
