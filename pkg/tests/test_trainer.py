import csv

import numpy as np
import pytest

from kiras import Trainer, evaluate, replay
from kiras.checkpoint import encode, load
from kiras.keyframes import builtin_keyframes, keyframe_frame, keyframe_from_posture, onehot
from kiras.self_imitation import cosine_similarity, dtw_distance
from kiras.trainer import TrainingAborted, parse_script

from conftest import tiny_config


def read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    tr = Trainer(tiny_config(out))
    tr.train(iterations=10, out_dir=str(out), checkpoint_every=4)
    return tr, out


def test_metrics_schedule(trained):
    tr, out = trained
    rows = read_csv(out / "metrics.csv")
    assert len(rows) == 10
    for r in rows:
        t = int(r["iteration"])
        w1, w2 = float(r["omega1"]), float(r["omega2"])
        assert w1 + w2 == 1.0
        if t < 6:
            assert r["stage"] == "1" and float(r["r_res"]) == 0.0
        else:
            assert r["stage"] == "2" and w1 == 1.0 and float(r["r_SI"]) == 0.0
    assert float(rows[0]["omega1"]) == pytest.approx(0.2)
    assert tr.flat_actor is not None
    for col in ("rew_tracking_lin_vel", "p_skill4", "eps_skill0", "disc_loss", "ece_loss", "level_stairs", "vel_rmse"):
        assert col in rows[0]


def test_checkpoints_written(trained):
    tr, out = trained
    assert (out / "ckpt_000004.kira").exists() and (out / "ckpt_000008.kira").exists()
    assert (out / "last.kira").exists()


def test_determinism_and_resume(tmp_path):
    a = Trainer(tiny_config(tmp_path / "a"))
    a.train(iterations=6, out_dir=str(tmp_path / "a"), checkpoint_every=3)
    b = Trainer(tiny_config(tmp_path / "b"))
    b.train(iterations=6, out_dir=str(tmp_path / "b"), checkpoint_every=3)
    assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()
    sec = load(tmp_path / "a/ckpt_000003.kira")
    r = Trainer.from_sections(sec)
    assert encode(r.state_sections()) == encode(sec)
    (tmp_path / "c").mkdir()
    r.metrics_path = str(tmp_path / "c/metrics.csv")
    r.train(iterations=3, out_dir=str(tmp_path / "c"), checkpoint_every=0)
    full = (tmp_path / "a/metrics.csv").read_text().splitlines()
    resumed = (tmp_path / "c/metrics.csv").read_text().splitlines()
    assert resumed[1:] == full[4:7]


def test_evaluate_report(trained):
    tr, _ = trained
    rep = evaluate(tr, 0, n_episodes=2, steps=20)
    for key in ("mean_base_height", "mean_pitch_deg", "cosine_similarity", "dtw", "success_rate"):
        assert np.isfinite(rep[key])
    rep = evaluate(tr, 0, n_episodes=2, steps=20, terrain="stairs", level=9)
    assert 0.0 <= rep["success_rate"] <= 1.0
    # the reference itself scores perfectly under both metrics
    ref = np.repeat(keyframe_frame(builtin_keyframes()[0], 5)[None], 10, 0)
    assert cosine_similarity(ref, ref) == pytest.approx(1.0) and dtw_distance(ref, ref) == 0.0


def test_replay_switches_and_is_deterministic(trained, tmp_path):
    tr, _ = trained
    script = tmp_path / "s.txt"
    script.write_text("# time skill vx\n0.0 0 0.3\n3.0, 1, 0.0\n")
    replay(tr, script, tmp_path / "a.csv", hold_s=1.0)
    replay(tr, script, tmp_path / "b.csv", hold_s=1.0)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = read_csv(tmp_path / "a.csv")
    assert len(rows) == 200
    switch = [r["skill"] for r in rows]
    first_crawl = switch.index("1")
    assert rows[first_crawl]["time"] == "3.02"  # the row recorded after the first step taken with the new skill
    assert set(switch[:first_crawl]) == {"0"} and set(switch[first_crawl:]) == {"1"}
    single = tmp_path / "one.txt"
    single.write_text("0 2 0.1\n")
    replay(tr, single, tmp_path / "c.csv", hold_s=0.5)
    assert {r["skill"] for r in read_csv(tmp_path / "c.csv")} == {"2"}


def test_script_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("0 0 0.1\n1.0 walk 0.2\n")
    with pytest.raises(ValueError, match="line 2"):
        parse_script(p)
    p.write_text("0 0\n")
    with pytest.raises(ValueError, match="line 1"):
        parse_script(p)


def test_add_skill_preserves_old_outputs(tmp_path):
    tr = Trainer(tiny_config(tmp_path))
    tr.train(iterations=3, out_dir=str(tmp_path), checkpoint_every=0)
    obs, skills = tr.obs, tr.env.skill.copy()
    actor_out = tr.ppo.actor.mean(tr.actor_input(obs, skills))
    values = tr.ppo.values(obs.priv)
    f = tr.normalizer(obs.frame)
    d = tr.disc.score(f, f)
    tr.add_skill(keyframe_from_posture(5, 0.25, 0.0, "tall"), 4, 2)
    ins = lambda a, at: np.insert(a, at, 0.0, axis=-1)
    ctx = tr.ece.context(ins(obs.history, 7), onehot(skills, 6))
    new_in = np.concatenate([ins(obs.prop, 7), ctx], axis=1)
    np.testing.assert_array_equal(tr.ppo.actor.mean(new_in), actor_out)
    for a, b in zip(tr.ppo.values(ins(obs.priv, 7)), values):
        np.testing.assert_array_equal(a, b)
    f2 = tr.normalizer(ins(obs.frame, 6))
    np.testing.assert_array_equal(tr.disc.score(f2, f2), d)
    assert len(tr.buffer.trajectories(5)) == 1
    assert tr.n_skills == 6 and tr.stage() == 1
    with pytest.raises(ValueError):
        Trainer(tiny_config(tmp_path / "x")).add_skill(keyframe_from_posture(5, 0.25, 0.0), 0, 5)
    tr.train(out_dir=str(tmp_path / "ext"), checkpoint_every=0)
    assert tr.iteration == 3 + 6


def test_nan_aborts_with_last_checkpoint(tmp_path):
    tr = Trainer(tiny_config(tmp_path))
    tr.train(iterations=2, out_dir=str(tmp_path), checkpoint_every=2)
    tr.ppo.task_critic.weights[0][:] = np.nan
    with pytest.raises(TrainingAborted):
        tr.train(iterations=2, out_dir=str(tmp_path), checkpoint_every=2)
    assert (tmp_path / "ckpt_000002.kira").exists()
