import json
import math

import numpy as np
import pytest

from kiras import sim
from kiras.env import VecEnv, observe
from kiras.keyframes import (BUILTIN_SKILLS, Keyframe, OutOfWorkspace, builtin_keyframes, foot_residual, frame_dim,
                             keyframe_frame, keyframe_from_posture, keyframe_trajectory, leg_ik, load_keyframes,
                             make_frame, onehot, phi, save_keyframes)
from kiras.self_imitation import dtw_distance

# posture targets of the five skills (base height in m, pitch in degrees)
PAPER_TABLE = {"walk": (0.20, 0.0), "crawl": (0.10, 0.0), "stilt": (0.30, 0.0),
               "pitch_up": (0.20, -15.0), "pitch_down": (0.20, 15.0)}


def test_builtin_postures_match_the_skill_table():
    kfs = builtin_keyframes()
    assert [k.name for k in kfs] == list(PAPER_TABLE)
    for i, k in enumerate(kfs):
        h, p = PAPER_TABLE[k.name]
        assert k.skill_index == i
        assert abs(k.base_height - h) < 1e-3
        assert abs(math.degrees(k.pitch) - p) < 0.1
        assert foot_residual(k) < 1e-3


def test_full_extension_is_zero_angles():
    k = keyframe_from_posture(0, sim.THIGH + sim.SHANK, 0.0)
    np.testing.assert_allclose(k.joint_pos, 0.0, atol=1e-7)


def test_crawl_fk_round_trip():
    k = keyframe_from_posture(1, 0.10, 0.0)
    assert foot_residual(k) < 1e-6
    # independent check: law of cosines on the hip-foot distance
    hip, knee = k.joint_pos[0], k.joint_pos[1]
    x, z = sim.leg_fk(hip, knee)
    assert math.hypot(x, z) == pytest.approx(0.10, abs=1e-12)
    assert x == pytest.approx(0.0, abs=1e-12)
    assert knee > 0  # knee-backward branch


def test_pitched_keyframe_feet_on_ground():
    for k in builtin_keyframes()[3:]:
        _, fz = sim.foot_positions(0.0, k.base_height, k.pitch, k.as_array())
        np.testing.assert_allclose(fz, 0.0, atol=1e-9)


def test_unreachable_posture_rejected():
    with pytest.raises(OutOfWorkspace):
        keyframe_from_posture(0, 0.5, 0.0)
    with pytest.raises(OutOfWorkspace):
        leg_ik(-0.1)


def test_keyframe_trajectory():
    k = builtin_keyframes()[2]
    tr = keyframe_trajectory(k, 5, 5)
    assert tr.shape == (5, frame_dim(5))
    assert np.all(tr == tr[0])
    np.testing.assert_array_equal(tr[0], keyframe_frame(k, 5))
    assert dtw_distance(tr, tr) == 0.0
    with pytest.raises(ValueError):
        keyframe_trajectory(k, 1, 5)


def test_frame_layout():
    f = make_frame(0.1, onehot(2, 5), [1, 2, 3, 4], 0.2)
    np.testing.assert_array_equal(f, [0.1, 0, 0, 1, 0, 0, 1, 2, 3, 4, 0.2])
    np.testing.assert_array_equal(onehot(2, 5), [0, 0, 1, 0, 0])


def test_phi_round_trip_and_ignores_velocities():
    kfs = builtin_keyframes()
    k = kfs[3]
    st = sim.make_state(0.0, k.base_height, k.pitch, k.as_array())
    maps = np.zeros((1, 361))
    b1 = observe(st, 0.2, onehot(3, 5)[None], maps, np.zeros(4), kfs[0].as_array())
    np.testing.assert_allclose(phi(b1)[0], keyframe_frame(k, 5), atol=1e-15)
    st.joint_vel[:] = 3.0
    st.base_vx[:] = 1.0
    b2 = observe(st, 0.2, onehot(3, 5)[None], maps, np.zeros(4), kfs[0].as_array())
    np.testing.assert_array_equal(phi(b1), phi(b2))
    b0 = observe(st, 0.2, onehot(0, 5)[None], maps, np.zeros(4), kfs[0].as_array())
    np.testing.assert_array_equal(phi(b0)[0, 1:6], [1, 0, 0, 0, 0])


def test_load_keyframes_yaml_and_json(tmp_path):
    (tmp_path / "k.yaml").write_text("skills:\n  - name: tall\n    base_height: 0.25\n    pitch_deg: 5\n")
    (k,) = load_keyframes(tmp_path / "k.yaml", start_index=5)
    assert k.skill_index == 5 and k.name == "tall"
    assert k.pitch == pytest.approx(math.radians(5))
    assert foot_residual(k) < 1e-6
    save_keyframes(tmp_path / "k.json", builtin_keyframes())
    again = load_keyframes(tmp_path / "k.json")
    assert again == builtin_keyframes()


def test_load_keyframes_rejects_floating_feet(tmp_path):
    bad = [{"name": "x", "joint_pos": [0, 0, 0, 0], "base_height": 0.2, "pitch": 0.0}]
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    with pytest.raises(OutOfWorkspace):
        load_keyframes(tmp_path / "bad.json")
    (tmp_path / "far.json").write_text(json.dumps([{"name": "y", "base_height": 0.5, "pitch_deg": 0}]))
    with pytest.raises(OutOfWorkspace):
        load_keyframes(tmp_path / "far.json")
