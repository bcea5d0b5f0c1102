import numpy as np
import pytest

from kiras import rewards as R


def inputs(n=3, **kw):
    base = dict(base_vx=np.zeros(n), pitch_rate=np.zeros(n), command=np.zeros(n), action=np.zeros((n, 4)),
                prev_action=np.zeros((n, 4)), torque=np.zeros((n, 4)), prev_torque=np.zeros((n, 4)),
                joint_vel=np.zeros((n, 4)), prev_joint_vel=np.zeros((n, 4)), joint_pos=np.zeros((n, 4)),
                default_joint_pos=np.zeros(4), foot_force=np.zeros((n, 2, 2)), foot_vx=np.zeros((n, 2)),
                contact=np.zeros((n, 2), bool))
    base.update(kw)
    return R.RewardInputs(**base)


def test_coefficients_match_the_reward_table():
    assert R.REG_COEFFS["tracking_lin_vel"] == 1.0
    assert R.REG_COEFFS["tracking_ang_vel"] == 0.5
    assert R.REG_COEFFS["action_rate"] == -0.2
    assert R.REG_COEFFS["torques"] == -2.5e-5
    assert R.REG_COEFFS["delta_torques"] == -1e-3
    assert R.REG_COEFFS["feet_contact_forces"] == -1.0
    assert R.REG_COEFFS["feet_drag"] == 0.5
    assert R.REG_COEFFS["joint_acc"] == -1.25e-8
    assert R.REG_COEFFS["stand_still"] == -0.2
    assert R.COLLISION_PENALTY == -0.5
    assert R.RESIDUAL_COEFF == 0.15


def test_zero_inputs():
    t = R.regularization_reward(inputs())
    assert t["tracking_lin_vel"][0] == 1.0
    assert t["tracking_ang_vel"][0] == 0.5
    for k in ("torques", "delta_torques", "action_rate", "joint_acc", "feet_drag", "feet_contact_forces", "ang_vel"):
        assert np.all(t[k] == 0.0), k


def test_term_forms():
    a = np.array([[1.0, 0.0, 0.0, 0.0]] * 2)
    inp = inputs(2, command=np.array([0.5, 0.5]), base_vx=np.array([0.0, 0.5]), action=a,
                 torque=np.full((2, 4), 2.0), prev_torque=np.full((2, 4), 1.0),
                 foot_force=np.array([[[0, 40.0], [0, 10.0]]] * 2),
                 foot_vx=np.array([[0.2, -0.3]] * 2), contact=np.array([[True, False]] * 2))
    t = R.regularization_reward(inp)
    assert t["tracking_lin_vel"][0] == pytest.approx(np.exp(-0.25 / 0.25))
    assert t["tracking_lin_vel"][1] == 1.0
    assert t["action_rate"][0] == pytest.approx(-0.2)
    assert t["torques"][0] == pytest.approx(-2.5e-5 * 16)
    assert t["delta_torques"][0] == pytest.approx(-1e-3 * 4)
    assert t["feet_contact_forces"][0] == pytest.approx(-10.0)
    # drag only counts feet in contact, and is a penalty
    assert t["feet_drag"][0] == pytest.approx(-0.5 * 0.2)
    # stand_still only below 0.1 m/s command
    assert np.all(t["stand_still"] == 0.0)


def test_stand_still_uses_the_given_reference():
    ref = np.array([[0.1, 0.2, 0.3, 0.4], [0.0, 0.0, 0.0, 0.0]])
    inp = inputs(2, joint_pos=np.array([[0.1, 0.2, 0.3, 0.4], [0.3, 0.0, 0.4, 0.0]]), default_joint_pos=ref)
    t = R.regularization_reward(inp)
    assert t["stand_still"][0] == 0.0
    assert t["stand_still"][1] == pytest.approx(-0.2 * 0.5)


def test_termination_penalty():
    np.testing.assert_array_equal(R.termination_penalty([False, True]), [0.0, -0.5])


def test_residual_reward_branches(rng):
    a = rng.standard_normal((4, 4))
    b = rng.standard_normal((4, 4))
    np.testing.assert_array_equal(R.residual_reward(a, b, 5, 10), 0.0)
    np.testing.assert_array_equal(R.residual_reward(a, a, 10, 10), 0.0)
    unit = np.array([[0.0, 1.0, 0.0, 0.0]])
    assert R.residual_reward(unit, np.zeros((1, 4)), 10, 10)[0] == -1.0
    np.testing.assert_allclose(R.residual_reward(a, b, 20, 10), -np.linalg.norm(a - b, axis=1))


def test_combined_reward_is_linear(rng):
    rt, rr, rres = rng.standard_normal((3, 50))
    c = R.combined_reward(rt, rr, rres)
    np.testing.assert_allclose(c, rt + rr + 0.15 * rres)
    np.testing.assert_allclose(R.combined_reward(2 * rt, 2 * rr, 2 * rres), 2 * c)


def test_compute_rewards_breakdown():
    inp = inputs(2)
    rb = R.compute_rewards(inp, np.array([True, False]), np.array([-1.0, 0.0]), np.array([0.3, 0.7]), w_si=1.0)
    assert rb.r_T.tolist() == [-0.5, 0.0]
    np.testing.assert_allclose(rb.r_R, sum(rb.terms.values()))
    np.testing.assert_allclose(rb.r_c, rb.r_T + rb.r_R + 0.15 * rb.r_res)
    # the imitation channel is separate from the combined reward
    np.testing.assert_array_equal(rb.r_SI, [0.3, 0.7])
    assert all(np.all(np.isfinite(v)) for v in rb.terms.values())
