import functools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kiras.numerics import DenseNet
from kiras.self_imitation import (Discriminator, FrameNormalizer, PremiumBuffer, cosine_similarity, dtw_batch,
                                  dtw_distance, lsgan_loss, score_batch, score_trajectory, sil_reward)

from conftest import central_diff, rel_err


def dtw_bruteforce(a, b):
    """Textbook recursion, memoized; shares nothing with the vectorized sweep."""
    @functools.lru_cache(maxsize=None)
    def d(i, j):
        c = float(np.sqrt(np.sum((a[i] - b[j]) ** 2)))
        if i == 0 and j == 0:
            return c
        options = []
        if i > 0:
            options.append(d(i - 1, j))
        if j > 0:
            options.append(d(i, j - 1))
        if i > 0 and j > 0:
            options.append(d(i - 1, j - 1))
        return c + min(options)
    return d(len(a) - 1, len(b) - 1)


def test_dtw_matches_bruteforce(rng):
    for _ in range(100):
        dim = rng.integers(1, 7)
        a = rng.standard_normal((rng.integers(1, 13), dim))
        b = rng.standard_normal((rng.integers(1, 13), dim))
        assert abs(dtw_distance(a, b) - dtw_bruteforce(a, b)) <= 1e-9


def test_dtw_basic_properties(rng):
    a = rng.standard_normal((7, 3))
    b = rng.standard_normal((9, 3))
    assert dtw_distance(a, a) == 0.0
    assert dtw_distance(a, b) == pytest.approx(dtw_distance(b, a), abs=1e-12)
    assert dtw_distance(a[:1], b[:1]) == pytest.approx(np.linalg.norm(a[0] - b[0]))
    c = a.copy()
    c[3, 1] += 1e-3
    assert dtw_distance(a, c) > 0.0
    with pytest.raises(ValueError):
        dtw_distance(np.zeros((0, 3)), a)
    with pytest.raises(ValueError):
        dtw_distance(a, np.zeros((4, 2)))


def test_dtw_batch_agrees_with_single(rng):
    a = rng.standard_normal((6, 8, 4))
    b = rng.standard_normal((6, 5, 4))
    np.testing.assert_allclose(dtw_batch(a, b), [dtw_distance(x, y) for x, y in zip(a, b)], rtol=0, atol=1e-12)


def test_cosine_similarity():
    a = np.array([[1.0, 0.0], [0.0, 2.0]])
    assert cosine_similarity(a, a) == pytest.approx(1.0)
    assert cosine_similarity(a, -a) == pytest.approx(-1.0)
    assert cosine_similarity(a, a[::-1]) == pytest.approx(0.0)


def test_score_examples():
    kf = np.ones((10, 3))
    assert score_trajectory(kf, kf, np.zeros(10)) == 0.0
    assert score_trajectory(kf, kf, np.ones(10)) == 10.0
    # one frame shifted by 2 in one coordinate: DTW distance 2
    tr = kf.copy()
    tr[4, 0] += 2.0
    assert dtw_distance(tr, kf) == pytest.approx(2.0)
    rewards = np.full(10, 0.5)
    assert score_trajectory(tr, kf, rewards) == pytest.approx(3.0)
    assert score_trajectory(tr, kf, rewards, verbatim_sign=True) == pytest.approx(7.0)
    np.testing.assert_allclose(score_batch(tr[None], kf[None], rewards[None]), [3.0])
    with pytest.raises(ValueError):
        score_trajectory(tr, kf, np.ones(9))


def test_admission_rules():
    kf = np.zeros((4, 2))
    buf = PremiumBuffer([kf], capacity=2)
    assert buf.best_score(0) == -np.inf
    assert buf.maybe_admit(0, np.ones((4, 2)), -1e9)
    assert not buf.maybe_admit(0, np.ones((4, 2)), -1e9)
    assert buf.maybe_admit(0, 2 * np.ones((4, 2)), -1e9 + 1)
    assert buf.best_score(0) == -1e9 + 1
    assert buf.maybe_admit(0, 3 * np.ones((4, 2)), 0.0)
    trajs = buf.trajectories(0)
    # capacity 2: the oldest premium entry went first, the keyframe stays
    assert len(trajs) == 3
    np.testing.assert_array_equal(trajs[0], kf)
    assert trajs[1][0, 0] == 2.0 and trajs[2][0, 0] == 3.0
    with pytest.raises(ValueError):
        buf.maybe_admit(0, np.zeros((5, 2)), 10.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.floats(-1e6, 1e6, allow_nan=False)), min_size=1, max_size=200))
def test_buffer_invariants_hold_for_any_sequence(attempts):
    kfs = [np.full((3, 2), float(i)) for i in range(3)]
    buf = PremiumBuffer(kfs, capacity=4)
    prev = [buf.best_score(i) for i in range(3)]
    for skill, score in attempts:
        buf.maybe_admit(skill, np.full((3, 2), score), score)
        for i in range(3):
            assert buf.best_score(i) >= prev[i]
            prev[i] = buf.best_score(i)
            trajs = buf.trajectories(i)
            np.testing.assert_array_equal(trajs[0], kfs[i])
            assert 1 <= len(trajs) <= 5
            assert all(t.shape == (3, 2) for t in trajs)


def test_sample_transitions_are_consecutive_frames(rng):
    kf = np.arange(12.0).reshape(6, 2)
    buf = PremiumBuffer([kf, kf + 100], capacity=3)
    buf.maybe_admit(1, kf + 1000, 1.0)
    prev, cur = buf.sample_transitions(np.array([0, 1, 1, 0, 1] * 20), rng)
    np.testing.assert_array_equal(cur - prev, 2.0)
    assert np.all(prev[::5] < 100)
    assert np.any(prev[1::5] >= 1000) and np.all(prev[1::5] >= 100)


def test_buffer_csv(tmp_path):
    buf = PremiumBuffer([np.zeros((3, 2))])
    buf.maybe_admit(0, np.ones((3, 2)), 1.0)
    buf.to_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0].startswith("skill,entry,kind,t")
    assert len(lines) == 1 + 6


def test_sil_reward_values(rng):
    assert sil_reward(1.0) == 1.0
    assert sil_reward(-1.0) == 0.0
    assert sil_reward(3.0) == 0.0
    r = sil_reward(rng.normal(0, 5, 10_000))
    assert r.min() >= 0.0 and r.max() <= 1.0


def test_lsgan_loss_values():
    assert lsgan_loss(np.ones(4), -np.ones(6))[0] == 0.0
    assert lsgan_loss(np.zeros(4), np.zeros(6))[0] == 2.0


def test_discriminator_gradients(rng):
    disc = Discriminator(5, hidden=(12, 8), rng=rng)
    rp, rc, fp, fc = (rng.standard_normal((7, 5)) for _ in range(4))
    loss, grads = disc.loss_and_grads(rp, rc, fp, fc)
    f = lambda: disc.loss_and_grads(rp, rc, fp, fc)[0]
    for which, idx, fd in central_diff(f, disc.net.params(), 64, rng):
        assert rel_err(grads[which].flat[idx], fd) < 1e-4


def test_discriminator_learns_separable_clusters(rng):
    disc = Discriminator(3, hidden=(16, 16), rng=rng, lr=3e-3)
    real = rng.normal(1.0, 0.1, (64, 3))
    fake = rng.normal(-1.0, 0.1, (64, 3))
    first = disc.update(real, real, fake, fake)
    for _ in range(499):
        last = disc.update(real, real, fake, fake)
    assert last < 0.1 * first
    assert disc.reward(real, real).mean() > disc.reward(fake, fake).mean()


def test_frame_normalizer_matches_numpy(rng):
    x = rng.normal(3.0, 2.0, (500, 4))
    nm = FrameNormalizer(4)
    for chunk in np.split(x, 5):
        nm.update(chunk)
    np.testing.assert_allclose(nm.mean, x.mean(0), atol=1e-5)
    np.testing.assert_allclose(nm.var, x.var(0), rtol=1e-4)
    nm.frozen = True
    nm.update(x + 100)
    np.testing.assert_allclose(nm.mean, x.mean(0), atol=1e-5)
    assert np.abs(nm(x + 1000)).max() <= nm.clip
    other = FrameNormalizer(4)
    other.load_state_dict(nm.state_dict())
    np.testing.assert_array_equal(other(x), nm(x))
