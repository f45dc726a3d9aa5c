import numpy as np
import pytest

from eapo.checks import (estimator_vs_oracle, gae_lambda_one_is_monte_carlo,
                         gae_lambda_zero_is_residual, random_buffer)
from eapo.core import EstimatorConfig, RolloutBuffer, TerminalKind, episode_slices
from eapo.estimation import (SliceMismatch, combine_soft_advantage, critic_targets,
                             entropy_reward_batch, entropy_td_residual, estimate_batch, gae,
                             value_td_residual)

NONE, TERM, TRUNC = TerminalKind.NONE, TerminalKind.TERMINATED, TerminalKind.TRUNCATED


def test_entropy_residual_examples():
    assert entropy_td_residual(np.log(0.5), 0.0, 0.0, NONE, 0.9) == pytest.approx(np.log(2), abs=1e-15)
    assert entropy_td_residual(0.0, 3.0, 3.0, NONE, 1.0) == 0.0
    d = entropy_td_residual(np.log(0.25), 2.0, 123.0, TERM, 0.9)
    assert d == pytest.approx(np.log(4) - 2, abs=1e-15)
    assert d == pytest.approx(-0.613706, abs=1e-6)


def test_value_residual_examples():
    assert value_td_residual(1.0, 0.0, 0.0, NONE, 0.99) == 1.0
    assert value_td_residual(0.5, 0.5 + 0.9 * 2.0, 2.0, NONE, 0.9) == 0.0
    rng = np.random.default_rng(0)
    r, v, b = rng.normal(size=3)
    assert value_td_residual(r, v, b, TRUNC, 0.97) == r + 0.97 * b - v
    assert value_td_residual(r, v, b, TERM, 0.97) == r - v


def test_gae_hand_recursion():
    adv = gae(np.array([1.0, 2.0]), [(0, 1, TERM)], 0.9, 0.5)
    assert np.allclose(adv, [1.9, 2.0], atol=1e-15)


def test_gae_resets_between_slices():
    adv = gae(np.array([1.0, 2.0, 3.0]), [(0, 0, TERM), (1, 2, NONE)], 0.9, 1.0)
    assert np.allclose(adv, [1.0, 2.0 + 0.9 * 3.0, 3.0])


def test_gae_slice_mismatch():
    with pytest.raises(SliceMismatch):
        gae(np.zeros(3), [(0, 1, NONE)], 0.9, 0.9)
    with pytest.raises(SliceMismatch):
        gae(np.zeros(3), [(0, 0, NONE), (2, 2, NONE)], 0.9, 0.9)


def test_gae_lambda_zero_exact():
    assert gae_lambda_zero_is_residual(seed=10) == 0.0


def test_gae_lambda_one_is_monte_carlo():
    assert gae_lambda_one_is_monte_carlo(seed=11) < 1e-6


def test_entropy_target_is_empirical_trajectory_entropy():
    rng = np.random.default_rng(3)
    buf = random_buffer(rng, 200, terminate_only=True)
    cfg = EstimatorConfig(gamma_h=0.8, lambda_h=1.0, normalize_advantage=False)
    batch = estimate_batch(buf, cfg)
    for start, end, _ in episode_slices(buf):
        for t in range(start, end + 1):
            expect = sum(-(0.8 ** (k - t)) * buf.log_probs[k] for k in range(t, end + 1))
            assert batch.target_h[t] == pytest.approx(expect, abs=1e-10)


def test_critic_targets_identity():
    rng = np.random.default_rng(4)
    adv, pred = rng.normal(size=50), rng.normal(size=50)
    assert np.array_equal(critic_targets(np.zeros(50), pred), pred)
    assert np.array_equal(critic_targets(adv, pred) - pred, adv + pred - pred)


def test_combine_soft_advantage_examples():
    out = combine_soft_advantage(np.array([1.0, -1.0]), np.array([2.0, -2.0]), 0.5, False)
    assert np.array_equal(out, [2.0, -2.0])
    v = np.random.default_rng(1).normal(size=20)
    assert np.array_equal(combine_soft_advantage(v, np.ones(20), 0.0, False), v)
    norm = combine_soft_advantage(v, v ** 2, 0.3, True)
    assert abs(norm.mean()) < 1e-6 and abs(norm.std(ddof=1) - 1) < 1e-6


def test_combine_is_linear_in_tau():
    rng = np.random.default_rng(2)
    av, ah = rng.normal(size=30), rng.normal(size=30)
    outs = [combine_soft_advantage(av, ah, t, False) for t in (0.0, 0.25, 0.5)]
    assert np.allclose(outs[2] - outs[1], outs[1] - outs[0], atol=1e-15)


def test_normalized_batch_statistics():
    buf = random_buffer(np.random.default_rng(5), 300)
    batch = estimate_batch(buf, EstimatorConfig(tau=0.2))
    assert abs(batch.adv_soft.mean()) < 1e-6
    assert abs(batch.adv_soft.std(ddof=1) - 1) < 1e-6
    assert len(batch) == len(buf) == len(batch.target_h)


def test_stream_independence():
    buf = random_buffer(np.random.default_rng(6), 300)
    a = estimate_batch(buf, EstimatorConfig(gamma_h=0.5, lambda_h=0.3))
    b = estimate_batch(buf, EstimatorConfig(gamma_h=0.99, lambda_h=0.9))
    assert np.array_equal(a.adv_v, b.adv_v) and np.array_equal(a.target_v, b.target_v)
    c = estimate_batch(buf, EstimatorConfig(gamma_h=0.5, lambda_h=0.3, gamma_v=0.5, lambda_v=0.1))
    assert np.array_equal(a.adv_h, c.adv_h)


def test_truncation_bootstraps_both_streams():
    rec = dict(observations=np.zeros((2, 1)), actions=np.zeros(2, dtype=np.int64),
               rewards=np.array([1.0, 2.0]), log_probs=np.log([0.5, 0.25]),
               value_preds=np.array([0.3, 0.4]), entropy_value_preds=np.array([1.0, 1.5]),
               terminal_kinds=np.array([TRUNC, TERM], dtype=np.int8),
               bootstrap_value=np.array([5.0, np.nan]), bootstrap_entropy_value=np.array([7.0, np.nan]),
               fragment_lengths=[2])
    buf = RolloutBuffer(**rec)
    cfg = EstimatorConfig(gamma_v=0.9, gamma_h=0.8, lambda_v=0.7, lambda_h=0.6,
                          normalize_advantage=False)
    batch = estimate_batch(buf, cfg)
    assert np.allclose(batch.adv_v, [1.0 + 0.9 * 5.0 - 0.3, 2.0 - 0.4])
    assert np.allclose(batch.adv_h, [np.log(2) + 0.8 * 7.0 - 1.0, np.log(4) - 1.5])


def test_empty_buffer_gives_empty_batch():
    batch = estimate_batch(RolloutBuffer.empty(), EstimatorConfig())
    assert len(batch) == 0


def test_merged_critic_equivalence():
    """A single stream on r - tau log pi with a critic v + tau v_h equals EAPO at matched settings."""
    buf = random_buffer(np.random.default_rng(7), 400)
    tau = 0.3
    for norm in (False, True):
        cfg = EstimatorConfig(gamma_v=0.95, lambda_v=0.9, gamma_h=0.95, lambda_h=0.9, tau=tau,
                              normalize_advantage=norm)
        merged = buf.with_predictions(buf.value_preds + tau * buf.entropy_value_preds,
                                      buf.bootstrap_value + tau * buf.bootstrap_entropy_value)
        a = estimate_batch(buf, cfg).adv_soft
        b = entropy_reward_batch(merged, cfg).adv_soft
        assert np.max(np.abs(a - b)) < 1e-10


def test_estimator_converges_to_oracle_advantages():
    result = estimator_vs_oracle(num_steps=100_000, seed=9)
    assert result["worst_z_h"] < 4.0
    assert result["worst_z_v"] < 4.0


def test_oracle_critic_advantage_means_are_zero():
    result = estimator_vs_oracle(num_steps=50_000, seed=13)
    # pi-weighted mean of the per-pair sample means is ~0 at every state
    by_state = {}
    for name, s, a, n, mean, oracle, se, z in result["rows"]:
        by_state.setdefault((name, s), []).append((mean, se))
    for means in by_state.values():
        total = np.mean([m for m, _ in means])
        se = np.sqrt(np.sum([e ** 2 for _, e in means])) / len(means)
        assert abs(total) <= 3 * max(se, 1e-12)
