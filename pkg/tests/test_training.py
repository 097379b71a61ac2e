import dataclasses

import numpy as np
import pytest

from hvrs import amp
from hvrs.config import Config, RewardConfig, StageConfig
from hvrs.nn import mlp
from hvrs.nn.policy import gaussian_log_prob, make_policy
from hvrs.sim.state import ACTION_DIM
from hvrs.training.ppo import TrainingDiverged, batch_gae, compute_gae, update_policy
from hvrs.training.rollout import RolloutBatch, StartPool, collect_rollouts
from hvrs.training.stages import near_placement_pool
from hvrs.tasks.episodes import start_single


def test_gae_matches_brute_force_returns():
    rng = np.random.default_rng(0)
    for _ in range(50):
        r = rng.normal(size=5)
        v = rng.normal(size=5)
        nv = np.append(v[1:], 0.0)
        ends = np.array([False] * 4 + [True])
        adv, ret = compute_gae(r, v, nv, ends, 1.0, 1.0)
        for t in range(5):
            assert adv[t] == pytest.approx(sum(r[t:]) - v[t], abs=1e-12)
            assert ret[t] == pytest.approx(sum(r[t:]), abs=1e-12)


def test_gae_does_not_leak_across_episodes():
    r = np.array([1.0, 1.0, 5.0, 5.0])
    v = np.zeros(4)
    nv = np.zeros(4)
    ends = np.array([False, True, False, True])
    adv, _ = compute_gae(r, v, nv, ends, 1.0, 1.0)
    np.testing.assert_allclose(adv, [2.0, 1.0, 10.0, 5.0])


def test_gae_discounted_brute_force():
    rng = np.random.default_rng(1)
    gamma, lam = 0.9, 0.8
    r = rng.normal(size=6)
    v = rng.normal(size=6)
    nv = np.append(v[1:], rng.normal())
    ends = np.zeros(6, dtype=bool)
    adv, _ = compute_gae(r, v, nv, ends, gamma, lam)
    deltas = r + gamma * nv - v
    for t in range(6):
        ref = sum((gamma * lam) ** (k - t) * deltas[k] for k in range(t, 6))
        assert adv[t] == pytest.approx(ref, abs=1e-12)


def synthetic_batch(obs, u, logp, rewards, values=None):
    E, T = rewards.shape
    values = np.zeros((E, T)) if values is None else values
    ends = np.ones((E, T), dtype=bool)
    z = np.zeros((E, T))
    return RolloutBatch(obs, u, logp, values, np.zeros((E, T)), rewards, rewards, z, ends,
                        np.zeros((E, T), bool), np.zeros((E, T), bool), np.zeros((E, T, ACTION_DIM)),
                        np.zeros((E, T, amp.PAIR_DIM)), np.full((E, T, 8), np.nan), z, "task+style")


def bandit_step(policy, value, opt_pi, opt_v, w, rng, stage_cfg, n=512):
    obs = np.ones((1, n, 3))
    mu = mlp.forward(policy.trunk, obs[0])
    u = mu + np.exp(policy.log_std.astype(np.float64)) * rng.standard_normal(mu.shape)
    logp = gaussian_log_prob(u, mu, policy.log_std)
    rewards = (np.tanh(u) @ w)[None, :]
    return update_policy(policy, value, synthetic_batch(obs, u[None], logp[None], rewards), stage_cfg,
                         opt_pi, opt_v, rng)


def test_bandit_mean_moves_toward_reward_direction():
    rng = np.random.default_rng(2)
    w = rng.choice([-1.0, 1.0], ACTION_DIM)
    policy = make_policy(3, (8,), np.random.default_rng(0), init_log_std=-0.5, dtype=np.float64)
    value = mlp.init_mlp((3, 8, 1), np.random.default_rng(1), dtype=np.float64)
    scfg = StageConfig(lr=3e-3, minibatch=512, bc_coef=0.0, max_grad_norm=10.0)
    opt_pi, opt_v = mlp.Adam(policy.arrays(), scfg.lr), mlp.Adam(value.arrays(), scfg.lr)
    score = lambda: float(np.tanh(mlp.forward(policy.trunk, np.ones(3))) @ w)
    prev = score()
    for _ in range(50):
        bandit_step(policy, value, opt_pi, opt_v, w, rng, scfg)
        cur = score()
        assert cur >= prev - 1e-9
        prev = cur
    signs = np.sign(np.tanh(mlp.forward(policy.trunk, np.ones(3))))
    assert np.all(signs == np.sign(w))


def test_zero_lr_is_a_no_op():
    rng = np.random.default_rng(3)
    policy = make_policy(3, (8,), np.random.default_rng(0))
    value = mlp.init_mlp((3, 8, 1), np.random.default_rng(1))
    before = [a.tobytes() for a in policy.arrays() + value.arrays()]
    scfg = StageConfig(lr=0.0)
    bandit_step(policy, value, mlp.Adam(policy.arrays(), 0.0), mlp.Adam(value.arrays(), 0.0),
                np.ones(ACTION_DIM), rng, scfg, n=64)
    assert [a.tobytes() for a in policy.arrays() + value.arrays()] == before


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises_with_stats():
    policy = make_policy(3, (4,), np.random.default_rng(0))
    value = mlp.init_mlp((3, 4, 1), np.random.default_rng(1))
    batch = synthetic_batch(np.ones((1, 4, 3)), np.zeros((1, 4, ACTION_DIM)), np.zeros((1, 4)),
                            np.array([[1.0, np.inf, 0.0, 1.0]]))
    with pytest.raises(TrainingDiverged, match="training diverged") as info:
        update_policy(policy, value, batch, StageConfig(), mlp.Adam(policy.arrays()), mlp.Adam(value.arrays()),
                      np.random.default_rng(0))
    assert "policy_loss" in info.value.stats


def test_empty_batch_rejected():
    policy = make_policy(3, (4,), np.random.default_rng(0))
    value = mlp.init_mlp((3, 4, 1), np.random.default_rng(1))
    batch = synthetic_batch(np.ones((1, 0, 3)), np.zeros((1, 0, ACTION_DIM)), np.zeros((1, 0)), np.zeros((1, 0)))
    with pytest.raises(ValueError, match="empty"):
        update_policy(policy, value, batch, StageConfig(), mlp.Adam(policy.arrays()), mlp.Adam(value.arrays()),
                      np.random.default_rng(0))


def test_window_cut_counts_as_episode_end():
    batch = synthetic_batch(np.ones((1, 3, 3)), np.zeros((1, 3, ACTION_DIM)), np.zeros((1, 3)),
                            np.array([[1.0, 1.0, 1.0]]))
    batch.ends[:] = False
    adv, ret = batch_gae(batch, 1.0, 1.0)
    np.testing.assert_allclose(ret[0], [3.0, 2.0, 1.0])


# ---- rollouts ----------------------------------------------------------------

def small_policy(cfg):
    from hvrs.sim.sensors import FEATURE_DIM
    rng = np.random.default_rng(0)
    return (make_policy(FEATURE_DIM, (16,), rng), mlp.init_mlp((FEATURE_DIM, 16, 1), rng),
            amp.make_discriminator(rng))


def test_rollout_shape_and_reward_accounting(singles):
    cfg = Config()
    pool = StartPool([[start_single(s, 0)] for s in singles[:4]], [s.sub_task_index for s in singles[:4]])
    policy, value, disc = small_policy(cfg)
    scfg = StageConfig(envs=3, steps=20)
    b = collect_rollouts(policy, value, pool, scfg, disc, seed=0, epoch=0, cfg=cfg)
    assert b.n_transitions == 60
    assert b.obs.shape[:2] == (3, 20) and b.pairs.shape == (3, 20, amp.PAIR_DIM)
    assert np.all(np.abs(b.rewards - (b.task_rewards + b.style_rewards)) <= 1e-12)
    assert np.any(b.style_rewards > 0)


def test_rollouts_are_deterministic(singles):
    cfg = Config()
    pool = StartPool([[start_single(s, 0)] for s in singles[:4]], [s.sub_task_index for s in singles[:4]])
    policy, value, disc = small_policy(cfg)
    scfg = StageConfig(envs=2, steps=15)
    a = collect_rollouts(policy, value, pool, scfg, disc, seed=3, epoch=5, cfg=cfg)
    b = collect_rollouts(policy, value, pool, scfg, disc, seed=3, epoch=5, cfg=cfg)
    assert a.u.tobytes() == b.u.tobytes() and a.rewards.tobytes() == b.rewards.tobytes()


def test_zero_style_weight_gives_task_totals(singles):
    cfg = Config(rewards=RewardConfig(lambda_amp=0.0))
    pool = StartPool([[start_single(s, 0)] for s in singles[:2]], [s.sub_task_index for s in singles[:2]])
    policy, value, disc = small_policy(cfg)
    b = collect_rollouts(policy, value, pool, StageConfig(envs=2, steps=10), disc, 0, 0, cfg)
    assert np.array_equal(b.rewards, b.task_rewards)


def test_stage2_batch_is_masked_and_never_uses_task_terms(singles):
    cfg = Config()
    pool = near_placement_pool(singles[:6], cfg, seed=0, per_task=2)
    policy, value, disc = small_policy(cfg)
    scfg = cfg.stages.stage(2)
    scfg = dataclasses.replace(scfg, envs=4, steps=60)
    b = collect_rollouts(policy, value, pool, scfg, disc, 0, 0, cfg)
    assert b.reward_mode == "stage2"
    assert np.all(np.isnan(b.terms))
    far = b.d_object2goal >= cfg.rewards.thresh_object2goal
    assert np.all(b.task_rewards[far] == 0.0)
    assert np.all((b.task_rewards >= 0.0) & (b.task_rewards <= 1.0))


def test_knocked_episodes_are_true_terminals(singles):
    cfg = Config()
    pool = near_placement_pool(singles[:6], cfg, seed=0, per_task=2)
    policy, value, disc = small_policy(cfg)
    scfg = dataclasses.replace(cfg.stages.stage(2), envs=4, steps=60, knock_speed=1e-6)
    b = collect_rollouts(policy, value, pool, scfg, disc, 0, 0, cfg)
    assert np.all(b.ends[b.knocked])
    assert np.all(b.next_values[b.knocked] == 0.0)


def test_stage_config_contract():
    with pytest.raises(ValueError, match="stage2"):
        StageConfig(stage=2, reward_mode="task+style")
    with pytest.raises(ValueError):
        StageConfig(stage=4)
    with pytest.raises(ValueError):
        StageConfig(envs=0)
