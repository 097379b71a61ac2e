import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hvrs.amp import style_reward
from hvrs.config import RewardConfig
from hvrs.rewards import height_term, stage2_reward, task_reward_terms, total_reward

from reward_oracle import oracle_stage2, oracle_task_reward, oracle_terms
from rewardkit import as_dict, ctx, random_context


def test_all_terms_at_maximum_give_unit_reward():
    br = task_reward_terms(ctx())
    assert br.terms == (1.0,) * 8
    assert br.task_reward == pytest.approx(1.0, abs=1e-12)


def test_height_term_zero_at_rest_height():
    assert task_reward_terms(ctx(z_o=0.0)).terms[3] == 0.0


def test_golden_term_values():
    assert task_reward_terms(ctx(d_robot2object=2.0)).terms[1] == pytest.approx(0.135335, abs=1e-6)
    assert task_reward_terms(ctx(delta_rot=math.pi / 2)).terms[7] == pytest.approx(0.043214, abs=1e-6)


def test_stage2_values():
    cfg = RewardConfig()
    assert stage2_reward(ctx(d_robot2object=1.5, d_hand2object=0.6, d_object2goal=0.1), cfg) == 1.0
    assert stage2_reward(ctx(d_robot2object=1.5, d_hand2object=0.6, d_object2goal=0.5), cfg) == 0.0
    v = stage2_reward(ctx(d_robot2object=0.5, d_hand2object=0.2, d_object2goal=0.1), cfg)
    assert v == pytest.approx(0.158181, abs=1e-6)


def test_total_is_plain_sum():
    assert total_reward(1.0, 0.0) == 1.0
    assert total_reward(0.0, 0.6931) == 0.6931
    task = task_reward_terms(ctx(d_robot2object=2.0)).task_reward
    style = float(style_reward(0.5, RewardConfig(lambda_amp=1.0)))
    assert total_reward(task, style) == pytest.approx(task + math.log(2), abs=1e-12)


def test_degenerate_lift_rule():
    assert height_term(0.3, 0.5, 0.5) == 0.0
    assert height_term(0.5, 0.5, 0.5) == 1.0
    assert height_term(0.9, 0.5, 0.2) == 1.0


def test_unclamped_height_variant():
    assert height_term(-0.2, 0.0, 0.6, clamp=False) == pytest.approx(-1 / 3)
    assert height_term(-0.2, 0.0, 0.6, clamp=True) == 0.0


def test_engine_matches_brute_force_oracle():
    rng = np.random.default_rng(11)
    cfg = RewardConfig()
    for _ in range(2000):
        c = random_context(rng)
        br = task_reward_terms(c, cfg)
        ref = oracle_terms(as_dict(c))
        assert max(abs(a - b) for a, b in zip(br.terms, ref)) <= 1e-12
        assert abs(br.task_reward - oracle_task_reward(as_dict(c))) <= 1e-12
        assert abs(stage2_reward(c, cfg) - oracle_stage2(as_dict(c))) <= 1e-12


def test_weighted_sum_uses_configured_weights():
    alpha = (0.3, 0.0, 0.1, 0.2, 0.05, 0.05, 0.2, 0.1)
    cfg = RewardConfig(alpha=alpha)
    rng = np.random.default_rng(3)
    for _ in range(200):
        c = random_context(rng)
        assert task_reward_terms(c, cfg).task_reward == pytest.approx(
            oracle_task_reward(as_dict(c), weights=list(alpha)), abs=1e-12)


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        RewardConfig(alpha=(0.1,) * 7 + (-0.1,))


positive = st.floats(0.0, 10.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(a=positive, b=positive)
def test_distance_terms_decrease(a, b):
    lo, hi = sorted((a, b))
    if hi - lo < 1e-6:
        return
    t_lo = task_reward_terms(ctx(d_robot2object=lo, d_hand2object=lo, d_object2guide=lo, d_object2goal=lo,
                                 delta_rot=min(lo, math.pi))).terms
    t_hi = task_reward_terms(ctx(d_robot2object=hi, d_hand2object=hi, d_object2guide=hi, d_object2goal=hi,
                                 delta_rot=min(hi, math.pi))).terms
    for i in (1, 2, 5, 6):
        assert t_hi[i] <= t_lo[i]
        if t_lo[i] > 1e-300:
            assert t_hi[i] < t_lo[i]
    if hi <= math.pi:
        assert t_hi[7] < t_lo[7]


@settings(max_examples=200, deadline=None)
@given(a=st.floats(0.0, 2.0), b=st.floats(0.0, 2.0))
def test_height_term_nondecreasing(a, b):
    lo, hi = sorted((a, b))
    assert height_term(hi, 0.1, 0.7) >= height_term(lo, 0.1, 0.7)


@settings(max_examples=300, deadline=None)
@given(d_ro=positive, d_ho=positive, d_og=positive)
def test_stage2_range_and_mask(d_ro, d_ho, d_og):
    cfg = RewardConfig()
    v = stage2_reward(ctx(d_robot2object=d_ro, d_hand2object=d_ho, d_object2goal=d_og), cfg)
    assert 0.0 <= v <= 1.0
    if d_og >= cfg.thresh_object2goal:
        assert v == 0.0


@settings(max_examples=200, deadline=None)
@given(a=st.floats(0.0, 3.0), b=st.floats(0.0, 3.0), h=st.floats(0.0, 3.0))
def test_stage2_nondecreasing_in_clearance(a, b, h):
    lo, hi = sorted((a, b))
    f = lambda d_ro, d_ho: stage2_reward(ctx(d_robot2object=d_ro, d_hand2object=d_ho, d_object2goal=0.1))
    assert f(hi, h) >= f(lo, h)
    assert f(h, hi) >= f(h, lo)
    if lo > 1.0:
        assert f(hi, h) == f(lo, h)
    if lo > 0.5:
        assert f(h, hi) == f(h, lo)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_terms_lie_in_unit_interval(seed):
    br = task_reward_terms(random_context(np.random.default_rng(seed)))
    assert all(0.0 <= t <= 1.0 for t in br.terms)
