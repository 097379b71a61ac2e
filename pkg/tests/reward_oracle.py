"""Unoptimised, line-by-line re-statement of the reward definitions.

Kept deliberately separate from hvrs.rewards: no shared helpers, plain
loops, and the formulas spelled out term by term.
"""
import math

WEIGHTS = [0.1, 0.1, 0.1, 0.1, 0.2, 0.2, 0.1, 0.1]


def oracle_terms(c, v_t=1.5, v_o_target=1.5, clamp=True):
    r = [0.0] * 8
    r[0] = math.exp(-2.0 * (v_t - c["v_r_proj"]) * (v_t - c["v_r_proj"]))
    r[1] = math.exp(-0.5 * c["d_robot2object"] * c["d_robot2object"])
    r[2] = math.exp(-5.0 * c["d_hand2object"])
    z_o, z_init, z_target = c["z_o"], c["z_init"], c["z_target"]
    if z_target > z_init:
        lifted = z_o if z_o < z_target else z_target
        h = (lifted - z_init) / (z_target - z_init)
        if clamp:
            if h < 0.0:
                h = 0.0
            if h > 1.0:
                h = 1.0
        r[3] = h
    else:
        r[3] = 1.0 if z_o >= z_target else 0.0
    r[4] = math.exp(-2.0 * (v_o_target - c["v_o_proj"]) * (v_o_target - c["v_o_proj"]))
    r[5] = math.exp(-1.0 * c["d_object2guide"])
    r[6] = math.exp(-5.0 * c["d_object2goal"])
    r[7] = math.exp(-2.0 * c["delta_rot"])
    return r


def oracle_task_reward(c, weights=WEIGHTS, **kw):
    terms = oracle_terms(c, **kw)
    total = 0.0
    for i in range(8):
        total = total + weights[i] * terms[i]
    return total


def oracle_stage2(c, robot_cap=1.0, hand_cap=0.5, thresh=0.5):
    d_ro = c["d_robot2object"]
    d_ho = c["d_hand2object"]
    r_a = 1.0 - math.exp(-0.5 * d_ro)
    if d_ro > robot_cap:
        r_a = 1.0
    r_b = 1.0 - math.exp(-0.5 * d_ho)
    if d_ho > hand_cap:
        r_b = 1.0
    if c["d_object2goal"] >= thresh:
        r_a = 0.0
        r_b = 0.0
    return 0.5 * r_a + 0.5 * r_b


def oracle_style(d, lam=0.5, eps=1e-4):
    one_minus = 1.0 - d
    if one_minus < eps:
        one_minus = eps
    return lam * (-math.log(one_minus))
