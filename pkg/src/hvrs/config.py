"""Run configuration.

One JSON document with sections ``sim``, ``rewards``, ``amp``, ``stages``,
``dagger`` and ``eval``. Every field is optional; missing fields keep the
defaults below. ``HVRS_CONFIG`` may point at the file.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Any


@dataclass
class SimConfig:
    dt: float = 1.0 / 30.0
    v_max: float = 1.5
    yaw_rate_max: float = 2.0
    reach_radius: float = 0.9
    grasp_radius: float = 0.25
    carry_height: float = 0.6
    torso_height: float = 0.9
    body_radius: float = 0.25
    hand_speed: float = 3.0
    lift_speed: float = 1.5
    fall_speed: float = 2.0
    release_decay_time: float = 0.5
    bent_speed_factor: float = 0.3
    standup_steps: int = 5
    # lift is tanh-squashed by policies and never reaches 1.0 exactly
    standup_lift: float = 0.9
    guide_pass_radius: float = 0.5
    grid_cells: int = 32
    grid_extent: float = 8.0
    nav_cell: float = 0.25


@dataclass
class RewardConfig:
    alpha: tuple = (0.1, 0.1, 0.1, 0.1, 0.2, 0.2, 0.1, 0.1)
    v_t: float = 1.5
    v_o_target: float = 1.5
    stage2_robot_cap: float = 1.0
    stage2_hand_cap: float = 0.5
    thresh_object2goal: float = 0.5
    lambda_amp: float = 0.5
    success_radius_default: float = 0.5
    clamp_height: bool = True

    def __post_init__(self):
        self.alpha = tuple(float(a) for a in self.alpha)
        if len(self.alpha) != 8:
            raise ValueError("alpha must have 8 weights")
        if any(a < 0 for a in self.alpha):
            raise ValueError("alpha weights must be nonnegative")


@dataclass
class AmpConfig:
    hidden: tuple = (64, 64)
    lr: float = 1e-3
    batch_size: int = 256
    steps_per_epoch: int = 2
    reference_transitions: int = 5000
    log_eps: float = 1e-4
    logit_clip: float = 10.0


@dataclass
class StageConfig:
    stage: int = 1
    epochs: int = 300
    envs: int = 8
    steps: int = 128
    lr: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    reward_mode: str = "task+style"
    minibatch: int = 256
    ppo_epochs: int = 1
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 1.0
    # scripted-oracle action prior; stands in for the pretrained checkpoint
    bc_coef: float = 2.0
    init_log_std: float = -1.5
    horizon: int = 900
    # end the episode (no bootstrap) once a released object slides faster than this; 0 disables
    knock_speed: float = 0.0
    # weight of an extra imitation batch drawn from whole oracle demonstrations (guards against forgetting)
    rehearsal_coef: float = 0.0
    # one-off task reward paid on the step an episode ends in success; 0 disables
    success_bonus: float = 0.0
    full_scale_epochs: int = 0

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ValueError(f"invalid stage {self.stage}")
        if self.epochs < 0 or self.envs <= 0 or self.steps <= 0:
            raise ValueError("stage counts must be positive")
        if self.stage == 2 and self.reward_mode != "stage2":
            raise ValueError("stage 2 requires reward_mode 'stage2'")
        if self.reward_mode not in ("task+style", "stage2"):
            raise ValueError(f"unknown reward mode {self.reward_mode!r}")


def _default_stages():
    return {
        "1": StageConfig(stage=1, epochs=300, envs=8, steps=128, full_scale_epochs=28200),
        "2": StageConfig(stage=2, epochs=50, envs=8, steps=96, reward_mode="stage2",
                         horizon=150, lr=1e-4, bc_coef=8.0, knock_speed=0.25, rehearsal_coef=4.0, init_log_std=-2.5,
                         full_scale_epochs=550),
        "3": StageConfig(stage=3, epochs=300, envs=8, steps=128, lr=1e-4, bc_coef=8.0, rehearsal_coef=4.0,
                         init_log_std=-2.5, success_bonus=20.0, full_scale_epochs=18550),
    }


@dataclass
class StagesConfig:
    pretrain_bc_epochs: int = 60
    pretrain_bc_lr: float = 1e-3
    pretrain_rollouts: int = 2
    # oracle-labelled rounds on the warm-started policy's own visits
    pretrain_dagger_rounds: int = 4
    pretrain_dagger_epochs: int = 10
    stage2_pool_per_task: int = 3
    stage3_pool_per_task: int = 2
    teacher_hidden: tuple = (128, 128)
    # action noise (normalized units) on the extra oracle rollouts
    pretrain_noise: float = 0.3
    # probability of starting at a task's true start rather than mid-trajectory
    start_at_beginning: float = 0.5
    checkpoint_every: int = 25
    per_stage: dict = field(default_factory=_default_stages)

    def __post_init__(self):
        merged = _default_stages()
        for key, value in dict(self.per_stage).items():
            key = str(key)
            if isinstance(value, StageConfig):
                merged[key] = value
            else:
                base = dataclasses.asdict(merged[key]) if key in merged else {"stage": int(key)}
                base.update(value)
                merged[key] = StageConfig(**base)
        self.per_stage = merged

    def stage(self, k: int) -> StageConfig:
        return self.per_stage[str(k)]


@dataclass
class DaggerConfig:
    rounds: int = 8
    train_epochs: int = 12
    lr: float = 1e-3
    batch_size: int = 256
    capacity: int = 200_000
    hidden: tuple = (256, 256)
    speed_thresh: float = 0.05
    eval_success_thresh: float = 0.5
    distance_thresh: float = 1.0
    time_thresh: int = 60
    holdout_every: int = 10
    full_scale_epochs: int = 104000


@dataclass
class EvalConfig:
    episode_cap: int = 1800
    seed: int = 0


@dataclass
class Config:
    sim: SimConfig = field(default_factory=SimConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    amp: AmpConfig = field(default_factory=AmpConfig)
    stages: StagesConfig = field(default_factory=StagesConfig)
    dagger: DaggerConfig = field(default_factory=DaggerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_SECTIONS = {
    "sim": SimConfig,
    "rewards": RewardConfig,
    "amp": AmpConfig,
    "stages": StagesConfig,
    "dagger": DaggerConfig,
    "eval": EvalConfig,
}


def _build_section(name: str, cls, values: dict) -> Any:
    if not isinstance(values, dict):
        raise ValueError(f"config section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown field(s) in config section {name!r}: {sorted(unknown)}")
    return cls(**values)


def config_from_dict(data: dict) -> Config:
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config section(s): {sorted(unknown)}")
    kwargs = {name: _build_section(name, cls, data[name]) for name, cls in _SECTIONS.items() if name in data}
    return Config(**kwargs)


def load_config(path: str | None = None, overrides: dict | None = None) -> Config:
    """Load a config file (or ``$HVRS_CONFIG``), then apply section overrides."""
    path = path or os.environ.get("HVRS_CONFIG")
    data: dict = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    for section, values in (overrides or {}).items():
        data.setdefault(section, {}).update(values)
    return config_from_dict(data)
