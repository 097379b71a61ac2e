"""Desk-scale end-to-end pipeline used by the acceptance suite.

gen-tasks -> stage 1 -> stage 2 -> stage 3 -> distill -> evaluation, plus the
two ablations. Every report is also written to ``out`` as JSON bytes so runs
can be compared byte for byte.
"""
import dataclasses
import os
import time

from hvrs.config import Config
from hvrs.distill.dagger import load_student, load_teacher_policy, oracle_teacher, run_stage4
from hvrs.evaluation.metrics import evaluate, render_report
from hvrs.tasks.dataset import generate_dataset, split_pretraining
from hvrs.tasks.io import save_tasks
from hvrs.tasks.layouts import standard_layouts
from hvrs.training import stages


@dataclasses.dataclass
class DeskRun:
    out: str
    stage2_eval: dict
    reports: dict  # name -> (MetricsReport, [EpisodeResult])
    seconds: dict
    checkpoints: dict

    def report(self, name):
        return self.reports[name][0]


def run_desk_pipeline(cfg: Config, out: str, n_train: int = 48, n_unseen: int = 12, seed: int = 0,
                      resume: bool = False) -> DeskRun:
    os.makedirs(out, exist_ok=True)
    seconds = {}
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        seconds[name] = now - clock
        clock = now

    tasks = generate_dataset(standard_layouts(), n_train, n_unseen, seed, cfg.rewards.success_radius_default)
    save_tasks(tasks, os.path.join(out, "tasks.json"))
    train = [t for t in tasks if t.split == "train"]
    unseen = [t for t in tasks if t.split == "unseen"]
    singles = split_pretraining(train)

    p1 = stages.run_stage1(singles, cfg, seed, out, resume)
    lap("stage1")
    p2 = stages.run_stage2(p1, singles, cfg, seed, out, resume)
    lap("stage2")
    model1 = load_teacher_policy(p2)
    held_out = stages.near_placement_pool(singles, cfg, seed + 99, 1)
    stage2_eval = stages.evaluate_stage2(model1, held_out, cfg)
    p3 = stages.run_stage3(p2, p1, train, cfg, seed, out, resume)
    lap("stage3")
    p4 = run_stage4(p2, p3, train, cfg, seed, out)
    lap("distill")

    model2, model2_stage1 = load_teacher_policy(p3), load_teacher_policy(p1)
    student = load_student(p4)
    oracle = oracle_teacher(cfg.sim)
    no_speed = dataclasses.replace(cfg, dagger=dataclasses.replace(cfg.dagger, speed_thresh=1e9))
    runs = {
        "oracle_pair": ((oracle, oracle), train, "teacher_pair", cfg),
        "pair": ((model1, model2), train, "teacher_pair", cfg),
        "pair_unseen": ((model1, model2), unseen, "teacher_pair", cfg),
        "no_stage3": ((model1, model2_stage1), train, "teacher_pair", cfg),
        "no_speed": ((model1, model2), train, "teacher_pair", no_speed),
        "student": (student, train, "student", cfg),
        "student_unseen": (student, unseen, "student", cfg),
    }
    reports = {}
    for name, (ctrl, split, mode, c) in runs.items():
        if not split:
            continue
        reports[name] = evaluate(ctrl, split, mode, c, seed)
        with open(os.path.join(out, f"report_{name}.json"), "wb") as fh:
            fh.write(render_report(reports[name][0], "json"))
    lap("evaluation")
    return DeskRun(out, stage2_eval, reports, seconds, {"stage1": p1, "stage2": p2, "stage3": p3, "student": p4})
