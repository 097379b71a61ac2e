"""Command-line entry point: task generation, training stages, distillation,
evaluation and an interactive runner.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from threadpoolctl import threadpool_limits

from .config import Config, load_config
from .nn.checkpoint import CheckpointError

log = logging.getLogger("hvrs")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hvrs", description="Two-object rearrangement: teachers, distillation and evaluation.")
    p.add_argument("--config", help="JSON config file (defaults to $HVRS_CONFIG)")
    p.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    # accepted after the subcommand too; SUPPRESS keeps an absent flag from hiding the global one
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-tasks", parents=[common], help="generate a two-object task file")
    g.add_argument("--layouts", default="all", help="comma-separated layout ids, or 'all'")
    g.add_argument("--n-train", type=int, required=True)
    g.add_argument("--n-unseen", type=int, default=0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    s = sub.add_parser("split-pretrain", parents=[common], help="split two-object tasks into single-object tasks")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out")

    t = sub.add_parser("train", parents=[common], help="run one teacher curriculum stage")
    t.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    t.add_argument("--tasks", required=True, help="two-object task file (train split is used)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--init", help="stage 2: stage-1 checkpoint; stage 3: stage-2 (model 1) checkpoint")
    t.add_argument("--pretrain", help="stage 3: stage-1 checkpoint that model 2 starts from")
    t.add_argument("--epochs", type=int, help="override the stage's epoch budget")
    t.add_argument("--resume", action="store_true")

    d = sub.add_parser("distill", parents=[common], help="distill two teachers into the egocentric student")
    d.add_argument("--teacher1", required=True)
    d.add_argument("--teacher2", required=True)
    d.add_argument("--tasks", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True, help="output directory")

    e = sub.add_parser("eval", parents=[common], help="evaluate a student or a teacher pair")
    who = e.add_argument_group("controller (exactly one)")
    who.add_argument("--policy", help="student checkpoint")
    who.add_argument("--teachers", nargs=2, metavar=("T1", "T2"), help="teacher checkpoints")
    who.add_argument("--oracle", action="store_true", help="scripted oracle pair")
    e.add_argument("--tasks", required=True)
    e.add_argument("--split", choices=("train", "unseen"), default="train")
    e.add_argument("--format", choices=("text", "json", "csv"), default="text")
    e.add_argument("--seed", type=int)
    e.add_argument("--out", help="write the report here instead of stdout")
    e.add_argument("--episodes-out", help="write per-episode results (JSON lines)")

    r = sub.add_parser("run", parents=[common], help="run one task, optionally issuing the second instruction by hand")
    r.add_argument("--policy", help="student checkpoint")
    r.add_argument("--teachers", nargs=2, metavar=("T1", "T2"))
    r.add_argument("--oracle", action="store_true")
    r.add_argument("--tasks", required=True)
    r.add_argument("--task", required=True, help="task id")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--interactive", action="store_true")
    r.add_argument("--max-steps", type=int)
    return p


def _one_controller(args) -> None:
    given = sum(bool(x) for x in (args.policy, args.teachers, args.oracle))
    if given != 1:
        raise UsageError("give exactly one of --policy, --teachers, --oracle")


def _train_tasks(path):
    from .tasks.io import load_tasks
    tasks = [t for t in load_tasks(path) if t.split == "train"]
    if not tasks:
        raise ValueError(f"{path}: no train-split tasks")
    return tasks


def cmd_gen_tasks(args, cfg: Config) -> int:
    from .tasks.dataset import generate_dataset
    from .tasks.io import save_tasks
    from .tasks.layouts import get_layout, standard_layouts
    layouts = standard_layouts() if args.layouts == "all" else [get_layout(x.strip()) for x in args.layouts.split(",")]
    tasks = generate_dataset(layouts, args.n_train, args.n_unseen, args.seed, cfg.rewards.success_radius_default)
    save_tasks(tasks, args.out)
    print(f"wrote {len(tasks)} tasks to {args.out}")
    return 0


def cmd_split(args, cfg: Config) -> int:
    from .tasks.dataset import split_pretraining
    from .tasks.io import load_tasks, save_single_tasks
    singles = split_pretraining(load_tasks(args.inp))
    if args.out:
        save_single_tasks(singles, args.out)
    print(f"{len(singles)} single-object tasks" + (f" written to {args.out}" if args.out else ""))
    return 0


def cmd_train(args, cfg: Config) -> int:
    from .tasks.dataset import split_pretraining
    from .training import stages
    if args.epochs is not None:
        cfg.stages.stage(args.stage).epochs = args.epochs
    tasks = _train_tasks(args.tasks)
    if args.stage == 1:
        path = stages.run_stage1(split_pretraining(tasks), cfg, args.seed, args.out, args.resume)
    elif args.stage == 2:
        if not args.init:
            raise UsageError("stage 2 needs --init <stage-1 checkpoint>")
        path = stages.run_stage2(args.init, split_pretraining(tasks), cfg, args.seed, args.out, args.resume)
    else:
        if not (args.init and args.pretrain):
            raise UsageError("stage 3 needs --init <stage-2 checkpoint> and --pretrain <stage-1 checkpoint>")
        path = stages.run_stage3(args.init, args.pretrain, tasks, cfg, args.seed, args.out, args.resume)
    print(path)
    return 0


def cmd_distill(args, cfg: Config) -> int:
    from .distill.dagger import run_stage4
    path = run_stage4(args.teacher1, args.teacher2, _train_tasks(args.tasks), cfg, args.seed, args.out)
    print(path)
    return 0


def _controller(args, cfg: Config):
    """(mode, controller) for evaluate()."""
    from .distill.dagger import load_student, load_teacher_policy, oracle_teacher
    if args.policy:
        return "student", load_student(args.policy)
    if args.teachers:
        return "teacher_pair", (load_teacher_policy(args.teachers[0]), load_teacher_policy(args.teachers[1]))
    return "teacher_pair", (oracle_teacher(cfg.sim), oracle_teacher(cfg.sim))


def cmd_eval(args, cfg: Config) -> int:
    from dataclasses import asdict

    from .evaluation.metrics import evaluate, render_report
    from .tasks.io import load_tasks
    _one_controller(args)
    mode, ctrl = _controller(args, cfg)
    tasks = [t for t in load_tasks(args.tasks) if t.split == args.split]
    if not tasks:
        raise ValueError(f"{args.tasks}: no tasks in split {args.split!r}")
    seed = cfg.eval.seed if args.seed is None else args.seed
    report, results = evaluate(ctrl, tasks, mode, cfg, seed)
    out = render_report(report, args.format)
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(out)
    else:
        sys.stdout.write(out.decode())
    if args.episodes_out:
        with open(args.episodes_out, "w", encoding="utf-8") as fh:
            for r in results:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")
    return 0


def _summary(state, lc, m) -> str:
    from .sim.sensors import distances
    goal = state.goals[m - 1]
    c = distances(state, goal)
    a = state.agent
    return (f"step {state.step_count:5d}  instruction {m}{' (latched)' if lc.latched else ''}  "
            f"robot-object {c.d_robot2object:5.2f} m  object-goal {c.d_object2goal:5.2f} m  "
            f"carrying {a.carrying if a.carrying is not None else '-'}  {'standing' if a.standing else 'bent'}")


def cmd_run(args, cfg: Config, stdin=None, stdout=None) -> int:
    from dataclasses import replace

    from .distill.dagger import build_student_observation, student_action, teacher_from_policy
    from .distill.lifecycle import LifecycleState, SwitchThresholds, advance
    from .nn.policy import GaussianPolicy, action_to_command
    from .sim.engine import reset, step
    from .tasks.episodes import episode_done
    from .tasks.io import load_tasks
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    _one_controller(args)
    mode, ctrl = _controller(args, cfg)
    by_id = {t.id: t for t in load_tasks(args.tasks)}
    if args.task not in by_id:
        raise ValueError(f"unknown task id {args.task!r}")
    task = by_id[args.task]
    cap = args.max_steps or cfg.eval.episode_cap
    if mode == "teacher_pair":
        ctrl = tuple(teacher_from_policy(c, cfg.sim) if isinstance(c, GaussianPolicy) else c for c in ctrl)
    state = reset(task, 0, args.seed, None, cfg.sim)
    lc = LifecycleState(thresholds=SwitchThresholds.from_config(cfg.dagger))
    auto = True
    for k, sub in enumerate(task.sub_tasks):
        print(f"instruction {k + 1}: {sub.instruction.text}", file=stdout)

    def advance_steps(n):
        nonlocal state, lc
        m = lc.instruction_id
        for _ in range(n):
            if auto:
                lc, m = advance(state, lc, state.step_count)
            else:
                lc = replace(lc, progress_step=state.step_count)
                m = lc.instruction_id
            if mode == "student":
                a = student_action(ctrl, build_student_observation(state, lc, task))
            else:
                a = ctrl[m - 1](state, state.goals[m - 1])
            state, _ = step(state, action_to_command(a, cfg.sim), cfg=cfg.sim)
            if m == 2 and episode_done(state, state.goals[1], cfg.sim, cfg.rewards):
                return True
            if state.step_count >= cap:
                return True
        return False

    if not args.interactive:
        finished = False
        while not finished:
            finished = advance_steps(100)
            print(_summary(state, lc, lc.instruction_id), file=stdout)
        return 0

    print("commands: [step N] (default 30), next, auto, quit", file=stdout)
    print(_summary(state, lc, lc.instruction_id), file=stdout)
    for line in stdin:
        words = line.split()
        cmd = words[0] if words else "step"
        if cmd == "quit":
            break
        if cmd == "next":
            lc = replace(lc, instruction_id=2, latched=True)
            auto = False
            print("instruction 2 issued by hand", file=stdout)
        elif cmd == "auto":
            auto = True
            print("switching left to the rule", file=stdout)
        elif cmd == "step":
            try:
                n = int(words[1]) if len(words) > 1 else 30
            except ValueError:
                print("step takes a number of steps", file=stdout)
                continue
            if advance_steps(max(1, n)):
                print(_summary(state, lc, lc.instruction_id), file=stdout)
                print("episode finished", file=stdout)
                break
        else:
            print(f"unknown command {cmd!r}", file=stdout)
            continue
        print(_summary(state, lc, lc.instruction_id), file=stdout)
    return 0


COMMANDS = {"gen-tasks": cmd_gen_tasks, "split-pretrain": cmd_split, "train": cmd_train, "distill": cmd_distill,
            "eval": cmd_eval, "run": cmd_run}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config)
        if args.print_config:
            print(cfg.to_json())
            return 0
        if not args.command:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        with threadpool_limits(1):
            return COMMANDS[args.command](args, cfg)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError, CheckpointError, KeyError) as err:
        print(f"hvrs: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
