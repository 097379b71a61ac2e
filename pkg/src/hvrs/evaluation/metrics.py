"""Two-object rearrangement metrics and report rendering."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

from ..config import Config
from ..distill.dagger import build_student_observation, run_dual_episode, student_action, teacher_from_policy
from ..distill.lifecycle import SwitchThresholds
from ..nn.policy import GaussianPolicy
from ..sim.state import SimState
from ..tasks.episodes import object_goal_distance


@dataclass(frozen=True)
class EpisodeResult:
    task_id: str
    layout: str
    success1: bool
    success2: bool
    dist1: float
    dist2: float
    steps: int
    disturbance1: float = 0.0
    switched: bool = False

    def __post_init__(self):
        if self.dist1 < 0 or self.dist2 < 0:
            raise ValueError("distances must be nonnegative")


@dataclass
class MetricsReport:
    success1: float = 0.0
    success2: float = 0.0
    success_all: float = 0.0
    dist1: float = 0.0
    dist2: float = 0.0
    episodes: int = 0
    per_layout: dict = field(default_factory=dict)
    success_radius_note: str = "switch eval_success_thresh=0.5 m (assumed)"


def _summary(results) -> dict:
    n = len(results)
    if n == 0:
        return {"success1": 0.0, "success2": 0.0, "success_all": 0.0, "dist1": 0.0, "dist2": 0.0, "episodes": 0}
    return {
        "success1": 100.0 * sum(r.success1 for r in results) / n,
        "success2": 100.0 * sum(r.success2 for r in results) / n,
        "success_all": 100.0 * sum(r.success1 and r.success2 for r in results) / n,
        "dist1": math.fsum(r.dist1 for r in results) / n,
        "dist2": math.fsum(r.dist2 for r in results) / n,
        "episodes": n,
    }


def build_report(results, thresholds: SwitchThresholds | None = None) -> MetricsReport:
    results = sorted(results, key=lambda r: r.task_id)
    rep = MetricsReport(**_summary(results))
    layouts = sorted({r.layout for r in results})
    rep.per_layout = {lay: _summary([r for r in results if r.layout == lay]) for lay in layouts}
    if thresholds is not None:
        rep.success_radius_note = f"switch eval_success_thresh={thresholds.eval_success_thresh} m (assumed)"
    return rep


def sub_task_success(state: SimState, k: int) -> tuple:
    """(success, distance) for sub-task k at the end of an episode."""
    goal = state.goals[k]
    d = object_goal_distance(state, goal)
    return (d < goal.success_radius and state.agent.carrying != goal.object_id), d


def evaluate(controller, tasks, mode: str, cfg: Config, seed: int = 0):
    """One capped episode per task.

    ``controller`` is a (teacher1, teacher2) pair of GaussianPolicies or
    callables for ``teacher_pair`` mode, or a student policy for ``student``.
    Returns (MetricsReport, list of EpisodeResult ordered by task id).
    """
    if not tasks:
        raise ValueError("no tasks to evaluate")
    th = SwitchThresholds.from_config(cfg.dagger)
    if mode == "teacher_pair":
        t1, t2 = controller
        t1 = teacher_from_policy(t1, cfg.sim) if isinstance(t1, GaussianPolicy) else t1
        t2 = teacher_from_policy(t2, cfg.sim) if isinstance(t2, GaussianPolicy) else t2
        chooser_factory = None
    elif mode == "student":
        from ..distill.dagger import STUDENT_DIM
        if not isinstance(controller, GaussianPolicy) or controller.obs_dim != STUDENT_DIM:
            raise ValueError("student mode needs a student policy over egocentric observations")
        t1 = t2 = None
        chooser_factory = controller
    else:
        raise ValueError(f"unknown evaluation mode {mode!r}")

    results = []
    for task in sorted(tasks, key=lambda t: t.id):
        track = {"placed_at": None}
        first_id = task.sub_tasks[0].object_id

        def on_step(state, lc, m, a_teacher, _task=task):
            if chooser_factory is not None:
                on_step.obs = build_student_observation(state, lc, _task)

        def choose(state, lc, a_teacher):
            return student_action(chooser_factory, on_step.obs)

        def watch(state, lc, m, a_teacher):
            on_step(state, lc, m, a_teacher)
            o = state.object_by_id(first_id)
            if track["placed_at"] is None and m == 2:
                track["placed_at"] = (o.pose.x, o.pose.y)

        final, steps, lc = run_dual_episode(task, t1, t2, cfg, seed, choose if chooser_factory is not None else None,
                                            watch, thresholds=th)
        s1, d1 = sub_task_success(final, 0)
        s2, d2 = sub_task_success(final, 1) if lc.latched else (False, object_goal_distance(final, final.goals[1]))
        o1 = final.object_by_id(first_id)
        dist = 0.0
        if track["placed_at"] is not None:
            dist = math.hypot(o1.pose.x - track["placed_at"][0], o1.pose.y - track["placed_at"][1])
        results.append(EpisodeResult(task.id, task.layout, bool(s1), bool(s2), float(d1), float(d2), steps,
                                     float(dist), bool(lc.latched)))
    return build_report(results, th), results


# ---- rendering ---------------------------------------------------------------

COLUMNS = ("success1", "success2", "success_all", "dist1", "dist2", "episodes")
_HEADERS = {"success1": "Success 1 (%) ↑", "success2": "Success 2 (%) ↑", "success_all": "Success All (%) ↑",
            "dist1": "Dist 1 (m) ↓", "dist2": "Dist 2 (m) ↓", "episodes": "Episodes"}


def _rows(report: MetricsReport):
    if report.episodes == 0:
        return []
    rows = [("all", {c: getattr(report, c) for c in COLUMNS})]
    rows.extend((k, v) for k, v in sorted(report.per_layout.items()))
    return rows


def render_report(report: MetricsReport, fmt: str = "text") -> bytes:
    if fmt == "json":
        return (json.dumps(asdict(report), sort_keys=True, indent=2) + "\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("scope", *COLUMNS))
        for scope, vals in _rows(report):
            w.writerow((scope, *(repr(float(vals[c])) if c != "episodes" else int(vals[c]) for c in COLUMNS)))
        return buf.getvalue().encode()
    if fmt == "text":
        heads = ("Scope", *(_HEADERS[c] for c in COLUMNS))
        body = []
        for scope, vals in _rows(report):
            cells = [scope]
            for c in COLUMNS:
                v = vals[c]
                cells.append(str(int(v)) if c == "episodes" else (f"{v:.3f}" if c.startswith("dist") else f"{v:.2f}"))
            body.append(cells)
        widths = [max(len(r[i]) for r in [heads, *body]) for i in range(len(heads))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(heads, widths)).rstrip()]
        for r in body:
            lines.append("  ".join(v.rjust(w) if i else v.ljust(w) for i, (v, w) in enumerate(zip(r, widths))).rstrip())
        lines.append(f"# {report.success_radius_note}")
        return ("\n".join(lines) + "\n").encode()
    raise ValueError(f"unknown report format {fmt!r}")


def report_from_json(data: bytes) -> MetricsReport:
    return MetricsReport(**json.loads(data))


def report_from_csv(data: bytes, note: str | None = None) -> MetricsReport:
    rows = list(csv.DictReader(io.StringIO(data.decode())))
    if not rows:
        return MetricsReport(success_radius_note=note) if note else MetricsReport()

    def parse(row):
        return {c: (int(row[c]) if c == "episodes" else float(row[c])) for c in COLUMNS}

    rep = MetricsReport(**parse(rows[0]))
    rep.per_layout = {r["scope"]: parse(r) for r in rows[1:]}
    if note:
        rep.success_radius_note = note
    return rep


def recount(results) -> dict:
    """Independent tally straight from the episode list."""
    n = len(results)
    ok1 = ok2 = both = 0
    for r in results:
        ok1 += 1 if r.success1 else 0
        ok2 += 1 if r.success2 else 0
        both += 1 if (r.success1 and r.success2) else 0
    return {"success1": 100.0 * ok1 / n if n else 0.0, "success2": 100.0 * ok2 / n if n else 0.0,
            "success_all": 100.0 * both / n if n else 0.0,
            "dist1": math.fsum(r.dist1 for r in results) / n if n else 0.0,
            "dist2": math.fsum(r.dist2 for r in results) / n if n else 0.0}
