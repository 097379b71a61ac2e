"""Task files (UTF-8 JSON, ``{"version": 1, "tasks": [...]}``)."""
from __future__ import annotations

import json
import os
import tempfile
from typing import Any

from ..sim.state import AgentState, GoalSpec, Pose2Z
from .dataset import InstructionSpec, SingleTask, SubTask, TaskSpec
from .layouts import LAYOUT_IDS

FORMAT_VERSION = 1


class TaskFileError(ValueError):
    pass


def _pose(p: Pose2Z) -> list:
    return [p.x, p.y, p.z, p.yaw]


def task_to_dict(task: TaskSpec) -> dict:
    subs = []
    for s in task.sub_tasks:
        subs.append({
            "object_id": s.object_id,
            "start_pose": _pose(s.start_pose),
            "goal": {
                "pose": _pose(s.goal.goal_pose),
                "guides": [list(g) for g in s.goal.guides],
                "success_radius": s.goal.success_radius,
            },
            "instruction": {
                "object_token": s.instruction.object_token,
                "source_token": s.instruction.source_token,
                "target_token": s.instruction.target_token,
                "text": s.instruction.text,
            },
        })
    return {"id": task.id, "layout": task.layout, "split": task.split, "sub_tasks": subs}


def _agent_to_dict(a: AgentState) -> dict:
    return {
        "root": _pose(a.root),
        "root_vel": list(a.root_vel),
        "hand_left": list(a.hand_left),
        "hand_right": list(a.hand_right),
        "carrying": a.carrying,
        "standing": a.standing,
    }


def atomic_write_text(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_tasks(tasks, path: str) -> None:
    doc = {"version": FORMAT_VERSION, "tasks": [task_to_dict(t) for t in tasks]}
    atomic_write_text(path, json.dumps(doc, indent=1))


def save_single_tasks(singles, path: str) -> None:
    seen, tasks = set(), []
    for s in singles:
        if s.task.id not in seen:
            seen.add(s.task.id)
            tasks.append(s.task)
    doc = {
        "version": FORMAT_VERSION,
        "tasks": [task_to_dict(t) for t in tasks],
        "single_tasks": [
            {"task_id": s.task.id, "sub_task_index": s.sub_task_index,
             "spawn": None if s.spawn is None else _agent_to_dict(s.spawn)}
            for s in singles
        ],
    }
    atomic_write_text(path, json.dumps(doc, indent=1))


# ---- parsing -----------------------------------------------------------

def _fields(obj: Any, where: str, required: set, optional: set = frozenset()) -> dict:
    if not isinstance(obj, dict):
        raise TaskFileError(f"{where}: expected an object")
    missing = required - set(obj)
    if missing:
        raise TaskFileError(f"{where}: missing field {sorted(missing)[0]!r}")
    unknown = set(obj) - required - set(optional)
    if unknown:
        raise TaskFileError(f"{where}: unknown field {sorted(unknown)[0]!r}")
    return obj


def _num(v, where) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TaskFileError(f"{where}: expected a number")
    return float(v)


def _int(v, where) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise TaskFileError(f"{where}: expected an integer")
    return v


def _parse_pose(v, where) -> Pose2Z:
    if not isinstance(v, list) or len(v) != 4:
        raise TaskFileError(f"{where}: expected [x, y, z, yaw]")
    vals = [_num(x, f"{where}[{i}]") for i, x in enumerate(v)]
    try:
        return Pose2Z(*vals)
    except ValueError as e:
        raise TaskFileError(f"{where}: {e}") from None


def _parse_sub(d, where) -> SubTask:
    _fields(d, where, {"object_id", "start_pose", "goal", "instruction"})
    g = _fields(d["goal"], f"{where}.goal", {"pose", "guides", "success_radius"})
    if not isinstance(g["guides"], list):
        raise TaskFileError(f"{where}.goal.guides: expected a list")
    guides = []
    for i, p in enumerate(g["guides"]):
        if not isinstance(p, list) or len(p) != 2:
            raise TaskFileError(f"{where}.goal.guides[{i}]: expected [x, y]")
        guides.append((_num(p[0], f"{where}.goal.guides[{i}]"), _num(p[1], f"{where}.goal.guides[{i}]")))
    ins = _fields(d["instruction"], f"{where}.instruction", {"object_token", "source_token", "target_token", "text"})
    if not isinstance(ins["text"], str):
        raise TaskFileError(f"{where}.instruction.text: expected a string")
    oid = _int(d["object_id"], f"{where}.object_id")
    goal = GoalSpec(oid, _parse_pose(g["pose"], f"{where}.goal.pose"), tuple(guides),
                    _num(g["success_radius"], f"{where}.goal.success_radius"))
    instruction = InstructionSpec(
        _int(ins["object_token"], f"{where}.instruction.object_token"),
        _int(ins["source_token"], f"{where}.instruction.source_token"),
        _int(ins["target_token"], f"{where}.instruction.target_token"),
        ins["text"],
    )
    return SubTask(oid, _parse_pose(d["start_pose"], f"{where}.start_pose"), goal, instruction)


def task_from_dict(d, where="task") -> TaskSpec:
    _fields(d, where, {"id", "layout", "split", "sub_tasks"})
    if not isinstance(d["id"], str):
        raise TaskFileError(f"{where}.id: expected a string")
    if d["layout"] not in LAYOUT_IDS:
        raise TaskFileError(f"{where}.layout: unknown layout {d['layout']!r}")
    if not isinstance(d["sub_tasks"], list):
        raise TaskFileError(f"{where}.sub_tasks: expected a list")
    subs = tuple(_parse_sub(s, f"{where}.sub_tasks[{i}]") for i, s in enumerate(d["sub_tasks"]))
    try:
        return TaskSpec(d["id"], d["layout"], subs, d["split"])
    except ValueError as e:
        raise TaskFileError(f"{where}: {e}") from None


def _read_doc(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise TaskFileError(f"{path}: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise TaskFileError(f"{path}: top level must be an object")
    if "version" not in doc:
        raise TaskFileError(f"{path}: missing field 'version'")
    if doc["version"] != FORMAT_VERSION:
        raise TaskFileError(f"{path}: unsupported version {doc['version']!r} (expected {FORMAT_VERSION})")
    return doc


def load_tasks(path: str) -> list[TaskSpec]:
    doc = _read_doc(path)
    _fields(doc, "file", {"version", "tasks"}, {"single_tasks"})
    if not isinstance(doc["tasks"], list):
        raise TaskFileError("tasks: expected a list")
    return [task_from_dict(t, f"tasks[{i}]") for i, t in enumerate(doc["tasks"])]


def _vec(v, n, where) -> tuple:
    if not isinstance(v, list) or len(v) != n:
        raise TaskFileError(f"{where}: expected {n} numbers")
    return tuple(_num(x, f"{where}[{i}]") for i, x in enumerate(v))


def _parse_agent(d, where) -> AgentState:
    _fields(d, where, {"root", "root_vel", "hand_left", "hand_right", "carrying", "standing"})
    return AgentState(
        root=_parse_pose(d["root"], f"{where}.root"),
        root_vel=_vec(d["root_vel"], 2, f"{where}.root_vel"),
        hand_left=_vec(d["hand_left"], 3, f"{where}.hand_left"),
        hand_right=_vec(d["hand_right"], 3, f"{where}.hand_right"),
        carrying=None if d["carrying"] is None else _int(d["carrying"], f"{where}.carrying"),
        standing=bool(d["standing"]),
    )


def load_single_tasks(path: str) -> list[SingleTask]:
    doc = _read_doc(path)
    _fields(doc, "file", {"version", "tasks", "single_tasks"})
    tasks = {t.id: t for t in (task_from_dict(t, f"tasks[{i}]") for i, t in enumerate(doc["tasks"]))}
    out = []
    for i, s in enumerate(doc["single_tasks"]):
        where = f"single_tasks[{i}]"
        _fields(s, where, {"task_id", "sub_task_index", "spawn"})
        if s["task_id"] not in tasks:
            raise TaskFileError(f"{where}.task_id: unknown task {s['task_id']!r}")
        k = _int(s["sub_task_index"], f"{where}.sub_task_index")
        if k not in (0, 1):
            raise TaskFileError(f"{where}.sub_task_index: invalid sub-task {k}")
        spawn = None if s["spawn"] is None else _parse_agent(s["spawn"], f"{where}.spawn")
        out.append(SingleTask(tasks[s["task_id"]], k, spawn))
    return out
