"""Scene files (YAML) and plan archives (JSON Lines).

Scene file layout::

    schema_version: 1
    seed: 0
    scene:
      object_shape: {type: box, width: 0.1, height: 0.1}
      object_mass: 0.1
      environment:
        - {type: box, width: 4.0, height: 0.2, pose: [0.5, -0.1, 0.0]}
    start: {object_pose: [0.0, 0.05, 0.0]}
    goal: {center: [0.5, 0.05, 0.0], r_terminal: 0.2}
    sample_box: [[-0.5, 1.5], [0.0, 0.3], [-3.14159, 3.14159]]
    planner: {wall_clock_cap: 60.0}

Shapes are ``{type: box, width, height}``, ``{type: circle, radius}`` or
``{type: polygon, vertices: [[x, y], ...]}`` (counter-clockwise).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dynamics import Configuration, ContactParams, SceneModel, settle
from .geometry import Circle, ConvexPolygon, GeometryError, Pose2, uniform_inertia
from .planner import Ablation, Plan, PlannerParams, SegmentRecord
from .reachset import ReachParams

SCHEMA_VERSION = 1
ARCHIVE_FORMAT = "specpush-plan"

_TOP_KEYS = {"schema_version", "seed", "scene", "start", "goal", "sample_box", "planner"}
_SCENE_KEYS = {"object_shape", "object_mass", "object_inertia", "fingertip_radius", "environment", "gravity",
               "contact", "friction_object_env", "friction_object_finger", "finger_mass", "finger_force_limit"}
_CONTACT_KEYS = {f.name for f in dataclasses.fields(ContactParams)}
_SHAPE_KEYS = {"box": {"type", "width", "height"}, "circle": {"type", "radius"}, "polygon": {"type", "vertices"}}
_START_KEYS = {"object_pose", "finger"}
_GOAL_KEYS = {"center", "r_terminal", "theta_tol"}
_PLANNER_KEYS = {"alpha", "n_nodes", "iteration_cap", "wall_clock_cap", "ablation"}
_REACH_KEYS = {f.name for f in dataclasses.fields(ReachParams)}


class SceneError(ValueError):
    pass


class PlanMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Task:
    scene: SceneModel
    params: PlannerParams
    start: Configuration
    seed: int
    scene_hash: str
    raw: dict = field(repr=False, compare=False, default_factory=dict)


def _line(node) -> int:
    return node.start_mark.line + 1


def _check_keys(node, allowed, where):
    """Reject unknown keys of a YAML mapping node, reporting the line."""
    if not isinstance(node, yaml.MappingNode):
        raise SceneError(f"line {_line(node)}: {where} must be a mapping")
    seen = set()
    for k, _ in node.value:
        key = k.value
        if key not in allowed:
            raise SceneError(f"line {_line(k)}: unknown key '{key}' in {where}")
        if key in seen:
            raise SceneError(f"line {_line(k)}: duplicate key '{key}' in {where}")
        seen.add(key)


def _child(node, key):
    for k, v in node.value:
        if k.value == key:
            return v
    return None


def _validate_tree(root):
    _check_keys(root, _TOP_KEYS, "top level")
    scene = _child(root, "scene")
    if scene is None:
        raise SceneError("missing section 'scene'")
    _check_keys(scene, _SCENE_KEYS, "scene")
    for key in ("object_shape",):
        sub = _child(scene, key)
        if sub is not None:
            _check_shape(sub, key)
    contact = _child(scene, "contact")
    if contact is not None:
        _check_keys(contact, _CONTACT_KEYS, "scene.contact")
    env = _child(scene, "environment")
    if env is not None:
        if not isinstance(env, yaml.SequenceNode):
            raise SceneError(f"line {_line(env)}: scene.environment must be a list")
        for item in env.value:
            _check_shape(item, "scene.environment", extra={"pose"})
    for key, allowed in (("start", _START_KEYS), ("goal", _GOAL_KEYS), ("planner", _PLANNER_KEYS | _REACH_KEYS)):
        sub = _child(root, key)
        if sub is not None:
            _check_keys(sub, allowed, key)


def _check_shape(node, where, extra=frozenset()):
    if not isinstance(node, yaml.MappingNode):
        raise SceneError(f"line {_line(node)}: {where} must be a mapping")
    t = _child(node, "type")
    if t is None or t.value not in _SHAPE_KEYS:
        raise SceneError(f"line {_line(node)}: {where} needs type box, circle or polygon")
    _check_keys(node, _SHAPE_KEYS[t.value] | set(extra), where)


def _floats(value, n, name):
    try:
        arr = [float(v) for v in value]
    except (TypeError, ValueError):
        raise SceneError(f"{name} must be a list of {n} numbers") from None
    if len(arr) != n or not all(math.isfinite(v) for v in arr):
        raise SceneError(f"{name} must be a list of {n} finite numbers")
    return arr


def _shape(d, name):
    t = d["type"]
    try:
        if t == "box":
            return ConvexPolygon.box(float(d["width"]), float(d["height"]))
        if t == "circle":
            return Circle(float(d["radius"]))
        return ConvexPolygon(tuple(tuple(_floats(v, 2, f"{name} vertex")) for v in d["vertices"]))
    except KeyError as e:
        raise SceneError(f"{name} is missing '{e.args[0]}'") from None
    except GeometryError as e:
        raise SceneError(f"{name}: {e}") from None


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def scene_hash(raw: dict) -> str:
    return hashlib.sha256(_canonical(raw.get("scene", {})).encode()).hexdigest()


def build_scene(d: dict) -> SceneModel:
    if "object_shape" not in d or "object_mass" not in d:
        raise SceneError("scene needs object_shape and object_mass")
    shape = _shape(d["object_shape"], "object_shape")
    kw = {k: float(d[k]) for k in ("object_mass", "fingertip_radius", "gravity", "friction_object_env",
                                   "friction_object_finger", "finger_mass", "finger_force_limit") if k in d}
    if "object_mass" in kw and not kw["object_mass"] > 0:
        raise SceneError("object_mass must be positive")
    kw["object_inertia"] = float(d["object_inertia"]) if "object_inertia" in d else uniform_inertia(shape, kw["object_mass"])
    env = []
    for i, e in enumerate(d.get("environment") or []):
        pose = Pose2(*_floats(e.get("pose", [0.0, 0.0, 0.0]), 3, f"environment[{i}].pose"))
        env.append((_shape(e, f"environment[{i}]"), pose))
    try:
        contact = ContactParams(**{k: float(v) for k, v in (d.get("contact") or {}).items()})
        return SceneModel(shape, environment=tuple(env), contact=contact, **kw)
    except GeometryError as e:
        raise SceneError(str(e)) from None


def build_params(raw: dict) -> PlannerParams:
    goal = raw.get("goal")
    if not goal or "center" not in goal:
        raise SceneError("goal.center is required")
    over = dict(raw.get("planner") or {})
    reach_kw = {k: over.pop(k) for k in list(over) if k in _REACH_KEYS}
    try:
        reach = ReachParams(**reach_kw)
        kw = {"goal_center": Pose2(*_floats(goal["center"], 3, "goal.center"))}
        if "r_terminal" in goal:
            kw["r_terminal"] = float(goal["r_terminal"])
        if goal.get("theta_tol") is not None:
            kw["theta_tol"] = float(goal["theta_tol"])
        if "sample_box" in raw:
            kw["sample_box"] = tuple(tuple(_floats(iv, 2, "sample_box interval")) for iv in raw["sample_box"])
        if "ablation" in over:
            over["ablation"] = Ablation(over["ablation"])
        return PlannerParams(reach=reach, **kw, **over)
    except (TypeError, ValueError) as e:
        raise SceneError(str(e)) from None


def parse_scene(text: str, settle_start: bool = True) -> Task:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise SceneError(f"parse error: {e}") from None
    if root is None:
        raise SceneError("empty scene file")
    _validate_tree(root)
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SceneError(f"unsupported schema_version {version}")
    scene = build_scene(raw["scene"])
    params = build_params(raw)
    start = raw.get("start") or {}
    pose = Pose2(*_floats(start.get("object_pose", [0.0, 0.0, 0.0]), 3, "start.object_pose"))
    finger = _floats(start["finger"], 2, "start.finger") if "finger" in start else [pose.x, pose.y + 10.0]
    c = Configuration(np.array(finger), pose)
    if settle_start:
        c = settle(scene, c, with_finger=False)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise SceneError("seed must be a non-negative integer")
    return Task(scene, params, c, seed, scene_hash(raw), raw)


def load_scene(path, settle_start: bool = True) -> Task:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise SceneError(f"cannot read scene file: {e}") from None
    return parse_scene(text, settle_start)


def bundled_scene(name: str) -> Path:
    p = Path(__file__).parent / "scenes" / f"{name}.yaml"
    if not p.exists():
        raise SceneError(f"no bundled scene '{name}'")
    return p


@dataclass
class PlanArchive:
    header: dict
    segments: list
    nodes: list

    @property
    def success(self) -> bool:
        return bool(self.header["metrics"]["success"])


def _node_record(node, stride):
    rec = {"type": "node", "id": node.id, "parent": node.parent, "pose": node.pose.as_array().tolist(),
           "index": node.index, "depth": node.depth}
    if node.segment is not None:
        rec["path"] = node.segment.com_path()[::stride].tolist()
    return rec


def _segment_record(i, rec: SegmentRecord):
    return {"type": "segment", "index": i, "start": rec.start.tolist(), "setpoints": rec.setpoints.tolist(),
            "n_steps": rec.n_steps, "n_settle": rec.n_settle, "stride": rec.stride, "states": rec.states.tolist(),
            "tail": rec.tail.tolist(), "final": rec.final.tolist(), "termination": rec.termination}


def make_archive(plan: Plan, scene_hash_: str, seed: int, ablation: Ablation = Ablation.NONE,
                 decimation: int = 1, include_tree: bool = True) -> PlanArchive:
    if decimation < 1:
        raise ValueError("decimation must be >= 1")
    m = plan.metrics()
    header = {"type": "header", "format": ARCHIVE_FORMAT, "version": SCHEMA_VERSION, "scene_hash": scene_hash_,
              "seed": seed, "ablation": ablation.value, "decimation": decimation, "stop_reason": plan.stop_reason,
              "start": plan.start.as_row().tolist() if plan.start is not None else None,
              "metrics": {"success": bool(m["success"]), "modes": m["modes"], "branches": m["branches"],
                          "path_length": m["path_length"], "iterations": m["iterations"]}}
    segs = [_segment_record(i, SegmentRecord.from_segment(s, decimation)) for i, s in enumerate(plan.segments)]
    nodes = [_node_record(n, decimation) for n in plan.tree.nodes] if include_tree and plan.tree is not None else []
    return PlanArchive(header, segs, nodes)


def dumps_archive(archive: PlanArchive) -> str:
    lines = [_canonical(archive.header)] + [_canonical(s) for s in archive.segments] + [_canonical(n) for n in archive.nodes]
    return "\n".join(lines) + "\n"


def save_plan(path, archive: PlanArchive) -> None:
    Path(path).write_text(dumps_archive(archive))


def loads_archive(text: str, expected_hash: str | None = None) -> PlanArchive:
    header, segs, nodes = None, [], []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValueError(f"archive line {n}: {e}") from None
        kind = rec.get("type")
        if kind == "header":
            header = rec
        elif kind == "segment":
            segs.append(rec)
        elif kind == "node":
            nodes.append(rec)
        else:
            raise ValueError(f"archive line {n}: unknown record type {kind!r}")
    if header is None or header.get("format") != ARCHIVE_FORMAT:
        raise ValueError("not a plan archive")
    if expected_hash is not None and header["scene_hash"] != expected_hash:
        raise PlanMismatch("scene/plan mismatch")
    return PlanArchive(header, segs, nodes)


def load_plan(path, expected_hash: str | None = None) -> PlanArchive:
    return loads_archive(Path(path).read_text(), expected_hash)


def archive_segments(archive: PlanArchive) -> list:
    """SegmentRecords ready for planner.replay."""
    out = []
    for s in archive.segments:
        out.append(SegmentRecord(np.array(s["start"]), np.array(s["setpoints"]).reshape(-1, 3), int(s["n_steps"]),
                                 int(s["n_settle"]), int(s["stride"]), np.array(s["states"]).reshape(-1, 10),
                                 np.array(s["tail"]).reshape(-1, 10), np.array(s["final"]), s["termination"]))
    return out
