"""Kinodynamic RRT over concatenated pushing segments."""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _sim
from .dynamics import Configuration, SceneModel
from .geometry import Pose2
from .invdyn import replay_residuals
from .reachset import EmptyReachableSet, NoValidGrasp, ReachParams, TrajectorySegment, reachable_set, settle_tail


class Ablation(enum.Enum):
    NONE = "none"
    EXPAND_ALL = "expand_all"
    NO_KMEANS = "no_kmeans"
    NO_FILTER = "no_filter"
    RANDOM_DIRS = "random_dirs"


class ReplayDivergence(RuntimeError):
    def __init__(self, segment: int, index: int, error: float):
        super().__init__(f"replay divergence at segment {segment}, state {index} (|diff| = {error:.3e})")
        self.segment = segment
        self.index = index
        self.error = error


@dataclass(frozen=True)
class PlannerParams:
    goal_center: Pose2
    sample_box: tuple = ((-1.0, 1.0), (-1.0, 1.0), (-math.pi, math.pi))
    r_terminal: float = 0.2
    alpha: float = 0.2
    n_nodes: int = 5
    theta_tol: float | None = None
    iteration_cap: int = 2000
    wall_clock_cap: float = 60.0
    ablation: Ablation = Ablation.NONE
    reach: ReachParams = field(default_factory=ReachParams)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not self.r_terminal > 0:
            raise ValueError("r_terminal must be positive")
        if self.iteration_cap < 1 or not self.wall_clock_cap > 0:
            raise ValueError("caps must be positive")
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")
        box = tuple(tuple(float(v) for v in iv) for iv in self.sample_box)
        if len(box) != 3 or any(len(iv) != 2 or not iv[0] <= iv[1] for iv in box):
            raise ValueError("sample_box needs three [lo, hi] intervals")
        object.__setattr__(self, "sample_box", box)

    def effective_reach(self) -> ReachParams:
        ab = self.ablation
        return replace(self.reach,
                       use_kmeans=self.reach.use_kmeans and ab is not Ablation.NO_KMEANS,
                       use_filter=self.reach.use_filter and ab is not Ablation.NO_FILTER,
                       random_dirs=self.reach.random_dirs or ab is Ablation.RANDOM_DIRS)


@dataclass
class TreeNode:
    id: int
    parent: int | None
    pose: Pose2
    segment: TrajectorySegment | None = None
    index: int = 0
    depth: int = 0
    actions: list | None = None
    remaining: list | None = None
    exhausted: bool = False


@dataclass
class SearchTree:
    nodes: list = field(default_factory=list)

    def __len__(self):
        return len(self.nodes)

    def add(self, parent: int | None, pose: Pose2, segment=None, index=0) -> TreeNode:
        depth = 0 if parent is None else self.nodes[parent].depth + 1
        node = TreeNode(len(self.nodes), parent, pose, segment, index, depth)
        self.nodes.append(node)
        return node

    def xy(self) -> np.ndarray:
        return np.array([[n.pose.x, n.pose.y] for n in self.nodes]).reshape(-1, 2)

    def chain(self, node_id: int) -> list:
        out = []
        while node_id is not None:
            out.append(self.nodes[node_id])
            node_id = self.nodes[node_id].parent
        return out[::-1]


@dataclass
class Plan:
    segments: list
    success: bool
    wall_time: float
    branches: int
    iterations: int
    stop_reason: str
    tree: SearchTree | None = None
    start: Configuration | None = None

    @property
    def modes(self) -> int:
        return len(self.segments)

    @property
    def path_length(self) -> float:
        return float(sum(s.path_length() for s in self.segments))

    @property
    def final_pose(self) -> Pose2 | None:
        if self.segments:
            return self.segments[-1].final_pose
        return self.start.q_o if self.start is not None else None

    def metrics(self) -> dict:
        return {"success": self.success, "wall_time": self.wall_time, "modes": self.modes,
                "branches": self.branches, "path_length": self.path_length, "iterations": self.iterations}

    def summary(self) -> str:
        m = self.metrics()
        return (f"success={int(m['success'])} time={m['wall_time']:.2f} modes={m['modes']} "
                f"branches={m['branches']} length={m['path_length']:.3f} iterations={m['iterations']} "
                f"stop={self.stop_reason}")


def sample_subgoal(params: PlannerParams, rng: np.random.Generator) -> Pose2:
    if rng.random() < params.alpha:
        return params.goal_center
    lo = np.array([iv[0] for iv in params.sample_box])
    hi = np.array([iv[1] for iv in params.sample_box])
    return Pose2.from_array(rng.uniform(lo, hi))


def select_nearest(tree: SearchTree, target: Pose2) -> TreeNode | None:
    """Closest non-exhausted node by xy distance; ties go to the lowest id."""
    best = None
    best_d = math.inf
    for node in tree.nodes:
        if node.exhausted:
            continue
        d = math.hypot(node.pose.x - target.x, node.pose.y - target.y)
        if d < best_d:
            best, best_d = node, d
    return best


def node_indices(n_states: int, n_nodes: int) -> list:
    """State indices of the nodes spread along a segment; the last is the end."""
    last = n_states - 1
    idx = sorted({k * last // n_nodes for k in range(1, n_nodes)} - {0})
    return [i for i in idx if i < last] + [last]


def goal_test(pose: Pose2, params: PlannerParams) -> bool:
    c = params.goal_center
    if math.hypot(pose.x - c.x, pose.y - c.y) > params.r_terminal:
        return False
    if params.theta_tol is not None:
        d = (pose.theta - c.theta + math.pi) % (2 * math.pi) - math.pi
        return abs(d) <= params.theta_tol
    return True


def _insert_segment(scene, tree, node, seg, params, reach) -> list:
    out = []
    for i in node_indices(len(seg.states), params.n_nodes):
        part = seg.truncated(scene, i, reach)
        out.append(tree.add(node.id, part.final_pose, part, i))
    return out


def steer(scene: SceneModel, tree: SearchTree, node: TreeNode, params: PlannerParams,
          rng: np.random.Generator) -> list:
    """Expand ``node`` with one untried action (or all of them for ExpandAll)."""
    if node.exhausted:
        return []
    reach = params.effective_reach()
    if node.actions is None:
        try:
            node.actions = reachable_set(scene, node.pose, reach, rng.spawn(1)[0])
        except (EmptyReachableSet, NoValidGrasp):
            node.actions = []
        node.remaining = list(range(len(node.actions)))
    if not node.remaining:
        node.exhausted = True
        return []
    if params.ablation is Ablation.EXPAND_ALL:
        picks, node.remaining = node.remaining, []
    else:
        picks = [node.remaining.pop(int(rng.integers(len(node.remaining))))]
    if not node.remaining:
        node.exhausted = True
    new = []
    for a in picks:
        new.extend(_insert_segment(scene, tree, node, node.actions[a], params, reach))
    return new


def _solution(tree: SearchTree, node_id: int) -> list:
    return [n.segment for n in tree.chain(node_id) if n.segment is not None]


def plan(scene: SceneModel, start: Configuration, params: PlannerParams, rng: np.random.Generator,
         clock=time.perf_counter) -> Plan:
    t0 = clock()
    tree = SearchTree()
    root = tree.add(None, start.q_o)

    def finish(segs, success, it, reason):
        return Plan(segs, success, clock() - t0, len(tree), it, reason, tree, start)

    if goal_test(root.pose, params):
        return finish([], True, 0, "goal")
    it = 0
    while True:
        if it >= params.iteration_cap:
            return finish([], False, it, "iteration_cap")
        if clock() - t0 >= params.wall_clock_cap:
            return finish([], False, it, "wall_clock_cap")
        it += 1
        target = sample_subgoal(params, rng)
        node = select_nearest(tree, target)
        if node is None:
            return finish([], False, it, "exhausted")
        for new in steer(scene, tree, node, params, rng):
            if goal_test(new.pose, params):
                return finish(_solution(tree, new.id), True, it, "goal")


@dataclass(frozen=True)
class SegmentRecord:
    """Replayable description of a segment with an optionally decimated log."""

    start: np.ndarray
    setpoints: np.ndarray
    n_steps: int
    n_settle: int
    stride: int
    states: np.ndarray
    tail: np.ndarray
    final: np.ndarray
    termination: str

    @classmethod
    def from_segment(cls, seg: TrajectorySegment, stride: int = 1) -> "SegmentRecord":
        if stride < 1:
            raise ValueError("stride must be >= 1")
        tail = seg.settle_tail
        final = tail[-1] if len(tail) else seg.states[-1]
        return cls(seg.states[0].copy(), np.asarray(seg.setpoints, dtype=float), len(seg.states) - 1, len(tail),
                   stride, seg.states[::stride].copy(), tail[::stride].copy(), final.copy(), seg.termination.value)


def _compare(ref, got, seg_i, offset, stride, tol):
    diff = np.abs(ref - got[::stride][: len(ref)])
    bad = np.flatnonzero(np.max(diff, axis=1) > tol) if len(diff) else []
    if len(ref) != len(got[::stride]):
        raise ReplayDivergence(seg_i, offset + min(len(ref), len(got[::stride])) * stride, math.inf)
    if len(bad):
        raise ReplayDivergence(seg_i, offset + int(bad[0]) * stride, float(diff[bad[0]].max()))


def replay_segment(scene: SceneModel, rec: SegmentRecord, params: ReachParams) -> tuple:
    """Re-simulate one segment; returns (rollout states, settle tail)."""
    states = np.empty((rec.n_steps + 1, 10))
    _sim.replay_rollout_kernel(scene.packed, rec.start[:5].copy(), np.asarray(rec.setpoints, dtype=float),
                               len(rec.setpoints), rec.n_steps, params.dt_action, params.kp, params.kd, states)
    tail, _ = settle_tail(scene, states[-1], params)
    return states, tail


def replay(scene: SceneModel, segments, params: ReachParams = ReachParams(), tol: float = 1e-9,
           check_residuals: bool = False, residual_tol: float = 1e-2) -> Pose2:
    """Re-execute every segment from its stored start and setpoint schedule.

    ``segments`` holds TrajectorySegments or SegmentRecords. Raises
    ReplayDivergence at the first state that differs by more than ``tol``
    or when consecutive segments do not chain. Returns the final pose.
    """
    recs = [s if isinstance(s, SegmentRecord) else SegmentRecord.from_segment(s) for s in segments]
    final = None
    for i, rec in enumerate(recs):
        if final is not None and np.max(np.abs(rec.start[2:5] - final[2:5])) > tol:
            raise ReplayDivergence(i, 0, float(np.max(np.abs(rec.start[2:5] - final[2:5]))))
        states, tail = replay_segment(scene, rec, params)
        _compare(rec.states, states, i, 0, rec.stride, tol)
        if len(tail) != rec.n_settle:
            raise ReplayDivergence(i, rec.n_steps + 1 + min(len(tail), rec.n_settle), math.inf)
        _compare(rec.tail, tail, i, rec.n_steps + 1, rec.stride, tol)
        end = tail[-1] if len(tail) else states[-1]
        err = float(np.max(np.abs(end - rec.final)))
        if err > tol:
            raise ReplayDivergence(i, rec.n_steps + rec.n_settle, err)
        if check_residuals:
            r = replay_residuals(scene, states, params.dt_action, with_finger=True)
            if len(r) and np.max(np.abs(r)) > residual_tol:
                raise ReplayDivergence(i, int(np.argmax(np.max(np.abs(r), axis=1))) + 1, float(np.max(np.abs(r))))
        final = end
    if final is None:
        raise ValueError("nothing to replay")
    return Pose2.from_array(final[2:5])
