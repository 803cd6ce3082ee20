"""Deterministic SVG drawings of scenes, search trees, plans and reachable sets."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .dynamics import SceneModel
from .geometry import Circle, Pose2, polygon_world, transform_point

PX_PER_M = 500.0
MARGIN = 0.05


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _shape_points(shape, pose: Pose2) -> np.ndarray:
    if isinstance(shape, Circle):
        a = np.linspace(0.0, 2.0 * np.pi, 33)[:-1]
        ring = shape.radius * np.stack([np.cos(a), np.sin(a)], axis=1)
        return np.array([transform_point(pose, p) for p in ring])
    return polygon_world(shape, pose)


class _Canvas:
    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float) - MARGIN
        self.hi = np.asarray(hi, dtype=float) + MARGIN
        self.w = (self.hi[0] - self.lo[0]) * PX_PER_M
        self.h = (self.hi[1] - self.lo[1]) * PX_PER_M
        self.items = []

    def pt(self, p) -> str:
        x = (p[0] - self.lo[0]) * PX_PER_M
        y = (self.hi[1] - p[1]) * PX_PER_M
        return f"{_fmt(x)},{_fmt(y)}"

    def polygon(self, pts, cls):
        self.items.append(f'<polygon class="{cls}" points="{" ".join(self.pt(p) for p in pts)}"/>')

    def polyline(self, pts, cls):
        self.items.append(f'<polyline class="{cls}" points="{" ".join(self.pt(p) for p in pts)}"/>')

    def circle(self, c, r, cls):
        x, y = self.pt(c).split(",")
        self.items.append(f'<circle class="{cls}" cx="{x}" cy="{y}" r="{_fmt(r * PX_PER_M)}"/>')

    def svg(self) -> str:
        style = (".env{fill:#9a9a9a;stroke:#555;stroke-width:1}"
                 ".start{fill:none;stroke:#1f5fbf;stroke-width:2}"
                 ".goal{fill:none;stroke:#bf1f1f;stroke-width:2;stroke-dasharray:6,4}"
                 ".branch{fill:none;stroke:#b0b0b0;stroke-width:1}"
                 ".reach{fill:none;stroke:#808080;stroke-width:1.5}"
                 ".solution{fill:none;stroke:#0a7a2f;stroke-width:3}"
                 ".node{fill:#606060}")
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_fmt(self.w)}" '
                f'height="{_fmt(self.h)}" viewBox="0 0 {_fmt(self.w)} {_fmt(self.h)}">')
        return "\n".join([head, f"<style>{style}</style>", '<rect width="100%" height="100%" fill="white"/>',
                          *self.items, "</svg>"]) + "\n"


def _bounds(scene: SceneModel, extra):
    pts = [_shape_points(s, p) for s, p in scene.environment]
    pts += [np.asarray(e, dtype=float).reshape(-1, 2) for e in extra if e is not None and len(e)]
    if not pts:
        return np.array([-0.5, -0.5]), np.array([0.5, 0.5])
    allp = np.vstack(pts)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    # keep very tall or wide environments readable
    return np.maximum(lo, hi - 5.0), np.minimum(hi, lo + 5.0)


def render_svg(scene: SceneModel, path=None, *, start: Pose2 | None = None, goal: Pose2 | None = None,
               r_terminal: float | None = None, branches=(), solution=(), reach=(), nodes=()) -> str:
    """Draw the scene plus optional COM polylines.

    ``branches`` (one polyline per tree edge), ``solution`` (highlighted
    path pieces) and ``reach`` (reachable-set segments) are sequences of
    (n, 2) arrays of COM positions. Returns the SVG text and writes it to
    ``path`` when given.
    """
    branches = [np.asarray(b, dtype=float).reshape(-1, 2) for b in branches]
    solution = [np.asarray(b, dtype=float).reshape(-1, 2) for b in solution]
    reach = [np.asarray(b, dtype=float).reshape(-1, 2) for b in reach]
    outlines = []
    if start is not None:
        outlines.append(("start", _shape_points(scene.object_shape, start)))
    if goal is not None:
        outlines.append(("goal", _shape_points(scene.object_shape, goal)))
    extra = [o for _, o in outlines] + branches + solution + reach
    if goal is not None and r_terminal:
        extra.append(np.array([[goal.x - r_terminal, goal.y - r_terminal], [goal.x + r_terminal, goal.y + r_terminal]]))
    cv = _Canvas(*_bounds(scene, extra))
    for s, p in scene.environment:
        cv.polygon(_shape_points(s, p), "env")
    if goal is not None and r_terminal:
        cv.circle((goal.x, goal.y), r_terminal, "goal")
    for b in branches:
        if len(b) >= 2:
            cv.polyline(b, "branch")
    for b in reach:
        if len(b) >= 2:
            cv.polyline(b, "reach")
    for b in solution:
        if len(b) >= 2:
            cv.polyline(b, "solution")
    for n in nodes:
        cv.circle(n, 0.004, "node")
    for cls, pts in outlines:
        cv.polygon(pts, cls)
    text = cv.svg()
    if path is not None:
        Path(path).write_text(text)
    return text


def tree_branches(tree) -> list:
    """COM polylines of every non-root node of an in-memory SearchTree."""
    return [n.segment.com_path() for n in tree.nodes if n.segment is not None]


def archive_branches(archive) -> list:
    return [np.array(n["path"]) for n in archive.nodes if n.get("path")]


def render_plan(scene, plan, path=None, goal=None, r_terminal=None) -> str:
    tree = plan.tree
    return render_svg(scene, path, start=plan.start.q_o if plan.start is not None else None, goal=goal,
                      r_terminal=r_terminal, branches=tree_branches(tree) if tree is not None else [],
                      solution=[s.com_path() for s in plan.segments])


def render_archive(scene, archive, path=None, goal=None, r_terminal=None) -> str:
    start = archive.header.get("start")
    sol = [np.vstack([np.array(s["states"])[:, 2:4], np.array(s["tail"]).reshape(-1, 10)[:, 2:4]])
           for s in archive.segments]
    return render_svg(scene, path, start=Pose2(*start[2:5]) if start else None, goal=goal, r_terminal=r_terminal,
                      branches=archive_branches(archive), solution=sol)


def render_reachable_set(scene, q_o: Pose2, segments, path=None) -> str:
    return render_svg(scene, path, start=q_o, reach=[s.com_path() for s in segments],
                      nodes=[(s.final_pose.x, s.final_pose.y) for s in segments])
