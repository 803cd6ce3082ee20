import xml.etree.ElementTree as ET

import numpy as np
import pytest

from specpush.geometry import Pose2
from specpush.planner import SearchTree
from specpush.reachset import TrajectorySegment, Termination
from specpush.render import render_archive, render_plan, render_reachable_set, render_svg, tree_branches
from specpush.scenario import bundled_scene, load_scene

NS = "{http://www.w3.org/2000/svg}"


@pytest.fixture(scope="module")
def task():
    return load_scene(bundled_scene("planar_pusher"))


def polylines(svg, cls=None):
    root = ET.fromstring(svg)
    return [e for e in root.iter(f"{NS}polyline") if cls is None or e.get("class") == cls]


def fake_segment(path):
    rows = np.zeros((len(path), 10))
    rows[:, 2:4] = path
    return TrajectorySegment(rows, np.empty((0, 10)), None, Termination.STOPPED, np.empty((0, 3)), 1e-2, 1e-3)


def three_node_tree():
    t = SearchTree()
    t.add(None, Pose2(0, 0.05, 0))
    t.add(0, Pose2(0.1, 0.05, 0), fake_segment([[0, 0.05], [0.05, 0.05], [0.1, 0.05]]))
    t.add(1, Pose2(0.2, 0.05, 0), fake_segment([[0.1, 0.05], [0.2, 0.05]]))
    return t


def test_empty_tree_is_scene_only(task):
    svg = render_svg(task.scene, branches=tree_branches(SearchTree()))
    root = ET.fromstring(svg)
    assert root.tag == f"{NS}svg" and root.get("version") == "1.1"
    assert polylines(svg) == []
    assert len([e for e in root.iter(f"{NS}polygon") if e.get("class") == "env"]) == len(task.scene.environment)


def test_three_node_tree_has_two_branches(task):
    svg = render_svg(task.scene, branches=tree_branches(three_node_tree()))
    assert len(polylines(svg, "branch")) == 2


def test_deterministic_bytes(task, tmp_path):
    kw = dict(start=task.start.q_o, goal=task.params.goal_center, r_terminal=0.2,
              branches=tree_branches(three_node_tree()))
    a = render_svg(task.scene, tmp_path / "a.svg", **kw)
    b = render_svg(task.scene, tmp_path / "b.svg", **kw)
    assert a == b and (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    assert "-0.00" not in a


def test_unwritable_path(task, tmp_path):
    with pytest.raises(OSError):
        render_svg(task.scene, tmp_path / "missing" / "x.svg")


def test_plan_and_archive_renderings_agree(task):
    from specpush.planner import plan
    from specpush.scenario import make_archive

    p = plan(task.scene, task.start, task.params, np.random.default_rng(3))
    live = render_plan(task.scene, p, goal=task.params.goal_center, r_terminal=0.2)
    stored = render_archive(task.scene, make_archive(p, task.scene_hash, 3), goal=task.params.goal_center,
                            r_terminal=0.2)
    assert len(polylines(live, "branch")) == len(polylines(stored, "branch")) == p.branches - 1
    assert len(polylines(live, "solution")) == len(polylines(stored, "solution")) == p.modes


def test_reachable_set_rendering(task):
    segs = [fake_segment([[0, 0.05], [0.1, 0.05]]), fake_segment([[0, 0.05], [-0.1, 0.05]])]
    svg = render_reachable_set(task.scene, task.start.q_o, segs)
    assert len(polylines(svg, "reach")) == 2
    assert len([e for e in ET.fromstring(svg).iter(f"{NS}circle") if e.get("class") == "node"]) == 2
