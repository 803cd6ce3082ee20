import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specpush.geometry import Pose2
from specpush.planner import (Ablation, PlannerParams, ReplayDivergence, SearchTree, SegmentRecord, goal_test,
                              node_indices, plan, replay, sample_subgoal, select_nearest, steer)
from specpush.scenario import bundled_scene, load_scene

GOAL = Pose2(0.5, 0.05, 0.0)


@pytest.fixture(scope="module")
def pusher():
    return load_scene(bundled_scene("planar_pusher"))


@pytest.fixture(scope="module")
def pusher_plan(pusher):
    return plan(pusher.scene, pusher.start, pusher.params, np.random.default_rng(3))


# ---- params and sampling


@pytest.mark.parametrize("kw", [{"alpha": -0.1}, {"alpha": 1.1}, {"r_terminal": 0.0}, {"iteration_cap": 0},
                                {"wall_clock_cap": 0.0}, {"n_nodes": 0}, {"sample_box": ((0, 1), (0, 1))},
                                {"sample_box": ((1, 0), (0, 1), (0, 1))}])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        PlannerParams(GOAL, **kw)


def test_alpha_one_always_goal():
    p = PlannerParams(GOAL, alpha=1.0)
    rng = np.random.default_rng(0)
    assert all(sample_subgoal(p, rng) is GOAL for _ in range(1000))


def test_alpha_zero_never_goal_and_stays_in_box():
    p = PlannerParams(GOAL, alpha=0.0, sample_box=((0, 1), (2, 3), (-1, 1)))
    rng = np.random.default_rng(0)
    for _ in range(1000):
        s = sample_subgoal(p, rng)
        assert s is not GOAL
        assert 0 <= s.x <= 1 and 2 <= s.y <= 3 and -1 <= s.theta <= 1


@pytest.mark.parametrize("seed", range(5))
def test_goal_bias_frequency(seed):
    n, alpha = 10_000, 0.2
    p = PlannerParams(GOAL, alpha=alpha)
    rng = np.random.default_rng(seed)
    hits = sum(sample_subgoal(p, rng) is GOAL for _ in range(n))
    assert abs(hits / n - alpha) <= 3 * math.sqrt(alpha * (1 - alpha) / n)


# ---- select, spacing, goal test


def tree_at(points):
    t = SearchTree()
    for i, (x, y) in enumerate(points):
        t.add(None if i == 0 else 0, Pose2(x, y, 0.0))
    return t


def test_select_single_root():
    t = tree_at([(5, 5)])
    assert select_nearest(t, Pose2(0, 0, 0)).id == 0


def test_select_closer_node():
    t = tree_at([(2, 0), (1, 0)])
    assert select_nearest(t, Pose2(0, 0, 0)).id == 1


def test_select_tie_goes_to_lower_id():
    t = tree_at([(5, 5), (1, 0), (-1, 0), (0, 1)])
    assert select_nearest(t, Pose2(0, 0, 3.0)).id == 1


def test_select_ignores_theta_and_skips_exhausted():
    t = tree_at([(0, 0), (1, 0)])
    t.nodes[0] = replace(t.nodes[0], pose=Pose2(0, 0, 3.0))
    assert select_nearest(t, Pose2(0, 0, 0)).id == 0
    t.nodes[0].exhausted = True
    assert select_nearest(t, Pose2(0, 0, 0)).id == 1
    t.nodes[1].exhausted = True
    assert select_nearest(t, Pose2(0, 0, 0)) is None


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=1, max_size=20),
       st.integers(-5, 5), st.integers(-5, 5))
def test_select_is_argmin(points, tx, ty):
    t = tree_at(points)
    d = [math.hypot(x - tx, y - ty) for x, y in points]
    assert select_nearest(t, Pose2(tx, ty, 0)).id == int(np.argmin(d))


def test_node_indices_example():
    # states 0..800: nodes at {160, 320, 480, 640} and the end
    assert node_indices(801, 5) == [160, 320, 480, 640, 800]


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 5000), st.integers(1, 10))
def test_node_indices_properties(n_states, n_nodes):
    idx = node_indices(n_states, n_nodes)
    assert idx[-1] == n_states - 1
    assert 1 <= len(idx) <= n_nodes
    assert idx == sorted(set(idx)) and idx[0] >= 1


@pytest.mark.parametrize("d,expected", [(0.0, True), (0.2, True), (0.202, False), (1.0, False)])
def test_goal_test_closed_ball(d, expected):
    p = PlannerParams(GOAL, r_terminal=0.2)
    a = 0.7
    pose = Pose2(GOAL.x + d * math.cos(a), GOAL.y + d * math.sin(a), 2.0)
    if d == 0.2:
        # exactly on the boundary in floating point
        pose = Pose2(GOAL.x + 0.2, GOAL.y, 2.0)
    assert goal_test(pose, p) is expected


def test_goal_test_theta_tolerance():
    p = PlannerParams(GOAL, theta_tol=0.1)
    assert goal_test(Pose2(GOAL.x, GOAL.y, 0.05), p)
    assert not goal_test(Pose2(GOAL.x, GOAL.y, 0.2), p)
    assert goal_test(Pose2(GOAL.x, GOAL.y, 2 * math.pi + 0.05), p)


def test_effective_reach_switches():
    p = PlannerParams(GOAL)
    assert p.effective_reach() == p.reach
    assert not PlannerParams(GOAL, ablation=Ablation.NO_FILTER).effective_reach().use_filter
    assert not PlannerParams(GOAL, ablation=Ablation.NO_KMEANS).effective_reach().use_kmeans
    assert PlannerParams(GOAL, ablation=Ablation.RANDOM_DIRS).effective_reach().random_dirs


# ---- search


def test_goal_equal_start_succeeds_immediately(pusher):
    params = replace(pusher.params, goal_center=pusher.start.q_o)
    result = plan(pusher.scene, pusher.start, params, np.random.default_rng(0))
    assert result.success and result.segments == [] and result.branches == 1 and result.modes == 0
    assert result.path_length == 0.0


def test_iteration_cap_reports_partial_stats(pusher):
    params = replace(pusher.params, iteration_cap=1)
    result = plan(pusher.scene, pusher.start, params, np.random.default_rng(0))
    assert not result.success and result.stop_reason == "iteration_cap"
    assert result.iterations == 1 and result.branches >= 1


def test_steer_growth_and_exhaustion(pusher):
    params = pusher.params
    tree = SearchTree()
    root = tree.add(None, pusher.start.q_o)
    rng = np.random.default_rng(1)
    sizes = [len(tree)]
    while not root.exhausted:
        new = steer(pusher.scene, tree, root, params, rng)
        sizes.append(len(tree))
        if new:
            assert 1 <= len(new) <= params.n_nodes
            assert all(n.parent == root.id and n.depth == 1 for n in new)
    assert sizes == sorted(sizes)
    assert len(root.actions) <= params.reach.n_clusters
    before = len(tree)
    assert steer(pusher.scene, tree, root, params, rng) == [] and len(tree) == before


def test_expand_all_adds_every_action(pusher):
    params = replace(pusher.params, ablation=Ablation.EXPAND_ALL)
    tree = SearchTree()
    root = tree.add(None, pusher.start.q_o)
    new = steer(pusher.scene, tree, root, params, np.random.default_rng(1))
    assert root.exhausted
    assert len(root.actions) < len(new) <= params.n_nodes * len(root.actions)


def test_plan_succeeds_and_tree_well_formed(pusher, pusher_plan):
    p = pusher_plan
    assert p.success and p.modes == len(p.segments) >= 1
    assert goal_test(p.final_pose, pusher.params)
    nodes = p.tree.nodes
    assert nodes[0].parent is None and p.branches == len(nodes)
    for n in nodes[1:]:
        assert 0 <= n.parent < n.id
        assert n.depth == nodes[n.parent].depth + 1
        # pose is the settled end of the stored segment, which starts at the parent pose
        assert n.pose == n.segment.final_pose
        np.testing.assert_array_equal(n.segment.states[0, 2:5], nodes[n.parent].pose.as_array())


def test_solution_chains(pusher, pusher_plan):
    segs = pusher_plan.segments
    np.testing.assert_array_equal(segs[0].states[0, 2:5], pusher.start.q_o.as_array())
    for a, b in zip(segs, segs[1:]):
        assert np.max(np.abs(a.final.q_o.as_array() - b.states[0, 2:5])) <= 1e-9
    assert pusher_plan.path_length == pytest.approx(sum(s.path_length() for s in segs))


def test_replay_matches_bitwise(pusher, pusher_plan):
    final = replay(pusher.scene, pusher_plan.segments, pusher.params.reach, tol=0.0, check_residuals=True)
    assert final == pusher_plan.final_pose


def test_replay_detects_corruption(pusher, pusher_plan):
    rec = SegmentRecord.from_segment(pusher_plan.segments[0])
    states = rec.states.copy()
    k = len(states) // 2
    states[k, 2] += 1e-6
    bad = replace(rec, states=states)
    with pytest.raises(ReplayDivergence, match="replay divergence") as e:
        replay(pusher.scene, [bad] + pusher_plan.segments[1:], pusher.params.reach)
    assert e.value.segment == 0 and e.value.index == k


def test_replay_detects_broken_chain(pusher, pusher_plan):
    segs = pusher_plan.segments
    if len(segs) < 2:
        pytest.skip("single-segment solution")
    with pytest.raises(ReplayDivergence) as e:
        replay(pusher.scene, [segs[1], segs[0]], pusher.params.reach)
    assert e.value.segment == 1


def test_plan_is_seed_deterministic(pusher, pusher_plan):
    again = plan(pusher.scene, pusher.start, pusher.params, np.random.default_rng(3))
    assert again.branches == pusher_plan.branches and again.iterations == pusher_plan.iterations
    for a, b in zip(again.segments, pusher_plan.segments):
        assert a.states.tobytes() == b.states.tobytes()
