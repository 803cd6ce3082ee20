"""Draw a reachable set and a solved tree for each bundled scene.

    python3 scripts/figures.py --out figures
"""
import argparse
from pathlib import Path

import numpy as np

from specpush.planner import plan
from specpush.reachset import reachable_set
from specpush.render import render_plan, render_reachable_set
from specpush.scenario import bundled_scene, load_scene


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", default="figures")
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("planar_pusher", "maze2d"):
        task = load_scene(bundled_scene(name))
        segs = reachable_set(task.scene, task.start.q_o, task.params.reach, np.random.default_rng(a.seed))
        render_reachable_set(task.scene, task.start.q_o, segs, out / f"{name}_reach.svg")
        result = plan(task.scene, task.start, task.params, np.random.default_rng(a.seed))
        render_plan(task.scene, result, out / f"{name}_tree.svg", task.params.goal_center, task.params.r_terminal)
        print(f"{name}: {result.summary()}")


if __name__ == "__main__":
    main()
