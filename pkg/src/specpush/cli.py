"""Command-line front end: plan, replay, render and bench.

Exit codes: 0 success, 1 input error, 2 cap exhaustion, 3 replay divergence.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .planner import Ablation, ReplayDivergence, plan, replay
from .reachset import reachable_set
from .render import render_archive, render_plan, render_reachable_set
from .scenario import (PlanMismatch, SceneError, archive_segments, bundled_scene, load_plan, load_scene,
                       make_archive, save_plan)

EXIT_OK, EXIT_INPUT, EXIT_CAP, EXIT_DIVERGED = 0, 1, 2, 3
WORKERS_ENV = "SPECPUSH_WORKERS"
ABLATION_ORDER = (Ablation.NONE, Ablation.EXPAND_ALL, Ablation.NO_KMEANS, Ablation.NO_FILTER, Ablation.RANDOM_DIRS)
TABLE_COLUMNS = ("ablation", "runs", "success", "time_s", "modes", "branches", "length_m")

log = logging.getLogger("specpush")


class InputError(Exception):
    pass


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InputError(f"{WORKERS_ENV} must be an integer") from None
    return os.cpu_count() or 1


def resolve_scene(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    try:
        return bundled_scene(name)
    except SceneError:
        raise InputError(f"scene not found: {name}") from None


def _load(args):
    try:
        return load_scene(resolve_scene(args.scene))
    except SceneError as e:
        raise InputError(str(e)) from None


def _params(task, args, ablation=None):
    params = task.params
    reach = replace(params.reach, workers=args.workers or default_workers())
    kw = {"reach": reach}
    if ablation is not None:
        kw["ablation"] = ablation
    if getattr(args, "max_time", None) is not None:
        kw["wall_clock_cap"] = args.max_time
    if getattr(args, "max_iterations", None) is not None:
        kw["iteration_cap"] = args.max_iterations
    try:
        return replace(params, **kw)
    except ValueError as e:
        raise InputError(str(e)) from None


def _seed(task, args):
    return task.seed if args.seed is None else args.seed


def run_plan(task, params, seed):
    return plan(task.scene, task.start, params, np.random.default_rng(seed))


def cmd_plan(args) -> int:
    task = _load(args)
    ablation = Ablation(args.ablation)
    params = _params(task, args, ablation)
    seed = _seed(task, args)
    result = run_plan(task, params, seed)
    archive = make_archive(result, task.scene_hash, seed, ablation, args.decimation)
    if args.out:
        save_plan(args.out, archive)
    if args.svg:
        render_plan(task.scene, result, args.svg, params.goal_center, params.r_terminal)
    print(result.summary(), flush=True)
    return EXIT_OK if result.success else EXIT_CAP


def cmd_replay(args) -> int:
    task = _load(args)
    try:
        archive = load_plan(args.plan, task.scene_hash)
    except (OSError, ValueError) as e:
        if isinstance(e, PlanMismatch):
            print(str(e), file=sys.stderr)
        raise InputError(str(e)) from None
    segs = archive_segments(archive)
    if not segs:
        print("nothing to replay (empty plan)")
        return EXIT_OK if archive.success else EXIT_CAP
    try:
        pose = replay(task.scene, segs, task.params.reach, tol=args.tol, check_residuals=args.residuals)
    except ReplayDivergence as e:
        print(str(e), file=sys.stderr)
        return EXIT_DIVERGED
    print(f"replay ok: final pose x={pose.x:.6f} y={pose.y:.6f} theta={pose.theta:.6f}")
    return EXIT_OK


def cmd_render(args) -> int:
    task = _load(args)
    goal, r = task.params.goal_center, task.params.r_terminal
    if args.bench:
        root = Path(args.bench) / "archives"
        if not root.is_dir():
            raise InputError(f"not a bench directory: {args.bench}")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for ab in ABLATION_ORDER:
            files = sorted((root / ab.value).glob("seed*.jsonl"), key=lambda p: int(p.stem[4:]))
            if files:
                render_archive(task.scene, load_plan(files[0], task.scene_hash), out / f"tree_{ab.value}.svg", goal, r)
        return EXIT_OK
    if args.plan:
        try:
            archive = load_plan(args.plan, task.scene_hash)
        except (OSError, ValueError) as e:
            raise InputError(str(e)) from None
        render_archive(task.scene, archive, args.out, goal, r)
        return EXIT_OK
    params = _params(task, args)
    segs = reachable_set(task.scene, task.start.q_o, params.effective_reach(), np.random.default_rng(_seed(task, args)))
    render_reachable_set(task.scene, task.start.q_o, segs, args.out)
    return EXIT_OK


def _fmt_mean(values, fmt):
    return format(float(np.mean(values)), fmt) if values else "~"


def aggregate(rows) -> list:
    """Per-ablation table; metrics other than success use successful runs only."""
    table = []
    for ab in ABLATION_ORDER:
        runs = [r for r in rows if r["ablation"] == ab.value]
        if not runs:
            continue
        ok = [r for r in runs if r["success"]]
        table.append({
            "ablation": ab.value, "runs": str(len(runs)), "success": f"{len(ok) / len(runs):.2f}",
            "time_s": _fmt_mean([r["wall_time"] for r in ok], ".2f"),
            "modes": _fmt_mean([r["modes"] for r in ok], ".2f"),
            "branches": _fmt_mean([r["branches"] for r in ok], ".1f"),
            "length_m": _fmt_mean([r["path_length"] for r in ok], ".3f"),
        })
    return table


def format_table(table) -> str:
    lines = ["\t".join(TABLE_COLUMNS)]
    lines += ["\t".join(row[c] for c in TABLE_COLUMNS) for row in table]
    return "\n".join(lines) + "\n"


def cmd_bench(args) -> int:
    task = _load(args)
    if args.seeds < 1:
        raise InputError("--seeds must be >= 1")
    if args.ablations == "all":
        ablations = list(ABLATION_ORDER)
    else:
        try:
            ablations = [Ablation(a.strip()) for a in args.ablations.split(",")]
        except ValueError as e:
            raise InputError(str(e)) from None
    out = Path(args.out)
    rows = []
    for ab in ablations:
        (out / "archives" / ab.value).mkdir(parents=True, exist_ok=True)
        params = _params(task, args, ab)
        for seed in range(args.seed_start, args.seed_start + args.seeds):
            try:
                result = run_plan(task, params, seed)
                save_plan(out / "archives" / ab.value / f"seed{seed}.jsonl",
                          make_archive(result, task.scene_hash, seed, ab, args.decimation))
                m = result.metrics()
                row = {"ablation": ab.value, "seed": seed, **m, "stop": result.stop_reason}
            except Exception as e:  # a failed run is an unsuccessful row
                log.warning("run %s seed %d failed: %s", ab.value, seed, e)
                row = {"ablation": ab.value, "seed": seed, "success": False, "wall_time": 0.0, "modes": 0,
                       "branches": 0, "path_length": 0.0, "iterations": 0, "stop": f"error: {type(e).__name__}"}
            rows.append(row)
            print(f"ablation={ab.value} seed={seed} success={int(row['success'])} time={row['wall_time']:.2f} "
                  f"modes={row['modes']} branches={row['branches']} length={row['path_length']:.3f}", flush=True)
    keys = ("ablation", "seed", "success", "wall_time", "modes", "branches", "path_length", "iterations", "stop")
    with open(out / "runs.tsv", "w") as f:
        f.write("\t".join(keys) + "\n")
        for r in rows:
            f.write("\t".join(str(int(r[k])) if k == "success" else str(r[k]) for k in keys) + "\n")
    text = format_table(aggregate(rows))
    (out / "table.tsv").write_text(text)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="specpush", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--scene", required=True, help="scene file or bundled scene name")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="defaults to the scene file's seed")
        sp.add_argument("--workers", type=int, default=None, help=f"worker threads (default ${WORKERS_ENV} or CPU count)")

    sp = sub.add_parser("plan", help="run the planner and write a plan archive")
    common(sp)
    sp.add_argument("--ablation", default="none", choices=[a.value for a in Ablation])
    sp.add_argument("--max-time", type=float, default=None, help="wall-clock cap [s]")
    sp.add_argument("--max-iterations", type=int, default=None)
    sp.add_argument("--decimation", type=int, default=1, help="keep every n-th logged state")
    sp.add_argument("--out", default=None, help="plan archive path (.jsonl)")
    sp.add_argument("--svg", default=None, help="also draw the tree and solution")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("replay", help="re-simulate a plan archive")
    common(sp, seed=False)
    sp.add_argument("--plan", required=True)
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.add_argument("--residuals", action="store_true", help="also check object-row residuals")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("render", help="draw a plan, a bench directory or the start reachable set")
    common(sp)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--plan", default=None)
    g.add_argument("--bench", default=None)
    sp.add_argument("--out", required=True, help="SVG path (directory for --bench)")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("bench", help="ablation sweep over seeds")
    common(sp, seed=False)
    sp.add_argument("--seeds", type=int, required=True)
    sp.add_argument("--seed-start", type=int, default=0)
    sp.add_argument("--ablations", default="all", help="'all' or comma-separated names")
    sp.add_argument("--max-time", type=float, default=None)
    sp.add_argument("--max-iterations", type=int, default=None)
    sp.add_argument("--decimation", type=int, default=10)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    if getattr(args, "decimation", 1) < 1:
        print("error: --decimation must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
