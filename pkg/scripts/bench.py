"""Ablation sweep on a scene; writes archives, runs.tsv and table.tsv.

    python3 scripts/bench.py --scene maze2d --seeds 20 --out bench/maze2d
"""
import argparse
import sys

from specpush import cli


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--scene", default="maze2d")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--ablations", default="all")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="bench/maze2d")
    a = p.parse_args()
    argv = ["bench", "--scene", a.scene, "--seeds", str(a.seeds), "--ablations", a.ablations,
            "--workers", str(a.workers), "--out", a.out]
    code = cli.main(argv)
    if code == cli.EXIT_OK:
        code = cli.main(["render", "--scene", a.scene, "--bench", a.out, "--out", f"{a.out}/figures"])
    return code


if __name__ == "__main__":
    sys.exit(main())
