"""Write the tables behind the three bundled scenarios into one directory.

    python scripts/reproduce_examples.py out/ [--with-mpc]

example43: value grid, characteristics vs Lax-Friedrichs, alignment
comparator; example44: game value surfaces on the 41 x 41 grid;
example45 (optional, slow): Monte Carlo comparison of open loop and MPC.
"""

import argparse
import sys
from pathlib import Path

from hjchar import cli


def run(*argv):
    status = cli.main(list(argv))
    if status != 0:
        sys.exit(status)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--with-mpc", action="store_true")
    ap.add_argument("--threads", default="1")
    args = ap.parse_args()
    out = Path(args.out)
    run("grid", "--config", "example43", "--out", str(out / "example43"), "--threads", args.threads)
    run("fd-compare", "--config", "example43", "--out", str(out / "example43"), "--threads", args.threads)
    run("bvp-compare", "--config", "example43", "--out", str(out / "example43"), "--threads", args.threads)
    run("game", "--config", "example44", "--out", str(out / "example44"))
    if args.with_mpc:
        run("mpc", "--config", "example45", "--out", str(out / "example45"), "--threads", args.threads)
