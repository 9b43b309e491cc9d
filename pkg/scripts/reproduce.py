#!/usr/bin/env python3
"""End-to-end reproduction: train the networks, then compare all searchers.

Produces the proportion-correct table and per-saccade fixation maps for the
MAP, lookahead (ideal), and Q-network searchers on the default 85-location
task, using one root seed for everything.  Checkpoints are reused when they
already exist so the expensive steps run once.

  python3 scripts/reproduce.py --out results/ [--trials 3400] [--seed N]
"""

import argparse
import sys
from pathlib import Path

from fovsearch.cli import CHECKPOINT_PATTERN, main as cli_main


def run(argv) -> int:
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--trials", type=int, default=3400)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--config", type=Path, default=None)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--budget", type=int, default=3,
                    help="saccade budget of the config (for checkpoint checks)")
    args = ap.parse_args(argv)

    ckpt_dir = args.out / "checkpoints"
    seed_flags = ["--seed", str(args.seed)] if args.seed is not None else []
    config_flags = ["--config", str(args.config)] if args.config else []

    have = all((ckpt_dir / CHECKPOINT_PATTERN.format(t=t)).exists()
               for t in range(1, args.budget + 1))
    if not have:
        print("== training per-saccade networks ==", flush=True)
        rc = cli_main(["train", "--out", str(ckpt_dir),
                       *seed_flags, *config_flags])
        if rc != 0:
            return rc
    else:
        print(f"== reusing checkpoints in {ckpt_dir} ==")

    print("== paired comparison battery ==", flush=True)
    return cli_main(["compare", "--out", str(args.out / "report"),
                     "--checkpoints", str(ckpt_dir),
                     "--trials", str(args.trials),
                     "--threads", str(args.threads),
                     *seed_flags, *config_flags])


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
