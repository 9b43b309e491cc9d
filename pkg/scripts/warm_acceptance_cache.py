#!/usr/bin/env python3
"""Prebuild the expensive artifacts the acceptance tests need.

The acceptance suite caches trained networks and 3400-trial batteries under
.acceptance_cache/, keyed by configuration digest, and rebuilds anything
missing on demand.  Cold rebuilds take a few hours single-threaded, so this
script exists to front-load that work in a resumable way: each artifact is
written as soon as it finishes, and rerunning skips whatever already exists.

Usage:
    python3 scripts/warm_acceptance_cache.py
"""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from test_acceptance import build_battery, build_default_stack  # noqa: E402

from fovsearch import qlearn as ql  # noqa: E402
from fovsearch import searchers as sr  # noqa: E402
from fovsearch.task import default_task  # noqa: E402
from test_acceptance import _train_digest  # noqa: E402


def main() -> int:
    t0 = time.time()
    print("[warm] training default network stack (cached if present)",
          flush=True)
    models, stack_dir = build_default_stack(verbose=True)
    print(f"[warm] stack ready at {stack_dir} ({time.time() - t0:.0f}s)",
          flush=True)

    for name, searcher, extra in [
        ("map", sr.MAPSearcher(), ""),
        ("qnet", sr.QNetSearcher(models=tuple(models)),
         _train_digest(default_task(), ql.TrainingConfig())),
        ("is", sr.IdealSearcher(), ""),
    ]:
        t1 = time.time()
        logs = build_battery(name, searcher, extra=extra, verbose=True)
        print(f"[warm] {name} battery: {len(logs)} trials "
              f"({time.time() - t1:.0f}s)", flush=True)
    print(f"[warm] all artifacts ready ({time.time() - t0:.0f}s total)",
          flush=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
