"""Compute and cache the large ensembles used by the acceptance checks.

Usage: python scripts/run_heavy.py [--threads N] [name ...]
Names: martingale, conditioned, cylinder, scaling, tail (default: all).
"""

import argparse
import sys
import time

from erwlab import suites
from erwlab.experiments import (
    conditioned_visit_bound_experiment, cylinder_visits, run_ensemble,
)


def _log(msg):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", file=sys.stderr, flush=True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("names", nargs="*")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    cache = suites.cache_dir()
    jobs = {
        "martingale": lambda: run_ensemble(suites.MARTINGALE, args.threads, cache),
        "conditioned": lambda: [conditioned_visit_bound_experiment(
            v, suites.CONDITIONED_T, suites.CONDITIONED_REPLICAS, suites.CONDITIONED_SEED,
            args.threads, cache) for v in suites.CONDITIONED_TARGETS],
        "cylinder": lambda: cylinder_visits(suites.CYLINDER_T, suites.CYLINDER_R,
                                            suites.CYLINDER_REPLICAS, suites.CYLINDER_SEED,
                                            args.threads, cache),
        "scaling": lambda: run_ensemble(suites.SCALING, args.threads, cache),
        "tail": lambda: run_ensemble(suites.TAIL, args.threads, cache),
    }
    for name in args.names or list(jobs):
        t0 = time.time()
        _log(f"{name}: start")
        jobs[name]()
        _log(f"{name}: done in {time.time() - t0:.0f} s")


if __name__ == "__main__":
    main()
