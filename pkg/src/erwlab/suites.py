"""Fixed ensemble configurations for the desk-scale checks.

The heavy ones are computed once (``scripts/run_heavy.py``) and cached;
everything else reads them back through ``run_ensemble(..., cache_dir=...)``.
"""

from pathlib import Path

from erwlab.experiments import EnsembleConfig, geometric_schedule
from erwlab.lattice import Site

SCALING = EnsembleConfig(geometric_schedule(2**10, 2**24), 10_000, master_seed=101)
RANGE_HORIZONS = geometric_schedule(2**12, 2**24)
TAIL = EnsembleConfig((2**20,), 100_000, master_seed=202)
MARTINGALE = EnsembleConfig((100_000,), 10_000, master_seed=303)

CONDITIONED_T = 100_000
CONDITIONED_REPLICAS = 10_000
CONDITIONED_SEED = 404
CONDITIONED_TARGETS = (Site(1, 0, 0), Site(5, 5, 0))

CYLINDER_T = 2**20
CYLINDER_R = 4
CYLINDER_REPLICAS = 10_000
CYLINDER_SEED = 505

COUPLING_RUNS = 1_000
COUPLING_T = 100_000
COUPLING_SEED = 606


def cache_dir() -> Path:
    """``ERWLAB_CACHE`` if set, else ``.erwlab-cache`` at the repository root."""
    import os

    env = os.environ.get("ERWLAB_CACHE")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / ".erwlab-cache"
