"""Run (or reuse) the trained-model experiments behind the acceptance suite.

Results land in ``.acceptance_runs/`` (override with DIFFINFO_ACCEPTANCE_DIR);
``pytest tests/test_acceptance.py`` then reuses them when configs and hashes match.

    python3 scripts/run_acceptance_experiments.py [gaussian-entropy] [cfg-mi]
"""

import os
import sys
import time
from pathlib import Path

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

from diffinfo.config import load_config  # noqa: E402
from diffinfo.runner import cached_run, format_report  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = {"gaussian-entropy": "gaussian_entropy.yaml", "cfg-mi": "cfg_mi.yaml"}


def main(names):
    cache = Path(os.environ.get("DIFFINFO_ACCEPTANCE_DIR", ROOT / ".acceptance_runs"))
    for name in names or CONFIGS:
        cfg = load_config(ROOT / "configs" / CONFIGS[name])
        t0 = time.perf_counter()
        result = cached_run(cfg, cache / name)
        print(f"{name}: {time.perf_counter() - t0:.0f}s")
        print(format_report(result.manifest))


if __name__ == "__main__":
    main(sys.argv[1:])
