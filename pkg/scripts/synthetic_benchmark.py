"""Full pipeline on the synthetic duck curve: ingest, label, train all cells, evaluate.

    python scripts/synthetic_benchmark.py [--config configs/synthetic.yaml] [--out DIR]
"""

import argparse
import time
from pathlib import Path

from rampcast.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(config: str, out: str | None) -> int:
    common = ["--config", config] + (["--out", out] if out else [])
    for step in (["ingest"], ["label"], ["train", "--cell", "all"], ["evaluate"]):
        t0 = time.perf_counter()
        code = main(step + common)
        print(f"[{step[0]}] exit {code} in {time.perf_counter() - t0:.1f} s")
        if code:
            return code
    return 0


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(ROOT / "configs" / "synthetic.yaml"))
    p.add_argument("--out", default=None)
    args = p.parse_args()
    raise SystemExit(run(args.config, args.out))
