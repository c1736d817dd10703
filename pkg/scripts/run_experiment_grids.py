#!/usr/bin/env python3
"""Run the reference experiment grids and emit CSVs plus SVG curves.

Grid 1 sweeps the symmetric arrival rate (throughput and delay curves for
the optimized policy and both baselines); grid 2 fixes lambda_a = 0.5 and
sweeps lambda_b (the asymmetric power curves). Results land under out/grid1
and out/grid2. Expect a few minutes at the default one-million-slot
horizon; trim --horizon for a quick look.
"""

import argparse
import sys
import tempfile
from pathlib import Path

from twronc.cli import main as twronc_main

SYMMETRIC = """
[sim]
horizon = {horizon}
warmup = 10000
seeds = {seeds}

[sweep]
variable = lambda_ab
start = 0.1
stop = 0.9
step = 0.1
"""

ASYMMETRIC = """
[system]
lambda_a = 0.5

[sim]
horizon = {horizon}
warmup = 10000
seeds = {seeds}

[sweep]
variable = lambda_b
start = 0.1
stop = 0.9
step = 0.1
"""


def run(config_text: str, out_dir: Path) -> int:
    with tempfile.NamedTemporaryFile("w", suffix=".ini", delete=False) as fh:
        fh.write(config_text)
        path = fh.name
    return twronc_main(["sweep", "--config", path, "--out", str(out_dir), "--emit-plots"])


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out", help="output root (default: out)")
    parser.add_argument("--horizon", type=int, default=1_000_000)
    parser.add_argument("--seeds", default="1,2,3")
    args = parser.parse_args()
    root = Path(args.out)
    for name, template in (("grid1", SYMMETRIC), ("grid2", ASYMMETRIC)):
        code = run(template.format(horizon=args.horizon, seeds=args.seeds), root / name)
        if code != 0:
            return code
        print(f"{name} done -> {root / name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
