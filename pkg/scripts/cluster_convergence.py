"""Sensitivity of CPMG T2 to the cluster cap and the coupling threshold.

    python3 scripts/cluster_convergence.py --seed 1
"""

import argparse

from nvbath.config import load_config, parse_overrides, preset_path
from nvbath.runner import simulate

NS = (2, 4, 8, 16)


def t2s(seed, max_size, threshold):
    over = parse_overrides([f"sequences=[{{family: cpmg, n: {list(NS)}}}]"])
    over += [("seed", seed), ("partition.max_size", max_size), ("partition.threshold_khz", threshold)]
    res = simulate(load_config(preset_path("table1"), over))
    sizes = res.partition.sizes()
    return [c.fit.t2 for c in res.curves], max(sizes)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    print(f"{'cap':>4}{'thr kHz':>9}{'largest':>9}" + "".join(f"{'T2(' + str(n) + ')':>10}" for n in NS))
    for cap, thr in ((2, 0.1), (4, 0.1), (6, 0.1), (6, 0.05), (6, 0.2)):
        vals, big = t2s(args.seed, cap, thr)
        print(f"{cap:>4}{thr:>9.2f}{big:>9}" + "".join(f"{v:>10.2f}" for v in vals), flush=True)


if __name__ == "__main__":
    main()
