"""Effective T2 against pulse number for CPMG, UDD and XY, averaged over bath seeds.

    python3 scripts/t2_table.py --seeds 1 2 3 4 5
"""

import argparse
from collections import defaultdict

import numpy as np

from nvbath.analysis import t2_scaling
from nvbath.config import load_config, parse_overrides, preset_path
from nvbath.runner import simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--preset", default="table1")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    t2 = defaultdict(list)
    for seed in args.seeds:
        over = parse_overrides(args.set) + [("seed", seed), ("workers", args.workers)]
        res = simulate(load_config(preset_path(args.preset), over))
        for c in res.curves:
            t2[c.family, c.n].append(c.fit.t2 if c.fit is not None and c.fit.ok else np.nan)
        print(f"seed {seed}: {len(res.bath)} spins", flush=True)

    fams = sorted({f for f, _ in t2})
    ns = sorted({n for _, n in t2})
    print(f"\nT2 (us), mean +- std over {len(args.seeds)} seeds")
    print(f"{'n':>4}" + "".join(f"{f:>18}" for f in fams))
    for n in ns:
        row = f"{n:>4}"
        for f in fams:
            v = np.array(t2.get((f, n), []))
            row += f"{np.nanmean(v):>11.1f} +- {np.nanstd(v):<4.1f}" if v.size else f"{'-':>18}"
        print(row)
    for f in fams:
        pts = [(n, np.nanmean(t2[f, n])) for n in ns if (f, n) in t2]
        if len(pts) >= 3:
            s = t2_scaling(pts)
            print(f"{f}: T2 ~ n^{s.exponent:.3f} (95% CI {s.ci[0]:.3f}..{s.ci[1]:.3f})")


if __name__ == "__main__":
    main()
