"""Echo-revival envelopes: T2 of the k = 3 envelope for Hahn and CPMG/XY trains.

    python3 scripts/revivals.py --seed 1 --n 1 4 8 16
"""

import argparse

from nvbath.config import load_config, parse_overrides, preset_path
from nvbath.runner import simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--n", type=int, nargs="+", default=[1, 4, 8, 16])
    ap.add_argument("--family", default="cpmg", choices=["cpmg", "xy"])
    args = ap.parse_args()

    over = parse_overrides([f"sequences=[{{family: {args.family}, n: {args.n}}}]"]) + [("seed", args.seed)]
    res = simulate(load_config(preset_path("fig4"), over))
    print(f"{len(res.bath)} spins, Larmor period {res.bath.larmor_period:.3f} us")
    print(f"{'n':>4}{'T2 envelope (us)':>20}{'last peak':>12}")
    for c in res.curves:
        f = c.fit
        t2 = f"{f.t2:.0f} +- {f.t2_err:.0f}" if f is not None and f.ok else "out of window"
        print(f"{c.n:>4}{t2:>20}{c.curve.signal[-1]:>12.3f}")


if __name__ == "__main__":
    main()
