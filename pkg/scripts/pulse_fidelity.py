"""Single-pulse and composite-pulse fidelities under 14N hyperfine detuning.

    python3 scripts/pulse_fidelity.py [--scan]
"""

import argparse

import numpy as np

from nvbath.constants import mhz
from nvbath.propagate import PulseErrorModel, pulse_fidelity, rotation, z_rotation
from nvbath.sequences import COMPOSITE_Z, PulseEvent, composite_pi

X180 = rotation(0.0, np.pi)
ZX = z_rotation(COMPOSITE_Z) @ X180


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--square-ns", type=float, default=32.0)
    ap.add_argument("--gauss-ns", type=float, default=46.0)
    ap.add_argument("--splitting-mhz", type=float, default=2.1)
    ap.add_argument("--scan", action="store_true", help="also print F against a single detuning")
    args = ap.parse_args()

    err = PulseErrorModel.n14(splitting=mhz(args.splitting_mhz))
    square = [PulseEvent(0.0, shape="square", duration=args.square_ns * 1e-3)]
    comp = composite_pi(0.0, "gaussian", args.gauss_ns * 1e-3)
    print(f"{'pulse':<34}{'overlap':>10}{'squared':>10}")
    for label, ev, target in (
        (f"square {args.square_ns:g} ns", square, X180),
        (f"composite, gaussian {args.gauss_ns:g} ns", comp, ZX),
    ):
        f1 = pulse_fidelity(ev, err, target, "overlap")
        f2 = pulse_fidelity(ev, err, target, "squared")
        print(f"{label:<34}{f1:>10.5f}{f2:>10.5f}")

    if args.scan:
        print(f"\n{'detuning MHz':>12}{'square':>10}{'composite':>11}")
        for d in np.linspace(-5, 5, 21):
            one = PulseErrorModel(detunings=((mhz(d), 1.0),))
            print(f"{d:>12.1f}{pulse_fidelity(square, one, X180, 'squared'):>10.5f}"
                  f"{pulse_fidelity(comp, one, ZX, 'squared'):>11.6f}")


if __name__ == "__main__":
    main()
