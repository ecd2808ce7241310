"""Physical constants and the unit system.

Every quantity inside the package uses angular frequency in rad/us, time in
us, length in Angstrom and field in Tesla, with hbar = 1.
"""

import numpy as np

TWO_PI = 2.0 * np.pi

#: vacuum permeability over 4 pi, SI
MU0_OVER_4PI = 1.0e-7
#: reduced Planck constant, SI (CODATA 2018, exact)
HBAR = 1.054571817e-34

#: 13C gyromagnetic ratio, rad s^-1 T^-1
GAMMA_C13 = TWO_PI * 10.7084e6
#: electron gyromagnetic ratio magnitude, rad s^-1 T^-1
GAMMA_E = TWO_PI * 28.025e9

#: NV ground-state zero-field splitting, rad/us
ZFS_NV = TWO_PI * 2870.0

#: conventional diamond cubic cell edge, Angstrom
DIAMOND_LATTICE_CONSTANT = 3.567
#: C-C bond length, Angstrom
CC_BOND = DIAMOND_LATTICE_CONSTANT * np.sqrt(3.0) / 4.0

#: 14N hyperfine splitting used as a static detuning, rad/us
N14_HYPERFINE = TWO_PI * 2.1


def per_second_to_per_us(x):
    return x * 1e-6


def khz(x):
    """kHz -> rad/us."""
    return TWO_PI * x * 1e-3


def mhz(x):
    """MHz -> rad/us."""
    return TWO_PI * x


def to_khz(w):
    """rad/us -> kHz."""
    return w / TWO_PI * 1e3
