"""Conditional nuclear Hamiltonians for a cluster of bath spins.

The electron is restricted to m_s = 0 and m_s = 1, so the hyperfine coupling
only appears in the m_s = 1 branch::

    H0 = sum_j gamma_n B.I_j + H_dip
    H1 = H0 + sum_j A_j[z, :] . I_j

Cluster spin 0 is the most significant qubit of the 2**g space.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache, reduce

import numpy as np

from .constants import GAMMA_C13, GAMMA_E, HBAR, MU0_OVER_4PI, ZFS_NV
from .lattice import SpinBath

MAX_CLUSTER_SIZE = 12

_S = 0.5 * np.array(
    [
        [[0.0, 1.0], [1.0, 0.0]],
        [[0.0, -1.0j], [1.0j, 0.0]],
        [[1.0, 0.0], [0.0, -1.0]],
    ]
)


@dataclass(frozen=True)
class SecondOrderOptions:
    """Switches for the second-order (m_s mixing) corrections.

    ``zero_field_splitting`` is the energy denominator in rad/us.
    """

    enable_mediated_coupling: bool = False
    enable_enhanced_zeeman: bool = False
    zero_field_splitting: float = ZFS_NV

    def __post_init__(self):
        if (self.enable_mediated_coupling or self.enable_enhanced_zeeman) and not (
            self.zero_field_splitting > 0
        ):
            raise ValueError("zero_field_splitting must be positive when corrections are on")

    @property
    def any(self) -> bool:
        return self.enable_mediated_coupling or self.enable_enhanced_zeeman


OFF = SecondOrderOptions()


@dataclass(frozen=True, eq=False)
class ClusterHamiltonians:
    indices: tuple[int, ...]
    h0: np.ndarray
    h1: np.ndarray

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    def to_text(self) -> str:
        """Plain-text dump for comparing against external builders."""
        lines = [f"# indices: {' '.join(map(str, self.indices))}"]
        for name, h in (("h0", self.h0), ("h1", self.h1)):
            lines.append(f"# {name} real")
            lines += [" ".join(repr(float(x)) for x in row) for row in h.real]
            lines.append(f"# {name} imag")
            lines += [" ".join(repr(float(x)) for x in row) for row in h.imag]
        return "\n".join(lines) + "\n"


@lru_cache(maxsize=None)
def _ops(g: int) -> np.ndarray:
    """All embedded spin operators, shape (g, 3, 2**g, 2**g)."""
    out = np.empty((g, 3, 2**g, 2**g), dtype=complex)
    for j in range(g):
        left = np.eye(2**j)
        right = np.eye(2 ** (g - j - 1))
        for a in range(3):
            out[j, a] = np.kron(np.kron(left, _S[a]), right)
    out.flags.writeable = False
    return out


def spin_half_operators(g: int, site_index: int, cap: int = MAX_CLUSTER_SIZE):
    """(Ix, Iy, Iz) for spin ``site_index`` in a register of ``g`` spins-1/2."""
    if g > cap:
        raise ValueError(f"cluster of {g} spins exceeds the cap of {cap}")
    if not 0 <= site_index < g:
        raise ValueError(f"site_index {site_index} out of range for g={g}")
    ops = _ops(g)[site_index]
    return ops[0], ops[1], ops[2]


def dipolar_pair_term(pos_j, pos_k, gamma_n=GAMMA_C13) -> np.ndarray:
    """Nuclear dipole-dipole tensor b (1 - 3 nn), b = (mu0/4pi) gamma_n^2 hbar / r^3, rad/us."""
    d = np.asarray(pos_k, dtype=float) - np.asarray(pos_j, dtype=float)
    r = float(np.linalg.norm(d))
    if r == 0.0:
        raise ValueError("coincident nuclear positions")
    n = d / r
    b = MU0_OVER_4PI * gamma_n**2 * HBAR / (r * 1e-10) ** 3 * 1e-6
    return b * (np.eye(3) - 3.0 * np.outer(n, n))


def _pair_operator(g: int, a: int, b: int, D) -> np.ndarray:
    """I_a . D . I_b embedded in ``g`` spins (a < b), built from Kronecker products."""
    out = 0
    for x in range(3):
        right = np.tensordot(D[x], _S, axes=(0, 0))
        out = out + reduce(
            np.kron,
            (np.eye(2**a), _S[x], np.eye(2 ** (b - a - 1)), right, np.eye(2 ** (g - b - 1))),
        )
    return out


def _contract(ops_j, vec) -> np.ndarray:
    # vec . I_j
    return np.tensordot(vec, ops_j, axes=(0, 0))


def second_order_terms(bath: SpinBath, indices, opts: SecondOrderOptions):
    """Second-order corrections from the transverse hyperfine and electron Zeeman terms.

    The non-secular part ``S_x X + S_y Y`` (with ``X = gamma_e B_x + sum_j A_j[x,:].I_j``
    and likewise ``Y``) couples m_s = 0 to m_s = +-1 across the zero-field
    gap D. Eliminating it to second order with ``O+- = X +- iY`` gives::

        dH0 = -O+O- / 2(D + w) - O-O+ / 2(D - w)
        dH1 = +O-O+ / 2(D + w)

    with w the axial electron Zeeman frequency. The products split into the
    electron-mediated pair coupling ``M`` (terms ~ A_j A_k / D) and single-spin
    pieces linear in I (the hyperfine-enhanced Zeeman terms, ~ gamma_e B A / D and
    A^2 w / D^2). Scalar offsets are dropped. Returns ``(dH0, dH1)``.
    """
    idx = tuple(int(i) for i in indices)
    g = len(idx)
    dim = 2**g
    zero = np.zeros((dim, dim), dtype=complex)
    if not opts.any or g == 0:
        return zero, zero.copy()
    ops = _ops(g)
    A = bath.hyperfine[list(idx)]
    ax, ay = A[:, 0, :], A[:, 1, :]

    X = sum((_contract(ops[j], ax[j]) for j in range(g)), zero)
    Y = sum((_contract(ops[j], ay[j]) for j in range(g)), zero)
    D = opts.zero_field_splitting
    bvec = bath.b_field * GAMMA_E * 1e-6
    w = bvec[2]
    dp, dm = D + w, D - w

    add0 = zero.copy()
    add1 = zero.copy()
    if opts.enable_mediated_coupling:
        self_terms = 0.25 * float(np.sum(ax**2) + np.sum(ay**2))
        M = X @ X + Y @ Y - self_terms * np.eye(dim)
        add0 -= M * (0.5 / dp + 0.5 / dm)
        add1 += M * (0.5 / dp)
    if opts.enable_enhanced_zeeman:
        cross = 2.0 * (bvec[0] * X + bvec[1] * Y)
        curl = sum(
            (_contract(ops[j], np.cross(ax[j], ay[j])) for j in range(g)), zero
        )
        zp, zm = cross + curl, cross - curl
        add0 -= zp * (0.5 / dp) + zm * (0.5 / dm)
        add1 += zm * (0.5 / dp)
    return add0, add1


def build_cluster_hamiltonians(
    bath: SpinBath,
    indices,
    opts: SecondOrderOptions = OFF,
    cap: int = MAX_CLUSTER_SIZE,
) -> ClusterHamiltonians:
    idx = tuple(int(i) for i in indices)
    if len(set(idx)) != len(idx):
        raise ValueError("cluster indices must be distinct")
    for i in idx:
        if not 0 <= i < len(bath):
            raise IndexError(f"site index {i} out of range for bath of {len(bath)}")
    g = len(idx)
    if g > cap:
        raise ValueError(f"cluster of {g} spins exceeds the cap of {cap}")
    dim = 2**g
    if g == 0:
        z = np.zeros((1, 1), dtype=complex)
        return ClusterHamiltonians(idx, z, z.copy())

    ops = _ops(g)
    zeeman = bath.gamma_n * bath.b_field * 1e-6
    h0 = np.zeros((dim, dim), dtype=complex)
    for j in range(g):
        h0 += _contract(ops[j], zeeman)
    pos = bath.positions
    for a in range(g):
        for b in range(a + 1, g):
            D = dipolar_pair_term(pos[idx[a]], pos[idx[b]], bath.gamma_n)
            h0 += _pair_operator(g, a, b, D)
    h1 = h0.copy()
    for j in range(g):
        h1 += _contract(ops[j], bath.hyperfine[idx[j], 2, :])
    if opts.any:
        d0, d1 = second_order_terms(bath, idx, opts)
        h0 = h0 + d0
        h1 = h1 + d1
    # symmetrise away rounding
    h0 = 0.5 * (h0 + h0.conj().T)
    h1 = 0.5 * (h1 + h1.conj().T)
    h0.flags.writeable = False
    h1.flags.writeable = False
    return ClusterHamiltonians(idx, h0, h1)
