"""Diamond lattice around an NV centre and random 13C placement.

The vacancy sits at the origin and the nitrogen on the nearest-neighbour site
along [111]. Coordinates are rotated so that the NV axis is +z.

Random placement uses numpy's PCG64 bit generator seeded through
``SeedSequence(entropy=seed, spawn_key=(attempt,))``. Attempt 0 is the plain
draw; when a strong-hyperfine cutoff rejects a configuration the next attempt
index gives an independent stream, so a run is replayable from
``(seed, attempt)`` alone and distinct seeds never share a stream.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constants import (
    CC_BOND,
    DIAMOND_LATTICE_CONSTANT,
    GAMMA_C13,
    GAMMA_E,
    HBAR,
    MU0_OVER_4PI,
    to_khz,
)

BATH_FORMAT_TAG = "nvbath-bath v1"

_FCC = np.array(
    [[0.0, 0.0, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]
)
_BASIS = np.concatenate([_FCC, _FCC + 0.25])

# rows are the new x, y, z axes; [111] -> z
NV_FRAME = np.array(
    [
        [1.0, 1.0, -2.0],
        [-1.0, 1.0, 0.0],
        [1.0, 1.0, 1.0],
    ]
) / np.array([[np.sqrt(6.0)], [np.sqrt(2.0)], [np.sqrt(3.0)]])


@dataclass(frozen=True)
class LatticeConfig:
    radius_sites: int = 10
    abundance: float = 0.011
    seed: int = 0
    lattice_constant: float = DIAMOND_LATTICE_CONSTANT
    strong_hf_cutoff: float | None = None  # kHz
    max_attempts: int = 1000

    def __post_init__(self):
        if self.radius_sites < 1:
            raise ValueError("radius_sites must be >= 1")
        if not 0.0 <= self.abundance <= 1.0:
            raise ValueError("abundance must lie in [0, 1]")
        if self.lattice_constant <= 0:
            raise ValueError("lattice_constant must be positive")
        if self.strong_hf_cutoff is not None and self.strong_hf_cutoff <= 0:
            raise ValueError("strong_hf_cutoff must be positive")


@dataclass(frozen=True)
class NuclearSite:
    position: np.ndarray  # Angstrom
    gamma_n: float  # rad s^-1 T^-1
    hyperfine: np.ndarray  # rad/us


@dataclass(frozen=True, eq=False)
class SpinBath:
    """Immutable 13C bath: positions (N, 3) in Angstrom, hyperfine (N, 3, 3) in rad/us."""

    positions: np.ndarray
    hyperfine: np.ndarray
    b_field: np.ndarray
    gamma_n: float = GAMMA_C13
    seed_used: int | None = None
    attempt: int = 0
    abundance: float | None = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 3)
        hf = np.array(self.hyperfine, dtype=float).reshape(-1, 3, 3)
        b = np.array(self.b_field, dtype=float).reshape(3)
        if len(pos) != len(hf):
            raise ValueError("positions and hyperfine tensors differ in length")
        for arr in (pos, hf, b):
            arr.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "hyperfine", hf)
        object.__setattr__(self, "b_field", b)

    def __len__(self):
        return len(self.positions)

    @property
    def omega_L(self) -> float:
        """Bare nuclear Larmor angular frequency, rad/us."""
        return self.gamma_n * float(np.linalg.norm(self.b_field)) * 1e-6

    @property
    def larmor_period(self) -> float:
        """Bare nuclear Larmor period in us."""
        return 2.0 * np.pi / self.omega_L

    @property
    def sites(self) -> list[NuclearSite]:
        return [
            NuclearSite(p, self.gamma_n, a) for p, a in zip(self.positions, self.hyperfine)
        ]

    def subset(self, indices) -> "SpinBath":
        idx = np.asarray(indices, dtype=int)
        return SpinBath(
            self.positions[idx],
            self.hyperfine[idx],
            self.b_field,
            gamma_n=self.gamma_n,
            seed_used=self.seed_used,
            attempt=self.attempt,
            abundance=self.abundance,
        )

    def to_text(self) -> str:
        return dumps_bath(self)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def make_bath(positions, b_field, hyperfine=None, gamma_n=GAMMA_C13, **meta) -> SpinBath:
    """Bath from explicit positions; point-dipole hyperfine unless given."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    if hyperfine is None:
        hyperfine = np.array(
            [point_dipole_hyperfine(p, GAMMA_E, gamma_n) for p in pos]
        ).reshape(-1, 3, 3)
    return SpinBath(pos, hyperfine, b_field, gamma_n=gamma_n, **meta)


def lattice_positions(radius_sites: int, lattice_constant=DIAMOND_LATTICE_CONSTANT):
    """Carbon sites within +-radius_sites cubic cells, vacancy and nitrogen removed.

    Returned in the NV frame, in a fixed enumeration order.
    """
    r = np.arange(-radius_sites, radius_sites + 1)
    cells = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 1, 3)
    frac = (cells + _BASIS[None, :, :]).reshape(-1, 3)
    # vacancy at (0,0,0), nitrogen at (1/4,1/4,1/4)
    keep = ~(
        np.all(frac == 0.0, axis=1) | np.all(frac == 0.25, axis=1)
    )
    return (frac[keep] * lattice_constant) @ NV_FRAME.T


def point_dipole_hyperfine(position, gamma_e=GAMMA_E, gamma_n=GAMMA_C13) -> np.ndarray:
    """Point-dipole electron-nuclear tensor (mu0/4pi) ge gn hbar (3 nn - 1) / r^3 in rad/us."""
    p = np.asarray(position, dtype=float)
    r = float(np.linalg.norm(p))
    if r == 0.0:
        raise ValueError("nuclear site coincides with the defect")
    if r < CC_BOND * (1.0 - 1e-9):
        raise ValueError(f"site at r={r:.3f} A is inside one bond length; contact term not modelled")
    n = p / r
    pref = MU0_OVER_4PI * gamma_e * gamma_n * HBAR / (r * 1e-10) ** 3 * 1e-6
    return pref * (3.0 * np.outer(n, n) - np.eye(3))


def _rng(seed: int, attempt: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(attempt,))
    return np.random.Generator(np.random.PCG64(ss))


def _draw(config: LatticeConfig, b_field, attempt: int, candidates) -> SpinBath:
    u = _rng(config.seed, attempt).random(len(candidates))
    pos = candidates[u < config.abundance]
    return make_bath(
        pos,
        b_field,
        seed_used=config.seed,
        attempt=attempt,
        abundance=config.abundance,
    )


def generate_bath(config: LatticeConfig, b_field) -> SpinBath:
    """Randomly occupy lattice sites with 13C.

    With ``config.strong_hf_cutoff`` set, configurations containing a coupling
    above the cutoff are redrawn on the next attempt stream.
    """
    b = np.asarray(b_field, dtype=float)
    if np.linalg.norm(b) == 0:
        raise ValueError("b_field must be non-zero")
    candidates = lattice_positions(config.radius_sites, config.lattice_constant)
    if config.strong_hf_cutoff is None:
        return _draw(config, b, 0, candidates)
    for attempt in range(config.max_attempts):
        bath = _draw(config, b, attempt, candidates)
        ok, _ = filter_strong_hyperfine(bath, config.strong_hf_cutoff)
        if ok:
            return bath
    raise RuntimeError(
        f"no configuration passed the {config.strong_hf_cutoff} kHz cutoff "
        f"in {config.max_attempts} attempts"
    )


def hyperfine_norms_khz(bath: SpinBath) -> np.ndarray:
    if len(bath) == 0:
        return np.zeros(0)
    return to_khz(np.linalg.norm(bath.hyperfine, ord=2, axis=(1, 2)))


def filter_strong_hyperfine(bath: SpinBath, cutoff: float) -> tuple[bool, SpinBath]:
    """Accept the bath when no tensor's largest singular value exceeds ``cutoff`` kHz."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    norms = hyperfine_norms_khz(bath)
    return bool(np.all(norms <= cutoff)), bath


# -- text export -----------------------------------------------------------

_TRIU = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def _f(x: float) -> str:
    return repr(float(x))


def dumps_bath(bath: SpinBath) -> str:
    out = io.StringIO()
    out.write(f"# {BATH_FORMAT_TAG}\n")
    out.write(f"# seed: {bath.seed_used if bath.seed_used is not None else 'none'}\n")
    out.write(f"# attempt: {bath.attempt}\n")
    out.write(f"# abundance: {_f(bath.abundance) if bath.abundance is not None else 'none'}\n")
    out.write("# b_field_T: " + " ".join(_f(x) for x in bath.b_field) + "\n")
    out.write(f"# gamma_n: {_f(bath.gamma_n)}\n")
    out.write("# columns: x_A y_A z_A Axx Axy Axz Ayy Ayz Azz (rad/us)\n")
    for p, a in zip(bath.positions, bath.hyperfine):
        vals = list(p) + [a[i, j] for i, j in _TRIU]
        out.write(" ".join(_f(v) for v in vals) + "\n")
    return out.getvalue()


def loads_bath(text: str) -> SpinBath:
    header = {}
    rows = []
    lines = text.splitlines()
    if not lines or lines[0].strip() != f"# {BATH_FORMAT_TAG}":
        raise ValueError(f"not a bath file (expected '# {BATH_FORMAT_TAG}' header)")
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            header[key.strip()] = val.strip()
            continue
        vals = line.split()
        if len(vals) != 9:
            raise ValueError(f"line {lineno}: expected 9 columns, got {len(vals)}")
        rows.append([float(v) for v in vals])
    data = np.array(rows, dtype=float).reshape(-1, 9)
    hf = np.zeros((len(data), 3, 3))
    for c, (i, j) in enumerate(_TRIU):
        hf[:, i, j] = data[:, 3 + c]
        hf[:, j, i] = data[:, 3 + c]

    def opt(key, conv):
        v = header.get(key, "none")
        return None if v == "none" else conv(v)

    return SpinBath(
        data[:, :3],
        hf,
        [float(x) for x in header["b_field_T"].split()],
        gamma_n=float(header.get("gamma_n", GAMMA_C13)),
        seed_used=opt("seed", int),
        attempt=int(header.get("attempt", 0)),
        abundance=opt("abundance", float),
    )


def save_bath(bath: SpinBath, path) -> None:
    Path(path).write_text(dumps_bath(bath))


def load_bath(path) -> SpinBath:
    return loads_bath(Path(path).read_text())
