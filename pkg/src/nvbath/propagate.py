"""Coherence of the central spin under ideal and finite decoupling pulses.

Electron basis order is (|0>, |1>) with sigma_z = diag(1, -1); a pulse of phase
phi and Rabi frequency W adds ``W/2 (cos phi sx + sin phi sy)``. Joint
electron-cluster operators are ``electron (x) cluster``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .clusters import Partition
from .constants import N14_HYPERFINE
from .hamiltonian import OFF, ClusterHamiltonians, SecondOrderOptions, build_cluster_hamiltonians
from .lattice import SpinBath
from .sequences import PulseEvent, PulseSequence, quantize_timing, with_pulses

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
P1 = np.array([[0, 0], [0, 1]], dtype=complex)

DEFAULT_STEP = 1e-3  # us


@dataclass(frozen=True)
class PulseErrorModel:
    """Pulse imperfections.

    ``rabi_frequency`` of None calibrates every pulse to its nominal angle;
    otherwise it is the square amplitude / Gaussian peak in rad/us. With
    ``detune_free`` the static detuning also acts between pulses.
    """

    rabi_frequency: float | None = None
    detunings: tuple[tuple[float, float], ...] = ((0.0, 1.0),)
    amplitude_error: float = 0.0
    detune_free: bool = True

    def __post_init__(self):
        det = tuple((float(d), float(w)) for d, w in self.detunings)
        object.__setattr__(self, "detunings", det)
        if not det:
            raise ValueError("need at least one detuning line")
        if abs(sum(w for _, w in det) - 1.0) > 1e-12:
            raise ValueError("detuning weights must sum to 1")
        if self.rabi_frequency is not None and not self.rabi_frequency > 0:
            raise ValueError("rabi_frequency must be positive")

    @classmethod
    def n14(cls, rabi_frequency=None, splitting=N14_HYPERFINE, **kw) -> "PulseErrorModel":
        """Maximally mixed 14N: three equal-weight lines at -A, 0, +A."""
        w = 1.0 / 3.0
        return cls(rabi_frequency, ((-splitting, w), (0.0, w), (splitting, w)), **kw)


@dataclass(frozen=True)
class PulseShape:
    """How each logical pi pulse of a template is realised."""

    shape: str = "ideal"
    duration: float = 0.0
    composite: bool = False

    def apply(self, seq: PulseSequence) -> PulseSequence:
        if self.shape == "ideal":
            return seq
        return with_pulses(seq, self.shape, self.duration, self.composite)


@dataclass
class CoherenceCurve:
    times: np.ndarray
    signal: np.ndarray
    uncertainty: np.ndarray | None = None
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.signal = np.asarray(self.signal, dtype=float)
        if self.uncertainty is None:
            self.uncertainty = np.zeros_like(self.signal)
        self.uncertainty = np.asarray(self.uncertainty, dtype=float)
        if not (len(self.times) == len(self.signal) == len(self.uncertainty)):
            raise ValueError("times, signal and uncertainty differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


# -- matrix exponentials ---------------------------------------------------


def _check_hermitian(h: np.ndarray) -> None:
    scale = max(1.0, float(np.max(np.abs(h)))) if h.size else 1.0
    if np.max(np.abs(h - h.conj().T), initial=0.0) > 1e-10 * scale:
        raise ValueError("matrix is not Hermitian")


def evolve(h, t: float) -> np.ndarray:
    """exp(-i h t) through the Hermitian eigendecomposition."""
    h = np.asarray(h, dtype=complex)
    _check_hermitian(h)
    e, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * e * t)) @ v.conj().T


# -- ideal pulses: conditional branch propagators ---------------------------


def _toggle_labels(n_intervals: int, start: int) -> np.ndarray:
    return (start + np.arange(n_intervals)) % 2


def branch_propagators(ch: ClusterHamiltonians, seq: PulseSequence):
    """(V0, V1) for the electron starting in m_s = 0 and m_s = 1.

    Reference implementation: explicit exponentials multiplied in time order.
    """
    if not seq.is_ideal:
        raise ValueError("branch_propagators needs ideal (instantaneous) pulses")
    taus = seq.intervals()
    hs = (ch.h0, ch.h1)
    out = []
    for start in (0, 1):
        V = np.eye(ch.dim, dtype=complex)
        for tau, b in zip(taus, _toggle_labels(len(taus), start)):
            V = evolve(hs[b], tau) @ V
        out.append(V)
    return out[0], out[1]


class _Group:
    """Eigensystems of all clusters of one dimension, stacked."""

    def __init__(self, chs: list[ClusterHamiltonians]):
        self.dim = chs[0].dim
        e0, v0 = np.linalg.eigh(np.stack([c.h0 for c in chs]))
        e1, v1 = np.linalg.eigh(np.stack([c.h1 for c in chs]))
        self.e = (e0, e1)
        # change of basis from the m_s=1 eigenbasis to the m_s=0 eigenbasis
        self.w = np.matmul(v0.conj().transpose(0, 2, 1), v1)
        self.wh = self.w.conj().transpose(0, 2, 1)

    def _chain(self, taus, labels) -> np.ndarray:
        # P maps the initial-label eigenbasis to the current-label eigenbasis
        c, d = len(self.w), self.dim
        P = np.broadcast_to(np.eye(d, dtype=complex), (c, d, d)).copy()
        cur = labels[0]
        for tau, b in zip(taus, labels):
            if b != cur:
                P = np.matmul(self.w if b == 0 else self.wh, P)
                cur = b
            P *= np.exp(-1j * self.e[b] * tau)[:, :, None]
        return P

    def overlaps(self, taus) -> np.ndarray:
        """Tr(V1^dag V0) / d for each cluster."""
        n = len(taus)
        la = _toggle_labels(n, 0)
        lb = _toggle_labels(n, 1)
        P0 = self._chain(taus, la)
        P1 = self._chain(taus, lb)
        # bring P0 into the (final1 <- initial1) frame: B_end P0 B_start
        end0, end1 = la[-1], lb[-1]
        left = self._basis(end1, end0)
        right = self._basis(0, 1)
        X = P0 if left is None else np.matmul(left, P0)
        X = X if right is None else np.matmul(X, right)
        return np.einsum("cij,cij->c", P1.conj(), X) / self.dim

    def _basis(self, to: int, frm: int):
        if to == frm:
            return None
        return self.w if to == 0 else self.wh


class ClusterEngine:
    """Cached per-cluster eigensystems for repeated ideal-pulse evaluations."""

    def __init__(self, chs: Sequence[ClusterHamiltonians]):
        self.clusters = list(chs)
        by_dim: dict[int, list[int]] = {}
        for i, c in enumerate(self.clusters):
            by_dim.setdefault(c.dim, []).append(i)
        self._groups = [
            (np.array(ix), _Group([self.clusters[i] for i in ix])) for _, ix in sorted(by_dim.items())
        ]

    @classmethod
    def from_bath(cls, bath: SpinBath, partition: Partition, opts: SecondOrderOptions = OFF):
        return cls(
            [build_cluster_hamiltonians(bath, c, opts, cap=max(partition.max_size, 1)) for c in partition.clusters]
        )

    def cluster_overlaps(self, seq: PulseSequence) -> np.ndarray:
        if not seq.is_ideal:
            raise ValueError("ideal-pulse engine got finite pulses")
        taus = seq.intervals()
        out = np.ones(len(self.clusters), dtype=complex)
        for ix, grp in self._groups:
            out[ix] = grp.overlaps(taus)
        return out

    def contrast(self, seq: PulseSequence) -> complex:
        """Product of cluster overlaps, in cluster order."""
        return complex(np.prod(self.cluster_overlaps(seq)))

    def signal(self, seq: PulseSequence) -> float:
        return 0.5 + 0.5 * self.contrast(seq).real

    def curve(self, sequences: Sequence[PulseSequence], workers: int = 1, label="") -> CoherenceCurve:
        times = [s.total_time for s in sequences]
        sig = _pmap(self.signal, sequences, workers)
        return CoherenceCurve(times, sig, label=label)


def _pmap(fn: Callable, items, workers: int) -> list:
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def template_sequences(seq: PulseSequence, times, grid: float | None = None) -> list[PulseSequence]:
    out = []
    for t in times:
        s = seq.scaled(float(t))
        if grid:
            s = quantize_timing(s, grid)
        out.append(s)
    return out


def coherence_ideal(
    bath: SpinBath,
    partition: Partition,
    seq: PulseSequence,
    times,
    opts: SecondOrderOptions = OFF,
    workers: int = 1,
    grid: float | None = None,
) -> CoherenceCurve:
    """s(t) = 1/2 + 1/2 Re prod_c Tr(V1^dag V0)/2^g_c with the template stretched to each t."""
    engine = ClusterEngine.from_bath(bath, partition, opts)
    return engine.curve(template_sequences(seq, times, grid), workers, label=seq.name)


# -- finite pulses ----------------------------------------------------------


def rotation(phase: float, angle: float) -> np.ndarray:
    """Ideal electron rotation by ``angle`` about the transverse axis at ``phase``."""
    n = np.cos(phase) * SX + np.sin(phase) * SY
    return np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * n


def z_rotation(angle: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle)])


def pulse_amplitudes(ev: PulseEvent, err: PulseErrorModel, step: float = DEFAULT_STEP):
    """Piecewise-constant Rabi amplitudes and the step length for one finite pulse.

    Gaussian pulses span +-2 sigma of the duration, sampled at step midpoints.
    """
    if ev.is_ideal:
        raise ValueError("ideal pulse has no amplitude profile")
    if step > ev.duration:
        raise ValueError(f"step {step} us is longer than the {ev.duration} us pulse")
    scale = 1.0 + err.amplitude_error
    if ev.shape == "square":
        amp = ev.nominal_angle / ev.duration if err.rabi_frequency is None else err.rabi_frequency
        return np.array([amp * scale]), ev.duration
    n = int(np.ceil(ev.duration / step - 1e-9))
    dt = ev.duration / n
    t = (np.arange(n) + 0.5) * dt - 0.5 * ev.duration
    sigma = ev.duration / 4.0
    g = np.exp(-0.5 * (t / sigma) ** 2)
    if err.rabi_frequency is None:
        amps = g * ev.nominal_angle / (g.sum() * dt)
    else:
        amps = g * err.rabi_frequency
    return amps * scale, dt


def _pulse_unitary(amps, dt, h_free: np.ndarray, d: int) -> np.ndarray:
    """Joint propagator of a phase-0 pulse; h_free already holds the detuning."""
    drive = np.kron(0.5 * SX, np.eye(d))
    U = np.eye(2 * d, dtype=complex)
    for a in amps:
        U = evolve(h_free + a * drive, dt) @ U
    return U


def _phase_rotate(U: np.ndarray, phase: float, d: int) -> np.ndarray:
    if phase == 0.0:
        return U
    out = U.copy()
    out[:d, d:] *= np.exp(-1j * phase)
    out[d:, :d] *= np.exp(1j * phase)
    return out


class _JointSystem:
    def __init__(self, ch: ClusterHamiltonians, detuning: float, detune_free: bool):
        d = ch.dim
        self.d = d
        hz = np.zeros((2 * d, 2 * d), dtype=complex)
        hz[:d, :d] = ch.h0
        hz[d:, d:] = ch.h1 + detuning * np.eye(d)
        self.h_pulse = hz
        self.e0, self.v0 = np.linalg.eigh(ch.h0)
        self.e1, self.v1 = np.linalg.eigh(ch.h1)
        self.free_det = detuning if detune_free else 0.0
        self._pulses: dict = {}

    def free(self, tau: float) -> np.ndarray:
        d = self.d
        U = np.zeros((2 * d, 2 * d), dtype=complex)
        U[:d, :d] = (self.v0 * np.exp(-1j * self.e0 * tau)) @ self.v0.conj().T
        U[d:, d:] = (self.v1 * np.exp(-1j * self.e1 * tau)) @ self.v1.conj().T * np.exp(
            -1j * self.free_det * tau
        )
        return U

    def pulse(self, ev: PulseEvent, err: PulseErrorModel, step: float) -> np.ndarray:
        if ev.is_ideal:
            return np.kron(rotation(ev.phase, ev.nominal_angle), np.eye(self.d))
        key = (ev.shape, ev.duration, ev.nominal_angle)
        if key not in self._pulses:
            amps, dt = pulse_amplitudes(ev, err, step)
            self._pulses[key] = _pulse_unitary(amps, dt, self.h_pulse, self.d)
        return _phase_rotate(self._pulses[key], ev.phase, self.d)

    def propagate(self, seq: PulseSequence, err: PulseErrorModel, step: float) -> np.ndarray:
        U = np.eye(2 * self.d, dtype=complex)
        t = 0.0
        for ev in seq.events:
            gap = ev.start - t
            if gap > 0:
                U = self.free(gap) @ U
            U = self.pulse(ev, err, step) @ U
            t = ev.end
        if seq.total_time > t:
            U = self.free(seq.total_time - t) @ U
        return U


def ideal_electron_product(events: Sequence[PulseEvent]) -> np.ndarray:
    R = np.eye(2, dtype=complex)
    for ev in events:
        R = rotation(ev.phase, ev.nominal_angle) @ R
    return R


def _projected_signal(U: np.ndarray, psi0: np.ndarray, psi_e: np.ndarray, d: int) -> float:
    blocks = U.reshape(2, d, 2, d)
    M = np.einsum("a,b,aibj->ij", psi_e.conj(), psi0, blocks)
    return float(np.sum(np.abs(M) ** 2) / d)


def coherence_finite_pulses(
    ch: ClusterHamiltonians,
    seq: PulseSequence,
    err: PulseErrorModel,
    initial_phase: float = 0.0,
    times=None,
    pulse: PulseShape | None = None,
    step: float = DEFAULT_STEP,
    workers: int = 1,
) -> CoherenceCurve:
    """Joint electron (x) cluster evolution with finite pulses.

    The electron starts in (|0> + e^{i theta}|1>)/sqrt2 (theta = 0 lies along an
    X pulse axis), the cluster maximally mixed. The signal is the probability of
    finding the state the ideal pulses would have produced, averaged over the
    detuning lines. For ideal pulses with an even pulse count it reduces to
    1/2 + 1/2 Re{e^{-i theta} (<sx> + i <sy>)}.

    ``seq`` is stretched to every entry of ``times``; when ``pulse`` is given
    the stretched template is then dressed with finite (or composite) pulses.
    """
    if times is None:
        seqs = [seq]
    else:
        seqs = [seq.scaled(float(t)) for t in times]
    if pulse is not None:
        seqs = [pulse.apply(s) for s in seqs]
    psi0 = np.array([1.0, np.exp(1j * initial_phase)]) / np.sqrt(2.0)
    systems = [(_JointSystem(ch, det, err.detune_free), w) for det, w in err.detunings]

    def one(s: PulseSequence) -> float:
        psi_e = ideal_electron_product(s.events) @ psi0
        total = 0.0
        for sysm, w in systems:
            total += w * _projected_signal(sysm.propagate(s, err, step), psi0, psi_e, ch.dim)
        return total

    # warm the pulse cache serially so threads only read it
    if seqs:
        one(seqs[0])
    sig = _pmap(one, seqs, workers)
    return CoherenceCurve([s.total_time for s in seqs], sig, label=seqs[0].name if seqs else "")


# -- single-pulse fidelity --------------------------------------------------

FIDELITY_CONVENTIONS = ("overlap", "squared")


def electron_unitary(events: Sequence[PulseEvent], err: PulseErrorModel, detuning: float, step=DEFAULT_STEP):
    """Electron-only propagator of a pulse train (events in time order)."""
    empty = ClusterHamiltonians((), np.zeros((1, 1), complex), np.zeros((1, 1), complex))
    sysm = _JointSystem(empty, detuning, err.detune_free)
    U = np.eye(2, dtype=complex)
    t = events[0].start if events else 0.0
    for ev in events:
        gap = ev.start - t
        if gap > 1e-15:
            U = sysm.free(gap) @ U
        U = sysm.pulse(ev, err, step) @ U
        t = ev.end
    return U


def gate_fidelity(U: np.ndarray, target: np.ndarray, convention: str = "overlap") -> float:
    """|Tr(target^dag U)|/d ("overlap") or its square ("squared")."""
    if convention not in FIDELITY_CONVENTIONS:
        raise ValueError(f"unknown fidelity convention {convention!r}")
    f = abs(np.trace(target.conj().T @ U)) / U.shape[0]
    return float(f if convention == "overlap" else f * f)


def pulse_fidelity(
    events: Sequence[PulseEvent],
    err: PulseErrorModel,
    target: np.ndarray,
    convention: str = "overlap",
    step: float = DEFAULT_STEP,
) -> float:
    """Detuning-averaged fidelity of a pulse (or composite) against ``target``."""
    return sum(
        w * gate_fidelity(electron_unitary(events, err, det, step), target, convention)
        for det, w in err.detunings
    )
