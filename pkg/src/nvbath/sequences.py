"""Decoupling pulse timelines.

Pulse centres are placed exactly; delays are measured centre to centre and the
total time includes the pulse durations. Phases are the rotation-axis angle in
the transverse plane (0 = X, pi/2 = Y).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

SHAPES = ("ideal", "square", "gaussian")

#: sub-pulse phase offsets of the five-pulse composite, degrees
COMPOSITE_PHASES_DEG = (30.0, 0.0, 90.0, 0.0, 30.0)
#: z rotation left over by the composite, radians
COMPOSITE_Z = -np.pi / 3

_X, _Y = 0.0, np.pi / 2
_XY4 = (_X, _Y, _X, _Y)
_XY8 = (_X, _Y, _X, _Y, _Y, _X, _Y, _X)


@dataclass(frozen=True)
class PulseEvent:
    center_time: float
    phase: float = 0.0
    nominal_angle: float = np.pi
    shape: str = "ideal"
    duration: float = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown pulse shape {self.shape!r}")
        if self.duration < 0:
            raise ValueError("pulse duration must be >= 0")
        if (self.shape == "ideal") != (self.duration == 0):
            raise ValueError("ideal pulses have zero duration and finite pulses do not")

    @property
    def start(self) -> float:
        return self.center_time - 0.5 * self.duration

    @property
    def end(self) -> float:
        return self.center_time + 0.5 * self.duration

    @property
    def is_ideal(self) -> bool:
        return self.shape == "ideal"


@dataclass(frozen=True)
class PulseSequence:
    total_time: float
    events: tuple[PulseEvent, ...]
    name: str = ""
    n_pulses: int | None = None  # logical pi pulses; composite counts as one

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if self.n_pulses is None:
            object.__setattr__(self, "n_pulses", len(self.events))
        T = self.total_time
        if not T > 0:
            raise ValueError("total_time must be positive")
        tol = 1e-12 * T
        prev = None
        for ev in self.events:
            if not 0.0 < ev.center_time < T:
                raise ValueError(
                    f"{self.name}: pulse centre {ev.center_time} outside (0, {T})"
                )
            if ev.start < -tol or ev.end > T + tol:
                raise ValueError(f"{self.name}: pulse at {ev.center_time} runs past the sequence")
            if prev is not None:
                if not ev.center_time > prev.center_time:
                    raise ValueError(f"{self.name}: pulse centres must strictly increase")
                if ev.start < prev.end - tol:
                    raise ValueError(
                        f"{self.name}: pulses at {prev.center_time} and {ev.center_time} overlap"
                    )
            prev = ev

    @property
    def centers(self) -> np.ndarray:
        return np.array([e.center_time for e in self.events])

    @property
    def phases(self) -> np.ndarray:
        return np.array([e.phase for e in self.events])

    @property
    def is_ideal(self) -> bool:
        return all(e.is_ideal for e in self.events)

    def intervals(self) -> np.ndarray:
        """Centre-to-centre free intervals including both edges (n + 1 values)."""
        edges = np.concatenate([[0.0], self.centers, [self.total_time]])
        return np.diff(edges)

    def scaled(self, total_time: float) -> "PulseSequence":
        """Stretch the centre times to a new total time; pulse durations are kept."""
        f = total_time / self.total_time
        events = [replace(e, center_time=e.center_time * f) for e in self.events]
        return PulseSequence(total_time, events, self.name, self.n_pulses)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "total_time_us": self.total_time,
            "n_pulses": self.n_pulses,
            "events": [
                {
                    "center_us": e.center_time,
                    "phase_rad": e.phase,
                    "angle_rad": e.nominal_angle,
                    "shape": e.shape,
                    "duration_us": e.duration,
                }
                for e in self.events
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PulseSequence":
        events = [
            PulseEvent(
                center_time=e["center_us"],
                phase=e.get("phase_rad", 0.0),
                nominal_angle=e.get("angle_rad", np.pi),
                shape=e.get("shape", "ideal"),
                duration=e.get("duration_us", 0.0),
            )
            for e in d["events"]
        ]
        return cls(d["total_time_us"], events, d.get("name", ""), d.get("n_pulses"))


def _ideal(centers: Iterable[float], phases: Iterable[float]) -> list[PulseEvent]:
    return [PulseEvent(float(c), float(p) % (2 * np.pi)) for c, p in zip(centers, phases)]


def cpmg_centers(n: int, total_time: float) -> np.ndarray:
    k = np.arange(1, n + 1)
    return (2 * k - 1) * total_time / (2 * n)


def cpmg(n: int, total_time: float = 1.0) -> PulseSequence:
    if n < 1:
        raise ValueError("n must be >= 1")
    name = "hahn" if n == 1 else f"cpmg-{n}"
    return PulseSequence(total_time, _ideal(cpmg_centers(n, total_time), [_X] * n), name)


def udd(n: int, total_time: float = 1.0) -> PulseSequence:
    if n < 1:
        raise ValueError("n must be >= 1")
    if n <= 2:
        # sin^2(pi k / (2n+2)) is 1/2 or (1/4, 3/4): the CPMG times, without rounding
        centers = cpmg_centers(n, total_time)
    else:
        k = np.arange(1, n + 1)
        centers = total_time * np.sin(np.pi * k / (2 * n + 2)) ** 2
    return PulseSequence(total_time, _ideal(centers, [_X] * n), f"udd-{n}")


def xy_phases(n: int) -> np.ndarray:
    """XY-4, XY-8, then repeated doubling with a phase-inverted second half."""
    if n == 4:
        return np.array(_XY4)
    if n == 8:
        return np.array(_XY8)
    if n >= 16 and n & (n - 1) == 0:
        half = xy_phases(n // 2)
        return np.concatenate([half, (half + np.pi) % (2 * np.pi)])
    raise ValueError(f"XY-{n} not supported; use 4, 8, 16, 32, 64, ...")


def xy_family(n: int, total_time: float = 1.0) -> PulseSequence:
    phases = xy_phases(n)
    return PulseSequence(total_time, _ideal(cpmg_centers(n, total_time), phases), f"xy-{n}")


def fixed_spacing_cpmg(tau: float, n_blocks: int) -> PulseSequence:
    """``(tau - pi - 2 tau - pi - tau)^n_blocks``: 2 n_blocks pulses over 4 tau n_blocks."""
    if tau <= 0 or n_blocks < 1:
        raise ValueError("tau must be positive and n_blocks >= 1")
    n = 2 * n_blocks
    centers = tau * (2 * np.arange(1, n + 1) - 1)
    return PulseSequence(4 * tau * n_blocks, _ideal(centers, [_X] * n), f"fixed-cpmg-{n}")


FAMILIES = {
    "cpmg": cpmg,
    "hahn": lambda n, T=1.0: cpmg(1, T),
    "udd": udd,
    "xy": xy_family,
}

#: families whose pulse spacings are commensurate (needed for echo revivals)
COMMENSURATE = {"cpmg", "hahn", "xy"}


def make_sequence(family: str, n: int, total_time: float = 1.0) -> PulseSequence:
    try:
        return FAMILIES[family](n, total_time)
    except KeyError:
        raise ValueError(f"unknown sequence family {family!r}") from None


def revival_total_times(n_pulses: int, larmor_period: float, multiples: Sequence[int]) -> np.ndarray:
    """Total times at which every free interval of CPMG/XY-n spans whole Larmor periods.

    With edge delay ``tau = m * larmor_period`` the interior spacings are ``2 tau``
    and the m_s = 0 propagator of every interval is +-1 for bare Zeeman spins.
    """
    m = np.asarray(multiples, dtype=float)
    return 2.0 * n_pulses * m * larmor_period


def composite_pi(base_phase: float, shape: str, duration: float) -> list[PulseEvent]:
    """Five back-to-back pi pulses at phases base + (30, 0, 90, 0, 30) degrees.

    Centre times are relative to the middle of the composite. The ideal product
    is a pi rotation about ``base_phase`` followed by a 60 degree z rotation,
    ``Z(COMPOSITE_Z) R(base_phase, pi)`` in this package's sign convention.
    """
    if duration <= 0:
        raise ValueError("composite sub-pulses need a positive duration")
    return [
        PulseEvent(
            center_time=(i - 2) * duration,
            phase=(base_phase + np.deg2rad(p)) % (2 * np.pi),
            shape=shape,
            duration=duration,
        )
        for i, p in enumerate(COMPOSITE_PHASES_DEG)
    ]


def with_pulses(seq: PulseSequence, shape: str, duration: float, composite: bool = False) -> PulseSequence:
    """Replace every ideal pi pulse by a finite (or composite) one at the same centre."""
    if shape == "ideal":
        return seq
    events = []
    for ev in seq.events:
        if composite:
            for sub in composite_pi(ev.phase, shape, duration):
                events.append(replace(sub, center_time=ev.center_time + sub.center_time))
        else:
            events.append(replace(ev, shape=shape, duration=duration))
    tag = f"{seq.name}+{'composite-' if composite else ''}{shape}"
    return PulseSequence(seq.total_time, events, tag, seq.n_pulses)


def quantize_timing(seq: PulseSequence, grid: float) -> PulseSequence:
    """Round every pulse centre half-up to the nearest multiple of ``grid``."""
    if grid <= 0:
        raise ValueError("grid must be positive")
    k = np.floor(seq.centers / grid + 0.5)
    if len(k) > 1 and np.any(np.diff(k) <= 0):
        raise ValueError(f"{seq.name}: timing grid {grid} collapses neighbouring pulses")
    events = [replace(e, center_time=float(ki * grid)) for e, ki in zip(seq.events, k)]
    return PulseSequence(seq.total_time, events, seq.name, seq.n_pulses)
