"""End-to-end runs: bath -> partition -> sequences -> curves -> fits -> files.

Finite pulses on a full bath use a factorised approximation: the bath
contrast is computed with ideal pulses and multiplied by the electron-only
contrast of the finite-pulse train (detuning lines averaged). The joint
electron-cluster treatment in ``propagate.coherence_finite_pulses`` is exact
for a single cluster but too costly for hundreds of them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import DecayFit, fit_decay, revival_envelope, t2_scaling
from .clusters import Partition, partition_bath
from .config import RunConfig
from .constants import khz, mhz
from .hamiltonian import ClusterHamiltonians
from .lattice import LatticeConfig, SpinBath, dumps_bath, generate_bath, load_bath, make_bath
from .propagate import (
    ClusterEngine,
    CoherenceCurve,
    PulseErrorModel,
    PulseShape,
    _pmap,
    coherence_finite_pulses,
)
from .sequences import (
    PulseSequence,
    fixed_spacing_cpmg,
    make_sequence,
    quantize_timing,
    revival_total_times,
)

MANIFEST_SCHEMA = "nvbath-manifest/1"
_EMPTY = ClusterHamiltonians((), np.zeros((1, 1), complex), np.zeros((1, 1), complex))


class NumericalError(RuntimeError):
    pass


@dataclass
class CurveResult:
    key: str
    family: str
    n: int | None
    tau_us: float | None
    initial_phase_deg: float | None
    template: dict
    curve: CoherenceCurve
    fit: DecayFit | None
    fit_error: str | None = None
    dropped_times: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "file": f"{self.key}.csv",
            "family": self.family,
            "n": self.n,
            "tau_us": self.tau_us,
            "initial_phase_deg": self.initial_phase_deg,
            "template_unit_time": self.template,
            "n_points": int(len(self.curve.times)),
            "dropped_times_us": self.dropped_times,
            "fit": self.fit.to_dict() if self.fit is not None else None,
            "fit_error": self.fit_error,
        }


@dataclass
class RunResult:
    config: RunConfig
    bath: SpinBath
    partition: Partition
    curves: list[CurveResult]
    skipped: list[dict]
    scaling: dict

    def manifest(self) -> dict:
        p = self.partition
        sizes = p.sizes()
        return _clean(
            {
                "schema": MANIFEST_SCHEMA,
                "config": self.config.physics_dict(),
                "bath": {
                    "file": "bath.txt",
                    "n_spins": len(self.bath),
                    "seed": self.bath.seed_used,
                    "attempt": self.bath.attempt,
                    "sha256": self.bath.digest(),
                    "larmor_period_us": self.bath.larmor_period if self.bath.omega_L > 0 else None,
                },
                "partition": {
                    "max_size": p.max_size,
                    "threshold_rad_per_us": p.coupling_threshold,
                    "size_histogram": {str(s): sizes.count(s) for s in sorted(set(sizes))},
                    "clusters": p.as_lists(),
                },
                "curves": [c.summary() for c in self.curves],
                "skipped": self.skipped,
                "t2_scaling": self.scaling,
            }
        )


def _clean(x):
    """JSON-safe copy: NaN/inf become None, numpy scalars become Python ones."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def build_bath(cfg: RunConfig) -> SpinBath:
    if cfg.bath.path:
        saved = load_bath(cfg.bath.path)
        return make_bath(
            saved.positions,
            cfg.field_T,
            hyperfine=saved.hyperfine,
            gamma_n=saved.gamma_n,
            seed_used=saved.seed_used,
            attempt=saved.attempt,
            abundance=saved.abundance,
        )
    lc = LatticeConfig(
        radius_sites=cfg.bath.radius_sites,
        abundance=cfg.bath.abundance,
        seed=cfg.seed,
        strong_hf_cutoff=cfg.bath.strong_hf_cutoff_khz,
    )
    return generate_bath(lc, cfg.field_T)


def error_model(cfg: RunConfig) -> PulseErrorModel:
    e = cfg.error_model
    rabi = mhz(e.rabi_mhz) if e.rabi_mhz is not None else None
    kw = dict(amplitude_error=e.amplitude_error, detune_free=e.detune_free)
    if e.n14_splitting_mhz > 0:
        return PulseErrorModel.n14(rabi, mhz(e.n14_splitting_mhz), **kw)
    return PulseErrorModel(rabi, **kw)


def _templates(cfg: RunConfig, bath: SpinBath):
    """Yield (family, n, tau, list of ideal sequences) per requested curve."""
    for spec in cfg.sequences:
        if spec.family == "fixed_cpmg":
            for tau in spec.tau_us:
                yield spec.family, None, tau, [fixed_spacing_cpmg(tau, b) for b in spec.blocks]
            continue
        for n in spec.n:
            template = make_sequence(spec.family, n, 1.0)
            if cfg.revivals is not None:
                times = revival_total_times(n, bath.larmor_period, cfg.revivals.multiples)
            else:
                times = cfg.times.times(n)
            yield spec.family, n, None, [template.scaled(float(t)) for t in times]


def _key(family, n, tau, phase, finite) -> str:
    base = f"{family}-tau{tau:g}us" if tau is not None else f"{family}-{n:03d}"
    return f"{base}-phase{phase:g}" if finite else base


class _ElectronFactor:
    """Electron-only finite-pulse contrast 2 s_e - 1 of one sequence."""

    def __init__(self, cfg: RunConfig):
        p = cfg.pulses
        self.shape = PulseShape(p.shape, p.duration_ns * 1e-3, p.composite)
        self.err = error_model(cfg)
        self.step = p.step_ns * 1e-3

    def __call__(self, seq: PulseSequence, phase_rad: float) -> float:
        dressed = self.shape.apply(seq)
        s = coherence_finite_pulses(_EMPTY, dressed, self.err, phase_rad, step=self.step).signal[0]
        return 2.0 * float(s) - 1.0


def _fit(cfg: RunConfig, family: str, curve: CoherenceCurve):
    try:
        if cfg.revivals is not None and family != "fixed_cpmg":
            fit = revival_envelope(curve)
        else:
            fit = fit_decay(curve, cfg.fit_k)
    except ValueError as e:
        return None, str(e)
    if family == "fixed_cpmg":
        fit.flags = fit.flags + ("fixed_spacing",)
    return fit, None


def simulate(cfg: RunConfig, log=None) -> RunResult:
    """Run everything in memory; ``write_outputs`` puts it on disk."""
    say = log or (lambda msg: None)
    bath = build_bath(cfg)
    partition = partition_bath(bath, cfg.partition.max_size, khz(cfg.partition.threshold_khz))
    say(f"bath: {len(bath)} spins, {len(partition.clusters)} clusters")
    try:
        engine = ClusterEngine.from_bath(bath, partition, cfg.second_order)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"cluster diagonalisation failed: {e}") from e

    finite = cfg.pulses.shape != "ideal"
    factor = _ElectronFactor(cfg) if finite else None
    phases = cfg.error_model.initial_phases_deg if finite else (None,)
    grid = cfg.quantization_ns * 1e-3 if cfg.quantization_ns else None

    curves, skipped = [], []
    for family, n, tau, seqs in _templates(cfg, bath):
        key0 = _key(family, n, tau, 0.0, False)
        if grid:
            try:
                seqs = [quantize_timing(s, grid) for s in seqs]
            except ValueError as e:
                skipped.append({"curve": key0, "reason": str(e)})
                say(f"skipped {key0}: {e}")
                continue
        try:
            contrast = np.real(_pmap(engine.contrast, seqs, cfg.workers))
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"{key0}: {e}") from e
        if not np.all(np.isfinite(contrast)):
            raise NumericalError(f"{key0}: non-finite coherence")
        template = seqs[0].scaled(1.0).to_dict() if family != "fixed_cpmg" else {"tau_us": tau}
        for ph in phases:
            times, sig, dropped = [], [], []
            for s, c in zip(seqs, contrast):
                if finite:
                    try:
                        e = factor(s, np.deg2rad(ph))
                    except ValueError:
                        # finite pulses overlap at this spacing
                        dropped.append(s.total_time)
                        continue
                else:
                    e = 1.0
                times.append(s.total_time)
                sig.append(0.5 + 0.5 * c * e)
            key = _key(family, n, tau, ph if finite else 0.0, finite)
            if len(times) < 2:
                skipped.append({"curve": key, "reason": "fewer than 2 usable time points"})
                continue
            curve = CoherenceCurve(times, sig, label=key)
            fit, ferr = _fit(cfg, family, curve)
            curves.append(CurveResult(key, family, n, tau, ph, template, curve, fit, ferr, dropped))
            say(f"{key}: " + (f"T2 = {fit.t2:.4g} us" if fit is not None and fit.ok else "no T2"))

    scaling = {}
    by_family: dict = {}
    for c in curves:
        if c.n is not None and c.fit is not None and c.fit.ok:
            by_family.setdefault((c.family, c.initial_phase_deg), []).append((c.n, c.fit))
    for (fam, ph), fits in sorted(by_family.items(), key=lambda kv: (kv[0][0], kv[0][1] or 0.0)):
        if len({n for n, _ in fits}) < 3:
            continue
        label = fam if ph is None else f"{fam}-phase{ph:g}"
        scaling[label] = t2_scaling(fits).to_dict()
    return RunResult(cfg, bath, partition, curves, skipped, scaling)


def curve_csv(curve: CoherenceCurve) -> str:
    lines = ["time_us,signal,uncertainty"]
    for t, s, u in zip(curve.times, curve.signal, curve.uncertainty):
        lines.append(f"{float(t)!r},{float(s)!r},{float(u)!r}")
    return "\n".join(lines) + "\n"


def read_curve_csv(path) -> CoherenceCurve:
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] not in (2, 3):
        raise ValueError(f"{path}: expected 2 or 3 columns")
    unc = data[:, 2] if data.shape[1] == 3 else None
    return CoherenceCurve(data[:, 0], data[:, 1], unc, label=path.stem)


def write_outputs(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for c in result.curves:
        (out / f"{c.key}.csv").write_text(curve_csv(c.curve))
    (out / "bath.txt").write_text(dumps_bath(result.bath))
    text = json.dumps(result.manifest(), indent=2, sort_keys=True, allow_nan=False)
    (out / "manifest.json").write_text(text + "\n")
    return out


def run(cfg: RunConfig, log=None) -> RunResult:
    result = simulate(cfg, log)
    write_outputs(result, cfg.output_dir)
    return result
