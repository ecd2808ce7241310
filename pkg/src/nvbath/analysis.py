"""Stretched-exponential decay fits and T2 scaling with pulse number."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import optimize, stats

from .propagate import CoherenceCurve

BASELINE = 0.5
A_MAX = 0.6
K_BOUNDS = (3.0, 6.0)
MIN_DROP = 0.1

# multi-start grid; T2 guesses are fractions of the last sample time
_A_GUESS = (0.3, 0.5)
_T2_GUESS = (0.03, 0.1, 0.3, 1.0, 3.0)
_K_GUESS = (3.0, 4.0, 5.0)


@dataclass
class DecayFit:
    amplitude: float | None
    t2: float | None
    k: float | None
    uncertainties: dict = field(default_factory=dict)
    residual_norm: float = float("nan")
    k_fixed: bool = False
    status: str = "ok"  # "ok" or "out_of_window"
    flags: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def t2_err(self) -> float:
        return self.uncertainties.get("t2", float("nan"))

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "amplitude": self.amplitude,
            "t2_us": self.t2,
            "k": self.k,
            "k_fixed": self.k_fixed,
            "uncertainties": dict(self.uncertainties),
            "residual_norm": self.residual_norm,
            "flags": list(self.flags),
        }


def decay_model(t, amplitude, t2, k):
    return BASELINE + amplitude * np.exp(-((np.asarray(t) / t2) ** k))


def _jacobian(u, A, tau, k):
    x = (u / tau) ** k
    e = np.exp(-x)
    dA = e
    dtau = A * e * x * k / tau
    with np.errstate(divide="ignore", invalid="ignore"):
        lx = np.where(u > 0, np.log(np.where(u > 0, u, 1.0) / tau), 0.0)
    dk = -A * e * x * lx
    return np.stack([dA, dtau, dk], axis=1)


def fit_decay(curve: CoherenceCurve, k_mode="free", min_points: int = 5) -> DecayFit:
    """Weighted least-squares fit of ``0.5 + A exp(-(t/T2)^k)``.

    ``k_mode`` is ``"free"`` (k bounded to [3, 6]) or a number that fixes k.
    Points are weighted by 1/uncertainty^2 when every uncertainty is positive.
    Starts from a fixed grid of initial guesses and keeps the lowest cost, so
    the result is deterministic.
    """
    t = np.asarray(curve.times, dtype=float)
    y = np.asarray(curve.signal, dtype=float)
    sig = np.asarray(curve.uncertainty, dtype=float)
    if len(t) < min_points:
        raise ValueError(f"need at least {min_points} points to fit a decay")
    k_fixed = k_mode != "free"
    if k_fixed:
        k_val = float(k_mode)
        if not k_val > 0:
            raise ValueError("fixed k must be positive")
    if np.max(y) - np.min(y) < MIN_DROP:
        return DecayFit(None, None, None, k_fixed=k_fixed, status="out_of_window", flags=("no_decay",))

    weighted = bool(np.all(sig > 0))
    w = 1.0 / sig if weighted else np.ones_like(y)
    scale = float(np.max(t))
    u = t / scale

    def unpack(p):
        return (p[0], p[1], k_val) if k_fixed else (p[0], p[1], p[2])

    def resid(p):
        A, tau, k = unpack(p)
        return (decay_model(u, A, tau, k) - y) * w

    def jac(p):
        J = _jacobian(u, *unpack(p)) * w[:, None]
        return J[:, :2] if k_fixed else J

    lo = [1e-12, 1e-9] + ([] if k_fixed else [K_BOUNDS[0]])
    hi = [A_MAX, np.inf] + ([] if k_fixed else [K_BOUNDS[1]])
    ks = [None] if k_fixed else _K_GUESS
    best = None
    for A0, tau0, k0 in product(_A_GUESS, _T2_GUESS, ks):
        p0 = [A0, tau0] + ([] if k_fixed else [k0])
        try:
            res = optimize.least_squares(
                resid, p0, jac=jac, bounds=(lo, hi), method="trf",
                ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=2000,
            )
        except (ValueError, FloatingPointError):
            continue
        if np.all(np.isfinite(res.x)) and (best is None or res.cost < best.cost):
            best = res
    if best is None:
        return DecayFit(None, None, None, k_fixed=k_fixed, status="out_of_window", flags=("fit_failed",))
    # trf stops a little short; polish interior optima with unbounded LM
    if np.all(best.x > np.array(lo) + 1e-9) and np.all(best.x < np.array(hi) - 1e-9):
        try:
            pol = optimize.least_squares(resid, best.x, jac=jac, method="lm", ftol=1e-15, xtol=1e-15, gtol=1e-15)
            inside = np.all(pol.x > lo) and np.all(pol.x < hi)
            if inside and np.all(np.isfinite(pol.x)) and pol.cost <= best.cost:
                best = pol
        except (ValueError, FloatingPointError):
            pass

    A, tau, k = unpack(best.x)
    J = jac(best.x)
    dof = max(len(y) - J.shape[1], 1)
    chi2 = float(np.sum(best.fun**2))
    try:
        cov = np.linalg.inv(J.T @ J)
        if not weighted:
            cov = cov * chi2 / dof
        err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        err = np.full(J.shape[1], np.nan)

    flags = []
    if not k_fixed and (np.isclose(k, K_BOUNDS[0], atol=1e-6) or np.isclose(k, K_BOUNDS[1], atol=1e-6)):
        flags.append("k_at_bound")
    if np.isclose(A, A_MAX, atol=1e-9):
        flags.append("amplitude_at_bound")
    if tau > 1.0:
        flags.append("t2_beyond_window")
    unc = {"amplitude": float(err[0]), "t2": float(err[1] * scale)}
    if not k_fixed:
        unc["k"] = float(err[2])
    return DecayFit(
        amplitude=float(A),
        t2=float(tau * scale),
        k=float(k),
        uncertainties=unc,
        residual_norm=float(np.sqrt(np.sum(((decay_model(u, A, tau, k) - y)) ** 2))),
        k_fixed=k_fixed,
        flags=tuple(flags),
    )


def objective_gradient(curve: CoherenceCurve, fit: DecayFit) -> np.ndarray:
    """Gradient of 1/2 sum r^2 with respect to (A, T2[, k]) at ``fit``, in data units."""
    t = np.asarray(curve.times, dtype=float)
    sig = np.asarray(curve.uncertainty, dtype=float)
    w = 1.0 / sig if np.all(sig > 0) else np.ones_like(t)
    r = (decay_model(t, fit.amplitude, fit.t2, fit.k) - curve.signal) * w
    J = _jacobian(t, fit.amplitude, fit.t2, fit.k) * w[:, None]
    if fit.k_fixed:
        J = J[:, :2]
    return J.T @ r


def revival_envelope(revival_peaks: CoherenceCurve) -> DecayFit:
    """Envelope through echo-revival maxima with k fixed at 3."""
    if len(revival_peaks.times) < 4:
        raise ValueError("need at least 4 revival peaks")
    return fit_decay(revival_peaks, k_mode=3.0, min_points=4)


@dataclass
class ScalingResult:
    exponent: float
    stderr: float
    ci: tuple[float, float]
    prefactor: float
    table: list[tuple[int, float, float]]

    def to_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "stderr": self.stderr,
            "ci95": list(self.ci),
            "prefactor_us": self.prefactor,
            "table": [{"n": n, "t2_us": t2, "t2_err_us": e} for n, t2, e in self.table],
        }


def t2_scaling(fits, confidence: float = 0.95) -> ScalingResult:
    """Ordinary least squares of log T2 against log n: T2 = c n^p."""
    rows = []
    for n, f in fits:
        t2 = f.t2 if isinstance(f, DecayFit) else float(f)
        err = f.t2_err if isinstance(f, DecayFit) else float("nan")
        if t2 is None or not t2 > 0:
            raise ValueError(f"non-positive or missing T2 for n={n}")
        rows.append((int(n), float(t2), float(err)))
    if len({r[0] for r in rows}) < 3:
        raise ValueError("need at least 3 distinct pulse numbers")
    rows.sort()
    x = np.log([r[0] for r in rows])
    y = np.log([r[1] for r in rows])
    lr = stats.linregress(x, y)
    q = stats.t.ppf(0.5 + confidence / 2, len(rows) - 2)
    half = q * lr.stderr
    return ScalingResult(
        float(lr.slope), float(lr.stderr), (float(lr.slope - half), float(lr.slope + half)),
        float(np.exp(lr.intercept)), rows,
    )
