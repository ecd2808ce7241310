"""Command-line entry point.

Settings are resolved in this order, later ones winning::

    built-in defaults < $NVBATH_OUTPUT_DIR < config file < --set key=value < flags

Exit status: 0 ok, 1 configuration/input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import config as cfgmod
from .analysis import fit_decay, revival_envelope
from .config import ConfigError
from .lattice import LatticeConfig, generate_bath, hyperfine_norms_khz, load_bath, save_bath
from .runner import NumericalError, _clean, read_curve_csv, run

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


def _load(args):
    if bool(args.config) == bool(args.preset):
        raise ConfigError("give a config file or --preset NAME (not both)", source="nvbath")
    path = cfgmod.preset_path(args.preset) if args.preset else args.config
    cfg = cfgmod.load_config(path, cfgmod.parse_overrides(args.set))
    return cfgmod.with_flags(
        cfg,
        seed=getattr(args, "seed", None),
        output_dir=getattr(args, "output_dir", None),
        workers=getattr(args, "workers", None),
    )


def _cmd_run(args) -> int:
    cfg = _load(args)
    log = None if args.quiet else (lambda m: print(m, file=sys.stderr))
    result = run(cfg, log)
    for s in result.skipped:
        print(f"skipped {s['curve']}: {s['reason']}", file=sys.stderr)
    for fam, sc in result.scaling.items():
        lo, hi = sc["ci95"]
        print(f"{fam}: T2 ~ n^{sc['exponent']:.3f} (95% CI {lo:.3f}..{hi:.3f})")
    print(f"wrote {len(result.curves)} curves to {cfg.output_dir}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = _load(args)
    n_curves = 0
    for s in cfg.sequences:
        n_curves += len(s.tau_us) if s.family == "fixed_cpmg" else len(s.n)
    if cfg.pulses.shape != "ideal":
        n_curves *= len(cfg.error_model.initial_phases_deg)
    mode = "revivals" if cfg.revivals is not None else ("time grid" if cfg.times else "fixed spacing")
    fams = ", ".join(s.family for s in cfg.sequences)
    print(f"ok: {cfg.name} ({mode}; {fams}; {n_curves} curves)")
    return EXIT_OK


def _cmd_presets(args) -> int:
    for name in cfgmod.list_presets():
        print(name)
    return EXIT_OK


def _cmd_bath_gen(args) -> int:
    lc = LatticeConfig(
        radius_sites=args.radius,
        abundance=args.abundance,
        seed=args.seed,
        strong_hf_cutoff=args.cutoff_khz,
    )
    bath = generate_bath(lc, args.field)
    save_bath(bath, args.output)
    print(f"{len(bath)} spins (seed {bath.seed_used}, attempt {bath.attempt}) -> {args.output}")
    return EXIT_OK


def _cmd_bath_show(args) -> int:
    try:
        bath = load_bath(args.path)
    except OSError as e:
        raise ConfigError(f"cannot read bath: {e.strerror}", source=args.path) from None
    except (ValueError, KeyError) as e:
        raise ConfigError(f"malformed bath file: {e}", source=args.path) from None
    info = {
        "n_spins": len(bath),
        "seed": bath.seed_used,
        "attempt": bath.attempt,
        "abundance": bath.abundance,
        "b_field_T": list(bath.b_field),
        "sha256": bath.digest(),
    }
    if len(bath):
        norms = hyperfine_norms_khz(bath)
        info["max_hyperfine_khz"] = float(norms.max())
        info["median_hyperfine_khz"] = float(np.median(norms))
        info["larmor_period_us"] = bath.larmor_period if bath.omega_L > 0 else None
    print(json.dumps(_clean(info), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_fit(args) -> int:
    if args.k != "free":
        try:
            k = float(args.k)
        except ValueError:
            raise ConfigError(f"--k must be 'free' or a number, got {args.k!r}", source="nvbath fit") from None
    else:
        k = "free"
    out = {}
    for path in args.csv:
        try:
            curve = read_curve_csv(path)
        except OSError as e:
            raise ConfigError(f"cannot read: {e.strerror}", source=path) from None
        except ValueError as e:
            raise ConfigError(str(e), source=path) from None
        try:
            fit = revival_envelope(curve) if args.revival else fit_decay(curve, k)
            out[path] = fit.to_dict()
        except ValueError as e:
            out[path] = {"status": "error", "message": str(e)}
    print(json.dumps(_clean(out), indent=2, sort_keys=True))
    return EXIT_OK


def _config_args(p, flags=True):
    p.add_argument("config", nargs="?", help="YAML run configuration")
    p.add_argument("--preset", help="use a shipped preset instead of a file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set partition.max_size=4")
    if flags:
        p.add_argument("--seed", type=int, help="bath seed")
        p.add_argument("--output-dir", help="where CSVs and the manifest go")
        p.add_argument("--workers", type=int, help="threads for time points (output unaffected)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nvbath", description="NV-centre 13C bath decoherence under decoupling")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate, fit and write CSV + manifest")
    _config_args(p)
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("validate", help="check a configuration without computing")
    _config_args(p)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("presets", help="list shipped presets")
    p.set_defaults(func=_cmd_presets)

    pb = sub.add_parser("bath", help="generate or inspect saved baths")
    bsub = pb.add_subparsers(dest="bath_command", required=True)
    g = bsub.add_parser("gen", help="draw a random bath and save it")
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--field", type=float, nargs=3, default=[0.0, 0.0, 0.005], metavar=("BX", "BY", "BZ"),
                   help="tesla")
    g.add_argument("--radius", type=int, default=10, help="lattice cells each side")
    g.add_argument("--abundance", type=float, default=0.011)
    g.add_argument("--cutoff-khz", type=float, default=None, help="redraw if any hyperfine exceeds this")
    g.set_defaults(func=_cmd_bath_gen)
    s = bsub.add_parser("show", help="summarise a saved bath")
    s.add_argument("path")
    s.set_defaults(func=_cmd_bath_show)

    p = sub.add_parser("fit", help="re-fit decay curves from CSV files")
    p.add_argument("csv", nargs="+")
    p.add_argument("--k", default="free", help="'free' (3 < k < 6) or a fixed exponent")
    p.add_argument("--revival", action="store_true", help="revival envelope fit (k = 3)")
    p.set_defaults(func=_cmd_fit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NumericalError, np.linalg.LinAlgError, RuntimeError) as e:
        # checked first: LinAlgError is a ValueError subclass
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        # ConfigError, or invalid physical parameters that slipped past the schema
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
