"""Run configuration: a versioned YAML document mapped onto frozen dataclasses.

Every validation error carries the line of the offending key, e.g.::

    config.yaml:12: sequences[1].family: unknown family 'cdd'
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from .hamiltonian import MAX_CLUSTER_SIZE, SecondOrderOptions
from .sequences import COMMENSURATE, FAMILIES, xy_phases

SCHEMA = "nvbath-run/1"
OUTPUT_ENV = "NVBATH_OUTPUT_DIR"
PRESET_DIR = Path(__file__).parent / "presets"

FAMILY_NAMES = tuple(sorted(FAMILIES)) + ("fixed_cpmg",)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line else f"{source}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class BathSpec:
    radius_sites: int = 10
    abundance: float = 0.011
    strong_hf_cutoff_khz: float | None = None
    path: str | None = None  # load a saved bath instead of generating one


@dataclass(frozen=True)
class PartitionSpec:
    max_size: int = 6
    threshold_khz: float = 0.1


@dataclass(frozen=True)
class SequenceSpec:
    family: str
    n: tuple[int, ...] = ()
    tau_us: tuple[float, ...] = ()  # fixed_cpmg only
    blocks: tuple[int, ...] = ()  # fixed_cpmg only


@dataclass(frozen=True)
class TimeGrid:
    """``num`` points from ``start_us`` to ``stop_us * n**n_exponent``."""

    start_us: float
    stop_us: float
    num: int
    n_exponent: float = 0.0

    def times(self, n: int) -> np.ndarray:
        return np.linspace(self.start_us, self.stop_us * float(n) ** self.n_exponent, self.num)


@dataclass(frozen=True)
class RevivalSpec:
    multiples: tuple[int, ...]


@dataclass(frozen=True)
class PulseSpec:
    shape: str = "ideal"
    duration_ns: float = 0.0
    composite: bool = False
    step_ns: float = 1.0


@dataclass(frozen=True)
class ErrorSpec:
    rabi_mhz: float | None = None
    n14_splitting_mhz: float = 2.1
    amplitude_error: float = 0.0
    detune_free: bool = True
    initial_phases_deg: tuple[float, ...] = (0.0,)


@dataclass(frozen=True)
class RunConfig:
    name: str
    sequences: tuple[SequenceSpec, ...]
    seed: int = 0
    field_T: tuple[float, float, float] = (0.0, 0.0, 0.005)
    bath: BathSpec = BathSpec()
    partition: PartitionSpec = PartitionSpec()
    second_order: SecondOrderOptions = SecondOrderOptions()
    times: TimeGrid | None = None
    revivals: RevivalSpec | None = None
    fit_k: str | float = "free"
    pulses: PulseSpec = PulseSpec()
    error_model: ErrorSpec = ErrorSpec()
    quantization_ns: float | None = None
    output_dir: str = "nvbath-out"
    workers: int = 1

    def physics_dict(self) -> dict:
        """Everything that determines the numbers (no output dir, no worker count).

        The result is itself a valid config document: ``loads_config`` on its
        YAML/JSON dump gives back an equal configuration.
        """
        d = {
            "schema": SCHEMA,
            "name": self.name,
            "seed": self.seed,
            "field_T": list(self.field_T),
            "bath": asdict(self.bath),
            "partition": asdict(self.partition),
            "second_order": {
                "mediated_coupling": self.second_order.enable_mediated_coupling,
                "enhanced_zeeman": self.second_order.enable_enhanced_zeeman,
            },
            "sequences": [
                {"family": s.family, "tau_us": list(s.tau_us), "blocks": list(s.blocks)}
                if s.family == "fixed_cpmg"
                else {"family": s.family, "n": list(s.n)}
                for s in self.sequences
            ],
            "fit": {"k": self.fit_k},
            "pulses": asdict(self.pulses),
            "error_model": asdict(self.error_model),
            "quantization_ns": self.quantization_ns,
        }
        if self.times is not None:
            d["times"] = asdict(self.times)
        if self.revivals is not None:
            d["revivals"] = asdict(self.revivals)
        return _plain(d)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


# -- YAML with line numbers ---------------------------------------------------


class _Doc:
    """Parsed document plus a path -> line map."""

    def __init__(self, text: str, source: str):
        self.source = source
        loader = yaml.SafeLoader(text)
        try:
            node = loader.get_single_node()
            self.data = loader.construct_document(node) if node is not None else None
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise ConfigError(f"YAML syntax error: {getattr(e, 'problem', e)}",
                              mark.line + 1 if mark else None, source) from None
        finally:
            loader.dispose()
        self.lines: dict[tuple, int] = {}
        if node is not None:
            self._walk(node, ())

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = path + (k.value,)
                self._walk(v, key)
                self.lines[key] = k.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, path + (i,))

    def line(self, path) -> int | None:
        path = tuple(path)
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path)

    def error(self, path, msg) -> ConfigError:
        return ConfigError(f"{_fmt(path)}: {msg}" if path else msg, self.line(path), self.source)


def _fmt(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


class _Reader:
    """Typed access to one mapping of the document, tracking unused keys."""

    def __init__(self, doc: _Doc, data, path=()):
        self.doc, self.path = doc, tuple(path)
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise doc.error(path, "expected a mapping")
        self.data = data
        self.used: set = set()

    def has(self, key) -> bool:
        return key in self.data and self.data[key] is not None

    def raw(self, key, default=None):
        self.used.add(key)
        return self.data.get(key, default)

    def sub(self, key) -> "_Reader":
        return _Reader(self.doc, self.raw(key), self.path + (key,))

    def err(self, key, msg) -> ConfigError:
        return self.doc.error(self.path + ((key,) if key is not None else ()), msg)

    def get(self, key, kind, default=..., allow_none=False, check=None, why=""):
        if key not in self.data:
            if default is ...:
                raise self.err(None, f"missing required field '{key}'")
            return default
        v = self.raw(key)
        if v is None and allow_none:
            return None
        try:
            v = _coerce(v, kind)
        except (TypeError, ValueError):
            raise self.err(key, f"expected {kind.__name__}, got {v!r}") from None
        if check is not None and not check(v):
            raise self.err(key, why or f"invalid value {v!r}")
        return v

    def get_list(self, key, kind, default=..., check=None, why=""):
        if key not in self.data:
            if default is ...:
                raise self.err(None, f"missing required field '{key}'")
            return default
        v = self.raw(key)
        if not isinstance(v, list):
            v = [v]
        out = []
        for i, x in enumerate(v):
            try:
                x = _coerce(x, kind)
            except (TypeError, ValueError):
                raise self.doc.error(self.path + (key, i), f"expected {kind.__name__}, got {x!r}") from None
            if check is not None and not check(x):
                raise self.doc.error(self.path + (key, i), why or f"invalid value {x!r}")
            out.append(x)
        return tuple(out)

    def finish(self):
        extra = [k for k in self.data if k not in self.used]
        if extra:
            raise self.err(extra[0], f"unknown field '{extra[0]}'")


def _coerce(v, kind):
    if kind is bool:
        if not isinstance(v, bool):
            raise TypeError
        return v
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise TypeError
        return v
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise TypeError
        return float(v)
    if kind is str:
        if not isinstance(v, str):
            raise TypeError
        return v
    raise TypeError(kind)


_pos = lambda x: x > 0  # noqa: E731
_nonneg = lambda x: x >= 0  # noqa: E731


def _parse(doc: _Doc) -> RunConfig:
    top = _Reader(doc, doc.data)
    schema = top.get("schema", str)
    if schema != SCHEMA:
        raise top.err("schema", f"unsupported schema {schema!r} (expected {SCHEMA!r})")
    name = top.get("name", str, "run")
    seed = top.get("seed", int, 0, check=_nonneg, why="seed must be >= 0")
    field_T = top.get_list("field_T", float, (0.0, 0.0, 0.005))
    if len(field_T) != 3:
        raise top.err("field_T", "field_T needs three components [Bx, By, Bz] in tesla")

    b = top.sub("bath")
    bath = BathSpec(
        radius_sites=b.get("radius_sites", int, 10, check=_pos, why="radius_sites must be positive"),
        abundance=b.get("abundance", float, 0.011, check=lambda x: 0 <= x <= 1,
                        why="abundance must lie in [0, 1]"),
        strong_hf_cutoff_khz=b.get("strong_hf_cutoff_khz", float, None, allow_none=True, check=_pos),
        path=b.get("path", str, None, allow_none=True),
    )
    b.finish()

    p = top.sub("partition")
    partition = PartitionSpec(
        max_size=p.get("max_size", int, 6, check=lambda x: 1 <= x <= MAX_CLUSTER_SIZE,
                       why=f"max_size must lie in [1, {MAX_CLUSTER_SIZE}]"),
        threshold_khz=p.get("threshold_khz", float, 0.1, check=_nonneg),
    )
    p.finish()

    s = top.sub("second_order")
    second = SecondOrderOptions(
        enable_mediated_coupling=s.get("mediated_coupling", bool, False),
        enable_enhanced_zeeman=s.get("enhanced_zeeman", bool, False),
    )
    s.finish()

    raw_seqs = top.raw("sequences")
    if not isinstance(raw_seqs, list) or not raw_seqs:
        raise top.err("sequences" if "sequences" in top.data else None,
                      "'sequences' must be a nonempty list")
    seqs = []
    for i, entry in enumerate(raw_seqs):
        q = _Reader(doc, entry, ("sequences", i))
        fam = q.get("family", str)
        if fam not in FAMILY_NAMES:
            raise q.err("family", f"unknown family {fam!r}; choose from {', '.join(FAMILY_NAMES)}")
        if fam == "fixed_cpmg":
            spec = SequenceSpec(
                fam,
                tau_us=q.get_list("tau_us", float, check=_pos),
                blocks=q.get_list("blocks", int, check=_pos),
            )
            if not spec.tau_us or not spec.blocks:
                raise q.err(None, "fixed_cpmg needs nonempty 'tau_us' and 'blocks'")
            if list(spec.blocks) != sorted(set(spec.blocks)):
                raise q.err("blocks", "blocks must be strictly increasing")
        else:
            ns = q.get_list("n", int, check=_pos, why="pulse counts must be positive")
            if not ns:
                raise q.err("n", "n list must be nonempty")
            if len(set(ns)) != len(ns):
                raise q.err("n", "duplicate pulse counts")
            for j, n in enumerate(ns):
                if fam == "hahn" and n != 1:
                    raise doc.error(("sequences", i, "n", j), "hahn has exactly one pulse")
                if fam == "xy":
                    try:
                        xy_phases(n)
                    except ValueError as e:
                        raise doc.error(("sequences", i, "n", j), str(e)) from None
            spec = SequenceSpec(fam, n=ns)
        q.finish()
        seqs.append(spec)

    has_times, has_rev = top.has("times"), top.has("revivals")
    top.used.update(("times", "revivals"))
    only_fixed = all(q.family == "fixed_cpmg" for q in seqs)
    if only_fixed and (has_times or has_rev):
        raise top.err("times" if has_times else "revivals",
                      "fixed_cpmg sets its own times through 'blocks'; drop this section")
    if not only_fixed and has_times == has_rev:
        raise top.err(None, "give exactly one of 'times' or 'revivals'")
    times = revivals = None
    if only_fixed:
        pass
    elif has_times:
        t = top.sub("times")
        times = TimeGrid(
            start_us=t.get("start_us", float, check=_pos, why="start_us must be positive"),
            stop_us=t.get("stop_us", float, check=_pos),
            num=t.get("num", int, check=lambda x: x >= 2, why="num must be >= 2"),
            n_exponent=t.get("n_exponent", float, 0.0),
        )
        t.finish()
        if not times.stop_us > times.start_us:
            raise t.err("stop_us", "stop_us must exceed start_us")
    else:
        r = top.sub("revivals")
        mult = r.get_list("multiples", int, check=_pos, why="revival multiples must be positive")
        if not mult or list(mult) != sorted(set(mult)):
            raise r.err("multiples", "multiples must be a nonempty strictly increasing list")
        revivals = RevivalSpec(mult)
        r.finish()

    if revivals is not None:
        for i, q in enumerate(seqs):
            if q.family not in COMMENSURATE and q.family != "fixed_cpmg":
                raise doc.error(("sequences", i, "family"),
                                f"revivals require commensurate spacing ({q.family} has none)")

    f = top.sub("fit")
    k = f.raw("k", "free")
    if k != "free":
        if isinstance(k, bool) or not isinstance(k, (int, float)) or not k > 0:
            raise f.err("k", "k must be 'free' or a positive number")
        k = float(k)
    f.finish()

    pu = top.sub("pulses")
    pulses = PulseSpec(
        shape=pu.get("shape", str, "ideal", check=lambda x: x in ("ideal", "square", "gaussian"),
                     why="shape must be ideal, square or gaussian"),
        duration_ns=pu.get("duration_ns", float, 0.0, check=_nonneg),
        composite=pu.get("composite", bool, False),
        step_ns=pu.get("step_ns", float, 1.0, check=_pos),
    )
    if pulses.shape == "ideal" and (pulses.duration_ns or pulses.composite):
        raise pu.err("shape", "ideal pulses take no duration and cannot be composite")
    if pulses.shape != "ideal" and not pulses.duration_ns > 0:
        raise pu.err("duration_ns", "finite pulses need a positive duration_ns")
    pu.finish()

    e = top.sub("error_model")
    err = ErrorSpec(
        rabi_mhz=e.get("rabi_mhz", float, None, allow_none=True, check=_pos),
        n14_splitting_mhz=e.get("n14_splitting_mhz", float, 2.1, check=_nonneg),
        amplitude_error=e.get("amplitude_error", float, 0.0, check=lambda x: x > -1),
        detune_free=e.get("detune_free", bool, True),
        initial_phases_deg=e.get_list("initial_phases_deg", float, (0.0,)),
    )
    if not err.initial_phases_deg:
        raise e.err("initial_phases_deg", "need at least one initial phase")
    e.finish()

    cfg = RunConfig(
        name=name,
        sequences=tuple(seqs),
        seed=seed,
        field_T=tuple(field_T),
        bath=bath,
        partition=partition,
        second_order=second,
        times=times,
        revivals=revivals,
        fit_k=k,
        pulses=pulses,
        error_model=err,
        quantization_ns=top.get("quantization_ns", float, None, allow_none=True, check=_pos),
        output_dir=top.get("output_dir", str, os.environ.get(OUTPUT_ENV, "nvbath-out")),
        workers=top.get("workers", int, 1, check=_pos, why="workers must be >= 1"),
    )
    top.finish()
    if revivals is not None and not np.linalg.norm(cfg.field_T) > 0:
        raise doc.error(("field_T",), "revivals need a nonzero field")
    return cfg


# -- public entry points -------------------------------------------------------


def _set_path(data: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    cur = data
    for k in keys[:-1]:
        if not isinstance(cur.get(k), dict):
            cur[k] = {}
        cur = cur[k]
    cur[keys[-1]] = value


def parse_overrides(items) -> list[tuple[str, object]]:
    """``key.path=value`` strings; values are parsed as YAML scalars/lists."""
    out = []
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value", source="--set")
        key, val = item.split("=", 1)
        try:
            out.append((key.strip(), yaml.safe_load(val)))
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse value of {key!r}: {e}", source="--set") from None
    return out


def loads_config(text: str, source: str = "<config>", overrides=()) -> RunConfig:
    """Parse a config document; ``overrides`` are (dotted key, value) pairs applied on top."""
    doc = _Doc(text, source)
    if doc.data is None:
        raise ConfigError("empty config", None, source)
    if not isinstance(doc.data, dict):
        raise ConfigError("top level must be a mapping", 1, source)
    for key, val in overrides:
        _set_path(doc.data, key, val)
    return _parse(doc)


def load_config(path, overrides=()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", source=str(path)) from None
    return loads_config(text, str(path), overrides)


def preset_path(name: str) -> Path:
    p = PRESET_DIR / f"{name}.yaml"
    if not p.exists():
        known = ", ".join(sorted(x.stem for x in PRESET_DIR.glob("*.yaml")))
        raise ConfigError(f"unknown preset {name!r}; available: {known}", source="--preset")
    return p


def list_presets() -> list[str]:
    return sorted(x.stem for x in PRESET_DIR.glob("*.yaml"))


def with_flags(cfg: RunConfig, seed=None, output_dir=None, workers=None) -> RunConfig:
    """Command-line flags win over everything else."""
    kw = {}
    if seed is not None:
        kw["seed"] = seed
    if output_dir is not None:
        kw["output_dir"] = str(output_dir)
    if workers is not None:
        if workers < 1:
            raise ConfigError("workers must be >= 1", source="--workers")
        kw["workers"] = workers
    return replace(cfg, **kw) if kw else cfg
