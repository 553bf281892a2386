"""Experiment configuration: an INI file with sections, validated before any run.

Sections and keys (every key is optional; defaults are listed in ``DEFAULTS``
and the platform/cache dataclasses)::

    [experiment]
    kind = benchmarks           ; benchmarks | latency | bandwidth | contention
    benchmarks = all            ; comma list of benchmark names
    modes = processor_only, fpsoc, duet
    frequencies_mhz = max       ; "max": timing closure per accelerator (probes: the sweep)
                                ; "sweep": 20, 50, 100, 125, 250, 500; or a list
    strict_frequency = true     ; refuse frequencies above timing closure
    check = true                ; record a trace and audit it
    mechanisms = all            ; latency / bandwidth probes
    words = 512                 ; bandwidth transfer size in 8-byte words
    processors = 1, 2, 4, 8, 16 ; contention
    registers = shadow, normal  ; contention
    iterations = 512            ; contention

    [platform]   any scalar field of PlatformConfig except mode/n_processors/n_hubs/fpga_hz/trace
    [cache]      any field of CacheConfig
    [area]       ariane_mm2, socket_mm2, fpga_mgr_mm2, mem_intf_mm2

    [benchmark.NAME]
    param = value               ; constructor argument, Python literal syntax
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
import hashlib
import re
from dataclasses import dataclass, field
from typing import Any

from .coherence import CacheConfig
from .platform import PlatformConfig
from .workload.bench import BENCHMARKS, make_benchmark
from .workload.probes import BANDWIDTH_MECHANISMS, MECHANISMS

KINDS = ("benchmarks", "latency", "bandwidth", "contention")
MODES = ("processor_only", "fpsoc", "duet")
SWEEP_MHZ = (20, 50, 100, 125, 250, 500)

DEFAULTS = {
    "kind": "benchmarks",
    "benchmarks": "all",
    "modes": ", ".join(MODES),
    "frequencies_mhz": "max",
    "strict_frequency": "true",
    "check": "true",
    "mechanisms": "all",
    "words": "512",
    "processors": "1, 2, 4, 8, 16",
    "registers": "shadow, normal",
    "iterations": "512",
}

# Scaled areas of the fixed components, mm^2
AREA_DEFAULTS = {"ariane_mm2": 1.56, "socket_mm2": 1.1, "fpga_mgr_mm2": 0.21, "mem_intf_mm2": 0.04}

_RESERVED = {"mode", "n_processors", "n_hubs", "fpga_hz", "trace", "cache"}
PLATFORM_KEYS = {f.name: f for f in dataclasses.fields(PlatformConfig) if f.name not in _RESERVED}
CACHE_KEYS = {f.name: f for f in dataclasses.fields(CacheConfig)}


class ConfigError(ValueError):
    """A configuration problem, located by file, line and field."""

    def __init__(self, msg: str, path: str = "<string>", line: int | None = None, key: str = ""):
        where = f"{path}:{line}" if line else path
        super().__init__(f"{where}: {key + ': ' if key else ''}{msg}")
        self.line = line
        self.key = key


@dataclass
class ExperimentConfig:
    kind: str = "benchmarks"
    benchmarks: list[str] = field(default_factory=lambda: list(BENCHMARKS))
    modes: list[str] = field(default_factory=lambda: list(MODES))
    frequencies_mhz: list[int] | None = None  # None = timing closure per accelerator
    strict_frequency: bool = True
    check: bool = True
    mechanisms: list[str] = field(default_factory=lambda: list(MECHANISMS))
    words: int = 512
    processors: list[int] = field(default_factory=lambda: [1, 2, 4, 8, 16])
    registers: list[str] = field(default_factory=lambda: ["shadow", "normal"])
    iterations: int = 512
    platform: dict[str, Any] = field(default_factory=dict)
    cache: dict[str, Any] = field(default_factory=dict)
    area: dict[str, float] = field(default_factory=lambda: dict(AREA_DEFAULTS))
    params: dict[str, dict[str, Any]] = field(default_factory=dict)
    text: str = ""
    trace_dir: str | None = None  # set by the command line, not the file

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def overrides(self) -> dict[str, Any]:
        """Keyword overrides for PlatformConfig."""
        out = dict(self.platform)
        if self.cache:
            out["cache"] = CacheConfig(**self.cache)
        return out


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    """Line number of a section header, or of ``key`` inside it."""
    cur = None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            cur = m.group(1).strip()
            if key is None and cur == section:
                return i
            continue
        if key is not None and cur == section:
            m = re.match(r"([^=:]+?)\s*[=:]", s)
            if m and m.group(1).strip().lower() == key:
                return i
    return None


def _list(v: str) -> list[str]:
    return [x.strip() for x in v.split(",") if x.strip()]


def _coerce(raw: str, typ: Any, default: Any) -> Any:
    kind = type(default) if default is not dataclasses.MISSING else typ
    if kind is bool or typ in ("bool", bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is int or typ in ("int", int):
        return int(ast.literal_eval(raw.strip()))
    if kind is float or typ in ("float", float):
        return float(raw)
    return raw.strip()


def parse_config(text: str, path: str = "<string>", overrides: list[str] | None = None) -> ExperimentConfig:
    """Parse and validate; ``overrides`` are ``section.key=value`` strings applied last."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=path)
    except configparser.Error as e:
        line = getattr(e, "lineno", None)
        raise ConfigError(str(e).splitlines()[0], path, line) from None
    for ov in overrides or []:
        m = re.fullmatch(r"\s*([\w.]+)\.(\w+)\s*=(.*)", ov)
        if not m:
            raise ConfigError(f"override must look like section.key=value, got {ov!r}", path)
        sec, key, val = m.group(1), m.group(2), m.group(3).strip()
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key, val)
        text += f"\n# override {sec}.{key}={val}"

    cfg = ExperimentConfig(text=text)

    def err(msg: str, sec: str, key: str | None = None):
        return ConfigError(msg, path, _line_of(text, sec, key), f"[{sec}] {key}" if key else f"[{sec}]")

    for sec in cp.sections():
        if sec == "experiment":
            exp = dict(DEFAULTS)
            for key, val in cp.items(sec):
                if key not in DEFAULTS:
                    raise err(f"unknown key; expected one of {', '.join(DEFAULTS)}", sec, key)
                exp[key] = val
            try:
                _apply_experiment(cfg, exp)
            except ValueError as e:
                bad = getattr(e, "key", None)
                raise err(str(e), sec, bad) from None
        elif sec in ("platform", "cache"):
            table = PLATFORM_KEYS if sec == "platform" else CACHE_KEYS
            dest = cfg.platform if sec == "platform" else cfg.cache
            for key, val in cp.items(sec):
                if key not in table:
                    raise err(f"unknown key; expected one of {', '.join(sorted(table))}", sec, key)
                f = table[key]
                default = f.default if f.default is not dataclasses.MISSING else dataclasses.MISSING
                try:
                    dest[key] = _coerce(val, f.type, default)
                except (ValueError, SyntaxError) as e:
                    raise err(f"bad value {val!r}: {e}", sec, key) from None
        elif sec == "area":
            for key, val in cp.items(sec):
                if key not in AREA_DEFAULTS:
                    raise err(f"unknown key; expected one of {', '.join(AREA_DEFAULTS)}", sec, key)
                try:
                    cfg.area[key] = float(val)
                except ValueError:
                    raise err(f"bad value {val!r}", sec, key) from None
        elif sec.startswith("benchmark."):
            name = sec.split(".", 1)[1]
            if name not in BENCHMARKS:
                raise err(f"unknown benchmark {name!r}", sec)
            params = {}
            for key, val in cp.items(sec):
                try:
                    params[key] = ast.literal_eval(val)
                except (ValueError, SyntaxError):
                    raise err(f"bad value {val!r}; use Python literal syntax", sec, key) from None
            try:
                make_benchmark(name, **params)
            except TypeError as e:
                m = re.search(r"argument '(\w+)'", str(e))
                key = m.group(1) if m and m.group(1) in params else None
                raise err(f"unknown parameter ({e})", sec, key) from None
            cfg.params[name] = params
        else:
            raise err("unknown section; expected experiment, platform, cache, area or benchmark.NAME", sec)

    try:
        PlatformConfig(**cfg.overrides()).validate()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid platform: {e}", path) from None
    return cfg


class _KeyError(ValueError):
    def __init__(self, msg: str, key: str):
        super().__init__(msg)
        self.key = key


def _choose(raw: str, allowed, key: str) -> list[str]:
    vals = list(allowed) if raw.strip() == "all" else _list(raw)
    for v in vals:
        if v not in allowed:
            raise _KeyError(f"unknown value {v!r}; expected one of {', '.join(allowed)}", key)
    if not vals:
        raise _KeyError("empty list", key)
    return vals


def _ints(raw: str, key: str) -> list[int]:
    try:
        vals = [int(v) for v in _list(raw)]
    except ValueError:
        raise _KeyError(f"expected integers, got {raw!r}", key) from None
    if not vals or min(vals) < 1:
        raise _KeyError("expected positive integers", key)
    return vals


def _apply_experiment(cfg: ExperimentConfig, exp: dict[str, str]) -> None:
    kind = exp["kind"].strip()
    if kind not in KINDS:
        raise _KeyError(f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}", "kind")
    cfg.kind = kind
    cfg.benchmarks = _choose(exp["benchmarks"], BENCHMARKS, "benchmarks")
    cfg.modes = _choose(exp["modes"], MODES, "modes")
    mechs = MECHANISMS if kind != "bandwidth" else BANDWIDTH_MECHANISMS
    cfg.mechanisms = _choose(exp["mechanisms"], mechs, "mechanisms")
    f = exp["frequencies_mhz"].strip()
    if f == "max":
        cfg.frequencies_mhz = None if kind == "benchmarks" else list(SWEEP_MHZ)
    elif f == "sweep":
        cfg.frequencies_mhz = list(SWEEP_MHZ)
    else:
        cfg.frequencies_mhz = _ints(f, "frequencies_mhz")
    for key in ("strict_frequency", "check"):
        try:
            setattr(cfg, key, _coerce(exp[key], bool, True))
        except ValueError as e:
            raise _KeyError(str(e), key) from None
    for key in ("words", "iterations"):
        setattr(cfg, key, _ints(exp[key], key)[0])
    cfg.processors = _ints(exp["processors"], "processors")
    cfg.registers = _choose(exp["registers"], ("shadow", "normal"), "registers")


def load_config(path: str, overrides: list[str] | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), path, overrides)
