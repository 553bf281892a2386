"""Experiment orchestration, CSV emission, speedup and area-delay product.

CSV schema (version 1).  The first line is a metadata comment::

    # duetsim schema=1 config_sha256=<hex>

followed by a header row with ``COLUMNS`` and one row per cell.  Columns not
meaningful for an experiment kind are left empty.  Times are nanoseconds
with picosecond resolution, bandwidths are GB/s.
"""

from __future__ import annotations

import csv
import io
import math
import os
from collections.abc import Iterable, Mapping
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any

from .accel import descriptor
from .config import ExperimentConfig, load_config
from .workload.bench import make_benchmark, run_benchmark
from .workload.probes import contention, probe_bandwidth, probe_latency

SCHEMA_VERSION = 1
MHZ = 1_000_000

# (column, type) pairs; the golden schema
SCHEMA: tuple[tuple[str, type], ...] = (
    ("experiment", str),
    ("benchmark", str),
    ("mode", str),
    ("instance", str),
    ("n_processors", int),
    ("fpga_mhz", int),
    ("runtime_ns", float),
    ("noc_ns", float),
    ("fast_cache_ns", float),
    ("slow_cache_ns", float),
    ("cdc_ns", float),
    ("bytes", int),
    ("gbps", float),
    ("ok", int),
    ("violations", int),
    ("adapter_error", str),
    ("digest", str),
    ("note", str),
)
COLUMNS = tuple(c for c, _ in SCHEMA)


@dataclass(frozen=True)
class Cell:
    """One point of an experiment; also the deterministic merge key."""

    kind: str
    name: str  # benchmark, mechanism or register
    mode: str
    fpga_mhz: int | None
    n_processors: int


def cells(cfg: ExperimentConfig) -> list[Cell]:
    """Enumerate the cells of ``cfg`` in output order."""
    out: list[Cell] = []
    freqs = cfg.frequencies_mhz
    if cfg.kind == "benchmarks":
        for b in cfg.benchmarks:
            p = make_benchmark(b, **cfg.params.get(b, {})).n_processors
            for mode in cfg.modes:
                for f in freqs or [None]:
                    if mode == "processor_only" and freqs and f != freqs[0]:
                        continue  # the baseline does not depend on the eFPGA clock
                    out.append(Cell("benchmarks", b, mode, f, p))
    elif cfg.kind in ("latency", "bandwidth"):
        for m in cfg.mechanisms:
            mode = "fpsoc" if m.endswith("_slow") else "duet"
            for f in freqs or []:
                out.append(Cell(cfg.kind, m, mode, f, 1))
    else:
        for r in cfg.registers:
            for n in cfg.processors:
                for f in freqs or [500]:
                    out.append(Cell("contention", f"{r}_reg", "duet", f, n))
    return out


def _ns(ps: float) -> str:
    return f"{ps / 1000:.3f}"


def run_cell(cell: Cell, cfg: ExperimentConfig) -> dict[str, str]:
    """Run one cell and return its CSV row (all values already formatted)."""
    row = dict.fromkeys(COLUMNS, "")
    row.update(experiment=cell.kind, benchmark=cell.name, mode=cell.mode, n_processors=str(cell.n_processors))
    ov = cfg.overrides()
    hz = cell.fpga_mhz * MHZ if cell.fpga_mhz else None
    if cell.kind == "benchmarks":
        bench = make_benchmark(cell.name, **cfg.params.get(cell.name, {}))
        tp = None
        if cfg.trace_dir:
            tp = os.path.join(cfg.trace_dir, f"{cell.name}.{cell.mode}.{cell.fpga_mhz or 'max'}.jsonl")
        try:
            r = run_benchmark(bench, cell.mode, hz, strict_frequency=cfg.strict_frequency, check=cfg.check, trace_path=tp, **ov)
        except ValueError as e:  # e.g. a frequency above timing closure
            row.update(instance=bench.instance, fpga_mhz=str(cell.fpga_mhz or ""), ok="0", violations="0", note=str(e))
            return row
        row.update(
            instance=r.instance,
            fpga_mhz=str(r.fpga_hz // MHZ) if cell.mode != "processor_only" else "",
            runtime_ns=_ns(r.runtime_ps),
            ok=str(int(r.ok)),
            violations=str(len(r.violations)),
            adapter_error=str(r.stats.get("adapter_error") or ""),
            digest=r.digest,
            note=r.detail,
        )
        return row
    row.update(instance=f"P{cell.n_processors}M1", fpga_mhz=str(cell.fpga_mhz), ok="1")
    if cell.kind == "latency":
        lat = probe_latency(cell.name, hz, check=cfg.check, **ov)
        row.update(runtime_ns=_ns(lat.total_ps), violations=str(len(lat.violations)))
        for ph, v in lat.phases.items():
            row[f"{ph}_ns"] = _ns(v)
    elif cell.kind == "bandwidth":
        bw = probe_bandwidth(cell.name, hz, cfg.words, check=cfg.check, **ov)
        row.update(runtime_ns=_ns(bw.time_ps), bytes=str(bw.nbytes), gbps=f"{bw.gbps:.6f}", violations=str(len(bw.violations)))
    else:
        gbps, viol = contention(cell.n_processors, cell.name.split("_")[0], cfg.iterations, hz, check=cfg.check, **ov)
        row.update(bytes=str(8 * cfg.iterations), gbps=f"{gbps:.6f}", violations=str(len(viol)))
    return row


def _run_one(args):
    return run_cell(*args)


def workers() -> int:
    """Worker processes for sweeps, from ``DUETSIM_WORKERS`` (default 1)."""
    raw = os.environ.get("DUETSIM_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"DUETSIM_WORKERS must be an integer, got {raw!r}") from None
    return max(1, n if n > 0 else os.cpu_count() or 1)


def run_config(cfg: ExperimentConfig, n_workers: int | None = None) -> list[dict[str, str]]:
    """Run every cell; rows come back in cell order whatever the parallelism."""
    todo = [(c, cfg) for c in cells(cfg)]
    n = n_workers or workers()
    if n == 1 or len(todo) < 2:
        return [_run_one(a) for a in todo]
    with ProcessPoolExecutor(max_workers=min(n, len(todo))) as ex:
        return list(ex.map(_run_one, todo))


def run_experiment(config_path: str, overrides: list[str] | None = None, n_workers: int | None = None) -> list[dict[str, str]]:
    return run_config(load_config(config_path, overrides), n_workers)


def to_csv(rows: Iterable[Mapping[str, str]], config_sha256: str) -> str:
    buf = io.StringIO()
    buf.write(f"# duetsim schema={SCHEMA_VERSION} config_sha256={config_sha256}\n")
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def read_csv(path: str) -> tuple[dict[str, str], list[dict[str, Any]]]:
    """Parse a results file into (metadata, typed rows)."""
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# duetsim "):
            raise ValueError(f"{path}: missing '# duetsim' metadata line")
        meta = dict(kv.split("=", 1) for kv in first[len("# duetsim ") :].split())
        if meta.get("schema") != str(SCHEMA_VERSION):
            raise ValueError(f"{path}: schema {meta.get('schema')} is not supported (expected {SCHEMA_VERSION})")
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError(f"{path}: header does not match schema {SCHEMA_VERSION}")
        types = dict(SCHEMA)
        rows = [{k: (types[k](v) if v != "" else None) for k, v in r.items()} for r in reader]
    return meta, rows


def violation_count(rows: Iterable[Mapping[str, Any]]) -> int:
    return sum(int(r["violations"] or 0) for r in rows)


# -- speedup and area-delay product -----------------------------------------------------


def compute_speedup(baseline: Mapping[str, Any], accel: Mapping[str, Any]) -> float:
    """``baseline_runtime / accel_runtime`` for two runs of the same benchmark.

    Refuses runs whose functional digests differ: they did not compute the
    same thing, so their runtimes are not comparable.
    """
    if baseline["digest"] != accel["digest"]:
        raise ValueError(f"functional digests differ ({baseline['digest']} vs {accel['digest']}); not the same computation")
    return float(baseline["runtime_ns"]) / float(accel["runtime_ns"])


def platform_area(mode: str, n_processors: int, n_hubs: int, accel: str | None, area: Mapping[str, float]) -> float:
    """Silicon area in mm^2.

    Processor-only is ``p`` processors with their sockets.  The eFPGA adds the
    accelerator's normalized area (in units of processor + socket); Duet
    further adds the register interface, one coherent memory interface per
    hub and a socket per adapter tile.
    """
    for key in ("ariane_mm2", "socket_mm2", "fpga_mgr_mm2", "mem_intf_mm2"):
        if key not in area:
            raise ValueError(f"area table has no {key!r} entry")
    tile = area["ariane_mm2"] + area["socket_mm2"]
    total = n_processors * tile
    if mode == "processor_only":
        return total
    if accel is None:
        raise ValueError("an accelerated platform needs an accelerator area entry")
    total += descriptor(accel).norm_area * tile
    if mode == "duet":
        total += area["fpga_mgr_mm2"] + n_hubs * area["mem_intf_mm2"] + max(n_hubs, 1) * area["socket_mm2"]
    return total


def compute_adp(runtime_ns: float, mode: str, n_processors: int, n_hubs: int, accel: str | None, area: Mapping[str, float]) -> float:
    """Area-delay product in ns * mm^2; lower is better."""
    return runtime_ns * platform_area(mode, n_processors, n_hubs, accel, area)


@dataclass
class ReportLine:
    benchmark: str
    mode: str
    fpga_mhz: int | None
    speedup: float
    norm_adp: float


def report(rows: list[Mapping[str, Any]], area: Mapping[str, float]) -> list[ReportLine]:
    """Speedup and ADP of every accelerated run, normalized to its processor-only baseline."""
    runs = [r for r in rows if r["experiment"] == "benchmarks" and r["ok"]]
    base = {r["benchmark"]: r for r in runs if r["mode"] == "processor_only"}
    out = []
    for r in runs:
        if r["mode"] == "processor_only":
            continue
        b = base.get(r["benchmark"])
        if b is None:
            raise ValueError(f"no processor_only baseline for {r['benchmark']}")
        bench = make_benchmark(r["benchmark"])
        p, m = bench.n_processors, bench.n_hubs
        sp = compute_speedup(b, r)
        adp = compute_adp(r["runtime_ns"], r["mode"], p, m, bench.accel, area)
        out.append(ReportLine(r["benchmark"], r["mode"], r["fpga_mhz"], sp, adp / compute_adp(b["runtime_ns"], "processor_only", p, m, None, area)))
    return out


def geomean(xs: Iterable[float]) -> float:
    xs = list(xs)
    return math.exp(sum(math.log(x) for x in xs) / len(xs)) if xs else float("nan")


def format_report(lines: list[ReportLine]) -> str:
    out = [f"{'benchmark':<12} {'mode':<6} {'MHz':>5} {'speedup':>9} {'norm ADP':>9}"]
    for ln in lines:
        mhz = "" if ln.fpga_mhz is None else str(ln.fpga_mhz)
        out.append(f"{ln.benchmark:<12} {ln.mode:<6} {mhz:>5} {ln.speedup:>9.3f} {ln.norm_adp:>9.3f}")
    for mode in sorted({ln.mode for ln in lines}):
        sel = [ln for ln in lines if ln.mode == mode]
        out.append(f"{'geomean':<12} {mode:<6} {'':>5} {geomean(x.speedup for x in sel):>9.3f} {geomean(x.norm_adp for x in sel):>9.3f}")
    return "\n".join(out)
