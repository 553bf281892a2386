"""Benchmark scaffolding: data layout, the timed-run driver and results."""

from __future__ import annotations

import hashlib
import json
import re
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..checker import Violation, check_trace
from ..platform import Platform, PlatformConfig

WORD = 8


class Layout:
    """Line-aligned bump allocator for benchmark data structures."""

    def __init__(self, base: int = 0x10_0000, line_bytes: int = 16):
        self.next = base
        self.lb = line_bytes

    def alloc(self, nbytes: int, align: int | None = None) -> int:
        align = align or self.lb
        addr = -(-self.next // align) * align
        self.next = addr + max(nbytes, 1)
        return addr


def write_words(plat: Platform, addr: int, values, size: int = WORD) -> None:
    for i, v in enumerate(values):
        plat.init_memory(addr + i * size, size, int(v) & ((1 << (8 * size)) - 1))


def read_words(plat: Platform, addr: int, n: int, size: int = WORD) -> list[int]:
    """Read the coherent value of ``n`` words after the run has settled."""
    return [coherent_read(plat, addr + i * size, size) for i in range(n)]


def coherent_read(plat: Platform, addr: int, size: int = WORD) -> int:
    from ..coherence import line_of, read_bytes

    lb = plat.cfg.cache.line_bytes
    line = line_of(addr, lb)
    for c in plat.caches():
        ln = c.lookup(line)
        if ln is not None and ln.state == "M":
            return read_bytes(ln.data, addr - line, size)
    return plat.memory.read(addr, size)


@dataclass
class RunResult:
    benchmark: str
    mode: str
    instance: str
    fpga_hz: int
    runtime_ps: int
    ok: bool
    detail: str = ""
    violations: list[Violation] = field(default_factory=list)
    stats: dict[str, Any] = field(default_factory=dict)
    digest: str = ""

    @property
    def runtime_ns(self) -> float:
        return self.runtime_ps / 1000


class Benchmark:
    """One benchmark on one instance.

    Subclasses fill in ``prepare`` (untimed memory image), ``warmup``
    (untimed per-CPU programs, the same in every mode), ``program`` (timed
    per-CPU programs, one variant per mode family) and ``verify``.
    """

    name = ""
    accel: str | None = None
    n_processors = 1
    n_hubs = 0

    @property
    def instance(self) -> str:
        return f"P{self.n_processors}M{self.n_hubs}"

    def config(self, mode: str, fpga_hz: int | None = None, **overrides) -> PlatformConfig:
        from ..accel import descriptor

        if fpga_hz is None:
            fpga_hz = descriptor(self.accel).max_freq_hz if self.accel else 500_000_000
        return PlatformConfig(mode=mode, n_processors=self.n_processors, n_hubs=self.n_hubs, fpga_hz=fpga_hz, **overrides)

    def prepare(self, plat: Platform) -> None:
        pass

    def warmup(self, plat: Platform, cpu):
        return None

    def make_accel(self, plat: Platform, strict_frequency: bool):
        raise NotImplementedError

    def program(self, plat: Platform, cpu, mode: str):
        raise NotImplementedError

    def verify(self, plat: Platform) -> tuple[bool, str]:
        return True, ""

    def outputs(self, plat: Platform) -> list:
        """Functional result of the run, hashed into the run's digest."""
        raise NotImplementedError

    def extra_stats(self, plat: Platform) -> dict[str, Any]:
        return {}


def check_instance(bench: Benchmark, mode: str, instance: str) -> None:
    """Reject an instance name ``PpMm`` that cannot host ``bench`` in ``mode``."""
    m = re.fullmatch(r"P(\d+)M(\d+)", instance)
    if m is None:
        raise ValueError(f"instance names look like P4M1, got {instance!r}")
    p, hubs = int(m.group(1)), int(m.group(2))
    ok_hubs = (0, bench.n_hubs) if mode == "processor_only" else (bench.n_hubs,)
    if p != bench.n_processors or hubs not in ok_hubs:
        raise ValueError(f"{bench.name} runs on {bench.instance}, not {instance}")


def cache_snapshot(plat: Platform) -> dict[str, int]:
    """Resident lines per cache group; taken at the start of the timed region."""
    snap = {"cpu_lines": sum(c.cache.resident() for c in plat.cpus)}
    snap["accel_lines"] = sum(h.cache.resident() + (len(h.port.lines) if h.port is not None else 0) for h in plat.hubs)
    return snap


def run_benchmark(
    bench: Benchmark,
    mode: str,
    fpga_hz: int | None = None,
    strict_frequency: bool = True,
    check: bool = True,
    limit_ps: int = 10**13,
    instance: str | None = None,
    trace_path: str | None = None,
    **overrides,
) -> RunResult:
    """Build the platform, run warm-up then the timed region, verify and check.

    Processors start warm (the untimed warm-up loads the inputs) and the
    accelerator side starts cold; both are recorded in the stats.  With
    ``check`` the trace is audited and, given ``trace_path``, saved as JSON lines.
    """
    if instance is not None:
        check_instance(bench, mode, instance)
    cfg = bench.config(mode, fpga_hz, trace=check, **overrides)
    plat = Platform(cfg)
    bench.prepare(plat)
    eng = plat.engine
    for cpu in plat.cpus:
        g = bench.warmup(plat, cpu)
        if g is not None:
            eng.process(g, plat.sys, f"warm.{cpu.name}")
    plat.run(limit_ps)
    plat.settle()

    accel = None
    if mode != "processor_only":
        accel = bench.make_accel(plat, strict_frequency)
        accel.start()
    snap = cache_snapshot(plat)
    if snap["accel_lines"]:
        raise RuntimeError(f"{bench.name}: accelerator caches are not cold at the start ({snap['accel_lines']} lines)")
    t0 = eng.now
    procs = []
    for cpu in plat.cpus:
        g = bench.program(plat, cpu, mode)
        if g is not None:
            procs.append(eng.process(g, plat.sys, cpu.name))
    plat.run(limit_ps)
    t1 = max(p.done.fire_time for p in procs)
    plat.finalize_trace()
    if trace_path is not None and check:
        plat.tracer.dump(trace_path)
    ok, detail = bench.verify(plat)
    violations = check_trace(plat.tracer.events, cfg.cache.line_bytes) if check else []
    stats: dict[str, Any] = {"events": eng.events_processed, "noc_messages": plat.mesh.sent}
    stats["start.cpu_lines"] = snap["cpu_lines"]
    stats["start.accel_lines"] = snap["accel_lines"]
    if plat.adapter is not None:
        stats["adapter_error"] = plat.adapter.error
    for h in plat.hubs:
        if h.port is not None:
            stats[f"{h.name}.soft_hits"] = h.port.stats["hits"]
            stats[f"{h.name}.soft_misses"] = h.port.stats["misses"]
            stats[f"{h.name}.loads"] = h.port.stats["loads"]
            stats[f"{h.name}.stores"] = h.port.stats["stores"]
    stats.update(bench.extra_stats(plat))
    if accel is not None:
        stats.update(getattr(accel, "stats", {}))
    digest = output_digest(bench.name, bench.outputs(plat))
    return RunResult(bench.name, mode, cfg.instance_name, cfg.fpga_hz, t1 - t0, ok, detail, violations, stats, digest)


def output_digest(name: str, outputs: list) -> str:
    blob = json.dumps([name, [int(v) if isinstance(v, (int, np.integer)) else v for v in outputs]])
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _registry() -> dict[str, Callable[..., Benchmark]]:
    from .barnes_hut import BarnesHut
    from .bfs import Bfs
    from .dijkstra import Dijkstra
    from .pdes import Pdes
    from .streaming import Popcount, Sort, Tangent

    reg: dict[str, Callable[..., Benchmark]] = {
        "tangent": Tangent,
        "popcount": Popcount,
        "dijkstra": Dijkstra,
        "barnes_hut": BarnesHut,
    }
    for n in (32, 64, 128):
        reg[f"sort{n}"] = lambda n=n, **kw: Sort(n, **kw)
    for p in (4, 8, 16):
        reg[f"pdes_p{p}"] = lambda p=p, **kw: Pdes(p, **kw)
        reg[f"bfs_p{p}"] = lambda p=p, **kw: Bfs(p, **kw)
    return reg


BENCHMARKS = ("tangent", "popcount", "sort32", "sort64", "sort128", "dijkstra", "barnes_hut",
              "pdes_p4", "pdes_p8", "pdes_p16", "bfs_p4", "bfs_p8", "bfs_p16")


def make_benchmark(name: str, **params) -> Benchmark:
    """Instantiate a shipped benchmark by name with optional parameters."""
    reg = _registry()
    if name not in reg:
        raise ValueError(f"unknown benchmark {name!r}; expected one of {', '.join(BENCHMARKS)}")
    return reg[name](**params)
