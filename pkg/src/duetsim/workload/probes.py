"""Microbenchmarks: single-transaction latency, transfer bandwidth, register contention."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..checker import Violation, check_trace
from ..platform import Platform, PlatformConfig
from ..simkernel import Signal, wait_all
from ..trace import PHASES, PhaseTag

MECHANISMS = ("normal_reg", "shadow_reg", "efpga_pull_slow", "efpga_pull_proxy", "cpu_pull_slow", "cpu_pull_proxy")
BANDWIDTH_MECHANISMS = ("normal_reg", "shadow_reg", "efpga_pull_slow", "efpga_pull_proxy", "cpu_pull_slow", "cpu_pull_proxy")

PROBE_ADDR = 0x20_0000
BUF_A = 0x30_0000
BUF_B = 0x40_0000
WORDS = 512
NORMAL_REG, SHADOW_REG, TO_FPGA, FROM_FPGA = 1, 2, 3, 4


@dataclass
class Latency:
    mechanism: str
    fpga_hz: int
    total_ps: int
    phases: dict[str, int]
    violations: list[Violation] = field(default_factory=list)

    @property
    def total_ns(self) -> float:
        return self.total_ps / 1000


@dataclass
class Bandwidth:
    mechanism: str
    fpga_hz: int
    nbytes: int
    time_ps: int
    violations: list[Violation] = field(default_factory=list)

    @property
    def gbps(self) -> float:
        """Gigabytes per second."""
        return self.nbytes / self.time_ps * 1000


class _Regs:
    """Scratchpad-like register handler: constant reads, optional deferred
    reads, and an echo from the fpga-bound FIFO to the cpu-bound FIFO."""

    def __init__(self, platform):
        self.values: dict[int, int] = {}
        self.on_read = None
        c = platform.control
        c.declare(NORMAL_REG, "normal")
        c.declare(SHADOW_REG, "plain")
        c.declare(TO_FPGA, "fpga_bound_fifo")
        c.declare(FROM_FPGA, "cpu_bound_fifo")
        self.regs = c.regs
        c.regs.handler = self

    def register_write(self, reg: int, value: int) -> None:
        if reg == TO_FPGA:
            self.regs.push_cpu(FROM_FPGA, value)
        self.values[reg] = value

    def register_read(self, reg: int):
        if self.on_read is not None:
            return self.on_read(reg)
        return self.values.get(reg, 0)


def _mode(mechanism: str) -> str:
    return "fpsoc" if mechanism.endswith("_slow") else "duet"


def _check_mode(mechanism: str, mode: str | None) -> str:
    need = _mode(mechanism)
    if mode is not None and mode != need:
        raise ValueError(f"{mechanism} runs on the {need} platform, not {mode}")
    return need


def _platform(mode: str, fpga_hz: int, n_processors: int = 1, check: bool = False, **overrides) -> Platform:
    return Platform(PlatformConfig(mode=mode, n_processors=n_processors, n_hubs=1, fpga_hz=fpga_hz, trace=check, **overrides))


def _audit(plat: Platform) -> list[Violation]:
    if not plat.cfg.trace:
        return []
    plat.finalize_trace()
    return check_trace(plat.tracer.events, plat.cfg.cache.line_bytes)


def _run(plat: Platform, gen, dom) -> None:
    plat.engine.process(gen, dom, "probe")
    plat.run()
    plat.settle()


def probe_latency(mechanism: str, fpga_hz: int = 100_000_000, mode: str | None = None, check: bool = False, **overrides) -> Latency:
    """Round trip of one transaction split into noc/fast_cache/slow_cache/cdc.

    Pulls miss in the requester's cache and hit a Modified copy in the other
    party's private cache.
    """
    if mechanism not in MECHANISMS:
        raise ValueError(f"unknown mechanism {mechanism!r}; expected one of {MECHANISMS}")
    plat = _platform(_check_mode(mechanism, mode), fpga_hz, check=check, **overrides)
    eng, cpu = plat.engine, plat.cpus[0]
    _Regs(plat)
    out: dict[str, PhaseTag] = {}

    if mechanism in ("normal_reg", "shadow_reg"):
        reg = NORMAL_REG if mechanism == "normal_reg" else SHADOW_REG

        def prog():
            tag = out["t"] = PhaseTag(eng.now)
            yield from cpu.mmio_read(reg, tag)
            tag.charge("fast_cache", eng.now)

        _run(plat, prog(), plat.sys)
    elif mechanism.startswith("efpga_pull"):
        port = plat.port(0)

        def setup():
            yield from cpu.store(PROBE_ADDR, 8, 0x5EED)

        def pull():
            tag = out["t"] = PhaseTag(eng.now)
            yield port.issue_load(PROBE_ADDR, tag)
            tag.charge("slow_cache", eng.now)

        _run(plat, setup(), plat.sys)
        _run(plat, pull(), plat.fpga)
    else:
        port = plat.port(0)

        def setup():
            yield from port.store(PROBE_ADDR, 8, 0x5EED)
            yield from port.fence()

        def pull():
            tag = out["t"] = PhaseTag(eng.now)
            yield from cpu.load(PROBE_ADDR, tag=tag)
            tag.charge("fast_cache", eng.now)

        _run(plat, setup(), plat.fpga)
        _run(plat, pull(), plat.sys)
    tag = out["t"]
    return Latency(mechanism, fpga_hz, tag.total, {p: tag.phases[p] for p in PHASES}, _audit(plat))


def probe_bandwidth(
    mechanism: str, fpga_hz: int = 100_000_000, words: int = WORDS, mode: str | None = None, check: bool = False, **overrides
) -> Bandwidth:
    """Move ``words`` 8-byte integers between a processor and the eFPGA.

    Register mechanisms loop writing then reading one integer per iteration;
    the bandwidth counts one direction.  For shared memory the processor wakes the eFPGA with a normal-register read that is only
    answered once the eFPGA side is finished, so it doubles as a barrier.
    ``efpga_pull``: the eFPGA loads a buffer the processor has just written.
    ``cpu_pull``: the eFPGA writes a buffer which the processor then loads.
    """
    if mechanism not in BANDWIDTH_MECHANISMS:
        raise ValueError(f"unknown mechanism {mechanism!r}; expected one of {BANDWIDTH_MECHANISMS}")
    plat = _platform(_check_mode(mechanism, mode), fpga_hz, check=check, **overrides)
    if mechanism.endswith("_reg"):
        spans = _register_loops(plat, mechanism.split("_")[0], words)
        return Bandwidth(mechanism, fpga_hz, 8 * words, spans[0], _audit(plat))
    eng, cpu = plat.engine, plat.cpus[0]
    regs = _Regs(plat)
    port = plat.port(0)
    lb = plat.cfg.cache.line_bytes
    nbytes = 8 * words
    pull_by_fpga = mechanism.startswith("efpga_pull")

    def fpga_side(done: Signal):
        if pull_by_fpga:
            sigs = []
            for a in range(BUF_A, BUF_A + nbytes, lb):
                sigs.append(port.issue_load(a))
                yield 1
            data = yield wait_all(eng, sigs)
            done.fire(len(data))
        else:
            for i in range(words):
                yield from port.store(BUF_B + 8 * i, 8, i)
                yield 1
            yield from port.fence()
            done.fire(words)

    def awaken(reg):
        done = eng.signal("probe.done")
        eng.process(fpga_side(done), plat.fpga, "probe.fpga", daemon=True)
        return done

    regs.on_read = awaken
    span: list[int] = []

    def setup():
        for i in range(words):
            yield from cpu.store(BUF_A + 8 * i, 8, i)

    def prog():
        t0 = eng.now
        yield from cpu.mmio_read(NORMAL_REG)
        if not pull_by_fpga:
            for i in range(words):
                yield from cpu.load(BUF_B + 8 * i)
        span.append(eng.now - t0)

    _run(plat, setup(), plat.sys)
    _run(plat, prog(), plat.sys)
    return Bandwidth(mechanism, fpga_hz, nbytes, span[0], _audit(plat))


def _register_loops(plat: Platform, register: str, iterations: int) -> list[int]:
    """Every processor writes then reads ``iterations`` values; returns each one's span."""
    eng = plat.engine
    _Regs(plat)
    wreg, rreg = (TO_FPGA, FROM_FPGA) if register == "shadow" else (NORMAL_REG, NORMAL_REG)
    spans: list[int] = []

    def prog(cpu):
        t0 = eng.now
        for i in range(iterations):
            yield from cpu.mmio_write(wreg, i)
            yield from cpu.mmio_read(rreg)
        spans.append(eng.now - t0)

    for cpu in plat.cpus:
        eng.process(prog(cpu), plat.sys, cpu.name)
    plat.run()
    return spans


def probe_contention(n: int, register: str = "shadow", iterations: int = WORDS, fpga_hz: int = 500_000_000, **overrides) -> float:
    return contention(n, register, iterations, fpga_hz, **overrides)[0]


def contention(
    n: int, register: str = "shadow", iterations: int = WORDS, fpga_hz: int = 500_000_000, check: bool = False, **overrides
) -> tuple[float, list[Violation]]:
    """Mean per-processor register bandwidth (GB/s, one direction) with ``n``
    processors each writing then reading ``iterations`` values.

    Shadow registers use an fpga-bound FIFO for writes and a cpu-bound FIFO
    for reads (the eFPGA echoes every value back); normal registers
    write and read the same register.
    """
    if register not in ("shadow", "normal"):
        raise ValueError("register must be 'shadow' or 'normal'")
    plat = _platform("duet", fpga_hz, n_processors=n, check=check, **overrides)
    spans = _register_loops(plat, register, iterations)
    per = [8 * iterations / s * 1000 for s in spans]
    return sum(per) / len(per), _audit(plat)
