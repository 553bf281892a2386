"""Seeded protocol bugs used to validate the trace checker.

Each scenario builds a small platform, optionally plants one bug, runs a
short program that exercises the affected mechanism and returns the
checker's report.  With ``mutation=None`` every scenario must be clean.
"""

from __future__ import annotations

from .adapter import SoftCacheConfig
from .checker import Violation, check_trace
from .platform import Platform, PlatformConfig

MUTATIONS = (
    "skip_inv_forward",
    "reorder_fifo",
    "drop_write_through",
    "stale_directory_sharer",
    "duplicate_storeack",
    "ignore_synonym",
)

A = 0x8000


def _platform(**kw) -> Platform:
    return Platform(PlatformConfig(n_processors=3, fpga_hz=200_000_000, **kw))


def _finish(p: Platform, cpu_progs, fpga_progs) -> list[Violation]:
    for i, g in cpu_progs:
        p.engine.process(g, p.sys, f"cpu{i}")
    for k, g in enumerate(fpga_progs):
        p.engine.process(g, p.fpga, f"fpga{k}")
    p.run(limit_ps=10**12)
    p.finalize_trace()
    return check_trace(p.tracer.events, p.cfg.cache.line_bytes)


def _stale_read(mutation: str | None) -> list[Violation]:
    p = _platform()
    port = p.port(soft_cache=SoftCacheConfig())
    if mutation:
        p.hubs[0].mutation = "skip_inv"
    p.init_memory(A, 8, 1)

    def fpga():
        yield from port.load(A)
        yield 400
        yield from port.load(A)

    def cpu(c):
        yield 300
        yield from c.store(A, 8, 2)

    return _finish(p, [(0, cpu(p.cpus[0]))], [fpga()])


def _reorder(mutation: str | None) -> list[Violation]:
    p = _platform()
    port = p.port(soft_cache=SoftCacheConfig())
    if mutation:
        p.hubs[0].down.mutation = "reorder"

    def fpga():
        for i in range(6):
            port.issue_store(A + 8 * i, 8, i)
        yield from port.fence()

    return _finish(p, [], [fpga()])


def _drop_write(mutation: str | None) -> list[Violation]:
    p = _platform()
    port = p.port(soft_cache=SoftCacheConfig())
    if mutation:
        port.mutation = "drop_write_through"

    def fpga():
        yield from port.load(A)
        yield from port.store(A, 8, 7)
        yield from port.fence()

    def cpu(c):
        yield 2000
        yield from c.load(A)

    return _finish(p, [(0, cpu(p.cpus[0]))], [fpga()])


def _stale_sharer(mutation: str | None) -> list[Violation]:
    p = _platform()
    if mutation:
        for d in p.dirs:
            d.mutation = "stale_sharer"

    def reader(c, delay):
        yield delay
        yield from c.load(A)

    def writer(c):
        yield 500
        yield from c.store(A, 8, 3)

    return _finish(p, [(0, reader(p.cpus[0], 0)), (1, reader(p.cpus[1], 100)), (2, writer(p.cpus[2]))], [])


def _dup_ack(mutation: str | None) -> list[Violation]:
    p = _platform()
    port = p.port()
    if mutation:
        p.hubs[0].mutation = "dup_storeack"

    def fpga():
        yield from port.store(A, 8, 1)
        yield from port.fence()

    return _finish(p, [], [fpga()])


def _synonym(mutation: str | None) -> list[Violation]:
    p = _platform(tlb_enabled=True)
    hub = p.hubs[0]
    hub.page_table[0x10] = (A >> 12, "rw")
    hub.page_table[0x20] = (A >> 12, "rw")
    port = p.port(soft_cache=SoftCacheConfig())
    if mutation:
        hub.mutation = "ignore_synonym"

    def fpga():
        yield from port.load(0x10000)
        yield from port.load(0x20000)

    return _finish(p, [], [fpga()])


SCENARIOS = {
    "skip_inv_forward": (_stale_read, "data_value"),
    "reorder_fifo": (_reorder, "local_order"),
    "drop_write_through": (_drop_write, "write_through"),
    "stale_directory_sharer": (_stale_sharer, "directory"),
    "duplicate_storeack": (_dup_ack, "response_match"),
    "ignore_synonym": (_synonym, "synonym"),
}


def run_scenario(name: str, mutated: bool = True) -> list[Violation]:
    fn, _ = SCENARIOS[name]
    return fn(name if mutated else None)


def detected(name: str) -> bool:
    """True iff the checker flags the planted bug with the expected rule."""
    _, rule = SCENARIOS[name]
    return any(v.rule == rule for v in run_scenario(name, True))
