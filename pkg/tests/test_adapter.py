import pytest

from duetsim.adapter import (
    BOGUS,
    CTL_ACTIVATE,
    CTL_CLEAR,
    CTL_ERROR,
    ERR_KILLED,
    ERR_PARITY,
    ERR_TIMEOUT,
    HANG,
    TOKEN_EMPTY,
    Bitstream,
    FatalConfigError,
    SoftCacheConfig,
)
from duetsim.checker import check_trace
from duetsim.platform import Platform, PlatformConfig

A = 0x4000
MHZ = 1_000_000


def make(mode="duet", fpga_mhz=100, n=2, **kw):
    return Platform(PlatformConfig(mode=mode, n_processors=n, fpga_hz=fpga_mhz * MHZ, **kw))


def run(p, cpu=(), fpga=()):
    for i, g in cpu:
        p.engine.process(g, p.sys, f"cpu{i}")
    for k, g in enumerate(fpga):
        p.engine.process(g, p.fpga, f"fpga{k}")
    p.run(limit_ps=10**12)
    p.finalize_trace()
    return check_trace(p.tracer.events)


def noc_sends(p):
    return sum(1 for e in p.tracer.events if e[0] == "noc_send")


def down_kinds(p, hub="hub0"):
    return [e[5] for e in p.tracer.events if e[0] == "lp_send" and e[3] == "down" and e[2] == hub]


class Regs:
    def __init__(self, hang=()):
        self.values = {}
        self.writes = []
        self.hang = set(hang)

    def register_read(self, reg):
        return HANG if reg in self.hang else self.values.get(reg, 0)

    def register_write(self, reg, value):
        self.writes.append((reg, value))
        self.values[reg] = value


# -- Proxy Cache request path ---------------------------------------------------------


def test_load_hit_in_modified_needs_no_noc_traffic():
    p = make()
    port = p.port()
    marks = {}

    def fpga():
        yield from port.store(A, 8, 3)
        yield from port.fence()
        marks["before"] = noc_sends(p)
        v = yield from port.load(A)
        marks["after"] = noc_sends(p)
        marks["v"] = v

    assert run(p, fpga=[fpga()]) == []
    assert p.hubs[0].cache.snapshot()[A] == "M"
    assert marks["v"] == 3 and marks["after"] == marks["before"]


def test_store_miss_invalidates_cpu_sharer():
    p = make()
    port = p.port()
    p.init_memory(A, 8, 1)
    got = {}

    def cpu(c):
        got["first"] = yield from c.load(A)
        yield 3000
        got["second"] = yield from c.load(A)

    def other(c):
        yield 5
        yield from c.load(A)  # both CPUs now share the line

    def fpga():
        yield 20
        yield from port.store(A, 8, 42)
        yield from port.fence()

    assert run(p, [(0, cpu(p.cpus[0])), (1, other(p.cpus[1]))], [fpga()]) == []
    assert got == {"first": 1, "second": 42}
    assert p.cpus[0].cache.stats["invs"] == 1


def test_full_line_store_takes_two_messages():
    p = make()
    port = p.port()

    def fpga():
        with pytest.raises(ValueError):
            yield from port.store(A, 16, 0)
        yield from port.store(A, 8, 1)
        yield from port.store(A + 8, 8, 2)
        yield from port.fence()

    assert run(p, fpga=[fpga()]) == []
    assert p.hubs[0].stats["stores"] == 2
    assert p.memory.read(A, 8) == 0 or p.hubs[0].cache.snapshot()[A] == "M"


# -- coherence side -------------------------------------------------------------------


def test_inv_to_absent_line_not_forwarded():
    p = make()
    p.port(soft_cache=SoftCacheConfig())

    def cpu(c):
        yield from c.store(A, 8, 5)

    assert run(p, [(0, cpu(p.cpus[0]))]) == []
    assert "Inv" not in down_kinds(p)


def _cpu_store_latency(mhz, mode="duet"):
    p = make(mode, mhz)
    port = p.port(soft_cache=SoftCacheConfig())
    lat = {}

    def fpga():
        yield from port.load(A)

    def cpu(c):
        yield 5000
        t0 = p.engine.now
        yield from c.store(A, 8, 1)
        lat["store"] = p.engine.now - t0

    assert run(p, [(0, cpu(p.cpus[0]))], [fpga()]) == []
    return lat["store"], down_kinds(p)


def test_forwarded_inv_latency_independent_of_fpga_clock():
    slow, kinds = _cpu_store_latency(20)
    fast, _ = _cpu_store_latency(500)
    assert slow == fast
    assert kinds == ["LoadAck", "Inv"]


def test_downgrade_keeps_soft_copy_and_writes_back():
    p = make()
    port = p.port(soft_cache=SoftCacheConfig())
    got = {}

    def fpga():
        yield from port.load(A)
        yield from port.store(A, 8, 9)
        yield from port.fence()

    def cpu(c):
        yield 3000
        got["v"] = yield from c.load(A)

    assert run(p, [(0, cpu(p.cpus[0]))], [fpga()]) == []
    assert got["v"] == 9
    assert p.hubs[0].cache.snapshot()[A] == "S"
    assert p.memory.read(A, 8) == 9
    assert "Inv" not in down_kinds(p)
    assert A in port.lines


# -- soft cache ---------------------------------------------------------------------------


def test_soft_cache_read_hit_emits_no_message():
    p = make()
    port = p.port(soft_cache=SoftCacheConfig())
    marks = {}

    def fpga():
        yield from port.load(A)
        marks["n"] = port._reqid
        yield from port.load(A + 8)
        marks["m"] = port._reqid

    assert run(p, fpga=[fpga()]) == []
    assert marks["n"] == marks["m"] == 1


def test_write_buffer_raw_forwarding():
    p = make(fpga_mhz=500)
    port = p.port(soft_cache=SoftCacheConfig(write_buffer=4, raw_forwarding=True))
    got = {}

    def fpga():
        yield from port.store(A, 8, 123)
        got["v"] = yield from port.load(A)
        got["pending"] = len(port.buffered)

    assert run(p, fpga=[fpga()]) == []
    assert got == {"v": 123, "pending": 1}


@pytest.mark.parametrize("delay", range(0, 400, 13))
def test_inv_racing_with_fill_is_applied_in_order(delay):
    p = make(fpga_mhz=250)
    port = p.port(soft_cache=SoftCacheConfig())
    p.init_memory(A, 8, 1)
    got = {}

    def fpga():
        got["a"] = yield from port.load(A)
        yield 400
        got["b"] = yield from port.load(A)

    def cpu(c):
        yield delay
        yield from c.store(A, 8, 2)

    assert run(p, [(0, cpu(p.cpus[0]))], [fpga()]) == []
    assert got["a"] in (1, 2) and got["b"] == 2


# -- synonyms -------------------------------------------------------------------------------


def _tlb_platform(**kw):
    p = make(tlb_enabled=True, **kw)
    pt = p.hubs[0].page_table
    pt[0x10] = (0x4, "rw")  # two virtual pages aliasing physical page 4
    pt[0x20] = (0x4, "rw")
    pt[0x30] = (0x5, "r")
    return p


def test_same_vpn_load_has_no_inv():
    p = _tlb_platform()
    port = p.port(soft_cache=SoftCacheConfig())

    def fpga():
        yield from port.load(0x10000)
        yield from port.load(0x10008)

    assert run(p, fpga=[fpga()]) == []
    assert down_kinds(p) == ["LoadAck"]


def test_aliasing_load_invalidates_old_alias_first():
    p = _tlb_platform()
    port = p.port(soft_cache=SoftCacheConfig())

    def fpga():
        yield from port.load(0x10000)
        yield from port.load(0x20000)

    assert run(p, fpga=[fpga()]) == []
    assert down_kinds(p) == ["LoadAck", "Inv", "LoadAck"]
    assert list(port.lines) == [0x20000]


def test_aliasing_load_behind_buffered_write_loses_nothing():
    p = _tlb_platform()
    port = p.port(soft_cache=SoftCacheConfig())
    got = {}

    def fpga():
        yield from port.load(0x10000)
        yield from port.store(0x10000, 8, 55)
        got["v"] = yield from port.load(0x20000)

    assert run(p, fpga=[fpga()]) == []
    assert down_kinds(p) == ["LoadAck", "StoreAck", "Inv", "LoadAck"]
    assert got["v"] == 55


# -- TLB ---------------------------------------------------------------------------------------


def test_identity_mapped_read():
    p = make(tlb_enabled=True)
    p.hubs[0].page_table[A >> 12] = (A >> 12, "rw")
    p.hubs[0].tlb.install(A >> 12, A >> 12, "rw")
    p.init_memory(A, 8, 17)
    port = p.port()
    got = {}

    def fpga():
        got["v"] = yield from port.load(A)

    assert run(p, fpga=[fpga()]) == []
    assert got["v"] == 17 and p.hubs[0].stats["faults"] == 0


def _fault_run(preinstalled):
    p = make(tlb_enabled=True, fpga_mhz=500)
    p.hubs[0].page_table[A >> 12] = (A >> 12, "rw")
    if preinstalled:
        p.hubs[0].tlb.install(A >> 12, A >> 12, "rw")
    port = p.port()
    t = {}

    def fpga():
        t0 = p.engine.now
        yield from port.load(A)
        t["lat"] = p.engine.now - t0

    assert run(p, fpga=[fpga()]) == []
    return t["lat"], p


def test_page_fault_adds_exactly_the_handler_delay():
    base, _ = _fault_run(True)
    faulted, p = _fault_run(False)
    assert p.hubs[0].stats["faults"] == 1
    assert faulted - base == p.cfg.handler_delay * 1000  # sys cycles at 1 GHz


def test_write_to_read_only_page_kills_accelerator():
    p = _tlb_platform()
    port = p.port()
    got = {}

    def fpga():
        yield from port.store(0x30000, 8, 1)

    def cpu(c):
        yield 2000
        yield from c.store(0x5000, 8, 3)  # coherence still works
        got["v"] = yield from c.load(0x5000)

    assert run(p, [(0, cpu(p.cpus[0]))], [fpga()]) == []
    assert p.adapter.error == ERR_KILLED
    assert not p.hubs[0].switches.active
    assert got["v"] == 3


def test_fault_storm_is_fatal():
    p = make(tlb_enabled=True, tlb_entries=0)
    p.hubs[0].page_table[A >> 12] = (A >> 12, "rw")
    port = p.port()

    def fpga():
        yield from port.load(A)

    with pytest.raises(FatalConfigError):
        run(p, fpga=[fpga()])


# -- Control Hub ---------------------------------------------------------------------------------


def _mmio_latency(mhz, op, reg, kind, mode="duet", value=1):
    p = make(mode, mhz)
    if kind != "normal":
        p.control.declare(reg, kind)
    p.control.regs.handler = Regs()
    t = {}

    def cpu(c):
        yield 10
        t0 = p.engine.now
        if op == "write":
            yield from c.mmio_write(reg, value)
        else:
            t["v"] = yield from c.mmio_read(reg)
        t["lat"] = p.engine.now - t0

    assert run(p, [(0, cpu(p.cpus[0]))]) == []
    return t["lat"]


def test_shadow_write_latency_constant_across_sweep():
    lats = {_mmio_latency(f, "write", 2, "plain") for f in (20, 50, 100, 125, 250, 500)}
    assert len(lats) == 1


def test_normal_read_slower_at_lower_fpga_clock():
    assert _mmio_latency(100, "read", 2, "normal") > _mmio_latency(500, "read", 2, "normal")


def test_token_fifo_empty_and_tokens():
    p = make()
    p.control.declare(5, "token_fifo")
    got = []

    def fpga():
        yield 100
        p.control.regs.add_token(5, 1)

    def cpu(c):
        got.append((yield from c.mmio_read(5)))
        yield 3000
        got.append((yield from c.mmio_read(5)))
        got.append((yield from c.mmio_read(5)))

    assert run(p, [(0, cpu(p.cpus[0]))], [fpga()]) == []
    assert got == [TOKEN_EMPTY, 1, TOKEN_EMPTY]


def test_cpu_bound_fifo_blocks_until_push():
    p = make()
    p.control.declare(6, "cpu_bound_fifo")
    got = {}

    def fpga():
        yield 50
        p.control.regs.push_cpu(6, 99)

    def cpu(c):
        t0 = p.engine.now
        got["v"] = yield from c.mmio_read(6)
        got["t"] = p.engine.now - t0

    assert run(p, [(0, cpu(p.cpus[0]))], [fpga()]) == []
    assert got["v"] == 99 and got["t"] > 500_000  # waited ~50 FPGA cycles at 100 MHz


def test_shadow_then_normal_write_observed_in_order():
    p = make()
    p.control.declare(1, "plain")
    regs = p.control.regs.handler = Regs()

    def cpu(c):
        yield from c.mmio_write(1, 10)
        yield from c.mmio_write(2, 20)

    assert run(p, [(0, cpu(p.cpus[0]))]) == []
    assert regs.writes == [(1, 10), (2, 20)]
    obs = [e[4] for e in p.tracer.events if e[0] == "fpga_observe"]
    assert obs == [1, 2]


def test_settle_waits_for_posted_shadow_writes():
    p = make(fpga_mhz=20)
    p.control.declare(1, "plain")
    regs = p.control.regs.handler = Regs()

    def cpu(c):
        yield from c.mmio_write(1, 5)  # completes before the eFPGA sees it

    p.engine.process(cpu(p.cpus[0]), p.sys, "cpu0")
    p.run()
    assert not p.control.idle()
    p.settle()
    assert p.control.idle() and regs.writes == [(1, 5)]


def test_normal_then_shadow_read_complete_in_issue_order():
    p = make()
    p.control.declare(1, "plain")
    p.control.regs.handler = Regs()

    def cpu(c):
        yield from c.mmio_read(2)
        yield from c.mmio_read(1)

    assert run(p, [(0, cpu(p.cpus[0]))]) == []
    done = [e[3] for e in p.tracer.events if e[0] == "mmio_complete"]
    assert done == [0, 1]


def test_fpsoc_downgrades_shadow_registers():
    duet = _mmio_latency(20, "write", 2, "plain")
    fpsoc = _mmio_latency(20, "write", 2, "plain", mode="fpsoc")
    assert fpsoc > duet


# -- exceptions ----------------------------------------------------------------------------------


def test_hung_accelerator_times_out_and_system_continues():
    p = make(timeout_limit=1000, blocking_timeout=5000)
    p.control.declare(6, "cpu_bound_fifo")
    p.control.regs.handler = Regs(hang={2})
    port = p.port(soft_cache=SoftCacheConfig())
    got = {}

    def fpga():
        yield from port.load(A)

    def cpu0(c):
        yield 100
        got["normal"] = (yield from c.mmio_read(2)), c.last_status

    def cpu1(c):
        yield 100
        got["blocking"] = (yield from c.mmio_read(6)), c.last_status
        t0 = p.engine.now
        yield from c.store(A, 8, 1)  # invalidates the proxy's copy
        got["inv_lat"] = p.engine.now - t0

    assert run(p, [(0, cpu0(p.cpus[0])), (1, cpu1(p.cpus[1]))], [fpga()]) == []
    assert got["normal"] == (BOGUS, "timeout")
    assert got["blocking"][0] == BOGUS and got["blocking"][1] in ("bogus", "timeout")
    assert p.adapter.error == ERR_TIMEOUT
    assert got["inv_lat"] < 100_000


def test_parity_fault_deactivates_and_proxy_keeps_answering():
    p = make()
    port = p.port(soft_cache=SoftCacheConfig())
    got = {}

    def fpga():
        yield from port.load(A)
        port.parity_fault = True
        port.issue_load(A + 64)

    def cpu(c):
        yield 3000
        t0 = p.engine.now
        yield from c.store(A, 8, 4)
        got["lat"] = p.engine.now - t0
        got["err"] = yield from c.mmio_read(CTL_ERROR)
        yield from c.mmio_write(CTL_CLEAR, 1)
        yield from c.mmio_write(CTL_ACTIVATE, 1)

    assert run(p, [(0, cpu(p.cpus[0]))], [fpga()]) == []
    assert got["err"] == ERR_PARITY
    assert got["lat"] < 100_000
    assert p.hubs[0].switches.active  # reactivated after clearing


def test_deactivated_hub_drops_requests_and_bogus_mmio():
    p = make()
    port = p.port()
    got = {}

    def cpu(c):
        p.adapter.raise_error(ERR_KILLED, "test")
        got["v"] = yield from c.mmio_read(3)
        got["s"] = c.last_status
        yield 500

    def fpga():
        yield 10
        port.issue_load(A)

    assert run(p, [(0, cpu(p.cpus[0]))], [fpga()]) == []
    assert got == {"v": BOGUS, "s": "bogus"}
    assert p.hubs[0].stats["dropped"] == 1


# -- FPGA manager -----------------------------------------------------------------------------


def test_bitstream_loading_rules():
    p = make()
    mgr = p.adapter.manager
    good = Bitstream.build("sort32")
    assert mgr.load_bitstream(good) == "rejected_active"
    p.adapter.deactivate()
    bad = Bitstream(good.behavior, bytes([good.payload[0] ^ 1]) + good.payload[1:], good.checksum)
    assert mgr.load_bitstream(bad) == "rejected_checksum"
    loaded = []
    assert mgr.load_bitstream(good, loaded.append) == "loading"
    p.engine.run_until(lambda: bool(loaded))
    assert mgr.current == "sort32" and p.engine.now == mgr.program_cycles * 1000


def test_set_clock_changes_fifo_visibility():
    p = make(fpga_mhz=500)
    mgr = p.adapter.manager
    fifo = p.hubs[0].down.fifo
    assert fifo.visibility_time(0) == 4000
    mgr.set_clock(100 * MHZ)
    t = p.fpga.next_edge_time(1)
    assert fifo.visibility_time(t) == t + 20_000
