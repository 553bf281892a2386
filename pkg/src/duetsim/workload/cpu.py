"""Abstract in-order processor agents.

A program is a generator run as a sys-domain process.  Every operation is
a sub-generator, so programs read naturally::

    def prog(cpu):
        v = yield from cpu.load(0x1000)
        yield from cpu.store(0x1008, 8, v + 1)
        r = yield from cpu.mmio_read(3)

One memory operation and one MMIO are outstanding at a time (blocking).
"""

from __future__ import annotations

from ..adapter import TOKEN_EMPTY
from ..coherence import line_of
from ..noc import MsgClass, NocMessage
from ..trace import PhaseTag


class Cpu:
    def __init__(self, platform, index: int, tile: tuple[int, int], cache):
        self.platform = platform
        self.engine = platform.engine
        self.index = index
        self.tile = tile
        self.cache = cache
        self.name = f"cpu{index}"
        self.mmio_seq = 0
        self.last_status = "ok"
        self.last_tag: PhaseTag | None = None
        self._mmio_wait = None
        self.ops = 0
        platform.mesh.register(tile, "mmio", self._mmio_resp)

    # -- memory ------------------------------------------------------------------
    def _access(self, op, addr, size, value=None, expect=None, tag=None):
        sig = self.engine.signal(op)
        self.ops += 1
        self.cache.access(op, addr, size, sig.fire, value=value, expect=expect, tag=tag, agent=self.name)
        result = yield sig
        return result

    def load(self, addr: int, size: int = 8, tag: PhaseTag | None = None):
        return (yield from self._access("load", addr, size, tag=tag))

    def store(self, addr: int, size: int, value: int, tag: PhaseTag | None = None):
        yield from self._access("store", addr, size, value, tag=tag)

    def cas(self, addr: int, expect: int, value: int, size: int = 8):
        """Compare-and-swap; returns the old value (success iff old == expect)."""
        return (yield from self._access("cas", addr, size, value, expect))

    def fetch_add(self, addr: int, value: int, size: int = 8):
        return (yield from self._access("fetch_add", addr, size, value))

    def swap(self, addr: int, value: int, size: int = 8):
        return (yield from self._access("swap", addr, size, value))

    def compute(self, cycles: int):
        if cycles > 0:
            yield cycles

    def spin_until(self, addr: int, pred, size: int = 8):
        """Re-read ``addr`` until ``pred(value)``; idles locally between coherence events."""
        line = line_of(addr, self.platform.cfg.cache.line_bytes)
        while True:
            v = yield from self.load(addr, size)
            if pred(v):
                return v
            if self.cache.lookup(line) is None:
                continue
            sig = self.engine.signal("spin")
            self.cache.watch(line, lambda: sig.fire(None))
            yield sig

    # -- MMIO ----------------------------------------------------------------------
    def _mmio(self, op: str, reg: int, value: int | None, tag: PhaseTag | None):
        p = self.platform
        if p.ctl_tile is None:
            raise ValueError("platform has no Control Hub")
        seq = self.mmio_seq
        self.mmio_seq += 1
        p.tracer.log("mmio_issue", self.name, seq, reg, op)
        if p.cfg.mmio_cycles:
            yield p.cfg.mmio_cycles
            if tag is not None:
                tag.charge("fast_cache", self.engine.now)
        sig = self._mmio_wait = self.engine.signal("mmio")
        fields = {"op": op, "reg": reg, "value": value, "cpu": self.name, "seq": seq}
        p.mesh.send(NocMessage(self.tile, p.ctl_tile, MsgClass.MMIO_REQ, "ctl", "Mmio", p.mmio_addr(reg), None, fields, tag))
        value, status = yield sig
        self.last_status = status
        p.tracer.log("mmio_complete", self.name, seq)
        return value

    def _mmio_resp(self, msg: NocMessage) -> None:
        sig, self._mmio_wait = self._mmio_wait, None
        if sig is None:
            raise RuntimeError(f"{self.name}: unexpected MMIO response")
        sig.fire((msg.fields["value"], msg.fields["status"]))

    def mmio_read(self, reg: int, tag: PhaseTag | None = None):
        return (yield from self._mmio("read", reg, None, tag))

    def pop(self, reg: int, backoff: int = 10):
        """Read a cpu-bound FIFO, polling while it reports empty (emulated FIFOs do not block)."""
        while True:
            v = yield from self.mmio_read(reg)
            if v != TOKEN_EMPTY or self.last_status != "ok":
                return v
            yield from self.compute(backoff)

    def mmio_write(self, reg: int, value: int, tag: PhaseTag | None = None):
        yield from self._mmio("write", reg, value, tag)


class Barrier:
    """Sense-reversing centralized barrier in shared memory."""

    def __init__(self, count_addr: int, sense_addr: int, n: int):
        self.count_addr = count_addr
        self.sense_addr = sense_addr
        self.n = n
        self._local: dict[str, int] = {}

    def wait(self, cpu: Cpu):
        sense = self._local.get(cpu.name, 0) ^ 1
        self._local[cpu.name] = sense
        arrived = yield from cpu.fetch_add(self.count_addr, 1)
        if arrived == self.n - 1:
            yield from cpu.store(self.count_addr, 8, 0)
            yield from cpu.store(self.sense_addr, 8, sense)
        else:
            yield from cpu.spin_until(self.sense_addr, lambda v: v == sense)
