"""The adapter between the coherent system and the eFPGA.

Memory Hubs give the eFPGA coherent memory access through a Proxy Cache
that lives in the system clock domain (or, in the FPSoC baseline, in the
FPGA domain).  The Control Hub serves processor MMIO accesses to soft
registers, fast-domain shadow registers and the adapter's own control
registers.  The only state crossing the two clock domains travels through
:class:`~duetsim.simkernel.CdcChannel` links.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict, deque
from collections.abc import Callable
from dataclasses import dataclass
from typing import Any

from .coherence import CacheConfig, L2Cache, line_of, read_bytes, write_bytes
from .noc import Mesh, MsgClass, NocMessage
from .simkernel import CdcChannel, ClockDomain, Engine, Signal, SimError

ERR_NONE, ERR_TIMEOUT, ERR_PARITY, ERR_KILLED = 0, 1, 2, 3
ERROR_NAMES = {ERR_NONE: "none", ERR_TIMEOUT: "timeout", ERR_PARITY: "parity", ERR_KILLED: "killed"}

BOGUS = 0xDEAD_BEEF_DEAD_BEEF
TOKEN_EMPTY = 0xFFFF_FFFF_FFFF_FFFF
PAGE_BYTES = 4096
PAGE_SHIFT = 12

REGISTER_KINDS = ("plain", "fpga_bound_fifo", "cpu_bound_fifo", "token_fifo", "normal")

# adapter control registers, always served by the Control Hub itself
CTL_ERROR = 4090
CTL_CLEAR = 4091
CTL_ACTIVATE = 4092
CTL_DEACTIVATE = 4093
CTL_TIMEOUT = 4094
CONTROL_REGS = (CTL_ERROR, CTL_CLEAR, CTL_ACTIVATE, CTL_DEACTIVATE, CTL_TIMEOUT)

HANG = object()  # register handler result meaning "never respond"


class FatalConfigError(SimError):
    pass


@dataclass
class FeatureSwitches:
    active: bool = True
    forward_invalidations: bool = True
    tlb_enabled: bool = False
    atomics_enabled: bool = True
    timeout_limit: int = 100_000  # FPGA cycles


@dataclass(slots=True)
class LocalMsg:
    """Local-protocol message between the eFPGA and a Memory Hub."""

    kind: str  # Load Store LoadAck StoreAck Inv
    addr: int
    size: int = 8
    data: Any = None
    reqid: int = -1
    op: str = "load"
    value: int | None = None
    expect: int | None = None
    paddr: int | None = None  # physical line, carried for the trace only
    parity: bool = True
    mid: int = -1
    tag: Any = None  # PhaseTag for latency attribution


class Tlb:
    """Fully associative, LRU, 4 KiB pages."""

    def __init__(self, entries: int = 16):
        self.capacity = entries
        self.entries: OrderedDict[int, tuple[int, str]] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def lookup(self, vpn: int) -> tuple[int, str] | None:
        e = self.entries.get(vpn)
        if e is None:
            self.misses += 1
            return None
        self.hits += 1
        self.entries.move_to_end(vpn)
        return e

    def install(self, vpn: int, ppn: int, perm: str) -> None:
        self.entries[vpn] = (ppn, perm)
        self.entries.move_to_end(vpn)
        while len(self.entries) > self.capacity:
            self.entries.popitem(last=False)

    def flush(self) -> None:
        self.entries.clear()


class MemoryHub:
    """Proxy Cache + TLB + local-protocol endpoints for one eFPGA memory port."""

    def __init__(
        self,
        engine: Engine,
        sys: ClockDomain,
        fpga: ClockDomain,
        mesh: Mesh,
        tile: tuple[int, int],
        cfg: CacheConfig,
        home: Callable[[int], tuple[int, int]],
        name: str,
        mode: str = "duet",
        switches: FeatureSwitches | None = None,
        tracer=None,
        mshrs: int = 1,
        sync_stages: int = 2,
        fifo_depth: int = 8,
        page_table: dict[int, tuple[int, str]] | None = None,
        handler_delay: int = 200,
        tlb_entries: int = 16,
        on_error: Callable[[int, str], None] | None = None,
    ):
        if mode not in ("duet", "fpsoc"):
            raise ValueError(f"unknown hub mode {mode!r}")
        self.engine = engine
        self.sys = sys
        self.fpga = fpga
        self.mesh = mesh
        self.tile = tile
        self.cfg = cfg
        self.name = name
        self.mode = mode
        self.switches = switches or FeatureSwitches()
        self.tracer = tracer
        self.origin = f"efpga:{name}"
        self.page_table = page_table if page_table is not None else {}
        self.handler_delay = handler_delay
        self.tlb = Tlb(tlb_entries)
        self.on_error = on_error
        self.mutation: str | None = None
        self.track_vpn = False  # set when the eFPGA side runs a soft cache
        self.port: FpgaPort | None = None
        self._mid = 0
        self._parked: dict[int, list[LocalMsg]] = {}
        self._fault_count: dict[int, int] = {}
        self.stats = {"loads": 0, "stores": 0, "atomics": 0, "invs_forwarded": 0, "faults": 0, "dropped": 0}

        cache_dom = sys if mode == "duet" else fpga
        self.cache_domain = cache_dom
        self.cache = L2Cache(engine, cache_dom, mesh, tile, cfg, home, f"{name}.proxy", mshrs=mshrs, tracer=tracer, register=(mode == "duet"))
        self.cache.on_lost = self._on_lost
        self.cache.admit = self._admit
        if mode == "fpsoc":
            self.cache.phase = "slow_cache"
            self.noc_in = CdcChannel(engine, sys, fpga, self._noc_in, fifo_depth, sync_stages, f"{name}.noc_in")
            self.noc_out = CdcChannel(engine, fpga, sys, self._noc_out, fifo_depth, sync_stages, f"{name}.noc_out")
            mesh.register(tile, "l2", self.noc_in.send)
            self.cache.noc_send = self.noc_out.send
            local_stages = 1
        else:
            local_stages = sync_stages
        # eFPGA -> hub requests and hub -> eFPGA responses/invalidations
        self.local_phase = "cdc" if mode == "duet" else "slow_cache"
        self.up = CdcChannel(engine, fpga, cache_dom, self._request, fifo_depth, local_stages, f"{name}.up")
        self.down = CdcChannel(engine, cache_dom, fpga, self._to_fpga, fifo_depth, local_stages, f"{name}.down")

    # -- NoC crossing (FPSoC only) ----------------------------------------
    def _noc_in(self, msg: NocMessage) -> None:
        if msg.tag is not None:
            msg.tag.charge("cdc", self.engine.now)
        self.cache.receive(msg)

    def _noc_out(self, msg: NocMessage) -> None:
        if msg.tag is not None:
            msg.tag.charge("cdc", self.engine.now)
        self.mesh.send(msg)

    def _admit(self, req) -> bool:
        return self.switches.active or not req.origin.startswith("efpga:")

    def _log(self, *ev) -> None:
        if self.tracer is not None:
            self.tracer.log(*ev)

    # -- eFPGA -> hub ------------------------------------------------------
    def _request(self, msg: LocalMsg) -> None:
        if msg.tag is not None:
            msg.tag.charge(self.local_phase, self.engine.now)
        self._log("lp_recv", self.name, "up", msg.mid, msg.kind, msg.paddr, msg.reqid)
        if not self.switches.active:
            self.stats["dropped"] += 1
            return
        if not msg.parity:
            self._raise(ERR_PARITY, f"parity error on {msg.kind} request {msg.reqid}")
            return
        self._dispatch(msg)

    def _dispatch(self, msg: LocalMsg) -> None:
        write = msg.kind == "Store"
        if self.switches.tlb_enabled:
            vpn = msg.addr >> PAGE_SHIFT
            e = self.tlb.lookup(vpn)
            if e is None or (write and "w" not in e[1]):
                self._fault(msg, vpn, write)
                return
            self._fault_count.pop(vpn, None)
            paddr = (e[0] << PAGE_SHIFT) | (msg.addr & (PAGE_BYTES - 1))
        else:
            paddr = msg.addr
        lb = self.cfg.line_bytes
        if msg.kind == "Load":
            self.stats["loads"] += 1
            pline = line_of(paddr, lb)
            self.cache.access("load", pline, lb, lambda v: self._load_done(msg, pline, v), tag=msg.tag, agent=self.name, origin=self.origin)
        elif msg.kind == "Store":
            if msg.op != "store":
                if not self.switches.atomics_enabled:
                    self._raise(ERR_KILLED, f"atomic {msg.op} with atomics disabled")
                    return
                self.stats["atomics"] += 1
            else:
                self.stats["stores"] += 1
            self.cache.access(
                msg.op, paddr, msg.size, lambda v: self._store_done(msg, paddr, v),
                value=msg.value, expect=msg.expect, tag=msg.tag, agent=self.name, origin=self.origin,
            )
        else:
            raise SimError(f"{self.name}: eFPGA sent {msg.kind}")

    def _load_done(self, msg: LocalMsg, pline: int, value: int) -> None:
        lb = self.cfg.line_bytes
        vline = line_of(msg.addr, lb)
        vpn = vline >> PAGE_SHIFT
        if self.track_vpn:
            ln = self.cache.lookup(pline)
            if ln is not None:
                if ln.vpn is not None and ln.vpn != vpn and self.mutation != "ignore_synonym":
                    old = (ln.vpn << PAGE_SHIFT) | (pline & (PAGE_BYTES - 1))
                    self._send_down(LocalMsg("Inv", old, lb, paddr=pline))
                ln.vpn = vpn
        self._send_down(LocalMsg("LoadAck", vline, lb, value.to_bytes(lb, "little"), msg.reqid, paddr=pline, tag=msg.tag))

    def _store_done(self, msg: LocalMsg, paddr: int, value: Any) -> None:
        ack = LocalMsg("StoreAck", msg.addr, msg.size, value, msg.reqid, op=msg.op, paddr=line_of(paddr, self.cfg.line_bytes), tag=msg.tag)
        self._send_down(ack)
        if self.mutation == "dup_storeack":
            self._send_down(LocalMsg("StoreAck", msg.addr, msg.size, value, msg.reqid, op=msg.op, paddr=ack.paddr))

    # -- TLB faults ----------------------------------------------------------
    def _fault(self, msg: LocalMsg, vpn: int, write: bool) -> None:
        self.stats["faults"] += 1
        n = self._fault_count.get(vpn, 0) + 1
        self._fault_count[vpn] = n
        if n > 2:
            raise FatalConfigError(f"{self.name}: fault storm on vpn {vpn:#x}")
        waiting = self._parked.setdefault(vpn, [])
        waiting.append(msg)
        if len(waiting) == 1:
            self._log("tlb_fault", self.name, vpn, write)
            self.engine.after_cycles(self.sys, self.handler_delay, self._handler, vpn)

    def _handler(self, vpn: int) -> None:
        """Software fault handler: install the mapping and replay, or kill."""
        waiting = self._parked.pop(vpn, [])
        pte = self.page_table.get(vpn)
        need_w = any(m.kind == "Store" for m in waiting)
        if pte is None or (need_w and "w" not in pte[1]):
            self._raise(ERR_KILLED, f"invalid access to page {vpn:#x}")
            return
        self.tlb.install(vpn, pte[0], pte[1])
        if not self.switches.active:
            return
        for m in waiting:
            self._dispatch(m)

    # -- hub -> eFPGA ------------------------------------------------------
    def _send_down(self, msg: LocalMsg) -> None:
        msg.mid = self._mid
        self._mid += 1
        self._log("lp_send", self.name, "down", msg.mid, msg.kind, msg.paddr)
        self.down.send(msg)

    def _to_fpga(self, msg: LocalMsg) -> None:
        if msg.tag is not None:
            msg.tag.charge(self.local_phase, self.engine.now)
        self._log("lp_recv", self.name, "down", msg.mid, msg.kind, msg.paddr, msg.reqid)
        if self.port is not None:
            self.port.receive(msg)

    def _on_lost(self, line: int, ln, reason: str) -> None:
        # a downgrade leaves the write-through soft copy valid
        if reason == "downgrade" or ln.vpn is None:
            return
        vaddr = (ln.vpn << PAGE_SHIFT) | (line & (PAGE_BYTES - 1))
        ln.vpn = None
        if self.switches.forward_invalidations and self.mutation != "skip_inv":
            self.stats["invs_forwarded"] += 1
            self._send_down(LocalMsg("Inv", vaddr, self.cfg.line_bytes, paddr=line))

    def _raise(self, code: int, why: str) -> None:
        if self.on_error is not None:
            self.on_error(code, f"{self.name}: {why}")
        else:
            self.switches.active = False

    def idle(self) -> bool:
        return self.cache.idle() and not len(self.up) and not len(self.down)


@dataclass
class SoftCacheConfig:
    lines: int = 64
    write_buffer: int = 4
    raw_forwarding: bool = False


class FpgaPort:
    """eFPGA-side endpoint of a Memory Hub, optionally fronted by a soft cache.

    The soft cache is virtually indexed and tagged, write-through with
    write-no-allocate, and applies fills, acks and invalidations strictly in
    arrival order.  All generator helpers run inside FPGA-domain processes.
    """

    def __init__(self, hub: MemoryHub, soft_cache: SoftCacheConfig | None = None):
        self.hub = hub
        self.engine = hub.engine
        self.lb = hub.cfg.line_bytes
        self.sc = soft_cache
        self.lines: OrderedDict[int, bytearray] = OrderedDict()
        self.plines: dict[int, int] = {}
        self.buffered: OrderedDict[int, tuple[int, int, int]] = OrderedDict()  # reqid -> (vaddr, size, value)
        self._pending: dict[int, tuple] = {}
        self._reqid = 0
        self._space: list = []
        self._drained: list = []
        self.parity_fault = False
        self.mutation: str | None = None
        self.on_inv: Callable[[int], None] | None = None
        self.stats = {"hits": 0, "misses": 0, "loads": 0, "stores": 0}
        hub.port = self
        hub.track_vpn = soft_cache is not None

    def _log(self, *ev) -> None:
        if self.hub.tracer is not None:
            self.hub.tracer.log(*ev)

    def _issue(self, msg: LocalMsg, pending: tuple) -> int:
        msg.reqid = self._reqid
        self._reqid += 1
        if self.parity_fault:
            msg.parity = False
            self.parity_fault = False
        self._pending[msg.reqid] = pending
        hub = self.hub
        msg.mid = hub._mid
        hub._mid += 1
        rkind = "Load" if msg.kind == "Load" else "Store"
        self._log("lp_req", hub.name, msg.reqid, rkind, msg.addr, msg.size, msg.value)
        self._log("lp_send", hub.name, "up", msg.mid, msg.kind, None)
        hub.up.send(msg)
        return msg.reqid

    # -- raw request issue (return Signals) -------------------------------------
    def issue_load(self, vaddr: int, tag=None):
        """Request the line holding ``vaddr``; the signal fires with its bytes."""
        sig = self.engine.signal("LoadAck")
        self.stats["loads"] += 1
        self._issue(LocalMsg("Load", line_of(vaddr, self.lb), self.lb, tag=tag), ("load", sig, None))
        return sig

    def issue_store(self, vaddr: int, size: int, value: int, op: str = "store", expect: int | None = None, tag=None):
        sig = self.engine.signal("StoreAck")
        self.stats["stores"] += 1
        rid = self._issue(LocalMsg("Store", vaddr, size, op=op, value=value, expect=expect, tag=tag), ("store", sig, None))
        if op == "store":
            self.buffered[rid] = (vaddr, size, value)
        return sig

    # -- generator helpers --------------------------------------------------------
    def load(self, vaddr: int, size: int = 8):
        """``v = yield from port.load(addr)``."""
        vline = line_of(vaddr, self.lb)
        off = vaddr - vline
        if self.sc is not None:
            if self.sc.raw_forwarding:
                for va, sz, val in reversed(self.buffered.values()):
                    if va == vaddr and sz == size:
                        yield 1
                        return val
            data = self.lines.get(vline)
            if data is not None:
                self.stats["hits"] += 1
                self.lines.move_to_end(vline)
                value = read_bytes(data, off, size)
                self._log("sc_read", self.hub.name, vaddr, self.plines[vline] + off, size, value)
                yield 1
                return value
            self.stats["misses"] += 1
        sig = self.engine.signal("LoadAck")
        self.stats["loads"] += 1
        self._issue(LocalMsg("Load", vline, self.lb), ("load", sig, (vaddr, size)))
        data = yield sig
        return read_bytes(data, off, size)

    def load_line(self, vaddr: int):
        data = yield self.issue_load(vaddr)
        return data

    def store(self, vaddr: int, size: int, value: int):
        """Write-through store; returns once the write buffer accepted it."""
        if size > self.hub.cfg.max_store_bytes:
            raise ValueError(f"stores are at most {self.hub.cfg.max_store_bytes} bytes; split the write")
        depth = self.sc.write_buffer if self.sc is not None else 1 << 30
        while len(self.buffered) >= depth:
            sig = self.engine.signal("wb-space")
            self._space.append(sig)
            yield sig
        vline = line_of(vaddr, self.lb)
        data = self.lines.get(vline)
        if data is not None:
            write_bytes(data, vaddr - vline, size, value)
        if self.mutation == "drop_write_through":
            self._log("sc_write", self.hub.name, vaddr, None, size, value, -1)
            return
        self.issue_store(vaddr, size, value)
        if self.sc is not None:
            rid = self._reqid - 1
            self._log("sc_write", self.hub.name, vaddr, None, size, value, rid)
        yield 0

    def atomic(self, op: str, vaddr: int, value: int, expect: int | None = None, size: int = 8):
        """Atomic read-modify-write at the Proxy Cache; returns the old value."""
        vline = line_of(vaddr, self.lb)
        if vline in self.lines:
            del self.lines[vline]
            self._log("sc_evict", self.hub.name, vline, self.plines.pop(vline))
        old = yield self.issue_store(vaddr, size, value, op=op, expect=expect)
        return old

    def fence(self):
        """Wait until every issued store is acknowledged."""
        while self.buffered:
            sig = self.engine.signal("drain")
            self._drained.append(sig)
            yield sig

    # -- responses ---------------------------------------------------------------
    def receive(self, msg: LocalMsg) -> None:
        kind = msg.kind
        if kind == "Inv":
            vline = msg.addr
            if vline in self.lines:
                del self.lines[vline]
                self._log("sc_inv", self.hub.name, vline, self.plines.pop(vline))
            if self.on_inv is not None:
                self.on_inv(vline)
            return
        pend = self._pending.pop(msg.reqid, None)
        if pend is None:
            return  # unmatched response; the trace checker reports it
        what, sig, extra = pend
        if kind == "LoadAck":
            data = bytearray(msg.data)
            if self.sc is not None:
                self._fill(msg.addr, msg.paddr, data)
                data = self.lines.get(msg.addr, data)
                if extra is not None:
                    vaddr, size = extra
                    off = vaddr - msg.addr
                    self._log("sc_read", self.hub.name, vaddr, msg.paddr + off, size, read_bytes(data, off, size))
            sig.fire(bytes(data))
        else:
            self.buffered.pop(msg.reqid, None)
            if self._space:
                waiters, self._space = self._space, []
                for s in waiters:
                    s.fire(None)
            if not self.buffered and self._drained:
                waiters, self._drained = self._drained, []
                for s in waiters:
                    s.fire(None)
            sig.fire(msg.data)

    def _fill(self, vline: int, pline: int, data: bytearray) -> None:
        # stores issued after this load but not yet acknowledged are newer
        for va, sz, val in self.buffered.values():
            if line_of(va, self.lb) == vline:
                write_bytes(data, va - vline, sz, val)
        if vline not in self.lines and len(self.lines) >= self.sc.lines:
            victim, _ = self.lines.popitem(last=False)
            self._log("sc_evict", self.hub.name, victim, self.plines.pop(victim))
        self.lines[vline] = data
        self.lines.move_to_end(vline)
        self.plines[vline] = pline
        self._log("sc_fill", self.hub.name, vline, pline)


@dataclass
class Bitstream:
    behavior: str
    payload: bytes
    checksum: str = ""

    @classmethod
    def build(cls, behavior: str, payload: bytes | None = None) -> Bitstream:
        payload = payload if payload is not None else behavior.encode() * 64
        return cls(behavior, payload, hashlib.sha256(payload).hexdigest())


class FpgaManager:
    """Bitstream loading, clock control and reset of the eFPGA."""

    def __init__(self, adapter: DuetAdapter, program_cycles: int = 1000):
        self.adapter = adapter
        self.program_cycles = program_cycles
        self.current: str | None = None
        self.on_load: Callable[[str], None] | None = None

    def load_bitstream(self, bs: Bitstream, done: Callable[[str], None] | None = None) -> str:
        ad = self.adapter
        if any(h.switches.active for h in ad.hubs):
            return "rejected_active"
        if hashlib.sha256(bs.payload).hexdigest() != bs.checksum:
            return "rejected_checksum"

        def finish() -> None:
            self.current = bs.behavior
            if self.on_load is not None:
                self.on_load(bs.behavior)
            if done is not None:
                done(bs.behavior)

        ad.engine.after_cycles(ad.sys, self.program_cycles, finish)
        return "loading"

    def set_clock(self, frequency_hz: int) -> None:
        self.adapter.fpga.set_frequency(frequency_hz, self.adapter.engine.now)

    def deactivate(self) -> None:
        self.adapter.deactivate()

    def reset(self) -> None:
        for h in self.adapter.hubs:
            h.tlb.flush()
            if h.port is not None:
                h.port.lines.clear()
                h.port.plines.clear()


class RegisterFile:
    """FPGA-side soft registers: dispatches forwarded accesses to the accelerator.

    ``handler`` is any object with ``register_read(reg)`` and
    ``register_write(reg, value)``; a read may return :data:`HANG` or a
    :class:`Signal` whose value becomes the (deferred) response.  In
    the FPSoC mode the shadow semantics are emulated here in the FPGA domain.
    """

    def __init__(self, hub: ControlHub):
        self.hub = hub
        self.handler = None
        self.values: dict[int, int] = {}
        self.cpu_q: dict[int, deque] = {}
        self.tokens: dict[int, int] = {}
        self.parity_fault = False

    # accelerator-facing API --------------------------------------------------------
    def set_plain(self, reg: int, value: int) -> None:
        h = self.hub
        if h.emulated:
            self.values[reg] = value
        else:
            h.sync.send(("plain", reg, value))

    def push_cpu(self, reg: int, value: int) -> None:
        h = self.hub
        if h.emulated:
            self.cpu_q.setdefault(reg, deque()).append(value)
        else:
            h.sync.send(("push", reg, value))

    def add_token(self, reg: int, n: int = 1) -> None:
        h = self.hub
        if h.emulated:
            self.tokens[reg] = self.tokens.get(reg, 0) + n
        else:
            h.sync.send(("token", reg, n))

    # forwarded accesses ----------------------------------------------------------
    def command(self, cmd: tuple) -> None:
        what, op, reg, value, cpu, seq = cmd
        h = self.hub
        h._log("fpga_observe", cpu, seq, reg)
        kind = h.kinds.get(reg, "normal")
        if what == "forward":  # shadowed write, no response expected
            self._write(kind, reg, value)
            return
        if op == "write":
            self._write(kind, reg, value)
            self._respond(cmd, 0)
            return
        if h.emulated and kind == "plain":
            self._respond(cmd, self.values.get(reg, 0))
        elif h.emulated and kind == "cpu_bound_fifo":
            # a parked normal read would hold the hub-wide slot, so answer "empty" and let software poll
            q = self.cpu_q.get(reg)
            self._respond(cmd, q.popleft() if q else TOKEN_EMPTY)
        elif h.emulated and kind == "token_fifo":
            if self.tokens.get(reg, 0) > 0:
                self.tokens[reg] -= 1
                self._respond(cmd, 1)
            else:
                self._respond(cmd, TOKEN_EMPTY)
        else:
            v = self.handler.register_read(reg) if self.handler is not None else self.values.get(reg, 0)
            if v is HANG:
                return
            if isinstance(v, Signal):  # deferred answer
                v.add_waiter(lambda val: self._respond(cmd, val))
                return
            self._respond(cmd, v)

    def _write(self, kind: str, reg: int, value: int) -> None:
        if kind == "plain":
            self.values[reg] = value
        if self.handler is not None:
            self.handler.register_write(reg, value)
        else:
            self.values[reg] = value

    def _respond(self, cmd: tuple, value: int) -> None:
        parity = not self.parity_fault
        self.parity_fault = False
        h = self.hub
        n = h.soft_reg_cycles
        h.engine.after_cycles(h.fpga, n, h._charge_busy, cmd, "slow_cache")
        h.engine.after_cycles(h.fpga, n, h.resp.send, (cmd[5], cmd[4], value, parity))


class ControlHub:
    """Processor-facing soft-register interface with fast-domain shadow registers.

    Accesses are taken one per system cycle in arrival order.  Normal
    (unshadowed) accesses cross into the FPGA domain and only one may be in
    flight at a time; shadowed accesses complete in the fast domain.
    """

    def __init__(
        self,
        engine: Engine,
        sys: ClockDomain,
        fpga: ClockDomain,
        mesh: Mesh,
        tile: tuple[int, int],
        adapter: DuetAdapter,
        mode: str = "duet",
        tracer=None,
        sync_stages: int = 2,
        fifo_depth: int = 8,
        blocking_timeout: int = 10**6,
        soft_reg_cycles: int = 6,
    ):
        from .simkernel import Pipeline

        self.engine = engine
        self.sys = sys
        self.fpga = fpga
        self.mesh = mesh
        self.tile = tile
        self.adapter = adapter
        self.emulated = mode == "fpsoc"
        self.tracer = tracer
        self.blocking_timeout = blocking_timeout
        self.soft_reg_cycles = soft_reg_cycles
        self.kinds: dict[int, str] = {}
        self.mirror: dict[int, int] = {}
        self.cpu_q: dict[int, deque] = {}
        self.tokens: dict[int, int] = {}
        self.parked: dict[int, deque] = {}
        self.normal_q: deque = deque()
        self.busy = None
        self.pipe = Pipeline(engine, sys, 1)
        self.cmd = CdcChannel(engine, sys, fpga, self._fpga_cmd, fifo_depth, sync_stages, "ctl.cmd")
        self.resp = CdcChannel(engine, fpga, sys, self._fpga_resp, fifo_depth, sync_stages, "ctl.resp")
        self.sync = CdcChannel(engine, fpga, sys, self._fpga_sync, fifo_depth, sync_stages, "ctl.sync")
        self.regs = RegisterFile(self)
        self.stats = {"accesses": 0, "normal": 0, "shadow": 0, "timeouts": 0, "bogus": 0}
        mesh.register(tile, "ctl", self._arrive)

    def declare(self, reg: int, kind: str) -> None:
        if kind not in REGISTER_KINDS:
            raise ValueError(f"unknown register kind {kind!r}")
        if reg in CONTROL_REGS:
            raise ValueError(f"register {reg} is reserved")
        self.kinds[reg] = kind

    def _log(self, *ev) -> None:
        if self.tracer is not None:
            self.tracer.log(*ev)

    def _kind(self, reg: int) -> str:
        if self.emulated:
            return "normal"
        return self.kinds.get(reg, "normal")

    def _arrive(self, msg: NocMessage) -> None:
        self.pipe.accept(self._process, msg)

    def idle(self) -> bool:
        """No access queued, crossing a clock boundary or awaiting the eFPGA."""
        return (self.busy is None and not self.normal_q and not self.pipe.in_flight
                and not len(self.cmd) and not len(self.resp) and not len(self.sync))

    def _respond(self, msg: NocMessage, value: int, status: str = "ok") -> None:
        if msg.tag is not None:
            msg.tag.charge("fast_cache", self.engine.now)
        self.mesh.send(NocMessage(self.tile, msg.src, MsgClass.MMIO_RESP, "mmio", "MmioResp", 0, None,
                                  {"value": value, "status": status, "seq": msg.fields["seq"]}, msg.tag))

    def _process(self, msg: NocMessage) -> None:
        f = msg.fields
        op, reg, value = f["op"], f["reg"], f.get("value")
        self.stats["accesses"] += 1
        ad = self.adapter
        if reg in CONTROL_REGS:
            self._control(msg, op, reg, value)
            return
        if ad.error != ERR_NONE:
            self.stats["bogus"] += 1
            self._respond(msg, BOGUS, "bogus")
            return
        kind = self._kind(reg)
        if kind == "normal":
            self.stats["normal"] += 1
            self.normal_q.append(msg)
            self._kick()
            return
        self.stats["shadow"] += 1
        fwd = ("forward", op, reg, value, f["cpu"], f["seq"])
        if kind == "plain":
            if op == "write":
                self.mirror[reg] = value
                self.cmd.send(fwd)
                self._respond(msg, 0)
            else:
                self._respond(msg, self.mirror.get(reg, 0))
        elif kind == "fpga_bound_fifo":
            if op == "write":
                self.cmd.send(fwd)
                self._respond(msg, 0)
            else:
                self._respond(msg, BOGUS, "invalid")
        elif kind == "cpu_bound_fifo":
            if op != "read":
                self._respond(msg, BOGUS, "invalid")
                return
            q = self.cpu_q.get(reg)
            if q:
                self._respond(msg, q.popleft())
            else:
                self.parked.setdefault(reg, deque()).append(msg)
                self.engine.after_cycles(self.sys, self.blocking_timeout, self._blocking_timeout, reg, msg)
        else:  # token_fifo
            if op != "read":
                self._respond(msg, BOGUS, "invalid")
            elif self.tokens.get(reg, 0) > 0:
                self.tokens[reg] -= 1
                self._respond(msg, 1)
            else:
                self._respond(msg, TOKEN_EMPTY)

    def _control(self, msg: NocMessage, op: str, reg: int, value) -> None:
        ad = self.adapter
        if reg == CTL_ERROR:
            self._respond(msg, ad.error)
            return
        if op == "write":
            if reg == CTL_CLEAR:
                ad.clear_error()
            elif reg == CTL_ACTIVATE:
                ad.activate()
            elif reg == CTL_DEACTIVATE:
                ad.deactivate()
            elif reg == CTL_TIMEOUT:
                for h in ad.hubs:
                    h.switches.timeout_limit = value
                ad.timeout_limit = value
        self._respond(msg, 0)

    # -- normal registers ---------------------------------------------------------
    def _kick(self) -> None:
        if self.busy is not None or not self.normal_q:
            return
        msg = self.normal_q.popleft()
        if self.adapter.error != ERR_NONE:
            self._respond(msg, BOGUS, "bogus")
            self._kick()
            return
        self.busy = msg
        f = msg.fields
        if msg.tag is not None:
            msg.tag.charge("fast_cache", self.engine.now)
        self.cmd.send(("normal", f["op"], f["reg"], f.get("value"), f["cpu"], f["seq"]))
        self.engine.after_cycles(self.fpga, self.adapter.timeout_limit, self._normal_timeout, msg)

    def _normal_timeout(self, msg: NocMessage) -> None:
        if self.busy is not msg:
            return
        self.stats["timeouts"] += 1
        self.busy = None
        self._respond(msg, BOGUS, "timeout")
        self.adapter.raise_error(ERR_TIMEOUT, f"soft register {msg.fields['reg']} did not respond")
        self._kick()

    def _fpga_cmd(self, cmd: tuple) -> None:
        self._charge_busy(cmd, "cdc")
        self.regs.command(cmd)

    def _charge_busy(self, cmd: tuple, phase: str) -> None:
        msg = self.busy
        if cmd[0] == "normal" and msg is not None and msg.tag is not None and msg.fields["seq"] == cmd[5] and msg.fields["cpu"] == cmd[4]:
            msg.tag.charge(phase, self.engine.now)

    def _fpga_resp(self, payload: tuple) -> None:
        seq, cpu, value, parity = payload
        msg = self.busy
        if msg is None or msg.fields["seq"] != seq or msg.fields["cpu"] != cpu:
            return  # late answer to an access that already timed out
        if msg.tag is not None:
            msg.tag.charge("cdc", self.engine.now)
        self.busy = None
        if not parity:
            self._respond(msg, BOGUS, "bogus")
            self.adapter.raise_error(ERR_PARITY, "parity error on a soft register response")
        else:
            self._respond(msg, value)
        self._kick()

    # -- shadow refresh from the accelerator -------------------------------------------
    def _fpga_sync(self, payload: tuple) -> None:
        what, reg, value = payload
        if what == "plain":
            self.mirror[reg] = value
        elif what == "push":
            parked = self.parked.get(reg)
            if parked:
                self._respond(parked.popleft(), value)
            else:
                self.cpu_q.setdefault(reg, deque()).append(value)
        else:
            self.tokens[reg] = self.tokens.get(reg, 0) + value

    def _blocking_timeout(self, reg: int, msg: NocMessage) -> None:
        parked = self.parked.get(reg)
        if parked and msg in parked:
            parked.remove(msg)
            self.stats["timeouts"] += 1
            self._respond(msg, BOGUS, "timeout")
            self.adapter.raise_error(ERR_TIMEOUT, f"blocking read of register {reg} timed out")

    def flush_bogus(self) -> None:
        """Answer everything pending once the adapter has latched an error."""
        for reg, parked in self.parked.items():
            while parked:
                self._respond(parked.popleft(), BOGUS, "bogus")
        while self.normal_q:
            self._respond(self.normal_q.popleft(), BOGUS, "bogus")


class DuetAdapter:
    """Memory Hubs + Control Hub + exception handling for one eFPGA."""

    def __init__(self, engine: Engine, sys: ClockDomain, fpga: ClockDomain, tracer=None, timeout_limit: int = 100_000):
        self.engine = engine
        self.sys = sys
        self.fpga = fpga
        self.tracer = tracer
        self.hubs: list[MemoryHub] = []
        self.control: ControlHub | None = None
        self.error = ERR_NONE
        self.error_detail = ""
        self.timeout_limit = timeout_limit
        self.manager = FpgaManager(self)

    def add_hub(self, hub: MemoryHub) -> MemoryHub:
        hub.on_error = self.raise_error
        hub.switches.timeout_limit = self.timeout_limit
        self.hubs.append(hub)
        return hub

    def _log(self, *ev) -> None:
        if self.tracer is not None:
            self.tracer.log(*ev)

    def raise_error(self, code: int, detail: str = "") -> None:
        if self.error == ERR_NONE:
            self.error = code
            self.error_detail = detail
            self._log("exception", ERROR_NAMES[code], detail)
        self.deactivate()
        if self.control is not None:
            self.control.flush_bogus()

    def deactivate(self) -> None:
        for h in self.hubs:
            if h.switches.active:
                h.switches.active = False
                self._log("deactivate", h.name)

    def activate(self) -> None:
        if self.error != ERR_NONE:
            return
        for h in self.hubs:
            if not h.switches.active:
                h.switches.active = True
                self._log("activate", h.name)

    def clear_error(self) -> None:
        self.error = ERR_NONE
        self.error_detail = ""
