"""Private write-back L2 caches and a distributed, blocking MESI directory.

Protocol summary (directory-centric, one transaction per line at a time):

* requests ``GetS``/``GetM`` and evictions ``PutS``/``PutE``/``PutM`` travel
  on the request channel; the home shard serializes them per line;
* the directory sends ``Inv`` to sharers or ``FwdGetS``/``FwdGetM`` to the
  owner, collects ``InvAck``/``FwdData`` itself and then answers the
  requester with ``Data`` (grant E, S or M);
* the requester returns ``Unblock`` which closes the transaction.
"""

from __future__ import annotations

from collections import OrderedDict, deque
from collections.abc import Callable
from dataclasses import dataclass
from typing import Any

from .noc import Mesh, MsgClass, NocMessage
from .simkernel import ClockDomain, Engine, Pipeline
from .trace import PhaseTag


class ProtocolError(RuntimeError):
    pass


class AlignmentError(ValueError):
    pass


@dataclass
class CacheConfig:
    line_bytes: int = 16
    l2_bytes: int = 8192
    l3_shard_bytes: int = 65536
    associativity: int = 4
    max_store_bytes: int = 8
    l1_hit_latency: int = 1
    l2_hit_latency: int = 2
    dir_latency: int = 2
    mem_latency: int = 40

    def __post_init__(self) -> None:
        lb = self.line_bytes
        if lb <= 0 or lb & (lb - 1):
            raise ValueError("line_bytes must be a power of two")
        if self.max_store_bytes > lb:
            raise ValueError("max_store_bytes must not exceed line_bytes")
        if self.l2_bytes % (lb * self.associativity):
            raise ValueError("l2_bytes must be a multiple of line_bytes * associativity")

    @property
    def l2_sets(self) -> int:
        return self.l2_bytes // (self.line_bytes * self.associativity)


def line_of(addr: int, line_bytes: int) -> int:
    return addr - (addr % line_bytes)


def read_bytes(buf: bytes | bytearray, offset: int, size: int) -> int:
    return int.from_bytes(buf[offset : offset + size], "little")


def write_bytes(buf: bytearray, offset: int, size: int, value: int) -> None:
    buf[offset : offset + size] = (value & ((1 << (8 * size)) - 1)).to_bytes(size, "little")


class Memory:
    """Backing store image (line granular) shared by every directory shard."""

    def __init__(self, line_bytes: int = 16):
        self.line_bytes = line_bytes
        self.lines: dict[int, bytearray] = {}

    def line(self, line_addr: int) -> bytearray:
        buf = self.lines.get(line_addr)
        if buf is None:
            buf = self.lines[line_addr] = bytearray(self.line_bytes)
        return buf

    def read_line(self, line_addr: int) -> bytes:
        return bytes(self.line(line_addr))

    def write_line(self, line_addr: int, data: bytes) -> None:
        self.lines[line_addr] = bytearray(data)

    # direct loader access (program setup; bypasses caches)
    def read(self, addr: int, size: int) -> int:
        la = line_of(addr, self.line_bytes)
        return read_bytes(self.line(la), addr - la, size)

    def write(self, addr: int, size: int, value: int) -> None:
        la = line_of(addr, self.line_bytes)
        write_bytes(self.line(la), addr - la, size, value)

    def write_block(self, addr: int, data: bytes) -> None:
        for i, b in enumerate(data):
            self.write(addr + i, 1, b)

    def read_block(self, addr: int, n: int) -> bytes:
        return bytes(self.read(addr + i, 1) for i in range(n))


def addr_to_shard(addr: int, line_bytes: int, n_shards: int) -> int:
    """Home shard index: line index modulo shard count."""
    return (addr // line_bytes) % n_shards


class DirEntry:
    __slots__ = ("busy", "owner", "queue", "sharers", "state", "txn")

    def __init__(self) -> None:
        self.state = "I"  # I | S | EM
        self.sharers: set = set()
        self.owner = None
        self.busy = False
        self.queue: deque = deque()
        self.txn: dict | None = None


class Directory:
    """Home directory + L3 shard.  L3 capacity only affects data latency."""

    def __init__(
        self,
        engine: Engine,
        domain: ClockDomain,
        mesh: Mesh,
        tile: tuple[int, int],
        memory: Memory,
        cfg: CacheConfig,
        tracer=None,
        name: str = "",
    ):
        self.engine = engine
        self.domain = domain
        self.mesh = mesh
        self.tile = tile
        self.memory = memory
        self.cfg = cfg
        self.tracer = tracer
        self.name = name or f"dir{tile}"
        self.entries: dict[int, DirEntry] = {}
        self.pipe = Pipeline(engine, domain, cfg.dir_latency)
        self._l3: OrderedDict[int, None] = OrderedDict()
        self._l3_cap = cfg.l3_shard_bytes // cfg.line_bytes
        self.stats = {"requests": 0, "invs": 0, "fwds": 0, "l3_miss": 0, "writebacks": 0}
        self.mutation: str | None = None
        self._queued = 0
        mesh.register(tile, "dir", self._arrive)

    def entry(self, line: int) -> DirEntry:
        e = self.entries.get(line)
        if e is None:
            e = self.entries[line] = DirEntry()
        return e

    def _arrive(self, msg: NocMessage) -> None:
        self._queued += 1
        self.pipe.accept(self._process, msg)

    def idle(self) -> bool:
        return not self._queued and not any(e.busy for e in self.entries.values())

    def _log(self, line: int, e: DirEntry) -> None:
        if self.tracer is not None:
            self.tracer.log("dir", self.name, line, e.state, tuple(sorted(e.sharers)), e.owner)

    def _send(self, dst, port, kind, line, data=None, tag=None, cls=MsgClass.COH_RESP, **fields) -> None:
        self.mesh.send(NocMessage(self.tile, dst, cls, port, kind, line, data, fields, tag))

    def _l3_access(self, line: int) -> int:
        """Extra cycles to source the line's data."""
        if line in self._l3:
            self._l3.move_to_end(line)
            return 0
        self.stats["l3_miss"] += 1
        self._l3[line] = None
        if len(self._l3) > self._l3_cap:
            self._l3.popitem(last=False)
        return self.cfg.mem_latency

    def _process(self, msg: NocMessage) -> None:
        self._queued -= 1
        if msg.tag is not None:
            msg.tag.charge("fast_cache", self.engine.now)
        line = msg.address
        e = self.entry(line)
        kind = msg.kind
        if kind in ("GetS", "GetM", "PutS", "PutE", "PutM"):
            if e.busy:
                e.queue.append(msg)
            else:
                self._start(line, e, msg)
        elif kind == "InvAck" or kind == "FwdData":
            self._collect(line, e, msg)
        elif kind == "Unblock":
            if not e.busy or e.txn is None or e.txn["req"] != msg.src:
                raise ProtocolError(f"{self.name}: unexpected Unblock for {line:#x} from {msg.src}")
            e.busy = False
            e.txn = None
            self._drain(line, e)
        else:
            raise ProtocolError(f"{self.name}: unknown message {kind}")

    def _drain(self, line: int, e: DirEntry) -> None:
        while e.queue and not e.busy:
            self._start(line, e, e.queue.popleft())

    def _start(self, line: int, e: DirEntry, msg: NocMessage) -> None:
        kind, req = msg.kind, msg.src
        if kind.startswith("Put"):
            self._put(line, e, msg)
            return
        self.stats["requests"] += 1
        e.busy = True
        txn = {"req": req, "kind": kind, "tag": msg.tag, "acks": 0, "tags": [], "data": None, "origin": msg.origin}
        e.txn = txn
        if kind == "GetS":
            if e.state == "EM":
                if e.owner == req:
                    raise ProtocolError(f"{self.name}: GetS from current owner {req} for {line:#x}")
                txn["acks"] = 1
                self.stats["fwds"] += 1
                self._send(e.owner, "l2", "FwdGetS", line, tag=_fork(msg.tag), cls=MsgClass.COH_INV, origin=msg.origin)
            else:
                self._grant(line, e)
        else:  # GetM
            if e.state == "EM":
                if e.owner == req:
                    raise ProtocolError(f"{self.name}: GetM from current owner {req} for {line:#x}")
                txn["acks"] = 1
                self.stats["fwds"] += 1
                self._send(e.owner, "l2", "FwdGetM", line, tag=_fork(msg.tag), cls=MsgClass.COH_INV, origin=msg.origin)
            elif e.state == "S" and (e.sharers - {req}):
                for s in sorted(e.sharers - {req}):
                    txn["acks"] += 1
                    self.stats["invs"] += 1
                    self._send(s, "l2", "Inv", line, tag=_fork(msg.tag), cls=MsgClass.COH_INV, origin=msg.origin)
            else:
                self._grant(line, e)

    def _collect(self, line: int, e: DirEntry, msg: NocMessage) -> None:
        txn = e.txn
        if txn is None or txn["acks"] <= 0:
            raise ProtocolError(f"{self.name}: unexpected {msg.kind} for {line:#x} from {msg.src}")
        txn["acks"] -= 1
        txn["tags"].append(msg.tag)
        if msg.kind == "FwdData":
            txn["data"] = msg.data
            if msg.fields.get("dirty"):
                self.memory.write_line(line, msg.data)
                self.stats["writebacks"] += 1
        if txn["acks"] == 0:
            tags = [t for t in txn["tags"] if t is not None]
            if tags:
                txn["tag"] = max(tags, key=lambda t: t.last)
            self._grant(line, e)

    def _grant(self, line: int, e: DirEntry) -> None:
        txn = e.txn
        req, kind = txn["req"], txn["kind"]
        extra = 0
        if txn["data"] is not None:
            data = bytes(txn["data"])
        else:
            extra = self._l3_access(line)
            data = self.memory.read_line(line)
        if kind == "GetS":
            if e.state == "I":
                grant = "E"
                e.state, e.owner, e.sharers = "EM", req, set()
            elif e.state == "EM":
                grant = "S"
                old = e.owner
                e.state, e.owner = "S", None
                e.sharers = {old, req}
            else:
                grant = "S"
                e.sharers.add(req)
        else:
            grant = "M"
            stale = set(e.sharers) if self.mutation == "stale_sharer" else set()
            e.state, e.owner, e.sharers = "EM", req, set()
            if stale - {req}:
                # seeded bug: invalidated sharers linger in the directory
                e.sharers = stale - {req}
        self._log(line, e)
        tag = txn["tag"]

        def send() -> None:
            if tag is not None:
                tag.charge("fast_cache", self.engine.now)
            self._send(req, "l2", "Data", line, data, tag, grant=grant)

        if extra:
            self.engine.after_cycles(self.domain, extra, send)
        else:
            send()

    def _put(self, line: int, e: DirEntry, msg: NocMessage) -> None:
        src = msg.src
        if e.state == "EM" and e.owner == src:
            if msg.kind == "PutM":
                self.memory.write_line(line, msg.data)
                self.stats["writebacks"] += 1
            e.state, e.owner = "I", None
        elif src in e.sharers:
            e.sharers.discard(src)
            if not e.sharers:
                e.state = "I"
        # otherwise stale: ownership already moved by a forwarded request
        self._log(line, e)
        self._send(src, "l2", "PutAck", line)

    def snapshot(self) -> dict[int, tuple[str, frozenset, Any]]:
        return {
            line: (e.state, frozenset(e.sharers), e.owner)
            for line, e in self.entries.items()
            if e.state != "I" or e.sharers or e.owner is not None
        }


def _fork(tag: PhaseTag | None) -> PhaseTag | None:
    return tag.fork() if tag is not None else None


class Line:
    __slots__ = ("data", "state", "vpn")

    def __init__(self, state: str, data: bytes):
        self.state = state  # M E S (I lines are removed)
        self.data = bytearray(data)
        self.vpn = None


class Request:
    __slots__ = ("addr", "agent", "callback", "expect", "op", "origin", "size", "tag", "value")

    def __init__(self, op, addr, size, value, expect, callback, tag, agent, origin):
        self.op = op
        self.addr = addr
        self.size = size
        self.value = value
        self.expect = expect
        self.callback = callback
        self.tag = tag
        self.agent = agent
        self.origin = origin


WRITE_OPS = ("store", "cas", "fetch_add", "swap")
OPS = ("load",) + WRITE_OPS


class L2Cache:
    """Set-associative, write-back, LRU private cache speaking the directory protocol.

    ``access`` is the core-side port; results arrive through ``callback(value)``
    where ``value`` is the loaded value, the old value for atomics, or ``None``
    for plain stores.  Up to ``mshrs`` misses to distinct lines may be in flight.
    """

    def __init__(
        self,
        engine: Engine,
        domain: ClockDomain,
        mesh: Mesh,
        tile: tuple[int, int],
        cfg: CacheConfig,
        home: Callable[[int], tuple[int, int]],
        name: str,
        mshrs: int = 1,
        latency: int | None = None,
        tracer=None,
        register: bool = True,
    ):
        self.engine = engine
        self.domain = domain
        self.mesh = mesh
        self.tile = tile
        self.cfg = cfg
        self.home = home
        self.name = name
        self.mshrs = mshrs
        self.tracer = tracer
        self.phase = "fast_cache"
        lat = cfg.l2_hit_latency if latency is None else latency
        self.pipe = Pipeline(engine, domain, lat)
        self.net_pipe = Pipeline(engine, domain, lat)  # coherence messages have their own port
        self.sets: list[OrderedDict[int, Line]] = [OrderedDict() for _ in range(cfg.l2_sets)]
        self._mshr: dict[int, list[Request]] = {}
        self._stalled: deque[Request] = deque()
        self._wb: dict[int, bytes] = {}
        self._wb_waiters: dict[int, list[Request]] = {}
        self._watchers: dict[int, list] = {}
        self._queued = 0  # requests and messages still inside the pipeline
        self.stats = {"hits": 0, "misses": 0, "evictions": 0, "invs": 0, "fwds": 0}
        # hooks used by the Proxy Cache
        self.on_lost: Callable[[int, Line, str], None] | None = None
        self.on_fill: Callable[[int, Line, Request], None] | None = None
        self.noc_send: Callable[[NocMessage], Any] = mesh.send
        # returns False to drop a request that would need the NoC
        self.admit: Callable[[Request], bool] | None = None
        if register:
            mesh.register(tile, "l2", self.receive)

    # -- helpers -------------------------------------------------------
    def _set(self, line: int) -> OrderedDict:
        return self.sets[(line // self.cfg.line_bytes) % len(self.sets)]

    def lookup(self, line: int) -> Line | None:
        return self._set(line).get(line)

    def _trace_state(self, line: int, state: str) -> None:
        if self.tracer is not None:
            self.tracer.log("line", self.name, line, state)

    def watch(self, line: int, fn: Callable[[], None]) -> None:
        """Call ``fn`` once when ``line`` leaves this cache or loses write permission."""
        self._watchers.setdefault(line, []).append(fn)

    def _notify(self, line: int) -> None:
        fns = self._watchers.pop(line, None)
        if fns:
            for fn in fns:
                fn()

    def _send(self, kind: str, line: int, data=None, tag=None, cls=MsgClass.COH_REQ, dst=None, origin="", **fields):
        msg = NocMessage(self.tile, dst if dst is not None else self.home(line), cls, "dir", kind, line, data, fields, tag, origin)
        self.noc_send(msg)

    # -- core side -----------------------------------------------------
    def access(
        self,
        op: str,
        addr: int,
        size: int,
        callback: Callable[[Any], None],
        value: int | None = None,
        expect: int | None = None,
        tag: PhaseTag | None = None,
        agent: str = "",
        origin: str = "",
    ) -> None:
        if op not in OPS:
            raise ValueError(f"unknown op {op}")
        if size <= 0 or addr % size:
            raise AlignmentError(f"misaligned {op} of {size} bytes at {addr:#x}")
        if op in WRITE_OPS and size > self.cfg.max_store_bytes:
            raise AlignmentError(f"{op} of {size} bytes exceeds the {self.cfg.max_store_bytes}-byte store limit")
        if size > self.cfg.line_bytes or line_of(addr, self.cfg.line_bytes) != line_of(addr + size - 1, self.cfg.line_bytes):
            raise AlignmentError("access crosses a cacheline")
        req = Request(op, addr, size, value, expect, callback, tag, agent or self.name, origin)
        self._queued += 1
        self.pipe.accept(self._enter, req)

    def _enter(self, req: Request) -> None:
        self._queued -= 1
        self._handle(req)

    def _handle(self, req: Request) -> None:
        if req.tag is not None:
            req.tag.charge(self.phase, self.engine.now)
        line = line_of(req.addr, self.cfg.line_bytes)
        if line in self._mshr:
            self._mshr[line].append(req)
            return
        if line in self._wb:
            self._wb_waiters.setdefault(line, []).append(req)
            return
        ln = self.lookup(line)
        if ln is not None and (req.op == "load" or ln.state in ("M", "E")):
            self.stats["hits"] += 1
            self._set(line).move_to_end(line)
            self._perform(line, ln, req)
            return
        if self.admit is not None and not self.admit(req):
            return
        if len(self._mshr) >= self.mshrs:
            self._stalled.append(req)
            return
        self.stats["misses"] += 1
        self._mshr[line] = [req]
        kind = "GetS" if req.op == "load" else "GetM"
        self._send(kind, line, tag=req.tag, origin=req.origin)

    def _perform(self, line: int, ln: Line, req: Request) -> None:
        off = req.addr - line
        tr = self.tracer
        if req.op == "load":
            result = read_bytes(ln.data, off, req.size)
            if tr is not None:
                tr.log("ld", req.agent, req.addr, req.size, result)
        else:
            if ln.state == "E":
                ln.state = "M"
                self._trace_state(line, "M")
            old = read_bytes(ln.data, off, req.size)
            new = None
            if req.op == "store":
                new, result = req.value, None
            elif req.op == "swap":
                new, result = req.value, old
            elif req.op == "fetch_add":
                new, result = old + req.value, old
            else:  # cas
                result = old
                if old == req.expect:
                    new = req.value
            if req.op != "store" and tr is not None:
                tr.log("ld", req.agent, req.addr, req.size, old)
            if new is not None:
                write_bytes(ln.data, off, req.size, new)
                if tr is not None:
                    tr.log("st", req.agent, req.addr, req.size, read_bytes(ln.data, off, req.size))
        req.callback(result)

    def _retry_stalled(self) -> None:
        while self._stalled and len(self._mshr) < self.mshrs:
            self._handle(self._stalled.popleft())

    # -- network side --------------------------------------------------
    def receive(self, msg: NocMessage) -> None:
        self._queued += 1
        self.net_pipe.accept(self._net, msg)

    def _net(self, msg: NocMessage) -> None:
        self._queued -= 1
        if msg.tag is not None:
            msg.tag.charge(self.phase, self.engine.now)
        kind, line = msg.kind, msg.address
        if kind == "Data":
            self._fill(line, msg)
        elif kind == "PutAck":
            self._wb.pop(line, None)
            for req in self._wb_waiters.pop(line, []):
                self._handle(req)
        elif kind == "Inv":
            self.stats["invs"] += 1
            ln = self.lookup(line)
            if ln is not None:
                if ln.state != "S":
                    raise ProtocolError(f"{self.name}: Inv for {line:#x} in state {ln.state}")
                del self._set(line)[line]
                self._trace_state(line, "I")
                self._notify(line)
                if self.on_lost:
                    self.on_lost(line, ln, "inv")
            self._send("InvAck", line, tag=msg.tag, cls=MsgClass.COH_RESP, dst=msg.src)
        elif kind in ("FwdGetS", "FwdGetM"):
            self.stats["fwds"] += 1
            ln = self.lookup(line)
            if ln is not None and ln.state in ("M", "E"):
                dirty = ln.state == "M"
                data = bytes(ln.data)
                if kind == "FwdGetS":
                    ln.state = "S"
                    self._trace_state(line, "S")
                    self._notify(line)
                    if self.on_lost:
                        self.on_lost(line, ln, "downgrade")
                else:
                    del self._set(line)[line]
                    self._trace_state(line, "I")
                    self._notify(line)
                    if self.on_lost:
                        self.on_lost(line, ln, "fwd")
            elif line in self._wb:
                data, dirty = self._wb[line], True
            else:
                raise ProtocolError(f"{self.name}: {kind} for {line:#x} not owned")
            self._send("FwdData", line, data, msg.tag, MsgClass.COH_RESP, dst=msg.src, dirty=dirty)
        else:
            raise ProtocolError(f"{self.name}: unexpected {kind}")

    def _fill(self, line: int, msg: NocMessage) -> None:
        reqs = self._mshr.pop(line, None)
        if not reqs:
            raise ProtocolError(f"{self.name}: Data for {line:#x} without MSHR")
        grant = msg.fields["grant"]
        ln = self.lookup(line)
        if ln is None:
            self._make_room(line)
            ln = Line(grant, msg.data)
            self._set(line)[line] = ln
        else:
            ln.state = grant
            ln.data = bytearray(msg.data)
            self._set(line).move_to_end(line)
        self._trace_state(line, grant)
        self._send("Unblock", line, cls=MsgClass.COH_RESP)
        first, rest = reqs[0], reqs[1:]
        if first.tag is not None and msg.tag is not None and first.tag is not msg.tag:
            first.tag.phases, first.tag.last = msg.tag.phases, msg.tag.last
        if self.on_fill:
            self.on_fill(line, ln, first)
        self._perform(line, ln, first)
        for r in rest:
            self._handle(r)
        self._retry_stalled()

    def _make_room(self, line: int) -> None:
        s = self._set(line)
        if len(s) < self.cfg.associativity:
            return
        for victim in s:
            if victim not in self._mshr:
                break
        else:
            raise ProtocolError(f"{self.name}: no evictable way")
        ln = s.pop(victim)
        self.stats["evictions"] += 1
        self._trace_state(victim, "I")
        self._notify(victim)
        if self.on_lost:
            self.on_lost(victim, ln, "evict")
        kind = {"M": "PutM", "E": "PutE", "S": "PutS"}[ln.state]
        self._wb[victim] = bytes(ln.data)
        self._send(kind, victim, bytes(ln.data) if kind == "PutM" else None)

    def snapshot(self) -> dict[int, str]:
        return {line: ln.state for s in self.sets for line, ln in s.items()}

    def resident(self) -> int:
        return sum(len(s) for s in self.sets)

    def idle(self) -> bool:
        return not self._mshr and not self._wb and not self._stalled and not self._queued
