"""2D-mesh NoC with XY routing and per-(src, dst, virtual channel) ordering.

Routers have unbounded buffers; congestion shows up only as endpoint
serialization at the injecting and ejecting ports of each virtual channel.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum
from itertools import count
from typing import Any

from .simkernel import ClockDomain, Engine


class TileKind(str, Enum):
    P = "P"
    C = "C"
    M = "M"
    MC = "MC"


class MsgClass(str, Enum):
    COH_REQ = "coherence-req"
    COH_RESP = "coherence-resp"
    COH_INV = "coherence-inv"
    MMIO_REQ = "mmio-req"
    MMIO_RESP = "mmio-resp"


VC_OF = {
    MsgClass.COH_REQ: "req",
    MsgClass.MMIO_REQ: "req",
    MsgClass.COH_RESP: "resp",
    MsgClass.MMIO_RESP: "resp",
    MsgClass.COH_INV: "inv",
}

_msg_ids = count()


@dataclass(eq=False)
class NocMessage:
    src: tuple[int, int]
    dst: tuple[int, int]
    msg_class: MsgClass
    port: str
    kind: str
    address: int = 0
    data: Any = None
    fields: dict = field(default_factory=dict)
    tag: Any = None  # PhaseTag or None
    origin: str = ""
    seq: int = -1
    uid: int = field(default_factory=lambda: next(_msg_ids))

    @property
    def vc(self) -> str:
        return VC_OF[self.msg_class]


class Mesh:
    def __init__(
        self,
        engine: Engine,
        domain: ClockDomain,
        width: int,
        height: int,
        hop_latency: int = 1,
        serialization: int = 1,
        line_bytes: int = 16,
        tracer=None,
    ):
        if width < 1 or height < 1:
            raise ValueError("mesh dimensions must be positive")
        self.engine = engine
        self.domain = domain
        self.width = width
        self.height = height
        self.hop_latency = hop_latency
        self.serialization = serialization
        self.line_bytes = line_bytes
        self.tracer = tracer
        self.kinds: dict[tuple[int, int], TileKind] = {}
        self._handlers: dict[tuple[tuple[int, int], str], Callable[[NocMessage], None]] = {}
        self._seq: dict[tuple, int] = {}
        self._inject_free: dict[tuple, int] = {}
        self._eject_free: dict[tuple, int] = {}
        self._last_delivery: dict[tuple, int] = {}
        self.counts: dict[str, int] = {c.value: 0 for c in MsgClass}
        self.sent = 0
        self.delivered = 0
        self.tap: Callable[[NocMessage], None] | None = None

    # -- topology ------------------------------------------------------
    def check(self, tile: tuple[int, int]) -> None:
        x, y = tile
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise ValueError(f"tile {tile} outside {self.width}x{self.height} mesh")

    def set_kind(self, tile: tuple[int, int], kind: TileKind) -> None:
        self.check(tile)
        self.kinds[tile] = kind

    def route(self, src: tuple[int, int], dst: tuple[int, int]) -> list[tuple[int, int]]:
        """Dimension-ordered (X then Y) hop list, excluding the source."""
        self.check(src)
        self.check(dst)
        x, y = src
        path = []
        step = 1 if dst[0] > x else -1
        while x != dst[0]:
            x += step
            path.append((x, y))
        step = 1 if dst[1] > y else -1
        while y != dst[1]:
            y += step
            path.append((x, y))
        return path

    def hops(self, src: tuple[int, int], dst: tuple[int, int]) -> int:
        return abs(src[0] - dst[0]) + abs(src[1] - dst[1])

    def register(self, tile: tuple[int, int], port: str, handler: Callable[[NocMessage], None]) -> None:
        self.check(tile)
        self._handlers[(tile, port)] = handler

    # -- transport -----------------------------------------------------
    def latency(self, src: tuple[int, int], dst: tuple[int, int]) -> int:
        """Uncontended latency in cycles."""
        return self.hops(src, dst) * self.hop_latency + self.serialization

    def send(self, msg: NocMessage) -> int:
        """Inject ``msg`` now; returns the delivery time (ps)."""
        self.check(msg.src)
        self.check(msg.dst)
        if msg.data is not None and hasattr(msg.data, "__len__") and len(msg.data) > self.line_bytes:
            raise ValueError("payload larger than one cacheline")
        dom = self.domain
        vc = msg.vc
        key = (msg.src, msg.dst, vc)
        msg.seq = self._seq.get(key, 0)
        self._seq[key] = msg.seq + 1
        k_now = dom.edge_at_or_after(self.engine.now)
        ikey = (msg.src, vc)
        k_inj = max(k_now, self._inject_free.get(ikey, 0))
        self._inject_free[ikey] = k_inj + self.serialization
        k_arr = k_inj + self.serialization + self.hops(msg.src, msg.dst) * self.hop_latency
        ekey = (msg.dst, vc)
        k_del = max(k_arr, self._eject_free.get(ekey, 0))
        k_del = max(k_del, self._last_delivery.get(key, 0))
        self._eject_free[ekey] = k_del + self.serialization
        self._last_delivery[key] = k_del
        self.counts[msg.msg_class.value] += 1
        self.sent += 1
        if self.tracer is not None:
            self.tracer.log("noc_send", msg.src, msg.dst, vc, msg.seq, msg.origin)
        if self.tap is not None:
            self.tap(msg)
        self.engine.at_edge(dom, k_del, self._deliver, msg)
        return dom.edge_time(k_del)

    @property
    def in_flight(self) -> int:
        return self.sent - self.delivered

    def _deliver(self, msg: NocMessage) -> None:
        self.delivered += 1
        if msg.tag is not None:
            msg.tag.charge("noc", self.engine.now)
        if self.tracer is not None:
            self.tracer.log("noc_recv", msg.src, msg.dst, msg.vc, msg.seq)
        handler = self._handlers.get((msg.dst, msg.port))
        if handler is None:
            raise RuntimeError(f"no endpoint {msg.port!r} at tile {msg.dst}")
        handler(msg)
