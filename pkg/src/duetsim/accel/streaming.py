"""Streaming accelerators: tangent, 512-bit popcount and the sorting network."""

from __future__ import annotations

from collections import deque

import numpy as np

from ..coherence import read_bytes
from ..simkernel import Pipeline, wait_all
from .base import Accelerator, bits_f64, f64_bits
from .kernels import (
    batcher_network,
    popcount512,
    sort_network,
    tangent,
    tangent_pipeline_depth,
)

TAN_ERROR = 0x7FF8_0000_0000_0BAD  # quiet NaN returned for out-of-domain arguments


def tangent_result_bits(x: float) -> int:
    y, ok = tangent(x)
    return f64_bits(y) if ok else TAN_ERROR


class TangentAccel(Accelerator):
    """Piecewise-linear tangent; argument in through reg 1, result out of reg 2."""

    name = "tangent"
    ARG, RES = 1, 2

    def __init__(self, platform, strict_frequency: bool = True):
        super().__init__(platform, strict_frequency)
        self.pipe = Pipeline(self.engine, self.fpga, tangent_pipeline_depth(), self.desc.ii)
        self.stats = {"tangent.evaluated": 0}

    def run(self):
        while True:
            _, v = yield from self.next_cmd()
            self.stats["tangent.evaluated"] += 1
            self.pipe.accept(self.regs.push_cpu, self.RES, tangent_result_bits(bits_f64(v)))


class InOrderRetire:
    """Retires out-of-order completions in issue order (a reorder buffer)."""

    def __init__(self):
        self._q: deque = deque()

    def add(self, done_sig, fn) -> None:
        entry = [done_sig, fn, False]
        self._q.append(entry)
        done_sig.add_waiter(lambda _v, e=entry: self._done(e))

    def _done(self, entry) -> None:
        entry[2] = True
        q = self._q
        while q and q[0][2]:
            sig, fn, _ = q.popleft()
            fn(sig.value)


class PopcountAccel(Accelerator):
    """Counts set bits of a 512-bit vector whose address arrives in reg 1."""

    name = "popcount"
    ADDR, RES = 1, 2
    LATENCY = 3  # adder-tree stages

    def __init__(self, platform, strict_frequency: bool = True):
        super().__init__(platform, strict_frequency)
        self.retire = InOrderRetire()
        self.pipe = Pipeline(self.engine, self.fpga, self.LATENCY, self.desc.ii)
        self.stats = {"popcount.vectors": 0}

    def run(self):
        port = self.ports[0]
        lb = port.lb
        while True:
            _, addr = yield from self.next_cmd()
            sigs = []
            for k in range(64 // lb):
                sigs.append(port.issue_load(addr + k * lb))
                yield 1
            self.retire.add(wait_all(self.engine, sigs), self._count)

    def _count(self, lines) -> None:
        words = np.frombuffer(b"".join(bytes(x) for x in lines), dtype=np.uint64)
        self.stats["popcount.vectors"] += 1
        self.pipe.accept(self.regs.push_cpu, self.RES, popcount512(words))


class SortAccel(Accelerator):
    """Bitonic/odd-even sorting network over N 32-bit keys.

    The processor writes the source base (reg 1) and destination base (reg
    2), then the number of consecutive N-element slices to sort (reg 3).
    Slices are read through hub 0 and written through hub 1; reg 4 receives
    the slice count once every result store is acknowledged.
    """

    SRC, DST, GO, DONE = 1, 2, 3, 4

    def __init__(self, platform, n: int, strict_frequency: bool = True):
        self.name = f"sort{n}"
        super().__init__(platform, strict_frequency)
        self.n = n
        self.stages = len(batcher_network(n))
        self.src = 0
        self.dst = 0
        self._slices: deque = deque()
        self._ready = None
        self.stats = {f"sort{n}.slices": 0}

    def register_write(self, reg: int, value: int) -> None:
        if reg == self.SRC:
            self.src = value
        elif reg == self.DST:
            self.dst = value
        else:
            super().register_write(reg, value)

    def start(self) -> None:
        super().start()
        self.engine.process(self._writer(), self.fpga, f"accel.{self.name}.writer", daemon=True)

    def run(self):
        rd = self.ports[0]
        lb = rd.lb
        nbytes = self.n * 4
        while True:
            _, count = yield from self.next_cmd()
            src, dst = self.src, self.dst
            for s in range(count):
                base = src + s * nbytes
                sigs = []
                for k in range(nbytes // lb):
                    sigs.append(rd.issue_load(base + k * lb))
                    yield 1
                data = yield wait_all(self.engine, sigs)
                keys = np.frombuffer(b"".join(bytes(x) for x in data), dtype=np.uint32)
                out = sort_network(keys.reshape(1, -1))[0]
                # the network is fully pipelined: results emerge ``stages`` cycles later
                self.engine.after_cycles(self.fpga, self.stages, self._emit, (dst + s * nbytes, out, s == count - 1, count))

    def _emit(self, item) -> None:
        self._slices.append(item)
        if self._ready is not None:
            sig, self._ready = self._ready, None
            sig.fire(None)

    def _writer(self):
        wr = self.ports[1]
        while True:
            while not self._slices:
                self._ready = self.engine.signal("sort.slice")
                yield self._ready
            base, out, last, count = self._slices.popleft()
            raw = out.astype(np.uint32).tobytes()
            for off in range(0, len(raw), 8):
                yield from wr.store(base + off, 8, read_bytes(raw, off, 8))
                yield 1
            self.stats[f"sort{self.n}.slices"] += 1
            if last:
                yield from wr.fence()
                self.regs.push_cpu(self.DONE, count)
