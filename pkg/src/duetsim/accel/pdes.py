"""Conservative (non-speculative) hardware event scheduler for PDES."""

from __future__ import annotations

import heapq
from collections import Counter

from ..simkernel import Signal
from .base import Accelerator
from .streaming import InOrderRetire

EMPTY = (1 << 64) - 1  # next() on a drained scheduler
END = EMPTY - 1  # sentinel handed to each processor once the simulation is over


class ScheduleError(ValueError):
    pass


class SchedulerCore:
    """Priority queue with a conservative safety window.

    An event may be dispatched iff its timestamp is no later than every
    event still in progress.  Events for the same ``(time, gate)`` are merged.
    """

    def __init__(self):
        self.heap: list[tuple[int, int, int]] = []
        self.in_progress: Counter = Counter()
        self.last: dict[int, int] = {}  # gate -> latest scheduled time
        self.horizon = 0  # timestamp of the latest dispatched event
        self.merged = 0

    def schedule(self, t: int, gate: int, ptr: int) -> bool:
        if t < self.horizon:
            raise ScheduleError(f"event for gate {gate} at t={t} is behind the horizon {self.horizon}")
        if self.last.get(gate) == t:
            self.merged += 1
            return False
        self.last[gate] = t
        heapq.heappush(self.heap, (t, gate, ptr))
        return True

    def next(self):
        """Pop a safe event ``(t, gate, ptr)``; ``EMPTY`` if none is ready."""
        if not self.heap:
            return EMPTY
        t = self.heap[0][0]
        if self.in_progress and t > min(self.in_progress):
            return EMPTY
        ev = heapq.heappop(self.heap)
        self.in_progress[t] += 1
        self.horizon = max(self.horizon, t)
        return ev

    def complete(self, t: int) -> None:
        self.in_progress[t] -= 1
        if self.in_progress[t] <= 0:
            del self.in_progress[t]

    def drained(self) -> bool:
        return not self.heap and not self.in_progress


class PdesAccel(Accelerator):
    """Scheduler behind three registers.

    reg 1 (fpga-bound): ``SCHEDULE ptr`` or ``DONE ptr`` (bit 63 set); the
    8-byte event record ``time << 32 | gate`` is fetched through the Memory Hub.
    reg 2 (cpu-bound): next event pointer, or ``END`` once drained.
    reg 3 (normal): number of rejected (past) schedules.
    """

    name = "pdes"
    CMD, NEXT, STATUS = 1, 2, 3
    DONE_FLAG = 1 << 63
    HEAP_OP = 1

    def __init__(self, platform, n_workers: int, initial=(), strict_frequency: bool = True):
        super().__init__(platform, strict_frequency)
        self.core = SchedulerCore()
        for t, gate, ptr in initial:
            self.core.schedule(t, gate, ptr)
        self.n_workers = n_workers
        self.ptr_time: dict[int, int] = {}
        self.retire = InOrderRetire()
        self.errors = 0
        self.ended = False
        self.stats = {"pdes.dispatched": 0, "pdes.merged": 0}

    def register_read(self, reg: int):
        return self.errors if reg == self.STATUS else super().register_read(reg)

    def start(self) -> None:
        super().start()
        self.engine.after_cycles(self.fpga, 1, self._dispatch)

    def run(self):
        port = self.ports[0]
        while True:
            _, v = yield from self.next_cmd()
            if v & self.DONE_FLAG:
                ptr = v & ~self.DONE_FLAG
                sig = Signal(self.engine)
                sig.fire(None)
                self.retire.add(sig, lambda _d, p=ptr: self._done(p))
            else:
                self.retire.add(port.issue_load(v), lambda data, p=v, off=v % port.lb: self._arrived(p, data, off))
            yield self.HEAP_OP

    def _arrived(self, ptr: int, data, off: int) -> None:
        rec = int.from_bytes(bytes(data[off : off + 8]), "little")
        t, gate = rec >> 32, rec & 0xFFFF_FFFF
        try:
            if not self.core.schedule(t, gate, ptr):
                self.stats["pdes.merged"] += 1
        except ScheduleError:
            self.errors += 1
        self._dispatch()

    def _done(self, ptr: int) -> None:
        self.core.complete(self.ptr_time.pop(ptr))
        self._dispatch()

    def _dispatch(self) -> None:
        core = self.core
        while True:
            ev = core.next()
            if ev == EMPTY:
                break
            t, _, ptr = ev
            self.ptr_time[ptr] = t
            self.stats["pdes.dispatched"] += 1
            self.regs.push_cpu(self.NEXT, ptr)
        if core.drained() and not self.ended:
            self.ended = True
            for _ in range(self.n_workers):
                self.regs.push_cpu(self.NEXT, END)
