"""Hardware lock-free work queues for level-synchronous graph traversal."""

from __future__ import annotations

from collections import deque

from .base import Accelerator


class QueueAccel(Accelerator):
    """Two frontier queues shared by every processor.

    Push writes reg 1 (fpga-bound) into the *next* queue.  Pop reads the
    token register (reg 2): a token guarantees that a value is waiting in the
    cpu-bound register (reg 3); "empty" means the current queue is drained.
    Reading reg 4 (normal) swaps the queues and answers with the new
    frontier size once its values and tokens are visible to the processors.
    Reg 5 (normal) reports how many pushes were dropped on overflow.
    """

    name = "bfs"
    PUSH, TOKEN, VALUE, SWAP, STATUS = 1, 2, 3, 4, 5

    def __init__(self, platform, capacity: int = 4096, strict_frequency: bool = True):
        super().__init__(platform, strict_frequency)
        self.capacity = capacity
        self.next: deque = deque()
        self.overflows = 0
        self.stats = {"queue.pushes": 0, "queue.swaps": 0}

    def register_write(self, reg: int, value: int) -> None:
        if reg != self.PUSH:
            return
        if len(self.next) >= self.capacity:
            self.overflows += 1
            return
        self.stats["queue.pushes"] += 1
        self.next.append(value)

    def register_read(self, reg: int):
        if reg == self.STATUS:
            return self.overflows
        if reg != self.SWAP:
            return super().register_read(reg)
        items, self.next = self.next, deque()
        self.stats["queue.swaps"] += 1
        for v in items:
            self.regs.push_cpu(self.VALUE, v)
        if items:
            self.regs.add_token(self.TOKEN, len(items))
        # answer only after the refreshed shadow state has crossed over
        done = self.engine.signal("queue.swap")
        self._when_synced(done, len(items))
        return done

    def _when_synced(self, sig, value: int) -> None:
        if len(self.control.sync):
            self.engine.after_cycles(self.fpga, 1, self._when_synced, sig, value)
        else:
            sig.fire(value)

    def run(self):
        return
        yield
