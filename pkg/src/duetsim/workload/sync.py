"""Shared-memory locks used by the processor-only baselines."""

from __future__ import annotations

from .bench import Layout

QNODE_BYTES = 32  # ``next`` and ``locked`` on separate lines


class McsLock:
    """Mellor-Crummey/Scott queue lock.

    Acquire clears the local queue node's ``next`` and swaps the node into
    the tail; with a predecessor it links in and spins on its own ``locked``
    flag.  Release hands over to the successor or CASes the tail back to null.
    """

    def __init__(self, layout: Layout, n_cpus: int):
        self.tail = layout.alloc(8)
        self.nodes = layout.alloc(QNODE_BYTES * n_cpus, align=QNODE_BYTES)
        self.owner: str | None = None
        self.enqueued: list[str] = []  # swap order
        self.granted: list[str] = []  # acquisition order
        self.contended = 0

    def node(self, cpu) -> int:
        return self.nodes + QNODE_BYTES * cpu.index

    def acquire(self, cpu):
        me = self.node(cpu)
        yield from cpu.store(me, 8, 0)
        pred = yield from cpu.swap(self.tail, me)
        self.enqueued.append(cpu.name)
        if pred:
            self.contended += 1
            yield from cpu.store(me + 16, 8, 1)
            yield from cpu.store(pred, 8, me)
            yield from cpu.spin_until(me + 16, lambda v: v == 0)
        self.owner = cpu.name
        self.granted.append(cpu.name)

    def release(self, cpu):
        if self.owner != cpu.name:
            raise RuntimeError(f"{cpu.name} released an MCS lock held by {self.owner}")
        self.owner = None
        me = self.node(cpu)
        succ = yield from cpu.load(me)
        if not succ:
            old = yield from cpu.cas(self.tail, me, 0)
            if old == me:
                return
            succ = yield from cpu.spin_until(me, lambda v: v != 0)
        yield from cpu.store(succ + 16, 8, 0)


class SpinLock:
    """Test-and-test-and-set lock: spin on a local copy, then CAS."""

    def __init__(self, layout: Layout):
        self.addr = layout.alloc(8)
        self.acquires = 0
        self.failed_cas = 0

    def acquire(self, cpu):
        while True:
            yield from cpu.spin_until(self.addr, lambda v: v == 0)
            old = yield from cpu.cas(self.addr, 0, 1)
            if old == 0:
                self.acquires += 1
                return
            self.failed_cas += 1

    def release(self, cpu):
        yield from cpu.store(self.addr, 8, 0)
