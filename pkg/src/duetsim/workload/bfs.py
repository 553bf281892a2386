"""Level-synchronous parallel breadth-first search."""

from __future__ import annotations

import random
from collections import deque

from ..accel.queues import QueueAccel
from ..adapter import TOKEN_EMPTY
from .bench import Benchmark, Layout, read_words, write_words
from .cpu import Barrier
from .streaming import CMP_BRANCH, LOOP
from .sync import SpinLock

UNVISITED = (1 << 32) - 1


def random_undirected(n: int, degree: int, seed: int) -> list[list[int]]:
    rng = random.Random(seed)
    adj = [set() for _ in range(n)]
    for u in range(1, n):  # random spanning tree keeps it connected
        v = rng.randrange(u)
        adj[u].add(v)
        adj[v].add(u)
    target = min(n * degree, n * (n - 1))  # a complete graph caps the degree
    while sum(len(a) for a in adj) < target:
        u, v = rng.randrange(n), rng.randrange(n)
        if u != v:
            adj[u].add(v)
            adj[v].add(u)
    return [sorted(a) for a in adj]


def bfs_levels(adj, src: int = 0) -> list[int]:
    level = [UNVISITED] * len(adj)
    level[src] = 0
    q = deque([src])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if level[v] == UNVISITED:
                level[v] = level[u] + 1
                q.append(v)
    return level


class Bfs(Benchmark):
    name = "bfs"
    accel = "bfs"
    n_hubs = 0

    def __init__(self, n_processors: int = 4, n: int = 96, degree: int = 4, seed: int = 8, graph=None):
        self.n_processors = n_processors
        self.name = f"bfs_p{n_processors}"
        self.adj = graph if graph is not None else random_undirected(n, degree, seed)
        self.n = len(self.adj)
        self.step_times: list[int] = []

    def prepare(self, plat):
        lay = Layout()
        self.rows = lay.alloc(4 * (self.n + 1))
        m = sum(len(a) for a in self.adj)
        self.cols = lay.alloc(4 * max(m, 1))
        self.level = lay.alloc(8 * self.n)
        offs, cols = [0], []
        for a in self.adj:
            cols += a
            offs.append(len(cols))
        write_words(plat, self.rows, offs, size=4)
        write_words(plat, self.cols, cols, size=4)
        write_words(plat, self.level, [0] + [UNVISITED] * (self.n - 1))
        self.count = lay.alloc(8)
        self.barrier = Barrier(lay.alloc(8), lay.alloc(8), self.n_processors)
        # software queues: two ping-pong arrays with head/tail words and a lock each
        self.queues = []
        for _ in range(2):
            head, tail = lay.alloc(8), lay.alloc(8)
            arr = lay.alloc(8 * self.n)
            self.queues.append((head, tail, arr, SpinLock(lay)))
        write_words(plat, self.queues[0][2], [0])
        plat.init_memory(self.queues[0][1], 8, 1)

    def warmup(self, plat, cpu):
        for a in range(self.rows, self.level, 8):
            yield from cpu.load(a)

    def make_accel(self, plat, strict_frequency):
        return QueueAccel(plat, strict_frequency=strict_frequency)

    def _visit(self, cpu, u, depth, push):
        lo = yield from cpu.load(self.rows + 4 * u, 4)
        hi = yield from cpu.load(self.rows + 4 * (u + 1), 4)
        for e in range(lo, hi):
            v = yield from cpu.load(self.cols + 4 * e, 4)
            lv = yield from cpu.load(self.level + 8 * v)
            yield from cpu.compute(CMP_BRANCH)
            if lv == UNVISITED:
                old = yield from cpu.cas(self.level + 8 * v, UNVISITED, depth + 1)
                if old == UNVISITED:
                    yield from push(v)

    def _end_step(self, plat, cpu):
        if cpu.index == 0:
            self.step_times.append(plat.engine.now)
        yield from self.barrier.wait(cpu)

    # -- processor-only: lock-protected software queues ---------------------------------------
    def _baseline(self, plat, cpu):
        depth = 0
        while True:
            head, tail, arr, lock = self.queues[depth % 2]
            nhead, ntail, narr, nlock = self.queues[(depth + 1) % 2]

            def push(v):
                yield from nlock.acquire(cpu)
                t = yield from cpu.load(ntail)
                yield from cpu.store(narr + 8 * t, 8, v)
                yield from cpu.store(ntail, 8, t + 1)
                yield from nlock.release(cpu)

            while True:
                h = yield from cpu.load(head)  # unlocked emptiness pre-check
                t = yield from cpu.load(tail)
                if h >= t:
                    break
                yield from lock.acquire(cpu)
                h = yield from cpu.load(head)
                t = yield from cpu.load(tail)
                if h >= t:
                    yield from lock.release(cpu)
                    break
                u = yield from cpu.load(arr + 8 * h)
                yield from cpu.store(head, 8, h + 1)
                yield from lock.release(cpu)
                yield from self._visit(cpu, u, depth, push)
                yield from cpu.compute(LOOP)
            yield from self._end_step(plat, cpu)
            if cpu.index == 0:  # recycle the drained queue
                yield from cpu.store(head, 8, 0)
                yield from cpu.store(tail, 8, 0)
            yield from self.barrier.wait(cpu)
            nt = yield from cpu.load(ntail)
            if nt == 0:
                return
            depth += 1

    # -- hardware queues -------------------------------------------------------------------------
    def _offload(self, plat, cpu):
        def push(v):
            yield from cpu.mmio_write(QueueAccel.PUSH, v)

        if cpu.index == 0:
            yield from push(0)
            n = yield from cpu.mmio_read(QueueAccel.SWAP)
            yield from cpu.store(self.count, 8, n)
        yield from self.barrier.wait(cpu)
        depth = 0
        while True:
            while True:
                tok = yield from cpu.mmio_read(QueueAccel.TOKEN)
                if tok == TOKEN_EMPTY or cpu.last_status != "ok":
                    break
                u = yield from cpu.pop(QueueAccel.VALUE)
                yield from self._visit(cpu, u, depth, push)
                yield from cpu.compute(LOOP)
            yield from self._end_step(plat, cpu)
            if cpu.index == 0:
                n = yield from cpu.mmio_read(QueueAccel.SWAP)
                yield from cpu.store(self.count, 8, n)
            yield from self.barrier.wait(cpu)
            n = yield from cpu.load(self.count)
            if n == 0 or cpu.last_status != "ok":
                return
            depth += 1

    def program(self, plat, cpu, mode):
        if cpu.index == 0:
            self.step_times = [plat.engine.now]
        if mode == "processor_only":
            return self._baseline(plat, cpu)
        return self._offload(plat, cpu)

    def mean_step_ps(self) -> float:
        st = self.step_times
        return (st[-1] - st[0]) / max(1, len(st) - 1)

    def verify(self, plat):
        got = read_words(plat, self.level, self.n)
        ok = got == bfs_levels(self.adj)
        return ok, "" if ok else "level map differs from the sequential BFS oracle"

    def outputs(self, plat):
        return read_words(plat, self.level, self.n)

    def extra_stats(self, plat):
        return {"bfs.steps": len(self.step_times) - 1, "bfs.mean_step_ps": self.mean_step_ps()}
