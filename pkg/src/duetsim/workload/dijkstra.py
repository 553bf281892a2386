"""Repeated single-source shortest paths over one CSR graph."""

from __future__ import annotations

import heapq
import math
import random

from ..accel.dijkstra import INF, DijkstraAccel
from .bench import Benchmark, Layout, read_words, write_words
from .streaming import CMP_BRANCH, LOOP

SIFT_LEVEL = 6  # index math, two loads, compare, swap stores per heap level


def random_graph(n: int, degree: int, seed: int, max_weight: int = 100):
    """Directed graph with ``degree`` out-edges per vertex plus a ring for connectivity."""
    rng = random.Random(seed)
    adj = []
    for u in range(n):
        out = {(u + 1) % n: rng.randint(1, max_weight)}
        while len(out) < min(degree, n - 1):
            v = rng.randrange(n)
            if v != u:
                out.setdefault(v, rng.randint(1, max_weight))
        adj.append(sorted(out.items()))
    return adj


def bellman_ford(adj, src):
    """Independent oracle for the distances."""
    n = len(adj)
    dist = [INF] * n
    dist[src] = 0
    for _ in range(n - 1):
        changed = False
        for u in range(n):
            if dist[u] == INF:
                continue
            for v, w in adj[u]:
                if dist[u] + w < dist[v]:
                    dist[v] = dist[u] + w
                    changed = True
        if not changed:
            break
    return dist


class Dijkstra(Benchmark):
    name = "dijkstra"
    accel = "dijkstra"
    n_processors = 1
    n_hubs = 1

    def __init__(self, n: int = 40, degree: int = 4, sources: int = 4, seed: int = 4, soft_cache=None, graph=None):
        """``graph`` (adjacency lists of ``(dst, weight)``) overrides the random graph."""
        self.adj = graph if graph is not None else random_graph(n, degree, seed)
        n = self.n = len(self.adj)
        sources = min(sources, n)
        if any(w < 0 for a in self.adj for _, w in a):
            raise ValueError("negative edge weights are not supported")
        self.sources = list(range(sources))
        self.soft_cache = soft_cache

    def prepare(self, plat):
        lay = Layout()
        m = sum(len(a) for a in self.adj)
        self.rows = lay.alloc(4 * (self.n + 1))
        self.edges = lay.alloc(8 * m)
        self.dist = lay.alloc(8 * self.n)
        self.sums = lay.alloc(8 * len(self.sources))
        offs, recs = [0], []
        for a in self.adj:
            recs += [v | (w << 32) for v, w in a]
            offs.append(len(recs))
        write_words(plat, self.rows, offs, size=4)
        write_words(plat, self.edges, recs)

    def warmup(self, plat, cpu):
        for a in range(self.rows, self.dist, 8):
            yield from cpu.load(a)

    def make_accel(self, plat, strict_frequency):
        self.model = DijkstraAccel(plat, self.n, self.rows, self.edges, self.dist, strict_frequency, self.soft_cache)
        return self.model

    def _software(self, cpu, src):
        n = self.n
        for v in range(n):
            yield from cpu.store(self.dist + 8 * v, 8, INF)
        yield from cpu.store(self.dist + 8 * src, 8, 0)
        heap = [(0, src)]
        while heap:
            yield from cpu.compute(SIFT_LEVEL * max(1, math.ceil(math.log2(len(heap) + 1))))
            d, u = heapq.heappop(heap)
            du = yield from cpu.load(self.dist + 8 * u)
            yield from cpu.compute(CMP_BRANCH)
            if d > du:
                continue
            lo = yield from cpu.load(self.rows + 4 * u, 4)
            hi = yield from cpu.load(self.rows + 4 * (u + 1), 4)
            for e in range(lo, hi):
                rec = yield from cpu.load(self.edges + 8 * e)
                v, w = rec & 0xFFFF_FFFF, rec >> 32
                dv = yield from cpu.load(self.dist + 8 * v)
                yield from cpu.compute(CMP_BRANCH)
                if d + w < dv:
                    yield from cpu.store(self.dist + 8 * v, 8, d + w)
                    heapq.heappush(heap, (d + w, v))
                    yield from cpu.compute(SIFT_LEVEL * max(1, math.ceil(math.log2(len(heap)))))

    def program(self, plat, cpu, mode):
        for k, src in enumerate(self.sources):
            if mode == "processor_only":
                yield from self._software(cpu, src)
            else:
                yield from cpu.mmio_write(DijkstraAccel.SRC, src)
                yield from cpu.pop(DijkstraAccel.DONE)
            total = 0
            for v in range(self.n):
                total += yield from cpu.load(self.dist + 8 * v)
                yield from cpu.compute(LOOP)
            yield from cpu.store(self.sums + 8 * k, 8, total & (2**64 - 1))

    def verify(self, plat):
        got_sums = read_words(plat, self.sums, len(self.sources))
        want_sums = [sum(bellman_ford(self.adj, s)) & (2**64 - 1) for s in self.sources]
        last = read_words(plat, self.dist, self.n)
        ok = got_sums == want_sums and last == bellman_ford(self.adj, self.sources[-1])
        return ok, "" if ok else "distances differ from the Bellman-Ford oracle"

    def outputs(self, plat):
        return read_words(plat, self.sums, len(self.sources)) + read_words(plat, self.dist, self.n)

    def extra_stats(self, plat):
        if not plat.hubs or plat.hubs[0].port is None:
            return {}
        st = plat.hubs[0].port.stats
        acc = st["hits"] + st["misses"]
        return {"soft_hit_rate": st["hits"] / acc if acc else 0.0}
