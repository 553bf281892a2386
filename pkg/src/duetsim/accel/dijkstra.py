"""Single-source shortest paths with an on-chip priority queue."""

from __future__ import annotations

import heapq

from ..adapter import SoftCacheConfig
from ..simkernel import wait_all
from .base import Accelerator

HEAP_OP = 1  # cycles per (pipelined) hardware priority-queue operation
INF = (1 << 63) - 1


class DijkstraAccel(Accelerator):
    """Runs one SSSP call per source written to reg 1.

    The CSR graph is read through the soft cache (row offsets at ``rows``,
    8-byte ``(dst, weight)`` edge records at ``edges``); distances are kept on
    chip and written back to ``dist`` before reg 2 receives the number of
    reached vertices.
    """

    name = "dijkstra"
    SRC, DONE = 1, 2

    def __init__(self, platform, n: int, rows: int, edges: int, dist: int, strict_frequency: bool = True, soft_cache=None):
        super().__init__(platform, strict_frequency, soft_cache or SoftCacheConfig(lines=256))
        self.n = n
        self.rows = rows
        self.edges = edges
        self.dist_addr = dist
        self.stats = {"dijkstra.calls": 0, "dijkstra.relaxations": 0}
        self.call_hits: list[tuple[int, int]] = []  # soft-cache (hits, misses) per call

    def run(self):
        port = self.ports[0]
        while True:
            _, src = yield from self.next_cmd()
            self.stats["dijkstra.calls"] += 1
            h0, m0 = port.stats["hits"], port.stats["misses"]
            dist = [INF] * self.n
            dist[src] = 0
            heap = [(0, src)]
            done = [False] * self.n
            while heap:
                d, u = heapq.heappop(heap)
                yield HEAP_OP
                if done[u]:
                    continue
                done[u] = True
                lo = yield from port.load(self.rows + 4 * u, 4)
                hi = yield from port.load(self.rows + 4 * (u + 1), 4)
                recs = yield self._fetch(port, lo, hi)
                for v, w in recs:
                    self.stats["dijkstra.relaxations"] += 1
                    if d + w < dist[v]:
                        dist[v] = d + w
                        heapq.heappush(heap, (d + w, v))
                yield max(1, (len(recs) + 1) // 2)  # two relaxations per cycle
            reached = 0
            for v in range(self.n):
                reached += dist[v] != INF
                yield from port.store(self.dist_addr + 8 * v, 8, dist[v])
                yield 1
            yield from port.fence()
            self.call_hits.append((port.stats["hits"] - h0, port.stats["misses"] - m0))
            self.regs.push_cpu(self.DONE, reached)

    def cumulative_hit_rates(self) -> list[float]:
        """Soft-cache hit rate over the first ``k`` calls, for each ``k``."""
        out, h, m = [], 0, 0
        for dh, dm in self.call_hits:
            h, m = h + dh, m + dm
            out.append(h / max(1, h + m))
        return out

    def _fetch(self, port, lo: int, hi: int):
        """Fetch edge records ``lo..hi`` with one concurrent reader per cache line."""
        lb = port.lb
        first = (self.edges + 8 * lo) // lb * lb
        last = (self.edges + 8 * hi - 1) // lb * lb if hi > lo else first - lb
        procs = []
        for line in range(first, last + 1, lb):
            a = max(line, self.edges + 8 * lo)
            b = min(line + lb, self.edges + 8 * hi)
            procs.append(self.engine.process(self._read_records(port, a, b), self.fpga, "dijkstra.fetch", daemon=True).done)
        out = self.engine.signal("edges")
        wait_all(self.engine, procs).add_waiter(lambda vals: out.fire([r for chunk in vals for r in chunk]))
        return out

    def _read_records(self, port, a: int, b: int):
        recs = []
        for addr in range(a, b, 8):
            rec = yield from port.load(addr, 8)
            recs.append((rec & 0xFFFF_FFFF, rec >> 32))
        return recs
