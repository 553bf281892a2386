"""Small coherent systems assembled directly from the coherence module."""

from duetsim.coherence import CacheConfig, Directory, L2Cache, Memory, addr_to_shard
from duetsim.noc import Mesh
from duetsim.simkernel import Engine
from duetsim.trace import Tracer


class MiniSystem:
    def __init__(self, n_caches=2, cfg=None, width=2, height=2):
        self.cfg = cfg or CacheConfig()
        self.engine = Engine()
        self.sys = self.engine.register_domain("sys", 10**9)
        self.tracer = Tracer(self.engine)
        self.mesh = Mesh(self.engine, self.sys, width, height, tracer=self.tracer)
        self.memory = Memory(self.cfg.line_bytes)
        tiles = [(x, y) for y in range(height) for x in range(width)]
        self.tiles = tiles
        self.dirs = [Directory(self.engine, self.sys, self.mesh, t, self.memory, self.cfg, self.tracer) for t in tiles]
        home = lambda line: tiles[addr_to_shard(line, self.cfg.line_bytes, len(tiles))]  # noqa: E731
        self.caches = []
        for i in range(n_caches):
            c = L2Cache(self.engine, self.sys, self.mesh, tiles[i], self.cfg, home, f"c{i}", tracer=self.tracer)
            self.tracer.log("cache", c.name, tiles[i])
            self.caches.append(c)

    def init(self, addr, size, value):
        self.memory.write(addr, size, value)
        self.tracer.log("init", addr, size, value)

    def do(self, cache, op, addr, size=8, value=None, expect=None):
        """Issue one access and run to quiescence; returns the callback value."""
        box = []
        self.caches[cache].access(op, addr, size, box.append, value=value, expect=expect)
        self.engine.run_until(lambda: bool(box) and self.quiet())
        return box[0]

    def quiet(self):
        return not self.engine._q or (
            not self.mesh.in_flight and all(c.idle() for c in self.caches) and all(d.idle() for d in self.dirs)
        )

    def settle(self):
        while self.engine._q:
            self.engine.step()

    def finalize(self):
        self.settle()
        for d in self.dirs:
            for line, (state, sharers, owner) in d.snapshot().items():
                self.tracer.log("dir_final", line, state, tuple(sorted(sharers)), owner)
        for c in self.caches:
            for line, state in c.snapshot().items():
                self.tracer.log("cache_final", c.name, line, state)


# acceptance results, criterion number -> printed line
ACCEPTANCE: dict[int, str] = {}


def record(n: int, title: str, ok: bool, detail: str) -> None:
    """Log one acceptance line (printed at the end of the session) and assert it."""
    line = f"{'PASS' if ok else 'FAIL'} [{n:2d}] {title}: {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line
