"""Assembles a Dolly-style system: processors, distributed directory, adapter.

A ``PpMm`` instance has ``p`` processor tiles, one C-tile (Control Hub and
the first Memory Hub) and ``m - 1`` M-tiles with one Memory Hub each; with
``m = 0`` the C-tile carries only the Control Hub.
Tiles are laid out row-major on the most square mesh that fits them, except
that the C-tile takes the position nearest the center; any leftover
positions are memory-controller tiles.  Every tile holds one
directory/L3 shard.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .adapter import (
    ControlHub,
    DuetAdapter,
    FeatureSwitches,
    FpgaPort,
    MemoryHub,
    SoftCacheConfig,
)
from .coherence import CacheConfig, Directory, L2Cache, Memory, addr_to_shard
from .noc import Mesh, TileKind
from .simkernel import Engine
from .trace import Tracer

MODES = ("processor_only", "fpsoc", "duet")


@dataclass
class PlatformConfig:
    mode: str = "duet"
    n_processors: int = 4
    n_hubs: int = 1
    sys_hz: int = 1_000_000_000
    fpga_hz: int = 500_000_000
    hop_latency: int = 1
    serialization: int = 1
    cache: CacheConfig = field(default_factory=CacheConfig)
    sync_stages: int = 2
    fifo_depth: int = 8
    proxy_mshrs: int = 1
    cpu_mshrs: int = 1
    mmio_cycles: int = 20  # processor-side cost of an uncached, strongly ordered access
    soft_reg_cycles: int = 6  # eFPGA register-file logic, in fpga cycles
    forward_invalidations: bool = True
    tlb_enabled: bool = False
    atomics_enabled: bool = True
    timeout_limit: int = 100_000
    blocking_timeout: int = 10**6
    tlb_entries: int = 16
    handler_delay: int = 200
    mmio_base: int = 0xF000_0000
    trace: bool = True

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_processors < 1:
            raise ValueError("need at least one processor")
        if self.n_hubs < 0:
            raise ValueError("n_hubs must be >= 0")
        for name in ("sys_hz", "fpga_hz", "hop_latency", "serialization", "sync_stages", "fifo_depth", "proxy_mshrs", "timeout_limit"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def instance_name(self) -> str:
        m = 0 if self.mode == "processor_only" else self.n_hubs
        return f"P{self.n_processors}M{m}"


def mesh_shape(n_tiles: int) -> tuple[int, int]:
    w = math.ceil(math.sqrt(n_tiles))
    return w, math.ceil(n_tiles / w)


class Platform:
    def __init__(self, cfg: PlatformConfig | None = None):
        from .workload.cpu import Cpu

        cfg = cfg or PlatformConfig()
        cfg.validate()
        self.cfg = cfg
        self.engine = Engine()
        self.sys = self.engine.register_domain("sys", cfg.sys_hz)
        self.fpga = self.engine.register_domain("fpga", cfg.fpga_hz)
        self.tracer = Tracer(self.engine, enabled=cfg.trace)
        has_adapter = cfg.mode != "processor_only"
        n_hubs = cfg.n_hubs if has_adapter else 0
        n_adapter_tiles = max(n_hubs, 1) if has_adapter else 0
        n_tiles = cfg.n_processors + n_adapter_tiles
        w, h = mesh_shape(n_tiles)
        self.mesh = Mesh(self.engine, self.sys, w, h, cfg.hop_latency, cfg.serialization, cfg.cache.line_bytes, self.tracer)
        tiles = [(x, y) for y in range(h) for x in range(w)]
        if has_adapter:  # the C-tile sits nearest the mesh center, processors fill the rest
            used = tiles[:n_tiles]
            c = min(used, key=lambda t: (abs(t[0] - (w - 1) / 2) + abs(t[1] - (h - 1) / 2), t[1], t[0]))
            used.remove(c)
            used.insert(cfg.n_processors, c)
            tiles = used + tiles[n_tiles:]
        self.tiles = tiles
        self.memory = Memory(cfg.cache.line_bytes)
        self.dirs = [Directory(self.engine, self.sys, self.mesh, t, self.memory, cfg.cache, self.tracer) for t in tiles]
        lb = cfg.cache.line_bytes
        self.home = lambda line: tiles[addr_to_shard(line, lb, len(tiles))]

        self.cpus: list[Cpu] = []
        for i in range(cfg.n_processors):
            t = tiles[i]
            self.mesh.set_kind(t, TileKind.P)
            cache = L2Cache(self.engine, self.sys, self.mesh, t, cfg.cache, self.home, f"cpu{i}.l2", mshrs=cfg.cpu_mshrs, tracer=self.tracer)
            self.tracer.log("cache", cache.name, t)
            self.cpus.append(Cpu(self, i, t, cache))
        for t in tiles[n_tiles:]:
            self.mesh.set_kind(t, TileKind.MC)

        self.adapter: DuetAdapter | None = None
        self.hubs: list[MemoryHub] = []
        self.control: ControlHub | None = None
        self.ctl_tile = None
        if has_adapter:
            ad = self.adapter = DuetAdapter(self.engine, self.sys, self.fpga, self.tracer, cfg.timeout_limit)
            for j in range(n_hubs):
                t = tiles[cfg.n_processors + j]
                self.mesh.set_kind(t, TileKind.C if j == 0 else TileKind.M)
                sw = FeatureSwitches(
                    forward_invalidations=cfg.forward_invalidations,
                    tlb_enabled=cfg.tlb_enabled,
                    atomics_enabled=cfg.atomics_enabled,
                    timeout_limit=cfg.timeout_limit,
                )
                hub = MemoryHub(
                    self.engine, self.sys, self.fpga, self.mesh, t, cfg.cache, self.home, f"hub{j}",
                    mode=cfg.mode, switches=sw, tracer=self.tracer, mshrs=cfg.proxy_mshrs,
                    sync_stages=cfg.sync_stages, fifo_depth=cfg.fifo_depth,
                    handler_delay=cfg.handler_delay, tlb_entries=cfg.tlb_entries,
                )
                self.tracer.log("cache", hub.cache.name, t)
                ad.add_hub(hub)
                self.hubs.append(hub)
            self.ctl_tile = tiles[cfg.n_processors]
            self.mesh.set_kind(self.ctl_tile, TileKind.C)
            self.control = ad.control = ControlHub(
                self.engine, self.sys, self.fpga, self.mesh, self.ctl_tile, ad, mode=cfg.mode,
                tracer=self.tracer, sync_stages=cfg.sync_stages, fifo_depth=cfg.fifo_depth,
                blocking_timeout=cfg.blocking_timeout, soft_reg_cycles=cfg.soft_reg_cycles,
            )

    # -- helpers ---------------------------------------------------------------
    def port(self, hub: int = 0, soft_cache: SoftCacheConfig | None = None) -> FpgaPort:
        if not self.hubs:
            raise ValueError("processor-only platform has no Memory Hubs")
        return FpgaPort(self.hubs[hub], soft_cache)

    def mmio_addr(self, reg: int) -> int:
        return self.cfg.mmio_base + reg * 8

    def init_memory(self, addr: int, size: int, value: int) -> None:
        """Write initial memory contents (before any cache holds the line)."""
        self.memory.write(addr, size, value)
        self.tracer.log("init", addr, size, value)

    def caches(self) -> list[L2Cache]:
        return [c.cache for c in self.cpus] + [h.cache for h in self.hubs]

    def run(self, limit_ps: int | None = None) -> int:
        """Run until every processor program (non-daemon process) has finished."""
        return self.engine.run_until(limit_ps=limit_ps)

    def settle(self, max_events: int = 10**7) -> None:
        """Drain in-flight hardware events (write-backs, acks) after programs end."""
        eng = self.engine
        n = 0
        while eng._q and n < max_events and not self.quiescent():
            eng.step()
            n += 1

    def quiescent(self) -> bool:
        if self.mesh.in_flight:
            return False
        if any(not c.idle() for c in self.caches()):
            return False
        if not all(d.idle() for d in self.dirs):
            return False
        if self.control is not None and not self.control.idle():
            return False
        return all(h.idle() for h in self.hubs)

    def finalize_trace(self) -> None:
        self.settle()
        tr = self.tracer
        for d in self.dirs:
            for line, (state, sharers, owner) in d.snapshot().items():
                tr.log("dir_final", line, state, tuple(sorted(sharers)), owner)
        for c in self.caches():
            for line, state in c.snapshot().items():
                tr.log("cache_final", c.name, line, state)
