"""Accelerator descriptors and the common accelerator scaffolding."""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass

from ..adapter import SoftCacheConfig

MHZ = 1_000_000


@dataclass(frozen=True)
class AcceleratorDescriptor:
    name: str
    max_freq_hz: int
    norm_area: float  # eFPGA area normalized to one processor + cache socket
    ii: int  # pipeline initiation interval, FPGA cycles
    uses_soft_cache: bool
    num_memory_hubs: int
    register_map: tuple[tuple[int, str], ...]


DESCRIPTORS: dict[str, AcceleratorDescriptor] = {
    d.name: d
    for d in (
        AcceleratorDescriptor("tangent", 282 * MHZ, 0.47, 1, False, 0, ((1, "fpga_bound_fifo"), (2, "cpu_bound_fifo"))),
        AcceleratorDescriptor("popcount", 189 * MHZ, 2.77, 1, False, 1, ((1, "fpga_bound_fifo"), (2, "cpu_bound_fifo"))),
        AcceleratorDescriptor("sort32", 228 * MHZ, 6.29, 1, False, 2, ((1, "plain"), (2, "plain"), (3, "fpga_bound_fifo"), (4, "cpu_bound_fifo"))),
        AcceleratorDescriptor("sort64", 234 * MHZ, 8.10, 1, False, 2, ((1, "plain"), (2, "plain"), (3, "fpga_bound_fifo"), (4, "cpu_bound_fifo"))),
        AcceleratorDescriptor("sort128", 228 * MHZ, 10.27, 1, False, 2, ((1, "plain"), (2, "plain"), (3, "fpga_bound_fifo"), (4, "cpu_bound_fifo"))),
        AcceleratorDescriptor("dijkstra", 127 * MHZ, 1.94, 1, True, 1, ((1, "fpga_bound_fifo"), (2, "cpu_bound_fifo"))),
        AcceleratorDescriptor(
            "barnes_hut", 85 * MHZ, 14.22, 4, False, 1,
            ((1, "fpga_bound_fifo"), (8, "cpu_bound_fifo"), (9, "cpu_bound_fifo"), (10, "cpu_bound_fifo"), (11, "cpu_bound_fifo")),
        ),
        AcceleratorDescriptor("pdes", 126 * MHZ, 2.77, 1, False, 1, ((1, "fpga_bound_fifo"), (2, "cpu_bound_fifo"), (3, "normal"))),
        AcceleratorDescriptor("bfs", 208 * MHZ, 1.24, 1, False, 0, ((1, "fpga_bound_fifo"), (2, "token_fifo"), (3, "cpu_bound_fifo"), (4, "normal"), (5, "normal"))),
    )
}


def descriptor(name: str) -> AcceleratorDescriptor:
    try:
        return DESCRIPTORS[name]
    except KeyError:
        raise ValueError(f"unknown accelerator {name!r}; known: {sorted(DESCRIPTORS)}") from None


def f64_bits(x: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", x))[0]


def bits_f64(b: int) -> float:
    return struct.unpack("<d", struct.pack("<Q", b & 0xFFFF_FFFF_FFFF_FFFF))[0]


class Accelerator:
    """Base class: registers, inbound command queues and FPGA-domain processes.

    Subclasses implement :meth:`run` (a generator started as a daemon FPGA
    process) and consume register writes with ``yield from self.next_cmd()``.
    """

    name = ""

    def __init__(self, platform, strict_frequency: bool = True, soft_cache: SoftCacheConfig | None = None):
        self.desc = descriptor(self.name)
        self.platform = platform
        if platform.adapter is None:
            raise ValueError(f"{self.name} needs a platform with an adapter")
        if len(platform.hubs) < self.desc.num_memory_hubs:
            raise ValueError(f"{self.name} needs {self.desc.num_memory_hubs} Memory Hub(s), instance has {len(platform.hubs)}")
        if strict_frequency and platform.fpga.frequency_hz > self.desc.max_freq_hz:
            raise ValueError(f"{self.name} closes timing at {self.desc.max_freq_hz / MHZ:.0f} MHz, configured {platform.fpga.frequency_hz / MHZ:.0f} MHz")
        self.engine = platform.engine
        self.fpga = platform.fpga
        self.control = platform.control
        self.regs = self.control.regs
        for reg, kind in self.desc.register_map:
            self.control.declare(reg, kind)
        self.regs.handler = self
        sc = None
        if self.desc.uses_soft_cache and platform.cfg.mode == "duet":
            # in the FPSoC model the hardened FPGA-side cache replaces the soft cache
            sc = soft_cache or SoftCacheConfig()
        self.ports = [platform.port(i, sc) for i in range(self.desc.num_memory_hubs)]
        self._cmds: deque = deque()
        self._cmd_wait = None
        self.values: dict[int, int] = {}

    # register handler interface -------------------------------------------------
    def register_write(self, reg: int, value: int) -> None:
        self._cmds.append((reg, value))
        if self._cmd_wait is not None:
            sig, self._cmd_wait = self._cmd_wait, None
            sig.fire(None)

    def register_read(self, reg: int):
        return self.values.get(reg, 0)

    def next_cmd(self):
        """``reg, value = yield from self.next_cmd()``."""
        while not self._cmds:
            self._cmd_wait = self.engine.signal(f"{self.name}.cmd")
            yield self._cmd_wait
        return self._cmds.popleft()

    def start(self) -> None:
        self.engine.process(self.run(), self.fpga, f"accel.{self.name}", daemon=True)

    def run(self):  # pragma: no cover - abstract
        raise NotImplementedError
        yield
