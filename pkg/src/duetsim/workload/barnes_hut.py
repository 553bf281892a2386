"""Barnes-Hut force step: four processors traverse, force kernels are offloaded."""

from __future__ import annotations

import struct

import numpy as np

from ..accel.barnes_hut import (
    APPROX,
    CALC,
    DONE,
    FLUSH,
    NODE_BYTES,
    PARTICLE_BYTES,
    THRESHOLD,
    BarnesHutAccel,
    build_octree,
    encode,
    node_bytes,
    particle_bytes,
    reference_forces,
)
from ..accel.base import bits_f64, f64_bits
from ..accel.kernels import pair_forces
from .bench import Benchmark, Layout, read_words
from .streaming import LOOP

DIST_CYCLES = 40  # 3 sub, 3 fused multiply-adds, a sqrt and the compare (dependent FP chain)
FORCE_CYCLES = 90  # sub/square-sum, softening, sqrt, divide, scale and 3 accumulates
STORE_BURST = 8


class BarnesHut(Benchmark):
    name = "barnes_hut"
    accel = "barnes_hut"
    n_processors = 4
    n_hubs = 1

    def __init__(self, n: int = 64, seed: int = 5, threshold: float = THRESHOLD):
        rng = np.random.default_rng(seed)
        pos = rng.random((n, 3)).astype(np.float32)
        mass = rng.uniform(0.5, 1.5, n).astype(np.float32)
        self.nodes, order = build_octree(pos, mass)
        self.pos = pos[order]
        self.mass = mass[order]
        self.n = n
        self.threshold = threshold

    def prepare(self, plat):
        lay = Layout()
        self.nodes_addr = lay.alloc(NODE_BYTES * len(self.nodes), align=32)
        self.particles_addr = lay.alloc(PARTICLE_BYTES * self.n)
        self.force_addr = lay.alloc(24 * self.n)
        for i, nd in enumerate(self.nodes):
            self._write(plat, self.nodes_addr + NODE_BYTES * i, node_bytes(nd))
        for i in range(self.n):
            self._write(plat, self.particles_addr + PARTICLE_BYTES * i, particle_bytes(self.pos[i], self.mass[i]))

    @staticmethod
    def _write(plat, addr, raw):
        for off in range(0, len(raw), 8):
            plat.init_memory(addr + off, 8, int.from_bytes(raw[off : off + 8], "little"))

    def mine(self, cpu):
        return range(cpu.index, self.n, self.n_processors)

    def warmup(self, plat, cpu):
        for a in range(self.nodes_addr, self.force_addr, 8):
            yield from cpu.load(a)

    def make_accel(self, plat, strict_frequency):
        return BarnesHutAccel(plat, self.nodes_addr, self.particles_addr, self.force_addr, strict_frequency)

    def _record(self, cpu, addr):
        a = yield from cpu.load(addr)
        b = yield from cpu.load(addr + 8)
        return struct.unpack("<4f", a.to_bytes(8, "little") + b.to_bytes(8, "little"))

    def _traverse(self, cpu, p, offload):
        px, py, pz, _ = yield from self._record(cpu, self.particles_addr + PARTICLE_BYTES * p)
        ppos = np.array([px, py, pz], dtype=np.float64)
        force = np.zeros(3)
        stack = [0]
        while stack:
            i = stack.pop()
            base = self.nodes_addr + NODE_BYTES * i
            cx, cy, cz, m = yield from self._record(cpu, base)
            w = yield from cpu.load(base + 16)
            w2 = yield from cpu.load(base + 24)
            radius = struct.unpack("<f", (w & 0xFFFF_FFFF).to_bytes(4, "little"))[0]
            first, count, leaf = w >> 32, w2 & 0xFFFF_FFFF, w2 >> 32
            yield from cpu.compute(DIST_CYCLES)
            d = np.array([cx, cy, cz], dtype=np.float64) - ppos
            if float(np.sqrt(d @ d)) > float(np.float32(radius)) * self.threshold:
                if offload:
                    yield from cpu.mmio_write(BarnesHutAccel.WORK, encode(APPROX, p, i))
                else:
                    yield from cpu.compute(FORCE_CYCLES)
                    force += pair_forces(ppos, np.array([cx, cy, cz]), np.array([m]))[0]
            elif leaf:
                for q in range(first, first + count):
                    if offload:
                        yield from cpu.mmio_write(BarnesHutAccel.WORK, encode(CALC, p, q))
                    else:
                        qx, qy, qz, qm = yield from self._record(cpu, self.particles_addr + PARTICLE_BYTES * q)
                        yield from cpu.compute(FORCE_CYCLES)
                        force += pair_forces(ppos, np.array([qx, qy, qz]), np.array([qm]))[0]
            else:
                stack.extend(reversed(range(first, first + count)))
            yield from cpu.compute(LOOP)
        return force

    def program(self, plat, cpu, mode):
        offload = mode != "processor_only"
        for p in self.mine(cpu):
            f = yield from self._traverse(cpu, p, offload)
            if offload:
                yield from cpu.mmio_write(BarnesHutAccel.WORK, encode(FLUSH, p))
            else:
                for k in range(3):
                    yield from cpu.store(self.force_addr + 24 * p + 8 * k, 8, f64_bits(float(f[k])))
        if offload:
            yield from cpu.mmio_write(BarnesHutAccel.WORK, encode(DONE, 0, cpu.index))
            yield from cpu.pop(BarnesHutAccel.DONE_BASE + cpu.index)
            # consume the forces of this processor's particles
            for p in self.mine(cpu):
                for k in range(3):
                    yield from cpu.load(self.force_addr + 24 * p + 8 * k)

    def forces(self, plat) -> np.ndarray:
        words = read_words(plat, self.force_addr, 3 * self.n)
        return np.array([bits_f64(w) for w in words]).reshape(self.n, 3)

    def verify(self, plat):
        got = self.forces(plat)
        want = reference_forces(self.nodes, self.pos, self.mass, self.threshold)
        err = np.linalg.norm(got - want, axis=1) / np.maximum(np.linalg.norm(want, axis=1), 1e-300)
        ok = bool((err <= 1e-6).all())
        return ok, "" if ok else f"max relative force error {err.max():.3g}"

    def outputs(self, plat):
        # accumulation order differs between software and the pipeline, so
        # forces are compared at nine significant digits
        return [f"{v:.8e}" for v in self.forces(plat).reshape(-1)]
