"""Parallel discrete-event simulation of a unit-delay gate-level circuit."""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass

from ..accel.pdes import END, PdesAccel
from .bench import Benchmark, Layout, read_words, write_words
from .streaming import CMP_BRANCH, LOOP
from .sync import McsLock

INPUT, AND, OR, XOR, NAND, NOR = range(6)
GATE_FNS = {
    AND: lambda a, b: a & b,
    OR: lambda a, b: a | b,
    XOR: lambda a, b: a ^ b,
    NAND: lambda a, b: 1 - (a & b),
    NOR: lambda a, b: 1 - (a | b),
}
EVAL_CYCLES = 6  # decode, select the value at t-1 for two inputs, apply the gate
BACKOFF = 20
INF_T = 0xFFFF_FFFF


@dataclass
class Circuit:
    kinds: list[int]
    inputs: list[tuple[int, int]]
    fanout: list[list[int]]
    stimuli: dict[int, list[int]]  # primary input -> value at each time step
    horizon: int

    @property
    def n(self) -> int:
        return len(self.kinds)


def random_circuit(n_inputs: int = 6, n_gates: int = 24, steps: int = 6, seed: int = 7) -> Circuit:
    """Combinational DAG: every gate reads two earlier signals."""
    rng = random.Random(seed)
    kinds = [INPUT] * n_inputs
    inputs = [(0, 0)] * n_inputs
    for g in range(n_inputs, n_inputs + n_gates):
        kinds.append(rng.choice([AND, OR, XOR, NAND, NOR]))
        inputs.append((rng.randrange(g), rng.randrange(g)))
    fanout = [[] for _ in kinds]
    for g, (a, b) in enumerate(inputs):
        if kinds[g] != INPUT:
            fanout[a].append(g)
            if b != a:
                fanout[b].append(g)
    stimuli = {i: [0] + [rng.randrange(2) for _ in range(steps)] for i in range(n_inputs)}
    return Circuit(kinds, inputs, fanout, stimuli, steps)


def steady_state(c: Circuit) -> list[int]:
    """Signal values with every primary input at its time-0 value."""
    v = [0] * c.n
    for g in range(c.n):  # gates only read earlier signals
        if c.kinds[g] == INPUT:
            v[g] = c.stimuli[g][0]
        else:
            a, b = c.inputs[g]
            v[g] = GATE_FNS[c.kinds[g]](v[a], v[b])
    return v


def initial_events(c: Circuit) -> list[tuple[int, int]]:
    ev = []
    for pi, seq in c.stimuli.items():
        for t in range(1, len(seq)):
            if seq[t] != seq[t - 1]:
                ev.append((t, pi))
    return sorted(ev)


def time_stepped(c: Circuit) -> list[int]:
    """Independent oracle: advance every signal one unit delay per step until stable."""
    v = steady_state(c)
    t = 0
    while True:
        t += 1
        nv = []
        for g in range(c.n):
            if c.kinds[g] == INPUT:
                seq = c.stimuli[g]
                nv.append(seq[min(t, len(seq) - 1)])
            else:
                a, b = c.inputs[g]
                nv.append(GATE_FNS[c.kinds[g]](v[a], v[b]))
        if nv == v and t >= c.horizon:
            return v
        v = nv


def sequential_event_driven(c: Circuit) -> list[int]:
    """Sequential event-driven reference with the same unit-delay semantics."""
    cur = steady_state(c)
    hist = {g: [(0, cur[g])] for g in range(c.n)}  # gate -> [(time, value)]

    def value_at(g, t):
        val = hist[g][0][1]
        for tt, vv in hist[g]:
            if tt <= t:
                val = vv
        return val

    heap = list(initial_events(c))
    heapq.heapify(heap)
    seen = set(heap)
    while heap:
        t, g = heapq.heappop(heap)
        if c.kinds[g] == INPUT:
            new = c.stimuli[g][t]
        else:
            a, b = c.inputs[g]
            new = GATE_FNS[c.kinds[g]](value_at(a, t - 1), value_at(b, t - 1))
        if new != cur[g]:
            cur[g] = new
            hist[g].append((t, new))
            for f in c.fanout[g]:
                if (t + 1, f) not in seen:
                    seen.add((t + 1, f))
                    heapq.heappush(heap, (t + 1, f))
    return cur


def pack_signal(cur: int, prev: int, t: int) -> int:
    return cur | (prev << 1) | (t << 32)


def signal_at(word: int, t: int) -> int:
    """Value of a packed signal word as of time ``t``."""
    return word & 1 if (word >> 32) <= t else (word >> 1) & 1


class Pdes(Benchmark):
    name = "pdes"
    accel = "pdes"
    n_hubs = 1

    def __init__(self, n_processors: int = 4, circuit: Circuit | None = None, seed: int = 7):
        self.n_processors = n_processors
        self.name = f"pdes_p{n_processors}"
        self.circuit = circuit or random_circuit(seed=seed)

    def prepare(self, plat):
        c = self.circuit
        lay = Layout()
        self.sig = lay.alloc(8 * c.n)
        self.desc = lay.alloc(16 * c.n)
        fan = [f for fl in c.fanout for f in fl]
        self.fan = lay.alloc(4 * max(1, len(fan)))
        self.stim_len = c.horizon + 1
        self.stim = lay.alloc(c.n * self.stim_len)
        self.lock = McsLock(lay, self.n_processors)
        self.heap_size = lay.alloc(8)
        self.inprog = lay.alloc(16 * self.n_processors)
        self.last = lay.alloc(8 * c.n)
        cap = c.n * (c.horizon + 4) + 64
        self.heap = lay.alloc(8 * cap)
        # per-processor event-record pools
        self.pool_words = cap
        self.pools = [lay.alloc(8 * cap, align=64) for _ in range(self.n_processors)]
        self.init_pool = lay.alloc(8 * cap, align=64)
        self.pool_next = [0] * self.n_processors

        write_words(plat, self.sig, [pack_signal(v, v, 0) for v in steady_state(c)])
        off = 0
        descs = []
        for g in range(c.n):
            a, b = c.inputs[g]
            descs += [c.kinds[g] | (a << 8) | (b << 32), off | (len(c.fanout[g]) << 32)]
            off += len(c.fanout[g])
        write_words(plat, self.desc, descs)
        write_words(plat, self.fan, fan, size=4)
        for pi, seq in c.stimuli.items():
            for t, v in enumerate(seq):
                plat.init_memory(self.stim + pi * self.stim_len + t, 1, v)
        write_words(plat, self.inprog, [INF_T] * (2 * self.n_processors))
        ev = initial_events(c)
        self.initial = []
        for k, (t, g) in enumerate(ev):
            ptr = self.init_pool + 8 * k
            plat.init_memory(ptr, 8, (t << 32) | g)
            self.initial.append((t, g, ptr))
        # baseline heap starts sorted (a valid min-heap)
        write_words(plat, self.heap, [(t << 32) | g for t, g in ev])
        plat.init_memory(self.heap_size, 8, len(ev))
        for t, g in ev:
            plat.init_memory(self.last + 8 * g, 8, t)

    def warmup(self, plat, cpu):
        for a in range(self.desc, self.stim + self.circuit.n * self.stim_len, 8):
            yield from cpu.load(a)

    def make_accel(self, plat, strict_frequency):
        return PdesAccel(plat, self.n_processors, self.initial, strict_frequency)

    # -- gate evaluation shared by both variants --------------------------------------
    def _evaluate(self, cpu, t, g, schedule):
        d0 = yield from cpu.load(self.desc + 16 * g)
        d1 = yield from cpu.load(self.desc + 16 * g + 8)
        kind, a, b = d0 & 0xFF, (d0 >> 8) & 0xFFFF_FF, d0 >> 32
        word = yield from cpu.load(self.sig + 8 * g)
        cur = word & 1
        if kind == INPUT:
            new = yield from cpu.load(self.stim + g * self.stim_len + t, 1)
        else:
            wa = yield from cpu.load(self.sig + 8 * a)
            wb = yield from cpu.load(self.sig + 8 * b)
            new = GATE_FNS[kind](signal_at(wa, t - 1), signal_at(wb, t - 1))
        yield from cpu.compute(EVAL_CYCLES)
        if new == cur:
            return
        yield from cpu.store(self.sig + 8 * g, 8, pack_signal(new, cur, t))
        off, cnt = d1 & 0xFFFF_FFFF, d1 >> 32
        for k in range(cnt):
            f = yield from cpu.load(self.fan + 4 * (off + k), 4)
            yield from schedule(t + 1, f)

    # -- processor-only: shared heap under an MCS lock ---------------------------------------
    def _heap_push(self, cpu, key):
        n = yield from cpu.load(self.heap_size)
        yield from cpu.store(self.heap_size, 8, n + 1)
        i = n
        while i > 0:
            parent = (i - 1) // 2
            pk = yield from cpu.load(self.heap + 8 * parent)
            yield from cpu.compute(CMP_BRANCH)
            if pk <= key:
                break
            yield from cpu.store(self.heap + 8 * i, 8, pk)
            i = parent
        yield from cpu.store(self.heap + 8 * i, 8, key)

    def _heap_pop(self, cpu, n):
        top = yield from cpu.load(self.heap)
        last = yield from cpu.load(self.heap + 8 * (n - 1))
        n -= 1
        yield from cpu.store(self.heap_size, 8, n)
        i = 0
        while True:
            l, r = 2 * i + 1, 2 * i + 2
            if l >= n:
                break
            c = l
            ck = yield from cpu.load(self.heap + 8 * l)
            if r < n:
                rk = yield from cpu.load(self.heap + 8 * r)
                if rk < ck:
                    c, ck = r, rk
            yield from cpu.compute(CMP_BRANCH)
            if ck >= last:
                break
            yield from cpu.store(self.heap + 8 * i, 8, ck)
            i = c
        if n:
            yield from cpu.store(self.heap + 8 * i, 8, last)
        return top

    def _baseline(self, cpu):
        lock = self.lock
        me = self.inprog + 16 * cpu.index

        def schedule(t, g):  # called with the lock released
            yield from lock.acquire(cpu)
            prev = yield from cpu.load(self.last + 8 * g)
            if prev != t:
                yield from cpu.store(self.last + 8 * g, 8, t)
                yield from self._heap_push(cpu, (t << 32) | g)
            yield from lock.release(cpu)

        while True:
            yield from lock.acquire(cpu)
            n = yield from cpu.load(self.heap_size)
            busy = INF_T
            for c in range(self.n_processors):
                if c != cpu.index:
                    busy = min(busy, (yield from cpu.load(self.inprog + 16 * c)))
            if n == 0:
                yield from lock.release(cpu)
                if busy == INF_T:
                    return
                yield from cpu.compute(BACKOFF)
                continue
            top = yield from cpu.load(self.heap)
            t = top >> 32
            if t > busy:
                yield from lock.release(cpu)
                yield from cpu.compute(BACKOFF)
                continue
            key = yield from self._heap_pop(cpu, n)
            yield from cpu.store(me, 8, t)
            yield from lock.release(cpu)
            yield from self._evaluate(cpu, t, key & 0xFFFF_FFFF, schedule)
            yield from cpu.store(me, 8, INF_T)
            yield from cpu.compute(LOOP)

    # -- offloaded scheduler ------------------------------------------------------------------
    def _offload(self, cpu):
        pool = self.pools[cpu.index]

        def schedule(t, g):
            k = self.pool_next[cpu.index]
            self.pool_next[cpu.index] = k + 1
            ptr = pool + 8 * k
            yield from cpu.store(ptr, 8, (t << 32) | g)
            yield from cpu.mmio_write(PdesAccel.CMD, ptr)

        while True:
            ptr = yield from cpu.pop(PdesAccel.NEXT)
            if ptr == END or cpu.last_status != "ok":
                return
            rec = yield from cpu.load(ptr)
            yield from self._evaluate(cpu, rec >> 32, rec & 0xFFFF_FFFF, schedule)
            yield from cpu.mmio_write(PdesAccel.CMD, ptr | PdesAccel.DONE_FLAG)
            yield from cpu.compute(LOOP)

    def program(self, plat, cpu, mode):
        if mode == "processor_only":
            return self._baseline(cpu)
        return self._offload(cpu)

    def final_state(self, plat) -> list[int]:
        return [w & 1 for w in read_words(plat, self.sig, self.circuit.n)]

    def verify(self, plat):
        got = self.final_state(plat)
        ok = got == time_stepped(self.circuit)
        return ok, "" if ok else "final signal values differ from the time-stepped oracle"

    def outputs(self, plat):
        return self.final_state(plat)
