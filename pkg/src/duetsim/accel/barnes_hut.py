"""Barnes-Hut octree, reference force evaluation and the force-kernel accelerator."""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from ..simkernel import Pipeline, wait_all
from .base import Accelerator, f64_bits
from .kernels import pair_forces
from .streaming import InOrderRetire

THRESHOLD = 3.0
LEAF_SIZE = 4
MAX_DEPTH = 20
NODE_BYTES = 32  # two lines: (com xyz, mass) and (radius, first, count, is_leaf)
PARTICLE_BYTES = 16  # (x, y, z, mass) as float32

CALC, APPROX, FLUSH, DONE = 0, 1, 2, 3


@dataclass
class Node:
    com: np.ndarray  # float32[3]
    mass: np.float32
    radius: np.float32
    first: int  # first child node, or first particle for leaves
    count: int
    leaf: bool


def build_octree(pos: np.ndarray, mass: np.ndarray, leaf_size: int = LEAF_SIZE):
    """Build an octree in breadth-first order with contiguous children.

    Returns ``(nodes, order)`` where ``order`` permutes the input particles so
    that every leaf owns a contiguous range.
    """
    pos = np.asarray(pos, dtype=np.float64)
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    center = (lo + hi) / 2
    half = float(max((hi - lo).max() / 2, 1e-9)) * 1.0001

    # recursive subdivision into (center, half, members, children)
    def split(members, c, h, depth):
        if len(members) <= leaf_size or depth >= MAX_DEPTH:
            return (c, h, members, None)
        octant = ((pos[members] >= c) * np.array([1, 2, 4])).sum(axis=1)
        kids = []
        for o in range(8):
            sub = members[octant == o]
            if len(sub):
                off = np.array([(o >> k) & 1 for k in range(3)]) * 2 - 1
                kids.append(split(sub, c + off * h / 2, h / 2, depth + 1))
        return (c, h, members, kids)

    root = split(np.arange(len(pos)), center, half, 0)
    nodes: list[Node] = []
    order: list[int] = []
    queue = [root]
    raw = []
    while queue:  # breadth-first flatten
        nxt = []
        for cell in queue:
            raw.append(cell)
            if cell[3] is not None:
                nxt.extend(cell[3])
        queue = nxt
    index = {id(cell): i for i, cell in enumerate(raw)}
    for cell in raw:
        c, h, members, kids = cell
        m = mass[members].astype(np.float64)
        com = (pos[members] * m[:, None]).sum(axis=0) / m.sum()
        if kids is None:
            first = len(order)
            order.extend(int(i) for i in members)
            nodes.append(Node(com.astype(np.float32), np.float32(m.sum()), np.float32(h), first, len(members), True))
        else:
            nodes.append(Node(com.astype(np.float32), np.float32(m.sum()), np.float32(h), index[id(kids[0])], len(kids), False))
    return nodes, np.array(order)


def node_bytes(n: Node) -> bytes:
    return struct.pack("<4f", *n.com, n.mass) + struct.pack("<fIII", n.radius, n.first, n.count, int(n.leaf))


def particle_bytes(p: np.ndarray, m: float) -> bytes:
    return struct.pack("<4f", *p, m)


def far_enough(node_com, p, radius, threshold: float = THRESHOLD) -> bool:
    d = np.asarray(node_com, dtype=np.float64) - np.asarray(p, dtype=np.float64)
    return float(np.sqrt(d @ d)) > float(radius) * threshold


def interactions(nodes: list[Node], pos: np.ndarray, p: int, threshold: float = THRESHOLD):
    """Work items ``(kind, index)`` for particle ``p`` in traversal order."""
    out = []
    stack = [0]
    while stack:
        i = stack.pop()
        n = nodes[i]
        if far_enough(n.com, pos[p], n.radius, threshold):
            out.append((APPROX, i))
        elif n.leaf:
            out.extend((CALC, q) for q in range(n.first, n.first + n.count))
        else:
            stack.extend(reversed(range(n.first, n.first + n.count)))
    return out


def reference_forces(nodes, pos: np.ndarray, mass: np.ndarray, threshold: float = THRESHOLD) -> np.ndarray:
    """Same-criterion evaluation; ``pos``/``mass`` are in tree (leaf) order."""
    forces = np.zeros((len(pos), 3))
    for p in range(len(pos)):
        items = interactions(nodes, pos, p, threshold)
        src = np.array([nodes[i].com if k == APPROX else pos[i] for k, i in items], dtype=np.float64)
        m = np.array([nodes[i].mass if k == APPROX else mass[i] for k, i in items], dtype=np.float64)
        f = pair_forces(np.repeat(pos[p][None, :].astype(np.float64), len(items), axis=0), src, m)
        forces[p] = f.sum(axis=0)
    return forces


def direct_forces(pos: np.ndarray, mass: np.ndarray) -> np.ndarray:
    """Exact all-pairs forces (the approximation's sanity bound)."""
    n = len(pos)
    t = np.repeat(pos.astype(np.float64), n, axis=0)
    s = np.tile(pos.astype(np.float64), (n, 1))
    m = np.tile(mass.astype(np.float64), n)
    return pair_forces(t, s, m).reshape(n, n, 3).sum(axis=1)


def encode(kind: int, p: int = 0, idx: int = 0) -> int:
    return (kind << 62) | (p << 32) | idx


def decode(v: int) -> tuple[int, int, int]:
    return v >> 62, (v >> 32) & 0xFFFF, v & 0xFFFF_FFFF


class BarnesHutAccel(Accelerator):
    """CalcForce and ApproxForce pipelines fed by one shared work FIFO (reg 1).

    Work items name a target particle and a source (particle or node).  Both
    records are read through the Memory Hub; contributions accumulate on chip.
    ``FLUSH p`` writes particle ``p``'s force to ``force + 24 * p`` and
    ``DONE c`` answers on cpu-bound register ``8 + c`` once stores are acked.
    """

    name = "barnes_hut"
    WORK = 1
    DONE_BASE = 8
    LATENCY = 24  # subtract, square-sum, rsqrt, multiply, accumulate stages
    REPLICAS = {CALC: 2, APPROX: 4}

    def __init__(self, platform, nodes_addr: int, particles_addr: int, force_addr: int, strict_frequency: bool = True, replicas=None):
        super().__init__(platform, strict_frequency)
        self.nodes_addr = nodes_addr
        self.particles_addr = particles_addr
        self.force_addr = force_addr
        ii = self.desc.ii
        reps = replicas or self.REPLICAS
        self.pipes = {k: [Pipeline(self.engine, self.fpga, self.LATENCY, ii) for _ in range(reps[k])] for k in (CALC, APPROX)}
        self.acc: dict[int, np.ndarray] = {}
        self.targets: dict = {}  # on-chip target records, one per particle in flight
        self.retire = InOrderRetire()
        self._last_edge = 0
        self._out: deque = deque()
        self._out_wait = None
        self.stats = {"bh.calc": 0, "bh.approx": 0, "bh.loads": 0}

    def start(self) -> None:
        super().start()
        self.engine.process(self._writer(), self.fpga, "accel.barnes_hut.writer", daemon=True)

    def run(self):
        port = self.ports[0]
        while True:
            _, v = yield from self.next_cmd()
            kind, p, idx = decode(v)
            if kind in (CALC, APPROX):
                tgt = self.targets.get(p)
                if tgt is None:
                    tgt = self.targets[p] = port.issue_load(self.particles_addr + PARTICLE_BYTES * p)
                    self.stats["bh.loads"] += 1
                base = self.particles_addr + PARTICLE_BYTES * idx if kind == CALC else self.nodes_addr + NODE_BYTES * idx
                self.stats["bh.loads"] += 1
                sigs = [tgt, port.issue_load(base)]
                self.retire.add(wait_all(self.engine, sigs), lambda data, k=kind, p=p: self._compute(k, p, data))
                yield 1
            else:
                if kind == FLUSH:
                    self.targets.pop(p, None)
                sig = self.engine.signal("bh.mark")
                sig.fire(None)
                self.retire.add(sig, lambda _d, k=kind, p=p, i=idx: self._mark(k, p, i))

    def _compute(self, kind: int, p: int, data) -> None:
        tgt = np.frombuffer(bytes(data[0]), dtype=np.float32)
        src = np.frombuffer(bytes(data[1]), dtype=np.float32)
        f = pair_forces(tgt[None, :3], src[None, :3], src[3:4])[0]
        self.stats["bh.calc" if kind == CALC else "bh.approx"] += 1
        now = self.fpga.edge_at_or_after(self.engine.now)
        pipe = min(self.pipes[kind], key=lambda pp: max(pp._free, now))
        done = pipe.accept(self._accumulate, p, f)
        self._last_edge = max(self._last_edge, done)

    def _accumulate(self, p: int, f: np.ndarray) -> None:
        acc = self.acc.get(p)
        self.acc[p] = f.copy() if acc is None else acc + f

    def _mark(self, kind: int, p: int, idx: int) -> None:
        # after every earlier contribution has left the pipelines
        at = max(self._last_edge, self.fpga.edge_at_or_after(self.engine.now)) + 1
        self.engine.at_edge(self.fpga, at, self._enqueue, (kind, p, idx))

    def _enqueue(self, item) -> None:
        self._out.append(item)
        if self._out_wait is not None:
            sig, self._out_wait = self._out_wait, None
            sig.fire(None)

    def _writer(self):
        port = self.ports[0]
        while True:
            while not self._out:
                self._out_wait = self.engine.signal("bh.out")
                yield self._out_wait
            kind, p, idx = self._out.popleft()
            if kind == FLUSH:
                f = self.acc.pop(p, np.zeros(3))
                for k in range(3):
                    yield from port.store(self.force_addr + 24 * p + 8 * k, 8, f64_bits(float(f[k])))
                    yield 1
            else:
                yield from port.fence()
                self.regs.push_cpu(self.DONE_BASE + idx, 1)
