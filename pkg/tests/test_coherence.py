import itertools
import random

import pytest

from duetsim.checker import check_trace
from duetsim.coherence import AlignmentError, CacheConfig, addr_to_shard

from helpers import MiniSystem

A = 0x1000


class AtomicMesi:
    """Textbook MESI with atomic transitions: the independent oracle."""

    def __init__(self, n=2, init=0):
        self.st = ["I"] * n
        self.value = init

    def op(self, i, op, arg=None, expect=None):
        others = [j for j in range(len(self.st)) if j != i]
        if op == "load":
            if self.st[i] == "I":
                if any(self.st[j] in "ME" for j in others):
                    for j in others:
                        if self.st[j] in "ME":
                            self.st[j] = "S"
                    self.st[i] = "S"
                elif any(self.st[j] == "S" for j in others):
                    self.st[i] = "S"
                else:
                    self.st[i] = "E"
            return self.value
        for j in others:
            self.st[j] = "I"
        self.st[i] = "M"
        old = self.value
        if op == "store":
            self.value = arg
            return None
        if op == "fetch_add":
            self.value = (old + arg) & (2**64 - 1)
            return old
        if op == "cas":
            if old == expect:
                self.value = arg
            return old
        raise ValueError(op)


OPS = [("load", None, None), ("store", 7, None), ("fetch_add", 1, None), ("cas", 9, 7)]


def _run_sequence(seq):
    sysm = MiniSystem(2)
    sysm.init(A, 8, 0)
    oracle = AtomicMesi(2)
    for cache, (op, arg, exp) in seq:
        got = sysm.do(cache, op, A, 8, value=arg, expect=exp)
        want = oracle.op(cache, op, arg, exp)
        assert got == want, (seq, cache, op)
        snap = [c.snapshot().get(A, "I") for c in sysm.caches]
        assert snap == oracle.st, (seq, snap, oracle.st)
    sysm.finalize()
    assert check_trace(sysm.tracer.events) == []


def test_exhaustive_two_cache_depth3():
    moves = [(c, o) for c in range(2) for o in OPS]
    for seq in itertools.product(moves, repeat=3):
        _run_sequence(seq)


def test_exhaustive_load_store_depth5():
    moves = [(c, o) for c in range(2) for o in OPS[:2]]
    for seq in itertools.product(moves, repeat=5):
        _run_sequence(seq)


def test_load_invalid_line_filled_exclusive():
    s = MiniSystem(2)
    s.init(A, 8, 0x55)
    assert s.do(0, "load", A) == 0x55
    assert s.caches[0].snapshot()[A] == "E"


def test_store_invalidates_sharers():
    s = MiniSystem(3)
    s.do(0, "load", A)
    s.do(1, "load", A)
    inv_before = sum(d.stats["invs"] for d in s.dirs)
    s.do(2, "store", A, value=3)
    assert sum(d.stats["invs"] for d in s.dirs) - inv_before == 2
    assert [c.snapshot().get(A, "I") for c in s.caches] == ["I", "I", "M"]


def test_read_miss_on_modified_downgrades_owner():
    s = MiniSystem(2)
    s.do(0, "store", A, value=42)
    assert s.do(1, "load", A) == 42
    assert [c.snapshot().get(A) for c in s.caches] == ["S", "S"]
    home = s.dirs[addr_to_shard(A, 16, 4)]
    assert home.entries[A].state == "S"
    assert s.memory.read(A, 8) == 42  # written back on downgrade


def test_cas_exactly_one_winner():
    s = MiniSystem(2)
    box = []
    s.caches[0].access("cas", A, 8, box.append, value=1, expect=0)
    s.caches[1].access("cas", A, 8, box.append, value=1, expect=0)
    s.engine.run_until(lambda: len(box) == 2 and s.quiet())
    assert sorted(box) == [0, 1]  # one saw 0 (won), the other saw 1
    s.finalize()
    assert check_trace(s.tracer.events) == []


def test_misaligned_rejected():
    s = MiniSystem(1)
    with pytest.raises(AlignmentError):
        s.caches[0].access("load", A + 3, 8, lambda v: None)
    with pytest.raises(AlignmentError):
        s.caches[0].access("store", A, 16, lambda v: None, value=0)


def test_addr_to_shard():
    assert addr_to_shard(0, 16, 4) == 0
    assert addr_to_shard(16, 16, 4) == 1
    rng = random.Random(3)
    hist = [0] * 4
    for _ in range(100_000):
        hist[addr_to_shard(rng.randrange(0, 1 << 30) & ~7, 16, 4)] += 1
    assert max(abs(h - 25_000) for h in hist) < 0.05 * 25_000


def test_eviction_writes_back_modified_line():
    cfg = CacheConfig(l2_bytes=64, associativity=1)  # 4 sets, direct mapped
    s = MiniSystem(1, cfg=cfg)
    s.do(0, "store", A, value=0xAB)
    s.do(0, "load", A + 64)  # same set -> evicts A
    s.settle()
    assert s.memory.read(A, 8) == 0xAB
    assert A not in s.caches[0].snapshot()
    assert s.do(0, "load", A) == 0xAB


def test_random_concurrent_stress_invariants():
    cfg = CacheConfig(l2_bytes=128, associativity=2)
    s = MiniSystem(4, cfg=cfg)
    rng = random.Random(11)
    addrs = [0x2000 + 8 * i for i in range(24)]
    for a in addrs:
        s.init(a, 8, 0)
    done = [0]

    def agent(i):
        for _ in range(150):
            a = rng.choice(addrs)
            op = rng.choice(["load", "load", "store", "fetch_add", "cas"])
            sig = s.engine.signal()
            s.caches[i].access(op, a, 8, sig.fire, value=rng.randrange(100), expect=rng.randrange(3))
            yield sig
            yield rng.randrange(3)
        done[0] += 1

    for i in range(4):
        s.engine.process(agent(i), s.sys, f"a{i}")
    s.engine.run_until()
    s.finalize()
    assert check_trace(s.tracer.events) == []
    assert done[0] == 4


def test_checker_catches_stale_sharer_mutation():
    s = MiniSystem(3)
    for d in s.dirs:
        d.mutation = "stale_sharer"
    s.do(0, "load", A)
    s.do(1, "load", A)
    s.do(2, "store", A, value=5)
    s.finalize()
    rules = {v.rule for v in check_trace(s.tracer.events)}
    assert "directory" in rules
