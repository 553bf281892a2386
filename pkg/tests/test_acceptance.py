"""Acceptance suite: one test, and one printed PASS/FAIL line, per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the summary block at the end
of the session lists every criterion.
"""

import math
import os
import random
import sys

import numpy as np
import pytest
from helpers import record

from duetsim import mutations
from duetsim.accel.kernels import TAN_DELTA, popcount_rows, sort_network, tangent
from duetsim.adapter import BOGUS, HANG, SoftCacheConfig
from duetsim.checker import check_trace
from duetsim.config import SWEEP_MHZ, parse_config
from duetsim.experiment import compute_speedup, run_config
from duetsim.platform import Platform, PlatformConfig
from duetsim.workload.barnes_hut import BarnesHut
from duetsim.workload.bench import BENCHMARKS, run_benchmark
from duetsim.workload.bfs import Bfs, random_undirected
from duetsim.workload.dijkstra import Dijkstra
from duetsim.workload.pdes import Pdes, random_circuit
from duetsim.workload.probes import contention, probe_bandwidth, probe_latency
from duetsim.workload.streaming import Popcount, Sort

MHZ = 1_000_000
SWEEP = list(SWEEP_MHZ)


def _workers() -> int:
    return int(os.environ.get("DUETSIM_WORKERS", min(8, os.cpu_count() or 1)))


@pytest.fixture(scope="module")
def sweep():
    """Every benchmark on every platform across the clock sweep, audited.

    Frequencies above an accelerator's timing closure are run anyway
    (strict_frequency off) so the protocol is exercised at every point.
    """
    cfg = parse_config(
        "[experiment]\nkind = benchmarks\nbenchmarks = all\nfrequencies_mhz = sweep\nstrict_frequency = false\ncheck = true\n"
    )
    return run_config(cfg, _workers())


# -- 1 -----------------------------------------------------------------------------------
def test_c01_coherence_soundness(sweep):
    probes = []
    for f in SWEEP:
        for mech in ("normal_reg", "shadow_reg", "efpga_pull_slow", "efpga_pull_proxy", "cpu_pull_slow", "cpu_pull_proxy"):
            probes.append(len(probe_latency(mech, f * MHZ, check=True).violations))
            probes.append(len(probe_bandwidth(mech, f * MHZ, words=64, check=True).violations))
    bad = [r for r in sweep if r["violations"] != "0" or r["ok"] != "1"]
    first = bad[0] if bad else None
    ok = not bad and sum(probes) == 0 and len(sweep) == len(BENCHMARKS) * (1 + 2 * len(SWEEP))
    detail = f"{len(sweep)} benchmark runs + {len(probes)} probe runs, {sum(int(r['violations']) for r in sweep) + sum(probes)} violations"
    if first:
        detail += f"; first bad: {first['benchmark']} {first['mode']} {first['fpga_mhz']} MHz {first['note']}"
    record(1, "coherence soundness across benchmarks x sweep", ok, detail)


# -- 2 -----------------------------------------------------------------------------------
def test_c02_frequency_invariance():
    pull = [probe_latency("cpu_pull_proxy", f * MHZ).total_ps for f in SWEEP]
    shadow = [probe_latency("shadow_reg", f * MHZ).total_ps for f in SWEEP]
    slow = [probe_latency("cpu_pull_slow", f * MHZ).total_ps for f in SWEEP]
    ok = len(set(pull)) == 1 and len(set(shadow)) == 1 and all(a > b for a, b in zip(slow, slow[1:]))
    detail = f"cpu_pull_proxy {sorted(set(pull))} ps, shadow {sorted(set(shadow))} ps, cpu_pull_slow {slow} ps"
    record(2, "frequency invariance of duet latencies", ok, detail)


# -- 3 -----------------------------------------------------------------------------------
def test_c03_latency_reduction():
    def reductions(fast, slow):
        return [1 - probe_latency(fast, f * MHZ).total_ps / probe_latency(slow, f * MHZ).total_ps for f in SWEEP]

    pull = reductions("cpu_pull_proxy", "cpu_pull_slow")
    reg = reductions("shadow_reg", "normal_reg")
    mono = all(a > b for a, b in zip(pull, pull[1:])) and all(a > b for a, b in zip(reg, reg[1:]))
    # at least 40%, and a 2x (50%) floor at the slowest point
    ok = min(pull[0], reg[0]) >= 0.5 and mono
    fmt = lambda xs: "/".join(f"{100 * x:.0f}%" for x in xs)  # noqa: E731
    record(3, "latency reduction at 20 MHz and its shrinking trend", ok, f"cpu_pull {fmt(pull)}, shadow-vs-normal {fmt(reg)}")


# -- 4 -----------------------------------------------------------------------------------
def test_c04_bandwidth_saturation():
    proxy = [probe_bandwidth("efpga_pull_proxy", f * MHZ).gbps for f in SWEEP]
    peak = max(proxy)
    sat = next(f for i, f in enumerate(SWEEP) if all(v >= 0.99 * peak for v in proxy[i:]))
    slow500 = probe_bandwidth("efpga_pull_slow", 500 * MHZ).gbps
    ratio = probe_bandwidth("efpga_pull_proxy", 100 * MHZ).gbps / probe_bandwidth("efpga_pull_slow", 100 * MHZ).gbps
    ok = sat <= 250 and slow500 < peak and ratio >= 2
    detail = f"proxy GB/s {[round(v, 3) for v in proxy]}, saturates at {sat} MHz, slow@500 {slow500:.3f}, proxy/slow@100 {ratio:.2f}"
    record(4, "eFPGA-pull bandwidth saturation", ok, detail)


# -- 5 -----------------------------------------------------------------------------------
def test_c05_contention_scaling():
    sh1, sh8 = contention(1, "shadow")[0], contention(8, "shadow")[0]
    no1, no4 = contention(1, "normal")[0], contention(4, "normal")[0]
    ok = sh8 >= 0.9 * sh1 and no4 < 0.75 * no1
    record(5, "register contention scaling", ok, f"shadow 8/1 cores {sh8 / sh1:.3f}, normal 4/1 cores {no4 / no1:.3f}")


# -- 6 -----------------------------------------------------------------------------------
def test_c06_tangent_accuracy():
    lim = math.pi / 2 - TAN_DELTA
    x = np.random.default_rng(2024).uniform(-lim, lim, 100_000)
    y, ok_dom = tangent(x)
    ref = np.tan(x)
    nz = ref != 0
    err = np.abs(y[nz] - ref[nz]) / np.abs(ref[nz])
    worst = float(err.max())
    record(6, "tangent max relative error over 1e5 samples", bool(ok_dom.all()) and worst <= 0.003, f"max error {worst:.5f}")


# -- 7 -----------------------------------------------------------------------------------
def test_c07_functional_oracles():
    rng = np.random.default_rng(7)
    fails = []
    # sorting network: 10^3 arrays per size
    for size in (32, 64, 128):
        keys = rng.integers(0, 2**32, size=(1000, size), dtype=np.int64).astype(np.uint32)
        if not (sort_network(keys) == np.sort(keys, axis=1)).all():
            fails.append(f"sort{size}")
    # popcount: 10^3 vectors of 512 bits
    words = rng.integers(0, 2**63, size=(1000, 8), dtype=np.int64).astype(np.uint64) * 2 + rng.integers(0, 2, size=(1000, 8)).astype(np.uint64)
    want = [sum(bin(int(w)).count("1") for w in row) for row in words]
    if popcount_rows(words).tolist() != want:
        fails.append("popcount")
    runs = 0

    def sim(bench, mode):
        nonlocal runs
        runs += 1
        r = run_benchmark(bench, mode, check=False)
        if not r.ok:
            fails.append(f"{bench.name}/{mode}: {r.detail}")

    # simulated accelerators end to end
    for size in (32, 64, 128):
        sim(Sort(size, slices=8, seed=size), "duet")
    sim(Popcount(n=32, seed=11), "duet")
    for seed in range(100):  # Dijkstra: 100 random graphs vs Bellman-Ford
        sim(Dijkstra(n=12 + seed % 12, degree=3, sources=1, seed=1000 + seed), "duet" if seed % 2 else "fpsoc")
    for seed in range(6):  # BFS level maps
        sim(Bfs(4, graph=random_undirected(30 + 5 * seed, 3, seed)), "duet")
    for seed in range(6):  # PDES final signal values
        sim(Pdes(4, circuit=random_circuit(n_inputs=4, n_gates=16, steps=4, seed=seed)), "duet")
    for seed in range(3):  # Barnes-Hut forces vs the same-criterion direct evaluation
        sim(BarnesHut(n=32, seed=seed), "duet")
    detail = f"3x1000 sort arrays, 1000 popcount vectors, {runs} simulated runs"
    record(7, "functional oracles", not fails, detail + (f"; failures: {fails[:3]}" if fails else ""))


# -- 8 -----------------------------------------------------------------------------------
A = 0x4000


class _Regs:
    def __init__(self, hang):
        self.hang = hang

    def register_read(self, reg):
        return HANG if self.hang else 7

    def register_write(self, reg, value):
        pass


def _containment(hang: bool):
    p = Platform(PlatformConfig(mode="duet", n_processors=4, fpga_hz=100 * MHZ, timeout_limit=1000, blocking_timeout=5000))
    c = p.control
    c.declare(2, "normal")
    c.declare(6, "cpu_bound_fifo")
    c.regs.handler = _Regs(hang)
    port = p.port(soft_cache=SoftCacheConfig())
    got = {"status": [], "inv": None}

    def fpga():
        yield from port.load(A)  # the proxy and soft cache now hold A

    def reader(cpu, reg):
        yield 200
        for _ in range(3):
            v = yield from cpu.mmio_read(reg)
            got["status"].append((v, cpu.last_status))

    def writer(cpu):
        yield 2000
        t0 = p.engine.now
        yield from cpu.store(A, 8, 1)  # invalidates the proxy's copy
        got["inv"] = p.engine.now - t0

    for i, g in ((0, reader(p.cpus[0], 2)), (1, reader(p.cpus[1], 2)), (2, reader(p.cpus[2], 6)), (3, writer(p.cpus[3]))):
        p.engine.process(g, p.sys, f"cpu{i}")
    p.engine.process(fpga(), p.fpga, "fpga")
    p.run(limit_ps=10**12)
    p.finalize_trace()
    return got, check_trace(p.tracer.events), p


def test_c08_containment():
    healthy, v0, _ = _containment(False)
    hung, v1, p = _containment(True)
    pending_done = len(hung["status"]) == 9
    all_failed = all(v == BOGUS and s in ("timeout", "bogus") for v, s in hung["status"])
    bound = 2 * healthy["inv"]
    ok = pending_done and all_failed and hung["inv"] is not None and hung["inv"] <= bound and not v0 and not v1
    detail = (
        f"{len(hung['status'])}/9 MMIOs completed with {sorted({s for _, s in hung['status']})}, "
        f"invalidating store {hung['inv']} ps vs {healthy['inv']} ps healthy, error code {p.adapter.error}"
    )
    record(8, "containment of a hung accelerator", ok, detail)


# -- 9 -----------------------------------------------------------------------------------
class _Log:
    def __init__(self):
        self.writes = []

    def register_read(self, reg):
        return reg

    def register_write(self, reg, value):
        self.writes.append(value)


def _ordering_trial(seed: int, n_cpu: int, per_cpu: int):
    rng = random.Random(seed)
    p = Platform(PlatformConfig(mode="duet", n_processors=n_cpu, fpga_hz=rng.choice(SWEEP) * MHZ))
    c = p.control
    c.declare(1, "plain")
    c.declare(2, "fpga_bound_fifo")
    log = c.regs.handler = _Log()
    ops = [("write", 1), ("read", 1), ("write", 2), ("write", 4), ("read", 4)]
    observed_expected = {}

    def prog(cpu):
        for k in range(per_cpu):
            op, reg = rng.choice(ops)
            seq = cpu.mmio_seq
            if op == "write" or reg == 4:  # accesses the eFPGA sees
                observed_expected.setdefault(cpu.name, []).append(seq)
            if op == "write":
                yield from cpu.mmio_write(reg, (cpu.index << 32) | seq)
            else:
                yield from cpu.mmio_read(reg)
            if rng.random() < 0.2:
                yield rng.randrange(1, 30)

    for cpu in p.cpus:
        p.engine.process(prog(cpu), p.sys, cpu.name)
    p.run(limit_ps=10**13)
    p.settle()  # posted shadow writes may still be crossing into the eFPGA
    p.finalize_trace()
    obs = {}
    for e in p.tracer.events:
        if e[0] == "fpga_observe":
            obs.setdefault(e[2], []).append(e[3])
    per_cpu_writes = {}
    for v in log.writes:
        per_cpu_writes.setdefault(v >> 32, []).append(v & 0xFFFF_FFFF)
    in_order = obs == observed_expected and all(w == sorted(w) for w in per_cpu_writes.values())
    return in_order and not check_trace(p.tracer.events)


def test_c09_mmio_ordering():
    trials = [_ordering_trial(seed, n_cpu=4, per_cpu=250) for seed in range(10)]
    record(9, "FPGA-observed MMIO order equals issue order", all(trials), f"{sum(trials)}/{len(trials)} trials of 1000 mixed accesses in order")


# -- 10 ----------------------------------------------------------------------------------
def test_c10_benchmark_direction(sweep):
    base = {r["benchmark"]: r for r in sweep if r["mode"] == "processor_only"}
    sp = {}
    for r in sweep:
        if r["mode"] != "processor_only":
            sp[(r["benchmark"], r["mode"], r["fpga_mhz"])] = compute_speedup(base[r["benchmark"]], r)
    cells = sorted({(b, f) for b, _, f in sp})
    bad = [(b, f) for b, f in cells if not sp[(b, "duet", f)] >= sp[(b, "fpsoc", f)] >= 0]
    t4 = run_benchmark(Bfs(4), "processor_only", check=False).stats["bfs.mean_step_ps"]
    t8 = run_benchmark(Bfs(8), "processor_only", check=False).stats["bfs.mean_step_ps"]
    # sort at each accelerator's timing-closure frequency
    sort_gain = {}
    for size in (32, 64, 128):
        name = f"sort{size}"
        r = {m: run_benchmark(Sort(size), m, check=False) for m in ("processor_only", "fpsoc", "duet")}
        sort_gain[name] = (r["processor_only"].runtime_ps / r["duet"].runtime_ps) / (r["processor_only"].runtime_ps / r["fpsoc"].runtime_ps)
    ok = not bad and t8 > t4 and all(g >= 1.5 for g in sort_gain.values())
    gm = {m: math.exp(sum(math.log(v) for (b, mm, f), v in sp.items() if mm == m and f == "100") / len(BENCHMARKS)) for m in ("duet", "fpsoc")}
    detail = (
        f"{len(cells) - len(bad)}/{len(cells)} cells duet>=fpsoc>=0, BFS step 4->8 cores x{t8 / t4:.2f}, "
        f"duet/fpsoc sort {', '.join(f'{k} {v:.2f}' for k, v in sort_gain.items())}; "
        f"geomean speedup @100 MHz duet {gm['duet']:.2f} fpsoc {gm['fpsoc']:.2f}"
    )
    if bad:
        detail += f"; failing cells {bad[:4]}"
    record(10, "benchmark speedup direction", ok, detail)


# -- 11 ----------------------------------------------------------------------------------
def test_c11_checker_catches_mutations():
    caught = [m for m in mutations.MUTATIONS if mutations.detected(m)]
    clean = [m for m in mutations.MUTATIONS if not mutations.run_scenario(m, mutated=False)]
    ok = len(caught) == len(mutations.MUTATIONS) and len(clean) == len(mutations.MUTATIONS)
    record(11, "seeded protocol mutations detected", ok, f"{len(caught)}/{len(mutations.MUTATIONS)} detected, {len(clean)} clean controls")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
