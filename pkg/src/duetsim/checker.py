"""Offline audit of a run trace.

The checker only reads trace records; it shares no state with the
simulator.  Each rule yields :class:`Violation` entries; an empty report
means the run was clean.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass


@dataclass(frozen=True)
class Violation:
    rule: str
    time: int
    detail: str

    def __str__(self) -> str:
        return f"[{self.rule}] t={self.time}ps {self.detail}"


RULES = (
    "swmr",
    "data_value",
    "noc_order",
    "local_order",
    "response_match",
    "synonym",
    "write_through",
    "containment",
    "directory",
    "mmio_order",
)


class _Shadow:
    """Byte-granular shadow memory."""

    def __init__(self) -> None:
        self.bytes: dict[int, int] = {}

    def write(self, addr: int, size: int, value: int) -> None:
        for i in range(size):
            self.bytes[addr + i] = (value >> (8 * i)) & 0xFF

    def read(self, addr: int, size: int) -> int:
        v = 0
        for i in range(size):
            v |= self.bytes.get(addr + i, 0) << (8 * i)
        return v


def check_trace(events, line_bytes: int = 16, max_violations: int = 50) -> list[Violation]:
    out: list[Violation] = []

    def bad(rule: str, t: int, detail: str) -> None:
        if len(out) < max_violations:
            out.append(Violation(rule, t, detail))

    lines: dict[int, dict[str, str]] = defaultdict(dict)
    shadow = _Shadow()
    noc_next: dict[tuple, int] = {}
    lp_sent: dict[tuple, list] = defaultdict(list)
    lp_recv_count: dict[tuple, int] = defaultdict(int)
    lp_outstanding: dict[tuple, str] = {}
    inv_pending: dict[tuple, int] = defaultdict(int)  # (hub, pline) -> count
    own_writes: dict[tuple, dict] = defaultdict(dict)  # (hub) -> reqid -> (addr,size,value)
    sc_write_req: dict[tuple, int] = {}
    sc_resident: dict[str, dict[int, int]] = defaultdict(dict)  # sc -> pline -> vline
    deactivated: set[str] = set()
    cache_tile: dict[str, tuple] = {}
    dir_final: dict[int, tuple] = {}
    cache_final: dict[str, dict[int, str]] = defaultdict(dict)
    mmio_last_obs: dict[str, int] = {}
    mmio_last_done: dict[str, int] = {}
    mmio_issued: dict[str, list] = defaultdict(list)

    for ev in events:
        kind, t = ev[0], ev[1]
        f = ev[2:]
        if kind == "init":
            addr, size, value = f
            shadow.write(addr, size, value)
        elif kind == "cache":
            cache_tile[f[0]] = tuple(f[1])
        elif kind == "line":
            cache, line, state = f
            holders = lines[line]
            if state == "I":
                holders.pop(cache, None)
            else:
                holders[cache] = state
            excl = [c for c, s in holders.items() if s in ("M", "E")]
            if len(excl) > 1 or (excl and len(holders) > 1):
                bad("swmr", t, f"line {line:#x} held as {dict(holders)}")
        elif kind == "st":
            agent, addr, size, value = f
            shadow.write(addr, size, value)
        elif kind == "ld":
            agent, addr, size, value = f
            exp = shadow.read(addr, size)
            if value != exp:
                bad("data_value", t, f"{agent} loaded {value:#x} from {addr:#x}, latest store is {exp:#x}")
        elif kind == "noc_send":
            src, dst, vc, seq, origin = f
            if origin and origin.startswith("efpga:") and origin[6:] in deactivated:
                bad("containment", t, f"eFPGA-originated message on NoC after deactivation ({origin})")
        elif kind == "noc_recv":
            src, dst, vc, seq = f
            key = (tuple(src), tuple(dst), vc)
            want = noc_next.get(key, 0)
            if seq != want:
                bad("noc_order", t, f"{key} delivered seq {seq}, expected {want}")
            noc_next[key] = seq + 1
        elif kind == "lp_send":
            hub, chan, mid, mkind, pline = f
            lp_sent[(hub, chan)].append(mid)
            if mkind == "Inv":
                inv_pending[(hub, pline)] += 1
        elif kind == "lp_recv":
            hub, chan, mid, mkind, pline, reqid = f
            key = (hub, chan)
            idx = lp_recv_count[key]
            sent = lp_sent[key]
            if idx >= len(sent) or sent[idx] != mid:
                exp = sent[idx] if idx < len(sent) else None
                bad("local_order", t, f"{hub}/{chan} received msg {mid}, expected {exp}")
            lp_recv_count[key] = idx + 1
            if mkind == "Inv":
                if inv_pending[(hub, pline)] > 0:
                    inv_pending[(hub, pline)] -= 1
            elif mkind in ("LoadAck", "StoreAck"):
                want = "Load" if mkind == "LoadAck" else "Store"
                if lp_outstanding.pop((hub, reqid), None) != want:
                    bad("response_match", t, f"{hub}: {mkind} for request {reqid} with no outstanding {want}")
                if mkind == "StoreAck":
                    own_writes[hub].pop(reqid, None)
        elif kind == "lp_req":
            hub, reqid, rkind, addr, size, value = f
            lp_outstanding[(hub, reqid)] = rkind
            if rkind == "Store":
                own_writes[hub][reqid] = (addr, size, value)
        elif kind == "sc_write":
            hub, vaddr, paddr, size, value, reqid = f
            sc_write_req[(hub, reqid if reqid is not None and reqid >= 0 else ("lost", t, vaddr))] = t
        elif kind == "sc_read":
            hub, vaddr, paddr, size, value = f
            exp = shadow.read(paddr, size)
            if value != exp:
                pline = paddr - paddr % line_bytes
                own = [w for w in own_writes[hub].values() if w[0] == paddr and w[1] == size]
                if inv_pending[(hub, pline)] == 0 and not (own and own[-1][2] == value):
                    bad("data_value", t, f"soft cache {hub} read {value:#x} at {vaddr:#x} (pa {paddr:#x}), latest store is {exp:#x}")
        elif kind == "sc_fill":
            hub, vline, pline = f
            res = sc_resident[hub]
            if pline in res and res[pline] != vline:
                bad("synonym", t, f"{hub}: pa line {pline:#x} resident as va {res[pline]:#x} and {vline:#x}")
            res[pline] = vline
        elif kind in ("sc_inv", "sc_evict"):
            hub, vline, pline = f
            res = sc_resident[hub]
            if res.get(pline) == vline:
                del res[pline]
        elif kind == "deactivate":
            deactivated.add(f[0])
        elif kind == "activate":
            deactivated.discard(f[0])
        elif kind == "dir":
            name, line, state, sharers, owner = f
            if (owner is not None) != (state == "EM") or (bool(sharers) != (state == "S")):
                bad("directory", t, f"{name} entry {line:#x}: state={state} sharers={sharers} owner={owner}")
        elif kind == "dir_final":
            line, state, sharers, owner = f
            dir_final[line] = (state, frozenset(tuple(s) for s in sharers), tuple(owner) if owner else None)
        elif kind == "cache_final":
            cache, line, state = f
            cache_final[cache][line] = state
        elif kind == "mmio_issue":
            cpu, seq, reg, op = f
            mmio_issued[cpu].append(seq)
        elif kind == "fpga_observe":
            cpu, seq, reg = f
            if seq <= mmio_last_obs.get(cpu, -1):
                bad("mmio_order", t, f"FPGA observed {cpu} access {seq} after {mmio_last_obs[cpu]}")
            mmio_last_obs[cpu] = seq
        elif kind == "mmio_complete":
            cpu, seq = f
            if seq <= mmio_last_done.get(cpu, -1):
                bad("mmio_order", t, f"{cpu} access {seq} completed after {mmio_last_done[cpu]}")
            mmio_last_done[cpu] = seq

    end = events[-1][1] if events else 0
    for (hub, key), t in sc_write_req.items():
        if isinstance(key, tuple) or key in own_writes[hub]:
            bad("write_through", t, f"soft cache {hub} write never acknowledged by the Proxy Cache")
    if dir_final or cache_final:
        holders: dict[int, dict[tuple, str]] = defaultdict(dict)
        for cache, content in cache_final.items():
            tile = cache_tile.get(cache)
            for line, state in content.items():
                holders[line][tile] = state
        for line in set(dir_final) | set(holders):
            state, sharers, owner = dir_final.get(line, ("I", frozenset(), None))
            h = holders.get(line, {})
            if state == "EM":
                ok = set(h) == {owner} and h[owner] in ("M", "E")
            elif state == "S":
                ok = set(h) == set(sharers) and all(s == "S" for s in h.values())
            else:
                ok = not h
            if not ok:
                bad("directory", end, f"line {line:#x}: directory {state} sharers={sorted(sharers)} owner={owner}, caches {h}")
    return out


def format_report(violations: list[Violation]) -> str:
    if not violations:
        return "no invariant violations"
    lines = [f"{len(violations)} violation(s); first:"]
    lines += [f"  {v}" for v in violations[:10]]
    return "\n".join(lines)
