"""Run trace recording and per-transaction latency attribution."""

from __future__ import annotations

import json
from collections.abc import Iterable
from typing import Any

PHASES = ("noc", "fast_cache", "slow_cache", "cdc")


class Tracer:
    """Append-only event log.  Each record is ``(kind, time_ps, *fields)``."""

    def __init__(self, engine, enabled: bool = True):
        self.engine = engine
        self.enabled = enabled
        self.events: list[tuple] = []

    def log(self, kind: str, *fields: Any) -> None:
        if self.enabled:
            self.events.append((kind, self.engine.now, *fields))

    def dump(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.writelines(json.dumps(_jsonable(ev)) + "\n" for ev in self.events)


def _jsonable(x: Any) -> Any:
    if isinstance(x, (tuple, list, frozenset, set)):
        seq = sorted(x) if isinstance(x, (set, frozenset)) else x
        return [_jsonable(v) for v in seq]
    return x


def load_trace(path: str) -> list[tuple]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(tuple(_untuple(v) for v in json.loads(line)))
    return out


def _untuple(v: Any) -> Any:
    if isinstance(v, list):
        return tuple(_untuple(x) for x in v)
    return v


class PhaseTag:
    """Critical-path latency attribution carried along a causal message chain.

    ``charge(phase, now)`` books the time since the last charge to ``phase``;
    the components therefore always sum to ``now - start``.
    """

    __slots__ = ("last", "phases", "start")

    def __init__(self, start: int):
        self.start = start
        self.last = start
        self.phases = dict.fromkeys(PHASES, 0)

    def charge(self, phase: str, now: int) -> None:
        if now > self.last:
            self.phases[phase] += now - self.last
            self.last = now

    def fork(self) -> PhaseTag:
        t = PhaseTag(self.start)
        t.last = self.last
        t.phases = dict(self.phases)
        return t

    @property
    def total(self) -> int:
        return self.last - self.start


def latest(tags: Iterable[PhaseTag | None]) -> PhaseTag | None:
    """The tag on the critical path (latest last-charge time)."""
    best = None
    for t in tags:
        if t is not None and (best is None or t.last > best.last):
            best = t
    return best
