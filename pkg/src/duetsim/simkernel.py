"""Deterministic two-clock discrete-event engine and the async FIFO primitive.

Time is integer picoseconds.  Every event belongs to a clock domain and is
ordered by ``(time, domain name, domain registration order, insertion seq)``.
Hardware units schedule plain callbacks; programs (processor agents,
accelerator models) run as generator processes that yield either an int
(wait that many rising edges of their own domain) or a :class:`Signal`.
"""

from __future__ import annotations

import heapq
from collections import deque
from collections.abc import Callable, Generator, Iterable
from itertools import count
from typing import Any

PS_PER_S = 10**12


class SimError(RuntimeError):
    pass


class DeadlockError(SimError):
    def __init__(self, message: str, blocked: list[str]):
        super().__init__(message + "\n  blocked: " + "\n  blocked: ".join(blocked or ["<none>"]))
        self.blocked = blocked


class ClockDomain:
    """A free-running clock.  Edge k fires at ``phase + floor(k * 1e12 / f)`` ps.

    Frequency changes (``set_frequency``) take effect from the next edge so
    edge times stay strictly increasing.
    """

    def __init__(self, name: str, frequency_hz: int, phase_ps: int = 0, order: int = 0):
        if frequency_hz <= 0:
            raise ValueError("frequency must be positive")
        if int(frequency_hz) != frequency_hz:
            raise ValueError("frequency must be an integer number of Hz")
        self.name = name
        self.order = order
        self.phase_ps = int(phase_ps)
        self._freq = int(frequency_hz)
        self._base_edge = 0
        self._base_time = self.phase_ps

    @property
    def frequency_hz(self) -> int:
        return self._freq

    @property
    def period_ps(self) -> int:
        """Nominal period, rounded up (used by the CDC visibility rule)."""
        return -(-PS_PER_S // self._freq)

    def edge_time(self, k: int) -> int:
        if k < self._base_edge:
            raise ValueError("edge index before the last frequency change")
        return self._base_time + ((k - self._base_edge) * PS_PER_S) // self._freq

    def edge_at_or_after(self, t: int) -> int:
        """Index of the first rising edge at time >= t."""
        if t <= self._base_time:
            return self._base_edge
        # floor(k*P/f) >= dt  <=>  k >= dt*f/P for integer dt
        dt = t - self._base_time
        return self._base_edge - ((-dt * self._freq) // PS_PER_S)

    def next_edge_time(self, t: int) -> int:
        return self.edge_time(self.edge_at_or_after(t))

    def set_frequency(self, frequency_hz: int, now: int) -> None:
        if frequency_hz <= 0 or int(frequency_hz) != frequency_hz:
            raise ValueError("frequency must be a positive integer")
        # rebase on the first edge strictly after `now`
        k = self.edge_at_or_after(now + 1)
        t = self.edge_time(k)
        self._base_edge, self._base_time, self._freq = k, t, int(frequency_hz)

    def __repr__(self) -> str:
        return f"ClockDomain({self.name!r}, {self._freq} Hz)"


class Signal:
    """One-shot wake-up.  ``fire(value)`` resumes every waiter with ``value``."""

    __slots__ = ("_waiters", "engine", "fire_time", "fired", "label", "value")

    def __init__(self, engine: Engine, label: str = ""):
        self.engine = engine
        self.fired = False
        self.value: Any = None
        self.fire_time = -1
        self._waiters: list[Callable[[Any], None]] = []
        self.label = label

    def fire(self, value: Any = None) -> None:
        if self.fired:
            return
        self.fired = True
        self.value = value
        self.fire_time = self.engine.now
        waiters, self._waiters = self._waiters, []
        for w in waiters:
            w(value)

    def add_waiter(self, fn: Callable[[Any], None]) -> None:
        if self.fired:
            fn(self.value)
        else:
            self._waiters.append(fn)


class Process:
    """Runs a generator inside a clock domain."""

    def __init__(self, engine: Engine, gen: Generator, domain: ClockDomain, name: str):
        self.engine = engine
        self.gen = gen
        self.domain = domain
        self.name = name
        self.done = Signal(engine, f"{name}.done")
        self.waiting_on: str = "start"
        self.result: Any = None

    def _resume(self, value: Any = None) -> None:
        eng = self.engine
        try:
            cmd = self.gen.send(value)
        except StopIteration as stop:
            self.result = stop.value
            self.waiting_on = "finished"
            eng._live.discard(self)
            self.done.fire(stop.value)
            return
        dom = self.domain
        if isinstance(cmd, int):
            k = dom.edge_at_or_after(eng.now) + cmd
            self.waiting_on = f"delay {cmd} @{dom.name}"
            eng.at_edge(dom, k, self._resume, None)
        elif isinstance(cmd, Signal):
            self.waiting_on = f"signal {cmd.label}"
            cmd.add_waiter(self._wake)
        else:
            raise SimError(f"process {self.name} yielded unsupported {cmd!r}")

    def _wake(self, value: Any) -> None:
        eng = self.engine
        k = self.domain.edge_at_or_after(eng.now)
        eng.at_edge(self.domain, k, self._resume, value)


class Engine:
    def __init__(self) -> None:
        self.now = 0
        self._q: list = []
        self._seq = count()
        self.domains: dict[str, ClockDomain] = {}
        self._live: set[Process] = set()
        self.events_processed = 0
        self.trace_events: list | None = None

    # -- domains -------------------------------------------------------
    def register_domain(self, name: str, frequency_hz: int, phase_ps: int = 0) -> ClockDomain:
        if name in self.domains:
            raise ValueError(f"duplicate clock domain {name!r}")
        dom = ClockDomain(name, frequency_hz, phase_ps, order=len(self.domains))
        self.domains[name] = dom
        return dom

    # -- scheduling ----------------------------------------------------
    def schedule(self, time: int, domain: ClockDomain, fn: Callable, *args: Any) -> None:
        if time < self.now:
            raise SimError(f"scheduling into the past ({time} < {self.now})")
        heapq.heappush(self._q, (time, domain.name, domain.order, next(self._seq), fn, args))

    def at_edge(self, domain: ClockDomain, k: int, fn: Callable, *args: Any) -> None:
        self.schedule(domain.edge_time(k), domain, fn, *args)

    def after_cycles(self, domain: ClockDomain, cycles: int, fn: Callable, *args: Any) -> None:
        """Run ``fn`` ``cycles`` edges after the first edge at/after now."""
        self.at_edge(domain, domain.edge_at_or_after(self.now) + cycles, fn, *args)

    def process(self, gen: Generator, domain: ClockDomain, name: str = "proc", daemon: bool = False) -> Process:
        """Start a generator process.  Daemons (hardware pumps) never block termination."""
        p = Process(self, gen, domain, name)
        if not daemon:
            self._live.add(p)
        self.at_edge(domain, domain.edge_at_or_after(self.now), p._resume, None)
        return p

    def signal(self, label: str = "") -> Signal:
        return Signal(self, label)

    # -- running -------------------------------------------------------
    def step(self) -> bool:
        if not self._q:
            return False
        t, _, _, _, fn, args = heapq.heappop(self._q)
        self.now = t
        self.events_processed += 1
        fn(*args)
        return True

    def run_until(self, condition: Callable[[], bool] | None = None, limit_ps: int | None = None) -> int:
        """Process events until ``condition()`` holds (checked after each event).

        With no condition, runs until every live process has finished.  An
        empty queue with the condition still false is a deadlock.
        """
        if condition is None:
            condition = lambda: not self._live
        q = self._q
        while not condition():
            if not q:
                blocked = sorted(f"{p.name}: waiting on {p.waiting_on}" for p in self._live)
                raise DeadlockError(f"no pending events at t={self.now} ps", blocked)
            if limit_ps is not None and q[0][0] > limit_ps:
                raise SimError(f"time limit {limit_ps} ps exceeded")
            t, _, _, _, fn, args = heapq.heappop(q)
            self.now = t
            self.events_processed += 1
            fn(*args)
        return self.now

    def blocked_processes(self) -> list[str]:
        return sorted(f"{p.name}: waiting on {p.waiting_on}" for p in self._live)


def wait_all(engine: Engine, signals: Iterable[Signal]) -> Signal:
    """Signal that fires, with the list of values in order, once every signal has fired."""
    sigs = list(signals)
    out = engine.signal("all")
    remaining = [len(sigs)]
    if not sigs:
        out.fire([])
        return out

    def one(_v: Any) -> None:
        remaining[0] -= 1
        if remaining[0] == 0:
            out.fire([s.value for s in sigs])

    for s in sigs:
        s.add_waiter(one)
    return out


class _Empty:
    __slots__ = ()

    def __repr__(self) -> str:
        return "EMPTY"

    def __bool__(self) -> bool:
        return False


EMPTY = _Empty()


class AsyncFifo:
    """Bounded dual-clock FIFO with synchronizer-stage visibility delay.

    An entry pushed at producer time ``t`` becomes visible at the first
    consumer edge at or after ``t + sync_stages * consumer_period``.
    Producers that find it full must retry (``put`` does that for them).
    """

    def __init__(
        self,
        engine: Engine,
        producer: ClockDomain,
        consumer: ClockDomain,
        capacity: int = 8,
        sync_stages: int = 2,
        name: str = "fifo",
    ):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if sync_stages < 1:
            raise ValueError("sync_stages must be >= 1")
        self.engine = engine
        self.producer = producer
        self.consumer = consumer
        self.capacity = capacity
        self.sync_stages = sync_stages
        self.name = name
        self.entries: deque = deque()  # (payload, commit_time, visible_time)
        self._data_waiters: list[Signal] = []
        self._space_waiters: list[Signal] = []
        self.pushes = 0
        self.pops = 0
        self.max_occupancy = 0
        self.on_pop: Callable[[Any, int, int], None] | None = None

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity

    def visibility_time(self, commit_time: int) -> int:
        return self.consumer.next_edge_time(commit_time + self.sync_stages * self.consumer.period_ps)

    def push(self, payload: Any, time: int | None = None) -> bool:
        """Try to enqueue; False means back-pressure (nothing changed)."""
        if len(self.entries) >= self.capacity:
            return False
        t = self.engine.now if time is None else time
        vis = self.visibility_time(t)
        self.entries.append((payload, t, vis))
        self.pushes += 1
        self.max_occupancy = max(self.max_occupancy, len(self.entries))
        if self._data_waiters and len(self.entries) == 1:
            self._arm_data(vis)
        return True

    def head_visible_at(self) -> int | None:
        return self.entries[0][2] if self.entries else None

    def pop(self, time: int | None = None) -> Any:
        """Oldest visible entry, or EMPTY."""
        t = self.engine.now if time is None else time
        if not self.entries or self.entries[0][2] > t:
            return EMPTY
        payload, commit, vis = self.entries.popleft()
        self.pops += 1
        if self.on_pop is not None:
            self.on_pop(payload, commit, t)
        if self._space_waiters:
            waiters, self._space_waiters = self._space_waiters, []
            for s in waiters:
                s.fire(None)
        if self.entries and self._data_waiters:
            self._arm_data(self.entries[0][2])
        return payload

    def _arm_data(self, vis: int) -> None:
        waiters, self._data_waiters = self._data_waiters, []

        def fire() -> None:
            for s in waiters:
                s.fire(None)

        self.engine.schedule(max(vis, self.engine.now), self.consumer, fire)

    def data_signal(self) -> Signal:
        s = self.engine.signal(f"{self.name}.data")
        if self.entries:
            vis = self.entries[0][2]
            self.engine.schedule(max(vis, self.engine.now), self.consumer, s.fire, None)
        else:
            self._data_waiters.append(s)
        return s

    def space_signal(self) -> Signal:
        s = self.engine.signal(f"{self.name}.space")
        if not self.full:
            s.fire(None)
        else:
            self._space_waiters.append(s)
        return s

    # generator helpers for processes -----------------------------------
    def get(self) -> Generator:
        """``item = yield from fifo.get()`` inside a consumer-domain process."""
        while True:
            item = self.pop()
            if item is not EMPTY:
                return item
            yield self.data_signal()

    def put(self, payload: Any) -> Generator:
        """``yield from fifo.put(x)`` inside a producer-domain process."""
        while not self.push(payload):
            yield self.space_signal()
            yield 0


class Pipeline:
    """In-order hardware unit: accepts one item per ``ii`` edges, completes ``latency`` edges later."""

    def __init__(self, engine: Engine, domain: ClockDomain, latency: int, ii: int = 1):
        self.engine = engine
        self.domain = domain
        self.latency = latency
        self.ii = ii
        self._free = 0
        self.busy_cycles = 0
        self.in_flight = 0

    def accept(self, fn: Callable, *args: Any) -> int:
        dom = self.domain
        k = dom.edge_at_or_after(self.engine.now)
        k = max(k, self._free)
        self._free = k + self.ii
        self.busy_cycles += self.ii
        self.in_flight += 1
        self.engine.at_edge(dom, k + self.latency, self._done, fn, args)
        return k + self.latency

    def _done(self, fn: Callable, args: tuple) -> None:
        self.in_flight -= 1
        fn(*args)


class CdcChannel:
    """Hardware link over an :class:`AsyncFifo` that delivers to a callback.

    The consumer side drains one entry per consumer edge.  A producer-side
    overflow queue absorbs bursts so that senders never stall; this is how
    the coherence-facing logic stays non-blocking regardless of the far
    side's speed.  ``mutation="reorder"`` swaps adjacent entries (checker
    validation only).
    """

    def __init__(
        self,
        engine: Engine,
        producer: ClockDomain,
        consumer: ClockDomain,
        deliver: Callable[[Any], None],
        capacity: int = 8,
        sync_stages: int = 2,
        name: str = "chan",
    ):
        self.engine = engine
        self.producer = producer
        self.consumer = consumer
        self.deliver = deliver
        self.fifo = AsyncFifo(engine, producer, consumer, capacity, sync_stages, name)
        self.overflow: deque = deque()
        self.name = name
        self.mutation: str | None = None
        self._armed = False

    def __len__(self) -> int:
        return len(self.fifo) + len(self.overflow)

    def send(self, payload: Any) -> None:
        if self.mutation == "reorder" and self.overflow:
            self.overflow.insert(len(self.overflow) - 1, payload)
        elif self.mutation == "reorder" and len(self.fifo.entries) and not self.fifo.full:
            # swap with the newest queued entry
            last = self.fifo.entries.pop()
            self.fifo.push(payload, last[1])
            self.fifo.entries.append(last)
        elif self.overflow or not self.fifo.push(payload):
            self.overflow.append(payload)
        self._arm()

    def _arm(self) -> None:
        if self._armed or not self.fifo.entries:
            return
        self._armed = True
        eng = self.engine
        t = max(self.fifo.head_visible_at(), self.consumer.next_edge_time(eng.now))
        eng.schedule(t, self.consumer, self._pump)

    def _pump(self) -> None:
        self._armed = False
        item = self.fifo.pop()
        if item is not EMPTY:
            if self.overflow:
                t = self.producer.next_edge_time(self.engine.now)
                self.fifo.push(self.overflow.popleft(), t)
            self.deliver(item)
        if self.fifo.entries:
            self._armed = True
            eng = self.engine
            t = max(self.fifo.head_visible_at(), self.consumer.next_edge_time(eng.now + 1))
            eng.schedule(t, self.consumer, self._pump)
