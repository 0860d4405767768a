"""Thread scheduling: generators yielding requests, executed round-robin.

A thread is a Python generator. Each value it yields is one request tuple;
executing one request is one global event. The scheduler walks threads in
id order, running ``quantum`` events per turn (default 1: strict
interleaving). Request results come back through ``send``; a transactional
request whose transaction has died comes back as ``TransactionAborted``
thrown into the generator at the yield point, where the lock elision
wrapper catches it.

Request vocabulary (thread id doubles as core id):

    ('r', addr, n) -> int            read
    ('w', addr, n, value)            write
    ('rmw', addr, new) -> old        lock swap: stores new only if old == 0
    ('tlebegin', lockaddr) -> val    lock probe fused with txn begin on FREE
    ('txcommit',) -> (status, code)  commit attempt
    ('txabort', code)                program-initiated abort
    ('alloc', size) -> base          allocate, metadata writes simulated
    ('free', addr)                   free, metadata writes simulated
    ('txr', 'txw', 'txalloc', 'txfree')  explicitly transactional variants

Reads, writes, allocs and frees are transactional automatically while the
issuing core's transaction is active, so workload bodies yield the same
tuples whether they run under a held lock or inside a speculative
attempt. The tx-prefixed forms additionally insist on an active
transaction and are used where speculation itself is the subject.

``run_direct`` executes the same vocabulary against bare memory with no
caches, coherence, clocks or stats: it exists so fixture construction can
reuse workload generators without polluting measurements.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import SimulationError
from .htm import TransactionAborted
from .prng import Rng

try:
    from ._fastcore import run_fast as _run_fast
except ImportError:  # extension not built; interpreted path only
    _run_fast = None


class Engine:
    """Round-robin executor over one machine."""

    def __init__(self, machine, quantum=None, trace=False):
        self.machine = machine
        self.quantum = machine.cfg.quantum if quantum is None else quantum
        if self.quantum < 1:
            raise SimulationError(f"quantum must be >= 1, got {self.quantum}")
        self.events = 0
        self.sections = []  # (tid, path, start_event, end_event)
        self.trace = [] if trace else None

    def run(self, programs):
        """Drive generators to completion; one yielded request = one event."""
        m = self.machine
        if (
            _run_fast is not None
            and m.fastpath is not None
            # the compiled path inlines these two observers, so it only
            # applies while the machine's own ones are installed
            and m.caches.evict_hook == m._on_evict
            and m.caches.inval_hook == m._on_invalidate
        ):
            return _run_fast(self, programs)
        if len(programs) > self.machine.cores:
            raise SimulationError(
                f"{len(programs)} threads but only {self.machine.cores} cores"
            )
        inbox = [("start", None)] * len(programs)
        alive = [True] * len(programs)
        remaining = len(programs)
        threads = list(enumerate(programs))
        quantum = self.quantum
        exec_one = self._exec
        while remaining:
            for tid, gen in threads:
                if not alive[tid]:
                    continue
                for _ in range(quantum):
                    kind, payload = inbox[tid]
                    try:
                        if kind == "value":
                            req = gen.send(payload)
                        elif kind == "start":
                            req = next(gen)
                        else:
                            req = gen.throw(payload)
                    except StopIteration:
                        alive[tid] = False
                        remaining -= 1
                        break
                    self.events += 1
                    if self.trace is not None:
                        self.trace.append((self.events, tid, req))
                    try:
                        inbox[tid] = ("value", exec_one(tid, req))
                    except TransactionAborted as e:
                        inbox[tid] = ("exc", e)
                    except SimulationError as e:
                        raise SimulationError(
                            f"event {self.events} (thread {tid}): {e}"
                        ) from e
        return self

    def _exec(self, core, req):
        m = self.machine
        op = req[0]
        if op == "r":
            return m.read(core, req[1], req[2])
        if op == "w":
            m.write(core, req[1], req[2], req[3])
            return None
        if op == "rmw":
            return m.lock_rmw(core, req[1], req[2])
        if op == "tlebegin":
            return m.tle_begin(core, req[1])
        if op == "txcommit":
            return m.tx_commit(core)
        if op == "txabort":
            raise TransactionAborted(core, m.tx_abort(core, req[1]))
        if op == "txr":
            return m.tx_read(core, req[1], req[2])
        if op == "txw":
            m.tx_write(core, req[1], req[2], req[3])
            return None
        if op == "alloc":
            return m.alloc(core, req[1])
        if op == "free":
            m.free(core, req[1])
            return None
        if op == "txalloc":
            return m.tx_alloc(core, req[1])
        if op == "txfree":
            m.tx_free(core, req[1])
            return None
        raise SimulationError(f"unknown request {req!r}")


@dataclass
class ThreadCtx:
    """What a workload generator needs to know about where it runs."""

    engine: Engine
    tid: int
    rng: Rng
    lock_mode: str = "tts"  # "tts" or "tle"

    @property
    def machine(self):
        return self.engine.machine

    @property
    def core(self):
        return self.tid


def make_contexts(engine, nthreads, seed, lock_mode):
    """One context per thread, each with its own derived random stream."""
    return [
        ThreadCtx(engine, tid, Rng(seed, tid), lock_mode)
        for tid in range(nthreads)
    ]


def run_direct(machine, gen, thread=0):
    """Drain one generator against bare memory; returns its return value.

    Dispatch is inlined: fixture construction replays millions of events,
    so the per-event layers the measured path affords are skipped here.
    """
    mem = machine.mem
    allocator = machine.allocator
    result = None
    started = False
    while True:
        try:
            req = gen.send(result) if started else next(gen)
            started = True
        except StopIteration as e:
            return e.value
        op = req[0]
        if op == "r" or op == "txr":
            result = mem.read(req[1], req[2])
        elif op == "w" or op == "txw":
            mem.write(req[1], req[2], req[3])
            result = None
        elif op == "alloc" or op == "txalloc":
            result = allocator.alloc(req[1], thread)
        elif op == "free" or op == "txfree":
            allocator.free(req[1], thread)
            result = None
        elif op == "rmw":
            result = mem.read(req[1], 8)
            if result == 0:
                mem.write(req[1], 8, req[2])
        else:
            raise SimulationError(
                f"request {req!r} not usable in direct execution"
            )


@dataclass
class RunStats:
    """Everything a measured run produces, for reporting and assertions."""

    cycles: int
    ops: int
    events: int
    counters: dict
    sections: list
    fast_sections: int
    slow_sections: int
    extra: dict = field(default_factory=dict)

    @property
    def throughput_proxy(self):
        """Completed operations per cycle of the busiest core."""
        return self.ops / self.cycles if self.cycles else 0.0

    @property
    def l1_misses(self):
        c = self.counters
        return (sum(c["miss_cold"]) + sum(c["miss_conflict"])
                + sum(c["miss_capacity"]))


def make_stats(machine, engine, ops, locks=(), extra=None):
    return RunStats(
        cycles=max(machine.clock),
        ops=ops,
        events=engine.events,
        counters=machine.counters.snapshot(),
        sections=list(engine.sections),
        fast_sections=sum(lk.fast_sections for lk in locks),
        slow_sections=sum(lk.slow_sections for lk in locks),
        extra=extra or {},
    )
