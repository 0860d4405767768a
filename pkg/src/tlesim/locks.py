"""Test-and-test-and-set locking and transactional lock elision.

Both protocols guard a critical section expressed as a generator of
plain requests (the body). Under TTS the body runs as-is between an
acquire and a release. Under elision the same body runs inside a
transaction: while a transaction is active, every access its core makes
is transactional (there is no plain-access escape mid-transaction, as on
real hardware), so the body text needs no translation layer. The elision
protocol:

1. Probe the lock with ``('tlebegin', addr)``. While it reads held this is
   an ordinary cached spin read and no transaction ever starts, so waiting
   threads burn no aborts. The probe that reads FREE begins the
   transaction within the same event.
2. Re-read the lock transactionally (the subscription). If another thread
   grabbed the lock between probe and subscription, abort explicitly and
   go back to spinning. Once subscribed, any later acquisition of the lock
   invalidates the line and kills the transaction as a conflict.
3. Run the body, commit. Conflict and explicit aborts retry from the spin,
   without bound by default; a buffer overflow means the section cannot
   fit in speculative state no matter how often it retries, so take the
   lock for real and run the body plainly (the slow path).

A fresh body generator is built per attempt; partial executions of an
aborted attempt touched only speculative state, which the abort discarded.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

from .errors import IntegrityError, SimulationError
from .htm import ABORT_CODES, BUFFER_OVERFLOW, EXPLICIT, TransactionAborted

FREE = 0


class TtsLock:
    """One lock word in simulated memory plus its usage counters."""

    def __init__(self, addr):
        self.addr = addr
        self.acquires = 0
        self.fast_sections = 0
        self.slow_sections = 0
        self.aborts = dict.fromkeys(ABORT_CODES, 0)

    def snapshot(self):
        return {
            "acquires": self.acquires,
            "fast_sections": self.fast_sections,
            "slow_sections": self.slow_sections,
            "aborts": dict(self.aborts),
        }


@dataclass
class CsOutcome:
    """How one critical section ended up executing."""

    path: str  # "fast" (committed transaction) or "slow" (held the lock)
    attempts: int  # transactions begun; 0 for a pure TTS section
    aborts: dict = field(default_factory=dict)


def tts_acquire(ctx, lock):
    """Spin until the word reads free, then exchange; retry on a lost race."""
    while True:
        val = yield ("r", lock.addr, 8)
        if val != FREE:
            continue
        old = yield ("rmw", lock.addr, ctx.tid + 1)
        if old == FREE:
            lock.acquires += 1
            return


def tts_release(ctx, lock):
    held_by = ctx.machine.mem_peek(lock.addr, 8)
    if held_by != ctx.tid + 1:
        raise SimulationError(
            f"thread {ctx.tid} releasing a lock it does not hold"
        )
    yield ("w", lock.addr, 8, FREE)


def run_section(ctx, lock, body_factory, retry_cap=None):
    """Run one critical section under the context's lock mode.

    ``body_factory()`` must build a fresh body generator; one is built
    per attempt. Returns ``(CsOutcome, body_result)``. The event interval
    of the execution that took effect (committed attempt, or lock held)
    is recorded with the engine for the overlap audit; spins and doomed
    attempts are excluded. ``retry_cap`` bounds conflict/explicit retries
    as a safety valve for adversarial configurations; the default (None)
    retries without bound.
    """
    engine = ctx.engine
    if ctx.lock_mode == "tts":
        yield from tts_acquire(ctx, lock)
        start_ev = engine.events
        result = yield from body_factory()
        yield from tts_release(ctx, lock)
        lock.slow_sections += 1
        outcome = CsOutcome("slow", 0, {})
        span = (start_ev, engine.events)
    elif ctx.lock_mode == "tle":
        attempts = 0
        aborts = dict.fromkeys(ABORT_CODES, 0)
        while True:
            val = yield ("tlebegin", lock.addr)
            if val != FREE:
                continue  # plain spin; nothing speculative started
            attempts += 1
            begin_ev = engine.events
            code = None
            try:
                subscribed = yield ("r", lock.addr, 8)
                if subscribed != FREE:
                    yield ("txabort", EXPLICIT)
                result = yield from body_factory()
                status, commit_code = yield ("txcommit",)
                if status == "committed":
                    lock.fast_sections += 1
                    outcome = CsOutcome("fast", attempts, aborts)
                    span = (begin_ev, engine.events)
                    break
                code = commit_code
            except TransactionAborted as e:
                code = e.code
            aborts[code] += 1
            lock.aborts[code] += 1
            if code == BUFFER_OVERFLOW:
                yield from tts_acquire(ctx, lock)
                start_ev = engine.events
                result = yield from body_factory()
                yield from tts_release(ctx, lock)
                lock.slow_sections += 1
                outcome = CsOutcome("slow", attempts, aborts)
                span = (start_ev, engine.events)
                break
            if retry_cap is not None and attempts >= retry_cap:
                raise SimulationError(
                    f"thread {ctx.tid}: {attempts} aborted attempts, "
                    f"retry cap hit"
                )
            # Under a strict round-robin schedule, threads aborting each
            # other can settle into a periodic mutual-kill orbit and never
            # commit. A per-thread, per-attempt spin delay shifts their
            # relative phase each retry, doing the job timing noise does
            # on real hardware.
            for _ in range((attempts * (2 * ctx.tid + 1)) % 61):
                yield ("r", lock.addr, 8)
    else:
        raise SimulationError(f"unknown lock mode {ctx.lock_mode!r}")
    engine.sections.append((ctx.tid, outcome.path, span[0], span[1]))
    return outcome, result


def audit_sections(sections):
    """Check the mutual-exclusion structure of recorded section intervals.

    Slow sections must be pairwise disjoint, and no fast (committed
    transactional) section may overlap any slow section. Fast sections
    overlapping each other is expected; that is the concurrency win.
    """
    slows = sorted(
        (start, end) for _, path, start, end in sections if path == "slow"
    )
    for (s1, e1), (s2, e2) in zip(slows, slows[1:]):
        if e1 >= s2:
            raise IntegrityError(
                f"slow sections overlap: [{s1},{e1}] and [{s2},{e2}]"
            )
    starts = [s for s, _ in slows]
    for tid, path, start, end in sections:
        if path != "fast":
            continue
        i = bisect_right(starts, end) - 1
        if i >= 0 and slows[i][1] >= start:
            raise IntegrityError(
                f"fast section [{start},{end}] of thread {tid} overlaps "
                f"slow section [{slows[i][0]},{slows[i][1]}]"
            )
