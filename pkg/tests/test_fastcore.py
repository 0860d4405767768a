"""Compiled access path against the interpreted one, state for state.

The compiled twin mutates the same live containers as the interpreted
code, so equality here is not statistical: after identical programs, every
cache set dict (in insertion order, since order picks future victims),
every counter, every directory entry, and every materialized memory line
must match exactly. A divergence of one means a ported statement drifted.
"""

import dataclasses

import pytest

from tlesim.config import SimConfig
from tlesim.engine import Engine, ThreadCtx
from tlesim.errors import SimulationError
from tlesim.htm import TransactionAborted
from tlesim.locks import TtsLock, run_section
from tlesim.machine import Machine
from tlesim.prng import Rng
from tlesim.workloads import AvlConfig, RingConfig, avl_run, ring_run

_fastcore = pytest.importorskip("tlesim._fastcore")

PURE = SimConfig(fast_core=False)


def full_state(machine, engine):
    """Every mutable surface, with dict order preserved as lists."""
    ch = machine.caches
    return {
        "clock": list(machine.clock),
        "counters": machine.counters.snapshot(),
        "directory": sorted(machine.directory.state.items()),
        "l1": [(lv.hits, lv.misses, lv.evictions,
                [list(s.keys()) for s in lv.sets]) for lv in ch.l1],
        "l2": [(lv.hits, lv.misses, lv.evictions,
                [list(s.keys()) for s in lv.sets]) for lv in ch.l2],
        "l3": (ch.l3.hits, ch.l3.misses, ch.l3.evictions,
               [list(s.keys()) for s in ch.l3.sets]),
        "shadow": [list(d.keys()) for d in machine.caches.shadow],
        "seen": [sorted(s) for s in machine.caches.seen],
        "tlb1": [[list(s.keys()) for s in t] for t in ch.tlb1],
        "tlb2": [[list(s.keys()) for s in t] for t in ch.tlb2],
        "tlb_counters": (list(ch.tlb1_hits), list(ch.tlb1_misses),
                         list(ch.tlb2_hits), list(ch.walks)),
        "arenas": [(a.name, sorted(
            (off, bytes(buf)) for off, buf in a._lines.items()
        )) for a in machine.mem.arenas],
        "txns": [t is None for t in machine.txns],
        "events": engine.events,
        "sections": list(engine.sections),
    }


def mixed_program(machine, engine, results):
    """One thread's worth of every request kind against shared fixtures."""
    lock_addr = machine._mixed_lock.addr

    def prog(ctx):
        tid = ctx.tid
        vals = []
        # plain traffic with reuse and a line conflict
        base = yield ("alloc", 4096)
        for i in range(24):
            yield ("w", base + 64 * (i % 12), 8, i * 7 + tid)
        for i in range(24):
            vals.append((yield ("r", base + 64 * (i % 12), 8)))
        # rmw on a shared word
        old = yield ("rmw", lock_addr + 128, tid + 1)
        vals.append(old)
        yield ("w", lock_addr + 128, 8, 0)
        # elided critical sections over a shared counter line
        def body():
            v = yield ("r", lock_addr + 192, 8)
            yield ("w", lock_addr + 192, 8, v + 1)
            return v
        for _ in range(6):
            out, res = yield from run_section(
                ctx, machine._mixed_lock, body)
            vals.append((out.path, res))
        # a transaction with speculative alloc/free and a commit
        yield ("tlebegin", lock_addr + 256)
        p = yield ("txalloc", 256)
        yield ("txw", p, 8, tid + 100)
        vals.append((yield ("txr", p, 8)))
        yield ("txfree", p)
        status = yield ("txcommit",)
        vals.append(status[0])
        yield ("free", base)
        results[tid] = vals
        return tid

    return prog


def run_mixed(fast):
    cfg = SimConfig(quantum=3) if fast else SimConfig(
        quantum=3, fast_core=False)
    m = Machine(cfg)
    e = Engine(m)
    m._mixed_lock = TtsLock(m.raw_carve(64))
    m.raw_carve(512)  # the shared words live beside the lock word
    results = {}
    prog = mixed_program(m, e, results)
    ctxs = [ThreadCtx(e, t, Rng(0, t), "tle") for t in range(3)]
    e.run([prog(c) for c in ctxs])
    return full_state(m, e), results


def test_mixed_program_full_state_identical():
    fast_state, fast_results = run_mixed(fast=True)
    pure_state, pure_results = run_mixed(fast=False)
    assert fast_results == pure_results
    for key in pure_state:
        assert fast_state[key] == pure_state[key], key


@pytest.mark.parametrize("cfg", [
    RingConfig(node_count=96, iterations=25, node_size=1016,
               allocator="glibc", lock="tle"),
    RingConfig(node_count=128, iterations=20, node_size=64,
               allocator="cia", lock="tle"),
    RingConfig(node_count=150, iterations=15, node_size=640,
               allocator="rand", lock="tts"),
], ids=["glibc-tle", "cia-tle", "rand-tts"])
def test_ring_stats_identical(cfg):
    fast = ring_run(cfg)
    pure = ring_run(cfg, sim=PURE)
    assert dataclasses.asdict(fast) == dataclasses.asdict(pure)


@pytest.mark.parametrize("cfg", [
    AvlConfig(threads=3, ops_per_thread=400, initial_population=1000,
              key_range=4096, allocator="glibc", lock="tle"),
    AvlConfig(threads=2, ops_per_thread=400, node_size=64,
              initial_population=800, key_range=2048,
              allocator="cia", lock="tts"),
    AvlConfig(threads=4, ops_per_thread=300, node_size=2040,
              initial_population=600, key_range=2048,
              allocator="glibc", lock="tle"),
], ids=["glibc-tle", "cia-tts", "glibc-tle-2040"])
def test_avl_stats_identical(cfg):
    fast = avl_run(cfg)
    pure = avl_run(cfg, sim=PURE)
    assert dataclasses.asdict(fast) == dataclasses.asdict(pure)


def test_trace_capture_identical():
    def run(fast):
        cfg = SimConfig() if fast else SimConfig(fast_core=False)
        m = Machine(cfg)
        e = Engine(m, trace=True)

        def prog():
            p = yield ("alloc", 1024)
            for i in range(8):
                yield ("w", p + 64 * i, 4, i)
            total = 0
            for i in range(8):
                total += yield ("r", p + 64 * i, 4)
            yield ("free", p)
            return total

        e.run([prog()])
        return e.trace

    assert run(True) == run(False)


def test_fast_path_config_gating():
    assert Machine(SimConfig()).fastpath is not None
    assert Machine(SimConfig(fast_core=False)).fastpath is None
    # the compiled path skips the live-address validation, so debug
    # checking forces the interpreted one
    assert Machine(SimConfig(debug_checks=True)).fastpath is None


def test_custom_evict_hook_falls_back_and_matches():
    def run(hooked):
        m = Machine(SimConfig())
        calls = []
        if hooked:
            orig = m.caches.evict_hook

            def spy(core, level, line):
                calls.append((core, level, line))
                return orig(core, level, line)

            m.caches.evict_hook = spy
        e = Engine(m)

        def prog():
            p = yield ("alloc", 64 * 1024)
            # 16 lines per set across 64 sets overflows 8 ways
            for i in range(1024):
                yield ("w", p + 64 * i, 8, i)
            for i in range(1024):
                yield ("r", p + 64 * i, 8)
            return 0

        e.run([prog()])
        return full_state(m, e), calls

    hooked_state, calls = run(hooked=True)
    plain_state, _ = run(hooked=False)
    assert calls, "the spy hook never fired, so the fallback did not happen"
    for key in plain_state:
        assert hooked_state[key] == plain_state[key], key


@pytest.mark.parametrize("req,message", [
    (("r", 0, 0), "access length 0 out of range 1..8"),
    (("r", 0, 9), "access length 9 out of range 1..8"),
    (("w", 60, 8, 1), "access at 0x3c len 8 spans a line"),
    (("r", 64, 8), "access outside any arena: 0x40"),
], ids=["len0", "len9", "span", "unmapped"])
def test_error_messages_match_interpreted(req, message):
    def run(fast):
        cfg = SimConfig() if fast else SimConfig(fast_core=False)
        m = Machine(cfg)
        e = Engine(m)

        def prog():
            yield req

        with pytest.raises(SimulationError) as ei:
            e.run([prog()])
        return str(ei.value)

    fast_msg = run(True)
    assert fast_msg == run(False)
    assert fast_msg == f"event 1 (thread 0): {message}"


@pytest.mark.parametrize("kind,value,exc_type", [
    ("w", 256, OverflowError),
    ("w", -1, OverflowError),
    ("w", "nope", AttributeError),
    ("txw", 256, OverflowError),
], ids=["plain-over", "plain-neg", "plain-type", "tx-over"])
def test_value_errors_match_interpreted(kind, value, exc_type):
    # bad values are not simulation errors; both paths let them escape
    # the engine untouched, with the access already counted
    def run(fast):
        cfg = SimConfig() if fast else SimConfig(fast_core=False)
        m = Machine(cfg)
        e = Engine(m)

        def prog():
            p = yield ("alloc", 64)
            if kind == "txw":
                yield ("tlebegin", p + 8)
            yield (kind, p, 1, value)

        with pytest.raises(exc_type) as ei:
            e.run([prog()])
        return str(ei.value), full_state(m, e)

    fast_msg, fast_state = run(True)
    pure_msg, pure_state = run(False)
    assert fast_msg == pure_msg
    for key in pure_state:
        assert fast_state[key] == pure_state[key], key


def test_husk_after_remote_conflict_matches():
    # a remote write kills the reader's transaction; the abort must be
    # delivered at the victim's next access on both paths, same tallies
    def run(fast):
        cfg = SimConfig(quantum=1) if fast else SimConfig(
            quantum=1, fast_core=False)
        m = Machine(cfg)
        e = Engine(m)
        shared = m.raw_carve(64)
        spare = m.raw_carve(64)
        seen = []

        def victim():
            yield ("tlebegin", shared + 8)
            yield ("r", shared, 8)
            try:
                for _ in range(8):
                    yield ("r", spare, 8)
            except TransactionAborted as exc:
                seen.append(exc.code)

        def attacker():
            yield ("r", spare, 8)
            yield ("w", shared, 8, 42)

        e.run([victim(), attacker()])
        return seen, m.counters.snapshot(), [t is None for t in m.txns]

    assert run(True) == run(False)
