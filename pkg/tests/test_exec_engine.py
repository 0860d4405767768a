"""Scheduler, cost accounting, random streams, debug checking."""

import pytest

from tlesim.config import SimConfig
from tlesim.engine import Engine, run_direct
from tlesim.errors import SimulationError
from tlesim.htm import TransactionAborted
from tlesim.machine import Machine
from tlesim.prng import Rng, shuffle, splitmix64


# -- splitmix64 --------------------------------------------------------------


def test_splitmix64_reference_vector():
    # first three outputs of the zero-seeded stream, from the published
    # reference implementation
    state = 0
    outs = []
    for _ in range(3):
        state, out = splitmix64(state)
        outs.append(out)
    assert outs == [
        0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F,
    ]


def test_rng_streams_are_independent_and_replayable():
    a1 = [Rng(7, 0).next() for _ in range(1)]
    a2 = [Rng(7, 0).next() for _ in range(1)]
    b = [Rng(7, 1).next() for _ in range(1)]
    assert a1 == a2
    assert a1 != b


def test_below_is_in_range_and_deterministic():
    rng = Rng(3, 5)
    draws = [rng.below(10) for _ in range(1000)]
    assert all(0 <= d < 10 for d in draws)
    replay = Rng(3, 5)
    assert draws == [replay.below(10) for _ in range(1000)]
    assert len(set(draws)) == 10


def test_shuffle_permutes_in_place():
    seq = list(range(20))
    shuffle(seq, Rng(0, 9))
    assert sorted(seq) == list(range(20))
    assert seq != list(range(20))
    again = list(range(20))
    shuffle(again, Rng(0, 9))
    assert seq == again


# -- scheduling ---------------------------------------------------------------


def simple_prog(p, count, marks, tag):
    for i in range(count):
        marks.append(tag)
        yield ("r", p, 8)


def test_round_robin_quantum_one_alternates():
    m = Machine(SimConfig(quantum=1))
    p = m.raw_carve(64)
    marks = []
    e = Engine(m)
    e.run([simple_prog(p, 3, marks, "a"), simple_prog(p, 3, marks, "b")])
    assert marks == ["a", "b", "a", "b", "a", "b"]
    assert e.events == 6


def test_quantum_three_batches_events():
    m = Machine(SimConfig(quantum=3))
    p = m.raw_carve(64)
    marks = []
    e = Engine(m)
    e.run([simple_prog(p, 6, marks, "a"), simple_prog(p, 6, marks, "b")])
    assert marks[:6] == ["a", "a", "a", "b", "b", "b"]


def test_threads_of_unequal_length_all_finish():
    m = Machine(SimConfig(quantum=2))
    p = m.raw_carve(64)
    marks = []
    e = Engine(m)
    e.run([
        simple_prog(p, 2, marks, "a"),
        simple_prog(p, 9, marks, "b"),
        simple_prog(p, 5, marks, "c"),
    ])
    assert marks.count("a") == 2
    assert marks.count("b") == 9
    assert marks.count("c") == 5


def test_too_many_threads_rejected():
    m = Machine(SimConfig())  # four cores
    e = Engine(m)
    progs = [simple_prog(m.raw_carve(64), 1, [], "x") for _ in range(5)]
    with pytest.raises(SimulationError, match="5 threads but only 4 cores"):
        e.run(progs)


def test_quantum_must_be_positive():
    m = Machine(SimConfig())
    with pytest.raises(SimulationError, match="quantum must be >= 1"):
        Engine(m, quantum=0)


def test_trace_records_event_thread_request():
    m = Machine(SimConfig(quantum=1))
    p = m.raw_carve(64)
    e = Engine(m, trace=True)

    def prog():
        yield ("w", p, 8, 1)
        yield ("r", p, 8)

    e.run([prog()])
    assert e.trace == [
        (1, 0, ("w", p, 8, 1)),
        (2, 0, ("r", p, 8)),
    ]


def test_unknown_request_is_named_in_the_error():
    m = Machine(SimConfig())
    e = Engine(m)

    def prog():
        yield ("frobnicate", 1)

    with pytest.raises(SimulationError,
                       match=r"unknown request \('frobnicate', 1\)"):
        e.run([prog()])


def test_errors_carry_event_and_thread():
    m = Machine(SimConfig(quantum=1))
    p = m.raw_carve(64)

    def fine():
        for _ in range(3):
            yield ("r", p, 8)

    def bad():
        yield ("r", p, 8)
        yield ("r", p, 3)  # fine
        yield ("r", p + 61, 8)  # spans a line

    e = Engine(m)
    with pytest.raises(SimulationError) as ei:
        e.run([fine(), bad()])
    assert str(ei.value).startswith("event 6 (thread 1): access at ")
    assert isinstance(ei.value.__cause__, SimulationError)


def test_aborts_are_thrown_into_the_program():
    m = Machine(SimConfig(quantum=1))
    word = m.raw_carve(64)
    hits = []

    def victim():
        yield ("tlebegin", word + 8)
        yield ("r", word, 8)
        try:
            while True:
                yield ("r", word, 8)
        except TransactionAborted as e:
            hits.append(e.code)

    def attacker():
        yield ("w", word, 8, 1)
        yield ("w", word, 8, 2)

    Engine(m).run([victim(), attacker()])
    assert hits == ["conflict"]


# -- cost accounting -----------------------------------------------------------


def test_clock_charges_by_level_and_tlb():
    m = Machine(SimConfig())
    p = m.setup_alloc(0, 64)
    m.plain_read(0, p, 8)  # cold: memory + page walk
    assert m.clock[0] == 200 + 30
    for k in range(1, 6):
        m.plain_read(0, p, 8)  # L1 + TLB1 hits are 4 cycles flat
        assert m.clock[0] == 230 + 4 * k


def test_clock_is_per_core():
    m = Machine(SimConfig())
    p = m.setup_alloc(0, 128)
    m.plain_read(0, p, 8)
    m.plain_read(1, p + 64, 8)
    assert m.clock[0] == m.clock[1] == 230


def test_identical_runs_produce_identical_state():
    def run():
        m = Machine(SimConfig(quantum=2))
        e = Engine(m)
        word = m.raw_carve(64)

        def prog(tid):
            base = yield ("alloc", 2048)
            for i in range(40):
                yield ("w", base + 64 * (i % 16), 8, i)
            yield ("rmw", word, tid + 1)
            yield ("w", word, 8, 0)
            yield ("free", base)

        e.run([prog(0), prog(1), prog(2)])
        return m.counters.snapshot(), list(m.clock), e.events

    assert run() == run()


# -- run_direct and debug checks ------------------------------------------------


def test_run_direct_returns_generator_value():
    m = Machine(SimConfig())

    def prog():
        p = yield ("alloc", 128)
        yield ("w", p, 8, 41)
        v = yield ("r", p, 8)
        yield ("free", p)
        return v + 1

    assert run_direct(m, prog()) == 42
    # fixture replay touches no caches and costs no simulated time
    assert m.counters.accesses == m.counters.accesses.__class__(
        "q", bytes(8 * m.cores))
    assert max(m.clock) == 0


def test_debug_checks_reject_unallocated_heap_access():
    m = Machine(SimConfig(debug_checks=True))
    p = m.setup_alloc(0, 64)
    m.plain_read(0, p, 8)  # live allocation is fine
    m.setup_free(0, p)
    with pytest.raises(SimulationError, match="unallocated address"):
        m.plain_read(0, p, 8)


def test_debug_checks_allow_raw_arena_and_metadata():
    m = Machine(SimConfig(debug_checks=True))
    word = m.raw_carve(64)
    m.plain_write(0, word, 8, 1)
    assert m.plain_read(0, word, 8) == 1
