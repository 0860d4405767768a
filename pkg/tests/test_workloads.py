"""Ring and AVL benchmarks: integrity oracles, determinism, lock modes.

The AVL correctness oracle is an ordinary Python dict driven by the same
operation stream; avl_check independently re-derives every stored balance
factor from subtree heights, so a rotation bug cannot hide behind the
shadow comparison.
"""

import pytest
from hypothesis import given, settings, strategies as st

from tlesim.config import SimConfig
from tlesim.engine import run_direct
from tlesim.errors import ConfigError, IntegrityError
from tlesim.machine import Machine
from tlesim.workloads import (
    AVL_NODE_HEADER, AvlConfig, AvlTree, OFF_NEXT, OFF_PB, OFF_VAL,
    RingConfig, STORE_FIRST, STORE_LAST, avl_check, avl_keys, avl_run,
    avl_value_of, ring_body, ring_run, ring_setup, store_shift_demo,
    tree_signature,
)


# -- ring ---------------------------------------------------------------------


def test_ring_links_form_one_cycle():
    m = Machine(SimConfig(), allocator="glibc", seed=0)
    ring = ring_setup(m, RingConfig(node_count=64, node_size=256))
    seen = set()
    node = ring.start
    for _ in range(64):
        assert node not in seen
        seen.add(node)
        node = m.mem_peek(node + OFF_NEXT, 8)
    assert node == ring.start
    assert seen == set(ring.bases)


def test_ring_walk_detects_cut_link():
    m = Machine(SimConfig(), allocator="glibc", seed=0)
    ring = ring_setup(m, RingConfig(node_count=32, node_size=128))
    third = m.mem_peek(
        m.mem_peek(ring.start + OFF_NEXT, 8) + OFF_NEXT, 8)
    m.mem_poke(third + OFF_NEXT, 8, 0)
    with pytest.raises(IntegrityError, match="null link"):
        run_direct(m, ring_body(ring.start, 32))


def test_ring_walk_detects_short_cycle():
    m = Machine(SimConfig(), allocator="glibc", seed=0)
    ring = ring_setup(m, RingConfig(node_count=32, node_size=128))
    second = m.mem_peek(ring.start + OFF_NEXT, 8)
    m.mem_poke(second + OFF_NEXT, 8, ring.start)
    with pytest.raises(IntegrityError, match="ring closed after 2 steps"):
        run_direct(m, ring_body(ring.start, 32))


def test_ring_histograms_tell_the_allocators_apart():
    glibc = ring_run(RingConfig(node_count=128, iterations=2,
                                node_size=1016, allocator="glibc"))
    cia = ring_run(RingConfig(node_count=128, iterations=2,
                              node_size=1016, allocator="cia"))
    assert glibc.extra["index_histogram_nonzero_bins"] == 4
    assert glibc.extra["index_histogram_max"] == 32
    assert cia.extra["index_histogram_nonzero_bins"] == 64
    assert cia.extra["footprint_lines"] == 128


def test_ring_under_tts_never_speculates():
    s = ring_run(RingConfig(node_count=64, iterations=10, lock="tts"))
    assert sum(s.counters["tx_started"]) == 0
    assert s.slow_sections == 10
    assert s.fast_sections == 0


def test_ring_fits_or_overflows_by_node_size():
    small = ring_run(RingConfig(node_count=128, iterations=10,
                                node_size=64, allocator="glibc", lock="tle"))
    assert small.fast_sections == 10  # 128 lines sit comfortably in L1
    big = ring_run(RingConfig(node_count=128, iterations=10,
                              node_size=1016, allocator="glibc", lock="tle"))
    assert big.slow_sections == 10  # 4 indices x 8 ways cannot hold 128
    assert sum(big.counters["aborts_buffer_overflow"]) >= 10


def test_ring_deterministic_across_runs():
    cfg = RingConfig(node_count=100, iterations=8, node_size=640,
                     allocator="rand", lock="tle", seed=3)
    a = ring_run(cfg)
    b = ring_run(cfg)
    assert a == b


def test_ring_config_validation():
    with pytest.raises(ConfigError, match="node_size must be >= 16"):
        ring_run(RingConfig(node_size=8))
    with pytest.raises(ConfigError, match="node_count"):
        ring_run(RingConfig(node_count=0))
    with pytest.raises(ConfigError, match="lock must be one of"):
        ring_run(RingConfig(lock="mutex"))


# -- AVL against the dict oracle ------------------------------------------------


def fresh_tree(node_size=64, key_range=1 << 32):
    m = Machine(SimConfig(), allocator="glibc", seed=0)
    return m, AvlTree(m, node_size, key_range)


def apply_op(m, tree, oracle, kind, key):
    if kind == "i":
        added = run_direct(m, tree.insert(key, avl_value_of(key)))
        assert added == (key not in oracle)
        oracle[key] = avl_value_of(key)
    elif kind == "d":
        removed = run_direct(m, tree.delete(key))
        assert removed == (key in oracle)
        oracle.pop(key, None)
    else:
        got = run_direct(m, tree.lookup(key))
        assert got == oracle.get(key)


def test_known_shape_after_ascending_inserts():
    m, tree = fresh_tree()
    for k in range(1, 8):
        run_direct(m, tree.insert(k, avl_value_of(k)))
    # seven ascending keys balance into the complete tree rooted at 4
    sig = tree_signature(m, tree.desc)
    keys_in_preorder = [e[0] for e in sig if e is not None]
    assert keys_in_preorder == [4, 2, 1, 3, 6, 5, 7]
    assert all(e is None or e[1] == 0 for e in sig)
    assert avl_check(m, tree.desc, m.allocator) == 7
    assert avl_keys(m, tree.desc) == list(range(1, 8))


def test_mixed_ops_match_dict_oracle():
    m, tree = fresh_tree(key_range=256)
    oracle = {}
    from tlesim.prng import Rng
    rng = Rng(11, 0)
    for i in range(10_000):
        kind = "idl"[rng.below(3)]
        apply_op(m, tree, oracle, kind, rng.below(256))
    assert avl_check(m, tree.desc, m.allocator, oracle.keys()) == len(oracle)
    assert avl_keys(m, tree.desc) == sorted(oracle)


@settings(max_examples=60, deadline=None)
@given(st.lists(
    st.tuples(st.sampled_from("idl"), st.integers(0, 15)), max_size=50))
def test_any_op_sequence_keeps_invariants(ops):
    m, tree = fresh_tree(key_range=16)
    oracle = {}
    for kind, key in ops:
        apply_op(m, tree, oracle, kind, key)
        avl_check(m, tree.desc, m.allocator, oracle.keys())


def test_check_catches_corrupted_balance():
    m, tree = fresh_tree()
    for k in range(10):
        run_direct(m, tree.insert(k, avl_value_of(k)))
    root = m.mem_peek(tree.desc, 8)
    pb = m.mem_peek(root + OFF_PB, 8)
    m.mem_poke(root + OFF_PB, 8, (pb & ~7) | (((pb & 7) + 1) % 5))
    with pytest.raises(IntegrityError, match="balance"):
        avl_check(m, tree.desc, m.allocator)


def test_check_catches_corrupted_payload():
    m, tree = fresh_tree()
    for k in range(5):
        run_direct(m, tree.insert(k, avl_value_of(k)))
    root = m.mem_peek(tree.desc, 8)
    m.mem_poke(root + OFF_VAL, 4, 12345)
    with pytest.raises(IntegrityError, match="payload mismatch"):
        avl_check(m, tree.desc, m.allocator)


def test_check_catches_wrong_count():
    m, tree = fresh_tree()
    for k in range(5):
        run_direct(m, tree.insert(k, avl_value_of(k)))
    m.mem_poke(tree.count_addr, 8, 4)
    with pytest.raises(IntegrityError, match="descriptor count 4 != 5"):
        avl_check(m, tree.desc, m.allocator)


# -- threaded runs ---------------------------------------------------------------


@pytest.mark.parametrize("allocator", ["glibc", "cia", "rand"])
@pytest.mark.parametrize("lock", ["tle", "tts"])
def test_threaded_store_stays_consistent(allocator, lock):
    s = avl_run(AvlConfig(
        threads=4, ops_per_thread=250, initial_population=500,
        key_range=2048, allocator=allocator, lock=lock))
    assert s.extra["final_count"] > 0
    assert sum(s.extra["op_tally"].values()) == 1000
    if lock == "tts":
        assert sum(s.counters["tx_started"]) == 0
        assert s.slow_sections == 1000
    else:
        assert s.fast_sections > 0


def test_lock_modes_agree_single_threaded():
    base = dict(threads=1, ops_per_thread=1500, initial_population=400,
                key_range=1024, allocator="glibc")
    tle = avl_run(AvlConfig(lock="tle", **base))
    tts = avl_run(AvlConfig(lock="tts", **base))
    assert tle.extra["tree_shape_digest"] == tts.extra["tree_shape_digest"]
    assert tle.extra["final_count"] == tts.extra["final_count"]
    assert tle.extra["op_tally"] == tts.extra["op_tally"]


def test_avl_run_deterministic():
    cfg = AvlConfig(threads=3, ops_per_thread=300, initial_population=300,
                    key_range=512, allocator="cia", lock="tle", seed=5)
    assert avl_run(cfg) == avl_run(cfg)


def test_midrun_structural_checks_pass():
    avl_run(AvlConfig(threads=2, ops_per_thread=200,
                      initial_population=200, key_range=512),
            check_every=40)


def test_avl_config_validation():
    with pytest.raises(ConfigError, match="node_size must be >="):
        avl_run(AvlConfig(node_size=AVL_NODE_HEADER - 1))
    with pytest.raises(ConfigError, match="mix must be three shares"):
        avl_run(AvlConfig(mix=(50, 50, 10)))
    with pytest.raises(ConfigError, match="cores"):
        avl_run(AvlConfig(threads=9))


# -- store ordering ---------------------------------------------------------------


def test_store_first_overflows_at_fan_20():
    out = store_shift_demo(STORE_FIRST, 20)
    assert out["status"] == "aborted"
    assert out["abort_code"] == "buffer_overflow"
    assert not out["store_visible"]


def test_store_last_commits_at_fan_20():
    out = store_shift_demo(STORE_LAST, 20)
    assert out["status"] == "committed"
    assert out["store_visible"]


def test_store_first_fits_within_associativity():
    out = store_shift_demo(STORE_FIRST, 7)  # store + 7 loads = 8 ways
    assert out["status"] == "committed"


def test_store_shift_validation():
    with pytest.raises(ConfigError, match="order must be"):
        store_shift_demo("store-middle", 4)
    with pytest.raises(ConfigError, match="fan must be >= 1"):
        store_shift_demo(STORE_FIRST, 0)
