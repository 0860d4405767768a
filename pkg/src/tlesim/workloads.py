"""The two benchmarks (ring traversal, concurrent AVL key-value store)
and the store-ordering microdemo.

Workload bodies are generators of plain requests; the lock wrappers run
them under TTS or elision and the engine owns all interleaving. Bodies
never touch simulated state directly, so a body aborted mid-flight and
retried replays identically.

The AVL store keeps a Python-side shadow key set as a correctness oracle.
Under the default quantum of 1, sections are observed in commit order
(each thread's bookkeeping runs before its next event, and round-robin
turn order preserves the commit order across threads), so every section's
result is checked exactly against the shadow. Larger quanta can reorder
the observations, so there the shadow audit is skipped and only the
structural checks run.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .config import SimConfig
from .engine import Engine, ThreadCtx, make_contexts, make_stats, run_direct
from .errors import ConfigError, IntegrityError, SimulationError
from .htm import TransactionAborted
from .locks import TtsLock, audit_sections, run_section
from .machine import Machine
from .mem import audit_no_overlap, index_histogram
from .prng import Rng, STREAM_SETUP, shuffle

# Ring node layout: only the first 12 bytes are ever accessed.
OFF_NEXT = 0
OFF_VALUE = 8
RING_LOCK_REQUEST = 120  # lock word block, allocated before the nodes

# AVL node layout. balance+2 sits in the low 3 bits of the parent word
# so a node header is 32 bytes and the hot fields share one line.
OFF_LEFT = 0
OFF_RIGHT = 8
OFF_PB = 16
OFF_KEY = 24
OFF_VAL = 28
AVL_NODE_HEADER = 32

_LOCK_MODES = ("tts", "tle")


def _check_lock_mode(mode):
    if mode not in _LOCK_MODES:
        raise ConfigError(f"lock must be one of {_LOCK_MODES}, got {mode!r}")


# ---------------------------------------------------------------------------
# Ring traversal benchmark
# ---------------------------------------------------------------------------

@dataclass
class RingConfig:
    node_count: int = 128
    node_size: int = 64
    iterations: int = 10_000
    seed: int = 0
    allocator: str = "glibc"
    lock: str = "tts"

    def validate(self):
        if self.node_size < 16:
            raise ConfigError(
                f"node_size must be >= 16 to hold the link and value, "
                f"got {self.node_size}"
            )
        if self.node_count < 1:
            raise ConfigError("node_count must be >= 1")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        _check_lock_mode(self.lock)


@dataclass
class RingHandle:
    lock_addr: int
    bases: list
    start: int
    histogram: list


def ring_setup(machine, cfg):
    """Allocate lock then nodes, shuffle, and link the nodes circularly."""
    cfg.validate()
    lock_addr = machine.setup_alloc(0, RING_LOCK_REQUEST)
    machine.mem_poke(lock_addr, 8, 0)
    bases = [
        machine.setup_alloc(0, cfg.node_size) for _ in range(cfg.node_count)
    ]
    order = list(range(cfg.node_count))
    shuffle(order, Rng(cfg.seed, STREAM_SETUP))
    for i in range(cfg.node_count):
        a = bases[order[i]]
        b = bases[order[(i + 1) % cfg.node_count]]
        machine.mem_poke(a + OFF_NEXT, 8, b)
    hist = index_histogram(bases, machine.caches.gl1)
    return RingHandle(lock_addr, bases, bases[order[0]], hist)


def ring_body(start, node_count):
    """One full walk: read each Next, zero each Value, end back at start."""
    w = start
    for step in range(node_count):
        nxt = yield ("r", w + OFF_NEXT, 8)
        yield ("w", w + OFF_VALUE, 4, 0)
        if nxt == 0:
            raise IntegrityError(f"ring broken: null link at node {w:#x}")
        if nxt == start and step != node_count - 1:
            raise IntegrityError(
                f"ring closed after {step + 1} steps, expected {node_count}"
            )
        w = nxt
    if w != start:
        raise IntegrityError("ring walk did not return to its start node")


def _record_plain(machine, body):
    """Run a plain body against bare memory, recording its touched
    lines and pages. Used to measure footprint without disturbing the
    caches."""
    lines, pages = set(), set()
    result = None
    started = False
    while True:
        try:
            req = body.send(result) if started else next(body)
            started = True
        except StopIteration:
            break
        op, addr = req[0], req[1]
        if op == "r":
            result = machine.mem_peek(addr, req[2])
        elif op == "w":
            machine.mem_poke(addr, req[2], req[3])
            result = None
        else:
            raise SimulationError(
                f"footprint recording expects plain r/w, got {op!r}"
            )
        lines.add(addr >> 6)
        pages.add(addr >> 12)
    return lines, pages


def _ring_program(ctx, lock, ring, cfg, tlb_marks):
    counters = ctx.machine.counters
    for _ in range(cfg.iterations):
        yield from run_section(
            ctx, lock, lambda: ring_body(ring.start, cfg.node_count)
        )
        tlb_marks.append(counters.tlb2_hits[0] + counters.walks[0])


def ring_run(cfg, sim=None):
    """Iterate the ring on one core under the configured lock."""
    cfg.validate()
    machine = Machine(sim or SimConfig(), allocator=cfg.allocator,
                      seed=cfg.seed)
    ring = ring_setup(machine, cfg)
    engine = Engine(machine)
    ctx = ThreadCtx(engine, 0, Rng(cfg.seed, 0), cfg.lock)
    lock = TtsLock(ring.lock_addr)
    tlb_marks = []
    engine.run([_ring_program(ctx, lock, ring, cfg, tlb_marks)])
    audit_sections(engine.sections)
    lines, pages = _record_plain(
        machine, ring_body(ring.start, cfg.node_count)
    )
    if cfg.iterations >= 2:
        steady_tlb = tlb_marks[-1] - tlb_marks[-2]
    else:
        steady_tlb = tlb_marks[-1]
    extra = {
        "histogram": ring.histogram,
        "index_histogram_max": max(ring.histogram),
        "index_histogram_nonzero_bins": sum(
            1 for c in ring.histogram if c
        ),
        "footprint_lines": len(lines),
        "footprint_pages": len(pages),
        "steady_dtlb_misses_per_iteration": steady_tlb,
    }
    return make_stats(machine, engine, ops=cfg.iterations, locks=(lock,),
                      extra=extra)


# ---------------------------------------------------------------------------
# Concurrent AVL key-value store
# ---------------------------------------------------------------------------

@dataclass
class AvlConfig:
    threads: int = 4
    ops_per_thread: int = 100_000
    node_size: int = 64
    key_range: int = 65536
    mix: tuple = (30, 30, 40)  # insert / delete / lookup percentages
    initial_population: int = 32767
    seed: int = 0
    allocator: str = "glibc"
    lock: str = "tle"

    def validate(self):
        if self.node_size < AVL_NODE_HEADER:
            raise ConfigError(
                f"node_size must be >= {AVL_NODE_HEADER}, got {self.node_size}"
            )
        if sum(self.mix) != 100 or len(self.mix) != 3 or min(self.mix) < 0:
            raise ConfigError(f"mix must be three shares of 100, got {self.mix}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not 0 <= self.initial_population < self.key_range:
            raise ConfigError("initial_population must fit in the key range")
        _check_lock_mode(self.lock)


def avl_value_of(key):
    """The payload stored for a key; a fixed function so lookups and the
    integrity check can verify values, not just membership."""
    return (key * 2654435761) & 0xFFFFFFFF


class AvlTree:
    """Intrusive AVL tree living in simulated memory.

    The root pointer and the element count each sit alone in a 128-byte
    aligned sector, so the often-written count shares no line (or adjacent
    prefetch pair) with anything else. Mutating bodies write the count as
    their very last access.
    """

    def __init__(self, machine, node_size, key_range, check_every=0):
        if node_size < AVL_NODE_HEADER:
            raise ConfigError(f"node_size must be >= {AVL_NODE_HEADER}")
        self.machine = machine
        self.node_size = node_size
        self.key_range = key_range
        self.desc = machine.raw_carve(256, 128)
        self.count_addr = self.desc + 128
        self.lock = TtsLock(machine.raw_carve(64, 64))
        machine.mem_poke(self.desc, 8, 0)
        machine.mem_poke(self.count_addr, 8, 0)
        machine.mem_poke(self.lock.addr, 8, 0)
        self.shadow = set()
        self.strict_audit = True
        self.check_every = check_every
        self.completed = 0
        self.op_tally = {"insert": 0, "delete": 0, "lookup": 0}

    # -- packed parent/balance field -----------------------------------

    def _read_pb(self, node):
        pb = yield ("r", node + OFF_PB, 8)
        return pb >> 3, (pb & 7) - 2

    def _write_pb(self, node, parent, bal):
        if not -2 <= bal <= 2:
            raise IntegrityError(
                f"balance {bal} out of representable range at {node:#x}"
            )
        yield ("w", node + OFF_PB, 8, (parent << 3) | (bal + 2))

    def _replace_child(self, parent, old, new):
        if parent == 0:
            yield ("w", self.desc, 8, new)
            return
        pl = yield ("r", parent + OFF_LEFT, 8)
        side = OFF_LEFT if pl == old else OFF_RIGHT
        yield ("w", parent + side, 8, new)

    # -- rotations ------------------------------------------------------

    # Balance updates follow the height algebra of the rotation, valid
    # for the transient +-2 values seen mid-rebalance:
    #   left:  xb' = xb - 1 - max(yb, 0);  yb' = yb - 1 + min(xb', 0)
    #   right: xb' = xb + 1 - min(yb, 0);  yb' = yb + 1 + max(xb', 0)

    def _rotate_left(self, x, x_parent, x_bal):
        y = yield ("r", x + OFF_RIGHT, 8)
        _, y_bal = yield from self._read_pb(y)
        t = yield ("r", y + OFF_LEFT, 8)
        yield ("w", x + OFF_RIGHT, 8, t)
        if t:
            _, t_bal = yield from self._read_pb(t)
            yield from self._write_pb(t, x, t_bal)
        yield ("w", y + OFF_LEFT, 8, x)
        nxb = x_bal - 1 - max(y_bal, 0)
        nyb = y_bal - 1 + min(nxb, 0)
        yield from self._write_pb(x, y, nxb)
        yield from self._write_pb(y, x_parent, nyb)
        yield from self._replace_child(x_parent, x, y)
        return y, nyb

    def _rotate_right(self, x, x_parent, x_bal):
        y = yield ("r", x + OFF_LEFT, 8)
        _, y_bal = yield from self._read_pb(y)
        t = yield ("r", y + OFF_RIGHT, 8)
        yield ("w", x + OFF_LEFT, 8, t)
        if t:
            _, t_bal = yield from self._read_pb(t)
            yield from self._write_pb(t, x, t_bal)
        yield ("w", y + OFF_RIGHT, 8, x)
        nxb = x_bal + 1 - min(y_bal, 0)
        nyb = y_bal + 1 + max(nxb, 0)
        yield from self._write_pb(x, y, nxb)
        yield from self._write_pb(y, x_parent, nyb)
        yield from self._replace_child(x_parent, x, y)
        return y, nyb

    def _rebalance(self, node, parent, bal):
        if bal > 0:
            r = yield ("r", node + OFF_RIGHT, 8)
            _, rb = yield from self._read_pb(r)
            if rb < 0:
                yield from self._rotate_right(r, node, rb)
            return (yield from self._rotate_left(node, parent, bal))
        l = yield ("r", node + OFF_LEFT, 8)
        _, lb = yield from self._read_pb(l)
        if lb > 0:
            yield from self._rotate_left(l, node, lb)
        return (yield from self._rotate_right(node, parent, bal))

    # -- retracing ------------------------------------------------------

    def _retrace_insert(self, node):
        child = node
        parent, _ = yield from self._read_pb(child)
        while parent:
            p_parent, p_bal = yield from self._read_pb(parent)
            pl = yield ("r", parent + OFF_LEFT, 8)
            p_bal += -1 if pl == child else 1
            if p_bal == 0:
                yield from self._write_pb(parent, p_parent, 0)
                return
            if p_bal in (-1, 1):
                yield from self._write_pb(parent, p_parent, p_bal)
                child, parent = parent, p_parent
                continue
            # one rotation restores the pre-insert subtree height
            yield from self._rebalance(parent, p_parent, p_bal)
            return

    def _retrace_delete(self, parent, from_left):
        while parent:
            p_parent, p_bal = yield from self._read_pb(parent)
            p_bal += 1 if from_left else -1
            if p_bal in (-1, 1):
                yield from self._write_pb(parent, p_parent, p_bal)
                return
            if p_bal == 0:
                yield from self._write_pb(parent, p_parent, 0)
                sub = parent
            else:
                sub, nb = yield from self._rebalance(parent, p_parent, p_bal)
                if nb != 0:
                    return  # rotation kept the subtree height
            if p_parent == 0:
                return
            pl = yield ("r", p_parent + OFF_LEFT, 8)
            from_left = pl == sub
            parent = p_parent

    # -- operation bodies ------------------------------------------------

    def insert(self, key, value):
        """Add key or update its value in place; True if the key is new."""
        root = yield ("r", self.desc, 8)
        node, parent, k = root, 0, 0
        while node:
            k = yield ("r", node + OFF_KEY, 4)
            if key == k:
                yield ("w", node + OFF_VAL, 4, value)
                return False
            parent = node
            node = yield ("r", node + (OFF_LEFT if key < k else OFF_RIGHT), 8)
        base = yield ("alloc", self.node_size)
        yield ("w", base + OFF_LEFT, 8, 0)
        yield ("w", base + OFF_RIGHT, 8, 0)
        yield from self._write_pb(base, parent, 0)
        yield ("w", base + OFF_KEY, 4, key)
        yield ("w", base + OFF_VAL, 4, value)
        if parent == 0:
            yield ("w", self.desc, 8, base)
        else:
            side = OFF_LEFT if key < k else OFF_RIGHT
            yield ("w", parent + side, 8, base)
            yield from self._retrace_insert(base)
        count = yield ("r", self.count_addr, 8)
        yield ("w", self.count_addr, 8, count + 1)
        return True

    def delete(self, key):
        """Unlink, rebalance and free the key's node; False if absent."""
        root = yield ("r", self.desc, 8)
        node, parent = root, 0
        while node:
            k = yield ("r", node + OFF_KEY, 4)
            if key == k:
                break
            parent = node
            node = yield ("r", node + (OFF_LEFT if key < k else OFF_RIGHT), 8)
        if node == 0:
            return False
        left = yield ("r", node + OFF_LEFT, 8)
        right = yield ("r", node + OFF_RIGHT, 8)
        if left and right:
            # two children: move the in-order successor's payload here
            # and splice the successor out instead
            s_parent, s = node, right
            while True:
                sl = yield ("r", s + OFF_LEFT, 8)
                if sl == 0:
                    break
                s_parent, s = s, sl
            s_key = yield ("r", s + OFF_KEY, 4)
            s_val = yield ("r", s + OFF_VAL, 4)
            yield ("w", node + OFF_KEY, 4, s_key)
            yield ("w", node + OFF_VAL, 4, s_val)
            node, parent = s, s_parent
            left = 0
            right = yield ("r", s + OFF_RIGHT, 8)
        child = left or right
        from_left = False
        if parent == 0:
            yield ("w", self.desc, 8, child)
        else:
            pl = yield ("r", parent + OFF_LEFT, 8)
            from_left = pl == node
            yield ("w", parent + (OFF_LEFT if from_left else OFF_RIGHT),
                   8, child)
        if child:
            _, c_bal = yield from self._read_pb(child)
            yield from self._write_pb(child, parent, c_bal)
        if parent:
            yield from self._retrace_delete(parent, from_left)
        yield ("free", node)
        count = yield ("r", self.count_addr, 8)
        yield ("w", self.count_addr, 8, count - 1)
        return True

    def lookup(self, key):
        """Return the stored value, or None when the key is absent."""
        node = yield ("r", self.desc, 8)
        while node:
            k = yield ("r", node + OFF_KEY, 4)
            if key == k:
                return (yield ("r", node + OFF_VAL, 4))
            node = yield ("r", node + (OFF_LEFT if key < k else OFF_RIGHT), 8)
        return None

    # -- population and result auditing -----------------------------------

    def populate(self, count, seed):
        """Grow the tree to `count` distinct random keys, outside of any
        measurement (bare-memory execution, thread 0's sub-heap)."""
        rng = Rng(seed, STREAM_SETUP)
        while len(self.shadow) < count:
            key = rng.below(self.key_range)
            added = run_direct(
                self.machine, self.insert(key, avl_value_of(key))
            )
            if added:
                self.shadow.add(key)

    def note_completion(self, kind, key, result):
        """Audit one committed section's result against the shadow set.

        Exact only when sections are observed in commit order (quantum 1);
        the caller clears strict_audit otherwise.
        """
        self.completed += 1
        self.op_tally[kind] += 1
        if not self.strict_audit:
            return
        present = key in self.shadow
        if kind == "insert":
            if result != (not present):
                raise IntegrityError(
                    f"insert({key}) returned {result} against shadow "
                    f"membership {present}"
                )
            self.shadow.add(key)
        elif kind == "delete":
            if result != present:
                raise IntegrityError(
                    f"delete({key}) returned {result} against shadow "
                    f"membership {present}"
                )
            self.shadow.discard(key)
        else:
            expected = avl_value_of(key) if present else None
            if result != expected:
                raise IntegrityError(
                    f"lookup({key}) returned {result}, expected {expected}"
                )
        if self.check_every and self.completed % self.check_every == 0:
            # structural-only mid-run check; safe whenever no slow
            # section holds the lock (speculative writes are invisible)
            if self.machine.mem_peek(self.lock.addr, 8) == 0:
                avl_check(self.machine, self.desc, self.machine.allocator)


def avl_check(machine, desc, allocator=None, expected_keys=None):
    """Walk the whole tree verifying structure; returns the node count.

    Checks BST ordering, stored-vs-computed balance factors and their
    range, parent links, payload values, the descriptor count, liveness
    of every node in the allocator, and (when given) exact key-set
    equality with the shadow oracle. Raises IntegrityError naming the
    first offending node.
    """
    live = allocator.live if allocator is not None else None
    keys = []

    def walk(node, parent, lo, hi):
        if node == 0:
            return 0
        if live is not None and node not in live:
            raise IntegrityError(f"tree references non-live node {node:#x}")
        k = machine.mem_peek(node + OFF_KEY, 4)
        if not lo <= k < hi:
            raise IntegrityError(
                f"key order violated at node {node:#x} (key {k})"
            )
        v = machine.mem_peek(node + OFF_VAL, 4)
        if v != avl_value_of(k):
            raise IntegrityError(
                f"payload mismatch at node {node:#x} (key {k})"
            )
        pb = machine.mem_peek(node + OFF_PB, 8)
        if pb >> 3 != parent:
            raise IntegrityError(f"parent link wrong at node {node:#x}")
        bal = (pb & 7) - 2
        if not -1 <= bal <= 1:
            raise IntegrityError(
                f"balance factor {bal} out of range at node {node:#x}"
            )
        left = machine.mem_peek(node + OFF_LEFT, 8)
        right = machine.mem_peek(node + OFF_RIGHT, 8)
        hl = walk(left, node, lo, k)
        hr = walk(right, node, k + 1, hi)
        if bal != hr - hl:
            raise IntegrityError(
                f"stored balance {bal} != computed {hr - hl} "
                f"at node {node:#x}"
            )
        keys.append(k)
        return 1 + max(hl, hr)

    root = machine.mem_peek(desc, 8)
    walk(root, 0, 0, 1 << 32)
    count = machine.mem_peek(desc + 128, 8)
    if count != len(keys):
        raise IntegrityError(
            f"descriptor count {count} != {len(keys)} reachable nodes"
        )
    if expected_keys is not None and set(keys) != set(expected_keys):
        extra = sorted(set(keys) - set(expected_keys))[:4]
        missing = sorted(set(expected_keys) - set(keys))[:4]
        raise IntegrityError(
            f"key set diverges from oracle (unexpected {extra}, "
            f"missing {missing})"
        )
    return count


def avl_keys(machine, desc):
    """In-order key list (bare-memory walk)."""
    out = []
    stack = []
    node = machine.mem_peek(desc, 8)
    while node or stack:
        while node:
            stack.append(node)
            node = machine.mem_peek(node + OFF_LEFT, 8)
        node = stack.pop()
        out.append(machine.mem_peek(node + OFF_KEY, 4))
        node = machine.mem_peek(node + OFF_RIGHT, 8)
    return out


def tree_signature(machine, desc):
    """Pre-order (key, balance) tuple capturing the exact tree shape."""
    out = []

    def walk(node):
        if node == 0:
            out.append(None)
            return
        k = machine.mem_peek(node + OFF_KEY, 4)
        bal = (machine.mem_peek(node + OFF_PB, 8) & 7) - 2
        out.append((k, bal))
        walk(machine.mem_peek(node + OFF_LEFT, 8))
        walk(machine.mem_peek(node + OFF_RIGHT, 8))

    walk(machine.mem_peek(desc, 8))
    return tuple(out)


def _avl_thread(tree, ctx, ops, mix, retry_cap):
    ins_cut = mix[0]
    del_cut = mix[0] + mix[1]
    for _ in range(ops):
        draw = ctx.rng.below(100)
        key = ctx.rng.below(tree.key_range)
        if draw < ins_cut:
            kind = "insert"
            body = lambda k=key: tree.insert(k, avl_value_of(k))
        elif draw < del_cut:
            kind = "delete"
            body = lambda k=key: tree.delete(k)
        else:
            kind = "lookup"
            body = lambda k=key: tree.lookup(k)
        _, result = yield from run_section(ctx, tree.lock, body, retry_cap)
        tree.note_completion(kind, key, result)


def avl_run(cfg, sim=None, check_every=0, retry_cap=None):
    """Populate, run the threaded mix, verify, and report."""
    cfg.validate()
    sim = sim or SimConfig()
    if cfg.threads > sim.cores:
        raise ConfigError(
            f"{cfg.threads} threads need {cfg.threads} cores, "
            f"have {sim.cores}"
        )
    machine = Machine(sim, allocator=cfg.allocator, seed=cfg.seed)
    tree = AvlTree(machine, cfg.node_size, cfg.key_range, check_every)
    tree.populate(cfg.initial_population, cfg.seed)
    engine = Engine(machine)
    tree.strict_audit = engine.quantum == 1
    ctxs = make_contexts(engine, cfg.threads, cfg.seed, cfg.lock)
    engine.run([
        _avl_thread(tree, ctx, cfg.ops_per_thread, cfg.mix, retry_cap)
        for ctx in ctxs
    ])
    audit_sections(engine.sections)
    expected = tree.shadow if tree.strict_audit else None
    final_count = avl_check(machine, tree.desc, machine.allocator, expected)
    audit_no_overlap(machine.allocator)
    bases = [info.base for info in machine.allocator.live.values()]
    hist = index_histogram(bases, machine.caches.gl1)
    extra = {
        "histogram": hist,
        "index_histogram_max": max(hist) if hist else 0,
        "index_histogram_nonzero_bins": sum(1 for c in hist if c),
        "final_count": final_count,
        "op_tally": dict(tree.op_tally),
    }
    sig = tree_signature(machine, tree.desc)
    extra["tree_shape_digest"] = hashlib.sha256(repr(sig).encode()).hexdigest()
    return make_stats(
        machine, engine, ops=cfg.threads * cfg.ops_per_thread,
        locks=(tree.lock,), extra=extra,
    )


# ---------------------------------------------------------------------------
# Store-ordering microdemo
# ---------------------------------------------------------------------------

STORE_FIRST = "store-first"
STORE_LAST = "store-last"


def store_shift_demo(order, fan, sim=None):
    """One transaction over fan+1 lines of a single L1 set: one store and
    `fan` loads, ordered per `order`. Demonstrates that moving the store
    last lets the loads displace each other harmlessly (read-set lines
    survive in L2/L3) instead of displacing the store's line.
    """
    if order not in (STORE_FIRST, STORE_LAST):
        raise ConfigError(
            f"order must be {STORE_FIRST!r} or {STORE_LAST!r}, got {order!r}"
        )
    if fan < 1:
        raise ConfigError(f"fan must be >= 1, got {fan}")
    machine = Machine(sim or SimConfig(), allocator="glibc", seed=0)
    l1_page = machine.caches.gl1.cache_page
    base = machine.raw_carve((fan + 1) * l1_page, l1_page)
    addrs = [base + i * l1_page for i in range(fan + 1)]
    core = 0
    machine.tx_begin(core)
    delivered = None
    try:
        if order == STORE_FIRST:
            machine.tx_write(core, addrs[0], 8, 0x5AFE)
            for a in addrs[1:]:
                machine.tx_read(core, a, 8)
        else:
            for a in addrs[1:]:
                machine.tx_read(core, a, 8)
            machine.tx_write(core, addrs[0], 8, 0x5AFE)
    except TransactionAborted as e:
        # delivery retired the transaction; there is nothing to commit
        delivered = e.code
    if delivered is None:
        status, code = machine.tx_commit(core)
    else:
        status, code = "aborted", delivered
    return {
        "order": order,
        "fan": fan,
        "status": status,
        "abort_code": code,
        "store_visible": machine.mem_peek(addrs[0], 8) == 0x5AFE,
    }
