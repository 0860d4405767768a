"""The simulated machine: cores, memory, caches, coherence, transactions.

All simulated accesses funnel through here. An access is at most 8 bytes,
never spans a 64-byte line, and always performs, in order: a coherence
transition (which may invalidate remote copies and abort remote
transactions, requester wins), then a cache hierarchy access (whose fills
may evict tracked lines and abort transactions, including the accessor's
own), then the data movement itself. Costs accrue on the issuing core's
cycle clock; abort penalties accrue on the victim's.

Allocations inside transactions take effect immediately so concurrent
transactions see a consistent allocator, and are compensated (freed back,
LIFO) if the transaction aborts; frees inside transactions are deferred to
commit. Metadata line writes for both are issued at call time through the
transactional path, which is what makes a shared heap descriptor a
cross-thread conflict source.
"""

from __future__ import annotations

from array import array

from . import htm
from .caches import CacheGeometry, CacheHierarchy, TlbGeometry
from .config import SimConfig
from .errors import SimulationError
from .mem import SimMemory, make_allocator
from .htm import (
    ABORTED, ACTIVE, BUFFER_OVERFLOW, CONFLICT, Directory, TransactionAborted,
    Txn,
)

try:
    from ._fastcore import FastPath as _FastPath
except ImportError:  # extension not built; interpreted path only
    _FastPath = None

HEAP_BASE = 0x1000_0000
CIA_BASE = 0x5000_0000
RAW_BASE = 0x9000_0000


class Counters:
    """Per-core event counters; aggregate views are sums."""

    FIELDS = (
        "accesses", "l1_hits", "l2_hits", "l3_hits", "mem_fills",
        "miss_cold", "miss_conflict", "miss_capacity",
        "tlb1_hits", "tlb2_hits", "walks",
        "tx_started", "tx_committed",
        "aborts_conflict", "aborts_buffer_overflow", "aborts_explicit",
    )

    def __init__(self, cores):
        # Signed 64-bit arrays rather than lists: same indexing from
        # Python, and they expose the buffer protocol for typed views.
        for f in self.FIELDS:
            setattr(self, f, array("q", bytes(8 * cores)))

    def total(self, field):
        return sum(getattr(self, field))

    def snapshot(self):
        return {f: list(getattr(self, f)) for f in self.FIELDS}


class Machine:
    def __init__(self, cfg: SimConfig = None, allocator="glibc", seed=0):
        cfg = cfg or SimConfig()
        self.cfg = cfg
        self.cores = cfg.cores
        self.mem = SimMemory()
        heap = self.mem.add_arena("heap", HEAP_BASE, cfg.heap_arena_mb << 20)
        cia = self.mem.add_arena("cia", CIA_BASE, cfg.cia_arena_mb << 20)
        self.raw = self.mem.add_arena("raw", RAW_BASE, cfg.raw_arena_mb << 20)
        self._raw_cursor = RAW_BASE
        self.allocator = make_allocator(
            allocator, heap if allocator != "cia" else cia, seed
        )
        self.caches = CacheHierarchy(
            CacheGeometry(cfg.l1_kb << 10, cfg.l1_ways, cfg.line,
                          cfg.index_hash),
            CacheGeometry(cfg.l2_kb << 10, cfg.l2_ways, cfg.line),
            CacheGeometry(cfg.l3_mb << 20, cfg.l3_ways, cfg.line),
            TlbGeometry(cfg.tlb1_entries, cfg.tlb1_ways, cfg.page),
            TlbGeometry(cfg.tlb2_entries, cfg.tlb2_ways, cfg.page),
            cfg.cores,
        )
        self.caches.evict_hook = self._on_evict
        self.caches.inval_hook = self._on_invalidate
        self.directory = Directory()
        self.txns = [None] * cfg.cores
        self.clock = array("q", bytes(8 * cfg.cores))
        self.counters = Counters(cfg.cores)
        cost = cfg.cost
        self._level_cost = (cost.l1_hit, cost.l2_hit, cost.l3_hit, cost.memory)
        self._tlb_cost = (0, cost.l2_tlb_hit, cost.page_walk)
        cnt = self.counters
        self._level_ctr = (cnt.l1_hits, cnt.l2_hits, cnt.l3_hits, cnt.mem_fills)
        self._class_ctr = (None, cnt.miss_cold, cnt.miss_conflict,
                           cnt.miss_capacity)
        self._tlb_ctr = (cnt.tlb1_hits, cnt.tlb2_hits, cnt.walks)
        self._lo = HEAP_BASE
        self._hi = RAW_BASE + (cfg.raw_arena_mb << 20)
        self._live_index = {} if cfg.debug_checks else None
        # Compiled twin of the access path, mutating the same containers.
        # debug_checks stays interpreted: the compiled path omits the
        # live-address validation branch.
        self.fastpath = None
        if _FastPath is not None and cfg.fast_core and not cfg.debug_checks:
            self.fastpath = _FastPath(self)

    # -- raw carving for benchmark fixtures (locks, descriptors) ----------

    def raw_carve(self, n, align=64):
        c = self._raw_cursor
        c += (-c) % align
        self._raw_cursor = c + n
        if self._raw_cursor > self.raw.base + self.raw.length:
            raise SimulationError("raw arena exhausted")
        return c

    # -- validation ---------------------------------------------------------

    def _check_addr(self, addr, n):
        if n < 1 or n > 8:
            raise SimulationError(f"access length {n} out of range 1..8")
        if (addr ^ (addr + n - 1)) >> 6:
            raise SimulationError(f"access at {addr:#x} len {n} spans a line")
        if not self._lo <= addr < self._hi:
            raise SimulationError(f"access outside any arena: {addr:#x}")
        if self._live_index is not None:
            self._debug_check_live(addr)

    def _debug_check_live(self, addr):
        # Raw arena and allocator metadata pages are always fair game.
        if self.raw.contains(addr):
            return
        arena = self.allocator.arena
        if arena.contains(addr) and addr < arena.base + 4096:
            return
        for info in self.allocator.live.values():
            if info.foot_start <= addr < info.foot_start + info.foot_len:
                return
        raise SimulationError(f"access to unallocated address {addr:#x}")

    # -- coherence + cache + cost -------------------------------------------

    def _invalidate_remote(self, core, line):
        self.caches.invalidate_line(core, line)  # fires _on_invalidate

    def _coherence(self, core, line, write):
        # Directory state per line: a non-negative value is a sharer
        # bitmask, a negative value -(c+1) means core c holds the line
        # exclusively. A line never has both an owner and sharers.
        state = self.directory.state
        st = state.get(line, 0)
        if write:
            want = -(core + 1)
            if st == want:
                return
            if st < 0:
                self._invalidate_remote(-st - 1, line)
            else:
                mask = st & ~(1 << core)
                c = 0
                while mask:
                    if mask & 1:
                        self._invalidate_remote(c, line)
                    mask >>= 1
                    c += 1
            state[line] = want
        else:
            if st >= 0:
                bit = 1 << core
                if not st & bit:
                    state[line] = st | bit
            else:
                owner = -st - 1
                if owner != core:  # own reads keep exclusivity
                    t = self.txns[owner]
                    if (t is not None and t.status is ACTIVE
                            and line in t.write_set):
                        # Speculative data cannot be shared: kill the writer.
                        self._invalidate_remote(owner, line)
                        state[line] = 1 << core
                    else:
                        state[line] = (1 << owner) | (1 << core)

    def _access(self, core, addr, write):
        lvl, cls, tlb = self.caches.access(core, addr, write)
        self.counters.accesses[core] += 1
        self._level_ctr[lvl][core] += 1
        if cls:
            self._class_ctr[cls][core] += 1
        self._tlb_ctr[tlb][core] += 1
        self.clock[core] += self._level_cost[lvl] + self._tlb_cost[tlb]

    # -- transaction eviction/invalidation observers --------------------------

    def _on_evict(self, core, level, line):
        if level == 1:
            t = self.txns[core]
            if t is not None and t.status is ACTIVE and line in t.write_set:
                self._abort(core, BUFFER_OVERFLOW)
        elif level == 3:
            # Line left the entire hierarchy: every tracker loses it.
            for c, t in enumerate(self.txns):
                if t is not None and t.status is ACTIVE and (
                    line in t.read_set or line in t.write_set
                ):
                    self._abort(c, BUFFER_OVERFLOW)

    def _on_invalidate(self, core, line):
        t = self.txns[core]
        if t is not None and t.status is ACTIVE and (
            line in t.read_set or line in t.write_set
        ):
            self._abort(core, CONFLICT)

    def _abort(self, core, code):
        t = self.txns[core]
        if t is None or t.status is not ACTIVE:
            return
        t.status = ABORTED
        t.abort_code = code
        cnt = self.counters
        if code == CONFLICT:
            cnt.aborts_conflict[core] += 1
        elif code == BUFFER_OVERFLOW:
            cnt.aborts_buffer_overflow[core] += 1
        else:
            cnt.aborts_explicit[core] += 1
        # Rollback wastes the attempt over again, plus a fixed penalty.
        self.clock[core] += (
            self.cfg.cost.abort_penalty + (self.clock[core] - t.start_clock)
        )
        for base in reversed(t.allocs):
            self.allocator.free(base, core)
        t.allocs.clear()
        t.pending_frees.clear()

    # -- core-mode dispatch ----------------------------------------------------

    # While a core's transaction is active every access it makes is
    # transactional, exactly as between begin and commit on real hardware;
    # there is no plain-access escape. The engine funnels program reads,
    # writes, allocs and frees through these, so bodies are written once
    # and run under either a held lock or a transaction unchanged.

    def read(self, core, addr, n):
        if self.txns[core] is None:
            return self.plain_read(core, addr, n)
        return self.tx_read(core, addr, n)

    def write(self, core, addr, n, value):
        if self.txns[core] is None:
            return self.plain_write(core, addr, n, value)
        return self.tx_write(core, addr, n, value)

    def alloc(self, core, size):
        if self.txns[core] is None:
            return self.alloc_plain(core, size)
        return self.tx_alloc(core, size)

    def free(self, core, addr):
        if self.txns[core] is None:
            return self.free_plain(core, addr)
        return self.tx_free(core, addr)

    # -- plain (non-transactional) accesses ------------------------------------

    def plain_read(self, core, addr, n):
        self._check_addr(addr, n)
        t = self.txns[core]
        if t is not None and t.status is ACTIVE:
            raise SimulationError("plain access inside an active transaction")
        self._coherence(core, addr >> 6, False)
        self._access(core, addr, False)
        return self.mem.read(addr, n)

    def plain_write(self, core, addr, n, value):
        self._check_addr(addr, n)
        t = self.txns[core]
        if t is not None and t.status is ACTIVE:
            raise SimulationError("plain access inside an active transaction")
        self._coherence(core, addr >> 6, True)
        self._access(core, addr, True)
        self.mem.write(addr, n, value)

    def lock_rmw(self, core, addr, new):
        """Lock-word swap: one event, returns the old value.

        The new value is installed only when the word was FREE (0), so a
        losing attempt leaves the holder's id intact and the loser re-spins.
        Win or lose, the line is acquired for write, invalidating remote
        copies (and aborting remote transactions tracking it).
        """
        t = self.txns[core]
        if t is not None:
            if t.status is ACTIVE:
                raise SimulationError(
                    "atomic exchange inside an active transaction"
                )
            self.txns[core] = None
            raise TransactionAborted(core, t.abort_code)
        self._check_addr(addr, 8)
        self._coherence(core, addr >> 6, True)
        self._access(core, addr, True)
        self.clock[core] += self.cfg.cost.lock_swap
        old = self.mem.read(addr, 8)
        if old == 0:
            self.mem.write(addr, 8, new)
        return old

    # -- transactions ------------------------------------------------------------

    def tle_begin(self, core, addr):
        """Read a lock word; if it reads FREE (0) begin a transaction.

        Observation and begin happen in one event, so there is no window
        between seeing the lock free and starting to speculate. The lock
        line is NOT yet subscribed; the caller reads it transactionally as
        its first speculative access.
        """
        val = self.plain_read(core, addr, 8)
        if val == 0:
            self.tx_begin(core)
        return val

    def tx_begin(self, core):
        t = self.txns[core]
        if t is not None and t.status is ACTIVE:
            raise SimulationError("nested tx_begin (flat nesting only)")
        self.txns[core] = Txn(core, self.clock[core])
        self.counters.tx_started[core] += 1

    def _active_txn(self, core, what):
        # Raising the abort to the program retires the transaction: the
        # core is back in plain mode for its post-abort spinning and any
        # lock-held slow path.
        t = self.txns[core]
        if t is None:
            raise SimulationError(f"{what} outside a transaction")
        if t.status is not ACTIVE:
            self.txns[core] = None
            raise TransactionAborted(core, t.abort_code)
        return t

    def tx_read(self, core, addr, n):
        t = self._active_txn(core, "tx_read")
        self._check_addr(addr, n)
        self._coherence(core, addr >> 6, False)
        self._access(core, addr, False)
        t.read_set.add(addr >> 6)
        value = t.read_through(self.mem, addr, n)
        if t.status is not ACTIVE:  # own fill evicted a tracked line
            self.txns[core] = None
            raise TransactionAborted(core, t.abort_code)
        return value

    def tx_write(self, core, addr, n, value):
        t = self._active_txn(core, "tx_write")
        self._check_addr(addr, n)
        self._coherence(core, addr >> 6, True)
        self._access(core, addr, True)
        t.write_set.add(addr >> 6)
        t.log_write(addr, n, value)
        if t.status is not ACTIVE:
            self.txns[core] = None
            raise TransactionAborted(core, t.abort_code)

    def tx_abort(self, core, code):
        # Retires the transaction like any other delivered abort, so the
        # program's abort handler runs in plain mode.  Returns the effective
        # code: a conflict that landed before the explicit abort wins.
        t = self.txns[core]
        if t is None:
            raise SimulationError("tx_abort outside a transaction")
        self._abort(core, code)
        self.txns[core] = None
        return t.abort_code

    def tx_commit(self, core):
        t = self.txns[core]
        if t is None:
            raise SimulationError("tx_commit outside a transaction")
        self.txns[core] = None
        if t.status is not ACTIVE:
            return ("aborted", t.abort_code)
        for addr, n, value in t.write_log:
            self.mem.write(addr, n, value)
        for addr, thread in t.pending_frees:
            self.allocator.free(addr, thread)
        t.status = htm.COMMITTED
        self.counters.tx_committed[core] += 1
        return ("committed", None)

    # -- allocation with simulated metadata traffic ---------------------------

    def alloc_plain(self, core, size):
        base = self.allocator.alloc(size, core)
        stamp = self.allocator.op_counter
        for maddr in self.allocator.metadata_touches("alloc", core, base):
            self.plain_write(core, maddr, 8, stamp)
        return base

    def free_plain(self, core, addr):
        base_line_addrs = self.allocator.metadata_touches("free", core, addr)
        self.allocator.free(addr, core)
        stamp = self.allocator.op_counter
        for maddr in base_line_addrs:
            self.plain_write(core, maddr, 8, stamp)

    def tx_alloc(self, core, size):
        t = self._active_txn(core, "tx_alloc")
        base = self.allocator.alloc(size, core)
        t.allocs.append(base)
        stamp = self.allocator.op_counter
        for maddr in self.allocator.metadata_touches("alloc", core, base):
            self.tx_write(core, maddr, 8, stamp)
        return base

    def tx_free(self, core, addr):
        t = self._active_txn(core, "tx_free")
        if addr not in self.allocator.live:
            raise SimulationError(f"free of non-live address {addr:#x}")
        t.pending_frees.append((addr, core))
        stamp = self.allocator.op_counter + 1
        for maddr in self.allocator.metadata_touches("free", core, addr):
            self.tx_write(core, maddr, 8, stamp)

    # -- setup-time (unsimulated) helpers ---------------------------------------

    def setup_alloc(self, thread, size):
        return self.allocator.alloc(size, thread)

    def setup_free(self, thread, addr):
        self.allocator.free(addr, thread)

    def mem_peek(self, addr, n):
        return self.mem.read(addr, n)

    def mem_poke(self, addr, n, value):
        self.mem.write(addr, n, value)
