# cython: language_level=3, boundscheck=False, wraparound=False
# cython: cdivision=True, initializedcheck=False
"""Compiled twin of the interpreted per-event access path.

This module re-implements Machine.read / Machine.write and the engine's
round-robin loop in C, operating on the SAME live Python containers the
interpreted path uses: the per-set LRU dicts, the shadow and TLB dicts,
the directory dict, the arena line store, the transaction objects and the
counter arrays. Nothing is duplicated but the algorithm, so the two paths
interleave freely within one run (allocator calls, lock swaps and commits
stay interpreted) and every audit or test inspects one set of structures
regardless of which path executed.

Equivalence discipline: each function here ports its interpreted original
statement for statement, preserving the exact sequence of dict and set
operations. CPython dicts iterate in insertion order, so replicating the
operation sequence replicates LRU victim selection, fill order, hook
order, abort timing and therefore every counter and clock, bit for bit.
The eviction and invalidation observers are inlined with their no-op
branches dropped (level-2 evictions never affect a transaction), which is
why the engine only selects this path while the machine's own observers
are installed. The test suite drives both paths over identical workloads
and compares full state; any drift here is a bug.
"""

from cpython.bytearray cimport PyByteArray_AS_STRING
from cpython.bytes cimport PyBytes_AS_STRING
from cpython.dict cimport (
    PyDict_Contains, PyDict_DelItem, PyDict_GetItem, PyDict_Next,
    PyDict_SetItem, PyDict_Size,
)
from cpython.list cimport PyList_GET_ITEM
from cpython.object cimport PyObject
from cpython.ref cimport Py_DECREF
from cpython.set cimport PySet_Add, PySet_Contains
from cpython.tuple cimport PyTuple_GET_ITEM, PyTuple_GET_SIZE
from libc.string cimport memcpy

from .errors import SimulationError
from .htm import ACTIVE, BUFFER_OVERFLOW, CONFLICT, TransactionAborted

cdef extern from "Python.h":
    ctypedef enum PySendResult:
        PYGEN_RETURN
        PYGEN_ERROR
        PYGEN_NEXT
    PySendResult PyIter_Send(object iter, object arg, PyObject **presult)
    object PyLong_FromUnsignedLongLong(unsigned long long v)
    unsigned long long PyLong_AsUnsignedLongLong(object v) except? 0xFFFFFFFFFFFFFFFF
    long long PyLong_AsLongLong(object v) except? -1

# mirror of the outcome codes in the cache module
cdef enum:
    LVL_L1 = 0
    LVL_L2 = 1
    LVL_L3 = 2
    LVL_MEMORY = 3
    MISS_NONE = 0
    MISS_COLD = 1
    MISS_CONFLICT = 2
    MISS_CAPACITY = 3
    TLB_HIT_L1 = 0
    TLB_HIT_L2 = 1
    TLB_MISS_WALK = 2

cdef object _ACTIVE = ACTIVE
cdef object _BUFFER_OVERFLOW = BUFFER_OVERFLOW
cdef object _CONFLICT = CONFLICT


cdef inline object _first_key(dict d):
    # next(iter(d)): first live entry in insertion order.
    cdef Py_ssize_t pos = 0
    cdef PyObject *k = NULL
    cdef PyObject *v = NULL
    PyDict_Next(d, &pos, &k, &v)
    return <object>k


cdef inline int _rethrow() except -1:
    # The C API already set the error indicator; returning the sentinel
    # makes Cython propagate that live exception.
    return -1


cdef class FastPath:
    """Typed references into one Machine's live simulation state."""

    cdef object machine
    cdef list arenas            # Arena objects, for the find() slow path
    cdef object memo_lines      # line store of the most recent arena hit
    cdef long long memo_base, memo_end
    cdef list txns
    cdef dict dstate            # coherence directory: line -> state int
    cdef long long lo, hi
    # cache structure: per-core list of per-set dicts, plus the level
    # objects for their hit/miss/eviction tallies
    cdef list l1sets, l2sets    # [core] -> list of per-set dicts
    cdef list l3sets
    cdef list l1lv, l2lv
    cdef object l3lv
    cdef long long l1mask, l2mask, l3mask
    cdef bint l1hash, l2hash, l3hash
    cdef long long l1ways, l2ways, l3ways
    cdef long long cores
    cdef list shadow            # [core] -> dict
    cdef list seen              # [core] -> set
    cdef long long shadow_cap
    cdef list tlb1, tlb2        # [core] -> list of per-set dicts
    cdef long long tg1mask, tg2mask, tg1ways, tg2ways
    cdef long long[::1] tlb1_hits, tlb1_misses, tlb2_hits, tlb_walks
    cdef long long[::1] clock
    cdef long long[::1] c_accesses, c_l1h, c_l2h, c_l3h, c_memf
    cdef long long[::1] c_cold, c_conf, c_cap
    cdef long long[::1] c_t1h, c_t2h, c_walks
    cdef long long cost_lvl[4]
    cdef long long cost_tlb[3]

    def __init__(self, machine):
        caches = machine.caches
        self.machine = machine
        self.arenas = machine.mem.arenas
        self.memo_lines = None
        self.memo_base = 0
        self.memo_end = 0
        self.txns = machine.txns
        self.dstate = machine.directory.state
        self.lo = machine._lo
        self.hi = machine._hi
        self.l1sets = [lv.sets for lv in caches.l1]
        self.l2sets = [lv.sets for lv in caches.l2]
        self.l3sets = caches.l3.sets
        self.l1lv = caches.l1
        self.l2lv = caches.l2
        self.l3lv = caches.l3
        self.l1mask = caches.gl1.mask
        self.l2mask = caches.gl2.mask
        self.l3mask = caches.gl3.mask
        self.l1hash = caches.gl1._hash
        self.l2hash = caches.gl2._hash
        self.l3hash = caches.gl3._hash
        self.l1ways = caches.gl1.ways
        self.l2ways = caches.gl2.ways
        self.l3ways = caches.gl3.ways
        self.cores = caches.cores
        self.shadow = caches.shadow
        self.seen = caches.seen
        self.shadow_cap = caches.shadow_capacity
        self.tlb1 = caches.tlb1
        self.tlb2 = caches.tlb2
        self.tg1mask = caches.tg1.mask
        self.tg2mask = caches.tg2.mask
        self.tg1ways = caches.tg1.ways
        self.tg2ways = caches.tg2.ways
        self.tlb1_hits = caches.tlb1_hits
        self.tlb1_misses = caches.tlb1_misses
        self.tlb2_hits = caches.tlb2_hits
        self.tlb_walks = caches.walks
        cnt = machine.counters
        self.clock = machine.clock
        self.c_accesses = cnt.accesses
        self.c_l1h = cnt.l1_hits
        self.c_l2h = cnt.l2_hits
        self.c_l3h = cnt.l3_hits
        self.c_memf = cnt.mem_fills
        self.c_cold = cnt.miss_cold
        self.c_conf = cnt.miss_conflict
        self.c_cap = cnt.miss_capacity
        self.c_t1h = cnt.tlb1_hits
        self.c_t2h = cnt.tlb2_hits
        self.c_walks = cnt.walks
        cost = machine.cfg.cost
        self.cost_lvl[0] = cost.l1_hit
        self.cost_lvl[1] = cost.l2_hit
        self.cost_lvl[2] = cost.l3_hit
        self.cost_lvl[3] = cost.memory
        self.cost_tlb[0] = 0
        self.cost_tlb[1] = cost.l2_tlb_hit
        self.cost_tlb[2] = cost.page_walk

    # -- simulated memory ----------------------------------------------------

    cdef dict _find_lines(self, long long addr, bint for_write):
        # Arena lookup with a local memo; arena bounds are fixed after
        # construction, so caching the line dict itself is safe.
        cdef long long base, end
        if self.memo_lines is not None and self.memo_base <= addr < self.memo_end:
            return <dict>self.memo_lines
        for a in self.arenas:
            base = a.base
            end = a.end
            if base <= addr < end:
                self.memo_lines = a._lines
                self.memo_base = base
                self.memo_end = end
                return <dict>self.memo_lines
        if for_write:
            raise SimulationError(f"write outside any arena: {addr:#x}")
        raise SimulationError(f"read outside any arena: {addr:#x}")

    cdef object _mem_read(self, long long addr, long long n):
        cdef dict lines = self._find_lines(addr, False)
        cdef PyObject *bufp = PyDict_GetItem(lines, addr >> 6)
        if bufp == NULL:
            return 0
        cdef char *raw = PyByteArray_AS_STRING(<object>bufp)
        cdef unsigned long long v = 0
        memcpy(&v, raw + (addr & 63), n)  # little-endian host assumed
        return PyLong_FromUnsignedLongLong(v)

    cdef int _mem_write(self, long long addr, long long n, object value) except -1:
        # Same step order as the interpreted store: the line buffer is
        # materialized before the value is range-checked by to_bytes.
        cdef dict lines = self._find_lines(addr, True)
        cdef object line_obj = addr >> 6
        cdef PyObject *bufp = PyDict_GetItem(lines, line_obj)
        cdef object buf
        if bufp == NULL:
            buf = bytearray(64)
            PyDict_SetItem(lines, line_obj, buf)
        else:
            buf = <object>bufp
        cdef bytes data = value.to_bytes(n, "little")
        memcpy(PyByteArray_AS_STRING(buf) + (addr & 63), PyBytes_AS_STRING(data), n)
        return 0

    # -- eviction observers (level 2 is a no-op and stays dropped) -----------

    cdef int _evicted_l1(self, long long core, object victim) except -1:
        t = <object>PyList_GET_ITEM(self.txns, core)
        if t is not None and t.status is _ACTIVE and PySet_Contains(
                t.write_set, victim):
            self.machine._abort(core, _BUFFER_OVERFLOW)
        return 0

    cdef int _evicted_l3(self, object victim) except -1:
        cdef long long c
        for c in range(self.cores):
            t = <object>PyList_GET_ITEM(self.txns, c)
            if t is not None and t.status is _ACTIVE and (
                PySet_Contains(t.read_set, victim)
                or PySet_Contains(t.write_set, victim)
            ):
                self.machine._abort(c, _BUFFER_OVERFLOW)
        return 0

    # -- cross-core invalidation ----------------------------------------------

    cdef int _invalidate_remote(self, long long core, long long line,
                                object line_obj) except -1:
        cdef long long page = line >> 6  # bits 12.. of the address
        cdef long long idx
        idx = ((line ^ page) if self.l1hash else line) & self.l1mask
        cdef dict s1 = <dict>PyList_GET_ITEM(
            <list>PyList_GET_ITEM(self.l1sets, core), idx)
        if PyDict_Contains(s1, line_obj):
            PyDict_DelItem(s1, line_obj)
        idx = ((line ^ page) if self.l2hash else line) & self.l2mask
        cdef dict s2 = <dict>PyList_GET_ITEM(
            <list>PyList_GET_ITEM(self.l2sets, core), idx)
        if PyDict_Contains(s2, line_obj):
            PyDict_DelItem(s2, line_obj)
        # the invalidation observer fires regardless of residency
        t = <object>PyList_GET_ITEM(self.txns, core)
        if t is not None and t.status is _ACTIVE and (
            PySet_Contains(t.read_set, line_obj)
            or PySet_Contains(t.write_set, line_obj)
        ):
            self.machine._abort(core, _CONFLICT)
        return 0

    # -- coherence directory ---------------------------------------------------

    cdef int _coherence(self, long long core, long long line,
                        object line_obj, bint write) except -1:
        # Non-negative state is a sharer bitmask, negative -(c+1) is an
        # exclusive owner. A line never has both.
        cdef dict state = self.dstate
        cdef PyObject *stp = PyDict_GetItem(state, line_obj)
        cdef long long st = 0
        cdef long long want, mask, c, owner, bit
        if stp != NULL:
            st = PyLong_AsLongLong(<object>stp)
        if write:
            want = -(core + 1)
            if st == want:
                return 0
            if st < 0:
                self._invalidate_remote(-st - 1, line, line_obj)
            else:
                mask = st & ~(1 << core)
                c = 0
                while mask:
                    if mask & 1:
                        self._invalidate_remote(c, line, line_obj)
                    mask >>= 1
                    c += 1
            PyDict_SetItem(state, line_obj, want)
        else:
            if st >= 0:
                bit = 1 << core
                if not st & bit:
                    PyDict_SetItem(state, line_obj, st | bit)
            else:
                owner = -st - 1
                if owner != core:  # own reads keep exclusivity
                    t = <object>PyList_GET_ITEM(self.txns, owner)
                    if (t is not None and t.status is _ACTIVE
                            and PySet_Contains(t.write_set, line_obj)):
                        # Speculative data cannot be shared: kill the writer.
                        self._invalidate_remote(owner, line, line_obj)
                        PyDict_SetItem(state, line_obj, 1 << core)
                    else:
                        PyDict_SetItem(
                            state, line_obj, (1 << owner) | (1 << core))
        return 0

    # -- fills, one per level so observers see exact displacement order ------

    cdef int _fill_l1(self, long long core, dict s1, object line_obj) except -1:
        cdef object victim
        if PyDict_Size(s1) >= self.l1ways:
            victim = _first_key(s1)
            PyDict_DelItem(s1, victim)
            lvl1 = <object>PyList_GET_ITEM(self.l1lv, core)
            lvl1.evictions = lvl1.evictions + 1
            self._evicted_l1(core, victim)
        PyDict_SetItem(s1, line_obj, True)
        return 0

    cdef int _fill_l2(self, long long core, dict s2, object line_obj) except -1:
        cdef object victim
        cdef long long vline, idx
        cdef dict s1v
        if PyDict_Size(s2) >= self.l2ways:
            victim = _first_key(s2)
            PyDict_DelItem(s2, victim)
            lvl2 = <object>PyList_GET_ITEM(self.l2lv, core)
            lvl2.evictions = lvl2.evictions + 1
            # inclusion: the victim may not stay in L1 either
            vline = PyLong_AsLongLong(victim)
            idx = ((vline ^ (vline >> 6)) if self.l1hash else vline) & self.l1mask
            s1v = <dict>PyList_GET_ITEM(
                <list>PyList_GET_ITEM(self.l1sets, core), idx)
            if PyDict_Contains(s1v, victim):
                PyDict_DelItem(s1v, victim)
                lvl1 = <object>PyList_GET_ITEM(self.l1lv, core)
                lvl1.evictions = lvl1.evictions + 1
                self._evicted_l1(core, victim)
        PyDict_SetItem(s2, line_obj, True)
        return 0

    cdef int _fill_l3(self, dict s3, object line_obj) except -1:
        cdef object victim
        cdef long long vline, idx, c
        cdef dict s1v, s2v
        if PyDict_Size(s3) >= self.l3ways:
            victim = _first_key(s3)
            PyDict_DelItem(s3, victim)
            self.l3lv.evictions = self.l3lv.evictions + 1
            vline = PyLong_AsLongLong(victim)
            for c in range(self.cores):
                idx = ((vline ^ (vline >> 6)) if self.l1hash else vline) & self.l1mask
                s1v = <dict>PyList_GET_ITEM(
                    <list>PyList_GET_ITEM(self.l1sets, c), idx)
                if PyDict_Contains(s1v, victim):
                    PyDict_DelItem(s1v, victim)
                    lvl1 = <object>PyList_GET_ITEM(self.l1lv, c)
                    lvl1.evictions = lvl1.evictions + 1
                    self._evicted_l1(c, victim)
                idx = ((vline ^ (vline >> 6)) if self.l2hash else vline) & self.l2mask
                s2v = <dict>PyList_GET_ITEM(
                    <list>PyList_GET_ITEM(self.l2sets, c), idx)
                if PyDict_Contains(s2v, victim):
                    PyDict_DelItem(s2v, victim)
                    lvl2 = <object>PyList_GET_ITEM(self.l2lv, c)
                    lvl2.evictions = lvl2.evictions + 1
            self._evicted_l3(victim)
        PyDict_SetItem(s3, line_obj, True)
        return 0

    # -- TLBs ---------------------------------------------------------------

    cdef long long _tlb(self, long long core, object page_obj,
                        long long page) except -1:
        cdef dict s1 = <dict>PyList_GET_ITEM(
            <list>PyList_GET_ITEM(self.tlb1, core), page & self.tg1mask)
        cdef dict s2
        if PyDict_Contains(s1, page_obj):
            PyDict_DelItem(s1, page_obj)
            PyDict_SetItem(s1, page_obj, True)
            self.tlb1_hits[core] += 1
            return TLB_HIT_L1
        self.tlb1_misses[core] += 1
        s2 = <dict>PyList_GET_ITEM(
            <list>PyList_GET_ITEM(self.tlb2, core), page & self.tg2mask)
        if PyDict_Contains(s2, page_obj):
            PyDict_DelItem(s2, page_obj)
            PyDict_SetItem(s2, page_obj, True)
            self.tlb2_hits[core] += 1
            if PyDict_Size(s1) >= self.tg1ways:
                PyDict_DelItem(s1, _first_key(s1))
            PyDict_SetItem(s1, page_obj, True)
            return TLB_HIT_L2
        self.tlb_walks[core] += 1
        if PyDict_Size(s2) >= self.tg2ways:
            PyDict_DelItem(s2, _first_key(s2))
        PyDict_SetItem(s2, page_obj, True)
        if PyDict_Size(s1) >= self.tg1ways:
            PyDict_DelItem(s1, _first_key(s1))
        PyDict_SetItem(s1, page_obj, True)
        return TLB_MISS_WALK

    # -- cache walk with miss classification; returns lvl | cls << 2 ---------

    cdef long long _cache(self, long long core, long long line,
                          long long page, object line_obj) except -1:
        cdef long long idx, cls
        idx = ((line ^ page) if self.l1hash else line) & self.l1mask
        cdef dict s1 = <dict>PyList_GET_ITEM(
            <list>PyList_GET_ITEM(self.l1sets, core), idx)
        cdef dict shadow = <dict>PyList_GET_ITEM(self.shadow, core)
        cdef dict s2, s3
        if PyDict_Contains(s1, line_obj):
            PyDict_DelItem(s1, line_obj)
            PyDict_SetItem(s1, line_obj, True)
            lvl1 = <object>PyList_GET_ITEM(self.l1lv, core)
            lvl1.hits = lvl1.hits + 1
            if PyDict_Contains(shadow, line_obj):
                PyDict_DelItem(shadow, line_obj)
            PyDict_SetItem(shadow, line_obj, True)
            if PyDict_Size(shadow) > self.shadow_cap:
                PyDict_DelItem(shadow, _first_key(shadow))
            return LVL_L1 | (MISS_NONE << 2)

        lvl1 = <object>PyList_GET_ITEM(self.l1lv, core)
        lvl1.misses = lvl1.misses + 1
        seen = <object>PyList_GET_ITEM(self.seen, core)
        if PyDict_Contains(shadow, line_obj):
            cls = MISS_CONFLICT
            PyDict_DelItem(shadow, line_obj)
        elif PySet_Contains(seen, line_obj):
            cls = MISS_CAPACITY
        else:
            cls = MISS_COLD
            PySet_Add(seen, line_obj)
        PyDict_SetItem(shadow, line_obj, True)
        if PyDict_Size(shadow) > self.shadow_cap:
            PyDict_DelItem(shadow, _first_key(shadow))

        idx = ((line ^ page) if self.l2hash else line) & self.l2mask
        s2 = <dict>PyList_GET_ITEM(
            <list>PyList_GET_ITEM(self.l2sets, core), idx)
        if PyDict_Contains(s2, line_obj):
            PyDict_DelItem(s2, line_obj)
            PyDict_SetItem(s2, line_obj, True)
            lvl2 = <object>PyList_GET_ITEM(self.l2lv, core)
            lvl2.hits = lvl2.hits + 1
            self._fill_l1(core, s1, line_obj)
            return LVL_L2 | (cls << 2)

        lvl2 = <object>PyList_GET_ITEM(self.l2lv, core)
        lvl2.misses = lvl2.misses + 1
        idx = ((line ^ page) if self.l3hash else line) & self.l3mask
        s3 = <dict>PyList_GET_ITEM(self.l3sets, idx)
        if PyDict_Contains(s3, line_obj):
            PyDict_DelItem(s3, line_obj)
            PyDict_SetItem(s3, line_obj, True)
            self.l3lv.hits = self.l3lv.hits + 1
            self._fill_l2(core, s2, line_obj)
            self._fill_l1(core, s1, line_obj)
            return LVL_L3 | (cls << 2)

        self.l3lv.misses = self.l3lv.misses + 1
        self._fill_l3(s3, line_obj)
        self._fill_l2(core, s2, line_obj)
        self._fill_l1(core, s1, line_obj)
        return LVL_MEMORY | (cls << 2)

    # -- shared per-access plumbing -------------------------------------------

    cdef inline int _check_addr(self, long long addr, long long n) except -1:
        # debug_checks disables this path entirely, so there is no
        # live-address branch here
        if n < 1 or n > 8:
            raise SimulationError(f"access length {n} out of range 1..8")
        if (addr ^ (addr + n - 1)) >> 6:
            raise SimulationError(f"access at {addr:#x} len {n} spans a line")
        if not self.lo <= addr < self.hi:
            raise SimulationError(f"access outside any arena: {addr:#x}")
        return 0

    cdef int _access(self, long long core, long long addr, bint write) except -1:
        # coherence, then TLB, then the cache walk, then counters and cost:
        # the same mutation order as the interpreted access body
        cdef long long line = addr >> 6
        cdef long long page = addr >> 12
        cdef object line_obj = line
        cdef object page_obj = page
        self._coherence(core, line, line_obj, write)
        cdef long long tlb = self._tlb(core, page_obj, page)
        cdef long long packed = self._cache(core, line, page, line_obj)
        cdef long long lvl = packed & 3
        cdef long long cls = packed >> 2
        self.c_accesses[core] += 1
        if lvl == LVL_L1:
            self.c_l1h[core] += 1
        elif lvl == LVL_L2:
            self.c_l2h[core] += 1
        elif lvl == LVL_L3:
            self.c_l3h[core] += 1
        else:
            self.c_memf[core] += 1
        if cls == MISS_COLD:
            self.c_cold[core] += 1
        elif cls == MISS_CONFLICT:
            self.c_conf[core] += 1
        elif cls == MISS_CAPACITY:
            self.c_cap[core] += 1
        if tlb == TLB_HIT_L1:
            self.c_t1h[core] += 1
        elif tlb == TLB_HIT_L2:
            self.c_t2h[core] += 1
        else:
            self.c_walks[core] += 1
        self.clock[core] += self.cost_lvl[lvl] + self.cost_tlb[tlb]
        return 0

    # -- the two entry points, dispatching exactly like Machine.read/write ----

    cpdef object read(self, long long core, long long addr, long long n):
        t = <object>PyList_GET_ITEM(self.txns, core)
        cdef dict ov
        cdef object value
        cdef unsigned long long merged
        cdef long long i
        cdef bint hit
        cdef PyObject *bp
        if t is None:
            self._check_addr(addr, n)
            self._access(core, addr, False)
            return self._mem_read(addr, n)
        if t.status is not _ACTIVE:
            # raising the abort to the program retires the transaction
            self.txns[core] = None
            raise TransactionAborted(core, t.abort_code)
        self._check_addr(addr, n)
        self._access(core, addr, False)
        PySet_Add(t.read_set, addr >> 6)
        ov = <dict>t.overlay
        value = self._mem_read(addr, n)
        if PyDict_Size(ov) != 0:
            # overlay the transaction's own pending bytes
            merged = PyLong_AsUnsignedLongLong(value)
            hit = False
            for i in range(n):
                bp = PyDict_GetItem(ov, addr + i)
                if bp != NULL:
                    merged = (merged & ~((<unsigned long long>0xFF) << (8 * i))) | (
                        PyLong_AsUnsignedLongLong(<object>bp) << (8 * i))
                    hit = True
            if hit:
                value = PyLong_FromUnsignedLongLong(merged)
        if t.status is not _ACTIVE:  # own fill evicted a tracked line
            self.txns[core] = None
            raise TransactionAborted(core, t.abort_code)
        return value

    cpdef object write(self, long long core, long long addr, long long n,
                       object value):
        t = <object>PyList_GET_ITEM(self.txns, core)
        cdef dict ov
        cdef bytes data
        cdef const char *db
        cdef long long i
        if t is None:
            self._check_addr(addr, n)
            self._access(core, addr, True)
            self._mem_write(addr, n, value)
            return None
        if t.status is not _ACTIVE:
            self.txns[core] = None
            raise TransactionAborted(core, t.abort_code)
        self._check_addr(addr, n)
        self._access(core, addr, True)
        PySet_Add(t.write_set, addr >> 6)
        # log first, range-check via to_bytes second: the interpreted write
        # log does the same, so error timing matches
        (<list>t.write_log).append((addr, n, value))
        data = value.to_bytes(n, "little")
        db = PyBytes_AS_STRING(data)
        ov = <dict>t.overlay
        for i in range(n):
            PyDict_SetItem(ov, addr + i, <long long>(<unsigned char>db[i]))
        if t.status is not _ACTIVE:
            self.txns[core] = None
            raise TransactionAborted(core, t.abort_code)
        return None


# -- argument conversion with interpreted-path error fidelity ----------------

cdef long long _conv_n(object o) except? -1:
    # A length that does not fit a C long long cannot be in 1..8; fail
    # with the same message the bounds check would give.
    try:
        return PyLong_AsLongLong(o)
    except OverflowError:
        raise SimulationError(f"access length {o} out of range 1..8") from None


cdef long long _conv_addr(object a, long long n) except? -1:
    # An address beyond C long long range fails the same checks, in the
    # same order, that the interpreted path would apply to it.
    try:
        return PyLong_AsLongLong(a)
    except OverflowError:
        if n < 1 or n > 8:
            raise SimulationError(
                f"access length {n} out of range 1..8") from None
        if (a ^ (a + n - 1)) >> 6:
            raise SimulationError(
                f"access at {a:#x} len {n} spans a line") from None
        raise SimulationError(f"access outside any arena: {a:#x}") from None


def run_fast(engine, programs):
    """Round-robin driver identical to the interpreted engine loop.

    Plain reads and writes dispatch into FastPath; every other request
    kind is rare and handed to the interpreted executor, which operates
    on the same shared state.
    """
    machine = engine.machine
    cdef FastPath fp = <FastPath>machine.fastpath
    cdef Py_ssize_t nthreads = len(programs)
    if nthreads > machine.cores:
        raise SimulationError(
            f"{nthreads} threads but only {machine.cores} cores"
        )
    cdef list gens = list(programs)
    cdef list vals = [None] * nthreads
    # inbox kinds: 0 = deliver value, 1 = first resume, 2 = throw exception
    cdef bytearray kinds_ba = bytearray(b"\x01" * nthreads)
    cdef unsigned char *kinds = <unsigned char*>PyByteArray_AS_STRING(kinds_ba)
    cdef bytearray alive_ba = bytearray(b"\x01" * nthreads)
    cdef unsigned char *alive = <unsigned char*>PyByteArray_AS_STRING(alive_ba)
    cdef Py_ssize_t remaining = nthreads
    cdef long long events = engine.events
    cdef long long quantum = engine.quantum
    cdef Py_ssize_t tid, sz
    cdef long long q, a, nn
    cdef object gen, req, result, op, tr
    cdef PyObject *res = NULL
    cdef PySendResult st
    while remaining:
        for tid in range(nthreads):
            if not alive[tid]:
                continue
            gen = <object>PyList_GET_ITEM(gens, tid)
            for q in range(quantum):
                if kinds[tid] == 2:
                    try:
                        req = gen.throw(<object>PyList_GET_ITEM(vals, tid))
                    except StopIteration:
                        alive[tid] = 0
                        remaining -= 1
                        break
                else:
                    st = PyIter_Send(
                        gen,
                        <object>PyList_GET_ITEM(vals, tid)
                        if kinds[tid] == 0 else None,
                        &res,
                    )
                    if st == PYGEN_ERROR:
                        _rethrow()
                    req = <object>res
                    Py_DECREF(req)  # adopt the reference PyIter_Send returned
                    if st == PYGEN_RETURN:
                        alive[tid] = 0
                        remaining -= 1
                        break
                events += 1
                engine.events = events  # lock bookkeeping reads this mid-run
                tr = engine.trace
                if tr is not None:
                    tr.append((events, tid, req))
                try:
                    if type(req) is tuple:
                        sz = PyTuple_GET_SIZE(req)
                        op = <object>PyTuple_GET_ITEM(req, 0)
                        if sz == 3 and op == "r":
                            nn = _conv_n(<object>PyTuple_GET_ITEM(req, 2))
                            a = _conv_addr(<object>PyTuple_GET_ITEM(req, 1), nn)
                            result = fp.read(tid, a, nn)
                        elif sz == 4 and op == "w":
                            nn = _conv_n(<object>PyTuple_GET_ITEM(req, 2))
                            a = _conv_addr(<object>PyTuple_GET_ITEM(req, 1), nn)
                            fp.write(tid, a, nn,
                                     <object>PyTuple_GET_ITEM(req, 3))
                            result = None
                        else:
                            result = engine._exec(tid, req)
                    else:
                        result = engine._exec(tid, req)
                    kinds[tid] = 0
                    vals[tid] = result
                except TransactionAborted as e:
                    kinds[tid] = 2
                    vals[tid] = e
                except SimulationError as e:
                    raise SimulationError(
                        f"event {events} (thread {tid}): {e}"
                    ) from e
    return engine
