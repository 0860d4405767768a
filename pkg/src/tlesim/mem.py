"""Simulated address space and allocator placement models.

Blocks are placed into a flat 64-bit address space by one of three models:

* ``GlibcModel``  - bump allocation with an 8-byte header, 16-byte rounding
  and a 32-byte floor, plus per-size LIFO free lists. Same-size allocations
  land at an exact stride, which is what concentrates them onto a handful of
  L1 indices when the stride shares a large power of two with the cache page.
* ``CiaAllocator`` - 64-byte aligned blocks whose sizes are the line size
  times 1 or an odd prime, drawn from per-thread sub-heap chunks. Odd
  multipliers walk every L1 index, so same-size runs stay balanced.
* ``RandShim``    - probabilistic size padding in front of the glibc model.

Only placement is modeled. Block payloads live in sparse ``Arena`` storage;
nothing here touches caches. All sizes are bytes, all addresses plain ints.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import SimulationError
from .prng import Rng, STREAM_ALLOCATOR

LINE = 64
PAGE = 4096

# Size-class multipliers: 1 plus every odd prime up to 127. Largest class
# is 64*127 = 8128 bytes; anything bigger goes page-granular.
CIA_MULTIPLIERS = (
    1, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61,
    67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127,
)
CIA_MAX_CLASSED = 64 * CIA_MULTIPLIERS[-1]
CIA_CHUNK_BLOCKS = 128  # blocks carved per sub-heap chunk

RAND_PAD_CHOICES = tuple(range(64, 513, 64))
RAND_Q64 = 1 << 63  # pad probability 0.5 as a 2**64 fraction


class Arena:
    """Byte-addressable region of simulated memory.

    Storage materializes per 64-byte line, so multi-hundred-megabyte address
    ranges cost nothing until written. Single accesses must stay within one
    line; ``dump`` may span lines for inspection.
    """

    __slots__ = ("name", "base", "length", "end", "_lines")

    def __init__(self, name, base, length):
        if base % PAGE or length % PAGE:
            raise SimulationError(
                f"arena {name}: base/length must be page aligned"
            )
        self.name = name
        self.base = base
        self.length = length
        self.end = base + length
        self._lines = {}

    def contains(self, addr):
        return self.base <= addr < self.end

    def read(self, addr, n):
        if (addr ^ (addr + n - 1)) >> 6:
            raise SimulationError(f"read of {n}B at {addr:#x} spans a line")
        buf = self._lines.get(addr >> 6)
        if buf is None:
            return 0
        off = addr & 63
        return int.from_bytes(buf[off:off + n], "little")

    def write(self, addr, n, value):
        if (addr ^ (addr + n - 1)) >> 6:
            raise SimulationError(f"write of {n}B at {addr:#x} spans a line")
        ln = addr >> 6
        buf = self._lines.get(ln)
        if buf is None:
            buf = self._lines[ln] = bytearray(64)
        off = addr & 63
        buf[off:off + n] = value.to_bytes(n, "little")

    def dump(self, addr, n):
        """Bytes of [addr, addr+n), may span lines. Inspection only."""
        out = bytearray()
        while n:
            take = min(n, 64 - (addr & 63))
            buf = self._lines.get(addr >> 6)
            if buf is None:
                out += bytes(take)
            else:
                off = addr & 63
                out += buf[off:off + take]
            addr += take
            n -= take
        return bytes(out)


class SimMemory:
    """Registry of arenas making up the simulated address space."""

    def __init__(self):
        self.arenas = []
        self._last = None  # accesses cluster per arena, so memoize the hit

    def add_arena(self, name, base, length):
        a = Arena(name, base, length)
        for other in self.arenas:
            if base < other.base + other.length and other.base < base + length:
                raise SimulationError(f"arena {name} overlaps {other.name}")
        self.arenas.append(a)
        return a

    def find(self, addr):
        a = self._last
        if a is not None and a.base <= addr < a.end:
            return a
        for a in self.arenas:
            if a.base <= addr < a.end:
                self._last = a
                return a
        return None

    def read(self, addr, n):
        a = self.find(addr)
        if a is None:
            raise SimulationError(f"read outside any arena: {addr:#x}")
        return a.read(addr, n)

    def write(self, addr, n, value):
        a = self.find(addr)
        if a is None:
            raise SimulationError(f"write outside any arena: {addr:#x}")
        a.write(addr, n, value)

    def dump(self, addr, n):
        a = self.find(addr)
        if a is None:
            raise SimulationError(f"dump outside any arena: {addr:#x}")
        return a.dump(addr, n)


@dataclass
class BlockInfo:
    """One live allocation: placement plus audit footprint."""

    base: int
    requested: int
    granted: int
    owner: int
    foot_start: int  # full footprint including headers/padding
    foot_len: int


@dataclass(frozen=True)
class SizeClass:
    multiplier: int
    size: int


def glibc_effective_size(request):
    """Bytes consumed per request: max(32, round_up(request + 8, 16))."""
    if request < 1:
        raise SimulationError(f"allocation size must be positive: {request}")
    return max(32, (request + 8 + 15) & ~15)


def cia_size_class(request):
    """Smallest class 64*m >= request, m in {1} or odd prime <= 127."""
    if request < 1:
        raise SimulationError(f"allocation size must be positive: {request}")
    if request > CIA_MAX_CLASSED:
        raise SimulationError(
            f"request {request} exceeds largest size class {CIA_MAX_CLASSED}"
        )
    need = (request + LINE - 1) // LINE
    for m in CIA_MULTIPLIERS:
        if m >= need:
            return SizeClass(m, 64 * m)
    raise AssertionError("unreachable")


def rand_pad(request, rng, q64=RAND_Q64, choices=RAND_PAD_CHOICES):
    """With probability q return request plus a uniform pad from choices."""
    if rng.chance(q64):
        return request + choices[rng.below(len(choices))]
    return request


def index_histogram(addresses, geometry):
    """Count addresses landing on each L1 set index of ``geometry``."""
    counts = [0] * geometry.sets
    idx = geometry.line_index
    for a in addresses:
        counts[idx(a)] += 1
    return counts


class GlibcModel:
    """Bump allocator with headers, shared across all threads.

    The first page of the arena is reserved for the heap descriptor; user
    blocks start at arena base + PAGE. A block's 8-byte header sits at
    base-8, so consecutive same-size allocations differ by exactly the
    effective size.
    """

    kind = "glibc"

    def __init__(self, arena):
        self.arena = arena
        self.desc_addr = arena.base  # shared heap-descriptor line
        self._user_base = arena.base + PAGE
        self._cursor = 0
        self._freelists = {}
        self.live = {}
        self.op_counter = 0

    def alloc(self, size, thread=0):
        eff = glibc_effective_size(size)
        fl = self._freelists.get(eff)
        if fl:
            base = fl.pop()
        else:
            base = self._user_base + self._cursor + 8
            self._cursor += eff
            if self._cursor > self.arena.length - PAGE:
                raise SimulationError(f"arena {self.arena.name} exhausted")
        self.op_counter += 1
        self.live[base] = BlockInfo(base, size, eff - 8, thread, base - 8, eff)
        return base

    def free(self, addr, thread=0):
        info = self.live.pop(addr, None)
        if info is None:
            raise SimulationError(f"free of non-live address {addr:#x}")
        self.op_counter += 1
        self._freelists.setdefault(info.granted + 8, []).append(addr)

    def metadata_touches(self, op, thread, base):
        # Shared descriptor plus the block header. Every thread hits the
        # same descriptor line, which is the cross-thread conflict source.
        return (self.desc_addr, base - 8)


class CiaAllocator:
    """Index-aware allocator: per-thread sub-heaps, line-multiple classes.

    Chunks of CIA_CHUNK_BLOCKS blocks are carved page-aligned from the
    arena, so fresh allocations of one class step through L1 indices at the
    class multiplier and cover every index before repeating. Requests above
    the largest class take whole pages with a rotating 64-byte base offset.
    """

    kind = "cia"
    MAX_THREADS = 32

    def __init__(self, arena):
        self.arena = arena
        # First page holds one 128-byte descriptor sector per thread.
        self._page_cursor = arena.base + PAGE
        self._subheaps = {}  # (thread, multiplier) -> [next_base, remaining]
        self._freelists = {}  # (thread, multiplier) -> [bases]
        self._big_freelists = {}  # page count -> [(base, pages)]
        self._big_counter = 0
        self.live = {}
        self.op_counter = 0

    def desc_addr(self, thread):
        if thread >= self.MAX_THREADS:
            raise SimulationError(f"thread id {thread} out of descriptor range")
        return self.arena.base + 128 * thread

    def _carve_pages(self, npages):
        base = self._page_cursor
        self._page_cursor += npages * PAGE
        if self._page_cursor > self.arena.base + self.arena.length:
            raise SimulationError(f"arena {self.arena.name} exhausted")
        return base

    def alloc(self, size, thread=0):
        self.op_counter += 1
        if size > CIA_MAX_CLASSED:
            return self._alloc_big(size, thread)
        cls = cia_size_class(size)
        key = (thread, cls.multiplier)
        fl = self._freelists.get(key)
        if fl:
            base = fl.pop()
        else:
            heap = self._subheaps.get(key)
            if not heap or heap[1] == 0:
                chunk = self._carve_pages(cls.size * CIA_CHUNK_BLOCKS // PAGE)
                heap = self._subheaps[key] = [chunk, CIA_CHUNK_BLOCKS]
            base = heap[0]
            heap[0] += cls.size
            heap[1] -= 1
        self.live[base] = BlockInfo(base, size, cls.size, thread, base, cls.size)
        return base

    def _alloc_big(self, size, thread):
        p = (size + PAGE - 1) // PAGE
        fl = self._big_freelists.get(p)
        if fl:
            base, pages = fl.pop()
            start = base - (base % PAGE)
        else:
            pages = p + 1  # extra page absorbs the base offset
            start = self._carve_pages(pages)
            off = 64 * (self._big_counter % 64)
            self._big_counter += 1
            base = start + off
        self.live[base] = BlockInfo(
            base, size, start + pages * PAGE - base, thread, start, pages * PAGE
        )
        return base

    def free(self, addr, thread=0):
        info = self.live.pop(addr, None)
        if info is None:
            raise SimulationError(f"free of non-live address {addr:#x}")
        self.op_counter += 1
        if info.requested > CIA_MAX_CLASSED:
            p = (info.requested + PAGE - 1) // PAGE
            self._big_freelists.setdefault(p, []).append(
                (addr, info.foot_len // PAGE)
            )
        else:
            # Returns to the owning sub-heap's list, not the caller's.
            key = (info.owner, info.granted // LINE)
            self._freelists.setdefault(key, []).append(addr)

    def metadata_touches(self, op, thread, base):
        return (self.desc_addr(thread), base)


class RandShim:
    """Pads sizes at random, then delegates placement to an inner model."""

    kind = "rand"

    def __init__(self, inner, seed):
        self.inner = inner
        self.rng = Rng(seed, STREAM_ALLOCATOR)

    @property
    def live(self):
        return self.inner.live

    @property
    def arena(self):
        return self.inner.arena

    @property
    def op_counter(self):
        return self.inner.op_counter

    def alloc(self, size, thread=0):
        return self.inner.alloc(rand_pad(size, self.rng), thread)

    def free(self, addr, thread=0):
        self.inner.free(addr, thread)

    def metadata_touches(self, op, thread, base):
        return self.inner.metadata_touches(op, thread, base)


ALLOCATOR_KINDS = ("glibc", "cia", "rand")


def make_allocator(kind, arena, seed=0):
    if kind == "glibc":
        return GlibcModel(arena)
    if kind == "cia":
        return CiaAllocator(arena)
    if kind == "rand":
        return RandShim(GlibcModel(arena), seed)
    raise SimulationError(f"unknown allocator kind {kind!r}")


def audit_no_overlap(allocator):
    """Raise if any two live blocks' footprints intersect."""
    blocks = sorted(allocator.live.values(), key=lambda b: b.foot_start)
    prev = None
    for b in blocks:
        if prev is not None and b.foot_start < prev.foot_start + prev.foot_len:
            raise SimulationError(
                f"live blocks overlap: {prev.base:#x} and {b.base:#x}"
            )
        prev = b


def audit_live_count(allocator, expected):
    n = len(allocator.live)
    if n != expected:
        raise SimulationError(f"expected {expected} live blocks, found {n}")
