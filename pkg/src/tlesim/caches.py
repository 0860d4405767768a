"""Set-associative cache hierarchy, TLBs, and miss classification.

Geometry defaults model a common three-level design: per-core L1D 32KB
8-way (64 sets of 64-byte lines, so the cache page is 4KB and addresses
equal mod 4096 collide), per-core L2 256KB 8-way, shared inclusive L3 8MB
8-way. Strict LRU everywhere. Inclusion is enforced downward: an L2 victim
is dropped from L1, an L3 victim is back-invalidated out of every core's
private levels.

Each core also carries a shadow fully-associative cache with the same
capacity as L1 (512 lines) that sees every access. It classifies L1 misses:

* conflict - the shadow would have hit: only index collisions evicted it
* capacity - the shadow missed too, but the line was seen before
* cold     - first access to the line by this core

Eviction and invalidation hooks let the transaction engine observe lines
falling out of the hierarchy; the hooks fire for every displaced line.
"""

from __future__ import annotations

from array import array
from dataclasses import dataclass, field

from .errors import SimulationError

# hit level codes returned by access()
L1, L2, L3, MEMORY = 0, 1, 2, 3
LEVEL_NAMES = ("L1", "L2", "L3", "Memory")

# miss class codes
NONE, COLD, CONFLICT_MISS, CAPACITY = 0, 1, 2, 3
MISS_CLASS_NAMES = ("none", "cold", "conflict", "capacity")

# TLB outcome codes
TLB_L1, TLB_L2, TLB_WALK = 0, 1, 2
TLB_NAMES = ("l1", "l2", "walk")


class CacheGeometry:
    """Shape of one set-associative level plus its index function."""

    __slots__ = ("capacity", "ways", "line", "sets", "mask", "cache_page",
                 "index_hash", "_hash")

    def __init__(self, capacity, ways, line=64, index_hash="none"):
        sets = capacity // (line * ways)
        if sets * line * ways != capacity or sets & (sets - 1):
            raise SimulationError(
                f"geometry {capacity}B/{ways}w/{line}B does not give a "
                f"power-of-two set count"
            )
        if index_hash not in ("none", "xor-high-bits"):
            raise SimulationError(f"unknown index hash {index_hash!r}")
        self.capacity = capacity
        self.ways = ways
        self.line = line
        self.sets = sets
        self.mask = sets - 1
        self.cache_page = sets * line
        self.index_hash = index_hash
        self._hash = index_hash == "xor-high-bits"

    def line_index(self, addr):
        idx = addr >> 6
        if self._hash:
            idx ^= addr >> 12  # fold bits 12.. into the index
        return idx & self.mask

    @property
    def lines(self):
        return self.sets * self.ways


@dataclass
class TlbGeometry:
    entries: int
    ways: int
    page: int = 4096

    def __post_init__(self):
        sets = self.entries // self.ways
        if sets * self.ways != self.entries or sets & (sets - 1):
            raise SimulationError(
                f"TLB {self.entries}e/{self.ways}w set count not a power of two"
            )
        self.sets = sets
        self.mask = sets - 1


class _Level:
    """Counters plus per-set LRU dicts for one cache level."""

    __slots__ = ("geometry", "sets", "hits", "misses", "evictions")

    def __init__(self, geometry):
        self.geometry = geometry
        self.sets = [dict() for _ in range(geometry.sets)]
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def resident_lines(self):
        out = set()
        for s in self.sets:
            out.update(s)
        return out


@dataclass
class AccessOutcome:
    """Result of one simulated access, for direct inspection in tests."""

    hit_level: str
    miss_class: str
    tlb: str
    evicted: list = field(default_factory=list)


class CacheHierarchy:
    """Private L1/L2 per core, shared L3, TLBs, and the shadow classifier.

    ``evict_hook(core, level, line)`` fires for every line displaced by a
    fill (level 3 passes core=-1: the line left the shared level and with it
    the whole hierarchy). ``inval_hook(core, line)`` fires on cross-core
    invalidation via ``invalidate_line``. Back-invalidations driven by L3
    evictions fire evict hooks, never invalidation hooks.
    """

    def __init__(self, l1, l2, l3, tlb1, tlb2, cores):
        self.cores = cores
        self.gl1, self.gl2, self.gl3 = l1, l2, l3
        self.l1 = [_Level(l1) for _ in range(cores)]
        self.l2 = [_Level(l2) for _ in range(cores)]
        self.l3 = _Level(l3)
        self.shadow = [dict() for _ in range(cores)]
        self.shadow_capacity = l1.lines
        self.seen = [set() for _ in range(cores)]
        self.tg1, self.tg2 = tlb1, tlb2
        self.tlb1 = [[dict() for _ in range(tlb1.sets)] for _ in range(cores)]
        self.tlb2 = [[dict() for _ in range(tlb2.sets)] for _ in range(cores)]
        self.tlb1_hits = array("q", bytes(8 * cores))
        self.tlb1_misses = array("q", bytes(8 * cores))
        self.tlb2_hits = array("q", bytes(8 * cores))
        self.walks = array("q", bytes(8 * cores))
        self.evict_hook = None
        self.inval_hook = None

    # -- main access path ---------------------------------------------------

    def access(self, core, addr, write):
        """One access; returns (hit_level, miss_class, tlb) code triple."""
        line = addr >> 6
        page = addr >> 12
        tlb = self._tlb_access(core, page)

        g = self.gl1
        l1 = self.l1[core]
        s1 = l1.sets[(line ^ page if g._hash else line) & g.mask]
        shadow = self.shadow[core]
        if line in s1:
            del s1[line]
            s1[line] = True
            l1.hits += 1
            if line in shadow:
                del shadow[line]
            shadow[line] = True
            if len(shadow) > self.shadow_capacity:
                del shadow[next(iter(shadow))]
            return (L1, NONE, tlb)

        l1.misses += 1
        seen = self.seen[core]
        if line in shadow:
            cls = CONFLICT_MISS
            del shadow[line]
        elif line in seen:
            cls = CAPACITY
        else:
            cls = COLD
            seen.add(line)
        shadow[line] = True
        if len(shadow) > self.shadow_capacity:
            del shadow[next(iter(shadow))]

        g = self.gl2
        l2 = self.l2[core]
        s2 = l2.sets[(line ^ page if g._hash else line) & g.mask]
        if line in s2:
            del s2[line]
            s2[line] = True
            l2.hits += 1
            self._fill_l1(core, s1, line)
            return (L2, cls, tlb)

        l2.misses += 1
        g = self.gl3
        s3 = self.l3.sets[(line ^ page if g._hash else line) & g.mask]
        if line in s3:
            del s3[line]
            s3[line] = True
            self.l3.hits += 1
            self._fill_l2(core, s2, line)
            self._fill_l1(core, s1, line)
            return (L3, cls, tlb)

        self.l3.misses += 1
        self._fill_l3(s3, line)
        self._fill_l2(core, s2, line)
        self._fill_l1(core, s1, line)
        return (MEMORY, cls, tlb)

    def access_outcome(self, core, addr, write=False):
        """access() wrapped into an AccessOutcome, recording evictions."""
        evicted = []
        saved = self.evict_hook

        def recorder(c, level, line):
            evicted.append((LEVEL_NAMES[level - 1] if level < 3 else "L3", line))
            if saved:
                saved(c, level, line)

        self.evict_hook = recorder
        try:
            lvl, cls, tlb = self.access(core, addr, write)
        finally:
            self.evict_hook = saved
        return AccessOutcome(
            LEVEL_NAMES[lvl], MISS_CLASS_NAMES[cls], TLB_NAMES[tlb], evicted
        )

    # -- fills, one per level so hooks see exact displacement order --------

    def _fill_l1(self, core, s1, line):
        if len(s1) >= self.gl1.ways:
            victim = next(iter(s1))
            del s1[victim]
            self.l1[core].evictions += 1
            if self.evict_hook:
                self.evict_hook(core, 1, victim)
        s1[line] = True

    def _fill_l2(self, core, s2, line):
        if len(s2) >= self.gl2.ways:
            victim = next(iter(s2))
            del s2[victim]
            self.l2[core].evictions += 1
            # inclusion: the victim may not stay in L1 either
            s1v = self.l1[core].sets[self.gl1.line_index(victim << 6)]
            if victim in s1v:
                del s1v[victim]
                self.l1[core].evictions += 1
                if self.evict_hook:
                    self.evict_hook(core, 1, victim)
            if self.evict_hook:
                self.evict_hook(core, 2, victim)
        s2[line] = True

    def _fill_l3(self, s3, line):
        if len(s3) >= self.gl3.ways:
            victim = next(iter(s3))
            del s3[victim]
            self.l3.evictions += 1
            vaddr = victim << 6
            for c in range(self.cores):
                s1v = self.l1[c].sets[self.gl1.line_index(vaddr)]
                if victim in s1v:
                    del s1v[victim]
                    self.l1[c].evictions += 1
                    if self.evict_hook:
                        self.evict_hook(c, 1, victim)
                s2v = self.l2[c].sets[self.gl2.line_index(vaddr)]
                if victim in s2v:
                    del s2v[victim]
                    self.l2[c].evictions += 1
                    if self.evict_hook:
                        self.evict_hook(c, 2, victim)
            if self.evict_hook:
                self.evict_hook(-1, 3, victim)
        s3[line] = True

    # -- invalidation (coherence) -------------------------------------------

    def invalidate_line(self, core, line):
        """Drop a line from one core's private levels; absent lines no-op.

        The invalidation hook fires regardless of residency: transactional
        tracking outlives L1/L2 residency, so the observer decides.
        """
        addr = line << 6
        s1 = self.l1[core].sets[self.gl1.line_index(addr)]
        if line in s1:
            del s1[line]
        s2 = self.l2[core].sets[self.gl2.line_index(addr)]
        if line in s2:
            del s2[line]
        if self.inval_hook:
            self.inval_hook(core, line)

    # -- TLBs ----------------------------------------------------------------

    def _tlb_access(self, core, page):
        s1 = self.tlb1[core][page & self.tg1.mask]
        if page in s1:
            del s1[page]
            s1[page] = True
            self.tlb1_hits[core] += 1
            return TLB_L1
        self.tlb1_misses[core] += 1
        s2 = self.tlb2[core][page & self.tg2.mask]
        if page in s2:
            del s2[page]
            s2[page] = True
            self.tlb2_hits[core] += 1
            self._tlb_fill(s1, page, self.tg1.ways)
            return TLB_L2
        self.walks[core] += 1
        self._tlb_fill(s2, page, self.tg2.ways)
        self._tlb_fill(s1, page, self.tg1.ways)
        return TLB_WALK

    @staticmethod
    def _tlb_fill(s, page, ways):
        if len(s) >= ways:
            del s[next(iter(s))]
        s[page] = True

    # -- inspection -----------------------------------------------------------

    def check_inclusion(self):
        """Verify L1 subset-of L2 subset-of L3 for every core."""
        all3 = self.l3.resident_lines()
        for c in range(self.cores):
            l1 = self.l1[c].resident_lines()
            l2 = self.l2[c].resident_lines()
            if not l1 <= l2:
                raise SimulationError(f"core {c}: L1 not included in L2")
            if not l2 <= all3:
                raise SimulationError(f"core {c}: L2 not included in L3")

    def occupancy_ok(self):
        for levels in (self.l1, self.l2, [self.l3]):
            for lv in levels:
                for s in lv.sets:
                    if len(s) > lv.geometry.ways:
                        return False
        return True


def default_hierarchy(cores, index_hash="none"):
    return CacheHierarchy(
        CacheGeometry(32 * 1024, 8, index_hash=index_hash),
        CacheGeometry(256 * 1024, 8),
        CacheGeometry(8 * 1024 * 1024, 8),
        TlbGeometry(64, 4),
        TlbGeometry(1024, 8),
        cores,
    )
