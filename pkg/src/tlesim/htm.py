"""Hardware transactional memory model over the cache hierarchy.

Transactions track their read-set wherever the hierarchy still holds the
line (L1, L2 or L3) and their write-set in L1 only. Writes are buffered in
a per-transaction log and applied to memory atomically at commit; aborts
discard the log. Abort codes:

* ``conflict``        - a remote core invalidated a tracked line
                        (requester wins: the later access always survives)
* ``buffer_overflow`` - a tracked line fell out of its tracking structure:
                        write-set line evicted from L1, or any tracked line
                        back-invalidated by an L3 eviction
* ``explicit``        - the program itself aborted (lock subscription saw
                        the lock held)

Nesting is flat: beginning a transaction inside an active one is an error.
"""

from __future__ import annotations

from .errors import SimulationError

CONFLICT = "conflict"
BUFFER_OVERFLOW = "buffer_overflow"
EXPLICIT = "explicit"
ABORT_CODES = (CONFLICT, BUFFER_OVERFLOW, EXPLICIT)

ACTIVE, COMMITTED, ABORTED = "active", "committed", "aborted"


class TransactionAborted(Exception):
    """Raised out of a transactional access whose transaction died."""

    def __init__(self, core, code):
        super().__init__(f"core {core} transaction aborted: {code}")
        self.core = core
        self.code = code


class Txn:
    """State of one hardware transaction."""

    __slots__ = (
        "core", "status", "abort_code", "read_set", "write_set",
        "write_log", "overlay", "start_clock", "allocs", "pending_frees",
    )

    def __init__(self, core, start_clock):
        self.core = core
        self.status = ACTIVE
        self.abort_code = None
        self.read_set = set()
        self.write_set = set()
        self.write_log = []  # (addr, len, value) in program order
        self.overlay = {}  # byte addr -> byte value, for read-own-write
        self.start_clock = start_clock
        self.allocs = []  # bases allocated inside, undone on abort
        self.pending_frees = []  # (addr, thread) applied at commit

    def log_write(self, addr, n, value):
        self.write_log.append((addr, n, value))
        ov = self.overlay
        for i, b in enumerate(value.to_bytes(n, "little")):
            ov[addr + i] = b

    def read_through(self, memory, addr, n):
        """Read memory with this transaction's own writes overlaid."""
        ov = self.overlay
        if not ov:
            return memory.read(addr, n)
        bs = bytearray(memory.read(addr, n).to_bytes(n, "little"))
        hit = False
        for i in range(n):
            v = ov.get(addr + i)
            if v is not None:
                bs[i] = v
                hit = True
        return int.from_bytes(bs, "little") if hit else memory.read(addr, n)


class Directory:
    """Single-writer / multiple-reader ownership per line.

    One dict keyed by line: a non-negative entry is a bitmask of cores
    holding the line shared, a negative entry ``-(core + 1)`` marks the
    core holding it exclusive. A line never has both.
    """

    def __init__(self):
        self.state = {}

    def holders(self, line):
        st = self.state.get(line, 0)
        return st if st >= 0 else 1 << (-st - 1)
