"""Deterministic pseudo-random streams (splitmix64).

Every random choice in a run comes from a named stream so that runs with the
same seed replay exactly. Thread t draws from stream t; helper streams
(allocator padding, setup shuffles) use fixed ids far above any thread id.
"""

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Stream ids reserved for non-thread consumers.
STREAM_ALLOCATOR = 0x414C4C4F43  # "ALLOC"
STREAM_SETUP = 0x53455450  # "SETP"


def splitmix64(state):
    """Advance one splitmix64 step; returns (new_state, output)."""
    state = (state + _GOLDEN) & _M64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return state, z ^ (z >> 31)


class Rng:
    """One splitmix64 stream, identified by (seed, stream id)."""

    __slots__ = ("_state",)

    def __init__(self, seed, stream=0):
        self._state = (seed + stream * _GOLDEN) & _M64

    def next(self):
        self._state, out = splitmix64(self._state)
        return out

    def below(self, n):
        """Uniform int in [0, n) by multiply-high; no modulo rejection."""
        return (self.next() * n) >> 64

    def chance(self, num64):
        """True with probability num64 / 2**64."""
        return self.next() < num64


def shuffle(seq, rng):
    """In-place Fisher-Yates shuffle driven by the given stream."""
    for i in range(len(seq) - 1, 0, -1):
        j = rng.below(i + 1)
        seq[i], seq[j] = seq[j], seq[i]
