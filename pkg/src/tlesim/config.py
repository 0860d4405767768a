"""Machine configuration and the line-oriented config file format.

A config file holds ``key = value`` lines; ``#`` starts a comment. Keys use
the dotted names listed in DEFAULTS. Unknown keys or unparsable values are
configuration errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError

DEFAULTS = {
    "l1.kb": 32,
    "l1.ways": 8,
    "l2.kb": 256,
    "l2.ways": 8,
    "l3.mb": 8,
    "l3.ways": 8,
    "line": 64,
    "tlb1.entries": 64,
    "tlb1.ways": 4,
    "tlb2.entries": 1024,
    "tlb2.ways": 8,
    "page": 4096,
    "index_hash": "none",
    "cost.l1_hit": 4,
    "cost.l2_hit": 12,
    "cost.l3_hit": 40,
    "cost.memory": 200,
    "cost.l2_tlb_hit": 7,
    "cost.page_walk": 30,
    "cost.abort_penalty": 150,
    "cost.lock_swap": 20,
    "sched.quantum": 1,
}

_STR_KEYS = {"index_hash"}


@dataclass(frozen=True)
class CostModel:
    """Cycles charged per access outcome."""

    l1_hit: int = 4
    l2_hit: int = 12
    l3_hit: int = 40
    memory: int = 200
    l2_tlb_hit: int = 7
    page_walk: int = 30
    abort_penalty: int = 150  # plus the cycles already spent in the attempt
    lock_swap: int = 20


@dataclass
class SimConfig:
    """Everything the machine needs besides the workload itself."""

    cores: int = 4
    l1_kb: int = 32
    l1_ways: int = 8
    l2_kb: int = 256
    l2_ways: int = 8
    l3_mb: int = 8
    l3_ways: int = 8
    line: int = 64
    tlb1_entries: int = 64
    tlb1_ways: int = 4
    tlb2_entries: int = 1024
    tlb2_ways: int = 8
    page: int = 4096
    index_hash: str = "none"
    cost: CostModel = field(default_factory=CostModel)
    quantum: int = 1
    heap_arena_mb: int = 1024
    cia_arena_mb: int = 1024
    raw_arena_mb: int = 256
    debug_checks: bool = False
    # Use the compiled access path when the extension is importable.
    # Results are identical either way; False forces the interpreted
    # path, which debug_checks implies.
    fast_core: bool = True

    @classmethod
    def from_mapping(cls, values):
        """Build from a DEFAULTS-shaped mapping (config file contents)."""
        v = dict(DEFAULTS)
        for k, val in values.items():
            if k not in v:
                raise ConfigError(f"unknown config key {k!r}")
            v[k] = val
        cost = CostModel(
            l1_hit=v["cost.l1_hit"],
            l2_hit=v["cost.l2_hit"],
            l3_hit=v["cost.l3_hit"],
            memory=v["cost.memory"],
            l2_tlb_hit=v["cost.l2_tlb_hit"],
            page_walk=v["cost.page_walk"],
            abort_penalty=v["cost.abort_penalty"],
            lock_swap=v["cost.lock_swap"],
        )
        return cls(
            l1_kb=v["l1.kb"], l1_ways=v["l1.ways"],
            l2_kb=v["l2.kb"], l2_ways=v["l2.ways"],
            l3_mb=v["l3.mb"], l3_ways=v["l3.ways"],
            line=v["line"],
            tlb1_entries=v["tlb1.entries"], tlb1_ways=v["tlb1.ways"],
            tlb2_entries=v["tlb2.entries"], tlb2_ways=v["tlb2.ways"],
            page=v["page"], index_hash=v["index_hash"],
            cost=cost, quantum=v["sched.quantum"],
        )

    def to_mapping(self):
        c = self.cost
        return {
            "l1.kb": self.l1_kb, "l1.ways": self.l1_ways,
            "l2.kb": self.l2_kb, "l2.ways": self.l2_ways,
            "l3.mb": self.l3_mb, "l3.ways": self.l3_ways,
            "line": self.line,
            "tlb1.entries": self.tlb1_entries, "tlb1.ways": self.tlb1_ways,
            "tlb2.entries": self.tlb2_entries, "tlb2.ways": self.tlb2_ways,
            "page": self.page, "index_hash": self.index_hash,
            "cost.l1_hit": c.l1_hit, "cost.l2_hit": c.l2_hit,
            "cost.l3_hit": c.l3_hit, "cost.memory": c.memory,
            "cost.l2_tlb_hit": c.l2_tlb_hit, "cost.page_walk": c.page_walk,
            "cost.abort_penalty": c.abort_penalty,
            "cost.lock_swap": c.lock_swap,
            "sched.quantum": self.quantum,
        }


def parse_config_text(text):
    """Parse ``key = value`` lines into a typed mapping."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in _STR_KEYS:
            out[key] = val
        else:
            try:
                out[key] = int(val)
            except ValueError:
                raise ConfigError(
                    f"line {lineno}: key {key!r} needs an integer, got {val!r}"
                ) from None
    return out


def load_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    return parse_config_text(text)


def format_config(values=None):
    """Render a SimConfig or mapping (defaults if None) in file syntax."""
    if isinstance(values, SimConfig):
        values = values.to_mapping()
    v = dict(DEFAULTS)
    if values:
        v.update(values)
    return "\n".join(f"{k} = {v[k]}" for k in DEFAULTS) + "\n"
