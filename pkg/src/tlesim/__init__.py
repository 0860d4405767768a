"""Deterministic simulator of cache-index pathologies under transactional
lock elision: a multicore cache/TLB/HTM model, allocator placement models,
TTS and elided locking, and the ring / AVL benchmarks built on them.
"""

from .config import CostModel, SimConfig, load_config_file, parse_config_text
from .engine import Engine, RunStats, ThreadCtx, make_contexts, run_direct
from .errors import ConfigError, IntegrityError, SimulationError
from .htm import (
    ABORT_CODES, BUFFER_OVERFLOW, CONFLICT, EXPLICIT, TransactionAborted,
)
from .locks import CsOutcome, TtsLock, audit_sections, run_section
from .machine import Machine
from .mem import (
    cia_size_class, glibc_effective_size, index_histogram, make_allocator,
)
from .prng import Rng, splitmix64
from .report import (
    CSV_COLUMNS, PlotSpec, SweepSpec, parse_csv, render_csv, render_svg,
    stats_to_row, sweep,
)
from .workloads import (
    AvlConfig, AvlTree, RingConfig, avl_check, avl_keys, avl_run, ring_run,
    ring_setup, store_shift_demo, tree_signature,
)

__version__ = "0.1.0"

__all__ = [
    "ABORT_CODES", "BUFFER_OVERFLOW", "CONFLICT", "EXPLICIT",
    "AvlConfig", "AvlTree", "ConfigError", "CostModel", "CsOutcome",
    "CSV_COLUMNS", "Engine", "IntegrityError", "Machine", "PlotSpec",
    "RingConfig", "Rng", "RunStats", "SimConfig", "SimulationError",
    "SweepSpec", "ThreadCtx", "TransactionAborted", "TtsLock",
    "audit_sections", "avl_check", "avl_keys", "avl_run", "cia_size_class",
    "glibc_effective_size", "index_histogram", "load_config_file",
    "make_allocator", "make_contexts", "parse_config_text", "parse_csv",
    "render_csv", "render_svg", "ring_run", "ring_setup", "run_direct",
    "run_section", "splitmix64", "stats_to_row", "store_shift_demo",
    "sweep", "tree_signature",
]
