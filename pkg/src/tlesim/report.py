"""Sweep driver, CSV serialization, median aggregation, SVG rendering.

CSV documents begin with ``#`` provenance comment lines echoing the full
configuration (so a file is reproducible from its own header), then the
fixed header row, then one row per run. All numeric cells are exact
integers except throughput_proxy, which is quantized to 6 decimal places
at row-construction time so that parse(render(rows)) == rows.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from xml.sax.saxutils import escape

from .config import SimConfig, format_config
from .errors import ConfigError, IntegrityError, SimulationError
from .workloads import AvlConfig, RingConfig, avl_run, ring_run

CSV_COLUMNS = (
    "benchmark", "allocator", "lock", "node_size", "seed", "ops", "cycles",
    "throughput_proxy",
    "l1_miss_conflict", "l1_miss_capacity", "l1_miss_cold",
    "aborts_conflict", "aborts_buffer_overflow", "aborts_explicit",
    "fast_sections", "slow_sections",
    "dtlb_l1_misses", "tlb_walks",
    "index_histogram_max", "index_histogram_nonzero_bins",
)

_STR_COLUMNS = frozenset(("benchmark", "allocator", "lock"))
_FLOAT_COLUMNS = frozenset(("throughput_proxy",))

ALLOCATORS = ("glibc", "cia", "rand")
LOCKS = ("tts", "tle")


def series_label(allocator, lock):
    """Figure legend naming: lock family then allocator, upper-case."""
    return ("TTSTLE" if lock == "tle" else "TTS") + "-" + allocator.upper()


def stats_to_row(benchmark, allocator, lock, node_size, seed, stats):
    c = stats.counters
    return {
        "benchmark": benchmark,
        "allocator": allocator,
        "lock": lock,
        "node_size": node_size,
        "seed": seed,
        "ops": stats.ops,
        "cycles": stats.cycles,
        "throughput_proxy": float(f"{stats.throughput_proxy:.6f}"),
        "l1_miss_conflict": sum(c["miss_conflict"]),
        "l1_miss_capacity": sum(c["miss_capacity"]),
        "l1_miss_cold": sum(c["miss_cold"]),
        "aborts_conflict": sum(c["aborts_conflict"]),
        "aborts_buffer_overflow": sum(c["aborts_buffer_overflow"]),
        "aborts_explicit": sum(c["aborts_explicit"]),
        "fast_sections": stats.fast_sections,
        "slow_sections": stats.slow_sections,
        "dtlb_l1_misses": sum(c["tlb2_hits"]) + sum(c["walks"]),
        "tlb_walks": sum(c["walks"]),
        "index_histogram_max": stats.extra.get("index_histogram_max", 0),
        "index_histogram_nonzero_bins": stats.extra.get(
            "index_histogram_nonzero_bins", 0
        ),
    }


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepSpec:
    benchmark: str = "ring"
    sizes: tuple = tuple(range(64, 4353, 16))
    allocators: tuple = ALLOCATORS
    locks: tuple = LOCKS
    repeats: int = 1
    seed: int = 0
    iterations: int = 50  # per ring cell
    ops_per_thread: int = 1000  # per avl cell
    threads: int = 4

    def validate(self):
        if self.benchmark not in ("ring", "avl"):
            raise ConfigError(f"unknown benchmark {self.benchmark!r}")
        if not self.sizes:
            raise ConfigError("size list is empty")
        for a in self.allocators:
            if a not in ALLOCATORS:
                raise ConfigError(f"unknown allocator {a!r}")
        for lk in self.locks:
            if lk not in LOCKS:
                raise ConfigError(f"unknown lock {lk!r}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")


def run_cell(spec, allocator, lock, size, seed, sim=None):
    """One (benchmark, allocator, lock, size, seed) measurement."""
    try:
        if spec.benchmark == "ring":
            cfg = RingConfig(
                node_size=size, iterations=spec.iterations, seed=seed,
                allocator=allocator, lock=lock,
            )
            stats = ring_run(cfg, sim)
        else:
            cfg = AvlConfig(
                threads=spec.threads, ops_per_thread=spec.ops_per_thread,
                node_size=size, seed=seed, allocator=allocator, lock=lock,
            )
            stats = avl_run(cfg, sim)
    except (ConfigError, IntegrityError, SimulationError) as e:
        raise type(e)(
            f"sweep cell ({spec.benchmark}, {allocator}, {lock}, "
            f"size {size}, seed {seed}): {e}"
        ) from e
    return stats_to_row(spec.benchmark, allocator, lock, size, seed, stats)


def sweep(spec, sim=None):
    """Run every cell; returns (rows, median_rows or None)."""
    spec.validate()
    rows = []
    for size in spec.sizes:
        for allocator in spec.allocators:
            for lock in spec.locks:
                for r in range(spec.repeats):
                    rows.append(
                        run_cell(spec, allocator, lock, size,
                                 spec.seed + r, sim)
                    )
    medians = median_rows(rows, spec.seed) if spec.repeats > 1 else None
    return rows, medians


def median_rows(rows, seed_base):
    """Collapse repeats to one row per cell, median per numeric column.

    The seed column is reset to the sweep's seed base since a median row
    aggregates runs with distinct seeds.
    """
    groups = {}
    for row in rows:
        key = (row["benchmark"], row["allocator"], row["lock"],
               row["node_size"])
        groups.setdefault(key, []).append(row)
    out = []
    for key, members in groups.items():
        agg = dict(members[0])
        agg["seed"] = seed_base
        for col in CSV_COLUMNS:
            if col in _STR_COLUMNS or col in ("node_size", "seed"):
                continue
            m = statistics.median(r[col] for r in members)
            if col in _FLOAT_COLUMNS:
                agg[col] = float(f"{m:.6f}")
            else:
                agg[col] = int(m) if float(m).is_integer() else float(m)
        out.append(agg)
    return out


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _fmt_cell(col, value):
    if col in _STR_COLUMNS:
        s = str(value)
        if "," in s or "\n" in s:
            raise SimulationError(f"unserializable cell value {value!r}")
        return s
    if col in _FLOAT_COLUMNS:
        return f"{value:.6f}"
    if isinstance(value, float) and not value.is_integer():
        return f"{value:.6f}"  # fractional medians of even repeat counts
    return str(int(value))


def render_csv(rows, provenance=None):
    lines = [f"# {k} = {v}" for k, v in (provenance or {}).items()]
    lines.append(",".join(CSV_COLUMNS))
    for row in rows:
        lines.append(",".join(_fmt_cell(c, row[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def parse_csv(text):
    """Inverse of render_csv; comment and blank lines are skipped."""
    rows = []
    header = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cells = line.split(",")
        if header is None:
            if tuple(cells) != CSV_COLUMNS:
                raise ConfigError("unrecognized CSV header")
            header = cells
            continue
        if len(cells) != len(CSV_COLUMNS):
            raise ConfigError(
                f"row has {len(cells)} cells, expected {len(CSV_COLUMNS)}"
            )
        row = {}
        for col, cell in zip(CSV_COLUMNS, cells):
            if col in _STR_COLUMNS:
                row[col] = cell
            elif col in _FLOAT_COLUMNS or "." in cell:
                row[col] = float(cell)
            else:
                row[col] = int(cell)
        rows.append(row)
    if header is None:
        raise ConfigError("CSV document has no header row")
    return rows


def provenance_lines(cfg=None, **params):
    """Ordered provenance mapping: run parameters then machine config."""
    prov = dict(sorted(params.items()))
    for line in format_config(cfg or SimConfig()).splitlines():
        key, _, value = line.partition(" = ")
        prov[key] = value
    return prov


# ---------------------------------------------------------------------------
# SVG figures
# ---------------------------------------------------------------------------

@dataclass
class PlotSpec:
    x_column: str = "node_size"
    y_column: str = "throughput_proxy"
    title: str = ""
    width: int = 960
    height: int = 600

SERIES_COLORS = {
    "TTS-GLIBC": "#c0392b",
    "TTS-CIA": "#2980b9",
    "TTS-RAND": "#8e44ad",
    "TTSTLE-GLIBC": "#e67e22",
    "TTSTLE-CIA": "#27ae60",
    "TTSTLE-RAND": "#16a085",
}
_FALLBACK_COLORS = ("#34495e", "#d35400", "#7f8c8d", "#2c3e50")


def _tick_text(v):
    if isinstance(v, float) and not float(v).is_integer():
        return f"{v:.4g}"
    return str(int(v))


def render_svg(csv_text, plot=None):
    """Render a CSV document to a standalone SVG line figure.

    One polyline per (allocator, lock) series, x ascending in row order.
    """
    plot = plot or PlotSpec()
    rows = parse_csv(csv_text)
    if not rows:
        raise ConfigError("CSV document has no data rows to plot")
    for col in (plot.x_column, plot.y_column):
        if col not in CSV_COLUMNS:
            raise ConfigError(f"unknown plot column {col!r}")

    series = {}
    for row in rows:
        label = series_label(row["allocator"], row["lock"])
        series.setdefault(label, []).append(
            (row[plot.x_column], row[plot.y_column])
        )

    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    xmin, xmax = min(xs), max(xs)
    ymin, ymax = min(ys), max(ys)
    if xmax == xmin:
        xmax = xmin + 1
    if ymax == ymin:
        ymax = ymin + 1
    left, right, top, bottom = 70, 180, 40, 50
    pw = plot.width - left - right
    ph = plot.height - top - bottom

    def sx(x):
        return left + (x - xmin) / (xmax - xmin) * pw

    def sy(y):
        return top + (1 - (y - ymin) / (ymax - ymin)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{plot.width}" '
        f'height="{plot.height}" viewBox="0 0 {plot.width} {plot.height}">',
        f'<rect width="{plot.width}" height="{plot.height}" fill="white"/>',
    ]
    if plot.title:
        out.append(
            f'<text x="{plot.width / 2:.1f}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="16">'
            f"{escape(plot.title)}</text>"
        )
    # axes and ticks
    axis = 'stroke="#333" stroke-width="1"'
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" '
               f'y2="{top + ph}" {axis}/>')
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" '
               f'y2="{top + ph}" {axis}/>')
    for i in range(6):
        fx = xmin + (xmax - xmin) * i / 5
        fy = ymin + (ymax - ymin) * i / 5
        out.append(
            f'<line x1="{sx(fx):.1f}" y1="{top + ph}" x2="{sx(fx):.1f}" '
            f'y2="{top + ph + 5}" {axis}/>'
            f'<text x="{sx(fx):.1f}" y="{top + ph + 18}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="11">'
            f"{_tick_text(fx)}</text>"
        )
        out.append(
            f'<line x1="{left - 5}" y1="{sy(fy):.1f}" x2="{left}" '
            f'y2="{sy(fy):.1f}" {axis}/>'
            f'<text x="{left - 8}" y="{sy(fy) + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{_tick_text(fy)}</text>'
        )
    out.append(
        f'<text x="{left + pw / 2:.1f}" y="{plot.height - 8}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="12">'
        f"{escape(plot.x_column)}</text>"
    )
    out.append(
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">'
        f"{escape(plot.y_column)}</text>"
    )
    # series
    fallback = iter(_FALLBACK_COLORS * 8)
    for li, (label, pts) in enumerate(series.items()):
        color = SERIES_COLORS.get(label) or next(fallback)
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{coords}"/>'
        )
        ly = top + 16 + 20 * li
        lx = left + pw + 14
        out.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
            f'<text x="{lx + 28}" y="{ly}" font-family="sans-serif" '
            f'font-size="12">{escape(label)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
