"""Command-line interface.

Exit codes: 0 success, 1 configuration/usage error, 2 invariant violation
(integrity check failure or a fatal simulation error).
"""

from __future__ import annotations

import argparse
import sys

from .config import SimConfig, format_config, load_config_file
from .errors import ConfigError, IntegrityError, SimulationError
from .htm import BUFFER_OVERFLOW
from .machine import Machine
from .prng import splitmix64
from .mem import cia_size_class, glibc_effective_size
from .report import (
    ALLOCATORS, LOCKS, PlotSpec, SweepSpec, provenance_lines, render_csv,
    render_svg, stats_to_row, sweep,
)
from .workloads import (
    AvlConfig, RingConfig, STORE_FIRST, STORE_LAST, avl_run, ring_run,
    ring_setup, store_shift_demo,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract here is exit 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _add_common(p):
    p.add_argument("--alloc", choices=ALLOCATORS, default=None,
                   help="allocator model (sweep default: all)")
    p.add_argument("--lock", choices=LOCKS, default=None,
                   help="lock protocol (sweep default: both)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", metavar="FILE",
                   help="key = value machine configuration file")
    p.add_argument("--csv", metavar="PATH", help="write the CSV here "
                   "instead of stdout")
    p.add_argument("--svg", metavar="PATH", help="also render a figure")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective machine config and exit")


def build_parser():
    parser = _Parser(prog="tlesim",
                     description="Cache-index pathology and lock elision "
                                 "simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ring", parents=[], help="ring traversal benchmark")
    _add_common(p)
    p.add_argument("--nodes", type=int, default=128)
    p.add_argument("--node-size", type=int, default=64)
    p.add_argument("--iters", type=int, default=10_000)

    p = sub.add_parser("avl", help="concurrent AVL key-value benchmark")
    _add_common(p)
    p.add_argument("--node-size", type=int, default=64)
    p.add_argument("--threads", type=int, default=4)
    p.add_argument("--ops", type=int, default=100_000,
                   help="operations per thread")
    p.add_argument("--key-range", type=int, default=65536)
    p.add_argument("--populate", type=int, default=32767,
                   help="initial tree population (distinct keys)")
    p.add_argument("--mix", default="30/30/40",
                   help="insert/delete/lookup percentages")
    p.add_argument("--check-every", type=int, default=0,
                   help="run the tree integrity check every N sections")

    p = sub.add_parser("sweep", help="size sweep over configurations")
    _add_common(p)
    p.add_argument("--bench", choices=("ring", "avl"), default="ring")
    p.add_argument("--sizes", default="64:4352:16",
                   help="START:STOP:STEP (STOP inclusive) or comma list")
    p.add_argument("--repeats", type=int, default=1,
                   help="runs per cell with distinct seeds; >1 also "
                        "emits a median companion CSV")
    p.add_argument("--iters", type=int, default=50,
                   help="ring iterations per cell")
    p.add_argument("--ops", type=int, default=1000,
                   help="avl operations per thread per cell")
    p.add_argument("--threads", type=int, default=4)

    p = sub.add_parser("demo-shift", help="store-ordering transaction demo")
    _add_common(p)
    p.add_argument("--order", choices=(STORE_FIRST, STORE_LAST),
                   default=STORE_FIRST)
    p.add_argument("--fan", type=int, default=20,
                   help="loads sharing the store's L1 set")

    p = sub.add_parser("hist", help="print the L1 index histogram of a "
                                    "ring build")
    _add_common(p)
    p.add_argument("--nodes", type=int, default=128)
    p.add_argument("--node-size", type=int, default=64)

    p = sub.add_parser("selftest", help="run the quick invariant suite")
    _add_common(p)
    return parser


def _parse_mix(text):
    parts = text.split("/")
    if len(parts) != 3:
        raise ConfigError(f"mix must be three /-separated shares: {text!r}")
    try:
        mix = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"mix shares must be integers: {text!r}") from None
    return mix


def _parse_sizes(text):
    try:
        if ":" in text:
            start, stop, step = (int(p) for p in text.split(":"))
            if step < 1 or stop < start:
                raise ValueError
            return tuple(range(start, stop + 1, step))
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(
            f"sizes must be START:STOP:STEP or a comma list: {text!r}"
        ) from None


def _emit(args, csv_text, default_stream=True):
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as f:
            f.write(csv_text)
        print(f"wrote {args.csv}")
    elif default_stream:
        sys.stdout.write(csv_text)
    if args.svg:
        with open(args.svg, "w", encoding="utf-8") as f:
            f.write(render_svg(csv_text, PlotSpec()))
        print(f"wrote {args.svg}")


def _cmd_ring(args, sim):
    cfg = RingConfig(
        node_count=args.nodes, node_size=args.node_size,
        iterations=args.iters, seed=args.seed,
        allocator=args.alloc or "glibc", lock=args.lock or "tts",
    )
    stats = ring_run(cfg, sim)
    row = stats_to_row("ring", cfg.allocator, cfg.lock, cfg.node_size,
                       cfg.seed, stats)
    prov = provenance_lines(
        sim, command="ring", nodes=cfg.node_count, node_size=cfg.node_size,
        iters=cfg.iterations, seed=cfg.seed, alloc=cfg.allocator,
        lock=cfg.lock,
    )
    _emit(args, render_csv([row], prov))
    return 0


def _cmd_avl(args, sim):
    cfg = AvlConfig(
        threads=args.threads, ops_per_thread=args.ops,
        node_size=args.node_size, key_range=args.key_range,
        initial_population=args.populate,
        mix=_parse_mix(args.mix), seed=args.seed,
        allocator=args.alloc or "glibc", lock=args.lock or "tle",
    )
    stats = avl_run(cfg, sim, check_every=args.check_every)
    row = stats_to_row("avl", cfg.allocator, cfg.lock, cfg.node_size,
                       cfg.seed, stats)
    prov = provenance_lines(
        sim, command="avl", threads=cfg.threads, ops=cfg.ops_per_thread,
        node_size=cfg.node_size, key_range=cfg.key_range,
        mix="/".join(str(m) for m in cfg.mix), seed=cfg.seed,
        alloc=cfg.allocator, lock=cfg.lock,
    )
    _emit(args, render_csv([row], prov))
    return 0


def _median_path(path):
    if path.endswith(".csv"):
        return path[:-4] + ".median.csv"
    return path + ".median.csv"


def _cmd_sweep(args, sim):
    spec = SweepSpec(
        benchmark=args.bench, sizes=_parse_sizes(args.sizes),
        allocators=(args.alloc,) if args.alloc else ALLOCATORS,
        locks=(args.lock,) if args.lock else LOCKS,
        repeats=args.repeats, seed=args.seed, iterations=args.iters,
        ops_per_thread=args.ops, threads=args.threads,
    )
    rows, medians = sweep(spec, sim)
    prov = provenance_lines(
        sim, command="sweep", bench=spec.benchmark, sizes=args.sizes,
        allocs="/".join(spec.allocators), locks="/".join(spec.locks),
        repeats=spec.repeats, seed=spec.seed, iters=spec.iterations,
        ops=spec.ops_per_thread, threads=spec.threads,
    )
    _emit(args, render_csv(rows, prov))
    if medians is not None:
        median_text = render_csv(medians, dict(prov, aggregation="median"))
        if args.csv:
            path = _median_path(args.csv)
            with open(path, "w", encoding="utf-8") as f:
                f.write(median_text)
            print(f"wrote {path}")
        else:
            print("note: median companion is only written with --csv",
                  file=sys.stderr)
    return 0


def _cmd_demo_shift(args, sim):
    result = store_shift_demo(args.order, args.fan, sim)
    line = f"{result['order']} fan={result['fan']}: {result['status']}"
    if result["abort_code"]:
        line += f" ({result['abort_code']})"
    line += f"; store visible after commit point: {result['store_visible']}"
    print(line)
    return 0


def _cmd_hist(args, sim):
    cfg = RingConfig(
        node_count=args.nodes, node_size=args.node_size, seed=args.seed,
        allocator=args.alloc or "glibc",
    )
    machine = Machine(sim, allocator=cfg.allocator, seed=cfg.seed)
    ring = ring_setup(machine, cfg)
    for i, count in enumerate(ring.histogram):
        if count:
            print(f"bin {i:3d}: {count}")
    nonzero = sum(1 for c in ring.histogram if c)
    print(f"nonzero bins: {nonzero}  max: {max(ring.histogram)}")
    return 0


def _selftest_checks(sim):
    state, out = splitmix64(0)
    yield "prng reference vector", out == 0xE220A8397B1DCDAF

    sizes_ok = (
        glibc_effective_size(24) == 32
        and glibc_effective_size(1016) == 1024
        and glibc_effective_size(2000) == 2016
        and cia_size_class(64).size == 64
        and cia_size_class(500).size == 704
        and cia_size_class(2000).size == 2368
    )
    yield "allocator size classes", sizes_ok

    stats = ring_run(RingConfig(node_size=512, iterations=3,
                                allocator="cia", lock="tle"), sim)
    yield "ring footprint independence", (
        stats.extra["footprint_lines"] == 128
        and stats.fast_sections == 3
    )

    stats = ring_run(RingConfig(node_size=1016, iterations=3,
                                allocator="glibc", lock="tle"), sim)
    yield "pathological stride reverts to slow path", (
        stats.slow_sections == 3
        and sum(stats.counters["aborts_buffer_overflow"]) >= 3
    )

    cfg = AvlConfig(threads=2, ops_per_thread=250, node_size=64,
                    initial_population=400, allocator="cia", lock="tle")
    stats = avl_run(cfg, sim)  # avl_run integrity-checks internally
    yield "concurrent tree integrity", stats.ops == 500

    first = store_shift_demo(STORE_FIRST, 20, sim)
    last = store_shift_demo(STORE_LAST, 20, sim)
    yield "store shifting", (
        first["status"] == "aborted"
        and first["abort_code"] == BUFFER_OVERFLOW
        and last["status"] == "committed"
        and last["store_visible"]
    )


def _cmd_selftest(args, sim):
    for name, ok in _selftest_checks(sim):
        if not ok:
            raise IntegrityError(f"selftest failed: {name}")
        print(f"ok - {name}")
    print("selftest passed")
    return 0


_COMMANDS = {
    "ring": _cmd_ring,
    "avl": _cmd_avl,
    "sweep": _cmd_sweep,
    "demo-shift": _cmd_demo_shift,
    "hist": _cmd_hist,
    "selftest": _cmd_selftest,
}


def cli_main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    try:
        if args.config:
            sim = SimConfig.from_mapping(load_config_file(args.config))
        else:
            sim = SimConfig()
        if args.print_config:
            print(format_config(sim))
            return 0
        return _COMMANDS[args.command](args, sim)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except IntegrityError as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return 2
    except SimulationError as e:
        print(f"fatal: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
