"""Command-line harness: ``hyshuffle <command> [flags]``; every command writes CSV.

A ``--config`` JSON file may supply any long flag (dashes or underscores);
flags given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

from hyshuffle import experiments as ex
from hyshuffle.engine import tpch
from hyshuffle.errors import OracleMismatch, ShuffleError
from hyshuffle.transport.base import TransportConfig
from hyshuffle.transport.sim import load_workload

TRANSPORTS = {"sim": "simulated", "inprocess": "inprocess", "socket": "socket"}
_SUFFIX = {"k": 1024, "kib": 1024, "m": 1024**2, "mib": 1024**2, "g": 1024**3, "gib": 1024**3}


def parse_size(text: str) -> int:
    """``4096``, ``512K``, ``64MiB`` ... as bytes."""
    s = text.strip().lower()
    if s.endswith(("kb", "mb", "gb")):
        s = s[:-1]
    for suffix in sorted(_SUFFIX, key=len, reverse=True):
        if s.endswith(suffix):
            return int(float(s[: -len(suffix)]) * _SUFFIX[suffix])
    return int(s)


def parse_int_list(text: str) -> list[int]:
    """``1,2,4`` or ``2-8`` or a mix of both."""
    out: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def parse_float_list(text: str) -> list[float]:
    return [float(p) for p in str(text).split(",") if p.strip()]


def builtin_plan(name: str) -> Path | None:
    p = resources.files("hyshuffle") / "plans" / f"{name}.json"
    return Path(str(p)) if p.is_file() else None


def builtin_plan_names() -> list[str]:
    return sorted(p.name[:-5] for p in (resources.files("hyshuffle") / "plans").iterdir() if p.name.endswith(".json"))


# defaults applied after the config file, so that "unset" can be detected
DEFAULTS = {
    "seed": 0,
    "transport": "sim",
    "schedule": "on",
    "out": "-",
    "regions": "1",
}
COMMAND_DEFAULTS = {
    "bench-schedule": {"servers": "2-8", "messages": ex.DEFAULT_MESSAGES_PER_NODE, "message_size": "512K"},
    "bench-msgsize": {"servers": "6", "messages": None, "message_size": None},
    "query": {"servers": "1,2,4", "workers": "1", "message_size": "512K", "morsel_size": 16_384, "sf": 0.001},
    "analyze": {"servers": "6", "workers": "40", "zipf": "0.84", "key_domain": 1_000_000},
    "gen-data": {"sf": 0.001},
    "sim": {},
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with flag values")
    common.add_argument("--seed", type=int)
    common.add_argument("--servers", help="server counts, e.g. 1,2,4 or 2-8")
    common.add_argument("--workers", help="worker threads per server (list allowed for query)")
    common.add_argument("--regions", help="NUMA regions per server (list allowed for query)")
    common.add_argument("--message-size", dest="message_size", help="bytes, K/M suffixes allowed")
    common.add_argument("--transport", choices=sorted(TRANSPORTS))
    common.add_argument("--schedule", choices=("on", "off"))
    common.add_argument("--out", help="output CSV path, '-' for stdout")

    p = argparse.ArgumentParser(prog="hyshuffle", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("bench-schedule", parents=[common], help="all-to-all throughput with and without phase scheduling")
    s.add_argument("--messages", type=int, help="messages per node")

    s = sub.add_parser("bench-msgsize", parents=[common], help="scheduled throughput over message sizes 1 KiB-64 MiB")
    s.add_argument("--messages", type=int, help="messages per node at every size")

    s = sub.add_parser("query", parents=[common], help="run a plan over a server sweep and check it against the oracle")
    s.add_argument("plan", help=f"plan JSON file or built-in name ({', '.join(builtin_plan_names())})")
    s.add_argument("--data", help="directory of .tbl files; generated in memory if omitted")
    s.add_argument("--sf", type=float, help="scale factor for generated data")
    s.add_argument("--morsel-size", dest="morsel_size", type=int)

    s = sub.add_parser("analyze", parents=[common], help="connection/buffer/threshold/skew tables")
    s.add_argument("--zipf", help="Zipf factors, comma separated")
    s.add_argument("--key-domain", dest="key_domain", type=int)
    s.add_argument("--sensitivity", action="store_true", help="emit the overload curve over key domains instead")

    s = sub.add_parser("gen-data", parents=[common], help="write TPC-H style .tbl files")
    s.add_argument("directory")
    s.add_argument("--sf", type=float)

    s = sub.add_parser("sim", parents=[common], help="simulate a workload file and emit the event trace")
    s.add_argument("workload", help="CSV lines sender,receiver,message_count,message_size")
    s.add_argument("--summary", action="store_true", help="emit per-node throughput instead of events")
    return p


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    values = {}
    if args.config:
        with open(args.config) as fh:
            values = {k.replace("-", "_"): v for k, v in json.load(fh).items()}
    merged = {**DEFAULTS, **COMMAND_DEFAULTS.get(args.command, {}), **values}
    for key, value in merged.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    return args


def _transport(args) -> TransportConfig:
    return TransportConfig(kind=TRANSPORTS[args.transport], seed=int(args.seed))


def _cmd_bench_schedule(args) -> int:
    rows = ex.bench_schedule(parse_int_list(args.servers), int(args.messages), parse_size(str(args.message_size)),
                             _transport(args))
    ex.write_csv(rows, args.out)
    return 0


def _cmd_bench_msgsize(args) -> int:
    sizes = ex.MESSAGE_SIZE_SWEEP if args.message_size is None else [parse_size(x) for x in str(args.message_size).split(",")]
    for n in parse_int_list(args.servers):
        rows = ex.bench_message_size(n, sizes, args.messages, _transport(args))
        ex.write_csv(rows, args.out)
    return 0


def _load_tables(args) -> dict:
    if args.data:
        tables = tpch.load_dataset(args.data)
        if not tables:
            raise ShuffleError(f"no .tbl files found in {args.data}")
        return tables
    return tpch.generate(float(args.sf), seed=int(args.seed))


def _cmd_query(args) -> int:
    plan = builtin_plan(args.plan) or Path(args.plan)
    if not plan.is_file():
        raise ShuffleError(f"plan {args.plan!r} is neither a file nor a built-in plan")
    sweep = ex.query_sweep(
        plan,
        _load_tables(args),
        servers=parse_int_list(args.servers),
        workers=parse_int_list(args.workers),
        regions=parse_int_list(args.regions),
        transport=_transport(args),
        scheduled=args.schedule == "on",
        message_capacity=parse_size(str(args.message_size)),
        morsel_size=int(args.morsel_size),
        strict=False,
    )
    ex.write_csv(sweep.rows(), args.out)
    for run in sweep.runs:
        if not run.matches_oracle:
            c = run.cluster
            print(f"oracle mismatch for n={c.n} t={c.t} regions={c.regions}: {run.diff}", file=sys.stderr)
    return 0 if sweep.all_match else 1


def _cmd_analyze(args) -> int:
    zipf = parse_float_list(args.zipf)
    if args.sensitivity:
        servers = parse_int_list(args.servers)
        workers = parse_int_list(args.workers)
        partitions = sorted({n for n in servers} | {n * t for n in servers for t in workers})
        rows = []
        for z in zipf:
            rows += ex.skew_sensitivity(z, partitions)
    else:
        rows = ex.analyze(parse_int_list(args.servers), parse_int_list(args.workers), zipf, int(args.key_domain))
    ex.write_csv(rows, args.out)
    return 0


def _cmd_gen_data(args) -> int:
    tables = tpch.generate(float(args.sf), seed=int(args.seed))
    paths = tpch.write_dataset(args.directory, tables)
    rows = [{"table": p.stem, "rows": tables[p.stem].row_count, "path": str(p), "sf": args.sf, "seed": args.seed}
            for p in paths]
    ex.write_csv(rows, args.out)
    return 0


def _cmd_sim(args) -> int:
    work = load_workload(args.workload)
    report = ex.sim_workload(work, args.schedule == "on", _transport(args).with_(kind="simulated"))
    if args.summary:
        ex.write_csv(report.rows(), args.out)
    else:
        text = report.events_csv()
        if args.out in (None, "-"):
            sys.stdout.write(text)
        else:
            Path(args.out).write_text(text)
    return 0


COMMANDS = {
    "bench-schedule": _cmd_bench_schedule,
    "bench-msgsize": _cmd_bench_msgsize,
    "query": _cmd_query,
    "analyze": _cmd_analyze,
    "gen-data": _cmd_gen_data,
    "sim": _cmd_sim,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config(args)
        return COMMANDS[args.command](args)
    except OracleMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ShuffleError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
