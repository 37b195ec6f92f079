"""Desk-scale experiments: each returns self-describing CSV rows."""

from __future__ import annotations

import csv
import io
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TextIO

from hyshuffle.analysis import KEY_DOMAINS, ModelKind, ParallelModel, domain_sensitivity, model_row
from hyshuffle.codec import TupleBatch
from hyshuffle.engine.executor import ClusterConfig, QueryResult, run_query
from hyshuffle.engine.oracle import diff_sample, evaluate, multiset
from hyshuffle.engine.plan import LogicalPlan, load_plan, parse_plan
from hyshuffle.errors import OracleMismatch
from hyshuffle.schedule import amortization_curve, round_robin_schedule
from hyshuffle.transport.base import TransportConfig
from hyshuffle.transport.sim import SimReport, Transfer, all_to_all, sim_run

DEFAULT_MESSAGES_PER_NODE = 1_680
DEFAULT_MESSAGE_SIZE = 512 * 1024
KIB = 1024
MIB = 1024 * KIB
MESSAGE_SIZE_SWEEP = tuple(KIB * 2**e for e in range(0, 17))  # 1 KiB .. 64 MiB


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    if isinstance(v, bool):
        return "1" if v else "0"
    return "" if v is None else str(v)


def write_csv(rows: Sequence[Mapping], out: str | Path | TextIO | None = None) -> str:
    """Render rows with a header; floats get a fixed format so output is byte-stable."""
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    text = buf.getvalue()
    if out is None or out == "-":
        sys.stdout.write(text)
    elif hasattr(out, "write"):
        out.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    return text


def _transport_columns(cfg: TransportConfig) -> dict:
    return {
        "link_bandwidth": cfg.link_bandwidth,
        "base_latency_ns": cfg.base_latency_ns,
        "credit_limit": cfg.receiver_credit_limit,
        "sync_latency_ns": cfg.sync_latency_ns,
        "messages_per_step": cfg.messages_per_step,
        "seed": cfg.seed,
    }


# ---------------------------------------------------------------------------
# network scheduling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleComparison:
    n: int
    scheduled: SimReport
    unscheduled: SimReport

    @property
    def ratio(self) -> float:
        return self.scheduled.aggregate_throughput / self.unscheduled.aggregate_throughput


def compare_schedule(n: int, messages: int, size: int, config: TransportConfig | None = None,
                     record_events: bool = False) -> ScheduleComparison:
    cfg = (config or TransportConfig(kind="simulated")).with_(kind="simulated")
    work = all_to_all(n, messages, size)
    sched = sim_run(work, round_robin_schedule(n), cfg, n=n, record_events=record_events)
    unsched = sim_run(work, None, cfg, n=n, record_events=False)
    return ScheduleComparison(n, sched, unsched)


def bench_schedule(
    servers: Iterable[int] = range(2, 9),
    messages: int = DEFAULT_MESSAGES_PER_NODE,
    size: int = DEFAULT_MESSAGE_SIZE,
    config: TransportConfig | None = None,
) -> list[dict]:
    cfg = (config or TransportConfig(kind="simulated")).with_(kind="simulated")
    rows = []
    for n in servers:
        if n < 2:
            raise ValueError("an all-to-all benchmark needs at least 2 servers")
        c = compare_schedule(n, messages, size, cfg)
        rows.append({
            "n": n,
            "messages_per_node": messages,
            "message_size": size,
            **_transport_columns(cfg),
            "scheduled_bytes_per_s_per_node": c.scheduled.per_node_throughput,
            "unscheduled_bytes_per_s_per_node": c.unscheduled.per_node_throughput,
            "scheduled_capacity_fraction": c.scheduled.capacity_fraction(),
            "unscheduled_capacity_fraction": c.unscheduled.capacity_fraction(),
            "ratio": c.ratio,
            "scheduled_makespan_ns": c.scheduled.makespan_ns,
            "unscheduled_makespan_ns": c.unscheduled.makespan_ns,
            "scheduled_max_ingress_flows": c.scheduled.max_ingress_flows,
            "unscheduled_max_ingress_flows": c.unscheduled.max_ingress_flows,
            "unscheduled_stalls": c.unscheduled.stalls,
        })
    return rows


def bench_message_size(
    n: int = 6,
    sizes: Iterable[int] = MESSAGE_SIZE_SWEEP,
    messages_per_node: int | None = None,
    config: TransportConfig | None = None,
) -> list[dict]:
    """Scheduled all-to-all throughput per node against the sync-amortization model."""
    cfg = (config or TransportConfig(kind="simulated")).with_(kind="simulated")
    # enough steps to every target that the start-up phase does not dominate
    count = messages_per_node or 4 * cfg.messages_per_step * (n - 1)
    rows = []
    for size in sizes:
        report = sim_run(all_to_all(n, count, size), round_robin_schedule(n), cfg, n=n, record_events=False)
        predicted = amortization_curve(size, cfg.sync_latency_ns / 1e9, cfg.link_bandwidth, cfg.messages_per_step)
        measured = report.per_node_throughput
        rows.append({
            "n": n,
            "message_size": size,
            "messages_per_node": count,
            **_transport_columns(cfg),
            "measured_bytes_per_s": measured,
            "predicted_bytes_per_s": predicted,
            "measured_over_predicted": measured / predicted,
            "capacity_fraction": measured / cfg.link_bandwidth,
        })
    return rows


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------


@dataclass
class QueryRun:
    cluster: ClusterConfig
    result: QueryResult
    matches_oracle: bool
    diff: str = ""


@dataclass
class QuerySweep:
    plan: str
    oracle_rows: list[tuple]
    runs: list[QueryRun] = field(default_factory=list)

    @property
    def all_match(self) -> bool:
        return all(r.matches_oracle for r in self.runs)

    def rows(self) -> list[dict]:
        out = []
        for r in self.runs:
            m = r.result.metrics
            out.append({
                "plan": self.plan,
                **m.as_row(),
                "morsel_size": r.cluster.morsel_size,
                "message_size": r.cluster.message_capacity,
                "result_rows": len(r.result.rows),
                "matches_oracle": r.matches_oracle,
            })
        return out


def _as_plan(plan: LogicalPlan | Mapping | str | Path) -> tuple[str, Mapping | str | Path]:
    if isinstance(plan, Path) or (isinstance(plan, str) and not plan.lstrip().startswith("{")):
        return Path(plan).stem, Path(plan)
    if isinstance(plan, LogicalPlan):
        raise TypeError("pass the plan source (path, JSON text or dict); a bound plan cannot be reused")
    name = plan.get("name", "plan") if isinstance(plan, Mapping) else parse_plan(plan).name
    return name, plan


def _fresh(source) -> LogicalPlan:
    return load_plan(source) if isinstance(source, Path) else parse_plan(source)


def query_sweep(
    plan: Mapping | str | Path,
    tables: Mapping[str, TupleBatch],
    servers: Iterable[int] = (1, 2, 4),
    workers: Iterable[int] = (1,),
    regions: Iterable[int] = (1,),
    transport: TransportConfig | None = None,
    scheduled: bool = True,
    message_capacity: int = 512 * KIB,
    morsel_size: int = 16_384,
    strict: bool = True,
) -> QuerySweep:
    """Run ``plan`` for every cluster shape and compare each result with the oracle.

    With ``strict`` a mismatch raises :class:`OracleMismatch` carrying a diff sample.
    """
    name, source = _as_plan(plan)
    _, expected_rows = evaluate(_fresh(source), tables)
    expected = multiset(expected_rows)
    sweep = QuerySweep(name, expected_rows)
    for n in servers:
        for t in workers:
            for r in regions:
                cluster = ClusterConfig(n=n, t=t, regions=r, scheduled=scheduled,
                                        message_capacity=message_capacity, morsel_size=morsel_size)
                res = run_query(_fresh(source), cluster, transport, tables=tables)
                got = multiset(res.rows)
                ok = got == expected
                run = QueryRun(cluster, res, ok, "" if ok else diff_sample(expected, got))
                sweep.runs.append(run)
                if strict and not ok:
                    raise OracleMismatch(f"{name} on n={n} t={t} regions={r}: {run.diff}")
    return sweep


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------


def analyze(
    n_values: Sequence[int] = (6,),
    t_values: Sequence[int] = (40,),
    zipf_values: Sequence[float] = (0.84,),
    key_domain: int = 1_000_000,
) -> list[dict]:
    rows = []
    for n in n_values:
        for t in t_values:
            for z in zipf_values:
                for kind in ModelKind:
                    rows.append(model_row(ParallelModel(kind, n, t), z, key_domain))
    return rows


def skew_sensitivity(z: float = 0.84, partitions: Sequence[int] = (6, 240),
                     domains: Sequence[int] = KEY_DOMAINS) -> list[dict]:
    rows = []
    for p in partitions:
        for d, f in domain_sensitivity(z, p, domains):
            rows.append({"zipf_z": z, "partitions": p, "key_domain": d, "overload_factor": f,
                         "sparse_domain": d < p})
    return rows


def sim_workload(transfers: Sequence[Transfer], scheduled: bool, config: TransportConfig | None = None,
                 n: int | None = None) -> SimReport:
    cfg = (config or TransportConfig(kind="simulated")).with_(kind="simulated")
    if n is None:
        n = 1 + max((max(t.sender, t.receiver) for t in transfers), default=0)
    schedule = round_robin_schedule(n) if scheduled and n > 1 else None
    return sim_run(transfers, schedule, cfg, n=n)
