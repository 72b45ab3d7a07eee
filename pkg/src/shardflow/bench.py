"""Config-driven experiment runner and CLI.

One JSON document describes a whole experiment: topology, workload,
cluster, cost model, scheduler settings, the policies and seeds to run,
and an optional one-dimensional sweep. Every (policy, sweep value, seed)
point is an independent deterministic simulation; outputs are one trace
CSV per point, a summary CSV, and an optional markdown comparison
report. Identical configs and seeds reproduce identical files byte for
byte.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .scheduler import ClusterSpec, SchedulerConfig
from .simulation import CostModel, PolicyKind, SimOptions, Simulation, Trace
from .topology import Topology, topology_from_dict
from .workload import WorkloadConfig, load_rate_trace


class ConfigError(ValueError):
    pass


class MissingSeries(ValueError):
    pass


SUMMARY_HEADER = ("policy,sweep_parameter,sweep_value,seed,duration_s,"
                  "total_arrivals,total_completions,mean_throughput_tps,"
                  "mean_latency_s,p99_latency_s,total_migrated_bytes,"
                  "total_sync_messages,total_remote_transfer_bytes,"
                  "intra_move_migrated_bytes")


def default_sweep_config() -> dict:
    """Desk-scale shuffle-rate sweep over all three policies.

    Sized so one point runs in seconds on one CPU: a two-stage pipeline
    (feed -> calc) saturating a static one-core-per-executor layout while
    the elastic policies have ample headroom on an 8x8 cluster.
    """
    return {
        "topology": {
            "operators": [
                {"id": "feed", "executor_count": 8, "shards_per_executor": 64,
                 "cpu_cost_per_tuple": 0.003, "output_selectivity": 1.0,
                 "output_tuple_bytes": 128, "shard_state_bytes": 8192},
                {"id": "calc", "executor_count": 8, "shards_per_executor": 256,
                 "cpu_cost_per_tuple": 0.005, "output_selectivity": 1.0,
                 "output_tuple_bytes": 128, "shard_state_bytes": 32768},
            ],
            "edges": [["feed", "calc"]],
            "source_rate_tps": 1500.0,
        },
        "workload": {
            "key_count": 100,
            "skew": 0.5,
            "payload_bytes": 128,
            "shuffles_per_minute": 0.0,
        },
        "cluster": {"nodes": 8, "cores_per_node": 8},
        "cost_model": {
            "network_latency_s": 0.0005,
            "bandwidth_bytes_per_s": 125_000_000.0,
            "rc_sync_rtt_s": 0.35,
            "serialization_s_per_byte": 1e-9,
        },
        "scheduler": {
            "latency_target_s": 0.012,
            "intensity_threshold_bytes_per_s": 512 * 1024.0,
            "period_s": 1.0,
        },
        "policies": ["static", "rc", "ec"],
        "seeds": [1, 2, 3],
        "duration_s": 60.0,
        "sweep": {"parameter": "workload.shuffles_per_minute",
                  "values": [0, 1, 2, 4, 8, 16]},
        "output_dir": "results",
    }


def exchange_topology(source_rate_tps: float = 1500.0) -> dict:
    """Synthetic exchange-style topology: one transactor feeding six
    statistics operators and five event-processing operators."""
    operators = [
        {"id": "transactor", "executor_count": 8, "shards_per_executor": 128,
         "cpu_cost_per_tuple": 0.002, "output_selectivity": 1.0,
         "output_tuple_bytes": 160, "shard_state_bytes": 32768},
    ]
    edges = []
    for i in range(6):
        operators.append({"id": f"stats_{i}", "executor_count": 2,
                          "shards_per_executor": 64,
                          "cpu_cost_per_tuple": 0.0004,
                          "output_selectivity": 0.0,
                          "output_tuple_bytes": 0,
                          "shard_state_bytes": 16384})
        edges.append(["transactor", f"stats_{i}"])
    for i in range(5):
        operators.append({"id": f"events_{i}", "executor_count": 2,
                          "shards_per_executor": 64,
                          "cpu_cost_per_tuple": 0.0003,
                          "output_selectivity": 0.0,
                          "output_tuple_bytes": 0,
                          "shard_state_bytes": 16384})
        edges.append(["transactor", f"events_{i}"])
    return {"operators": operators, "edges": edges,
            "source_rate_tps": source_rate_tps}


def _field(doc: dict, path: str, default=None, required=False):
    node = doc
    parts = path.split(".")
    for part in parts:
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ConfigError(f"missing required config field {path!r}")
            return default
        node = node[part]
    return node


def _set_field(doc: dict, path: str, value) -> None:
    parts = path.split(".")
    node = doc
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"sweep parameter {path!r} does not name a config field")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"sweep parameter {path!r} does not name a config field")
    node[parts[-1]] = value


def _build_point(doc: dict):
    """(topology, workload, cluster, cost model, scheduler, options) for one run."""
    try:
        topo = topology_from_dict(_field(doc, "topology", required=True))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"topology: {exc}") from exc
    wdoc = dict(_field(doc, "workload", default={}))
    if "rate_trace_csv" in wdoc:
        wdoc["rate_trace"] = load_rate_trace(wdoc.pop("rate_trace_csv"))
    elif "rate_trace" in wdoc:
        wdoc["rate_trace"] = tuple((float(a), float(b)) for a, b in wdoc["rate_trace"])
    try:
        workload = WorkloadConfig(**wdoc)
        workload.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"workload: {exc}") from exc
    cdoc = _field(doc, "cluster", default={"nodes": 8, "cores_per_node": 8})
    try:
        if "node_cores" in cdoc:
            cluster = ClusterSpec(tuple(cdoc["node_cores"]))
        else:
            cluster = ClusterSpec.uniform(int(cdoc.get("nodes", 8)),
                                          int(cdoc.get("cores_per_node", 8)))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"cluster: {exc}") from exc
    try:
        cost = CostModel(**_field(doc, "cost_model", default={}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cost_model: {exc}") from exc
    try:
        sched = SchedulerConfig(**_field(doc, "scheduler", default={}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scheduler: {exc}") from exc
    try:
        options = SimOptions(**_field(doc, "options", default={}))
    except TypeError as exc:
        raise ConfigError(f"options: {exc}") from exc
    return topo, workload, cluster, cost, sched, options


def validate_config(doc: dict) -> None:
    duration = _field(doc, "duration_s", required=True)
    if not isinstance(duration, (int, float)) or duration <= 0:
        raise ConfigError("duration_s must be a positive number")
    policies = _field(doc, "policies", default=["ec"])
    if not policies:
        raise ConfigError("policies must be a non-empty list")
    for p in policies:
        PolicyKind.parse(p)
    seeds = _field(doc, "seeds", default=[0])
    if not seeds:
        raise ConfigError("seeds must be a non-empty list")
    sweep = _field(doc, "sweep")
    if sweep is not None:
        if "parameter" not in sweep or "values" not in sweep or not sweep["values"]:
            raise ConfigError("sweep needs 'parameter' and a non-empty 'values' list")
        probe = copy.deepcopy(doc)
        _set_field(probe, sweep["parameter"], sweep["values"][0])
    _build_point(doc)


def run_point(doc: dict, policy, seed: int, sweep_value=None) -> Trace:
    """Run one simulation point from a config document."""
    doc = copy.deepcopy(doc)
    sweep = _field(doc, "sweep")
    if sweep_value is not None and sweep:
        _set_field(doc, sweep["parameter"], sweep_value)
    topo, workload, cluster, cost, sched, options = _build_point(doc)
    sim = Simulation(topo, cluster, workload, policy, seed=seed,
                     cost_model=cost, scheduler_cfg=sched, options=options)
    return sim.run_until(float(doc["duration_s"]))


def _point_worker(args):
    doc, policy, seed, sweep_value = args
    trace = run_point(doc, policy, seed, sweep_value)
    return (policy, sweep_value, seed), trace


def _summary_row(policy: str, sweep_param, sweep_value, seed: int, trace: Trace) -> str:
    return (f"{policy},{sweep_param},{sweep_value},{seed},{trace.duration_s!r},"
            f"{trace.total_arrivals},{trace.total_completions},"
            f"{trace.mean_throughput_tps()!r},{trace.mean_latency_s!r},"
            f"{trace.p99_latency_s!r},{trace.total_migrated_bytes},"
            f"{trace.total_sync_messages},{trace.total_remote_transfer_bytes},"
            f"{trace.intra_move_migrated_bytes}")


def trace_filename(policy: str, sweep_value, seed: int) -> str:
    sv = "none" if sweep_value is None else str(sweep_value)
    return f"trace_{policy}_{sv}_{seed}.csv"


def run_experiment(doc: dict, out_dir, seeds=None, policies=None,
                   jobs: int = 1, report: bool = False) -> list[str]:
    """Run every (policy, sweep value, seed) point and write result files.

    Returns the summary rows. Trace files are written as each point
    finishes so an interrupted run keeps its completed points.
    """
    validate_config(doc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    policies = [PolicyKind.parse(p).value
                for p in (policies or _field(doc, "policies", default=["ec"]))]
    seeds = [int(s) for s in (seeds or _field(doc, "seeds", default=[0]))]
    sweep = _field(doc, "sweep")
    sweep_param = sweep["parameter"] if sweep else "none"
    sweep_values = sweep["values"] if sweep else [None]

    points = [(doc, policy, seed, value)
              for value in sweep_values for policy in policies for seed in seeds]
    rows: list[str] = []
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for (policy, value, seed), trace in pool.map(_point_worker, points):
                    trace.to_csv(out / trace_filename(policy, value, seed))
                    rows.append(_summary_row(policy, sweep_param, value, seed, trace))
        else:
            for args in points:
                (policy, value, seed), trace = _point_worker(args)
                trace.to_csv(out / trace_filename(policy, value, seed))
                rows.append(_summary_row(policy, sweep_param, value, seed, trace))
    finally:
        rows.sort()
        with open(out / "summary.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write(SUMMARY_HEADER + "\n")
            for row in rows:
                fh.write(row + "\n")
    if report:
        text = compare_policies(out)
        with open(out / "report.md", "w", encoding="utf-8") as fh:
            fh.write(text)
    return rows


def _read_summary(results_dir) -> list[dict]:
    path = Path(results_dir) / "summary.csv"
    if not path.exists():
        raise MissingSeries(f"no summary.csv under {results_dir}")
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != len(header):
                continue
            rows.append(dict(zip(header, parts)))
    return rows


def _sweep_key(value: str):
    try:
        return float(value)
    except ValueError:
        return value


def compare_policies(results_dir) -> str:
    """Markdown table of per-policy means and ratios per sweep point,
    plus directional trend checks when the sweep covers shuffle rates."""
    rows = _read_summary(results_dir)
    if not rows:
        raise MissingSeries("summary.csv holds no data rows")
    policies = sorted({r["policy"] for r in rows})
    if len(policies) < 2:
        raise MissingSeries(f"need at least two policies to compare, found {policies}")
    sweep_param = rows[0]["sweep_parameter"]
    values = sorted({r["sweep_value"] for r in rows}, key=_sweep_key)

    def mean_tput(policy, value):
        sel = [float(r["mean_throughput_tps"]) for r in rows
               if r["policy"] == policy and r["sweep_value"] == value]
        return sum(sel) / len(sel) if sel else None

    def mean_latency(policy, value):
        sel = [float(r["mean_latency_s"]) for r in rows
               if r["policy"] == policy and r["sweep_value"] == value]
        return sum(sel) / len(sel) if sel else None

    lines = [f"# Policy comparison ({sweep_param})", ""]
    head = "| sweep | " + " | ".join(f"{p} tput" for p in policies)
    head += " | " + " | ".join(f"{p} lat" for p in policies) + " |"
    lines.append(head)
    lines.append("|" + "---|" * (1 + 2 * len(policies)))
    for value in values:
        cells = [value]
        for p in policies:
            m = mean_tput(p, value)
            cells.append("-" if m is None else f"{m:.1f}")
        for p in policies:
            m = mean_latency(p, value)
            cells.append("-" if m is None else f"{m:.4f}")
        lines.append("| " + " | ".join(str(c) for c in cells) + " |")
    lines.append("")

    if "ec" in policies and "static" in policies:
        lines.append("## Throughput ratios vs static")
        for value in values:
            ec, st = mean_tput("ec", value), mean_tput("static", value)
            if ec and st:
                lines.append(f"- sweep={value}: ec/static = {ec / st:.3f}")
        lines.append("")

    checks = trend_checks(rows)
    if checks:
        lines.append("## Trend checks")
        for name, ok, detail in checks:
            lines.append(f"- [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        lines.append("")
    return "\n".join(lines) + "\n"


def trend_checks(rows: list[dict]) -> list[tuple]:
    """Directional expectations on a shuffle-rate sweep.

    Elastic executors should barely degrade as shuffles speed up, the
    repartitioning baseline should fall off sharply, and static should
    never beat the elastic policy once the workload is dynamic.
    """
    if not rows or "shuffles_per_minute" not in rows[0]["sweep_parameter"]:
        return []
    policies = {r["policy"] for r in rows}
    values = sorted({float(r["sweep_value"]) for r in rows})
    if len(values) < 2 or 0.0 not in values:
        return []
    lo, hi = 0.0, values[-1]
    checks = []

    def tput(policy, value, seed=None):
        sel = [float(r["mean_throughput_tps"]) for r in rows
               if r["policy"] == policy and float(r["sweep_value"]) == value
               and (seed is None or r["seed"] == seed)]
        return sum(sel) / len(sel) if sel else None

    if "ec" in policies:
        ratio = tput("ec", hi) / tput("ec", lo)
        checks.append(("ec retains throughput under shuffles", ratio >= 0.7,
                       f"ec@{hi:g}/ec@{lo:g} = {ratio:.3f} (want >= 0.7)"))
    if "rc" in policies:
        ratio = tput("rc", hi) / tput("rc", lo)
        checks.append(("rc collapses under frequent shuffles", ratio <= 0.5,
                       f"rc@{hi:g}/rc@{lo:g} = {ratio:.3f} (want <= 0.5)"))
    if "ec" in policies and "static" in policies:
        seeds = sorted({r["seed"] for r in rows})
        ok_all = True
        details = []
        for value in values:
            if value < 1.0:
                continue
            wins = sum(1 for s in seeds
                       if (tput("static", value, s) or 0) <= (tput("ec", value, s) or 0))
            ok = wins * 2 > len(seeds)
            ok_all = ok_all and ok
            details.append(f"omega={value:g}: {wins}/{len(seeds)} seeds")
        checks.append(("static never beats ec on dynamic workloads", ok_all,
                       "; ".join(details)))
    return checks


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="shardflow-bench",
        description="Run config-driven elasticity experiments and compare policies.")
    parser.add_argument("--config", required=True, help="experiment JSON document")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seeds", default=None, help="comma-separated seed list")
    parser.add_argument("--policies", default=None,
                        help="comma-separated subset of static,rc,ec")
    parser.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    parser.add_argument("--report", action="store_true",
                        help="write report.md comparing policies")
    args = parser.parse_args(argv)

    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config {args.config}: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out or _field(doc, "output_dir", default="results")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    policies = args.policies.split(",") if args.policies else None
    try:
        rows = run_experiment(doc, out_dir, seeds=seeds, policies=policies,
                              jobs=args.jobs, report=args.report)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MissingSeries as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {len(rows)} summary rows to {out_dir}/summary.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
