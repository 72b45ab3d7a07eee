"""Dataflow topology model: operators, edges, key hashing and partitioning.

The topology is a DAG of operators. Each operator runs `executor_count`
parallel executors, each owning a fixed slice of the operator's key space.
Within an executor the key slice is further split into
`shards_per_executor` shards, the unit of load balancing and state
migration. Both partitioning tiers are plain hash functions so that any
two runs (or processes) agree on the mapping bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


class TopologyError(ValueError):
    """Base class for topology validation failures."""


class CycleDetected(TopologyError):
    pass


class DanglingEdge(TopologyError):
    pass


class NonPositiveParameter(TopologyError):
    pass


# FNV-1a, 64 bit. Fixed here (rather than relying on hash()) so the
# key -> executor and key -> shard mappings are reproducible everywhere.
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

# Salt applied to the key before the shard-tier hash so that the shard
# index is statistically independent of the executor index.
SHARD_TIER_SALT = 0x9E3779B97F4A7C15


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def hash_key_to_executor(key: int, executor_count: int) -> int:
    """Executor index of a key under static operator-level partitioning.

    Hashes the key's 8 little-endian bytes with FNV-1a 64 and reduces
    modulo the executor count. The mapping never changes during a run.
    """
    if executor_count < 1:
        raise ValueError("executor_count must be >= 1")
    return fnv1a_64((key & _MASK64).to_bytes(8, "little")) % executor_count


def hash_key_to_shard(key: int, shard_count: int) -> int:
    """Shard index of a key within its executor.

    Same FNV-1a hash, but over the salted key, so the shard tier is
    independent of the executor tier.
    """
    if shard_count < 1:
        raise ValueError("shard_count must be >= 1")
    return fnv1a_64(((key ^ SHARD_TIER_SALT) & _MASK64).to_bytes(8, "little")) % shard_count


def key_from_string(text: str) -> int:
    """Pre-hash a string key into the 64-bit integer key domain."""
    return fnv1a_64(text.encode("utf-8"))


@dataclass(frozen=True)
class OperatorSpec:
    """Static parameters of one operator.

    cpu_cost_per_tuple is the mean service time in seconds; with the
    exponential service model it is the mean of the distribution.
    output_selectivity is the expected number of output tuples emitted
    per input tuple.
    """

    id: str
    executor_count: int = 1
    shards_per_executor: int = 256
    cpu_cost_per_tuple: float = 0.001
    output_selectivity: float = 1.0
    output_tuple_bytes: int = 128
    shard_state_bytes: int = 32 * 1024

    def validate(self) -> None:
        if self.executor_count < 1:
            raise NonPositiveParameter(f"operator {self.id!r}: executor_count must be >= 1")
        if self.shards_per_executor < 1:
            raise NonPositiveParameter(f"operator {self.id!r}: shards_per_executor must be >= 1")
        if self.cpu_cost_per_tuple <= 0:
            raise NonPositiveParameter(f"operator {self.id!r}: cpu_cost_per_tuple must be > 0")
        if self.output_selectivity < 0:
            raise NonPositiveParameter(f"operator {self.id!r}: output_selectivity must be >= 0")
        if self.output_tuple_bytes < 0:
            raise NonPositiveParameter(f"operator {self.id!r}: output_tuple_bytes must be >= 0")
        if self.shard_state_bytes < 0:
            raise NonPositiveParameter(f"operator {self.id!r}: shard_state_bytes must be >= 0")


@dataclass(frozen=True)
class TopologySpec:
    """Raw, unvalidated description of a dataflow graph."""

    operators: tuple[OperatorSpec, ...]
    edges: tuple[tuple[str, str], ...] = ()
    source_rate_tps: float = 0.0

    @staticmethod
    def of(operators, edges=(), source_rate_tps=0.0) -> "TopologySpec":
        return TopologySpec(tuple(operators), tuple((u, d) for u, d in edges), source_rate_tps)


@dataclass(frozen=True)
class TupleRecord:
    """One stream tuple as it travels through the simulator."""

    key: int
    payload_bytes: int
    created_at: float
    key_seq: int = 0


@dataclass(frozen=True)
class KeyPartition:
    """Two-tier static partition of one operator's key space.

    Total over the 64-bit key domain; the executor tier never changes
    during a run under the executor-centric policy.
    """

    operator_id: str
    executor_count: int
    shards_per_executor: int

    def executor_of(self, key: int) -> int:
        return hash_key_to_executor(key, self.executor_count)

    def shard_of(self, key: int) -> int:
        return hash_key_to_shard(key, self.shards_per_executor)


@dataclass
class Topology:
    """Validated topology with dense operator and executor indexing.

    executor_count is the global number of executors m; executor i maps
    to (operator index, slot within operator) via executor_ops/executor_slots.
    """

    spec: TopologySpec
    operators: list[OperatorSpec] = field(default_factory=list)
    op_index: dict[str, int] = field(default_factory=dict)
    downstream: list[list[int]] = field(default_factory=list)
    upstream: list[list[int]] = field(default_factory=list)
    topo_order: list[int] = field(default_factory=list)
    executor_count: int = 0
    executor_ops: list[int] = field(default_factory=list)
    executor_slots: list[int] = field(default_factory=list)
    first_executor: list[int] = field(default_factory=list)

    @property
    def source_rate_tps(self) -> float:
        return self.spec.source_rate_tps

    def sources(self) -> list[int]:
        return [i for i in range(len(self.operators)) if not self.upstream[i]]

    def sinks(self) -> list[int]:
        return [i for i in range(len(self.operators)) if not self.downstream[i]]

    def partition_for(self, op_idx: int) -> KeyPartition:
        op = self.operators[op_idx]
        return KeyPartition(op.id, op.executor_count, op.shards_per_executor)


def validate_topology(spec: TopologySpec) -> Topology:
    """Check a TopologySpec and return the normalized Topology.

    Rejects cycles, edges naming undeclared operators, duplicate
    operator ids and non-positive parameters.
    """
    if not spec.operators:
        raise NonPositiveParameter("topology needs at least one operator")
    if spec.source_rate_tps < 0:
        raise NonPositiveParameter("source_rate_tps must be >= 0")

    ops = list(spec.operators)
    index: dict[str, int] = {}
    for i, op in enumerate(ops):
        op.validate()
        if op.id in index:
            raise DanglingEdge(f"duplicate operator id {op.id!r}")
        index[op.id] = i

    n = len(ops)
    downstream: list[list[int]] = [[] for _ in range(n)]
    upstream: list[list[int]] = [[] for _ in range(n)]
    for up_id, down_id in spec.edges:
        if up_id not in index:
            raise DanglingEdge(f"edge references undeclared operator {up_id!r}")
        if down_id not in index:
            raise DanglingEdge(f"edge references undeclared operator {down_id!r}")
        u, d = index[up_id], index[down_id]
        downstream[u].append(d)
        upstream[d].append(u)

    # Kahn's algorithm; anything left over sits on a cycle.
    indeg = [len(upstream[i]) for i in range(n)]
    ready = [i for i in range(n) if indeg[i] == 0]
    order: list[int] = []
    while ready:
        cur = ready.pop(0)
        order.append(cur)
        for d in downstream[cur]:
            indeg[d] -= 1
            if indeg[d] == 0:
                ready.append(d)
    if len(order) != n:
        cyclic = sorted(ops[i].id for i in range(n) if indeg[i] > 0)
        raise CycleDetected(f"topology contains a cycle through {cyclic}")

    topo = Topology(spec=spec, operators=ops, op_index=index,
                    downstream=downstream, upstream=upstream, topo_order=order)
    for i, op in enumerate(ops):
        topo.first_executor.append(topo.executor_count)
        for slot in range(op.executor_count):
            topo.executor_ops.append(i)
            topo.executor_slots.append(slot)
        topo.executor_count += op.executor_count
    return topo


def topology_from_dict(doc: dict) -> Topology:
    """Build and validate a topology from a parsed JSON document.

    Schema: {"operators": [{"id", "executor_count", "shards_per_executor",
    "cpu_cost_per_tuple", "output_selectivity", "output_tuple_bytes",
    "shard_state_bytes"}], "edges": [[up, down], ...], "source_rate_tps": r}
    Every field except "id" has a default.
    """
    try:
        raw_ops = doc["operators"]
    except KeyError as exc:
        raise TopologyError("topology document missing 'operators'") from exc
    ops = []
    for entry in raw_ops:
        if "id" not in entry:
            raise TopologyError("operator entry missing 'id'")
        known = {f for f in OperatorSpec.__dataclass_fields__}
        unknown = set(entry) - known
        if unknown:
            raise TopologyError(f"operator {entry['id']!r}: unknown fields {sorted(unknown)}")
        ops.append(OperatorSpec(**entry))
    edges = tuple((u, d) for u, d in doc.get("edges", ()))
    rate = float(doc.get("source_rate_tps", 0.0))
    return validate_topology(TopologySpec(tuple(ops), edges, rate))


def topology_from_json(path) -> Topology:
    with open(path, "r", encoding="utf-8") as fh:
        return topology_from_dict(json.load(fh))
