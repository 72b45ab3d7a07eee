"""shardflow: a deterministic simulator for elastic stream processing.

The package models a dataflow of operators whose executors own static
key slices and balance load internally across dynamically assigned CPU
cores, next to two baselines (static binding and operator-level key
repartitioning), with a queueing-model scheduler deciding core counts
and placements.
"""

from .topology import (
    OperatorSpec, TopologySpec, Topology, TupleRecord, KeyPartition,
    TopologyError, CycleDetected, DanglingEdge, NonPositiveParameter,
    validate_topology, topology_from_dict, topology_from_json,
    fnv1a_64, hash_key_to_executor, hash_key_to_shard, key_from_string,
)
from .workload import (
    WorkloadConfig, ArrivalProcess, zipf_frequencies, shuffle_frequencies,
    next_arrival, load_rate_trace,
)
from .scheduler import (
    ClusterSpec, SchedulerConfig, MetricsSnapshot, AllocationResult,
    AssignmentMatrix, AssignOutcome, ZeroSourceRate, InfeasibleAssignment,
    UNBOUNDED, mmk_latency, pipeline_latency, allocate, transition_cost,
    marginal_costs, assign, assign_adaptive, check_assignment,
)
from .executor import (
    ElasticExecutor, ProcessPool, StateStore, TaskRef, ShardMove,
    RoutingTable, ShardStats, LoadStats, BUFFERED,
    NoTasks, ShardInFlight, UnknownTask, CoreBusy, LastTask, NotOwner,
    imbalance, plan_rebalance,
)
from .metrics import WindowAccumulator, WindowRow, Reservoir, InsufficientData
from .simulation import (
    Simulation, Trace, CostModel, SimOptions, PolicyKind,
    WrongPolicy, EventQueueCorruption,
)

__version__ = "0.1.0"
