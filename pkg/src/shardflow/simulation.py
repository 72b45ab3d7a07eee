"""Deterministic discrete-event cluster simulator.

One Simulation owns a logical clock, an event heap ordered by
(time, sequence number), the cluster core inventory, the workload
generator and one of three elasticity policies:

* static: fixed executors, one core each, no adaptation;
* executor-centric: fixed executors with dynamic many-to-one core
  assignment, intra-executor shard rebalancing and label-drained moves;
* resource-centric: one core per executor, operator-level key
  repartitioning through a four-step globally synchronized protocol
  (pause upstream, drain in-flight, migrate state, update routing).

Identical (config, seed) pairs replay identical traces; the event heap
never compares payloads, every tie breaks on the sequence number, and
all randomness comes from named child streams of the run seed.
"""

from __future__ import annotations

import itertools
import json
import random
import time as _time
from dataclasses import dataclass, field
from enum import Enum
from heapq import heappop, heappush

from .executor import ElasticExecutor, ProcessPool, ShardMove, ShardStats, RoutingTable, \
    BUFFERED, plan_rebalance
from .metrics import WindowAccumulator, WindowRow
from .scheduler import AssignmentMatrix, ClusterSpec, SchedulerConfig, MetricsSnapshot, \
    allocate, assign_adaptive, transition_cost
from .topology import Topology, hash_key_to_executor, hash_key_to_shard
from .workload import ArrivalProcess, WorkloadConfig


class WrongPolicy(RuntimeError):
    pass


class InfeasibleAssignment(RuntimeError):
    pass


class EventQueueCorruption(AssertionError):
    pass


class PolicyKind(str, Enum):
    STATIC = "static"
    RESOURCE_CENTRIC = "rc"
    EXECUTOR_CENTRIC = "ec"

    @staticmethod
    def parse(text) -> "PolicyKind":
        if isinstance(text, PolicyKind):
            return text
        try:
            return PolicyKind(str(text).lower())
        except ValueError as exc:
            raise ValueError(f"unknown policy {text!r}; expected static, rc or ec") from exc


@dataclass(frozen=True)
class CostModel:
    """Network and protocol cost knobs used by the simulator."""

    network_latency_s: float = 0.0005
    bandwidth_bytes_per_s: float = 125_000_000.0  # 1 Gbps
    rc_sync_rtt_s: float = 0.15  # per-upstream-executor synchronization round trip
    serialization_s_per_byte: float = 1e-9

    def __post_init__(self):
        for name in ("network_latency_s", "bandwidth_bytes_per_s",
                     "rc_sync_rtt_s", "serialization_s_per_byte"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def transfer_s(self, nbytes: int) -> float:
        return (self.network_latency_s + nbytes / self.bandwidth_bytes_per_s
                + nbytes * self.serialization_s_per_byte)

    def hop_s(self, nbytes: int) -> float:
        return self.network_latency_s + nbytes * self.serialization_s_per_byte


@dataclass
class SimOptions:
    imbalance_threshold: float = 1.2  # rebalance until the factor drops below this
    window_s: float = 1.0
    service_fixed: bool = False  # fixed service times instead of exponential
    validate_order: bool = False
    track_state_counts: bool = False
    collect_latencies: bool = False
    rc_debounce_ticks: int = 2  # consecutive ticks before RC acts on an allocation drift
    rc_cooldown_s: float = 1.0  # quiet period after a repartition resumes
    # repartitions start only above this factor; plans still balance down to
    # imbalance_threshold (hysteresis keeps measurement noise from thrashing)
    rc_trigger_imbalance: float = 1.35


@dataclass
class Trace:
    """Everything one run exports."""

    policy: str
    seed: int
    duration_s: float
    windows: list[WindowRow]
    total_arrivals: int = 0
    total_completions: int = 0
    mean_latency_s: float = 0.0
    p99_latency_s: float = 0.0
    total_migrated_bytes: int = 0
    total_sync_messages: int = 0
    total_remote_transfer_bytes: int = 0
    intra_move_migrated_bytes: int = 0
    order_violations: int = 0
    latencies: list[float] = field(default_factory=list)
    protocol_log: list[dict] = field(default_factory=list)
    decision_log: list[dict] = field(default_factory=list)
    conservation: dict = field(default_factory=dict)

    CSV_HEADER = ("window_end_s,policy,throughput_tps,mean_latency_s,"
                  "p99_latency_s,migrated_bytes,sync_messages,remote_transfer_bytes")

    def csv_text(self) -> str:
        lines = [self.CSV_HEADER]
        for w in self.windows:
            lines.append(f"{w.window_end_s!r},{w.policy},{w.throughput_tps!r},"
                         f"{w.mean_latency_s!r},{w.p99_latency_s!r},{w.migrated_bytes},"
                         f"{w.sync_messages},{w.remote_transfer_bytes}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.csv_text())

    def dump_protocol_log(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.protocol_log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def dump_decision_log(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.decision_log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def mean_throughput_tps(self) -> float:
        return self.total_completions / self.duration_s if self.duration_s else 0.0


# event kinds; heap entries are (time, seq, kind, a, b)
_EV_ARRIVAL = 0
_EV_SERVICE = 1
_EV_DELIVER = 2
_EV_POOL = 3
_EV_CONTROL = 4
_EV_MIGRATION = 5
_EV_WINDOW = 6
_EV_SHUFFLE = 7
_EV_CALLBACK = 8
_EV_RELEASE = 9
_EV_RC_PAUSE = 10
_EV_RC_MIGRATED = 11
_EV_RC_UPDATE = 12


def _incr(value):
    return (value or 0) + 1


class _CorePool:
    """Free (node, core) handles of the cluster."""

    def __init__(self, cluster: ClusterSpec):
        self.free = [list(range(c)) for c in cluster.node_cores]

    def acquire(self, node: int):
        cores = self.free[node]
        if not cores:
            return None
        cores.sort()
        return node, cores.pop(0)

    def release(self, core) -> None:
        self.free[core[0]].append(core[1])

    def free_count(self, node: int) -> int:
        return len(self.free[node])


class _RcWorker:
    __slots__ = ("wid", "node", "core", "pool", "paused")

    def __init__(self, wid: int, node: int, core):
        self.wid = wid
        self.node = node
        self.core = core
        self.pool = ProcessPool(node, cores=1)
        self.paused = False


class _RcOp:
    """Resource-centric runtime of one operator."""

    __slots__ = ("op_idx", "granularity", "workers", "partition", "shard_window",
                 "shard_load", "state_bytes_per_shard", "repartition", "next_wid",
                 "pending_down", "last_resume_t")

    def __init__(self, op_idx: int, granularity: int, state_bytes_per_shard: int):
        self.op_idx = op_idx
        self.granularity = granularity
        self.workers: dict[int, _RcWorker] = {}
        self.partition = [0] * granularity
        self.shard_window = [0.0] * granularity
        self.shard_load = [1e-9] * granularity
        self.state_bytes_per_shard = state_bytes_per_shard
        self.repartition = None  # active repartition descriptor
        self.next_wid = 0
        self.pending_down = 0
        self.last_resume_t = -1e18

    def worker_loads(self) -> dict[int, float]:
        loads = {w: 0.0 for w in self.workers}
        for g, w in enumerate(self.partition):
            loads[w] += self.shard_load[g]
        return loads


class Simulation:
    """One policy, one seed, one deterministic run."""

    def __init__(self, topology: Topology, cluster: ClusterSpec,
                 workload: WorkloadConfig, policy, seed: int = 0,
                 cost_model: CostModel | None = None,
                 scheduler_cfg: SchedulerConfig | None = None,
                 options: SimOptions | None = None):
        self.topo = topology
        self.cluster = cluster
        self.workload = workload
        self.policy = PolicyKind.parse(policy)
        self.seed = seed
        self.cost = cost_model or CostModel()
        self.sched_cfg = scheduler_cfg or SchedulerConfig()
        self.opts = options or SimOptions()

        self.now = 0.0
        self.heap: list = []
        self._seq = itertools.count()
        self.rng_service = random.Random(f"{seed}:service")
        self.rng_select = random.Random(f"{seed}:select")
        self.arrivals = ArrivalProcess(workload, topology.source_rate_tps,
                                       random.Random(f"{seed}:arrivals"))
        self.cores = _CorePool(cluster)
        self.windows: list[WindowRow] = []
        self.decision_log: list[dict] = []
        self.rc_log: list[dict] = []
        self.latencies: list[float] = []
        self.order_violations = 0
        self._key_seq_next = [0] * workload.key_count
        self._last_seen = None
        n_ops = len(topology.operators)
        self.op_delivered = [0] * n_ops
        self.op_completed = [0] * n_ops
        if self.opts.validate_order:
            self._last_seen = [[0] * workload.key_count for _ in range(n_ops)]
        self._key_counts = None
        if self.opts.track_state_counts:
            self._key_counts = [[0] * workload.key_count for _ in range(n_ops)]

        # per-operator precomputed key maps (keys are 0..K-1)
        k_count = workload.key_count
        self._key_exec = []
        self._key_shard = []
        self._rc_key_shard = []
        for op in topology.operators:
            self._key_exec.append([hash_key_to_executor(k, op.executor_count)
                                   for k in range(k_count)])
            self._key_shard.append([hash_key_to_shard(k, op.shards_per_executor)
                                    for k in range(k_count)])
            gran = op.executor_count * op.shards_per_executor
            self._rc_key_shard.append([hash_key_to_shard(k, gran) for k in range(k_count)])

        self._source_ops = topology.sources()
        self._sink_ops = set(topology.sinks())
        self._op_amplification = self._flow_amplification()
        self._dispatch_paused = False
        self._arrival_buffer: list = []

        if self.policy is PolicyKind.RESOURCE_CENTRIC:
            self._build_rc()
            unit_count = n_ops
        else:
            self._build_ec()
            unit_count = topology.executor_count
        prior = self._service_priors(unit_count)
        self.metrics = WindowAccumulator(unit_count, self.opts.window_s,
                                         random.Random(f"{seed}:metrics"),
                                         default_service_rates=prior)
        self.pending_adds: dict[int, list[int]] = {}
        self._rc_pending_trigger: dict[int, tuple] = {}
        self._contaminated_until = -1e18

        self._schedule_bootstrap()

    # ------------------------------------------------------------------
    # construction

    def _flow_amplification(self) -> list[float]:
        """Expected tuples per external arrival reaching each operator,
        assuming flow balance along the DAG."""
        amp = [0.0] * len(self.topo.operators)
        for op_idx in self._source_ops:
            amp[op_idx] = 1.0
        for u in self.topo.topo_order:
            sel = self.topo.operators[u].output_selectivity
            for d in self.topo.downstream[u]:
                amp[d] += amp[u] * sel
        return amp

    def _service_priors(self, unit_count: int) -> list[float]:
        if self.policy is PolicyKind.RESOURCE_CENTRIC:
            return [1.0 / op.cpu_cost_per_tuple for op in self.topo.operators]
        return [1.0 / self.topo.operators[self.topo.executor_ops[g]].cpu_cost_per_tuple
                for g in range(unit_count)]

    def _build_ec(self) -> None:
        n_nodes = self.cluster.node_count
        self.executors: list[ElasticExecutor] = []
        for gid in range(self.topo.executor_count):
            op_idx = self.topo.executor_ops[gid]
            op = self.topo.operators[op_idx]
            node = gid % n_nodes
            ex = ElasticExecutor(gid, op, node, key_shard=self._key_shard[op_idx])
            ex.shard_load = [1e-9] * ex.z  # count-based first rebalance
            core = self.cores.acquire(node)
            if core is None:
                raise InfeasibleAssignment(f"no free core on node {node} for executor {gid}")
            ref = ex.add_task(core, 0.0)
            ex.seed_shards(ref.task_id)
            self.executors.append(ex)

    def _build_rc(self) -> None:
        n_nodes = self.cluster.node_count
        self.rc_ops: list[_RcOp] = []
        gid = 0
        for op_idx, op in enumerate(self.topo.operators):
            st = _RcOp(op_idx, op.executor_count * op.shards_per_executor,
                       op.shard_state_bytes)
            for slot in range(op.executor_count):
                node = gid % n_nodes
                core = self.cores.acquire(node)
                if core is None:
                    raise InfeasibleAssignment(f"no free core on node {node}")
                st.workers[st.next_wid] = _RcWorker(st.next_wid, node, core)
                st.next_wid += 1
                gid += 1
            wids = sorted(st.workers)
            st.partition = [wids[g % len(wids)] for g in range(st.granularity)]
            self.rc_ops.append(st)
        # state store per (operator, node), shared by co-located workers
        self.rc_stores: dict[tuple, dict] = {}

    def _schedule_bootstrap(self) -> None:
        self._push(self.opts.window_s, _EV_WINDOW, None, None)
        t0, key = self.arrivals.next(0.0)
        self._push(t0, _EV_ARRIVAL, key, None)

    # ------------------------------------------------------------------
    # event plumbing

    def _push(self, t: float, kind: int, a, b) -> None:
        heappush(self.heap, (t, next(self._seq), kind, a, b))

    def at(self, t: float, fn) -> None:
        """Run fn(sim, t) at logical time t (test and scenario hook)."""
        self._push(t, _EV_CALLBACK, fn, None)

    def _service_time(self, cost: float) -> float:
        if self.opts.service_fixed:
            return cost
        return self.rng_service.expovariate(1.0 / cost)

    # ------------------------------------------------------------------
    # main loop

    def run_until(self, t_end: float) -> Trace:
        heap = self.heap
        shuffle_times = self.arrivals.shuffle_times(t_end)
        for ts in shuffle_times:
            self._push(ts, _EV_SHUFFLE, None, None)

        last_t = 0.0
        while heap:
            if heap[0][0] > t_end:
                break
            t, _, kind, a, b = heappop(heap)
            if t < last_t:
                raise EventQueueCorruption(f"time went backwards: {t} < {last_t}")
            last_t = t
            self.now = t
            if kind == _EV_SERVICE:
                self._on_service(t, a, b)
            elif kind == _EV_ARRIVAL:
                self._on_arrival(t, a)
            elif kind == _EV_DELIVER:
                self._on_deliver(t, a, b)
            elif kind == _EV_POOL:
                self._on_pool_arrive(t, a, b)
            elif kind == _EV_WINDOW:
                self._on_window(t)
            elif kind == _EV_CONTROL:
                self._on_control(t, a, b)
            elif kind == _EV_MIGRATION:
                self._on_migration(t, a, b)
            elif kind == _EV_SHUFFLE:
                self.arrivals.shuffle()
            elif kind == _EV_CALLBACK:
                a(self, t)
            elif kind == _EV_RELEASE:
                self._on_release(t, a, b)
            elif kind == _EV_RC_PAUSE:
                self._on_rc_pause(t, a, b)
            elif kind == _EV_RC_MIGRATED:
                self._on_rc_migrated(t, a)
            elif kind == _EV_RC_UPDATE:
                self._on_rc_update(t, a, b)
            else:
                raise EventQueueCorruption(f"unknown event kind {kind}")
        self.now = t_end
        return self._finalize(t_end)

    # ------------------------------------------------------------------
    # arrivals

    def _on_arrival(self, t: float, key: int) -> None:
        nxt, nkey = self.arrivals.next(t)
        self._push(nxt, _EV_ARRIVAL, nkey, None)
        self.metrics.on_arrival()
        kseq = self._key_seq_next[key] + 1
        self._key_seq_next[key] = kseq
        if self._dispatch_paused:
            self._arrival_buffer.append((t, key, kseq))
            return
        self._dispatch(t, key, t, kseq)

    def _dispatch(self, t: float, key: int, created: float, kseq: int) -> None:
        payload = self.workload.payload_bytes
        for op_idx in self._source_ops:
            if self.policy is PolicyKind.RESOURCE_CENTRIC:
                self._rc_deliver(t, op_idx, key, created, kseq, payload)
            else:
                gid = self.topo.first_executor[op_idx] + self._key_exec[op_idx][key]
                item = (self._key_shard[op_idx][key], key, created, kseq, payload)
                self.op_delivered[op_idx] += 1
                self._deliver_ec(t, gid, item)

    # ------------------------------------------------------------------
    # executor-centric / static data path

    def _deliver_ec(self, t: float, gid: int, item) -> None:
        ex = self.executors[gid]
        ex.outstanding += 1
        self.metrics.on_tuple_in(gid, item[4])
        target = ex.deliver(item)
        if target is BUFFERED:
            return
        if target == ex.local_node:
            pool = ex.pools[target]
            pool.push(item)
            if pool.idle:
                self._kick_pool(t, ex, pool)
        else:
            self.metrics.on_remote_bytes(item[4])
            self._push(t + self.cost.hop_s(item[4]), _EV_POOL, (gid, target), item)

    def _on_deliver(self, t: float, gid: int, item) -> None:
        self._deliver_ec(t, gid, item)

    def _on_pool_arrive(self, t: float, ref, item) -> None:
        if ref[0] == "rc":
            _, op_idx, wid = ref
            st = self.rc_ops[op_idx]
            self._rc_enqueue(t, st, st.workers[wid], item)
            return
        gid, node = ref
        ex = self.executors[gid]
        pool = ex.pools.get(node)
        if pool is None:
            # the task moved away while the tuple was in flight; re-route
            ex.outstanding -= 1
            self.metrics.tuples_in[gid] -= 1
            self.metrics.bytes_in[gid] -= item[4]
            self._deliver_ec(t, gid, item)
            return
        pool.push(item)
        if pool.idle:
            self._kick_pool(t, ex, pool)

    def _kick_pool(self, t: float, ex: ElasticExecutor, pool: ProcessPool) -> None:
        while pool.idle:
            item = pool.take()
            if item is None:
                return
            if len(item) == 2:
                self._handle_label(t, ex, pool, item)
                continue
            pool.idle -= 1
            pool.busy.add(item[0])
            dur = self._service_time(ex.op.cpu_cost_per_tuple)
            self._push(t + dur, _EV_SERVICE, (ex, pool), (item, dur))

    def _handle_label(self, t: float, ex: ElasticExecutor, pool: ProcessPool, label) -> None:
        move = label[1]
        outcome = ex.on_label(move, t)
        if outcome[0] == "migrate":
            nbytes = outcome[1]
            self._push(t + self.cost.transfer_s(nbytes), _EV_MIGRATION, ex, move)
        else:
            self._finish_ec_move(t, ex, outcome[1], move)

    def _on_migration(self, t: float, ex: ElasticExecutor, move: ShardMove) -> None:
        nbytes = ex.shard_state_bytes[move.shard]
        released = ex.on_migration_done(move, t)
        self.metrics.on_migration(nbytes)
        self._finish_ec_move(t, ex, released, move)

    def _finish_ec_move(self, t: float, ex: ElasticExecutor, released,
                        move: ShardMove) -> None:
        dst_node = ex.tasks[move.dst_task].node
        if released:
            if dst_node == ex.local_node:
                pool = ex.pools[dst_node]
                for item in released:
                    pool.push(item)
            else:
                nbytes = sum(item[4] for item in released)
                self.metrics.on_remote_bytes(nbytes)
                self._push(t + self.cost.hop_s(nbytes), _EV_RELEASE,
                           (ex.exec_id, dst_node), list(released))
        self._after_protocol_step(t, ex, move)
        pool = ex.pools.get(dst_node)
        if pool is not None and pool.idle:
            self._kick_pool(t, ex, pool)

    def _on_release(self, t: float, ref, items) -> None:
        gid, node = ref
        ex = self.executors[gid]
        pool = ex.pools.get(node)
        if pool is None:
            for item in items:
                ex.outstanding -= 1
                self.metrics.tuples_in[gid] -= 1
                self.metrics.bytes_in[gid] -= item[4]
                self._deliver_ec(t, gid, item)
            return
        for item in items:
            pool.push(item)
        if pool.idle:
            self._kick_pool(t, ex, pool)

    def _on_control(self, t: float, ref, label) -> None:
        gid, node = ref
        ex = self.executors[gid]
        pool = ex.pools[node]
        pool.push(label)
        if pool.idle:
            self._kick_pool(t, ex, pool)

    def _after_protocol_step(self, t: float, ex: ElasticExecutor, move: ShardMove) -> None:
        """Finalize draining tasks whose last shard just left."""
        task_id = move.src_task
        if task_id in ex.draining:
            result = ex.try_finalize_removal(task_id, t)
            if result is not None:
                core, freed_now, _destroyed = result
                if freed_now:
                    self._release_core(t, core)
                else:
                    # the handle parks until a service slot retires
                    self._parked_core_of(ex, core)

    def _parked_core_of(self, ex: ElasticExecutor, core) -> None:
        node = core[0]
        pool = ex.pools.get(node)
        if pool is None:
            self._release_core(self.now, core)
        else:
            pool.parked_cores.append(core)

    def _release_core(self, t: float, core) -> None:
        self.cores.release(core)
        node = core[0]
        queue = self.pending_adds.get(node)
        while queue and self.cores.free_count(node):
            gid = queue.pop(0)
            handle = self.cores.acquire(node)
            ex = self.executors[gid]
            ex.add_task(handle, t)
            self._maybe_rebalance(t, ex)
        if queue is not None and not queue:
            del self.pending_adds[node]

    def _on_service(self, t: float, ref, payload) -> None:
        if self.policy is PolicyKind.RESOURCE_CENTRIC:
            self._on_service_rc(t, ref, payload)
        else:
            self._on_service_ec(t, ref, payload)

    def _on_service_ec(self, t: float, ref, payload) -> None:
        ex, pool = ref
        item, dur = payload
        shard, key, created, kseq, nbytes = item
        gid = ex.exec_id
        op_idx = self.topo.executor_ops[gid]
        ex.record_cpu(shard, dur)
        self.metrics.on_busy(gid, dur)
        ex.stores[pool.node].apply(shard, key, _incr)
        if self._last_seen is not None:
            if kseq <= self._last_seen[op_idx][key]:
                self.order_violations += 1
            self._last_seen[op_idx][key] = kseq
        if self._key_counts is not None:
            self._key_counts[op_idx][key] += 1
        ex.outstanding -= 1
        self.op_completed[op_idx] += 1
        out_bytes = self._emit(t, op_idx, key, created, kseq, pool.node, ex.local_node)
        self.metrics.on_tuple_out(gid, out_bytes)
        # pick the next item for this service slot
        if pool.retire_debt:
            pool.retire_debt -= 1
            pool.busy.discard(shard)
            deferred = pool.deferred.pop(shard, None)
            if deferred:
                pool.queue.extendleft(reversed(deferred))
            if pool.parked_cores:
                self._release_core(t, pool.parked_cores.pop(0))
            return
        nxt = pool.after_completion(shard)
        while nxt is not None and len(nxt) == 2:
            self._handle_label(t, ex, pool, nxt)
            nxt = pool.take()
        if nxt is None:
            pool.idle += 1
            return
        pool.busy.add(nxt[0])
        dur = self._service_time(ex.op.cpu_cost_per_tuple)
        self._push(t + dur, _EV_SERVICE, (ex, pool), (nxt, dur))

    def _emit(self, t: float, op_idx: int, key: int, created: float, kseq: int,
              from_node: int, emitter_node: int) -> int:
        """Forward one processed tuple downstream; returns output bytes."""
        op = self.topo.operators[op_idx]
        downstream = self.topo.downstream[op_idx]
        if not downstream:
            latency = t - created
            self.metrics.on_completion(latency)
            if self.opts.collect_latencies:
                self.latencies.append(latency)
            return 0
        sel = op.output_selectivity
        if sel == 1.0:
            copies = 1
        else:
            whole = int(sel)
            copies = whole + (1 if self.rng_select.random() < sel - whole else 0)
            if copies == 0:
                return 0
        out_bytes = 0
        return_hop = 0.0
        if from_node != emitter_node:
            # remote task ships its output back through the executor's emitter
            size = op.output_tuple_bytes * copies
            self.metrics.on_remote_bytes(size)
            return_hop = self.cost.hop_s(size)
        rc = self.policy is PolicyKind.RESOURCE_CENTRIC
        for dn_op in downstream:
            nbytes = op.output_tuple_bytes
            for _ in range(copies):
                out_bytes += nbytes
                if rc:
                    self._rc_deliver(t, dn_op, key, created, kseq, nbytes,
                                     from_node=emitter_node, delay=return_hop)
                else:
                    gid = self.topo.first_executor[dn_op] + self._key_exec[dn_op][key]
                    item = (self._key_shard[dn_op][key], key, created, kseq, nbytes)
                    self.op_delivered[dn_op] += 1
                    recv_node = self.executors[gid].local_node
                    delay = return_hop
                    if emitter_node != recv_node:
                        delay += self.cost.hop_s(nbytes)
                    if delay > 0.0:
                        self._push(t + delay, _EV_DELIVER, gid, item)
                    else:
                        self._deliver_ec(t, gid, item)
        return out_bytes

    # ------------------------------------------------------------------
    # resource-centric data path

    def _rc_deliver(self, t: float, op_idx: int, key: int, created: float, kseq: int,
                    nbytes: int, from_node: int | None = None, delay: float = 0.0) -> None:
        st = self.rc_ops[op_idx]
        g = self._rc_key_shard[op_idx][key]
        worker = st.workers[st.partition[g]]
        item = (g, key, created, kseq, nbytes)
        self.op_delivered[op_idx] += 1
        self.metrics.on_tuple_in(op_idx, nbytes)
        # offered work per shard: robust to drain transients, unlike burnt CPU
        st.shard_window[g] += self.topo.operators[op_idx].cpu_cost_per_tuple
        st.pending_down += 1
        if from_node is not None and from_node != worker.node:
            delay += self.cost.hop_s(nbytes)
        if delay > 0.0:
            self._push(t + delay, _EV_POOL, ("rc", op_idx, worker.wid), item)
        else:
            self._rc_enqueue(t, st, worker, item)

    def _rc_enqueue(self, t: float, st: _RcOp, worker: _RcWorker, item) -> None:
        worker.pool.push(item)
        if worker.pool.idle and not worker.paused:
            self._kick_rc(t, st, worker)

    def _kick_rc(self, t: float, st: _RcOp, worker: _RcWorker) -> None:
        pool = worker.pool
        while pool.idle and not worker.paused:
            item = pool.take()
            if item is None:
                return
            pool.idle -= 1
            pool.busy.add(item[0])
            dur = self._service_time(self.topo.operators[st.op_idx].cpu_cost_per_tuple)
            self._push(t + dur, _EV_SERVICE, ("rc", st.op_idx, worker.wid), (item, dur))

    def _on_service_rc(self, t: float, ref, payload) -> None:
        _, op_idx, wid = ref
        st = self.rc_ops[op_idx]
        worker = st.workers[wid]
        item, dur = payload
        g, key, created, kseq, nbytes = item
        self.metrics.on_busy(op_idx, dur)
        store = self.rc_stores.setdefault((op_idx, worker.node), {})
        bucket = store.setdefault(g, {})
        bucket[key] = (bucket.get(key) or 0) + 1
        if self._last_seen is not None:
            if kseq <= self._last_seen[op_idx][key]:
                self.order_violations += 1
            self._last_seen[op_idx][key] = kseq
        if self._key_counts is not None:
            self._key_counts[op_idx][key] += 1
        st.pending_down -= 1
        self.op_completed[op_idx] += 1
        out_bytes = self._emit(t, op_idx, key, created, kseq, worker.node, worker.node)
        self.metrics.on_tuple_out(op_idx, out_bytes)
        rep = st.repartition
        if rep is not None and rep.get("waiting_barrier") and st.pending_down == 0:
            self._rc_barrier_met(t, st)
        pool = worker.pool
        nxt = pool.after_completion(g)
        if nxt is None or worker.paused:
            if nxt is not None:
                pool.queue.appendleft(nxt)
            pool.idle += 1
            return
        pool.busy.add(nxt[0])
        dur = self._service_time(self.topo.operators[op_idx].cpu_cost_per_tuple)
        self._push(t + dur, _EV_SERVICE, ("rc", op_idx, wid), (nxt, dur))

    # ------------------------------------------------------------------
    # RC repartition protocol (pause -> drain -> migrate -> update -> resume)

    def upstream_workers(self, op_idx: int) -> list[tuple]:
        """(upstream op, worker id) pairs feeding this operator."""
        if self.policy is not PolicyKind.RESOURCE_CENTRIC:
            raise WrongPolicy("upstream worker enumeration is a resource-centric notion")
        pairs = []
        for up in self.topo.upstream[op_idx]:
            for wid in sorted(self.rc_ops[up].workers):
                pairs.append((up, wid))
        return pairs

    def rc_repartition(self, op_idx: int, new_partition: list[int],
                       added: dict | None = None, removed: list | None = None) -> None:
        """Run the four-step global repartition for one operator.

        Pauses every upstream executor (one sync message each), waits for
        the operator's in-flight tuples to drain, migrates the state of
        reassigned key subspaces, then updates every upstream routing
        table (one sync message each) before resuming.
        """
        if self.policy is not PolicyKind.RESOURCE_CENTRIC:
            raise WrongPolicy("rc_repartition requires the resource-centric policy")
        st = self.rc_ops[op_idx]
        if st.repartition is not None:
            raise RuntimeError(f"operator {op_idx} already repartitioning")
        if len(new_partition) != st.granularity:
            raise ValueError("partition size mismatch")
        t = self.now
        ups = self.upstream_workers(op_idx)
        rep = {"new_partition": new_partition, "upstream": ups,
               "paused": [], "waiting_barrier": False, "removed": removed or [],
               "t_begin": t}
        st.repartition = rep
        self.rc_log.append({"t": t, "type": "rc_begin", "op": op_idx,
                            "upstream": len(ups)})
        if op_idx in self._source_ops:
            self._dispatch_paused = True
        if not ups:
            self._rc_arm_barrier(t, st)
            return
        rtt = self.cost.rc_sync_rtt_s
        for i, pair in enumerate(ups):
            self._push(t + rtt * (i + 1), _EV_RC_PAUSE, op_idx, (i, pair))

    def _on_rc_pause(self, t: float, op_idx: int, payload) -> None:
        i, (up, wid) = payload
        st = self.rc_ops[op_idx]
        rep = st.repartition
        worker = self.rc_ops[up].workers.get(wid)
        if worker is not None:
            worker.paused = True
            rep["paused"].append((up, wid))
        self.metrics.on_sync(1)
        self.rc_log.append({"t": t, "type": "rc_pause", "op": op_idx,
                            "upstream_op": up, "worker": wid})
        if i == len(rep["upstream"]) - 1:
            self._rc_arm_barrier(t, st)

    def _rc_arm_barrier(self, t: float, st: _RcOp) -> None:
        st.repartition["waiting_barrier"] = True
        if st.pending_down == 0:
            self._rc_barrier_met(t, st)

    def _rc_barrier_met(self, t: float, st: _RcOp) -> None:
        rep = st.repartition
        rep["waiting_barrier"] = False
        self.rc_log.append({"t": t, "type": "rc_drained", "op": st.op_idx})
        new_partition = rep["new_partition"]
        moved = [g for g in range(st.granularity) if new_partition[g] != st.partition[g]]
        transfers: dict[tuple, int] = {}
        for g in moved:
            src_node = st.workers[st.partition[g]].node
            dst_node = st.workers[new_partition[g]].node
            if src_node != dst_node:
                pair = (src_node, dst_node)
                transfers[pair] = transfers.get(pair, 0) + st.state_bytes_per_shard
        rep["moved"] = moved
        total = sum(transfers.values())
        rep["migrate_bytes"] = total
        duration = max((self.cost.transfer_s(b) for b in transfers.values()), default=0.0)
        self.rc_log.append({"t": t, "type": "rc_state_migrate", "op": st.op_idx,
                            "bytes": total, "shards": len(moved)})
        if duration > 0.0:
            self._push(t + duration, _EV_RC_MIGRATED, st.op_idx, None)
        else:
            self._rc_apply_partition(t, st)

    def _on_rc_migrated(self, t: float, op_idx: int) -> None:
        self._rc_apply_partition(t, self.rc_ops[op_idx])

    def _rc_apply_partition(self, t: float, st: _RcOp) -> None:
        rep = st.repartition
        if rep["migrate_bytes"]:
            self.metrics.on_migration(rep["migrate_bytes"])
        new_partition = rep["new_partition"]
        for g in rep["moved"]:
            src_node = st.workers[st.partition[g]].node
            dst_node = st.workers[new_partition[g]].node
            if src_node != dst_node:
                src_store = self.rc_stores.setdefault((st.op_idx, src_node), {})
                dst_store = self.rc_stores.setdefault((st.op_idx, dst_node), {})
                if g in src_store:
                    dst_store[g] = src_store.pop(g)
        st.partition = list(new_partition)
        for wid in rep["removed"]:
            worker = st.workers.pop(wid)
            assert worker.pool.backlog() == 0, "removing a worker with queued tuples"
            self.cores.release(worker.core)
            self.rc_log.append({"t": t, "type": "rc_worker_removed", "op": st.op_idx,
                                "worker": wid})
        ups = rep["upstream"]
        if not ups:
            self._rc_finish(t, st)
            return
        rtt = self.cost.rc_sync_rtt_s
        for i, pair in enumerate(ups):
            self._push(t + rtt * (i + 1), _EV_RC_UPDATE, st.op_idx, (i, pair))

    def _on_rc_update(self, t: float, op_idx: int, payload) -> None:
        i, (up, wid) = payload
        st = self.rc_ops[op_idx]
        self.metrics.on_sync(1)
        self.rc_log.append({"t": t, "type": "rc_routing_update", "op": op_idx,
                            "upstream_op": up, "worker": wid})
        if i == len(st.repartition["upstream"]) - 1:
            self._rc_finish(t, st)

    def _rc_finish(self, t: float, st: _RcOp) -> None:
        rep = st.repartition
        for up, wid in rep["paused"]:
            worker = self.rc_ops[up].workers.get(wid)
            if worker is not None:
                worker.paused = False
                if worker.pool.idle:
                    self._kick_rc(t, self.rc_ops[up], worker)
        st.repartition = None
        st.last_resume_t = t
        self._contaminated_until = t + 5.0 * self.opts.window_s
        self.rc_log.append({"t": t, "type": "rc_resume", "op": st.op_idx,
                            "elapsed_s": t - rep["t_begin"]})
        if st.op_idx in self._source_ops:
            self._dispatch_paused = False
            buffered, self._arrival_buffer = self._arrival_buffer, []
            for created, key, kseq in buffered:
                self._dispatch(t, key, created, kseq)
        # kick the operator's own workers (queues may hold drained backlog)
        for wid in sorted(st.workers):
            worker = st.workers[wid]
            if worker.pool.idle and not worker.paused:
                self._kick_rc(t, st, worker)

    # ------------------------------------------------------------------
    # windows and policy ticks

    def _on_window(self, t: float) -> None:
        self.windows.append(self.metrics.window_row(t, self.policy.value))
        fold = True
        if self.policy is PolicyKind.RESOURCE_CENTRIC:
            active = any(st.repartition is not None for st in self.rc_ops)
            # a window overlapping a pause, or the flood right after one,
            # says nothing about stationary demand
            fold = not active and self._contaminated_until <= t - self.opts.window_s
        snap = self._snapshot(fold)
        self.metrics.reset_window()
        if self.policy is PolicyKind.EXECUTOR_CENTRIC:
            self._tick_ec(t, snap)
        elif self.policy is PolicyKind.RESOURCE_CENTRIC:
            self._tick_rc(t, snap)
        self._roll_loads()
        nxt = t + self.opts.window_s
        self._push(nxt, _EV_WINDOW, None, None)

    def _snapshot(self, fold: bool = True) -> MetricsSnapshot:
        if self.policy is PolicyKind.RESOURCE_CENTRIC:
            cores = [len(st.workers) for st in self.rc_ops]
            state = [st.granularity * st.state_bytes_per_shard for st in self.rc_ops]
        else:
            cores = [len(ex.tasks) for ex in self.executors]
            state = [ex.state_bytes_total() for ex in self.executors]
        return self.metrics.snapshot(cores, state, fold=fold)

    def _roll_loads(self) -> None:
        if self.policy is PolicyKind.RESOURCE_CENTRIC:
            for st in self.rc_ops:
                win = st.shard_window
                load = st.shard_load
                for g in range(st.granularity):
                    load[g] = 0.5 * win[g] + 0.5 * load[g]
                    win[g] = 0.0
        else:
            for ex in self.executors:
                ex.roll_window()

    # -- executor-centric tick

    def _ec_busy(self, ex: ElasticExecutor) -> bool:
        return bool(ex.in_flight or ex.draining)

    def _current_matrix(self) -> AssignmentMatrix:
        x = AssignmentMatrix.empty(self.cluster.node_count,
                                   [ex.local_node for ex in self.executors])
        for gid, ex in enumerate(self.executors):
            for ref in ex.tasks.values():
                x.grid[ref.node][gid] += 1
        return x

    def _tick_ec(self, t: float, snap: MetricsSnapshot) -> None:
        t_wall = _time.perf_counter()
        budget = self.sched_cfg.core_budget or self.cluster.total_cores
        alloc = allocate(snap, self.sched_cfg, budget=budget)
        prev = self._current_matrix()
        k = list(alloc.k)
        pending = {g for q in self.pending_adds.values() for g in q}
        frozen = {gid for gid, ex in enumerate(self.executors)
                  if self._ec_busy(ex)} | pending
        for gid in frozen:
            k[gid] = prev.total(gid)
        if sum(k) > budget:
            return  # frozen executors exceed the budget this tick; retry next tick
        eff_snap = snap
        if frozen:
            eff_snap = MetricsSnapshot(snap.source_rate_tps, snap.arrival_rates,
                                       snap.service_rates, snap.state_bytes,
                                       list(snap.data_rates), snap.cores, snap.measured)
            for gid in frozen:
                eff_snap.data_rates[gid] = 0.0  # keep frozen executors out of E(phi)
        outcome = assign_adaptive(k, prev, self.cluster,
                                  self.sched_cfg.intensity_threshold_bytes_per_s, eff_snap)
        cost = transition_cost(prev, outcome.matrix, snap.state_bytes)
        self.apply_assignment(outcome.matrix)
        for ex in self.executors:
            self._maybe_rebalance(t, ex)
        self.decision_log.append({
            "t": t, "policy": "ec", "k": list(k), "assigned": outcome.matrix.totals(),
            "phi": outcome.threshold_used, "attempts": outcome.attempts,
            "transition_bytes": cost, "overloaded": alloc.overloaded,
            "expected_latency_s": alloc.expected_latency_s,
            "elapsed_ms": (_time.perf_counter() - t_wall) * 1e3,
        })

    def apply_assignment(self, x_new: AssignmentMatrix) -> None:
        """Diff the target matrix against live tasks and add/remove cores."""
        if self.policy is PolicyKind.RESOURCE_CENTRIC:
            raise WrongPolicy("apply_assignment drives elastic executors")
        t = self.now
        for gid, ex in enumerate(self.executors):
            if self._ec_busy(ex):
                continue
            have: dict[int, list[int]] = {}
            for task_id in sorted(ex.tasks):
                if task_id in ex.draining:
                    continue
                have.setdefault(ex.tasks[task_id].node, []).append(task_id)
            want = {node: x_new.grid[node][gid] for node in range(x_new.node_count)}
            for node in sorted(set(have) | {n for n, c in want.items() if c > 0}):
                cur = have.get(node, [])
                target = want.get(node, 0)
                while len(cur) > target:
                    task_id = cur.pop()  # newest task on the node leaves first
                    moves = ex.start_remove_task(task_id, t)
                    if moves:
                        for mv in moves:
                            self._start_move(t, ex, mv)
                    else:
                        result = ex.try_finalize_removal(task_id, t)
                        if result is not None:
                            core, freed_now, _ = result
                            if freed_now:
                                self._release_core(t, core)
                            else:
                                self._parked_core_of(ex, core)
                for _ in range(target - len(cur)):
                    core = self.cores.acquire(node)
                    if core is None:
                        self.pending_adds.setdefault(node, []).append(gid)
                    else:
                        ex.add_task(core, t)

    def _maybe_rebalance(self, t: float, ex: ElasticExecutor) -> None:
        if self._ec_busy(ex) or len(ex.live_tasks()) < 2:
            return
        if ex.imbalance_factor() <= self.opts.imbalance_threshold:
            return
        for mv in ex.plan_rebalance_moves(self.opts.imbalance_threshold):
            self._start_move(t, ex, mv)

    def _start_move(self, t: float, ex: ElasticExecutor, move: ShardMove) -> None:
        label, src_node = ex.begin_move(move, t)
        if src_node == ex.local_node:
            pool = ex.pools[src_node]
            pool.push(label)
            if pool.idle:
                self._kick_pool(t, ex, pool)
        else:
            self._push(t + self.cost.network_latency_s, _EV_CONTROL,
                       (ex.exec_id, src_node), label)

    def execute_shard_move(self, gid: int, move: ShardMove) -> None:
        """Kick off one shard move on an executor (scenario/test surface)."""
        self._start_move(self.now, self.executors[gid], move)

    # -- resource-centric tick

    def _tick_rc(self, t: float, snap: MetricsSnapshot) -> None:
        t_wall = _time.perf_counter()
        if any(st.repartition is not None for st in self.rc_ops):
            return
        budget = self.sched_cfg.core_budget or self.cluster.total_cores
        snap = MetricsSnapshot(
            snap.source_rate_tps,
            [snap.source_rate_tps * self._op_amplification[j]
             for j in range(len(self.rc_ops))],
            snap.service_rates, snap.state_bytes, snap.data_rates,
            snap.cores, snap.measured)
        alloc = allocate(snap, self.sched_cfg, budget=budget)
        started = False
        for op_idx, st in enumerate(self.rc_ops):
            if t - st.last_resume_t < self.opts.rc_cooldown_s:
                continue
            current = len(st.workers)
            target = alloc.k[op_idx]
            delta = self._imbalance_rc(st)
            trigger = self._rc_trigger(op_idx, current, target, delta)
            if not trigger or started:
                continue
            free_total = sum(self.cores.free_count(n) for n in range(self.cluster.node_count))
            target = min(target, current + free_total)
            if target == current and delta <= self.opts.rc_trigger_imbalance:
                continue
            plan = self._rc_plan(t, st, target)
            self.rc_repartition(op_idx, plan["partition"], removed=plan["removed"])
            started = True
            self.decision_log.append({
                "t": t, "policy": "rc", "op": op_idx, "k": list(alloc.k),
                "workers": target, "delta": delta,
                "elapsed_ms": (_time.perf_counter() - t_wall) * 1e3,
            })

    def _imbalance_rc(self, st: _RcOp) -> float:
        loads = st.worker_loads()
        if not loads:
            return 1.0
        total = sum(loads.values())
        if total <= 0:
            return 1.0
        return max(loads.values()) * len(loads) / total

    def _rc_trigger(self, op_idx: int, current: int, target: int, delta: float) -> bool:
        """Debounced repartition trigger: hot imbalance acts immediately;
        an allocation drift must repeat the same target on consecutive
        ticks before it pays the global synchronization price (transient
        estimates otherwise keep the operator repartitioning forever)."""
        if delta > self.opts.rc_trigger_imbalance:
            self._rc_pending_trigger.pop(op_idx, None)
            return True
        if target == current:
            self._rc_pending_trigger.pop(op_idx, None)
            return False
        last_target, streak = self._rc_pending_trigger.get(op_idx, (None, 0))
        streak = streak + 1 if target == last_target else 1
        if streak >= self.opts.rc_debounce_ticks:
            self._rc_pending_trigger.pop(op_idx, None)
            return True
        self._rc_pending_trigger[op_idx] = (target, streak)
        return False

    def _rc_plan(self, t: float, st: _RcOp, target: int) -> dict:
        """New worker set and partition table for one operator."""
        partition = list(st.partition)
        removed: list[int] = []
        survivors = sorted(st.workers)
        if target > len(survivors):
            for _ in range(target - len(survivors)):
                node = max(range(self.cluster.node_count),
                           key=lambda n: (self.cores.free_count(n), -n))
                core = self.cores.acquire(node)
                if core is None:
                    break
                wid = st.next_wid
                st.next_wid += 1
                st.workers[wid] = _RcWorker(wid, node, core)
                self.rc_log.append({"t": t, "type": "rc_worker_added",
                                    "op": st.op_idx, "worker": wid, "node": node})
            survivors = sorted(st.workers)
        elif target < len(survivors):
            removed = survivors[target:]
            survivors = survivors[:target]
            loads = {w: 0.0 for w in survivors}
            for g, w in enumerate(partition):
                if w in loads:
                    loads[w] += st.shard_load[g]
            doomed = sorted((g for g in range(st.granularity) if partition[g] in removed),
                            key=lambda g: (-st.shard_load[g], g))
            for g in doomed:
                dst = min(survivors, key=lambda w: (loads[w], w))
                partition[g] = dst
                loads[dst] += st.shard_load[g]
        if len(survivors) >= 2:
            stats = ShardStats(list(st.shard_load),
                               [st.state_bytes_per_shard] * st.granularity)
            table = RoutingTable(st.granularity, partition)
            for mv in plan_rebalance(stats, table, self.opts.imbalance_threshold,
                                     task_ids=survivors):
                partition[mv.shard] = mv.dst_task
        return {"partition": partition, "removed": removed}

    def policy_tick(self) -> None:
        """Force one scheduling pass now (scenario/test surface)."""
        snap = self._snapshot()
        if self.policy is PolicyKind.EXECUTOR_CENTRIC:
            self._tick_ec(self.now, snap)
        elif self.policy is PolicyKind.RESOURCE_CENTRIC:
            self._tick_rc(self.now, snap)

    # ------------------------------------------------------------------
    # finalization and audits

    def _finalize(self, t_end: float) -> Trace:
        m = self.metrics
        protocol = self.rc_log[:]
        if self.policy is not PolicyKind.RESOURCE_CENTRIC:
            for ex in self.executors:
                protocol.extend(ex.protocol_log)
            protocol.sort(key=lambda rec: rec["t"])
        # bytes moved by intra-process shard moves; structurally zero
        intra_bytes = sum(rec.get("bytes", 0) for rec in protocol
                          if rec.get("type") == "resume" and rec.get("intra", False))
        mean_latency = (m.total_latency_sum / m.total_completions
                        if m.total_completions else 0.0)
        return Trace(
            policy=self.policy.value,
            seed=self.seed,
            duration_s=t_end,
            windows=list(self.windows),
            total_arrivals=m.total_arrivals,
            total_completions=m.total_completions,
            mean_latency_s=mean_latency,
            p99_latency_s=m.run_reservoir.quantile(0.99),
            total_migrated_bytes=m.total_migrated_bytes,
            total_sync_messages=m.total_sync_messages,
            total_remote_transfer_bytes=m.total_remote_transfer_bytes,
            intra_move_migrated_bytes=intra_bytes,
            order_violations=self.order_violations,
            latencies=list(self.latencies),
            protocol_log=protocol,
            decision_log=list(self.decision_log),
            conservation=self.audit_conservation(),
        )

    def audit_conservation(self) -> dict:
        """Tuples delivered to each operator = completed + still queued."""
        n_ops = len(self.topo.operators)
        queued = [0] * n_ops
        if self.policy is PolicyKind.RESOURCE_CENTRIC:
            for st in self.rc_ops:
                for worker in st.workers.values():
                    queued[st.op_idx] += worker.pool.backlog() + len(worker.pool.busy)
        else:
            for gid, ex in enumerate(self.executors):
                op_idx = self.topo.executor_ops[gid]
                for pool in ex.pools.values():
                    queued[op_idx] += pool.backlog() + len(pool.busy)
                for items in ex.hold_back.values():
                    queued[op_idx] += len(items)
        in_transit = [0] * n_ops
        for ev in self.heap:
            kind = ev[2]
            if kind == _EV_DELIVER:
                in_transit[self.topo.executor_ops[ev[3]]] += 1
            elif kind == _EV_POOL:
                ref = ev[3]
                if isinstance(ref, tuple) and ref and ref[0] == "rc":
                    in_transit[ref[1]] += 1
                else:
                    in_transit[self.topo.executor_ops[ref[0]]] += 1
            elif kind == _EV_RELEASE:
                gid = ev[3][0]
                in_transit[self.topo.executor_ops[gid]] += len(ev[4])
        report = {}
        for op_idx, op in enumerate(self.topo.operators):
            buffered = len(self._arrival_buffer) if op_idx in self._source_ops else 0
            report[op.id] = {
                "delivered": self.op_delivered[op_idx],
                "completed": self.op_completed[op_idx],
                "queued": queued[op_idx],
                "in_transit": in_transit[op_idx],
                "external_buffered": buffered,
            }
        return report

    def state_counter_audit(self) -> dict:
        """Final per-key state counters vs processed counts (exact match).

        Requires options.track_state_counts.
        """
        if self._key_counts is None:
            raise RuntimeError("enable track_state_counts to audit state counters")
        report = {}
        for op_idx, op in enumerate(self.topo.operators):
            mismatches = []
            counts = self._key_counts[op_idx]
            for key in range(self.workload.key_count):
                if self.policy is PolicyKind.RESOURCE_CENTRIC:
                    g = self._rc_key_shard[op_idx][key]
                    value = 0
                    for (o, _node), store in self.rc_stores.items():
                        if o == op_idx and g in store:
                            value += store[g].get(key) or 0
                else:
                    gid = self.topo.first_executor[op_idx] + self._key_exec[op_idx][key]
                    value = self.executors[gid].state_get(key) or 0
                if value != counts[key]:
                    mismatches.append((key, value, counts[key]))
            report[op.id] = mismatches
        return report
