"""Elastic executor: shard routing, intra-executor load balancing and the
consistency-preserving shard move protocol.

An executor owns a fixed key slice, split into shards. It runs one task
per assigned CPU core; tasks on the same node live in one process and
share that process's state store, so moving a shard between co-located
tasks never copies state. Moves to another process drain the shard
through a labeling marker first: the marker is appended to the source
process's FIFO queue, so by the time it is dequeued every tuple of the
shard that was ahead of it has been processed, and only then does the
state transfer begin. Tuples arriving meanwhile wait in a hold-back
buffer at the receiver and are re-routed to the destination afterwards,
in arrival order.

The executor is a passive state machine; the simulation (or a test
harness) owns the clock, transports labels and released tuples between
processes, and calls back into `on_label` / `on_migration_done`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .topology import OperatorSpec, hash_key_to_shard


class ExecutorError(RuntimeError):
    pass


class NoTasks(ExecutorError):
    pass


class ShardInFlight(ExecutorError):
    pass


class UnknownTask(ExecutorError):
    pass


class CoreBusy(ExecutorError):
    pass


class LastTask(ExecutorError):
    pass


class NotOwner(ExecutorError):
    pass


class _Buffered:
    __slots__ = ()

    def __repr__(self):
        return "BUFFERED"


#: Returned by route() when the tuple went to a hold-back buffer.
BUFFERED = _Buffered()


@dataclass(frozen=True)
class TaskRef:
    task_id: int
    node: int
    local: bool


@dataclass
class ShardMove:
    shard: int
    src_task: int
    dst_task: int
    requires_migration: bool = False


@dataclass
class RoutingTable:
    """Two tiers: the shard hash parameter z plus the shard -> task map."""

    shard_count: int
    shard_to_task: list[int]
    paused: set[int] = field(default_factory=set)


@dataclass
class ShardStats:
    """Per-shard smoothed CPU-seconds per window and state size."""

    loads: list[float]
    state_bytes: list[int]


@dataclass
class LoadStats:
    task_workloads: dict[int, float]

    @property
    def delta(self) -> float:
        return imbalance(self.task_workloads.values())


def imbalance(workloads) -> float:
    """Max task workload over mean task workload; 1.0 when idle."""
    loads = list(workloads)
    if not loads:
        return 1.0
    total = sum(loads)
    if total <= 0:
        return 1.0
    return max(loads) * len(loads) / total


def plan_rebalance(stats: ShardStats, table: RoutingTable, theta: float,
                   task_ids=None, max_rounds: int | None = None) -> list[ShardMove]:
    """Shard moves that push the imbalance factor down to theta.

    Round by round: take the currently most and least loaded tasks and,
    among single-shard moves between them, apply the one that lowers the
    imbalance factor the most. Stops at theta, at a local minimum (no
    single move strictly helps), or after one round per shard. All ties
    break toward the lowest id so plans are reproducible.
    """
    if theta <= 1:
        raise ValueError("theta must be > 1")
    if task_ids is None:
        task_ids = sorted(set(table.shard_to_task))
    else:
        task_ids = sorted(task_ids)
    if len(task_ids) < 2:
        raise ValueError("rebalancing needs at least two tasks")

    loads = {t: 0.0 for t in task_ids}
    members: dict[int, list[int]] = {t: [] for t in task_ids}
    for shard, task in enumerate(table.shard_to_task):
        loads[task] += stats.loads[shard]
        members[task].append(shard)

    total = sum(loads.values())
    n = len(task_ids)
    if max_rounds is None:
        max_rounds = table.shard_count

    moves: list[ShardMove] = []
    for _ in range(max_rounds):
        if total <= 0:
            break
        current_max = max(loads.values())
        delta = current_max * n / total
        if delta <= theta:
            break
        src = min(t for t in task_ids if loads[t] == current_max)
        low = min(loads.values())
        dst = min(t for t in task_ids if loads[t] == low)
        if src == dst:
            break
        best_shard, best_max = -1, current_max
        others = max((loads[t] for t in task_ids if t != src and t != dst), default=0.0)
        for shard in sorted(members[src]):
            w = stats.loads[shard]
            new_max = max(loads[src] - w, loads[dst] + w, others)
            if new_max < best_max:  # strict, so the lowest shard id wins ties
                best_max, best_shard = new_max, shard
        if best_shard < 0:
            break  # local minimum: no single move strictly reduces the factor
        w = stats.loads[best_shard]
        loads[src] -= w
        loads[dst] += w
        members[src].remove(best_shard)
        members[dst].append(best_shard)
        moves.append(ShardMove(best_shard, src, dst))
    return moves


class StateStore:
    """Per-process key-value state, bucketed by shard for O(1) migration."""

    __slots__ = ("node", "shards")

    def __init__(self, node: int):
        self.node = node
        self.shards: dict[int, dict] = {}

    def apply(self, shard: int, key: int, update):
        bucket = self.shards.setdefault(shard, {})
        value = update(bucket.get(key))
        bucket[key] = value
        return value

    def get(self, shard: int, key: int):
        return self.shards.get(shard, {}).get(key)

    def extract_shard(self, shard: int) -> dict:
        return self.shards.pop(shard, {})

    def install_shard(self, shard: int, data: dict) -> None:
        if shard in self.shards:
            raise NotOwner(f"shard {shard} already present in process on node {self.node}")
        self.shards[shard] = data


# Queue items: data tuples are (shard, key, created_at, key_seq);
# labeling markers are (shard, ShardMove). Discriminated by length.
def is_label(item) -> bool:
    return len(item) == 2


class ProcessPool:
    """One process of an executor: shared FIFO work queue for its cores.

    Cores of the same process share work: an idle core serves the oldest
    queued tuple whose shard is not already in service, which keeps the
    pool behaving like one M/M/k queue while still processing each shard
    (and hence each key) strictly in arrival order. Blocked items park in
    a per-shard side queue and resume the moment the shard frees up.
    """

    __slots__ = ("node", "queue", "busy", "deferred", "cores", "idle",
                 "retire_debt", "parked_cores")

    def __init__(self, node: int, cores: int = 0):
        self.node = node
        self.queue: deque = deque()
        self.busy: set[int] = set()
        self.deferred: dict[int, deque] = {}
        self.cores = cores
        self.idle = cores
        self.retire_debt = 0
        self.parked_cores: list = []  # core handles awaiting retirement

    def push(self, item) -> None:
        self.queue.append(item)

    def take(self):
        """Next serviceable item in arrival order, or None."""
        q = self.queue
        while q:
            item = q.popleft()
            if item[0] in self.busy:
                self.deferred.setdefault(item[0], deque()).append(item)
                continue
            return item
        return None

    def after_completion(self, shard: int):
        """Release the shard lock and pick the next item to serve.

        Items deferred behind this shard are older than anything still
        queued, so they go first.
        """
        self.busy.discard(shard)
        d = self.deferred.get(shard)
        if d:
            item = d.popleft()
            if not d:
                del self.deferred[shard]
            return item
        return self.take()

    def backlog(self) -> int:
        return len(self.queue) + sum(len(d) for d in self.deferred.values())


class ElasticExecutor:
    """State machine for one executor of one operator."""

    def __init__(self, exec_id: int, op: OperatorSpec, local_node: int,
                 key_shard=None):
        self.exec_id = exec_id
        self.op = op
        self.z = op.shards_per_executor
        self.local_node = local_node
        self._key_shard = key_shard  # optional precomputed key -> shard map

        self.tasks: dict[int, TaskRef] = {}
        self.task_core: dict[int, tuple] = {}
        self._next_task = 0
        self.table = RoutingTable(self.z, [0] * self.z)
        self.hold_back: dict[int, deque] = {}
        self.in_flight: dict[int, ShardMove] = {}
        self.draining: set[int] = set()
        # the main process on the local node hosts the receiver/emitter and
        # the executor's state; it exists for the executor's whole life
        self.pools: dict[int, ProcessPool] = {local_node: ProcessPool(local_node)}
        self.stores: dict[int, StateStore] = {local_node: StateStore(local_node)}
        self.shard_state_node = [local_node] * self.z
        self.shard_state_bytes = [op.shard_state_bytes] * self.z
        self.shard_cpu_window = [0.0] * self.z
        self.shard_load = [0.0] * self.z
        self.protocol_log: list[dict] = []
        self.outstanding = 0  # delivered-not-completed tuples, transit included

    # -- logging ---------------------------------------------------------

    def _log(self, now: float, kind: str, **fields) -> None:
        rec = {"t": now, "type": kind, "executor": self.exec_id}
        rec.update(fields)
        self.protocol_log.append(rec)

    # -- topology of the executor ----------------------------------------

    def shard_of(self, key: int) -> int:
        if self._key_shard is not None:
            return self._key_shard[key]
        return hash_key_to_shard(key, self.z)

    def task_list(self) -> list[int]:
        return sorted(self.tasks)

    def live_tasks(self) -> list[int]:
        return sorted(t for t in self.tasks if t not in self.draining)

    def shards_of_task(self, task_id: int) -> list[int]:
        return [s for s, t in enumerate(self.table.shard_to_task) if t == task_id]

    def add_task(self, core: tuple, now: float = 0.0) -> TaskRef:
        """Create a task on the given (node, core) handle.

        The first task on a remote node creates a remote process there.
        Shards flow to the new task through a follow-up rebalance.
        """
        if core in self.task_core.values():
            raise CoreBusy(f"core {core} already owned by executor {self.exec_id}")
        node = core[0]
        task_id = self._next_task
        self._next_task += 1
        ref = TaskRef(task_id, node, node == self.local_node)
        self.tasks[task_id] = ref
        self.task_core[task_id] = core
        if node not in self.pools:
            self.pools[node] = ProcessPool(node)
            self.stores[node] = StateStore(node)
            self._log(now, "process_created", node=node)
        pool = self.pools[node]
        pool.cores += 1
        pool.idle += 1
        self._log(now, "task_added", task=task_id, node=node)
        return ref

    def seed_shards(self, task_id: int) -> None:
        """Point every shard at one task (initial single-task layout)."""
        if task_id not in self.tasks:
            raise UnknownTask(str(task_id))
        self.table.shard_to_task = [task_id] * self.z
        node = self.tasks[task_id].node
        self.shard_state_node = [node] * self.z

    # -- routing -----------------------------------------------------------

    def route(self, key: int):
        """Task id for a key's shard, or BUFFERED while the shard is paused."""
        if not self.tasks:
            raise NoTasks(f"executor {self.exec_id} has no tasks")
        shard = self.shard_of(key)
        if shard in self.table.paused:
            return BUFFERED
        return self.table.shard_to_task[shard]

    def deliver(self, item):
        """Route a queue item; returns the target node or BUFFERED."""
        if not self.tasks:
            raise NoTasks(f"executor {self.exec_id} has no tasks")
        shard = item[0]
        if shard in self.table.paused:
            self.hold_back[shard].append(item)
            return BUFFERED
        return self.tasks[self.table.shard_to_task[shard]].node

    # -- load statistics ---------------------------------------------------

    def record_cpu(self, shard: int, seconds: float) -> None:
        self.shard_cpu_window[shard] += seconds

    def roll_window(self, alpha: float = 0.5) -> None:
        """Fold the window's CPU seconds into the per-shard EWMA."""
        load = self.shard_load
        window = self.shard_cpu_window
        for s in range(self.z):
            load[s] = alpha * window[s] + (1.0 - alpha) * load[s]
            window[s] = 0.0

    def task_loads(self) -> dict[int, float]:
        loads = {t: 0.0 for t in self.tasks}
        for shard, task in enumerate(self.table.shard_to_task):
            loads[task] += self.shard_load[shard]
        return loads

    def imbalance_factor(self) -> float:
        loads = self.task_loads()
        if not loads:
            return 1.0
        return imbalance(loads.values())

    def shard_stats(self) -> ShardStats:
        return ShardStats(list(self.shard_load), list(self.shard_state_bytes))

    def state_bytes_total(self) -> int:
        return sum(self.shard_state_bytes)

    # -- rebalancing -------------------------------------------------------

    def plan_rebalance_moves(self, theta: float) -> list[ShardMove]:
        moves = plan_rebalance(self.shard_stats(), self.table, theta,
                               task_ids=self.live_tasks())
        for mv in moves:
            mv.requires_migration = (self.tasks[mv.src_task].node
                                     != self.tasks[mv.dst_task].node)
        return moves

    def plan_drain(self, task_id: int) -> list[ShardMove]:
        """First-fit-decreasing spread of one task's shards over survivors."""
        survivors = [t for t in self.live_tasks() if t != task_id]
        if not survivors:
            raise LastTask(f"executor {self.exec_id} cannot drop its only live task")
        loads = {t: ld for t, ld in self.task_loads().items() if t in survivors}
        shards = sorted(self.shards_of_task(task_id),
                        key=lambda s: (-self.shard_load[s], s))
        moves = []
        for shard in shards:
            dst = min(survivors, key=lambda t: (loads[t], t))
            loads[dst] += self.shard_load[shard]
            moves.append(ShardMove(shard, task_id, dst,
                                   self.tasks[task_id].node != self.tasks[dst].node))
        return moves

    # -- the shard move protocol -------------------------------------------

    def begin_move(self, move: ShardMove, now: float):
        """Pause the shard and produce the labeling marker.

        Returns (label item, source node); the caller appends the label
        to the source process's queue, after anything already in flight
        to it.
        """
        shard = move.shard
        if not (0 <= shard < self.z):
            raise ValueError(f"shard {shard} out of range")
        if shard in self.in_flight:
            raise ShardInFlight(f"shard {shard} already moving")
        if move.src_task not in self.tasks or move.dst_task not in self.tasks:
            raise UnknownTask(f"move {move} names a task this executor does not run")
        if self.table.shard_to_task[shard] != move.src_task:
            raise UnknownTask(f"shard {shard} is not on task {move.src_task}")
        if move.src_task == move.dst_task:
            raise ValueError("move source and destination must differ")
        src_node = self.tasks[move.src_task].node
        dst_node = self.tasks[move.dst_task].node
        move.requires_migration = src_node != dst_node
        self.in_flight[shard] = move
        self.table.paused.add(shard)
        self.hold_back[shard] = deque()
        self._log(now, "pause", shard=shard, src=move.src_task, dst=move.dst_task)
        self._log(now, "label_enqueued", shard=shard, src=move.src_task)
        return (shard, move), src_node

    def on_label(self, move: ShardMove, now: float):
        """The labeling marker reached the head of the source queue.

        Every tuple of the shard that was pending ahead of it has now
        been processed. Either hand back ('migrate', bytes, src, dst) for
        the caller to simulate the transfer, or finish a same-process
        move immediately: ('done', released hold-back items).
        """
        self._log(now, "label_processed", shard=move.shard, src=move.src_task)
        if move.requires_migration:
            src = self.tasks[move.src_task].node
            dst = self.tasks[move.dst_task].node
            nbytes = self.shard_state_bytes[move.shard]
            self._log(now, "migrate_start", shard=move.shard, src=src, dst=dst,
                      bytes=nbytes)
            return ("migrate", nbytes, src, dst)
        return ("done", self._finish_move(move, now, migrated=0))

    def on_migration_done(self, move: ShardMove, now: float):
        """State bytes have landed in the destination process."""
        shard = move.shard
        src = self.tasks[move.src_task].node
        dst = self.tasks[move.dst_task].node
        data = self.stores[src].extract_shard(shard)
        self.stores[dst].install_shard(shard, data)
        self.shard_state_node[shard] = dst
        self._log(now, "migrate_done", shard=shard, src=src, dst=dst,
                  bytes=self.shard_state_bytes[shard])
        return self._finish_move(move, now, migrated=self.shard_state_bytes[shard])

    def _finish_move(self, move: ShardMove, now: float, migrated: int):
        shard = move.shard
        self.table.shard_to_task[shard] = move.dst_task
        self.table.paused.discard(shard)
        del self.in_flight[shard]
        released = self.hold_back.pop(shard, deque())
        self._log(now, "map_updated", shard=shard, dst=move.dst_task)
        self._log(now, "resume", shard=shard, dst=move.dst_task,
                  released=len(released), bytes=migrated,
                  intra=not move.requires_migration)
        return released

    # -- task removal --------------------------------------------------------

    def start_remove_task(self, task_id: int, now: float = 0.0) -> list[ShardMove]:
        """Mark a task draining and plan the moves that will empty it."""
        if task_id not in self.tasks:
            raise UnknownTask(str(task_id))
        if len(self.live_tasks()) < 2:
            raise LastTask(f"executor {self.exec_id} must keep one task")
        if task_id in self.draining:
            raise UnknownTask(f"task {task_id} is already draining")
        moves = self.plan_drain(task_id)
        self.draining.add(task_id)
        self._log(now, "task_draining", task=task_id, moves=len(moves))
        return moves

    def try_finalize_removal(self, task_id: int, now: float):
        """Destroy a drained task; returns (core handle, pool emptied flag).

        Only valid once the task is draining and owns no shards; returns
        None while shards are still moving away.
        """
        if task_id not in self.draining:
            return None
        if self.shards_of_task(task_id):
            return None
        if any(mv.src_task == task_id or mv.dst_task == task_id
               for mv in self.in_flight.values()):
            return None
        ref = self.tasks.pop(task_id)
        core = self.task_core.pop(task_id)
        self.draining.discard(task_id)
        pool = self.pools[ref.node]
        pool.cores -= 1
        if pool.idle > 0:
            pool.idle -= 1
            freed_now = True
        else:
            pool.retire_debt += 1
            freed_now = False
        destroyed = (ref.node != self.local_node
                     and not any(t.node == ref.node for t in self.tasks.values()))
        if destroyed:
            # the remote process drained with the task; main process persists
            assert not self.stores[ref.node].shards, "destroying a process holding state"
            del self.pools[ref.node]
            del self.stores[ref.node]
            self._log(now, "process_destroyed", node=ref.node)
        self._log(now, "task_removed", task=task_id, node=ref.node)
        return core, freed_now, destroyed

    # -- state access -------------------------------------------------------

    def state_apply(self, key: int, update, node: int | None = None,
                    shard: int | None = None):
        """Read-modify-write one key's state in its owning process.

        `node` asserts the caller's process; passing a process that does
        not hold the shard's state is a protocol bug and raises NotOwner.
        """
        if shard is None:
            shard = self.shard_of(key)
        owner = self.shard_state_node[shard]
        if node is not None and node != owner:
            raise NotOwner(f"shard {shard} state lives on node {owner}, not {node}")
        return self.stores[owner].apply(shard, key, update)

    def state_get(self, key: int, shard: int | None = None):
        if shard is None:
            shard = self.shard_of(key)
        return self.stores[self.shard_state_node[shard]].get(shard, key)
