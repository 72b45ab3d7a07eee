"""Model-based core scheduler.

Two stages run on every scheduling period:

1. `allocate` sizes each executor from a Jackson-network view of the
   pipeline, treating executor j with k_j cores as an M/M/k_j queue, and
   greedily grows the allocation until the modeled end-to-end latency
   meets the target.
2. `assign`/`assign_adaptive` turn the per-executor core counts into a
   concrete (node, executor) core matrix, minimizing the state bytes that
   must cross the network relative to the current matrix, and pinning
   data-intensive executors to their local node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class ZeroSourceRate(ValueError):
    pass


class InfeasibleAssignment(ValueError):
    pass


UNBOUNDED = math.inf


@dataclass(frozen=True)
class ClusterSpec:
    """Physical cluster: per-node CPU core counts."""

    node_cores: tuple[int, ...]

    def __post_init__(self):
        if len(self.node_cores) < 1:
            raise ValueError("cluster needs at least one node")
        if any(c < 1 for c in self.node_cores):
            raise ValueError("every node needs at least one core")

    @property
    def node_count(self) -> int:
        return len(self.node_cores)

    @property
    def total_cores(self) -> int:
        return sum(self.node_cores)

    @staticmethod
    def uniform(nodes: int, cores_per_node: int) -> "ClusterSpec":
        return ClusterSpec(tuple([cores_per_node] * nodes))


@dataclass(frozen=True)
class SchedulerConfig:
    latency_target_s: float = 0.05
    intensity_threshold_bytes_per_s: float = 512.0 * 1024.0  # base threshold, doubled on FAIL
    period_s: float = 1.0
    core_budget: int | None = None  # None -> cluster total

    def __post_init__(self):
        if self.latency_target_s <= 0:
            raise ValueError("latency_target_s must be > 0")
        if self.intensity_threshold_bytes_per_s <= 0:
            raise ValueError("intensity threshold must be > 0")
        if self.period_s <= 0:
            raise ValueError("period_s must be > 0")


@dataclass
class MetricsSnapshot:
    """Per-window measurements the scheduler consumes.

    Indexed by global executor id. service_rates are per core;
    data_rates are input+output bytes per second; measured marks
    executors whose service rate has been observed at least once.
    """

    source_rate_tps: float
    arrival_rates: list[float]
    service_rates: list[float]
    state_bytes: list[float]
    data_rates: list[float]
    cores: list[int]
    measured: list[bool] = field(default_factory=list)

    def __post_init__(self):
        m = len(self.arrival_rates)
        if not self.measured:
            self.measured = [True] * m
        for name in ("service_rates", "state_bytes", "data_rates", "cores", "measured"):
            if len(getattr(self, name)) != m:
                raise ValueError(f"{name} length mismatch")

    @property
    def executor_count(self) -> int:
        return len(self.arrival_rates)

    def intensity(self, j: int) -> float:
        k = max(1, self.cores[j])
        return self.data_rates[j] / k


def mmk_latency(arrival_rate: float, service_rate: float, cores: int) -> float:
    """Expected sojourn time of an M/M/k queue, or inf when unstable.

    Uses the Erlang-B recurrence to get the Erlang-C waiting probability
    without large factorials: B(0)=1, B(i) = a*B(i-1) / (i + a*B(i-1)),
    C = B(k) / (1 - rho*(1 - B(k))), E[T] = 1/mu + C/(k*mu - lambda).
    """
    if service_rate <= 0:
        raise ValueError("service_rate must be > 0")
    if cores < 1:
        raise ValueError("cores must be >= 1")
    if arrival_rate < 0:
        raise ValueError("arrival_rate must be >= 0")
    if arrival_rate == 0:
        return 1.0 / service_rate
    a = arrival_rate / service_rate
    if cores <= a:
        return UNBOUNDED
    b = 1.0
    for i in range(1, cores + 1):
        b = a * b / (i + a * b)
    rho = a / cores
    erlang_c = b / (1.0 - rho * (1.0 - b))
    return 1.0 / service_rate + erlang_c / (cores * service_rate - arrival_rate)


def pipeline_latency(k: list[int], snap: MetricsSnapshot) -> float:
    """Modeled end-to-end latency for allocation k: (1/l0) * sum_j l_j*E[T_j]."""
    if snap.source_rate_tps <= 0:
        raise ZeroSourceRate("source rate must be > 0")
    total = 0.0
    for j in range(snap.executor_count):
        lam = snap.arrival_rates[j]
        if lam <= 0:
            continue
        t_j = mmk_latency(lam, snap.service_rates[j], k[j])
        if t_j is UNBOUNDED or math.isinf(t_j):
            return UNBOUNDED
        total += lam * t_j
    return total / snap.source_rate_tps


@dataclass
class AllocationResult:
    """Outcome of `allocate`: cores per executor plus overload flag.

    overloaded means the budget ran out (or was infeasible at
    initialization) and k is the best-effort allocation found.
    """

    k: list[int]
    expected_latency_s: float
    overloaded: bool = False


def allocate(snap: MetricsSnapshot, cfg: SchedulerConfig,
             budget: int | None = None) -> AllocationResult:
    """Greedy minimal allocation meeting the latency target.

    Starts from k_j = floor(lambda_j/mu_j) + 1 (the stability minimum) and
    repeatedly adds one core where it lowers the modeled latency most,
    until the target is met or the budget is exhausted. Executors whose
    service rate has never been measured are held at one core.
    """
    m = snap.executor_count
    if budget is None:
        budget = cfg.core_budget
    if budget is None:
        raise ValueError("no core budget given")
    if budget < m:
        raise ValueError(f"budget {budget} below executor count {m}")

    k = []
    for j in range(m):
        if not snap.measured[j]:
            k.append(1)
            continue
        mu = snap.service_rates[j]
        if mu <= 0:
            raise ValueError(f"executor {j}: unmeasured service rate must be flagged")
        k.append(int(snap.arrival_rates[j] / mu) + 1)

    if sum(k) > budget:
        squeezed = _squeeze_to_budget(snap, k, budget)
        return AllocationResult(squeezed, pipeline_latency(squeezed, snap), overloaded=True)

    latency = pipeline_latency(k, snap)
    while latency > cfg.latency_target_s and sum(k) < budget:
        best_j, best_latency = -1, latency
        for j in range(m):
            if not snap.measured[j]:
                continue
            k[j] += 1
            cand = pipeline_latency(k, snap)
            k[j] -= 1
            if cand < best_latency:
                best_latency, best_j = cand, j
        if best_j < 0:
            break  # no single core helps; latency is already at its floor
        k[best_j] += 1
        latency = best_latency
    return AllocationResult(k, latency, overloaded=latency > cfg.latency_target_s)


def _squeeze_to_budget(snap: MetricsSnapshot, want: list[int], budget: int) -> list[int]:
    """Largest-remainder split of an infeasible budget, min one core each."""
    m = len(want)
    loads = [snap.arrival_rates[j] / snap.service_rates[j] if snap.measured[j] else 0.0
             for j in range(m)]
    total = sum(loads)
    if total <= 0:
        return [1] * m
    spare = budget - m
    quotas = [spare * ld / total for ld in loads]
    k = [1 + int(q) for q in quotas]
    remainders = sorted(range(m), key=lambda j: (-(quotas[j] - int(quotas[j])), j))
    leftover = budget - sum(k)
    for j in remainders[:leftover]:
        k[j] += 1
    return k


@dataclass
class AssignmentMatrix:
    """Cores per (node, executor) cell plus each executor's local node."""

    grid: list[list[int]]  # [node][executor]
    local_nodes: list[int]

    @staticmethod
    def empty(node_count: int, local_nodes: list[int]) -> "AssignmentMatrix":
        m = len(local_nodes)
        return AssignmentMatrix([[0] * m for _ in range(node_count)], list(local_nodes))

    @property
    def node_count(self) -> int:
        return len(self.grid)

    @property
    def executor_count(self) -> int:
        return len(self.local_nodes)

    def total(self, j: int) -> int:
        return sum(row[j] for row in self.grid)

    def totals(self) -> list[int]:
        return [self.total(j) for j in range(self.executor_count)]

    def node_load(self, i: int) -> int:
        return sum(self.grid[i])

    def copy(self) -> "AssignmentMatrix":
        return AssignmentMatrix([row[:] for row in self.grid], list(self.local_nodes))

    def __eq__(self, other) -> bool:
        return (isinstance(other, AssignmentMatrix)
                and self.grid == other.grid and self.local_nodes == other.local_nodes)


def transition_cost(prev: AssignmentMatrix, new: AssignmentMatrix,
                    state_bytes: list[float]) -> float:
    """Bytes of state that leave some node when moving from prev to new.

    Each executor's state is modeled as spread evenly over its cores, so
    node i holds s_j * x_ij / X_j of executor j; the cost counts only
    decreases per (node, executor) cell.
    """
    if prev.node_count != new.node_count or prev.executor_count != new.executor_count:
        raise ValueError("assignment matrices not conformable")
    cost = 0.0
    for j in range(prev.executor_count):
        s = state_bytes[j]
        if s == 0:
            continue
        old_total = prev.total(j)
        new_total = new.total(j)
        for i in range(prev.node_count):
            before = s * prev.grid[i][j] / old_total if old_total else 0.0
            after = s * new.grid[i][j] / new_total if new_total else 0.0
            if before > after:
                cost += before - after
    return cost


def marginal_costs(x: AssignmentMatrix, node: int, j: int,
                   state_bytes: list[float]) -> tuple[float, float]:
    """(allocation cost C+, deallocation cost C-) of one core of j on node.

    C+ = s_j (X_j - x_ij) / (X_j (X_j + 1));
    C- = s_j (X_j - x_ij) / (X_j (X_j - 1)), inf when X_j == 1.
    """
    total = x.total(j)
    if total < 1:
        raise ValueError("executor has no cores assigned")
    s = state_bytes[j]
    on_node = x.grid[node][j]
    c_plus = s * (total - on_node) / (total * (total + 1))
    if total == 1:
        return c_plus, UNBOUNDED
    c_minus = s * (total - on_node) / (total * (total - 1))
    return c_plus, c_minus


def check_assignment(x: AssignmentMatrix, k: list[int], cluster: ClusterSpec,
                     intensive: set[int]) -> list[str]:
    """Constraint violations of an assignment; empty when valid.

    (a) node capacity, (b) column sums match the allocation,
    (c) data-intensive executors fully on their local node.
    """
    problems = []
    for i in range(x.node_count):
        if x.node_load(i) > cluster.node_cores[i]:
            problems.append(f"node {i} over capacity")
    for j in range(x.executor_count):
        if x.total(j) != k[j]:
            problems.append(f"executor {j} has {x.total(j)} cores, wants {k[j]}")
    for j in intensive:
        home = x.local_nodes[j]
        for i in range(x.node_count):
            if i != home and x.grid[i][j] > 0:
                problems.append(f"data-intensive executor {j} has cores off node {home}")
                break
    return problems


def _free_cores(x: AssignmentMatrix, cluster: ClusterSpec) -> list[int]:
    return [cluster.node_cores[i] - x.node_load(i) for i in range(x.node_count)]


def assign(k: list[int], prev: AssignmentMatrix, cluster: ClusterSpec,
           intensity_threshold: float, snap: MetricsSnapshot):
    """One pass of the core assignment heuristic at a fixed threshold.

    Starting from the current matrix it (1) repatriates remote cores of
    data-intensive executors, (2) fills under-provisioned executors in
    descending intensity order, drawing each core from a free slot or the
    over-provisioned donor with cheapest marginal migration cost, and
    (3) releases leftover surplus cores. Returns None when no feasible
    transfer exists at this threshold (the caller should raise it).
    """
    m = len(k)
    if m != prev.executor_count:
        raise ValueError("allocation/assignment size mismatch")
    if sum(k) > cluster.total_cores:
        raise InfeasibleAssignment(f"allocation wants {sum(k)} of {cluster.total_cores} cores")

    x = prev.copy()
    s = snap.state_bytes
    intensive = {j for j in range(m) if snap.intensity(j) > intensity_threshold}

    def donors_on(node: int, exclude: int) -> list[int]:
        return [jj for jj in range(m)
                if jj != exclude and x.total(jj) > k[jj] and x.grid[node][jj] > 0]

    # (1) locality repatriation: intensive executors may not keep remote cores
    for j in sorted(intensive, key=lambda jj: (-snap.intensity(jj), jj)):
        home = x.local_nodes[j]
        for i in range(x.node_count):
            if i == home:
                continue
            while x.grid[i][j] > 0:
                free = _free_cores(x, cluster)
                if free[home] > 0:
                    x.grid[i][j] -= 1
                    x.grid[home][j] += 1
                    continue
                cands = donors_on(home, j)
                if not cands:
                    return None
                best = min(cands, key=lambda jj: (marginal_costs(x, home, jj, s)[1], jj))
                x.grid[home][best] -= 1
                x.grid[i][j] -= 1
                x.grid[home][j] += 1
                continue

    # (2) fill under-provisioned executors, most data-intensive first
    under = [j for j in range(m) if x.total(j) < k[j]]
    under.sort(key=lambda j: (-snap.intensity(j), j))
    for j in under:
        while x.total(j) < k[j]:
            if j in intensive:
                nodes = [x.local_nodes[j]]
            else:
                nodes = range(x.node_count)
            free = _free_cores(x, cluster)
            best = None  # (cost, node, donor or -1)
            for i in nodes:
                c_plus, _ = marginal_costs(x, i, j, s)
                if free[i] > 0:
                    cand = (c_plus, i, -1)
                    if best is None or cand < best:
                        best = cand
                for jj in donors_on(i, j):
                    _, c_minus = marginal_costs(x, i, jj, s)
                    cand = (c_plus + c_minus, i, jj)
                    if best is None or cand < best:
                        best = cand
            if best is None:
                return None
            _, i, donor = best
            if donor >= 0:
                x.grid[i][donor] -= 1
            x.grid[i][j] += 1

    # (3) release remaining surplus so column sums meet the allocation
    for j in range(m):
        while x.total(j) > k[j]:
            nodes = [i for i in range(x.node_count) if x.grid[i][j] > 0]
            i = min(nodes, key=lambda ii: (marginal_costs(x, ii, j, s)[1], ii))
            x.grid[i][j] -= 1
    return x


@dataclass
class AssignOutcome:
    matrix: AssignmentMatrix
    threshold_used: float
    attempts: int


def assign_adaptive(k: list[int], prev: AssignmentMatrix, cluster: ClusterSpec,
                    base_threshold: float, snap: MetricsSnapshot) -> AssignOutcome:
    """Run `assign`, doubling the intensity threshold until it succeeds.

    Terminates because once the threshold exceeds every executor's data
    intensity the locality constraint is vacuous, and with the total
    allocation within cluster capacity a feasible transfer always exists.
    """
    phi = base_threshold
    attempts = 0
    while True:
        attempts += 1
        x = assign(k, prev, cluster, phi, snap)
        if x is not None:
            return AssignOutcome(x, phi, attempts)
        phi *= 2.0
