"""Windowed measurement of scheduler inputs and benchmark outputs.

One accumulator per simulation. Counters reset at each window boundary
after the snapshot is taken; rates are smoothed across windows with an
EWMA so single noisy windows do not whipsaw the scheduler.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .scheduler import MetricsSnapshot


class InsufficientData(RuntimeError):
    pass


EWMA_ALPHA = 0.5
RESERVOIR_SIZE = 4096
MEASURED_MIN_TUPLES = 10  # below this a window says nothing about service rate


class Reservoir:
    """Fixed-size uniform sample of latencies (algorithm R)."""

    __slots__ = ("rng", "size", "samples", "seen")

    def __init__(self, rng: random.Random, size: int = RESERVOIR_SIZE):
        self.rng = rng
        self.size = size
        self.samples: list[float] = []
        self.seen = 0

    def add(self, value: float) -> None:
        self.seen += 1
        if len(self.samples) < self.size:
            self.samples.append(value)
        else:
            slot = self.rng.randrange(self.seen)
            if slot < self.size:
                self.samples[slot] = value

    def quantile(self, q: float) -> float:
        if not self.samples:
            return 0.0
        ordered = sorted(self.samples)
        idx = max(0, min(len(ordered) - 1, int(q * len(ordered) + 0.5) - 1))
        return ordered[idx]

    def reset(self) -> None:
        self.samples.clear()
        self.seen = 0


@dataclass
class WindowRow:
    """One exported trace row (the CSV schema of the bench runs)."""

    window_end_s: float
    policy: str
    throughput_tps: float
    mean_latency_s: float
    p99_latency_s: float
    migrated_bytes: int
    sync_messages: int
    remote_transfer_bytes: int


class WindowAccumulator:
    """Per-window counters for every executor plus run-wide totals."""

    def __init__(self, executor_count: int, window_s: float, rng: random.Random,
                 default_service_rates: list[float] | None = None):
        if window_s <= 0:
            raise ValueError("window length must be > 0")
        m = executor_count
        self.window_s = window_s
        self.m = m
        self.tuples_in = [0] * m
        self.tuples_out = [0] * m
        self.bytes_in = [0] * m
        self.bytes_out = [0] * m
        self.busy_s = [0.0] * m
        self.source_arrivals = 0
        self.completions = 0
        self.latency_sum = 0.0
        self.migrated_bytes = 0
        self.sync_messages = 0
        self.remote_transfer_bytes = 0
        self.reservoir = Reservoir(rng)
        # run totals (never reset)
        self.total_completions = 0
        self.total_latency_sum = 0.0
        self.total_migrated_bytes = 0
        self.total_sync_messages = 0
        self.total_remote_transfer_bytes = 0
        self.total_arrivals = 0
        self.run_reservoir = Reservoir(random.Random(rng.random()))
        # smoothed state carried across windows
        self._ewma_arrival = [0.0] * m
        self._ewma_data = [0.0] * m
        # service rate carries over idle windows; cold-start prior optional
        self._service = list(default_service_rates) if default_service_rates else [0.0] * m
        self._measured = [False] * m
        self._ewma_source = 0.0

    # -- recording -----------------------------------------------------------

    def record(self, event: tuple) -> None:
        """Generic entry point: (kind, *fields) tuples.

        Kinds: ("in", executor, bytes), ("out", executor, bytes),
        ("busy", executor, seconds), ("migrate", bytes),
        ("sync", count), ("remote", bytes), ("arrival",),
        ("complete", latency_s).
        """
        kind = event[0]
        if kind == "in":
            self.on_tuple_in(event[1], event[2])
        elif kind == "out":
            self.on_tuple_out(event[1], event[2])
        elif kind == "busy":
            self.on_busy(event[1], event[2])
        elif kind == "migrate":
            self.on_migration(event[1])
        elif kind == "sync":
            self.on_sync(event[1])
        elif kind == "remote":
            self.on_remote_bytes(event[1])
        elif kind == "arrival":
            self.on_arrival()
        elif kind == "complete":
            self.on_completion(event[1])
        else:
            raise ValueError(f"unknown metric event kind {kind!r}")

    def on_tuple_in(self, j: int, nbytes: int) -> None:
        self.tuples_in[j] += 1
        self.bytes_in[j] += nbytes

    def on_tuple_out(self, j: int, nbytes: int) -> None:
        self.tuples_out[j] += 1
        self.bytes_out[j] += nbytes

    def on_busy(self, j: int, seconds: float) -> None:
        self.busy_s[j] += seconds

    def on_migration(self, nbytes: int) -> None:
        self.migrated_bytes += nbytes
        self.total_migrated_bytes += nbytes

    def on_sync(self, count: int = 1) -> None:
        self.sync_messages += count
        self.total_sync_messages += count

    def on_remote_bytes(self, nbytes: int) -> None:
        self.remote_transfer_bytes += nbytes
        self.total_remote_transfer_bytes += nbytes

    def on_arrival(self) -> None:
        self.source_arrivals += 1
        self.total_arrivals += 1

    def on_completion(self, latency_s: float) -> None:
        self.completions += 1
        self.latency_sum += latency_s
        self.total_completions += 1
        self.total_latency_sum += latency_s
        self.reservoir.add(latency_s)
        self.run_reservoir.add(latency_s)

    # -- window roll -----------------------------------------------------------

    def snapshot(self, cores: list[int], state_bytes: list[float],
                 fold: bool = True) -> MetricsSnapshot:
        """Rates for the closing window, EWMA-smoothed with history.

        Service rate is tuples processed per busy CPU second; a window
        with too few processed tuples carries the previous estimate
        forward (cold-start executors stay unmeasured and are pinned at
        one core by the allocator). With fold=False the window's counters
        are not folded into the smoothed state: the caller deems the
        window contaminated (e.g. by a reconfiguration pause) and wants
        the last clean estimates instead.
        """
        w = self.window_s
        a = EWMA_ALPHA
        arrival, service, data = [], [], []
        for j in range(self.m):
            if fold:
                lam = self.tuples_in[j] / w
                self._ewma_arrival[j] = a * lam + (1 - a) * self._ewma_arrival[j]
                rate = self.bytes_in[j] / w + self.bytes_out[j] / w
                self._ewma_data[j] = a * rate + (1 - a) * self._ewma_data[j]
                if self.tuples_out[j] >= MEASURED_MIN_TUPLES and self.busy_s[j] > 0:
                    mu = self.tuples_out[j] / self.busy_s[j]
                    if self._measured[j]:
                        self._service[j] = a * mu + (1 - a) * self._service[j]
                    else:
                        self._service[j] = mu
                        self._measured[j] = True
            arrival.append(self._ewma_arrival[j])
            data.append(self._ewma_data[j])
            service.append(self._service[j])
        if fold:
            self._ewma_source = (a * (self.source_arrivals / w)
                                 + (1 - a) * self._ewma_source)
        return MetricsSnapshot(
            source_rate_tps=self._ewma_source,
            arrival_rates=arrival,
            service_rates=service,
            state_bytes=list(state_bytes),
            data_rates=data,
            cores=list(cores),
            measured=list(self._measured),
        )

    def window_row(self, window_end_s: float, policy: str) -> WindowRow:
        completions = self.completions
        mean_latency = self.latency_sum / completions if completions else 0.0
        return WindowRow(
            window_end_s=window_end_s,
            policy=policy,
            throughput_tps=completions / self.window_s,
            mean_latency_s=mean_latency,
            p99_latency_s=self.reservoir.quantile(0.99),
            migrated_bytes=self.migrated_bytes,
            sync_messages=self.sync_messages,
            remote_transfer_bytes=self.remote_transfer_bytes,
        )

    def reset_window(self) -> None:
        for j in range(self.m):
            self.tuples_in[j] = 0
            self.tuples_out[j] = 0
            self.bytes_in[j] = 0
            self.bytes_out[j] = 0
            self.busy_s[j] = 0.0
        self.source_arrivals = 0
        self.completions = 0
        self.latency_sum = 0.0
        self.migrated_bytes = 0
        self.sync_messages = 0
        self.remote_transfer_bytes = 0
        self.reservoir.reset()
