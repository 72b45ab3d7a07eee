"""Synthetic workload generation: zipf key popularity, Poisson arrivals,
periodic random permutation of key frequencies.

All randomness flows through a caller-supplied random.Random instance so
that a (config, seed) pair always produces the same stream.
"""

from __future__ import annotations

import csv
import random
from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import accumulate


@dataclass(frozen=True)
class WorkloadConfig:
    key_count: int = 10_000
    skew: float = 0.5
    payload_bytes: int = 128
    shuffles_per_minute: float = 0.0
    rate_trace: tuple[tuple[float, float], ...] = ()

    def validate(self) -> None:
        if self.key_count < 1:
            raise ValueError("key_count must be >= 1")
        if self.skew < 0:
            raise ValueError("skew must be >= 0")
        if self.payload_bytes < 0:
            raise ValueError("payload_bytes must be >= 0")
        if self.shuffles_per_minute < 0:
            raise ValueError("shuffles_per_minute must be >= 0")


def zipf_frequencies(key_count: int, skew: float) -> list[float]:
    """Probability of each key rank i = 1..K, p_i proportional to i**-skew."""
    if key_count < 1:
        raise ValueError("key_count must be >= 1")
    if skew < 0:
        raise ValueError("skew must be >= 0")
    weights = [float(i) ** -skew for i in range(1, key_count + 1)]
    total = sum(weights)
    return [w / total for w in weights]


def shuffle_frequencies(freqs: list[float], rng: random.Random) -> list[float]:
    """Random permutation of the frequency-to-key mapping (Fisher-Yates).

    The multiset of frequencies is unchanged; only which key carries
    which frequency moves.
    """
    out = list(freqs)
    rng.shuffle(out)
    return out


def next_arrival(rng: random.Random, rate_tps: float, cumulative: list[float]) -> tuple[float, int]:
    """Sample one (inter-arrival seconds, key) pair.

    Inter-arrival is Exponential(rate); the key comes from inverse-CDF
    lookup on the cumulative frequency vector.
    """
    if rate_tps <= 0:
        raise ValueError("rate must be > 0")
    dt = rng.expovariate(rate_tps)
    key = bisect_right(cumulative, rng.random())
    if key >= len(cumulative):  # guard against u == 1.0 rounding
        key = len(cumulative) - 1
    return dt, key


def load_rate_trace(path) -> tuple[tuple[float, float], ...]:
    """Read a (time_s, rate_tps) CSV for replaying bursty arrival rates."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == "time_s":
                continue
            rows.append((float(row[0]), float(row[1])))
    rows.sort()
    return tuple(rows)


@dataclass
class ArrivalProcess:
    """Stateful arrival generator bound to one simulation run.

    Keys are the integers 0..key_count-1; key i's probability starts at
    zipf rank i+1 and is remapped by shuffle(). Rates are
    piecewise-constant when a rate trace is configured; exponential gaps
    are resampled at segment boundaries, which is exact by memorylessness.
    """

    config: WorkloadConfig
    base_rate_tps: float
    rng: random.Random
    freqs: list[float] = field(init=False)
    _cum: list[float] = field(init=False)
    _segment: int = field(init=False, default=0)

    def __post_init__(self):
        self.config.validate()
        if self.base_rate_tps <= 0 and not self.config.rate_trace:
            raise ValueError("arrival rate must be > 0")
        self.freqs = zipf_frequencies(self.config.key_count, self.config.skew)
        self._rebuild()

    def _rebuild(self) -> None:
        self._cum = list(accumulate(self.freqs))

    def rate_at(self, t: float) -> float:
        trace = self.config.rate_trace
        if not trace:
            return self.base_rate_tps
        while self._segment + 1 < len(trace) and trace[self._segment + 1][0] <= t:
            self._segment += 1
        return trace[self._segment][1]

    def next(self, now: float) -> tuple[float, int]:
        """Next (arrival time, key) strictly after `now`."""
        trace = self.config.rate_trace
        t = now
        while True:
            rate = self.rate_at(t)
            if rate <= 0:
                # skip to the next segment with positive rate
                nxt = self._next_boundary(t)
                if nxt is None:
                    raise ValueError("rate trace ends with rate 0; no further arrivals")
                t = nxt
                continue
            dt = self.rng.expovariate(rate)
            boundary = self._next_boundary(t) if trace else None
            if boundary is not None and t + dt > boundary:
                t = boundary
                continue
            key = bisect_right(self._cum, self.rng.random())
            if key >= len(self._cum):
                key = len(self._cum) - 1
            return t + dt, key

    def _next_boundary(self, t: float):
        trace = self.config.rate_trace
        for ts, _ in trace:
            if ts > t:
                return ts
        return None

    def shuffle(self) -> None:
        """Permute key frequencies in place (one workload shuffle event)."""
        self.freqs = shuffle_frequencies(self.freqs, self.rng)
        self._rebuild()

    def shuffle_times(self, duration_s: float) -> list[float]:
        """Shuffle instants for a run: first at half period, then periodic."""
        omega = self.config.shuffles_per_minute
        if omega <= 0:
            return []
        period = 60.0 / omega
        times = []
        t = period / 2.0
        while t < duration_s:
            times.append(t)
            t += period
        return times
