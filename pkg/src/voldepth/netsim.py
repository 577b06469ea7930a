"""Deterministic discrete-event network simulator.

Links have a bandwidth cap with a single outbound FIFO queue, one-way
propagation latency, Gaussian jitter, and loss that shows up as delay:
each lost attempt costs one round trip before the retransmission, so every
message is delivered exactly once and in send order.

Time is integer microseconds throughout.
"""

from __future__ import annotations

import heapq
import itertools
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from voldepth.errors import ParameterError


@dataclass(frozen=True)
class LinkConfig:
    bandwidth_bps: int
    latency_ms: float = 0.0
    jitter_ms_stddev: float = 0.0
    loss_prob: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.bandwidth_bps <= 0:
            raise ParameterError("bandwidth_bps must be positive")
        if not 0.0 <= self.loss_prob < 1.0:
            raise ParameterError("loss_prob must lie in [0, 1)")
        if self.latency_ms < 0 or self.jitter_ms_stddev < 0:
            raise ParameterError("latency and jitter must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "LinkConfig":
        known = {"bandwidth_bps", "latency_ms", "jitter_ms_stddev", "loss_prob", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown link fields: {sorted(unknown)}")
        return cls(**d)

    @property
    def latency_us(self) -> int:
        return round(self.latency_ms * 1000)


def serialization_us(nbytes: int, bandwidth_bps: int) -> int:
    """Time to clock ``nbytes`` onto the link, rounded to the nearest microsecond."""
    return (8 * nbytes * 1_000_000 + bandwidth_bps // 2) // bandwidth_bps


@dataclass
class Transmission:
    enqueue_us: int
    start_us: int
    done_us: int  # last bit on the wire
    retransmits: int
    jitter_us: int
    arrival_us: int

    @property
    def queue_delay_us(self) -> int:
        return self.start_us - self.enqueue_us


class Link:
    """One direction of one channel path; owns its queue and RNG."""

    def __init__(self, config: LinkConfig, name: str = "link", seed: Any = None) -> None:
        self.config = config
        self.name = name
        self.rng = random.Random(config.seed if seed is None else seed)
        self.busy_until_us = 0
        self.last_arrival_us = 0
        self.history: list[Transmission] = []

    def transmit(self, nbytes: int, now_us: int) -> Transmission:
        cfg = self.config
        start = max(now_us, self.busy_until_us)
        done = start + serialization_us(nbytes, cfg.bandwidth_bps)
        self.busy_until_us = done
        retransmits = 0
        if cfg.loss_prob > 0:
            while self.rng.random() < cfg.loss_prob:
                retransmits += 1
        jitter = 0
        if cfg.jitter_ms_stddev > 0:
            jitter = round(self.rng.gauss(0.0, cfg.jitter_ms_stddev * 1000))
        latency = cfg.latency_us
        propagation = max(0, latency + jitter)
        arrival = done + propagation + retransmits * 2 * latency
        # reliable-ordered: a message never overtakes its predecessor
        arrival = max(arrival, self.last_arrival_us)
        self.last_arrival_us = arrival
        tx = Transmission(now_us, start, done, retransmits, jitter, arrival)
        self.history.append(tx)
        return tx


def transmit(link: Link, msg, now_us: int) -> int:
    """Scheduled arrival time of ``msg`` (a WireMessage or a byte count)."""
    nbytes = msg if isinstance(msg, int) else msg.wire_size
    return link.transmit(nbytes, now_us).arrival_us


@dataclass(order=True)
class SimEvent:
    time_us: int
    ordinal: int
    action: str = field(compare=False)
    callback: Callable[[], None] | None = field(default=None, compare=False)


class Simulator:
    """Event queue ordered by (time_us, ordinal) plus the trace it produces."""

    def __init__(self) -> None:
        self.now_us = 0
        self._queue: list[SimEvent] = []
        self._ordinal = itertools.count()
        self.trace: list[dict] = []

    def schedule(self, time_us: int, action: str, callback: Callable[[], None] | None = None) -> SimEvent:
        if time_us < self.now_us:
            raise ValueError(f"cannot schedule at {time_us}, clock is at {self.now_us}")
        event = SimEvent(time_us, next(self._ordinal), action, callback)
        heapq.heappush(self._queue, event)
        return event

    def record(self, time_us: int, link: str, channel: int, seq: int, nbytes: int, event: str) -> None:
        self.trace.append(
            {"time_us": time_us, "link": link, "channel": int(channel), "seq": seq, "bytes": nbytes, "event": event}
        )

    def send(self, link: Link, msg, on_arrive: Callable[[Any], None] | None = None) -> Transmission:
        """Put ``msg`` on ``link`` now; ``on_arrive(msg)`` runs at delivery."""
        nbytes = msg.wire_size
        tx = link.transmit(nbytes, self.now_us)
        ch, seq = msg.channel, msg.seq
        self.record(self.now_us, link.name, ch, seq, nbytes, "send")

        self.schedule(tx.done_us, "send-complete",
                      lambda: self.record(tx.done_us, link.name, ch, seq, nbytes, "send-complete"))
        rtt = 2 * link.config.latency_us
        for i in range(1, tx.retransmits + 1):
            t = tx.done_us + i * rtt
            self.schedule(t, "retransmit",
                          lambda t=t: self.record(t, link.name, ch, seq, nbytes, "retransmit"))

        def arrive():
            self.record(tx.arrival_us, link.name, ch, seq, nbytes, "arrive")
            if on_arrive is not None:
                on_arrive(msg)

        self.schedule(tx.arrival_us, "arrive", arrive)
        return tx

    def step(self) -> bool:
        if not self._queue:
            return False
        event = heapq.heappop(self._queue)
        self.now_us = event.time_us
        if event.callback is not None:
            event.callback()
        return True

    def run(self, until_us: int | None = None) -> None:
        """Process events; stop before the first one later than ``until_us``."""
        while self._queue:
            if until_us is not None and self._queue[0].time_us > until_us:
                break
            self.step()

    @property
    def pending(self) -> int:
        return len(self._queue)


def trace_to_ndjson(trace: Iterable[dict]) -> str:
    return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in trace)


def trace_from_ndjson(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]
