"""Bandwidth, latency and timing accounting over traces and encoded streams.

Bitrates count whole wire messages, headers included.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from voldepth import codec
from voldepth.codec import ChangePolicy, CodecState, DepthFrame
from voldepth.transport import WireMessage

WINDOW_US = 1_000_000
STEP_US = 100_000


def message_records(messages: Iterable[WireMessage]) -> list[dict]:
    """Trace-shaped records for messages timestamped by their header clock."""
    return [
        {"time_us": m.timestamp_us, "channel": int(m.channel), "seq": m.seq, "bytes": m.wire_size, "event": "send"}
        for m in messages
    ]


def bitrate_windows(
    records: Iterable[dict],
    channel: int | None = None,
    *,
    link: str | None = None,
    event: str = "send",
    width_us: int = WINDOW_US,
    step_us: int = STEP_US,
) -> list[tuple[int, float]]:
    """Sliding-window bitrate as ``(window_start_us, bits_per_second)``.

    Windows are half-open ``[t, t + width_us)``, start at the first
    matching record and advance by ``step_us``. The last window is the
    one starting no later than ``last_time + step_us - width_us``, so a
    stream exactly N seconds long yields fully covered windows only; a
    stream shorter than one window yields a single window.
    """
    times, sizes = [], []
    for r in records:
        if r.get("event", "send") != event:
            continue
        if channel is not None and r["channel"] != int(channel):
            continue
        if link is not None and r.get("link") != link:
            continue
        times.append(r["time_us"])
        sizes.append(r["bytes"])
    if not times:
        return []
    order = np.argsort(np.asarray(times, dtype=np.int64), kind="stable")
    t = np.asarray(times, dtype=np.int64)[order]
    cum = np.concatenate([[0], np.cumsum(np.asarray(sizes, dtype=np.int64)[order])])
    t0, t_last = int(t[0]), int(t[-1])
    n_windows = max(1, (t_last + step_us - width_us - t0) // step_us + 1)
    starts = t0 + step_us * np.arange(n_windows, dtype=np.int64)
    lo = np.searchsorted(t, starts, side="left")
    hi = np.searchsorted(t, starts + width_us, side="left")
    scale = 8 * 1_000_000 / width_us
    return [(int(s), float((cum[h] - cum[l]) * scale)) for s, l, h in zip(starts, lo, hi)]


def latency_summary(latencies_us: Sequence[int]) -> dict:
    if not latencies_us:
        return {"count": 0}
    arr = np.asarray(latencies_us, dtype=np.float64)
    return {
        "count": int(arr.size),
        "min_us": int(arr.min()),
        "mean_us": round(float(arr.mean()), 3),
        "p50_us": round(float(np.percentile(arr, 50)), 3),
        "p95_us": round(float(np.percentile(arr, 95)), 3),
        "max_us": int(arr.max()),
    }


def link_latencies(trace: Iterable[dict]) -> dict[str, list[int]]:
    """Per-link send-to-arrive latency, matched on (link, channel, seq)."""
    sent: dict[tuple, int] = {}
    out: dict[str, list[int]] = {}
    for r in trace:
        key = (r["link"], r["channel"], r["seq"])
        if r["event"] == "send":
            sent[key] = r["time_us"]
        elif r["event"] == "arrive" and key in sent:
            out.setdefault(r["link"], []).append(r["time_us"] - sent.pop(key))
    return out


def queue_growth(queue_delays_us: Sequence[int], period_us: int) -> bool:
    """True when queueing delay keeps rising over the run.

    Compares the median delay in the second half of the sends with the
    first half; a rise of more than one frame period means the link cannot
    drain what the source offers.
    """
    n = len(queue_delays_us)
    if n < 4:
        return False
    early = statistics.median(queue_delays_us[: n // 2])
    late = statistics.median(queue_delays_us[n // 2 :])
    return late - early > period_us


@dataclass
class StreamMetrics:
    channel: int
    messages: int = 0
    bytes: int = 0
    max_window_bps: float = 0.0
    mean_bps: float = 0.0
    latency: dict = field(default_factory=dict)
    delivered_fps: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def stream_metrics(records: list[dict], channel: int, duration_s: float, link: str | None = None) -> StreamMetrics:
    sel = [r for r in records if r["channel"] == int(channel) and (link is None or r.get("link") == link)]
    sends = [r for r in sel if r["event"] == "send"]
    windows = bitrate_windows(sel, channel, link=link)
    total = sum(r["bytes"] for r in sends)
    lat = link_latencies(sel)
    all_lat = [v for k in sorted(lat) for v in lat[k]]
    return StreamMetrics(
        channel=int(channel),
        messages=len(sends),
        bytes=total,
        max_window_bps=max((bps for _, bps in windows), default=0.0),
        mean_bps=round(8 * total / duration_s, 3) if duration_s > 0 else 0.0,
        latency=latency_summary(all_lat),
    )


@dataclass
class BenchResult:
    frames: int
    encode_ms: list[float]
    decode_ms: list[float]
    compressed_bytes: int

    @property
    def mean_encode_ms(self) -> float:
        return statistics.fmean(self.encode_ms) if self.encode_ms else 0.0

    @property
    def mean_decode_ms(self) -> float:
        return statistics.fmean(self.decode_ms) if self.decode_ms else 0.0

    @property
    def max_encode_ms(self) -> float:
        return max(self.encode_ms, default=0.0)

    @property
    def max_decode_ms(self) -> float:
        return max(self.decode_ms, default=0.0)

    def summary(self) -> dict:
        return {
            "frames": self.frames,
            "mean_encode_ms": round(self.mean_encode_ms, 4),
            "max_encode_ms": round(self.max_encode_ms, 4),
            "mean_decode_ms": round(self.mean_decode_ms, 4),
            "max_decode_ms": round(self.max_decode_ms, 4),
            "mean_total_ms": round(self.mean_encode_ms + self.mean_decode_ms, 4),
            "compressed_bytes": self.compressed_bytes,
        }


def encode_bench(frames: Sequence[DepthFrame], policy: ChangePolicy | None = None) -> BenchResult:
    """Wall-clock encode and decode time of every frame, through the active backend."""
    if not frames:
        return BenchResult(0, [], [], 0)
    w, h = frames[0].width, frames[0].height
    enc = CodecState(w, h, policy or ChangePolicy())
    dec = CodecState(w, h)
    enc_ms, dec_ms, total = [], [], 0
    for frame in frames:
        t0 = time.perf_counter()
        packet = codec.encode_frame(enc, frame)
        t1 = time.perf_counter()
        codec.decode_packet(dec, packet)
        t2 = time.perf_counter()
        enc_ms.append((t1 - t0) * 1e3)
        dec_ms.append((t2 - t1) * 1e3)
        total += len(packet.compressed_payload)
    return BenchResult(len(frames), enc_ms, dec_ms, total)


def windows_to_csv(series: dict[str, list[tuple[int, float]]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["series", "window_start_us", "bps"])
    for name in sorted(series):
        for t, bps in series[name]:
            writer.writerow([name, t, f"{bps:.1f}"])
    return buf.getvalue()


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
