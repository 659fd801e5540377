"""Receiver-side adaptive jitter buffer emulation over packet timelines.

The emulator replays a flow's per-packet send/arrival events through an
adaptive play-out buffer: packets arriving early are held until their
scheduled play-out instant, packets arriving after it are forwarded
immediately and counted as late.  Late and lost packets together define
the effective packet-loss rate of the flow.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import deque
from dataclasses import dataclass
from itertools import pairwise
from typing import IO, Iterable

SEND_GRID_TOLERANCE_MS = 1e-6


class EmptyFlowError(ValueError):
    """Raised when a timeline carries no packets at all."""


class NotEnoughPacketsError(ValueError):
    """Raised when fewer than two received packets exist to compare."""


@dataclass(frozen=True)
class PacketEvent:
    """One packet of a flow; ``arrival_time_ms`` is None for a lost packet."""

    seq: int
    send_time_ms: float
    arrival_time_ms: float | None


@dataclass(frozen=True)
class PacketTimeline:
    """Ordered per-packet send/arrival events on a fixed packetization grid."""

    ptime_ms: float
    packets: tuple[PacketEvent, ...]

    def __post_init__(self) -> None:
        if self.ptime_ms <= 0:
            raise ValueError(f"ptime_ms must be positive, got {self.ptime_ms}")
        object.__setattr__(self, "packets", tuple(self.packets))
        for prev, cur in pairwise(self.packets):
            if cur.seq <= prev.seq:
                raise ValueError(f"seq not strictly increasing at seq={cur.seq}")
        if self.packets:
            first = self.packets[0]
            for pkt in self.packets:
                expected = first.send_time_ms + (pkt.seq - first.seq) * self.ptime_ms
                if abs(pkt.send_time_ms - expected) > SEND_GRID_TOLERANCE_MS:
                    raise ValueError(
                        f"send time off the ptime grid at seq={pkt.seq}: "
                        f"{pkt.send_time_ms} != {expected}"
                    )
                if pkt.arrival_time_ms is not None and pkt.arrival_time_ms < pkt.send_time_ms:
                    raise ValueError(f"arrival before send at seq={pkt.seq}")

    @property
    def tx_count(self) -> int:
        return len(self.packets)

    @property
    def received(self) -> tuple[PacketEvent, ...]:
        return tuple(p for p in self.packets if p.arrival_time_ms is not None)


@dataclass(frozen=True)
class JbeConfig:
    """Emulator knobs: initial play-out delay, jitter window, safety margin."""

    initial_delay_ms: float = 50.0
    window: int = 16
    safety_factor: float = 3.0

    def __post_init__(self) -> None:
        if self.initial_delay_ms <= 0:
            raise ValueError("initial_delay_ms must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.safety_factor <= 0:
            raise ValueError("safety_factor must be positive")


class PlayoutStatus(str, enum.Enum):
    BUFFERED = "buffered"
    ON_TIME = "on_time"
    LATE = "late"


@dataclass(frozen=True)
class PlayoutEvent:
    seq: int
    playout_time_ms: float
    status: PlayoutStatus


@dataclass(frozen=True)
class JbeResult:
    """Play-out schedule plus loss accounting for one emulated flow."""

    playout: tuple[PlayoutEvent, ...]
    lost_count: int
    late_count: int
    received_count: int
    p_loss_raw: float
    p_loss: float


def iter_transit_jitter(packets: Iterable[PacketEvent]) -> Iterable[tuple[PacketEvent, float | None]]:
    """Yield each received packet with its instantaneous transit jitter.

    Jitter is |delta(arrival) - delta(send)| between consecutive received
    packets, computed across loss gaps; the first received packet has no
    jitter sample and yields None.
    """
    prev: PacketEvent | None = None
    for pkt in packets:
        if pkt.arrival_time_ms is None:
            continue
        if prev is None:
            yield pkt, None
        else:
            delta_arrival = pkt.arrival_time_ms - prev.arrival_time_ms
            delta_send = pkt.send_time_ms - prev.send_time_ms
            yield pkt, abs(delta_arrival - delta_send)
        prev = pkt


def compute_transit_jitter(timeline: PacketTimeline) -> tuple[list[float], float, float]:
    """Per-packet instantaneous jitter plus its mean and maximum.

    Requires at least two received packets; lost packets are skipped, so a
    sample straddling a loss gap uses the surviving neighbours' deltas.
    """
    samples = [j for _, j in iter_transit_jitter(timeline.packets) if j is not None]
    if not samples:
        raise NotEnoughPacketsError(
            f"need >= 2 received packets, got {len(timeline.received)}"
        )
    return samples, sum(samples) / len(samples), max(samples)


def estimate_ploss(result: JbeResult) -> float:
    """Effective loss: (lost + late) / received after the buffer, clamped to [0, 1].

    A flow with nothing received counts as fully lost (1.0 by convention).
    """
    if result.received_count == 0:
        return 1.0
    raw = (result.lost_count + result.late_count) / result.received_count
    return min(1.0, raw)


def run_jbe(timeline: PacketTimeline, config: JbeConfig = JbeConfig()) -> JbeResult:
    """Replay a timeline through the adaptive play-out buffer.

    The play-out schedule is anchored at the first received packet, which
    plays ``initial_delay_ms`` after it arrives; later packets are scheduled
    on the send grid relative to that anchor plus an adaptive headroom of
    ``safety_factor`` times the mean instantaneous jitter of the previous
    ``window`` received packets.  With no jitter observed the play-out delay
    therefore stays at the initial delay.  A packet arriving at or before
    its scheduled instant is held until then; one arriving after it is
    forwarded immediately at its arrival time and counted late.  Held
    packets never play earlier than a previously held packet (single
    play-out head).
    """
    if not timeline.packets:
        raise EmptyFlowError("timeline has no packets")

    lost_count = 0
    late_count = 0
    playout: list[PlayoutEvent] = []
    window: deque[float] = deque(maxlen=config.window)
    window_sum = 0.0
    anchor: PacketEvent | None = None
    prev_received: PacketEvent | None = None
    last_held_playout = -math.inf

    for pkt in timeline.packets:
        if pkt.arrival_time_ms is None:
            lost_count += 1
            continue
        if anchor is None:
            anchor = pkt
        headroom = config.safety_factor * (window_sum / len(window)) if window else 0.0
        scheduled = (
            anchor.arrival_time_ms
            + config.initial_delay_ms
            + (pkt.send_time_ms - anchor.send_time_ms)
            + headroom
        )
        scheduled = max(scheduled, last_held_playout)
        if pkt.arrival_time_ms > scheduled:
            late_count += 1
            playout.append(PlayoutEvent(pkt.seq, pkt.arrival_time_ms, PlayoutStatus.LATE))
        else:
            status = (
                PlayoutStatus.ON_TIME
                if pkt.arrival_time_ms == scheduled
                else PlayoutStatus.BUFFERED
            )
            playout.append(PlayoutEvent(pkt.seq, scheduled, status))
            last_held_playout = scheduled
        if prev_received is not None:
            jitter = abs(
                (pkt.arrival_time_ms - prev_received.arrival_time_ms)
                - (pkt.send_time_ms - prev_received.send_time_ms)
            )
            if len(window) == window.maxlen:
                window_sum -= window[0]
            window.append(jitter)
            # Samples are non-negative, so keep the running sum from drifting
            # below zero through float cancellation.
            window_sum = max(window_sum + jitter, 0.0)
        prev_received = pkt

    received_count = len(playout)
    if received_count == 0:
        p_loss_raw = math.inf
        p_loss = 1.0
    else:
        p_loss_raw = (lost_count + late_count) / received_count
        p_loss = min(1.0, p_loss_raw)
    return JbeResult(
        playout=tuple(playout),
        lost_count=lost_count,
        late_count=late_count,
        received_count=received_count,
        p_loss_raw=p_loss_raw,
        p_loss=p_loss,
    )


TIMELINE_COLUMNS = ("seq", "send_time_ms", "arrival_time_ms")


def timeline_to_csv(timeline: PacketTimeline, stream: IO[str]) -> None:
    """Write a timeline as ``seq,send_time_ms,arrival_time_ms`` rows
    (empty arrival field = lost)."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(TIMELINE_COLUMNS)
    for pkt in timeline.packets:
        arrival = "" if pkt.arrival_time_ms is None else repr(pkt.arrival_time_ms)
        writer.writerow([pkt.seq, repr(pkt.send_time_ms), arrival])


def timeline_from_csv(stream: IO[str], ptime_ms: float | None = None) -> PacketTimeline:
    """Read a timeline written by :func:`timeline_to_csv`.

    When ``ptime_ms`` is omitted it is inferred from the first two rows;
    a single-packet file falls back to 20 ms.
    """
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(header) != TIMELINE_COLUMNS:
        found = "nothing" if header is None else ",".join(header)
        raise ValueError(f"bad timeline header: {found}; expected {','.join(TIMELINE_COLUMNS)}")
    packets = []
    for row in reader:
        if not row:
            continue
        seq, send, arrival = row
        packets.append(
            PacketEvent(
                seq=int(seq),
                send_time_ms=float(send),
                arrival_time_ms=None if arrival == "" else float(arrival),
            )
        )
    if ptime_ms is None:
        if len(packets) >= 2:
            a, b = packets[0], packets[1]
            ptime_ms = (b.send_time_ms - a.send_time_ms) / (b.seq - a.seq)
        else:
            ptime_ms = 20.0
    return PacketTimeline(ptime_ms=ptime_ms, packets=tuple(packets))
