"""Wire format, per-channel sequencing, and the depth sender/receiver state machines.

Every message is a 22-byte little-endian header followed by the payload::

    u8 channel | u8 msg_type | u32 seq | u32 frame_index | u64 timestamp_us | u32 payload_len

Sequence numbers count per channel. A ``.vds`` file is the DEPTH channel's
serialized messages back to back.
"""

from __future__ import annotations

import collections
import enum
import logging
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from voldepth import codec
from voldepth.codec import CodecState, DeltaPacket, DepthFrame, KeyframePacket, Packet
from voldepth.errors import DecodeError, DesyncError, FormatError, ParameterError
from voldepth.payloads import (
    AnnotationEvent,
    PoseSample,
    decode_annotation,
    decode_pose,
    encode_annotation,
    encode_pose,
)

log = logging.getLogger(__name__)

HEADER = struct.Struct("<BBIIQI")
HEADER_SIZE = HEADER.size
assert HEADER_SIZE == 22


class ChannelKind(enum.IntEnum):
    DEPTH = 0
    COLOR = 1
    POSE = 2
    ANNOTATION = 3
    CONTROL = 4


class MsgType(enum.IntEnum):
    KEYFRAME = 0
    DELTA = 1
    COLOR = 2
    POSE = 3
    ANNOTATION = 4
    KEYFRAME_REQUEST = 5


def _maybe_enum(enum_cls, value: int):
    try:
        return enum_cls(value)
    except ValueError:
        return value


@dataclass(frozen=True)
class WireMessage:
    """One framed message. Unknown channel or type codes are kept as ints."""

    channel: int
    msg_type: int
    seq: int
    frame_index: int
    timestamp_us: int
    payload: bytes = b""

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    @property
    def wire_size(self) -> int:
        return HEADER_SIZE + len(self.payload)


def serialize(msg: WireMessage) -> bytes:
    try:
        header = HEADER.pack(msg.channel, msg.msg_type, msg.seq, msg.frame_index, msg.timestamp_us, len(msg.payload))
    except struct.error as exc:
        raise FormatError(f"header field out of range: {exc}") from exc
    return header + msg.payload


def parse_from(buf: bytes, offset: int = 0) -> tuple[WireMessage, int]:
    """Parse the message starting at ``offset``; return it and the next offset."""
    if len(buf) - offset < HEADER_SIZE:
        raise FormatError(f"need {HEADER_SIZE} header bytes, have {len(buf) - offset}")
    channel, msg_type, seq, frame_index, ts, length = HEADER.unpack_from(buf, offset)
    end = offset + HEADER_SIZE + length
    if end > len(buf):
        raise FormatError(f"payload_len {length} runs past the end of the buffer")
    msg = WireMessage(
        _maybe_enum(ChannelKind, channel),
        _maybe_enum(MsgType, msg_type),
        seq,
        frame_index,
        ts,
        bytes(buf[offset + HEADER_SIZE : end]),
    )
    return msg, end


def parse(buf: bytes) -> WireMessage:
    """Parse exactly one message; extra bytes are a length mismatch."""
    msg, end = parse_from(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} bytes beyond the declared payload")
    return msg


def iter_messages(buf: bytes) -> Iterator[WireMessage]:
    offset = 0
    while offset < len(buf):
        msg, offset = parse_from(buf, offset)
        yield msg


def write_vds(path: str | Path, messages: Iterable[WireMessage]) -> int:
    data = b"".join(serialize(m) for m in messages)
    Path(path).write_bytes(data)
    return len(data)


def read_vds(path: str | Path) -> list[WireMessage]:
    return list(iter_messages(Path(path).read_bytes()))


# ---- depth packets <-> messages ----


def packet_to_message(packet: Packet, seq: int) -> WireMessage:
    kind = MsgType.KEYFRAME if isinstance(packet, KeyframePacket) else MsgType.DELTA
    return WireMessage(ChannelKind.DEPTH, kind, seq, packet.frame_index, packet.timestamp_us, packet.compressed_payload)


def message_to_packet(msg: WireMessage) -> Packet:
    if msg.msg_type == MsgType.KEYFRAME:
        return KeyframePacket(msg.frame_index, msg.timestamp_us, msg.payload)
    if msg.msg_type == MsgType.DELTA:
        if msg.frame_index == 0:
            raise FormatError("delta message for frame 0 has no base frame")
        return DeltaPacket(msg.frame_index, msg.frame_index - 1, msg.timestamp_us, None, msg.payload)
    raise FormatError(f"message type {msg.msg_type} is not a depth packet")


def pose_message(sample: PoseSample, seq: int, frame_index: int = 0) -> WireMessage:
    return WireMessage(ChannelKind.POSE, MsgType.POSE, seq, frame_index, sample.timestamp_us, encode_pose(sample))


def annotation_message(event: AnnotationEvent, seq: int, frame_index: int = 0) -> WireMessage:
    return WireMessage(
        ChannelKind.ANNOTATION, MsgType.ANNOTATION, seq, frame_index, event.timestamp_us, encode_annotation(event)
    )


def keyframe_request(seq: int, frame_index: int, timestamp_us: int) -> WireMessage:
    return WireMessage(ChannelKind.CONTROL, MsgType.KEYFRAME_REQUEST, seq, frame_index, timestamp_us)


# ---- color stand-in ----


@dataclass(frozen=True)
class ColorStub:
    """Opaque color-video load at a fixed bitrate.

    Payload sizes follow the exact cumulative budget, so any run of ``fps``
    consecutive frames carries ``bitrate_bps / 8`` bytes to within one byte.
    """

    bitrate_bps: int = 1_900_000
    fps: int = 30
    label: str = "1920x1080"
    seed: int = 0

    def payload_size(self, k: int) -> int:
        per = self.bitrate_bps
        div = 8 * self.fps
        return (k + 1) * per // div - k * per // div

    def payload(self, k: int) -> bytes:
        return random.Random(self.seed * 1_000_003 + k).randbytes(self.payload_size(k))


# ---- sender ----


@dataclass
class SenderState:
    """Camera-side state: paces depth and color, honours keyframe requests."""

    source: Iterator[DepthFrame]
    codec: CodecState
    fps: int = codec.DEFAULT_FPS
    color: ColorStub | None = None
    start_us: int = 0
    depth_ticks: int = 0
    color_ticks: int = 0
    finished: bool = False
    seqs: dict = field(default_factory=lambda: collections.defaultdict(int))
    recent_depth: collections.deque = field(default_factory=collections.deque)
    keyframes_sent: int = 0
    requests_received: int = 0

    @classmethod
    def for_frames(cls, frames: Iterable[DepthFrame], width: int, height: int,
                   policy: codec.ChangePolicy | None = None, **kw) -> "SenderState":
        state = CodecState(width, height, policy or codec.ChangePolicy())
        return cls(source=iter(frames), codec=state, **kw)

    def next_seq(self, channel: ChannelKind) -> int:
        seq = self.seqs[channel]
        self.seqs[channel] = (seq + 1) & 0xFFFFFFFF
        return seq

    def depth_due_us(self) -> int:
        return self.start_us + self.depth_ticks * 1_000_000 // self.fps


def sender_ingest(state: SenderState, msg: WireMessage) -> None:
    """Handle a CONTROL message coming back from a receiver."""
    if msg.channel == ChannelKind.CONTROL and msg.msg_type == MsgType.KEYFRAME_REQUEST:
        state.requests_received += 1
        state.codec.request_keyframe()


def sender_tick(state: SenderState, now_us: int) -> list[WireMessage]:
    """Messages to send at ``now_us``: at most one depth and one color frame.

    A depth frame goes out once its tick is due and fewer than ``fps``
    depth messages were sent in the preceding second. When the source is
    exhausted the sender finishes and emits nothing more.
    """
    if state.finished:
        return []
    out: list[WireMessage] = []
    recent = state.recent_depth
    while recent and recent[0] <= now_us - 1_000_000:
        recent.popleft()
    if now_us >= state.depth_due_us() and len(recent) < state.fps:
        frame = next(state.source, None)
        if frame is None:
            state.finished = True
            return []
        frame = DepthFrame(frame.width, frame.height, frame.frame_index, now_us, frame.depth)
        packet = codec.encode_frame(state.codec, frame)
        if isinstance(packet, KeyframePacket):
            state.keyframes_sent += 1
        out.append(packet_to_message(packet, state.next_seq(ChannelKind.DEPTH)))
        recent.append(now_us)
        state.depth_ticks += 1
    stub = state.color
    if stub is not None and now_us >= state.start_us + state.color_ticks * 1_000_000 // stub.fps:
        k = state.color_ticks
        out.append(WireMessage(ChannelKind.COLOR, MsgType.COLOR, state.next_seq(ChannelKind.COLOR), k, now_us,
                               stub.payload(k)))
        state.color_ticks += 1
    return out


# ---- receiver ----


@dataclass
class ReceiverEvent:
    kind: str  # "frame" | "pose" | "annotation" | "request" | "none"
    message: WireMessage | None = None
    frame: DepthFrame | None = None
    pose: PoseSample | None = None
    annotation: AnnotationEvent | None = None
    request: WireMessage | None = None


@dataclass
class ReceiverState:
    codec: CodecState
    awaiting_keyframe: bool = False
    next_seq_expected: dict = field(default_factory=dict)
    control_seq: int = 0
    frames_decoded: int = 0
    seq_gaps: int = 0
    decode_errors: int = 0

    @classmethod
    def for_geometry(cls, width: int = codec.DEFAULT_WIDTH, height: int = codec.DEFAULT_HEIGHT) -> "ReceiverState":
        return cls(CodecState(width, height))


def _request(state: ReceiverState, msg: WireMessage) -> ReceiverEvent:
    if state.awaiting_keyframe:
        return ReceiverEvent("none", msg)
    state.awaiting_keyframe = True
    req = keyframe_request(state.control_seq, msg.frame_index, msg.timestamp_us)
    state.control_seq += 1
    return ReceiverEvent("request", msg, request=req)


def receiver_ingest(state: ReceiverState, msg: WireMessage) -> ReceiverEvent:
    """Dispatch one in-order message.

    Depth messages drive the decoder. A delta that does not apply, or any
    corrupt depth payload, yields a single keyframe request; further
    requests are suppressed until a keyframe decodes.
    """
    expected = state.next_seq_expected.get(msg.channel)
    if expected is not None and msg.seq != expected:
        state.seq_gaps += 1
        log.warning("channel %s: seq %d, expected %d", msg.channel, msg.seq, expected)
    state.next_seq_expected[msg.channel] = (msg.seq + 1) & 0xFFFFFFFF

    if msg.channel == ChannelKind.DEPTH:
        try:
            frame = codec.decode_packet(state.codec, message_to_packet(msg))
        except DesyncError:
            return _request(state, msg)
        except (DecodeError, FormatError) as exc:
            state.decode_errors += 1
            log.warning("depth frame %d undecodable: %s", msg.frame_index, exc)
            return _request(state, msg)
        if msg.msg_type == MsgType.KEYFRAME:
            state.awaiting_keyframe = False
        state.frames_decoded += 1
        return ReceiverEvent("frame", msg, frame=frame)
    try:
        if msg.channel == ChannelKind.POSE and msg.msg_type == MsgType.POSE:
            return ReceiverEvent("pose", msg, pose=decode_pose(msg.payload, msg.timestamp_us))
        if msg.channel == ChannelKind.ANNOTATION and msg.msg_type == MsgType.ANNOTATION:
            return ReceiverEvent("annotation", msg, annotation=decode_annotation(msg.payload, msg.timestamp_us))
    except (FormatError, ParameterError) as exc:
        log.warning("dropping malformed %s message: %s", msg.channel, exc)
    return ReceiverEvent("none", msg)


def encode_stream(frames: Iterable[DepthFrame], width: int, height: int,
                  policy: codec.ChangePolicy | None = None) -> list[WireMessage]:
    """Encode frames straight to DEPTH messages, without pacing."""
    state = CodecState(width, height, policy or codec.ChangePolicy())
    return [packet_to_message(codec.encode_frame(state, f), seq) for seq, f in enumerate(frames)]


def decode_stream(messages: Iterable[WireMessage], width: int, height: int) -> list[DepthFrame]:
    """Decode DEPTH messages in order; any failure raises."""
    state = CodecState(width, height)
    return [codec.decode_packet(state, message_to_packet(m)) for m in messages if m.channel == ChannelKind.DEPTH]
