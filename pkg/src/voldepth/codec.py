"""Keyframe + changed-pixel delta coding of 16-bit depth streams.

A keyframe carries the whole depth image. A delta carries a row-major,
LSB-first change bitmask followed by the new values of the marked pixels
(little-endian u16, scan order). Both payloads are raw DEFLATE streams.

Encoder and decoder each keep a :class:`CodecState`; after every packet
their ``last_reconstructed`` frames are bit-identical.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from voldepth import deflate
from voldepth.errors import (
    DecodeError,
    DeflateError,
    DesyncError,
    DimensionError,
    ParameterError,
    SequencingError,
)

DEFAULT_WIDTH = 320
DEFAULT_HEIGHT = 288
DEFAULT_FPS = 30

_LE_U16 = np.dtype("<u2")


@dataclass(eq=False)
class DepthFrame:
    """One depth image in millimeters; 0 marks pixels with no return."""

    width: int
    height: int
    frame_index: int
    timestamp_us: int
    depth: np.ndarray

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise DimensionError(f"invalid geometry {self.width}x{self.height}")
        depth = np.asarray(self.depth)
        if depth.size != self.width * self.height:
            raise DimensionError(
                f"depth has {depth.size} values, expected {self.width}x{self.height}"
            )
        self.depth = np.ascontiguousarray(depth, dtype=np.uint16).reshape(self.height, self.width)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DepthFrame):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.frame_index == other.frame_index
            and self.timestamp_us == other.timestamp_us
            and np.array_equal(self.depth, other.depth)
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def to_bytes(self) -> bytes:
        """Row-major little-endian u16 samples."""
        return self.depth.astype(_LE_U16, copy=False).tobytes()

    def copy(self) -> "DepthFrame":
        return DepthFrame(self.width, self.height, self.frame_index, self.timestamp_us, self.depth.copy())


@dataclass(frozen=True)
class ChangePolicy:
    """When a pixel counts as changed, and how often to send keyframes.

    ``reference`` selects what a frame is compared against: ``"source"``
    (the previous input frame) or ``"reconstruction"`` (what the decoder
    currently shows, which caps drift at ``threshold_mm``). Identical when
    the threshold is 0.
    """

    threshold_mm: int = 0
    keyframe_interval_frames: int = DEFAULT_FPS
    reference: str = "source"

    def __post_init__(self) -> None:
        if self.threshold_mm < 0:
            raise ParameterError("threshold_mm must be non-negative")
        if self.keyframe_interval_frames < 1:
            raise ParameterError("keyframe_interval_frames must be >= 1")
        if self.reference not in ("source", "reconstruction"):
            raise ParameterError(f"unknown change reference {self.reference!r}")


@dataclass(frozen=True)
class KeyframePacket:
    frame_index: int
    timestamp_us: int
    compressed_payload: bytes


@dataclass(frozen=True)
class DeltaPacket:
    """Changed pixels relative to frame ``base_frame_index``.

    ``changed_count`` is None for packets rebuilt from the wire, where it
    is only known after inflating the mask.
    """

    frame_index: int
    base_frame_index: int
    timestamp_us: int
    changed_count: int | None
    compressed_payload: bytes


Packet = Union[KeyframePacket, DeltaPacket]


class FrameKind(enum.Enum):
    KEYFRAME = "keyframe"
    DELTA = "delta"


KEYFRAME = FrameKind.KEYFRAME
DELTA = FrameKind.DELTA


@dataclass
class CodecState:
    """Per-stream codec state; one owner at a time.

    ``last_source`` is encoder-only and tracks the previous input frame for
    source-referenced change detection.
    """

    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    policy: ChangePolicy = field(default_factory=ChangePolicy)
    last_reconstructed: DepthFrame | None = None
    last_source: DepthFrame | None = None
    frames_since_keyframe: int = 0
    keyframe_requested: bool = False

    def request_keyframe(self) -> None:
        self.keyframe_requested = True


def mask_nbytes(width: int, height: int) -> int:
    return (width * height + 7) // 8


def _check_geometry(frame: DepthFrame, width: int, height: int) -> None:
    if frame.width != width or frame.height != height:
        raise DimensionError(
            f"frame is {frame.width}x{frame.height}, stream is {width}x{height}"
        )


def _changed_pixels(prev: DepthFrame, cur: DepthFrame, threshold_mm: int) -> np.ndarray:
    _check_geometry(cur, prev.width, prev.height)
    diff = np.abs(cur.depth.astype(np.int32) - prev.depth.astype(np.int32))
    return (diff > threshold_mm).ravel()


def change_mask(prev: DepthFrame, cur: DepthFrame, threshold_mm: int = 0):
    """Pixels of ``cur`` differing from ``prev`` by more than ``threshold_mm``.

    Returns ``(bitmask, changed_values, change_fraction)`` where
    ``bitmask`` is the packed LSB-first mask bytes and ``changed_values``
    the u16 values of ``cur`` at set bits, in scan order.
    """
    changed = _changed_pixels(prev, cur, threshold_mm)
    bitmask = np.packbits(changed, bitorder="little").tobytes()
    values = cur.depth.ravel()[changed]
    return bitmask, values, int(np.count_nonzero(changed)) / changed.size


def encode_keyframe(frame: DepthFrame, state: CodecState | None = None) -> KeyframePacket:
    """Compress the full frame; with ``state``, also reset it to this keyframe."""
    if state is not None:
        _check_geometry(frame, state.width, state.height)
    packet = KeyframePacket(frame.frame_index, frame.timestamp_us, deflate.compress(frame.to_bytes()))
    if state is not None:
        state.last_reconstructed = frame.copy()
        state.last_source = frame.copy()
        state.frames_since_keyframe = 1
        state.keyframe_requested = False
    return packet


def encode_delta(state: CodecState, frame: DepthFrame) -> DeltaPacket:
    """Encode ``frame`` against the previous frame and advance ``state``.

    Raises:
        DimensionError: geometry differs from the stream.
        SequencingError: no prior frame, or ``frame`` does not directly
            follow it.
    """
    _check_geometry(frame, state.width, state.height)
    recon = state.last_reconstructed
    if recon is None:
        raise SequencingError("delta requested before any keyframe")
    if frame.frame_index != recon.frame_index + 1:
        raise SequencingError(
            f"frame {frame.frame_index} does not follow frame {recon.frame_index}"
        )
    reference = state.last_source
    if state.policy.reference == "reconstruction" or reference is None:
        reference = recon
    changed = _changed_pixels(reference, frame, state.policy.threshold_mm)
    values = frame.depth.ravel()[changed]
    payload = np.packbits(changed, bitorder="little").tobytes() + values.astype(_LE_U16).tobytes()

    new_depth = recon.depth.copy()
    new_depth.ravel()[changed] = values
    state.last_reconstructed = DepthFrame(frame.width, frame.height, frame.frame_index,
                                          frame.timestamp_us, new_depth)
    state.last_source = frame.copy()
    state.frames_since_keyframe += 1
    return DeltaPacket(
        frame.frame_index,
        frame.frame_index - 1,
        frame.timestamp_us,
        int(values.size),
        deflate.compress(payload),
    )


def schedule(state: CodecState) -> FrameKind:
    if (
        state.last_reconstructed is None
        or state.keyframe_requested
        or state.frames_since_keyframe >= state.policy.keyframe_interval_frames
    ):
        return KEYFRAME
    return DELTA


def encode_frame(state: CodecState, frame: DepthFrame) -> Packet:
    """Encode the next frame as whatever :func:`schedule` picks."""
    if schedule(state) is KEYFRAME:
        return encode_keyframe(frame, state)
    return encode_delta(state, frame)


def _inflate(payload: bytes) -> bytes:
    try:
        return deflate.decompress(payload)
    except DeflateError as exc:
        raise DecodeError(f"corrupt depth payload: {exc}") from exc


def decode_packet(state: CodecState, packet: Packet) -> DepthFrame:
    """Apply ``packet`` to ``state`` and return a copy of the reconstruction.

    Raises:
        DecodeError: payload is not valid DEFLATE or has the wrong size.
        DesyncError: a delta whose base is not the current reconstruction.
    """
    w, h = state.width, state.height
    npix = w * h
    if isinstance(packet, KeyframePacket):
        raw = _inflate(packet.compressed_payload)
        if len(raw) != 2 * npix:
            raise DecodeError(f"keyframe payload is {len(raw)} bytes, expected {2 * npix}")
        depth = np.frombuffer(raw, _LE_U16).astype(np.uint16).reshape(h, w)
        state.last_reconstructed = DepthFrame(w, h, packet.frame_index, packet.timestamp_us, depth)
        state.frames_since_keyframe = 1
        state.keyframe_requested = False
        return state.last_reconstructed.copy()

    recon = state.last_reconstructed
    if recon is None or recon.frame_index != packet.base_frame_index:
        have = None if recon is None else recon.frame_index
        raise DesyncError(f"delta based on frame {packet.base_frame_index}, decoder holds {have}")
    raw = _inflate(packet.compressed_payload)
    nmask = mask_nbytes(w, h)
    if len(raw) < nmask:
        raise DecodeError("delta payload shorter than its change mask")
    changed = np.unpackbits(np.frombuffer(raw, np.uint8, count=nmask), count=npix,
                            bitorder="little").astype(bool)
    count = int(np.count_nonzero(changed))
    if len(raw) != nmask + 2 * count:
        raise DecodeError(f"delta carries {len(raw) - nmask} value bytes for {count} changed pixels")
    if packet.changed_count is not None and packet.changed_count != count:
        raise DecodeError(f"mask has {count} set bits, packet claims {packet.changed_count}")
    depth = recon.depth.copy()
    depth.ravel()[changed] = np.frombuffer(raw, _LE_U16, offset=nmask)
    state.last_reconstructed = DepthFrame(w, h, packet.frame_index, packet.timestamp_us, depth)
    state.frames_since_keyframe += 1
    return state.last_reconstructed.copy()

