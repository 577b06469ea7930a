"""Lossless depth video delta codec, wire transport and telepresence session simulator."""

from voldepth.codec import (
    ChangePolicy,
    CodecState,
    DeltaPacket,
    DepthFrame,
    FrameKind,
    KeyframePacket,
    change_mask,
    decode_packet,
    encode_delta,
    encode_frame,
    encode_keyframe,
    schedule,
)
from voldepth.deflate import BACKEND
from voldepth.errors import (
    AnnotationError,
    DecodeError,
    DeflateError,
    DesyncError,
    DimensionError,
    FormatError,
    ParameterError,
    SequencingError,
    TopologyError,
    VoldepthError,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AnnotationError",
    "ChangePolicy",
    "CodecState",
    "DecodeError",
    "DeflateError",
    "DeltaPacket",
    "DepthFrame",
    "DesyncError",
    "DimensionError",
    "FormatError",
    "FrameKind",
    "KeyframePacket",
    "ParameterError",
    "SequencingError",
    "TopologyError",
    "VoldepthError",
    "change_mask",
    "decode_packet",
    "encode_delta",
    "encode_frame",
    "encode_keyframe",
    "schedule",
]
