"""Pose and annotation message bodies and the role/shape enumerations they use."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from voldepth.errors import FormatError, ParameterError

DEFAULT_JOINTS_PER_HAND = 26

_POSE_HEAD = struct.Struct("<BBBB")  # node, kind, joint_count, frame_id
_JOINT = struct.Struct("<7f")
_ANNOTATION = struct.Struct("<IBBH7f3f")


class NodeRole(enum.IntEnum):
    CAMERA_COMPUTER = 0
    LOCAL_TRAINEE_HMD = 1
    REMOTE_INSTRUCTOR_HMD = 2
    REMOTE_COMPUTER = 3


class PoseKind(enum.IntEnum):
    HAND = 0
    HEAD = 1


class AnnotationOp(enum.IntEnum):
    CREATE = 0
    UPDATE = 1
    DELETE = 2


class Shape(enum.IntEnum):
    CUBOID = 0
    CYLINDER = 1
    TOOL = 2


def _f32_tuple(values, n: int, what: str) -> tuple[float, ...]:
    arr = np.asarray(values, dtype=np.float32).ravel()
    if arr.size != n:
        raise ParameterError(f"{what} needs {n} components, got {arr.size}")
    return tuple(float(x) for x in arr)


@dataclass(frozen=True, eq=False)
class PoseSample:
    """Tracked joints of one hand or head.

    ``joints`` is a float32 array of shape (joint_count, 7): position in
    meters followed by a unit quaternion (x, y, z, w).
    """

    node: NodeRole
    kind: PoseKind
    joints: np.ndarray
    frame_id: int = 0
    timestamp_us: int = 0

    def __post_init__(self) -> None:
        joints = np.asarray(self.joints, dtype=np.float32)
        if joints.ndim != 2 or joints.shape[1] != 7:
            raise ParameterError("joints must have shape (n, 7)")
        if not 1 <= joints.shape[0] <= 255:
            raise ParameterError("joint count must be within 1..255")
        norms = np.linalg.norm(joints[:, 3:].astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-3):
            raise ParameterError("joint rotations must be unit quaternions")
        if not 0 <= self.frame_id <= 255:
            raise ParameterError("frame_id must fit in a byte")
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "node", NodeRole(self.node))
        object.__setattr__(self, "kind", PoseKind(self.kind))

    @property
    def joint_count(self) -> int:
        return self.joints.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PoseSample):
            return NotImplemented
        return (
            self.node == other.node
            and self.kind == other.kind
            and self.frame_id == other.frame_id
            and self.timestamp_us == other.timestamp_us
            and np.array_equal(self.joints, other.joints)
        )


def encode_pose(sample: PoseSample) -> bytes:
    return _POSE_HEAD.pack(sample.node, sample.kind, sample.joint_count, sample.frame_id) + sample.joints.astype(
        "<f4"
    ).tobytes()


def decode_pose(payload: bytes, timestamp_us: int = 0) -> PoseSample:
    if len(payload) < _POSE_HEAD.size:
        raise FormatError("pose payload shorter than its header")
    node, kind, count, frame_id = _POSE_HEAD.unpack_from(payload)
    if len(payload) != _POSE_HEAD.size + count * _JOINT.size:
        raise FormatError(f"pose payload length {len(payload)} does not match {count} joints")
    try:
        node, kind = NodeRole(node), PoseKind(kind)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    joints = np.frombuffer(payload, "<f4", offset=_POSE_HEAD.size).reshape(count, 7).astype(np.float32)
    return PoseSample(node, kind, joints, frame_id, timestamp_us)


@dataclass(frozen=True)
class AnnotationEvent:
    """Create, move or remove a virtual object in the trainee's scene.

    ``pose`` is position (3) + quaternion (4); values are stored rounded
    to float32 so they survive the wire unchanged.
    """

    object_id: int
    op: AnnotationOp
    shape: Shape = Shape.CUBOID
    mesh_id: int = 0
    pose: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0)
    scale: tuple[float, ...] = (1.0, 1.0, 1.0)
    timestamp_us: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.object_id <= 0xFFFFFFFF:
            raise ParameterError("object_id must fit in u32")
        if not 0 <= self.mesh_id <= 0xFFFF:
            raise ParameterError("mesh_id must fit in u16")
        object.__setattr__(self, "op", AnnotationOp(self.op))
        object.__setattr__(self, "shape", Shape(self.shape))
        object.__setattr__(self, "pose", _f32_tuple(self.pose, 7, "pose"))
        object.__setattr__(self, "scale", _f32_tuple(self.scale, 3, "scale"))


def encode_annotation(event: AnnotationEvent) -> bytes:
    return _ANNOTATION.pack(event.object_id, event.op, event.shape, event.mesh_id, *event.pose, *event.scale)


def decode_annotation(payload: bytes, timestamp_us: int = 0) -> AnnotationEvent:
    if len(payload) != _ANNOTATION.size:
        raise FormatError(f"annotation payload is {len(payload)} bytes, expected {_ANNOTATION.size}")
    object_id, op, shape, mesh_id, *rest = _ANNOTATION.unpack(payload)
    try:
        return AnnotationEvent(object_id, AnnotationOp(op), Shape(shape), mesh_id,
                               tuple(rest[:7]), tuple(rest[7:]), timestamp_us)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
