"""Four-role session topology and the end-to-end simulation run.

A session holds one camera computer, one local trainee HMD and one or
more instructor pairs (instructor HMD plus remote computer). Routes are
fixed by role:

    DEPTH, COLOR       camera computer -> remote computer of every pair
    POSE, ANNOTATION   instructor HMD  -> trainee HMD
    CONTROL            camera computer <-> remote computer (both ways)

Each direction of each route gets its own :class:`~voldepth.netsim.Link`
built from the sending node's link configuration.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from voldepth import metrics
from voldepth.codec import ChangePolicy, DepthFrame
from voldepth.errors import AnnotationError, ParameterError, TopologyError
from voldepth.netsim import Link, LinkConfig, Simulator
from voldepth.payloads import (
    DEFAULT_JOINTS_PER_HAND,
    AnnotationEvent,
    AnnotationOp,
    NodeRole,
    PoseKind,
    PoseSample,
    Shape,
)
from voldepth.scene import NoiseModel, SceneParams, apply_noise, resolve_blobs, synth_frame
from voldepth.transport import (
    ChannelKind,
    ColorStub,
    ReceiverState,
    SenderState,
    WireMessage,
    annotation_message,
    pose_message,
    receiver_ingest,
    sender_ingest,
    sender_tick,
)

# ---- session description ----


@dataclass(frozen=True)
class NodeSpec:
    name: str
    role: NodeRole
    link: str
    pair: int | None = None

    @classmethod
    def from_dict(cls, d: Mapping) -> "NodeSpec":
        try:
            role = d["role"]
            role = NodeRole[role] if isinstance(role, str) else NodeRole(role)
            return cls(str(d["name"]), role, str(d["link"]), d.get("pair"))
        except (KeyError, ValueError) as exc:
            raise TopologyError(f"bad node entry {dict(d)!r}: {exc}") from exc

    def to_dict(self) -> dict:
        d = {"name": self.name, "role": self.role.name, "link": self.link}
        if self.pair is not None:
            d["pair"] = self.pair
        return d


@dataclass(frozen=True)
class SessionSpec:
    nodes: tuple[NodeSpec, ...]
    links: Mapping[str, LinkConfig]
    policy: ChangePolicy = field(default_factory=ChangePolicy)
    scene: SceneParams = field(default_factory=SceneParams)
    noise: NoiseModel | None = None
    color_bitrate_bps: int = 1_900_000
    pose_hz: int = 30
    joints_per_hand: int = DEFAULT_JOINTS_PER_HAND
    annotations: tuple[tuple[int, AnnotationEvent], ...] | None = None  # (node index, event)
    seed: int = 0

    @classmethod
    def from_dict(cls, d: Mapping) -> "SessionSpec":
        known = {"nodes", "links", "policy", "scene", "noise", "color_bitrate_bps", "pose_hz",
                 "joints_per_hand", "annotations", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown session fields: {sorted(unknown)}")
        if "nodes" not in d or "links" not in d:
            raise TopologyError("session needs 'nodes' and 'links'")
        links = {name: LinkConfig.from_dict(cfg) for name, cfg in d["links"].items()}
        scene = dict(d.get("scene", {}))
        scene.pop("blobs", None)
        annotations = None
        if d.get("annotations") is not None:
            annotations = tuple((int(a.get("instructor", 0)), _annotation_from_dict(a)) for a in d["annotations"])
        try:
            return cls(
                nodes=tuple(NodeSpec.from_dict(n) for n in d["nodes"]),
                links=links,
                policy=ChangePolicy(**d.get("policy", {})),
                scene=SceneParams(**scene),
                noise=NoiseModel(**d["noise"]) if d.get("noise") else None,
                color_bitrate_bps=int(d.get("color_bitrate_bps", 1_900_000)),
                pose_hz=int(d.get("pose_hz", 30)),
                joints_per_hand=int(d.get("joints_per_hand", DEFAULT_JOINTS_PER_HAND)),
                annotations=annotations,
                seed=int(d.get("seed", 0)),
            )
        except TypeError as exc:
            raise ParameterError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "SessionSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = {
            "nodes": [n.to_dict() for n in self.nodes],
            "links": {k: vars(v).copy() for k, v in self.links.items()},
            "policy": {"threshold_mm": self.policy.threshold_mm,
                       "keyframe_interval_frames": self.policy.keyframe_interval_frames,
                       "reference": self.policy.reference},
            "scene": {k: v for k, v in vars(self.scene).items() if k != "blobs"},
            "color_bitrate_bps": self.color_bitrate_bps,
            "pose_hz": self.pose_hz,
            "joints_per_hand": self.joints_per_hand,
            "seed": self.seed,
        }
        if self.noise is not None:
            d["noise"] = vars(self.noise).copy()
        return d

    @classmethod
    def default(cls, instructors: int = 1, **overrides) -> "SessionSpec":
        """Local camera and trainee on a LAN, instructors on a WAN uplink."""
        nodes = [NodeSpec("camera", NodeRole.CAMERA_COMPUTER, "lan"),
                 NodeSpec("trainee", NodeRole.LOCAL_TRAINEE_HMD, "lan")]
        for i in range(instructors):
            nodes.append(NodeSpec(f"instructor{i}", NodeRole.REMOTE_INSTRUCTOR_HMD, "wan", i))
            nodes.append(NodeSpec(f"remote{i}", NodeRole.REMOTE_COMPUTER, "wan", i))
        links = {
            "lan": LinkConfig(100_000_000, latency_ms=2.0),
            "wan": LinkConfig(20_000_000, latency_ms=20.0, jitter_ms_stddev=1.0, loss_prob=0.001),
        }
        return cls(nodes=tuple(nodes), links=links, **overrides)


def _annotation_from_dict(a: Mapping) -> AnnotationEvent:
    try:
        return AnnotationEvent(
            object_id=int(a["object_id"]),
            op=AnnotationOp[a["op"]],
            shape=Shape[a.get("shape", "CUBOID")],
            mesh_id=int(a.get("mesh_id", 0)),
            pose=tuple(a.get("pose", (0, 0, 0, 0, 0, 0, 1))),
            scale=tuple(a.get("scale", (1, 1, 1))),
            timestamp_us=int(a["time_us"]),
        )
    except KeyError as exc:
        raise ParameterError(f"bad annotation entry: missing or unknown {exc}") from exc


# ---- topology ----


@dataclass(frozen=True)
class Route:
    channel: ChannelKind
    src: str
    dst: str
    bidirectional: bool = False

    @property
    def name(self) -> str:
        arrow = "<->" if self.bidirectional else "->"
        return f"{self.src}{arrow}{self.dst}/{self.channel.name}"


@dataclass(frozen=True)
class InstructorPair:
    hmd: str
    computer: str


@dataclass(frozen=True)
class SessionGraph:
    nodes: Mapping[str, NodeSpec]
    camera: str
    trainee: str
    pairs: tuple[InstructorPair, ...]
    routes: tuple[Route, ...]

    def routes_from(self, node: str, channel: ChannelKind) -> list[Route]:
        return [r for r in self.routes if r.channel == channel and r.src == node]

    def fan_out(self, channel: ChannelKind = ChannelKind.DEPTH) -> int:
        return len(self.routes_from(self.camera, channel))


def build_topology(spec: SessionSpec) -> SessionGraph:
    by_role: dict[NodeRole, list[NodeSpec]] = {r: [] for r in NodeRole}
    names: dict[str, NodeSpec] = {}
    for node in spec.nodes:
        if node.name in names:
            raise TopologyError(f"duplicate node name {node.name!r}")
        if node.link not in spec.links:
            raise TopologyError(f"node {node.name!r} uses unknown link {node.link!r}")
        names[node.name] = node
        by_role[node.role].append(node)

    for role in (NodeRole.CAMERA_COMPUTER, NodeRole.LOCAL_TRAINEE_HMD):
        if len(by_role[role]) != 1:
            raise TopologyError(f"need exactly one {role.name}, found {len(by_role[role])}")
    hmds, computers = by_role[NodeRole.REMOTE_INSTRUCTOR_HMD], by_role[NodeRole.REMOTE_COMPUTER]
    if not hmds or not computers:
        raise TopologyError("need at least one instructor HMD and one remote computer")
    if len(hmds) != len(computers):
        raise TopologyError(f"{len(hmds)} instructor HMDs but {len(computers)} remote computers")

    if any(n.pair is not None for n in hmds + computers):
        try:
            hmd_by = {n.pair: n for n in hmds}
            comp_by = {n.pair: n for n in computers}
            if len(hmd_by) != len(hmds) or len(comp_by) != len(computers) or set(hmd_by) != set(comp_by):
                raise TopologyError("instructor HMDs and remote computers do not pair up one to one")
            keys = sorted(hmd_by)
        except TypeError as exc:
            raise TopologyError("pair labels must all be set and comparable") from exc
        pairs = tuple(InstructorPair(hmd_by[k].name, comp_by[k].name) for k in keys)
    else:
        pairs = tuple(InstructorPair(h.name, c.name) for h, c in zip(hmds, computers))

    camera, trainee = by_role[NodeRole.CAMERA_COMPUTER][0].name, by_role[NodeRole.LOCAL_TRAINEE_HMD][0].name
    routes = []
    for p in pairs:
        routes += [
            Route(ChannelKind.DEPTH, camera, p.computer),
            Route(ChannelKind.COLOR, camera, p.computer),
            Route(ChannelKind.POSE, p.hmd, trainee),
            Route(ChannelKind.ANNOTATION, p.hmd, trainee),
            Route(ChannelKind.CONTROL, camera, p.computer, bidirectional=True),
        ]
    return SessionGraph(names, camera, trainee, pairs, tuple(routes))


# ---- annotations ----


def apply_annotation(table: Mapping[int, AnnotationEvent], event: AnnotationEvent) -> dict[int, AnnotationEvent]:
    """Return the object table after ``event``; ``table`` is left untouched.

    The stored value for an object is its CREATE event with pose and scale
    replaced by the latest UPDATE.
    """
    oid = event.object_id
    out = dict(table)
    if event.op == AnnotationOp.CREATE:
        if oid in out:
            raise AnnotationError(f"object {oid} already exists")
        out[oid] = event
    elif event.op == AnnotationOp.UPDATE:
        if oid not in out:
            raise AnnotationError(f"UPDATE of unknown object {oid}")
        prev = out[oid]
        out[oid] = AnnotationEvent(oid, AnnotationOp.CREATE, prev.shape, prev.mesh_id,
                                   event.pose, event.scale, event.timestamp_us)
    else:
        if oid not in out:
            raise AnnotationError(f"DELETE of unknown object {oid}")
        del out[oid]
    return out


def replay(events: Iterable[AnnotationEvent]) -> dict[int, AnnotationEvent]:
    table: dict[int, AnnotationEvent] = {}
    for event in events:
        table = apply_annotation(table, event)
    return table


def default_annotation_script(duration_us: int, instructor: int = 0) -> list[AnnotationEvent]:
    """A small scripted lesson: place a tool and a marker, move them, remove one."""
    base = (instructor + 1) << 16
    ident = (0.0, 0.0, 0.0, 1.0)
    script = [
        (500_000, AnnotationEvent(base + 1, AnnotationOp.CREATE, Shape.TOOL, 7, (0.10, 0.0, 0.50, *ident), (1, 1, 1))),
        (1_500_000, AnnotationEvent(base + 2, AnnotationOp.CREATE, Shape.CYLINDER, 0,
                                    (-0.05, 0.02, 0.45, *ident), (0.02, 0.02, 0.10))),
        (3_000_000, AnnotationEvent(base + 1, AnnotationOp.UPDATE, Shape.TOOL, 7,
                                    (0.12, 0.01, 0.48, 0.0, 0.0, 0.3826834, 0.9238795), (1, 1, 1))),
        (5_000_000, AnnotationEvent(base + 3, AnnotationOp.CREATE, Shape.CUBOID, 0,
                                    (0.0, -0.03, 0.52, *ident), (0.05, 0.02, 0.02))),
        (7_000_000, AnnotationEvent(base + 2, AnnotationOp.DELETE, Shape.CYLINDER, 0)),
        (9_000_000, AnnotationEvent(base + 3, AnnotationOp.UPDATE, Shape.CUBOID, 0,
                                    (0.01, -0.03, 0.52, *ident), (0.05, 0.03, 0.02))),
    ]
    out = []
    for t, ev in script:
        if t < duration_us:
            out.append(AnnotationEvent(ev.object_id, ev.op, ev.shape, ev.mesh_id, ev.pose, ev.scale, t))
    return out


# ---- pose synthesis ----


def synth_pose(node: NodeRole, kind: PoseKind, joints: int, t_us: int, phase: float = 0.0,
               frame_id: int = 0) -> PoseSample:
    """Smooth deterministic joint motion; rotations about z by a slowly varying angle."""
    t = t_us / 1e6
    j = np.arange(joints, dtype=np.float64)
    pos = np.stack([0.1 * np.sin(t + phase + 0.1 * j), 0.05 * np.cos(t + phase) + 0.01 * j,
                    0.4 + 0.02 * np.sin(0.5 * t + j)], axis=1)
    theta = 0.5 * np.sin(0.7 * t + phase + 0.05 * j)
    quat = np.stack([np.zeros_like(theta), np.zeros_like(theta), np.sin(theta / 2), np.cos(theta / 2)], axis=1)
    return PoseSample(node, kind, np.hstack([pos, quat]).astype(np.float32), frame_id, t_us)


# ---- run ----


@dataclass
class PoseDelivery:
    src: str
    seq: int
    sent_us: int
    received_us: int
    wire_bytes: int

    @property
    def latency_us(self) -> int:
        return self.received_us - self.sent_us


@dataclass
class RemoteRecord:
    """What one remote computer received and reconstructed."""

    name: str
    receiver: ReceiverState
    messages: list[WireMessage] = field(default_factory=list)
    frame_digests: list[str] = field(default_factory=list)
    frame_arrivals_us: list[int] = field(default_factory=list)
    color_messages: int = 0
    last_frame: DepthFrame | None = None


@dataclass
class SessionResult:
    spec: SessionSpec
    graph: SessionGraph
    duration_us: int
    trace: list[dict]
    links: dict[str, Link]
    sender: SenderState
    remotes: dict[str, RemoteRecord]
    poses: list[PoseDelivery]
    annotation_table: dict[int, AnnotationEvent]
    annotation_log: list[AnnotationEvent]
    annotation_errors: int
    frames_offered: int


def _link_seed(seed: int, config: LinkConfig, name: str) -> str:
    # str seeds hash through sha512 in random.Random, independent of PYTHONHASHSEED
    return f"{seed}:{config.seed}:{name}"


def run(spec: SessionSpec, duration_s: float) -> SessionResult:
    """Simulate ``duration_s`` seconds of the session and drain in-flight traffic."""
    if duration_s < 0 or not math.isfinite(duration_s):
        raise ParameterError("duration must be a finite non-negative number")
    graph = build_topology(spec)
    sim = Simulator()
    duration_us = round(duration_s * 1_000_000)
    scene = spec.scene
    fps = scene.fps

    links: dict[str, Link] = {}

    def link_for(route: Route, src: str, dst: str) -> Link:
        name = f"{src}->{dst}/{route.channel.name}"
        cfg = spec.links[graph.nodes[src].link]
        link = Link(cfg, name, _link_seed(spec.seed, cfg, name))
        links[name] = link
        return link

    n_frames = math.ceil(duration_us * fps / 1_000_000)
    blobs = resolve_blobs(scene) if n_frames else ()

    def frames():
        for k in range(n_frames):
            f = synth_frame(scene, k, blobs)
            yield apply_noise(f, spec.noise, k) if spec.noise is not None else f

    sender = SenderState.for_frames(frames(), scene.width, scene.height, spec.policy, fps=fps,
                                    color=ColorStub(spec.color_bitrate_bps, fps, seed=spec.seed))

    remotes: dict[str, RemoteRecord] = {}
    downlinks: dict[str, dict[ChannelKind, Link]] = {}
    uplinks: dict[str, Link] = {}
    for pair in graph.pairs:
        remotes[pair.computer] = RemoteRecord(pair.computer, ReceiverState.for_geometry(scene.width, scene.height))
        downlinks[pair.computer] = {}
        for route in graph.routes:
            if route.dst != pair.computer:
                continue
            downlinks[pair.computer][route.channel] = link_for(route, route.src, route.dst)
            if route.bidirectional:
                uplinks[pair.computer] = link_for(route, route.dst, route.src)

    def on_camera_control(msg: WireMessage) -> None:
        sender_ingest(sender, msg)

    def make_remote_handler(rec: RemoteRecord):
        def handle(msg: WireMessage) -> None:
            if msg.channel == ChannelKind.COLOR:
                rec.color_messages += 1
                return
            if msg.channel == ChannelKind.DEPTH:
                rec.messages.append(msg)
            ev = receiver_ingest(rec.receiver, msg)
            if ev.kind == "frame":
                rec.frame_digests.append(hashlib.sha256(ev.frame.depth.tobytes()).hexdigest()[:16])
                rec.frame_arrivals_us.append(sim.now_us)
                rec.last_frame = ev.frame
            elif ev.kind == "request":
                sim.send(uplinks[rec.name], ev.request, on_camera_control)
        return handle

    handlers = {name: make_remote_handler(rec) for name, rec in remotes.items()}

    def camera_tick() -> None:
        for msg in sender_tick(sender, sim.now_us):
            for name in remotes:
                sim.send(downlinks[name][ChannelKind(msg.channel)], msg, handlers[name])

    for k in range(n_frames):
        t = k * 1_000_000 // fps
        if t < duration_us:
            sim.schedule(t, "tick", camera_tick)

    # instructor side
    poses: list[PoseDelivery] = []
    trainee_rx: dict[str, ReceiverState] = {}
    annotation_log: list[AnnotationEvent] = []
    table: dict[int, AnnotationEvent] = {}
    annotation_errors = 0

    def make_trainee_handler(src: str):
        rx = trainee_rx.setdefault(src, ReceiverState.for_geometry(scene.width, scene.height))

        def handle(msg: WireMessage) -> None:
            nonlocal table, annotation_errors
            ev = receiver_ingest(rx, msg)
            if ev.kind == "pose":
                poses.append(PoseDelivery(src, msg.seq, msg.timestamp_us, sim.now_us, msg.wire_size))
            elif ev.kind == "annotation":
                annotation_log.append(ev.annotation)
                try:
                    table = apply_annotation(table, ev.annotation)
                except AnnotationError:
                    annotation_errors += 1
        return handle

    if spec.annotations is not None:
        scripted = {}
        for idx, event in spec.annotations:
            if not 0 <= idx < len(graph.pairs):
                raise TopologyError(f"annotation names instructor {idx}, session has {len(graph.pairs)}")
            if event.timestamp_us < duration_us:
                scripted.setdefault(idx, []).append(event)
    else:
        scripted = {i: default_annotation_script(duration_us, i) for i in range(len(graph.pairs))}

    for i, pair in enumerate(graph.pairs):
        pose_link = link_for(Route(ChannelKind.POSE, pair.hmd, graph.trainee), pair.hmd, graph.trainee)
        ann_link = link_for(Route(ChannelKind.ANNOTATION, pair.hmd, graph.trainee), pair.hmd, graph.trainee)
        on_pose = make_trainee_handler(pair.hmd)
        on_ann = make_trainee_handler(pair.hmd)
        seqs = {"pose": 0, "ann": 0}

        def pose_tick(i=i, pose_link=pose_link, on_pose=on_pose, seqs=seqs) -> None:
            now = sim.now_us
            for kind, joints, phase in ((PoseKind.HAND, spec.joints_per_hand, 0.0),
                                        (PoseKind.HAND, spec.joints_per_hand, math.pi),
                                        (PoseKind.HEAD, 1, 0.5)):
                sample = synth_pose(NodeRole.REMOTE_INSTRUCTOR_HMD, kind, joints, now, phase + i)
                sim.send(pose_link, pose_message(sample, seqs["pose"]), on_pose)
                seqs["pose"] += 1

        if spec.pose_hz > 0:
            k = 0
            while (t := k * 1_000_000 // spec.pose_hz) < duration_us:
                sim.schedule(t, "pose", pose_tick)
                k += 1

        for event in sorted(scripted.get(i, []), key=lambda e: e.timestamp_us):
            def send_annotation(event=event, ann_link=ann_link, on_ann=on_ann, seqs=seqs) -> None:
                sim.send(ann_link, annotation_message(event, seqs["ann"]), on_ann)
                seqs["ann"] += 1
            sim.schedule(event.timestamp_us, "annotation", send_annotation)

    sim.run()
    return SessionResult(spec, graph, duration_us, sim.trace, links, sender, remotes, poses,
                         table, annotation_log, annotation_errors, n_frames)


def pose_route_latency(result: SessionResult) -> tuple[list[int], dict]:
    """Per-sample pose latency (receive time minus sample timestamp) and its summary."""
    lat = [p.latency_us for p in result.poses]
    return lat, metrics.latency_summary(lat)


def session_report(result: SessionResult) -> dict:
    """Deterministic summary of a run; every value derives from the virtual clock."""
    duration_s = result.duration_us / 1e6
    period_us = 1_000_000 // result.spec.scene.fps
    by_link: dict[str, list[dict]] = {}
    for r in result.trace:
        by_link.setdefault(r["link"], []).append(r)
    link_reports = {}
    any_growth = False
    for name in sorted(result.links):
        link = result.links[name]
        records = by_link.get(name, [])
        windows = metrics.bitrate_windows(records)
        sends = [r for r in records if r["event"] == "send"]
        nbytes = sum(r["bytes"] for r in sends)
        lat = metrics.link_latencies(records).get(name, [])
        qd = [tx.queue_delay_us for tx in link.history]
        growth = metrics.queue_growth(qd, period_us)
        any_growth |= growth
        link_reports[name] = {
            "messages": len(sends),
            "bytes": nbytes,
            "max_window_bps": max((b for _, b in windows), default=0.0),
            "mean_bps": round(8 * nbytes / duration_s, 3) if duration_s > 0 else 0.0,
            "latency": metrics.latency_summary(lat),
            "retransmits": sum(tx.retransmits for tx in link.history),
            "max_queue_delay_us": max(qd, default=0),
            "queue_growth": growth,
        }
    depth = {}
    for name in sorted(result.remotes):
        rec = result.remotes[name]
        arrivals = rec.frame_arrivals_us
        in_window = sum(1 for t in arrivals if t < result.duration_us)
        depth[name] = {
            "frames_delivered": len(arrivals),
            "frames_delivered_in_window": in_window,
            "delivered_fps": round(in_window / duration_s, 3) if duration_s > 0 else 0.0,
            "color_messages": rec.color_messages,
            "decode_errors": rec.receiver.decode_errors,
            "seq_gaps": rec.receiver.seq_gaps,
            "last_frame_sha256": (hashlib.sha256(rec.last_frame.depth.tobytes()).hexdigest()
                                  if rec.last_frame is not None else None),
        }
    _, pose_summary = pose_route_latency(result)
    return {
        "duration_s": duration_s,
        "seed": result.spec.seed,
        "topology": {
            "nodes": len(result.graph.nodes),
            "routes": [r.name for r in result.graph.routes],
            "depth_fan_out": result.graph.fan_out(),
        },
        "depth": {
            "frames_offered": result.frames_offered,
            "frames_sent": result.sender.depth_ticks,
            "keyframes_sent": result.sender.keyframes_sent,
            "keyframe_requests": result.sender.requests_received,
            "receivers": depth,
        },
        "pose": pose_summary,
        "annotations": {
            "events": len(result.annotation_log),
            "errors": result.annotation_errors,
            "objects": sorted(result.annotation_table),
        },
        "links": link_reports,
        "queue_growth": any_growth,
    }
