import collections
import dataclasses

import pytest

from voldepth import netsim, session
from voldepth.errors import AnnotationError, ParameterError, TopologyError
from voldepth.netsim import LinkConfig
from voldepth.payloads import AnnotationEvent, AnnotationOp, NodeRole, Shape
from voldepth.scene import SceneParams
from voldepth.session import NodeSpec, SessionSpec
from voldepth.transport import ChannelKind

SMALL_SCENE = SceneParams(width=64, height=48, seed=1)


def test_single_instructor_routes():
    g = session.build_topology(SessionSpec.default(1))
    assert len(g.nodes) == 4
    assert len(g.routes) == 5
    assert {r.channel for r in g.routes} == set(ChannelKind)
    control = [r for r in g.routes if r.channel == ChannelKind.CONTROL]
    assert control[0].bidirectional


def test_three_instructors_fan_out():
    g = session.build_topology(SessionSpec.default(3))
    assert g.fan_out(ChannelKind.DEPTH) == 3 and g.fan_out(ChannelKind.COLOR) == 3
    assert len(g.routes) == 15
    assert {r.dst for r in g.routes if r.channel == ChannelKind.POSE} == {"trainee"}


def _with_nodes(nodes):
    base = SessionSpec.default(1)
    return dataclasses.replace(base, nodes=tuple(nodes))


def test_two_trainees_rejected():
    nodes = list(SessionSpec.default(1).nodes) + [NodeSpec("t2", NodeRole.LOCAL_TRAINEE_HMD, "lan")]
    with pytest.raises(TopologyError):
        session.build_topology(_with_nodes(nodes))


@pytest.mark.parametrize("drop", [NodeRole.CAMERA_COMPUTER, NodeRole.REMOTE_COMPUTER, NodeRole.REMOTE_INSTRUCTOR_HMD])
def test_missing_role_rejected(drop):
    nodes = [n for n in SessionSpec.default(1).nodes if n.role != drop]
    with pytest.raises(TopologyError):
        session.build_topology(_with_nodes(nodes))


def test_unpaired_instructor_rejected():
    nodes = list(SessionSpec.default(1).nodes) + [NodeSpec("i9", NodeRole.REMOTE_INSTRUCTOR_HMD, "wan", 9)]
    with pytest.raises(TopologyError):
        session.build_topology(_with_nodes(nodes))


def test_unknown_link_rejected():
    nodes = list(SessionSpec.default(1).nodes)
    nodes[0] = NodeSpec("camera", NodeRole.CAMERA_COMPUTER, "nope")
    with pytest.raises(TopologyError):
        session.build_topology(_with_nodes(nodes))


def test_pairing_by_label_not_order():
    nodes = [
        NodeSpec("cam", NodeRole.CAMERA_COMPUTER, "l"), NodeSpec("tr", NodeRole.LOCAL_TRAINEE_HMD, "l"),
        NodeSpec("hA", NodeRole.REMOTE_INSTRUCTOR_HMD, "l", 2), NodeSpec("hB", NodeRole.REMOTE_INSTRUCTOR_HMD, "l", 1),
        NodeSpec("cB", NodeRole.REMOTE_COMPUTER, "l", 1), NodeSpec("cA", NodeRole.REMOTE_COMPUTER, "l", 2),
    ]
    g = session.build_topology(SessionSpec(tuple(nodes), {"l": LinkConfig(1_000_000)}))
    assert [(p.hmd, p.computer) for p in g.pairs] == [("hB", "cB"), ("hA", "cA")]


def test_spec_json_roundtrip(tmp_path):
    spec = SessionSpec.default(2, seed=5)
    d = spec.to_dict()
    back = SessionSpec.from_dict(d)
    assert back.to_dict() == d
    with pytest.raises(ParameterError):
        SessionSpec.from_dict({**d, "surprise": 1})


# ---- annotations ----


def ev(oid, op, t=0, **kw):
    return AnnotationEvent(oid, op, timestamp_us=t, **kw)


def test_create_then_delete_empty():
    assert session.replay([ev(1, AnnotationOp.CREATE), ev(1, AnnotationOp.DELETE)]) == {}


def test_update_unknown_rejected():
    with pytest.raises(AnnotationError):
        session.apply_annotation({}, ev(3, AnnotationOp.UPDATE))
    with pytest.raises(AnnotationError):
        session.apply_annotation({}, ev(3, AnnotationOp.DELETE))
    with pytest.raises(AnnotationError):
        session.replay([ev(1, AnnotationOp.CREATE), ev(1, AnnotationOp.CREATE)])


def test_update_replaces_pose_keeps_shape():
    t = session.replay([
        ev(1, AnnotationOp.CREATE, shape=Shape.TOOL, mesh_id=4),
        ev(1, AnnotationOp.UPDATE, shape=Shape.CUBOID, pose=(1, 2, 3, 0, 0, 0, 1), scale=(2, 2, 2)),
    ])
    assert t[1].shape == Shape.TOOL and t[1].mesh_id == 4
    assert t[1].pose[:3] == (1.0, 2.0, 3.0) and t[1].scale == (2.0, 2.0, 2.0)


def test_apply_is_pure():
    table = {}
    session.apply_annotation(table, ev(1, AnnotationOp.CREATE))
    assert table == {}


def test_replay_twice_identical():
    log = session.default_annotation_script(10_000_000)
    assert session.replay(log) == session.replay(log)


# ---- runs ----


def _isolated_spec(instructor_link: LinkConfig, **kw) -> SessionSpec:
    links = {"lan": LinkConfig(100_000_000), "wan": instructor_link}
    return dataclasses.replace(SessionSpec.default(1), links=links, scene=SMALL_SCENE, **kw)


def test_default_run_delivers_every_frame():
    res = session.run(dataclasses.replace(SessionSpec.default(1), scene=SMALL_SCENE), 2.0)
    rep = session.session_report(res)
    assert rep["depth"]["frames_sent"] == 60
    assert rep["depth"]["receivers"]["remote0"]["frames_delivered"] == 60
    assert rep["depth"]["keyframes_sent"] == 2
    assert rep["annotations"]["errors"] == 0
    assert rep["queue_growth"] is False


def test_empty_session_empty_trace():
    res = session.run(SessionSpec.default(1), 0.0)
    assert res.trace == []


def test_pose_latency_40ms():
    res = session.run(_isolated_spec(LinkConfig(100_000_000, latency_ms=40)), 1.0)
    lat, summary = session.pose_route_latency(res)
    assert len(lat) == 90
    assert abs(summary["mean_us"] - 40_000) <= 1_000


def test_pose_latency_zero_link_is_serialization():
    res = session.run(_isolated_spec(LinkConfig(10_000_000)), 0.5)
    link = res.links["instructor0->trainee/POSE"]
    for p in res.poses:
        tx = link.history[p.seq]
        ser = netsim.serialization_us(p.wire_bytes, 10_000_000)
        assert p.latency_us == tx.queue_delay_us + ser


def test_lossy_pose_latency_spikes_at_rtt_multiples():
    res = session.run(_isolated_spec(LinkConfig(100_000_000, latency_ms=5, loss_prob=0.1)), 3.0)
    link = res.links["instructor0->trainee/POSE"]
    rtt = 10_000
    excess = []
    for p in res.poses:
        tx = link.history[p.seq]
        base = tx.done_us - tx.enqueue_us + 5_000
        excess.append(p.latency_us - base)
        assert p.latency_us - base >= tx.retransmits * rtt
    spikes = collections.Counter(e for e in excess if e > 0)
    assert spikes.most_common(1)[0][0] == rtt


def test_adding_instructors_keeps_reconstruction():
    one = session.run(dataclasses.replace(SessionSpec.default(1), scene=SMALL_SCENE), 1.0)
    three = session.run(dataclasses.replace(SessionSpec.default(3), scene=SMALL_SCENE), 1.0)
    assert one.remotes["remote0"].frame_digests == three.remotes["remote0"].frame_digests
    assert three.remotes["remote2"].frame_digests == one.remotes["remote0"].frame_digests


def test_runs_deterministic():
    spec = dataclasses.replace(SessionSpec.default(2), scene=SMALL_SCENE)
    a, b = session.run(spec, 1.0), session.run(spec, 1.0)
    assert netsim.trace_to_ndjson(a.trace) == netsim.trace_to_ndjson(b.trace)
    assert session.session_report(a) == session.session_report(b)


def test_seed_changes_trace():
    spec = dataclasses.replace(SessionSpec.default(1), scene=SMALL_SCENE)
    a = session.run(spec, 1.0)
    b = session.run(dataclasses.replace(spec, seed=1), 1.0)
    assert a.trace != b.trace


def test_pose_in_order():
    res = session.run(_isolated_spec(LinkConfig(5_000_000, latency_ms=3, jitter_ms_stddev=2, loss_prob=0.05)), 1.0)
    assert [p.seq for p in res.poses] == sorted(p.seq for p in res.poses)


def test_overloaded_link_flags_queue_growth():
    spec = dataclasses.replace(SessionSpec.default(1), scene=SMALL_SCENE,
                               links={"lan": LinkConfig(1_000_000), "wan": LinkConfig(20_000_000)})
    rep = session.session_report(session.run(spec, 3.0))
    assert rep["links"]["camera->remote0/COLOR"]["queue_growth"] is True
    assert rep["queue_growth"] is True


def test_annotations_applied_at_trainee():
    res = session.run(dataclasses.replace(SessionSpec.default(2), scene=SMALL_SCENE), 10.0)
    expected = {}
    for i in range(2):
        expected.update(session.replay(session.default_annotation_script(10_000_000, i)))
    assert res.annotation_table == expected
    assert res.annotation_errors == 0


def test_bad_scripted_update_counts_error():
    spec = dataclasses.replace(SessionSpec.default(1), scene=SMALL_SCENE,
                               annotations=((0, ev(5, AnnotationOp.UPDATE, 1000)),))
    res = session.run(spec, 0.5)
    assert res.annotation_errors == 1 and res.annotation_table == {}


def test_depth_on_capped_link_has_bounded_queue():
    spec = dataclasses.replace(SessionSpec.default(1), links={"lan": LinkConfig(1_900_000), "wan": LinkConfig(20_000_000)})
    res = session.run(spec, 10.0)
    rep = session.session_report(res)
    depth = rep["links"]["camera->remote0/DEPTH"]
    assert depth["queue_growth"] is False
    assert depth["max_queue_delay_us"] < 1_000_000 // 30
    assert rep["depth"]["receivers"]["remote0"]["frames_delivered"] == 300
