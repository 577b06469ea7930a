import json
import subprocess
import sys

import pytest

from voldepth import scene, session, transport
from voldepth.cli import main


@pytest.fixture(scope="module")
def gen_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "a.d16"
    assert main(["gen", "--out", str(path), "--frames", "300", "--change", "0.10", "--seed", "7"]) == 0
    return path


def test_gen_header_and_determinism(gen_file, tmp_path):
    assert len(scene.read_raw(gen_file)) == 300
    again = tmp_path / "b.d16"
    main(["gen", "--out", str(again), "--frames", "300", "--change", "0.10", "--seed", "7"])
    assert again.read_bytes() == gen_file.read_bytes()


@pytest.mark.parametrize("argv", [
    ["gen", "--out", "x.d16", "--change", "1.5"],
    ["gen", "--out", "x.d16", "--frames", "-1"],
    ["bogus"],
    [],
    ["encode", "only-one-arg"],
])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1


def test_encode_decode_roundtrip(gen_file, tmp_path):
    vds, back = tmp_path / "a.vds", tmp_path / "back.d16"
    assert main(["encode", str(gen_file), str(vds)]) == 0
    assert vds.stat().st_size < 2_375_000
    assert main(["decode", str(vds), str(back)]) == 0
    assert back.read_bytes() == gen_file.read_bytes()


def test_encode_policy_flags(gen_file, tmp_path):
    vds = tmp_path / "k.vds"
    main(["encode", str(gen_file), str(vds), "--keyframe-interval", "10"])
    msgs = transport.read_vds(vds)
    assert sum(m.msg_type == transport.MsgType.KEYFRAME for m in msgs) == 30


def test_truncated_vds_exit_2(gen_file, tmp_path, capsys):
    vds = tmp_path / "a.vds"
    main(["encode", str(gen_file), str(vds)])
    cut = tmp_path / "cut.vds"
    cut.write_bytes(vds.read_bytes()[:-7])
    assert main(["decode", str(cut), str(tmp_path / "o.d16")]) == 2
    assert "decode" in capsys.readouterr().err


def test_corrupt_payload_exit_2(tmp_path):
    bad = tmp_path / "bad.vds"
    transport.write_vds(bad, [transport.WireMessage(0, 0, 0, 0, 0, b"\xff\xff\xff")])
    assert main(["decode", str(bad), str(tmp_path / "o.d16")]) == 2


def test_bad_d16_exit_2(tmp_path):
    p = tmp_path / "x.d16"
    p.write_bytes(b"NOPE" + bytes(14))
    assert main(["encode", str(p), str(tmp_path / "y.vds")]) == 2


def test_missing_input_exit_2(tmp_path):
    assert main(["encode", str(tmp_path / "missing.d16"), str(tmp_path / "y.vds")]) == 2


def test_simulate_default_10s(tmp_path):
    rep = tmp_path / "r.json"
    assert main(["simulate", "--duration", "10", "--report", str(rep)]) == 0
    report = json.loads(rep.read_text())
    assert report["depth"]["receivers"]["remote0"]["frames_delivered"] == 300
    assert report["depth"]["keyframes_sent"] == 10
    assert report["queue_growth"] is False


def test_simulate_capped_link_flags_growth(tmp_path):
    spec = session.SessionSpec.default(1).to_dict()
    spec["links"]["lan"]["bandwidth_bps"] = 500_000
    path = tmp_path / "s.json"
    path.write_text(json.dumps(spec))
    rep = tmp_path / "r.json"
    assert main(["simulate", "--session", str(path), "--duration", "3", "--report", str(rep)]) == 0
    assert json.loads(rep.read_text())["queue_growth"] is True


def test_simulate_flag_precedence(tmp_path):
    spec = session.SessionSpec.default(1).to_dict()
    spec["policy"]["keyframe_interval_frames"] = 15
    spec["seed"] = 4
    path = tmp_path / "s.json"
    path.write_text(json.dumps(spec))
    r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
    main(["simulate", "--session", str(path), "--duration", "2", "--report", str(r1)])
    main(["simulate", "--session", str(path), "--duration", "2", "--report", str(r2),
          "--keyframe-interval", "60", "--seed", "9"])
    a, b = json.loads(r1.read_text()), json.loads(r2.read_text())
    assert a["depth"]["keyframes_sent"] == 4 and a["seed"] == 4
    assert b["depth"]["keyframes_sent"] == 1 and b["seed"] == 9


def test_simulate_bad_topology_exit_3(tmp_path):
    spec = session.SessionSpec.default(1).to_dict()
    spec["nodes"] = [n for n in spec["nodes"] if n["role"] != "CAMERA_COMPUTER"]
    path = tmp_path / "s.json"
    path.write_text(json.dumps(spec))
    assert main(["simulate", "--session", str(path), "--duration", "1"]) == 3


def test_simulate_malformed_json_exit_3(tmp_path):
    path = tmp_path / "s.json"
    path.write_text("{not json")
    assert main(["simulate", "--session", str(path), "--duration", "1"]) == 3


def test_simulate_outputs_and_record(tmp_path):
    trace, csvp, rec = tmp_path / "t.ndjson", tmp_path / "w.csv", tmp_path / "rec"
    assert main(["simulate", "--duration", "1", "--trace", str(trace), "--csv", str(csvp),
                 "--record-dir", str(rec)]) == 0
    assert trace.read_text().count("\n") > 0
    assert csvp.read_text().startswith("series,window_start_us,bps")
    assert len(transport.read_vds(rec / "remote0.vds")) == 30


def test_stats_on_vds_and_trace(gen_file, tmp_path, capsys):
    vds = tmp_path / "a.vds"
    main(["encode", str(gen_file), str(vds)])
    capsys.readouterr()
    assert main(["stats", str(vds)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["messages"] == 300 and out["keyframes"] == 10
    assert out["max_window_bps"]["DEPTH"] < 1.9e6
    trace = tmp_path / "t.ndjson"
    main(["simulate", "--duration", "1", "--trace", str(trace)])
    js = tmp_path / "s.json"
    assert main(["stats", str(trace), "--json", str(js)]) == 0
    assert "camera->remote0/DEPTH" in json.loads(js.read_text())["links"]


def test_stats_garbage_trace_exit_2(tmp_path):
    p = tmp_path / "t.ndjson"
    p.write_text("garbage\n")
    assert main(["stats", str(p)]) == 2


def test_bench_python_backend(capsys):
    assert main(["bench", "--frames", "3", "--backend", "python"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["backend"] == "python" and out["frames"] == 3


def test_module_entry_point(tmp_path):
    out = tmp_path / "m.d16"
    r = subprocess.run([sys.executable, "-m", "voldepth", "gen", "--out", str(out), "--frames", "2"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and out.stat().st_size == 18 + 2 * 184320
