import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from voldepth import codec, deflate
from voldepth.codec import ChangePolicy, CodecState, DeltaPacket, DepthFrame, KeyframePacket
from voldepth.errors import DecodeError, DesyncError, DimensionError, ParameterError, SequencingError

W, H = 320, 288


def frame(depth, k=0, w=W, h=H):
    return DepthFrame(w, h, k, k * 33_333, np.asarray(depth, dtype=np.uint16).reshape(h, w))


def flat(value, k=0, w=W, h=H):
    return frame(np.full((h, w), value), k, w, h)


def inflate(payload):
    return zlib.decompress(payload, -15)


def test_frame_geometry_checked():
    with pytest.raises(DimensionError):
        DepthFrame(4, 4, 0, 0, np.zeros(15))
    with pytest.raises(DimensionError):
        DepthFrame(0, 4, 0, 0, np.zeros(0))


def test_policy_validation():
    with pytest.raises(ParameterError):
        ChangePolicy(keyframe_interval_frames=0)
    with pytest.raises(ParameterError):
        ChangePolicy(threshold_mm=-1)


# ---- change_mask ----


def test_mask_identity_is_empty():
    f = flat(1234)
    mask, values, frac = codec.change_mask(f, f.copy(), 0)
    assert mask == bytes(codec.mask_nbytes(W, H)) and len(values) == 0 and frac == 0.0


def test_mask_first_tenth_changed():
    prev = flat(1000)
    cur = prev.depth.copy().ravel()
    cur[:9216] += 1
    mask, values, frac = codec.change_mask(prev, frame(cur, 1), 0)
    assert frac == pytest.approx(0.10)
    assert len(values) == 9216
    assert mask[:1152] == b"\xff" * 1152 and not any(mask[1152:])


def test_mask_below_threshold():
    _, values, frac = codec.change_mask(flat(1000), flat(1010, 1), 15)
    assert frac == 0.0 and len(values) == 0


def test_mask_bit_order_lsb_first():
    prev = flat(0, w=16, h=1)
    cur = prev.depth.copy().ravel()
    cur[[0, 3, 9]] = 7
    mask, values, _ = codec.change_mask(prev, frame(cur, 1, 16, 1), 0)
    assert mask == bytes([0b00001001, 0b00000010])
    assert list(values) == [7, 7, 7]


def test_zero_transition_counts_as_change():
    prev = flat(0, w=4, h=1)
    _, values, _ = codec.change_mask(prev, frame([0, 5, 0, 0], 1, 4, 1), 0)
    assert list(values) == [5]


def test_mask_geometry_mismatch():
    with pytest.raises(DimensionError):
        codec.change_mask(flat(1, w=4, h=4), flat(1, w=4, h=5), 0)


# ---- keyframes ----


def test_keyframe_payload_is_little_endian_frame():
    f = frame(np.arange(W * H) % 4000)
    pkt = codec.encode_keyframe(f)
    raw = inflate(pkt.compressed_payload)
    assert len(raw) == 2 * W * H
    assert np.array_equal(np.frombuffer(raw, "<u2").reshape(H, W), f.depth)


def test_keyframe_zero_frame_tiny():
    pkt = codec.encode_keyframe(flat(0))
    assert len(pkt.compressed_payload) < 1843


def test_keyframe_roundtrip():
    rng = np.random.default_rng(1)
    f = frame(rng.integers(0, 65536, W * H), 5)
    st_ = CodecState()
    assert codec.decode_packet(st_, codec.encode_keyframe(f)) == f


# ---- deltas ----


def test_unchanged_delta_is_compressed_zero_mask():
    enc = CodecState()
    codec.encode_keyframe(flat(900), enc)
    pkt = codec.encode_delta(enc, flat(900, 1))
    assert pkt.changed_count == 0 and pkt.base_frame_index == 0
    assert inflate(pkt.compressed_payload) == bytes(codec.mask_nbytes(W, H))


def test_delta_payload_layout():
    enc = CodecState(8, 2)
    base = frame(np.zeros(16), 0, 8, 2)
    codec.encode_keyframe(base, enc)
    cur = np.zeros(16, dtype=np.uint16)
    cur[1], cur[8], cur[15] = 0x0102, 0xFFFF, 3
    pkt = codec.encode_delta(enc, frame(cur, 1, 8, 2))
    assert inflate(pkt.compressed_payload) == bytes([0x02, 0x81]) + bytes([0x02, 0x01, 0xFF, 0xFF, 0x03, 0x00])
    assert pkt.changed_count == 3


def test_delta_sequencing():
    enc = CodecState()
    with pytest.raises(SequencingError):
        codec.encode_delta(enc, flat(1, 1))
    codec.encode_keyframe(flat(1, 0), enc)
    with pytest.raises(SequencingError):
        codec.encode_delta(enc, flat(1, 2))


def test_threshold_drift_holds_last_value():
    policy = ChangePolicy(threshold_mm=15)
    enc, dec = CodecState(policy=policy), CodecState()
    codec.decode_packet(dec, codec.encode_frame(enc, flat(1000)))
    for k in (1, 2, 3):
        src = flat(1000 + 10 * k, k)
        pkt = codec.encode_frame(enc, src)
        assert isinstance(pkt, DeltaPacket) and pkt.changed_count == 0
        out = codec.decode_packet(dec, pkt)
        assert np.abs(out.depth.astype(int) - src.depth.astype(int)).max() <= 30
        assert np.array_equal(out.depth, np.full((H, W), 1000))


def _brute_force_hold(frames, t):
    """Per-pixel reference model of the hold-last-value rule."""
    recon = frames[0].astype(int).copy()
    prev = frames[0].astype(int)
    outs = [recon.copy()]
    for cur in frames[1:]:
        cur = cur.astype(int)
        changed = np.abs(cur - prev) > t
        recon[changed] = cur[changed]
        prev = cur
        outs.append(recon.copy())
    return outs


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 20), st.integers(0, 2**32 - 1))
def test_threshold_matches_brute_force_model(t, seed):
    rng = np.random.default_rng(seed)
    base = rng.integers(500, 600, (6, 5))
    frames = [base + rng.integers(-25, 26, (6, 5)) * (k > 0) for k in range(8)]
    enc, dec = CodecState(5, 6, ChangePolicy(threshold_mm=t, keyframe_interval_frames=100)), CodecState(5, 6)
    expect = _brute_force_hold(frames, t)
    for k, f in enumerate(frames):
        out = codec.decode_packet(dec, codec.encode_frame(enc, frame(f, k, 5, 6)))
        assert np.array_equal(out.depth, expect[k])
        assert np.array_equal(enc.last_reconstructed.depth, out.depth)


def test_reconstruction_reference_caps_drift():
    policy = ChangePolicy(threshold_mm=15, reference="reconstruction")
    enc, dec = CodecState(policy=policy), CodecState()
    codec.decode_packet(dec, codec.encode_frame(enc, flat(1000)))
    for k in range(1, 6):
        src = flat(1000 + 10 * k, k)
        out = codec.decode_packet(dec, codec.encode_frame(enc, src))
        assert np.abs(out.depth.astype(int) - src.depth.astype(int)).max() <= 15


# ---- decode ----


def test_keyframe_then_empty_delta():
    enc, dec = CodecState(), CodecState()
    a = codec.decode_packet(dec, codec.encode_frame(enc, flat(700)))
    b = codec.decode_packet(dec, codec.encode_frame(enc, flat(700, 1)))
    assert np.array_equal(a.depth, b.depth) and b.frame_index == 1


def test_wrong_base_is_desync():
    enc, dec = CodecState(), CodecState()
    codec.encode_frame(enc, flat(1))
    pkt = codec.encode_frame(enc, flat(2, 1))
    with pytest.raises(DesyncError):
        codec.decode_packet(dec, pkt)


def test_corrupt_payload_is_decode_error():
    dec = CodecState()
    with pytest.raises(DecodeError):
        codec.decode_packet(dec, KeyframePacket(0, 0, b"\xff\xff\xff"))
    with pytest.raises(DecodeError):
        codec.decode_packet(dec, KeyframePacket(0, 0, deflate.compress(b"\x00" * 10)))


def test_delta_value_count_checked():
    enc, dec = CodecState(4, 1), CodecState(4, 1)
    codec.decode_packet(dec, codec.encode_frame(enc, frame([1, 1, 1, 1], 0, 4, 1)))
    bad = DeltaPacket(1, 0, 0, None, deflate.compress(bytes([0b0011]) + b"\x05\x00"))
    with pytest.raises(DecodeError):
        codec.decode_packet(dec, bad)
    lying = DeltaPacket(1, 0, 0, 2, deflate.compress(bytes([0b0001]) + b"\x05\x00"))
    with pytest.raises(DecodeError):
        codec.decode_packet(dec, lying)


def test_decode_returns_copy():
    enc, dec = CodecState(), CodecState()
    out = codec.decode_packet(dec, codec.encode_frame(enc, flat(5)))
    out.depth[0, 0] = 99
    assert dec.last_reconstructed.depth[0, 0] == 5


# ---- schedule ----


def test_schedule_rules():
    s = CodecState()
    assert codec.schedule(s) is codec.KEYFRAME
    codec.encode_keyframe(flat(1), s)
    s.frames_since_keyframe = 29
    assert codec.schedule(s) is codec.DELTA
    s.frames_since_keyframe = 30
    assert codec.schedule(s) is codec.KEYFRAME
    s.frames_since_keyframe = 3
    s.request_keyframe()
    assert codec.schedule(s) is codec.KEYFRAME


def test_keyframe_cadence_300_frames():
    s = CodecState(8, 8)
    kinds = [type(codec.encode_frame(s, flat(k % 7, k, 8, 8))) for k in range(300)]
    assert kinds.count(KeyframePacket) == 10
    assert [i for i, k in enumerate(kinds) if k is KeyframePacket] == list(range(0, 300, 30))


@pytest.mark.parametrize("interval", [1, 2, 7, 30, 301])
def test_keyframe_count_matches_interval(interval):
    s = CodecState(2, 2, ChangePolicy(keyframe_interval_frames=interval))
    n = sum(isinstance(codec.encode_frame(s, flat(1, k, 2, 2)), KeyframePacket) for k in range(300))
    assert n == -(-300 // interval)


# ---- properties ----

@settings(max_examples=60, deadline=None)
@given(st.data())
def test_lossless_stream_property(data):
    h, w = data.draw(st.tuples(st.integers(1, 7), st.integers(1, 9)))
    n = data.draw(st.integers(1, 12))
    interval = data.draw(st.integers(1, 6))
    frames = [data.draw(hnp.arrays(np.uint16, (h, w), elements=st.integers(0, 65535))) for _ in range(n)]
    enc, dec = CodecState(w, h, ChangePolicy(keyframe_interval_frames=interval)), CodecState(w, h)
    for k, d in enumerate(frames):
        pkt = codec.encode_frame(enc, frame(d, k, w, h))
        out = codec.decode_packet(dec, pkt)
        assert np.array_equal(out.depth, d)
        assert np.array_equal(out.depth, enc.last_reconstructed.depth)
        if isinstance(pkt, DeltaPacket):
            raw = inflate(pkt.compressed_payload)
            nmask = codec.mask_nbytes(w, h)
            popcount = sum(bin(b).count("1") for b in raw[:nmask])
            assert popcount == pkt.changed_count == (len(raw) - nmask) // 2


def test_determinism_same_bytes():
    rng = np.random.default_rng(4)
    frames = [frame(rng.integers(0, 3000, W * H), k) for k in range(3)]
    runs = []
    for _ in range(2):
        s = CodecState()
        runs.append([codec.encode_frame(s, f).compressed_payload for f in frames])
    assert runs[0] == runs[1]


def test_python_backend_codec_roundtrip(python_backend):
    enc, dec = CodecState(32, 16), CodecState(32, 16)
    rng = np.random.default_rng(2)
    for k in range(4):
        d = rng.integers(0, 50, (16, 32))
        assert np.array_equal(codec.decode_packet(dec, codec.encode_frame(enc, frame(d, k, 32, 16))).depth, d)
