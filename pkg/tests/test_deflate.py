import os
import random
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voldepth import _huffman, deflate
from voldepth.errors import DeflateError


def zlib_raw_compress(data: bytes, level: int = 6) -> bytes:
    c = zlib.compressobj(level, zlib.DEFLATED, -15)
    return c.compress(data) + c.flush()


def zlib_raw_decompress(data: bytes) -> bytes:
    d = zlib.decompressobj(-15)
    out = d.decompress(data) + d.flush()
    assert d.eof and not d.unused_data
    return out


SAMPLES = [
    b"",
    b"a",
    b"ab" * 3,
    bytes(184320),
    bytes(range(256)) * 300,
    os.urandom(70000),
    b"abracadabra " * 5000,
    np.arange(320 * 288, dtype="<u2").tobytes(),
]


@pytest.mark.parametrize("data", SAMPLES, ids=lambda d: f"{len(d)}B")
def test_zlib_reads_ours(backend, data):
    assert zlib_raw_decompress(backend.compress(data)) == data


@pytest.mark.parametrize("level", [0, 1, 6, 9])
@pytest.mark.parametrize("data", SAMPLES, ids=lambda d: f"{len(d)}B")
def test_we_read_zlib(backend, data, level):
    assert backend.decompress(zlib_raw_compress(data, level)) == data


def test_zlib_fixed_huffman_strategy(backend):
    data = b"hello hello hello world " * 40
    c = zlib.compressobj(9, zlib.DEFLATED, -15, 9, zlib.Z_FIXED)
    assert backend.decompress(c.compress(data) + c.flush()) == data


def test_zlib_multiblock_with_sync_flush(backend):
    c = zlib.compressobj(6, zlib.DEFLATED, -15)
    parts = [os.urandom(1000), b"x" * 5000, os.urandom(10)]
    stream = b"".join(c.compress(p) + c.flush(zlib.Z_SYNC_FLUSH) for p in parts) + c.flush()
    assert backend.decompress(stream) == b"".join(parts)


def test_backends_emit_identical_bytes():
    if "native" not in deflate.available_backends():
        pytest.skip("extension not built")
    nat, py = deflate.get_backend("native"), deflate.get_backend("python")
    rng = random.Random(5)
    for n in (0, 1, 3, 100, 5000, 40000):
        data = bytes(rng.choice(b"abcde\x00") for _ in range(n))
        assert nat.compress(data) == py.compress(data)


def test_zero_frame_compresses_below_one_percent(backend):
    zeros = bytes(184320)
    # the reference compressor sets the bar: well under 1% of the input
    assert len(zlib_raw_compress(zeros)) < 1843
    assert len(backend.compress(zeros)) < 1843


def test_ramp_frame_shrinks(backend):
    ramp = (np.arange(288)[:, None] + np.arange(320)[None, :] // 8).astype("<u2").tobytes()
    assert len(zlib_raw_compress(ramp)) < len(ramp)
    assert len(backend.compress(ramp)) < len(ramp)


def test_incompressible_input_falls_back_to_stored(backend):
    data = os.urandom(200000)
    out = backend.compress(data)
    # a block closes every 16384 symbols; stored framing costs 5 bytes each
    assert len(out) <= len(data) + 5 * (len(data) // 16384 + 1)


def test_accepts_buffer_objects():
    arr = np.arange(1000, dtype=np.uint16)
    assert deflate.decompress(deflate.compress(arr)) == arr.tobytes()
    assert deflate.decompress(bytearray(deflate.compress(b"xyz"))) == b"xyz"


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=3000))
def test_roundtrip_property(data):
    out = deflate.compress(data)
    assert deflate.decompress(out) == data
    assert zlib_raw_decompress(out) == data


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from([b"ab", b"abc", b"\x00" * 7, b"xyzzy", b"\xff"]), max_size=400))
def test_repetitive_roundtrip_property(chunks):
    data = b"".join(chunks)
    assert zlib_raw_decompress(deflate.compress(data)) == data


# ---- malformed streams ----

BAD_STREAMS = {
    "empty": b"",
    "reserved-btype": bytes([0b111]),
    "stored-nlen-mismatch": bytes([0x01, 0x05, 0x00, 0x00, 0x00]) + b"hello",
    "stored-truncated": bytes([0x01, 0x05, 0x00, 0xFA, 0xFF]) + b"he",
    "no-final-block": bytes([0x00, 0x00, 0x00, 0xFF, 0xFF]),
    "trailing-garbage": zlib_raw_compress(b"abc") + b"\x00",
    "truncated-fixed": zlib_raw_compress(b"hello world, hello world", 9)[:-2],
}


@pytest.mark.parametrize("name", sorted(BAD_STREAMS))
def test_malformed_rejected(backend, name):
    with pytest.raises(DeflateError):
        backend.decompress(BAD_STREAMS[name])


def _bits_to_bytes(bits):
    out = bytearray()
    for i in range(0, len(bits), 8):
        byte = 0
        for j, b in enumerate(bits[i:i + 8]):
            byte |= b << j
        out.append(byte)
    return bytes(out)


def _put(bits, value, n):
    bits.extend((value >> i) & 1 for i in range(n))


def _put_code(bits, code, n):
    # Huffman codes go most-significant bit first
    bits.extend((code >> (n - 1 - i)) & 1 for i in range(n))


def test_distance_beyond_output_rejected(backend):
    bits = []
    _put(bits, 1, 1)
    _put(bits, 1, 2)  # fixed
    _put_code(bits, 0b00110000 + ord("a"), 8)
    _put_code(bits, 0b0000001, 7)  # length 3
    _put_code(bits, 5, 5)  # distance code 5 -> 7..8
    _put(bits, 0, 1)
    _put_code(bits, 0, 7)
    with pytest.raises(DeflateError):
        backend.decompress(_bits_to_bytes(bits))


def test_fixed_literal_286_rejected(backend):
    bits = []
    _put(bits, 1, 1)
    _put(bits, 1, 2)
    _put_code(bits, 0b11000000 + (286 - 280), 8)
    with pytest.raises(DeflateError):
        backend.decompress(_bits_to_bytes(bits))


def test_oversubscribed_code_lengths_rejected(backend):
    bits = []
    _put(bits, 1, 1)
    _put(bits, 2, 2)  # dynamic
    _put(bits, 0, 5)
    _put(bits, 0, 5)
    _put(bits, 15, 4)  # 19 code-length codes
    for _ in range(19):
        _put(bits, 1, 3)  # 19 codes of length 1: over-subscribed
    with pytest.raises(DeflateError):
        backend.decompress(_bits_to_bytes(bits) + bytes(8))


def test_random_garbage_never_crashes(backend):
    rng = random.Random(9)
    for _ in range(300):
        blob = bytes(rng.randrange(256) for _ in range(rng.randrange(1, 60)))
        try:
            out = backend.decompress(blob)
        except DeflateError:
            continue
        assert zlib_raw_decompress(blob) == out


# ---- huffman helpers ----


def test_limited_lengths_respect_cap_and_kraft():
    freqs = [2 ** i for i in range(25)]
    lengths = _huffman.limited_lengths(freqs, 15)
    assert max(lengths) <= 15
    assert sum(2.0 ** -l for l in lengths if l) == pytest.approx(1.0)


@given(st.lists(st.integers(0, 1000), min_size=2, max_size=300))
def test_tree_lengths_complete_when_two_or_more_symbols(freqs):
    lengths = _huffman.tree_lengths(freqs, 15)
    used = [l for l in lengths if l]
    assert len(used) >= 2
    assert sum(2.0 ** -l for l in used) == pytest.approx(1.0)
    assert all(l == 0 for f, l in zip(freqs, lengths) if f == 0) or sum(1 for f in freqs if f) < 2


def test_backend_env_override():
    import subprocess
    import sys

    out = subprocess.run(
        [sys.executable, "-c", "from voldepth import deflate; print(deflate.BACKEND)"],
        env={**os.environ, "VOLDEPTH_BACKEND": "python"}, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
