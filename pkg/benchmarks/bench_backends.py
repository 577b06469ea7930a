"""Compare the compiled and pure-Python DEFLATE backends on 320x288 depth frames.

    python3 benchmarks/bench_backends.py [--frames N] [--repeat R]

Reports per-frame compress/decompress time for raw keyframe payloads and
full codec encode+decode per frame, for each available backend.
"""

from __future__ import annotations

import argparse
import statistics
import time
import zlib

from voldepth import deflate, metrics, scene


def _time(fn, arg, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(arg)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=30)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    stream = scene.generate_stream(scene.SceneParams(seed=1), args.frames)
    raw = [f.to_bytes() for f in stream.frames]
    print(f"{len(raw)} frames of {len(raw[0])} bytes; zlib ratio {len(zlib.compress(raw[0], 6)) / len(raw[0]):.4f}")
    print(f"{'backend':8} {'deflate ms':>11} {'inflate ms':>11} {'ratio':>7} {'codec ms/frame':>15}")
    results = {}
    for name in deflate.available_backends():
        impl = deflate.get_backend(name)
        # the fallback is ~100x slower, so it gets a prefix of the stream
        frames = raw if name == "native" else raw[: max(1, len(raw) // 10)]
        comp = [impl.compress(b) for b in frames]
        c_ms = statistics.fmean(_time(impl.compress, b, args.repeat) for b in frames)
        d_ms = statistics.fmean(_time(impl.decompress, c, args.repeat) for c in comp)
        ratio = sum(map(len, comp)) / sum(map(len, frames))
        previous = deflate.use_backend(name)
        try:
            bench = metrics.encode_bench(stream.frames if name == "native" else stream.frames[:10])
        finally:
            deflate.use_backend(previous)
        codec_ms = bench.mean_encode_ms + bench.mean_decode_ms
        results[name] = c_ms
        print(f"{name:8} {c_ms:11.3f} {d_ms:11.3f} {ratio:7.4f} {codec_ms:15.3f}")
    if len(results) == 2:
        print(f"native speedup on compress: {results['python'] / results['native']:.1f}x")


if __name__ == "__main__":
    main()
