"""Synthetic depth scenes, the TOF error model, and ``.d16`` raw streams.

Scenes are a static background (optionally tilted, like a table seen at an
angle) with flat or dome-shaped discs moving across it. Motion wraps
around the frame edges, so with integer velocities the number of pixels
that change between consecutive frames is constant over the whole run.
"""

from __future__ import annotations

import functools
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from voldepth.codec import DEFAULT_FPS, DEFAULT_HEIGHT, DEFAULT_WIDTH, DepthFrame
from voldepth.errors import FormatError, ParameterError

log = logging.getLogger(__name__)

RAW_MAGIC = b"VD16"
RAW_HEADER = struct.Struct("<4sHHHII")  # magic, width, height, fps, frame_count, reserved
assert RAW_HEADER.size == 18


@dataclass(frozen=True)
class Blob:
    radius_px: int
    depth_mm: int
    velocity_px_per_frame: tuple[int, int] = (1, 0)
    start: tuple[int, int] = (0, 0)  # (x, y) of the center at frame 0


@dataclass(frozen=True)
class SceneParams:
    """Scene description.

    When ``blobs`` is None the generator places discs itself so that the
    per-frame change fraction is as large as possible without exceeding
    ``target_change_fraction`` (and at least 80% of it).
    """

    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    fps: int = DEFAULT_FPS
    background_depth_mm: int = 1500
    background_tilt_mm_per_row: int = 1
    blobs: tuple[Blob, ...] | None = None
    target_change_fraction: float = 0.10
    blob_profile: str = "flat"
    dome_height_mm: int = 60
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1 or self.fps < 1:
            raise ParameterError("width, height and fps must be positive")
        if not 0.0 <= self.target_change_fraction <= 1.0:
            raise ParameterError("target_change_fraction must lie in [0, 1]")
        if self.blob_profile not in ("flat", "dome"):
            raise ParameterError(f"unknown blob profile {self.blob_profile!r}")
        max_bg = self.background_depth_mm + self.background_tilt_mm_per_row * (self.height - 1)
        if not (1 <= self.background_depth_mm <= 0xFFFF and 1 <= max_bg <= 0xFFFF):
            raise ParameterError("background depth outside the 16-bit range")
        if self.blobs is not None:
            for blob in self.blobs:
                _check_blob(blob, self.width, self.height)


def _check_blob(blob: Blob, width: int, height: int) -> None:
    if blob.radius_px < 0 or 2 * blob.radius_px + 1 > min(width, height):
        raise ParameterError(f"blob radius {blob.radius_px} does not fit a {width}x{height} frame")
    if not 1 <= blob.depth_mm <= 0xFFFF:
        raise ParameterError(f"blob depth {blob.depth_mm} outside the 16-bit range")


def _disc_row_halfwidths(radius: int) -> list[int]:
    return [math.isqrt(radius * radius - dy * dy) for dy in range(-radius, radius + 1)]


def _flat_change_count(radius: int, shift: int) -> int:
    """Pixels flipping in or out of a disc moved horizontally by ``shift``."""
    return 2 * sum(min(2 * a + 1, shift) for a in _disc_row_halfwidths(radius))


def _change_count(radius: int, shift: int, profile: str, dome_mm: int) -> int:
    if profile == "flat":
        return _flat_change_count(radius, shift)
    return _dome_change_count(radius, shift, dome_mm)


@functools.lru_cache(maxsize=64)
def _calibrate(width: int, height: int, target_px: int, profile: str, dome_mm: int):
    """Layout of identical discs whose change count lies in [0.8, 1] x target.

    Prefers the largest radius, then (once within 5% of the target) the
    fewest discs. Targets too small for that band get the closest layout
    below them. Returns (radius, velocity, n_blobs, per_band).
    """
    fallback = None
    for radius in range(min(width, height) // 6, -1, -1):
        diameter = 2 * radius + 1
        n_bands = height // diameter
        best = None
        for v in range(1, min(diameter, width - diameter) + 1):
            per_blob = _change_count(radius, v, profile, dome_mm)
            per_band = width // (diameter + v)
            n = min(target_px // per_blob, n_bands * per_band) if per_blob else 0
            if n == 0:
                continue
            total = n * per_blob
            close = total >= 0.95 * target_px
            key = (close, -n if close else total, total)
            if best is None or key > best[0]:
                best = (key, v, n, per_band)
        if best is None:
            continue
        if best[0][2] >= 0.8 * target_px:
            return radius, best[1], best[2], best[3]
        if fallback is None or best[0][2] > fallback[0]:
            fallback = (best[0][2], radius, best[1], best[2], best[3])
    if fallback is None:
        raise ParameterError(f"cannot lay out discs changing {target_px} pixels per frame")
    log.warning("change target of %d px per frame is too fine; using %d px", target_px, fallback[0])
    return fallback[1:]


def resolve_blobs(params: SceneParams) -> tuple[Blob, ...]:
    """Explicit blobs, or a seeded layout calibrated to the target change fraction."""
    if params.blobs is not None:
        return params.blobs
    target_px = int(params.target_change_fraction * params.width * params.height + 1e-9)
    if target_px == 0:
        return ()
    radius, v, n, per_band = _calibrate(
        params.width, params.height, target_px, params.blob_profile, params.dome_height_mm
    )
    rng = np.random.default_rng(params.seed)
    n_bands = -(-n // per_band)
    band_h = params.height // n_bands
    spacing = params.width // per_band
    x0 = int(rng.integers(0, params.width))
    near = max(1, params.background_depth_mm - 800)
    far = max(near + 1, params.background_depth_mm - 300)
    blobs = []
    for i in range(n):
        band, slot = divmod(i, per_band)
        blobs.append(
            Blob(
                radius_px=radius,
                depth_mm=int(rng.integers(near, far)),
                velocity_px_per_frame=(v, 0),
                start=((x0 + slot * spacing) % params.width, band * band_h + band_h // 2),
            )
        )
    return tuple(blobs)


def _render_blob(depth: np.ndarray, blob: Blob, cx: int, cy: int, profile: str, dome_mm: int) -> None:
    h, w = depth.shape
    r = blob.radius_px
    ys = (np.arange(cy - r, cy + r + 1) % h)[:, None]
    xs = (np.arange(cx - r, cx + r + 1) % w)[None, :]
    dy = np.arange(-r, r + 1)[:, None]
    dx = np.arange(-r, r + 1)[None, :]
    rho2 = dx * dx + dy * dy
    inside = rho2 <= r * r
    if profile == "dome" and r > 0:
        bulge = np.rint(dome_mm * np.sqrt(np.clip(1.0 - rho2 / (r * r), 0.0, 1.0)))
        surface = np.clip(blob.depth_mm - bulge, 1, 0xFFFF).astype(np.uint16)
    else:
        surface = np.full(inside.shape, blob.depth_mm, np.uint16)
    patch = depth[ys, xs]
    depth[ys, xs] = np.where(inside, np.minimum(patch, surface), patch)


@functools.lru_cache(maxsize=4096)
def _dome_change_count(radius: int, v: int, dome_mm: int) -> int:
    size = 4 * radius + 4 + v
    blob = Blob(radius, 1000, (v, 0))
    a = np.full((2 * radius + 3, size), 2000, np.uint16)
    b = a.copy()
    _render_blob(a, blob, radius + 1, radius + 1, "dome", dome_mm)
    _render_blob(b, blob, radius + 1 + v, radius + 1, "dome", dome_mm)
    return int(np.count_nonzero(a != b))


def background(params: SceneParams) -> np.ndarray:
    rows = np.arange(params.height, dtype=np.int64) * params.background_tilt_mm_per_row
    col = (params.background_depth_mm + rows).astype(np.uint16)
    return np.repeat(col[:, None], params.width, axis=1)


def synth_frame(params: SceneParams, frame_index: int, blobs: tuple[Blob, ...] | None = None) -> DepthFrame:
    """Render frame ``frame_index``; pure function of ``params``.

    ``blobs`` may pass a precomputed :func:`resolve_blobs` result.
    """
    if frame_index < 0:
        raise ParameterError("frame_index must be >= 0")
    if blobs is None:
        blobs = resolve_blobs(params)
    depth = background(params)
    for blob in blobs:
        vx, vy = blob.velocity_px_per_frame
        cx = (blob.start[0] + vx * frame_index) % params.width
        cy = (blob.start[1] + vy * frame_index) % params.height
        _render_blob(depth, blob, cx, cy, params.blob_profile, params.dome_height_mm)
    return DepthFrame(params.width, params.height, frame_index, frame_timestamp_us(frame_index, params.fps), depth)


def frame_timestamp_us(frame_index: int, fps: int) -> int:
    return frame_index * 1_000_000 // fps


@dataclass(frozen=True)
class NoiseModel:
    """Systematic TOF error ``offset + gain * d`` plus optional Gaussian jitter.

    The systematic part is truncated toward zero when applied, so the
    injected error never exceeds ``offset + gain * d``.
    """

    bias_offset_mm: float = 11.0
    bias_gain: float = 0.001
    jitter_stddev_mm: float = 0.0
    seed: int = 0

    def bias(self, depth_mm):
        return self.bias_offset_mm + self.bias_gain * np.asarray(depth_mm, dtype=np.float64)


def apply_noise(frame: DepthFrame, model: NoiseModel, frame_index: int | None = None) -> DepthFrame:
    if frame_index is None:
        frame_index = frame.frame_index
    d = frame.depth.astype(np.int64)
    valid = d > 0
    noisy = d + np.trunc(model.bias(d)).astype(np.int64)
    if model.jitter_stddev_mm > 0:
        rng = np.random.default_rng([model.seed, frame_index])
        noisy += np.rint(rng.normal(0.0, model.jitter_stddev_mm, d.shape)).astype(np.int64)
    out = np.where(valid, np.clip(noisy, 1, 0xFFFF), 0).astype(np.uint16)
    return DepthFrame(frame.width, frame.height, frame.frame_index, frame.timestamp_us, out)


@dataclass
class DepthStream:
    width: int
    height: int
    fps: int = DEFAULT_FPS
    frames: list[DepthFrame] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)


def generate_stream(params: SceneParams, n_frames: int, noise: NoiseModel | None = None) -> DepthStream:
    blobs = resolve_blobs(params)
    frames = []
    for k in range(n_frames):
        frame = synth_frame(params, k, blobs)
        if noise is not None:
            frame = apply_noise(frame, noise, k)
        frames.append(frame)
    return DepthStream(params.width, params.height, params.fps, frames)


def measured_change_fractions(stream: DepthStream, threshold_mm: int = 0) -> list[float]:
    """Per-transition fraction of pixels changing by more than ``threshold_mm``."""
    out = []
    npix = stream.width * stream.height
    for prev, cur in zip(stream.frames, stream.frames[1:]):
        diff = np.abs(cur.depth.astype(np.int32) - prev.depth.astype(np.int32))
        out.append(int(np.count_nonzero(diff > threshold_mm)) / npix)
    return out


def dump_raw(stream: DepthStream) -> bytes:
    parts = [RAW_HEADER.pack(RAW_MAGIC, stream.width, stream.height, stream.fps, len(stream.frames), 0)]
    for frame in stream.frames:
        if (frame.width, frame.height) != (stream.width, stream.height):
            raise ParameterError("all frames of a stream must share its geometry")
        parts.append(frame.to_bytes())
    return b"".join(parts)


def load_raw(buf: bytes) -> DepthStream:
    if len(buf) < RAW_HEADER.size:
        raise FormatError("file shorter than the 18-byte header")
    magic, width, height, fps, count, reserved = RAW_HEADER.unpack_from(buf)
    if magic != RAW_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if reserved != 0:
        raise FormatError("reserved header field is not zero")
    if width == 0 or height == 0 or fps == 0:
        raise FormatError("zero geometry or frame rate in header")
    frame_bytes = 2 * width * height
    expected = RAW_HEADER.size + count * frame_bytes
    if len(buf) < expected:
        raise FormatError(f"truncated: {len(buf)} bytes, header promises {expected}")
    if len(buf) > expected:
        raise FormatError(f"{len(buf) - expected} trailing bytes after the last frame")
    frames = []
    for k in range(count):
        off = RAW_HEADER.size + k * frame_bytes
        depth = np.frombuffer(buf, "<u2", count=width * height, offset=off).astype(np.uint16)
        frames.append(DepthFrame(width, height, k, frame_timestamp_us(k, fps), depth))
    return DepthStream(width, height, fps, frames)


def write_raw(path: str | Path, stream: DepthStream) -> None:
    Path(path).write_bytes(dump_raw(stream))


def read_raw(path: str | Path) -> DepthStream:
    return load_raw(Path(path).read_bytes())
