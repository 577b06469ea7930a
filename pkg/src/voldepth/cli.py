"""``voldepth`` command line.

Exit codes: 0 success, 1 usage or parameter error, 2 malformed input
file, 3 simulation setup error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from voldepth import deflate, metrics, netsim, scene, session, transport
from voldepth.codec import ChangePolicy
from voldepth.errors import DecodeError, DeflateError, FormatError, ParameterError, TopologyError

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_SIM = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not within [0, 1]")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text} must be a positive integer")
    return value


def _nonneg(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"{text} must be >= 0")
    return value


def _policy(args, base: ChangePolicy | None = None) -> ChangePolicy:
    base = base or ChangePolicy()
    changes = {}
    if args.threshold_mm is not None:
        changes["threshold_mm"] = args.threshold_mm
    if args.keyframe_interval is not None:
        changes["keyframe_interval_frames"] = args.keyframe_interval
    return dataclasses.replace(base, **changes)


def _write(path: str, data: str | bytes) -> None:
    p = Path(path)
    if isinstance(data, bytes):
        p.write_bytes(data)
    else:
        p.write_text(data)


# ---- subcommands ----


def cmd_gen(args) -> int:
    params = scene.SceneParams(width=args.width, height=args.height, fps=args.fps,
                               target_change_fraction=args.change, blob_profile=args.profile, seed=args.seed)
    noise = None
    if args.noise:
        noise = scene.NoiseModel(jitter_stddev_mm=args.jitter_mm, seed=args.seed)
    stream = scene.generate_stream(params, args.frames, noise)
    scene.write_raw(args.out, stream)
    fractions = scene.measured_change_fractions(stream)
    peak = max(fractions, default=0.0)
    print(f"wrote {len(stream)} frames {args.width}x{args.height}@{args.fps} to {args.out} "
          f"(max change fraction {peak:.4f})")
    return EXIT_OK


def cmd_encode(args) -> int:
    stream = scene.read_raw(args.input)
    msgs = transport.encode_stream(stream.frames, stream.width, stream.height, _policy(args))
    size = transport.write_vds(args.output, msgs)
    keyframes = sum(1 for m in msgs if m.msg_type == transport.MsgType.KEYFRAME)
    print(f"encoded {len(msgs)} frames ({keyframes} keyframes) into {size} bytes")
    return EXIT_OK


def cmd_decode(args) -> int:
    msgs = transport.read_vds(args.input)
    frames = transport.decode_stream(msgs, args.width, args.height)
    scene.write_raw(args.output, scene.DepthStream(args.width, args.height, args.fps, frames))
    print(f"decoded {len(frames)} frames to {args.output}")
    return EXIT_OK


def _session_spec(args) -> session.SessionSpec:
    if args.session:
        spec = session.SessionSpec.load(args.session)
    else:
        spec = session.SessionSpec.default(args.instructors or 1)
    changes = {"policy": _policy(args, spec.policy)}
    if args.seed is not None:
        changes["seed"] = args.seed
    return dataclasses.replace(spec, **changes)


def cmd_simulate(args) -> int:
    spec = _session_spec(args)
    result = session.run(spec, args.duration)
    report = session.session_report(result)
    if args.trace:
        _write(args.trace, netsim.trace_to_ndjson(result.trace))
    if args.report:
        _write(args.report, metrics.report_to_json(report))
    if args.csv:
        series = {name: metrics.bitrate_windows([r for r in result.trace if r["link"] == name])
                  for name in result.links}
        _write(args.csv, metrics.windows_to_csv(series))
    if args.record_dir:
        out = Path(args.record_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, rec in result.remotes.items():
            transport.write_vds(out / f"{name}.vds", rec.messages)
    if not (args.report or args.trace):
        print(metrics.report_to_json(report), end="")
    else:
        delivered = {k: v["frames_delivered"] for k, v in report["depth"]["receivers"].items()}
        print(f"simulated {args.duration:g} s: depth frames delivered {delivered}, "
              f"queue growth {'yes' if report['queue_growth'] else 'no'}")
    return EXIT_OK


def cmd_bench(args) -> int:
    previous = deflate.BACKEND
    if args.backend:
        try:
            deflate.use_backend(args.backend)
        except ParameterError as exc:
            raise UsageError(str(exc)) from exc
    try:
        params = scene.SceneParams(width=args.width, height=args.height, target_change_fraction=args.change,
                                   seed=args.seed)
        stream = scene.generate_stream(params, args.frames)
        result = metrics.encode_bench(stream.frames, _policy(args))
        summary = {"backend": deflate.BACKEND, **result.summary()}
    finally:
        deflate.use_backend(previous)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_stats(args) -> int:
    path = Path(args.input)
    if path.suffix == ".vds":
        msgs = transport.read_vds(path)
        records = metrics.message_records(msgs)
        series = {"DEPTH": metrics.bitrate_windows(records)}
        total = sum(r["bytes"] for r in records)
        summary = {"messages": len(msgs), "bytes": total,
                   "keyframes": sum(1 for m in msgs if m.msg_type == transport.MsgType.KEYFRAME)}
    else:
        try:
            trace = netsim.trace_from_ndjson(path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not a trace file: {exc}") from exc
        fields = {"time_us", "link", "channel", "seq", "bytes", "event"}
        if not all(isinstance(r, dict) and fields <= r.keys() for r in trace):
            raise FormatError(f"{path}: trace records need fields {sorted(fields)}")
        names = sorted({r["link"] for r in trace})
        series = {n: metrics.bitrate_windows([r for r in trace if r["link"] == n]) for n in names}
        sends = [r for r in trace if r["event"] == "send"]
        summary = {"messages": len(sends), "bytes": sum(r["bytes"] for r in sends), "links": names}
    summary["max_window_bps"] = {k: max((b for _, b in v), default=0.0) for k, v in series.items()}
    if args.csv:
        _write(args.csv, metrics.windows_to_csv(series))
    if args.json:
        _write(args.json, metrics.report_to_json(summary))
    if not (args.csv or args.json):
        print(metrics.report_to_json(summary), end="")
    return EXIT_OK


# ---- parser ----


def _add_policy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threshold-mm", type=_nonneg, default=None, help="change threshold (default 0, lossless)")
    p.add_argument("--keyframe-interval", type=_positive, default=None, help="frames between keyframes (default 30)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="voldepth", description="Depth video codec and telepresence session simulator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a synthetic .d16 depth stream")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=_nonneg, default=300)
    p.add_argument("--change", type=_fraction, default=0.10, help="target per-frame change fraction")
    p.add_argument("--width", type=_positive, default=320)
    p.add_argument("--height", type=_positive, default=288)
    p.add_argument("--fps", type=_positive, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", choices=("flat", "dome"), default="flat")
    p.add_argument("--noise", action="store_true", help="add the systematic sensor error")
    p.add_argument("--jitter-mm", type=float, default=0.0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("encode", help="encode .d16 into a .vds message stream")
    p.add_argument("input")
    p.add_argument("output")
    _add_policy_flags(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a .vds stream back to .d16")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--width", type=_positive, default=320)
    p.add_argument("--height", type=_positive, default=288)
    p.add_argument("--fps", type=_positive, default=30)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("simulate", help="run a session over the simulated network")
    p.add_argument("--session", help="session JSON (default: built-in single-instructor session)")
    p.add_argument("--duration", type=float, default=10.0, help="seconds")
    p.add_argument("--instructors", type=_positive, default=None, help="instructor pairs for the default session")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trace", help="NDJSON trace output")
    p.add_argument("--report", help="JSON report output")
    p.add_argument("--csv", help="per-link bitrate windows as CSV")
    p.add_argument("--record-dir", help="write each remote computer's received depth stream as .vds")
    _add_policy_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="time encode and decode per frame")
    p.add_argument("--frames", type=_positive, default=90)
    p.add_argument("--change", type=_fraction, default=0.10)
    p.add_argument("--width", type=_positive, default=320)
    p.add_argument("--height", type=_positive, default=288)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", choices=("native", "python"))
    _add_policy_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("stats", help="bitrate report for a .vds file or an NDJSON trace")
    p.add_argument("input")
    p.add_argument("--csv")
    p.add_argument("--json")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "simulate" and args.duration < 0:
        parser.error("--duration must be >= 0")
    try:
        return args.func(args)
    except (UsageError, ParameterError) as exc:
        print(f"voldepth: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DecodeError, DeflateError) as exc:
        print(f"voldepth: {args.command}: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"voldepth: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (TopologyError, json.JSONDecodeError) as exc:
        print(f"voldepth: {args.command}: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
