"""Command line entry points.

Exit codes: 0 ok, 2 validation failure, 3 I/O failure. Every command is
non-interactive; --json switches reports to machine-readable output.
"""

from __future__ import annotations

import argparse
import json
import math
import random
import sys

from .analytics import compute_posture_trace, compute_stats, export_trace_csv
from .calibration import (
    CalibrationSample,
    GridFrame,
    GridLayout,
    default_grid,
    estimate_grid_frame,
    locate_cell,
)
from .engine import GameConfig
from .profiles import load_defaults
from .recorder import SessionWriter, read_session
from .session import make_header, run_scripted_session
from .skeleton import Vec3
from .sources import MovementScript, ScriptedSource

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3


def _load_json(path: str) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    host, _, port = args.listen.partition(":")
    app = create_app(args.root, default_source=args.source)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="info")
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        spec = _load_json(args.config)
        config = GameConfig.from_dict(spec["config"])
        if args.seed is not None:
            config = GameConfig.from_dict({**config.to_dict(), "seed": args.seed})
        grid = (
            GridFrame.from_dict(spec["grid"])
            if "grid" in spec
            else default_grid(config.layout)
        )
        script = MovementScript.from_dict(_load_json(args.script))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read inputs: {exc}", file=sys.stderr)
        return EXIT_IO
    except (KeyError, ValueError) as exc:
        print(f"invalid config/script: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    nickname = spec.get("nickname", "sim")
    source = ScriptedSource(script, grid, seed=config.seed)
    header = make_header(nickname, config, grid, started_at=spec.get("started_at"))
    writer = SessionWriter(args.out, header)
    run_scripted_session(config, grid, source, writer=writer)
    if writer.failed:
        print(f"recording failed: {writer.failure}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(writer.footer.summary, indent=None if args.json else 2, sort_keys=True))
    return EXIT_OK


def cmd_stats(args) -> int:
    try:
        log = read_session(args.session, tolerant=True)
    except OSError as exc:
        print(f"cannot read session: {exc}", file=sys.stderr)
        return EXIT_IO
    stats = compute_stats(log).to_dict()
    out = {
        "nickname": log.header.nickname,
        "started_at": log.header.started_at,
        "stats": stats,
        "footer_missing": log.footer is None,
        "skipped_records": log.skipped,
    }
    print(json.dumps(out, indent=None if args.json else 2, sort_keys=True))
    return EXIT_OK


def cmd_export_csv(args) -> int:
    try:
        log = read_session(args.session, tolerant=True)
        export_trace_csv(compute_posture_trace(log), args.out)
    except OSError as exc:
        print(f"export failed: {exc}", file=sys.stderr)
        return EXIT_IO
    print(args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        log = read_session(args.session, tolerant=True)
    except OSError as exc:
        print(f"cannot read session: {exc}", file=sys.stderr)
        return EXIT_IO
    recomputed = compute_stats(log).to_dict()
    report = {
        "session": str(args.session),
        "skipped_records": log.skipped,
        "footer_present": log.footer is not None,
        "recomputed": recomputed,
    }
    ok = True
    if log.footer is None:
        ok = False
        report["mismatch"] = "footer missing"
    elif log.footer.summary != recomputed:
        ok = False
        diffs = {
            k: {"stored": log.footer.summary.get(k), "recomputed": v}
            for k, v in recomputed.items()
            if log.footer.summary.get(k) != v
        }
        report["mismatch"] = diffs
    report["ok"] = ok
    print(json.dumps(report, indent=None if args.json else 2, sort_keys=True))
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_calib_test(args) -> int:
    rng = random.Random(args.seed)
    trials_ok = 0
    locate_ok = 0
    locate_total = 0
    worst = 0.0
    for _ in range(args.trials):
        pitch = rng.uniform(args.pitch_min, args.pitch_max)
        theta = rng.uniform(0.0, 2.0 * math.pi)
        ox = rng.uniform(-1.0, 1.0)
        oz = rng.uniform(1.0, 3.0)
        row = (math.sin(theta) * pitch, math.cos(theta) * pitch)
        col = (math.cos(theta) * pitch, -math.sin(theta) * pitch)

        def center(r, c):
            return Vec3(ox + r * row[0] + c * col[0], 0.0, oz + r * row[1] + c * col[1])

        def noisy(p):
            return Vec3(
                p.x + rng.uniform(-args.noise, args.noise),
                0.0,
                p.z + rng.uniform(-args.noise, args.noise),
            )

        samples = [
            CalibrationSample((0, 0), noisy(center(0, 0)), 0),
            CalibrationSample((0, 2), noisy(center(0, 2)), 1000),
            CalibrationSample((2, 0), noisy(center(2, 0)), 2000),
        ]
        grid = estimate_grid_frame(GridLayout.GRID3X3, samples)
        errs = [
            (grid.cell_center((r, c)) - center(r, c)).norm()
            for r in range(3)
            for c in range(3)
        ]
        worst = max(worst, max(errs))
        if max(errs) <= args.tolerance:
            trials_ok += 1
        for _ in range(args.queries):
            r, c = rng.randrange(3), rng.randrange(3)
            ang = rng.uniform(0.0, 2.0 * math.pi)
            rad = rng.uniform(0.0, 0.3 * pitch)
            q = center(r, c) + Vec3(rad * math.cos(ang), 0.0, rad * math.sin(ang))
            locate_total += 1
            if locate_cell(grid, q) == (r, c):
                locate_ok += 1

    report = {
        "trials": args.trials,
        "noise_half_width_m": args.noise,
        "tolerance_m": args.tolerance,
        "grid_ok_rate": trials_ok / args.trials,
        "locate_accuracy": locate_ok / locate_total if locate_total else None,
        "worst_center_error_m": worst,
    }
    print(json.dumps(report, indent=None if args.json else 2, sort_keys=True))
    return EXIT_OK


def cmd_defaults(args) -> int:
    print(json.dumps(load_defaults(), indent=None if args.json else 2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pillowgrid", description="pillow-grid rehabilitation game framework"
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="compact machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", parents=[common], help="run the therapist service")
    p.add_argument("--root", required=True, help="profile store directory")
    p.add_argument("--listen", default="127.0.0.1:8000", help="host:port")
    p.add_argument("--source", default="virtual", help="frame source descriptor")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("simulate", parents=[common], help="run a headless scripted game")
    p.add_argument("--config", required=True, help="JSON file: {nickname?, config, grid?}")
    p.add_argument("--script", required=True, help="JSON movement script")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", required=True, help="session log path to write")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("stats", parents=[common], help="print stats for a session file")
    p.add_argument("session")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("export-csv", parents=[common], help="export a session's posture trace")
    p.add_argument("session")
    p.add_argument("out")
    p.set_defaults(func=cmd_export_csv)

    p = sub.add_parser("verify", parents=[common], help="recompute a session footer and compare")
    p.add_argument("session")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("calib-test", parents=[common], help="Monte-Carlo calibration accuracy")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--noise", type=float, default=0.01, help="uniform noise half-width (m)")
    p.add_argument("--tolerance", type=float, default=0.04, help="center error bound (m)")
    p.add_argument("--pitch-min", type=float, default=0.4)
    p.add_argument("--pitch-max", type=float, default=0.8)
    p.add_argument("--queries", type=int, default=5, help="locate_cell queries per trial")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calib_test)

    p = sub.add_parser("defaults", parents=[common], help="print the shipped defaults")
    p.set_defaults(func=cmd_defaults)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
