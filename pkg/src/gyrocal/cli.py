"""Command-line pipeline: simulate -> calibrate -> montecarlo / ba-refine.

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError

from . import ba, calibrator, io, simulator
from .calibrator import INTRINSIC_NAMES
from .ekf import UpdateRejectedError

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # Usage problems are input errors.
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _cmd_simulate(args) -> int:
    sim_cfg, _ = io.load_run_config(args.config)
    seed = args.seed if args.seed is not None else sim_cfg.seed
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = simulator.simulate(sim_cfg, seed)
    io.write_gyro_log(data.gyro, out_dir / "gyro.csv")
    io.write_track_log(data.frames, out_dir / "tracks.csv")
    io.write_ground_truth(data.truth, sim_cfg, seed, out_dir / "groundtruth.json")
    n_obs = sum(len(f.observations) for f in data.frames)
    print(
        f"simulated {len(data.gyro)} gyro samples, {len(data.frames)} frames, "
        f"{n_obs} observations (seed {seed}) -> {out_dir}"
    )
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    _, calib_cfg = io.load_run_config(args.config)
    gyro = io.read_gyro_log(args.gyro)
    frames = io.read_track_log(args.tracks)
    report = calibrator.run(gyro, frames, calib_cfg)
    report_path, trace_path = io.write_report(report, args.out)
    intr = report.final_intrinsics
    print(
        f"calibrated {report.n_frames} frames: "
        f"fx={intr.fx:.2f} fy={intr.fy:.2f} cx={intr.cx:.2f} cy={intr.cy:.2f} "
        f"k1={intr.k1:.5f} k2={intr.k2:.5f}"
    )
    print(f"report -> {report_path}, trace -> {trace_path}")
    return EXIT_OK


def _cmd_montecarlo(args) -> int:
    sim_cfg, calib_cfg = io.load_run_config(args.config)
    n_trials = args.trials if args.trials is not None else sim_cfg.n_trials
    base_seed = args.seed if args.seed is not None else sim_cfg.seed
    result = simulator.run_monte_carlo(
        sim_cfg, calib_cfg, n_trials=n_trials, base_seed=base_seed, keep_reports=False
    )
    io.write_mc_result(result, args.out)
    print(f"{n_trials} trials (base seed {base_seed})")
    print("parameter  initial_rmse  final_rmse")
    for name in INTRINSIC_NAMES:
        print(f"{name:<9}  {result.initial_rmse[name]:>12.4f}  {result.rmse[name]:>10.4f}")
    print(f"table -> {args.out}")
    return EXIT_OK


def _cmd_ba_refine(args) -> int:
    io.read_gyro_log(args.gyro)  # validated for completeness of the recorded pair
    frames = io.read_track_log(args.tracks)
    report = io.read_report(args.init)
    problem = ba.problem_from_calibration(
        frames,
        report,
        max_frames=args.max_frames,
        optimize_distortion=not args.no_distortion,
    )
    solution = ba.solve(problem)
    io.write_ba_result(solution, args.out)
    intr = solution.intrinsics
    print(
        f"refined over {len(problem.poses)} frames, {len(problem.observations)} observations: "
        f"fx={intr.fx:.3f} fy={intr.fy:.3f} cx={intr.cx:.3f} cy={intr.cy:.3f}"
    )
    print(
        f"cost {solution.initial_cost:.4g} -> {solution.cost:.4g} px^2 "
        f"in {solution.n_iterations} iterations ({solution.message})"
    )
    print(f"result -> {args.out}")
    if solution.message == "normal equations breakdown":
        return EXIT_NUMERICAL
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="gyrocal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic gyro log and feature tracks")
    p.add_argument("--config", default=None, help="run configuration JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("calibrate", help="run the filter on recorded logs")
    p.add_argument("--gyro", required=True)
    p.add_argument("--tracks", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="report JSON path (trace CSV written alongside)")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("montecarlo", help="repeated simulate+calibrate trials with an RMSE table")
    p.add_argument("--config", default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_montecarlo)

    p = sub.add_parser("ba-refine", help="batch refinement starting from a filter report")
    p.add_argument("--gyro", required=True)
    p.add_argument("--tracks", required=True)
    p.add_argument("--init", required=True, help="calibration report JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--max-frames", type=int, default=150)
    p.add_argument("--no-distortion", action="store_true", help="hold k1, k2 fixed")
    p.set_defaults(func=_cmd_ba_refine)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UpdateRejectedError, LinAlgError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (io.InputError, FileNotFoundError, IsADirectoryError, PermissionError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
