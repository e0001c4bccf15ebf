"""File formats: CSV streams, JSON reports, and run configuration.

Gyro logs are CSV with header ``t,wx,wy,wz``; track logs use
``t,feature_id,u,v`` with rows grouped into frames by identical timestamp.
Lines starting with ``#`` are comments. Readers reject malformed input with
the offending line number instead of coercing it. Floats are written with 12
significant digits, so write/read round trips preserve values well past 9
significant digits.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .calibrator import (
    INTRINSIC_NAMES,
    CalibrationReport,
    CalibratorConfig,
    InitialStds,
)
from .camera import Intrinsics
from .dynamics import ProcessNoiseConfig
from .simulator import GroundTruth, SimConfig, sim_config_echo
from .streams import Frame, FeatureObservation, GyroSample

_FLOAT_FMT = "{:.12g}"

GYRO_HEADER = "t,wx,wy,wz"
TRACK_HEADER = "t,feature_id,u,v"


class InputError(ValueError):
    """Malformed or inconsistent input file."""


def _data_lines(path):
    """Yield (line_number, stripped_text) skipping blanks and comments."""
    with open(path, "r", encoding="utf-8") as fh:
        for number, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            yield number, text


def _parse_floats(fields, path, number):
    try:
        return [float(f) for f in fields]
    except ValueError as exc:
        raise InputError(f"{path}:{number}: malformed number in row {fields!r}") from exc


def read_gyro_log(path) -> list:
    """Parse a gyro CSV into timestamped samples; timestamps must strictly increase."""
    samples = []
    last_t = None
    saw_header = False
    for number, text in _data_lines(path):
        if not saw_header:
            if text.replace(" ", "") != GYRO_HEADER:
                raise InputError(f"{path}:{number}: expected header '{GYRO_HEADER}', got {text!r}")
            saw_header = True
            continue
        fields = text.split(",")
        if len(fields) != 4:
            raise InputError(f"{path}:{number}: expected 4 fields, got {len(fields)}")
        t, wx, wy, wz = _parse_floats(fields, path, number)
        if not all(np.isfinite([t, wx, wy, wz])):
            raise InputError(f"{path}:{number}: non-finite value")
        if last_t is not None and t <= last_t:
            raise InputError(f"{path}:{number}: timestamp {t!r} not after {last_t!r}")
        last_t = t
        samples.append(GyroSample(t, np.array([wx, wy, wz])))
    if not saw_header:
        raise InputError(f"{path}: empty file, expected header '{GYRO_HEADER}'")
    return samples


def write_gyro_log(samples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(GYRO_HEADER + "\n")
        for s in samples:
            row = [s.t, s.omega[0], s.omega[1], s.omega[2]]
            fh.write(",".join(_FLOAT_FMT.format(v) for v in row) + "\n")


def read_track_log(path) -> list:
    """Parse a track CSV into frames; rows sharing a timestamp form one frame."""
    frames: list[Frame] = []
    seen_in_frame: set[int] = set()
    last_t = None
    saw_header = False
    for number, text in _data_lines(path):
        if not saw_header:
            if text.replace(" ", "") != TRACK_HEADER:
                raise InputError(f"{path}:{number}: expected header '{TRACK_HEADER}', got {text!r}")
            saw_header = True
            continue
        fields = text.split(",")
        if len(fields) != 4:
            raise InputError(f"{path}:{number}: expected 4 fields, got {len(fields)}")
        t, fid_raw, u, v = _parse_floats(fields, path, number)
        if not all(np.isfinite([t, u, v])):
            raise InputError(f"{path}:{number}: non-finite value")
        fid = int(fid_raw)
        if fid != fid_raw:
            raise InputError(f"{path}:{number}: feature_id {fid_raw!r} is not an integer")
        if last_t is not None and t < last_t:
            raise InputError(f"{path}:{number}: timestamp {t!r} decreases below {last_t!r}")
        if last_t is None or t > last_t:
            frames.append(Frame(t))
            seen_in_frame = set()
            last_t = t
        if fid in seen_in_frame:
            raise InputError(f"{path}:{number}: duplicate feature_id {fid} at t={t!r}")
        seen_in_frame.add(fid)
        frames[-1].observations.append(FeatureObservation(fid, u, v))
    if not saw_header:
        raise InputError(f"{path}: empty file, expected header '{TRACK_HEADER}'")
    return frames


def write_track_log(frames, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TRACK_HEADER + "\n")
        for frame in frames:
            for obs in frame.observations:
                fh.write(
                    ",".join(
                        [
                            _FLOAT_FMT.format(frame.t),
                            str(int(obs.feature_id)),
                            _FLOAT_FMT.format(obs.u),
                            _FLOAT_FMT.format(obs.v),
                        ]
                    )
                    + "\n"
                )


def write_ground_truth(truth: GroundTruth, cfg: SimConfig, seed: int, path) -> None:
    doc = {
        "intrinsics": dict(zip(INTRINSIC_NAMES, truth.intrinsics.as_array())),
        "points": truth.points.tolist(),
        "seed": seed,
        "sim_config": sim_config_echo(cfg),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_ground_truth(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from exc
    if "intrinsics" not in doc:
        raise InputError(f"{path}: ground-truth file lacks an 'intrinsics' entry")
    return doc


def trace_path_for(report_path) -> Path:
    report_path = Path(report_path)
    return report_path.with_name(report_path.stem + "_trace.csv")


def write_report(report: CalibrationReport, path):
    """Write the JSON report and its companion trace CSV; returns both paths."""
    path = Path(path)
    doc = {
        "final_intrinsics": dict(zip(INTRINSIC_NAMES, report.final_intrinsics.as_array())),
        "final_std": {k: float(v) for k, v in report.final_std.items()},
        "final_position": report.final_position.tolist(),
        "final_quaternion": report.final_quaternion.tolist(),
        "counts": {
            "frames": report.n_frames,
            "predict_steps": report.n_predict_steps,
            "gated_outliers": report.total_gated,
            "reinitializations": report.total_reinits,
            "skipped_frames": report.skipped_frames,
        },
        "times": report.times.tolist(),
        "intrinsic_trace": report.intrinsic_trace.tolist(),
        "intrinsic_std_trace": report.intrinsic_std_trace.tolist(),
        "position_trace": report.position_trace.tolist(),
        "quaternion_trace": report.quaternion_trace.tolist(),
        "innovation_rms_trace": report.innovation_rms_trace.tolist(),
        "inlier_trace": report.inlier_trace.tolist(),
        "gated_trace": report.gated_trace.tolist(),
        "reinit_trace": report.reinit_trace.tolist(),
        "features": {
            "ids": report.feature_ids,
            "positions": report.feature_positions.tolist(),
        },
        "config": report.config,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")

    trace_path = trace_path_for(path)
    columns = ["t"] + list(INTRINSIC_NAMES) + [f"std_{n}" for n in INTRINSIC_NAMES]
    with open(trace_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for i, t in enumerate(report.times):
            row = [t, *report.intrinsic_trace[i], *report.intrinsic_std_trace[i]]
            fh.write(",".join(_FLOAT_FMT.format(v) for v in row) + "\n")
    return path, trace_path


def read_report(path) -> CalibrationReport:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return CalibrationReport(
            final_intrinsics=Intrinsics(**doc["final_intrinsics"]),
            final_std=doc["final_std"],
            final_position=np.array(doc["final_position"]),
            final_quaternion=np.array(doc["final_quaternion"]),
            times=np.array(doc["times"]),
            intrinsic_trace=np.array(doc["intrinsic_trace"]),
            intrinsic_std_trace=np.array(doc["intrinsic_std_trace"]),
            position_trace=np.array(doc["position_trace"]),
            quaternion_trace=np.array(doc["quaternion_trace"]),
            innovation_rms_trace=np.array(doc["innovation_rms_trace"]),
            inlier_trace=np.array(doc["inlier_trace"]),
            gated_trace=np.array(doc["gated_trace"]),
            reinit_trace=np.array(doc["reinit_trace"]),
            feature_ids=doc["features"]["ids"],
            feature_positions=np.array(doc["features"]["positions"]),
            n_frames=doc["counts"]["frames"],
            n_predict_steps=doc["counts"]["predict_steps"],
            total_gated=doc["counts"]["gated_outliers"],
            total_reinits=doc["counts"]["reinitializations"],
            skipped_frames=doc["counts"]["skipped_frames"],
            config=doc["config"],
        )
    except KeyError as exc:
        raise InputError(f"{path}: report is missing entry {exc}") from exc


def _dataclass_from_dict(cls, data: dict, path_label: str, nested=None):
    """Build a dataclass strictly: unknown keys are rejected."""
    nested = nested or {}
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise InputError(f"{path_label}: unknown keys {sorted(unknown)} for {cls.__name__}")
    kwargs = {}
    for key, value in data.items():
        if key in nested:
            sub_cls = nested[key]
            if not isinstance(value, dict):
                raise InputError(f"{path_label}: '{key}' must be a mapping")
            kwargs[key] = _dataclass_from_dict(sub_cls, value, f"{path_label}.{key}")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path_label}: {exc}") from exc


def calibrator_config_from_dict(data: dict, path_label: str = "calibrator") -> CalibratorConfig:
    return _dataclass_from_dict(
        CalibratorConfig,
        data,
        path_label,
        nested={"init_stds": InitialStds, "process": ProcessNoiseConfig},
    )


def sim_config_from_dict(data: dict, path_label: str = "sim") -> SimConfig:
    data = dict(data)
    if "intrinsics" in data:
        if not isinstance(data["intrinsics"], dict):
            raise InputError(f"{path_label}.intrinsics must be a mapping")
        data["intrinsics"] = _dataclass_from_dict(
            Intrinsics, data["intrinsics"], f"{path_label}.intrinsics"
        )
    return _dataclass_from_dict(SimConfig, data, path_label)


def load_run_config(path=None) -> tuple[SimConfig, CalibratorConfig]:
    """Load the combined run configuration; missing sections use defaults.

    The top-level document has two optional sections, "sim" and "calibrator".
    Unknown keys anywhere are rejected.
    """
    if path is None:
        return SimConfig(), CalibratorConfig()
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path}: configuration root must be an object")
    unknown = set(doc) - {"sim", "calibrator"}
    if unknown:
        raise InputError(f"{path}: unknown top-level sections {sorted(unknown)}")
    sim_cfg = sim_config_from_dict(doc.get("sim", {}), f"{path}:sim")
    calib_cfg = calibrator_config_from_dict(doc.get("calibrator", {}), f"{path}:calibrator")
    return sim_cfg, calib_cfg


def write_mc_result(result, path) -> None:
    doc = {
        "n_trials": result.n_trials,
        "rmse": {k: float(v) for k, v in result.rmse.items()},
        "initial_rmse": {k: float(v) for k, v in result.initial_rmse.items()},
        "trials": [
            {
                "seed": t["seed"],
                "estimate": {k: float(v) for k, v in t["estimate"].items()},
                "error": {k: float(v) for k, v in t["error"].items()},
                "total_gated": t["total_gated"],
                "total_reinits": t["total_reinits"],
            }
            for t in result.trials
        ],
        "sim_config": result.sim_config,
        "calibrator_config": result.calibrator_config,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_ba_result(solution, path) -> None:
    doc = {
        "refined_intrinsics": dict(zip(INTRINSIC_NAMES, solution.intrinsics.as_array())),
        "intrinsic_std": solution.intrinsic_std,
        "initial_cost": solution.initial_cost,
        "final_cost": solution.cost,
        "converged": solution.converged,
        "iterations": solution.n_iterations,
        "message": solution.message,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
