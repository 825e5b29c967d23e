"""Command-line harness: pre-integration benchmark, covariance consistency,
end-to-end estimation and IMU CSV ingestion.

Every command reads one JSON config (``--config``), may override only the
seed (``--seed``) and output directory (``--out``), writes its results there
together with ``manifest.json`` and exits with 0 (ok), 2 (I/O or parse
error), 3 (statistical failure) or 4 (estimator divergence).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import chi2

from .estimator import SolverConfig, run_estimation
from .imu import (
    CompensatedImuMeasurement,
    ImuBias,
    ImuCsvError,
    ImuNoise,
    compensate_stream,
    read_imu_csv,
)
from .lie import so3_log
from .preintegration import (
    NavState,
    error_vector,
    integrate,
    integrate_all,
    nees,
    new_preintegration,
    predict,
)
from .simulation import (
    AnalyticTrajectory,
    RotationComponent,
    SimScenario,
    default_scenario,
    fine_oracle,
    scenario_from_dict,
    simulate,
    simulate_imu,
    write_trajectory_csv,
)

EXIT_OK, EXIT_IO, EXIT_STATS, EXIT_DIVERGED = 0, 2, 3, 4
CONFIG_SCHEMA_VERSION = 1
EUROC_NOISE = dict(sigma_g=1.6968e-4, sigma_a=2.0e-3, sigma_bg=1.9393e-5, sigma_ba=3.0e-3)


class ConfigError(ValueError):
    pass


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    seed: int
    version: str
    output_dir: str
    wall_clock_s: float


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "0.1.0"


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % v


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _check_version(cfg: dict) -> None:
    v = cfg.get("schema_version", CONFIG_SCHEMA_VERSION)
    if v != CONFIG_SCHEMA_VERSION:
        raise ConfigError("unsupported config schema_version %r" % v)


# ---------------------------------------------------------------- preint-bench

BENCH_DEFAULTS = {
    "imu_rate": 200.0,
    "rates": [0.0, 0.5, 1.0, 2.0, 4.0, 8.0],
    "horizons": [0.1, 0.5, 1.0, 2.0],
    "substeps": 10000,
    "oracle": "closed_form",
}


def bench_measurements(rate: float, horizon: float, imu_rate: float, seed: int) -> list[CompensatedImuMeasurement]:
    """Held samples of a signal whose angular rate has constant magnitude ``rate``
    about a slowly precessing axis, with a smooth specific force."""
    rng = np.random.default_rng([seed, 2])
    phase = rng.uniform(0.0, 2.0 * math.pi)
    n = int(round(horizon * imu_rate))
    t = np.arange(n) / imu_rate
    axis = np.stack([np.cos(0.4 * t + phase), np.sin(0.4 * t + phase), np.full(n, 0.5)], axis=1)
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    gyro = rate * axis
    accel = np.stack([2.0 * np.sin(3.0 * t), 1.5 * np.cos(2.0 * t), 9.81 + np.sin(5.0 * t)], axis=1)
    dt = 1.0 / imu_rate
    return [CompensatedImuMeasurement(float(t[k]), gyro[k], accel[k], dt) for k in range(n)]


def preint_bench(cfg: dict, seed: int) -> list[tuple]:
    """Rows ``(rate, horizon, scheme, pos_err_m, rot_err_rad, vel_err_mps)``."""
    cfg = {**BENCH_DEFAULTS, **cfg}
    imu_rate = float(cfg["imu_rate"])
    noise = ImuNoise(rate=imu_rate, **EUROC_NOISE)
    g = np.array([0.0, 0.0, -9.81])
    x0 = NavState(np.eye(3), np.zeros(3), np.zeros(3))
    rows = []
    for rate in cfg["rates"]:
        for horizon in cfg["horizons"]:
            meas = bench_measurements(float(rate), float(horizon), imu_rate, seed)
            ref = fine_oracle(meas, x0, g, int(cfg["substeps"]), method=cfg["oracle"])
            for scheme in ("exact", "euler"):
                p = integrate_all(new_preintegration(ImuBias(), noise, scheme), meas)
                x = predict(p, x0, g)
                rows.append(
                    (
                        float(rate),
                        float(horizon),
                        scheme,
                        float(np.linalg.norm(x.position - ref.position)),
                        float(np.linalg.norm(so3_log(ref.rotation.T @ x.rotation))),
                        float(np.linalg.norm(x.velocity - ref.velocity)),
                    )
                )
    return rows


# ---------------------------------------------------------------- consistency

CONSISTENCY_DEFAULTS = {
    "trials": 500,
    "duration": 1.0,
    "imu_rate": 200.0,
    "noise": EUROC_NOISE,
    "initial_bias": {"gyro": [0.01, -0.02, 0.005], "accel": [0.1, 0.05, -0.08]},
    "scenarios": ["translation", "rotation"],
    "simulate_noise": True,
    "negative_control": True,
    "negative_control_scale": 4.0,
    # debug flag: scales the noise input matrix of the covariance recursion
    "noise_model_scale": 1.0,
    "confidence": 0.99,
}


def consistency_trajectory(kind: str) -> AnalyticTrajectory:
    if kind == "translation":
        return AnalyticTrajectory(
            amplitude=(1.5, 1.0, 0.5),
            frequency=(3.0, 2.5, 4.0),
            phase=(0.0, 0.3, 0.9),
            rotations=(RotationComponent((0.0, 0.0, 1.0), 0.1, 1.0),),
        )
    if kind == "rotation":
        # |omega| peaks near 3 rad/s
        return AnalyticTrajectory(
            amplitude=(0.3, 0.2, 0.1),
            frequency=(2.0, 2.0, 2.0),
            rotations=(
                RotationComponent((0.0, 0.0, 1.0), 1.2, 2.3),
                RotationComponent((1.0, 0.0, 0.0), 0.3, 3.0, 0.7),
                RotationComponent((0.0, 1.0, 0.0), 0.25, 2.6, 1.9),
            ),
        )
    raise ConfigError("unknown consistency scenario %r" % kind)


def _consistency_scenario(cfg: dict, kind: str, seed: int) -> SimScenario:
    rate = float(cfg["imu_rate"])
    b = cfg["initial_bias"]
    return SimScenario(
        trajectory=consistency_trajectory(kind),
        imu_rate=rate,
        duration=float(cfg["duration"]),
        keyframe_interval=float(cfg["duration"]),
        noise=ImuNoise(rate=rate, **cfg["noise"]),
        initial_bias=ImuBias(np.asarray(b["gyro"], float), np.asarray(b["accel"], float)),
        seed=seed,
        simulate_noise=bool(cfg["simulate_noise"]),
    )


def nees_trials(
    scenario: SimScenario, trials: int, base_seed: int, noise_model_scale: float = 1.0
) -> np.ndarray:
    """15-dof NEES of the pre-integrated deltas and bias over the scenario.

    Trial ``i`` uses seed ``base_seed + i``. The pre-integration is
    linearised at the initial bias and compared with the exact deltas of the
    noise-free inputs and the true bias at the end of the interval.
    """
    dt = 1.0 / scenario.imu_rate
    ref = None
    out = np.empty(trials)
    for i in range(trials):
        sc = replace(scenario, seed=base_seed + i)
        sim = simulate_imu(sc)
        if ref is None:
            true_meas = [
                CompensatedImuMeasurement(k * dt, sim.true_gyro[k], sim.true_accel[k], dt)
                for k in range(len(sim.true_gyro))
            ]
            ref = integrate_all(new_preintegration(ImuBias(), sc.noise), true_meas)
        meas = compensate_stream(sim.raw, sc.intrinsics, sc.imu_rate)
        b0 = sc.initial_bias
        p = new_preintegration(b0, sc.noise, noise_model_scale=noise_model_scale)
        for m in meas:
            p = integrate(p, m)
        b_end = sim.raw_bias[-1]
        e = error_vector(p, ref, b0, ImuBias(b_end[:3], b_end[3:]))
        out[i] = nees(e, p.cov)
    return out


def chi2_mean_interval(dof: int, trials: int, confidence: float = 0.99) -> tuple[float, float]:
    """Two-sided interval for the mean of ``trials`` independent chi^2_dof samples."""
    a = 0.5 * (1.0 - confidence)
    lo, hi = chi2.ppf([a, 1.0 - a], dof * trials)
    return float(lo / trials), float(hi / trials)


def consistency(cfg: dict, seed: int) -> tuple[list[tuple], dict]:
    """Per-trial rows ``(scenario, trial, nees)`` and a summary dict."""
    cfg = {**CONSISTENCY_DEFAULTS, **cfg}
    trials = int(cfg["trials"])
    lo, hi = chi2_mean_interval(15, trials, float(cfg["confidence"]))
    rows, summary = [], {"interval": [lo, hi], "trials": trials, "scenarios": {}}
    runs = [(k, float(cfg["noise_model_scale"]), False) for k in cfg["scenarios"]]
    if cfg["negative_control"]:
        runs += [(k, float(cfg["negative_control_scale"]), True) for k in cfg["scenarios"]]
    ok = True
    for kind, scale, control in runs:
        name = kind + ("_control" if control else "")
        values = nees_trials(_consistency_scenario(cfg, kind, seed), trials, seed, scale)
        rows += [(name, i, v) for i, v in enumerate(values)]
        mean = float(values.mean())
        inside = lo <= mean <= hi
        # a control passes when the injected fault is detected
        passed = (not inside) if control else inside
        ok &= passed
        summary["scenarios"][name] = {
            "mean_nees": mean,
            "inside_interval": inside,
            "noise_model_scale": scale,
            "negative_control": control,
            "pass": passed,
        }
    summary["pass"] = bool(ok)
    return rows, summary


# ---------------------------------------------------------------- estimate


def solver_config(d: dict) -> SolverConfig:
    return SolverConfig(**d)


def estimate(cfg: dict, seed: int):
    """Simulate the configured scenario and run the estimator on it."""
    scenario = scenario_from_dict({**cfg.get("scenario", {}), "seed": seed})
    sim = simulate(scenario)
    result = run_estimation(sim, solver_config(cfg.get("solver", {})))
    return sim, result


def rotation_rmse(est: Sequence[NavState], truth: Sequence[NavState]) -> float:
    e = [so3_log(t.rotation.T @ s.rotation) for s, t in zip(est, truth)]
    return float(np.sqrt(np.mean([v @ v for v in e])))


# ---------------------------------------------------------------- ingest


def ingest_summary(path: str | Path) -> dict:
    """Count, duration, rate estimate and gaps longer than 3 nominal periods."""
    raws = read_imu_csv(path)
    t = np.array([m.t for m in raws])
    summary = {"count": len(raws), "duration_s": 0.0, "rate_hz": None, "gaps": []}
    if len(t) < 2:
        return summary
    dts = np.diff(t)
    period = float(np.median(dts))
    summary["duration_s"] = float(t[-1] - t[0])
    summary["rate_hz"] = 1.0 / period
    for k in np.flatnonzero(dts > 3.0 * period):
        summary["gaps"].append({"after_t": float(t[k]), "gap_s": float(dts[k]), "sample": int(k) + 1})
    return summary


# ---------------------------------------------------------------- entry point


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    _check_version(cfg)
    return cfg


def _resolve_seed(args: argparse.Namespace, cfg: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    if "seed" in cfg:
        return int(cfg["seed"])
    if args.command == "estimate":
        return int(cfg.get("scenario", {}).get("seed", default_scenario().seed))
    return 0


def _run(args: argparse.Namespace, out: Path, cfg: dict, seed: int) -> int:
    if args.command == "preint-bench":
        rows = preint_bench(cfg, seed)
        write_csv(out / "preint_bench.csv", ("rate", "horizon", "scheme", "pos_err_m", "rot_err_rad", "vel_err_mps"), rows)
        return EXIT_OK
    if args.command == "consistency":
        rows, summary = consistency(cfg, seed)
        write_csv(out / "nees.csv", ("scenario", "trial", "nees"), rows)
        write_json(out / "consistency_summary.json", summary)
        for name, s in summary["scenarios"].items():
            print("%-22s mean NEES %.4f  interval [%.4f, %.4f]  %s" % (
                name, s["mean_nees"], *summary["interval"], "PASS" if s["pass"] else "FAIL"))
        return EXIT_OK if summary["pass"] else EXIT_STATS
    if args.command == "estimate":
        sim, res = estimate(cfg, seed)
        kf_times = sim.keyframe_indices / sim.scenario.imu_rate
        write_trajectory_csv(out / "truth.csv", kf_times, sim.keyframe_truth)
        metrics = {
            "ate_rmse_m": res.ate if math.isfinite(res.ate) else None,
            "rotation_rmse_rad": None if res.diverged else rotation_rmse(res.estimates, res.truth),
            "iterations": [r.iterations for r in res.reports],
            "converged": [r.converged for r in res.reports],
            "diverged": res.diverged,
            "keyframes": len(res.estimates),
        }
        write_json(out / "metrics.json", metrics)
        if res.diverged:
            write_json(out / "diagnostics.json", {
                "solved_windows": len(res.reports),
                "last_reports": [asdict(r) for r in res.reports[-3:]],
                "last_frame": res.frame_ids[-1] if res.frame_ids else None,
            })
            print("estimator diverged after %d windows" % len(res.reports), file=sys.stderr)
            return EXIT_DIVERGED
        write_trajectory_csv(out / "estimate.csv", res.times, res.estimates)
        print("ATE RMSE %.6g m over %d keyframes" % (res.ate, len(res.estimates)))
        return EXIT_OK
    if args.command == "ingest":
        summary = ingest_summary(args.path)
        rate = summary["rate_hz"]
        print("count=%d duration=%.6f s rate=%s Hz gaps=%d" % (
            summary["count"], summary["duration_s"], "n/a" if rate is None else "%.6f" % rate, len(summary["gaps"])))
        for gap in summary["gaps"]:
            print("  gap of %.6f s after t=%.9f (before sample %d)" % (gap["gap_s"], gap["after_t"], gap["sample"]))
        write_json(out / "ingest_summary.json", summary)
        write_csv(out / "gaps.csv", ("after_t", "gap_s", "sample"),
                  [(g["after_t"], g["gap_s"], g["sample"]) for g in summary["gaps"]])
        return EXIT_OK
    raise AssertionError(args.command)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="se23vio", description=" ".join(__doc__.split("\n\n")[0].split()))
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("preint-bench", "exact vs Euler pre-integration error against a fine-step oracle"),
        ("consistency", "Monte-Carlo NEES check of the pre-integration covariance"),
        ("estimate", "simulate a scenario and run the sliding-window estimator"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file (defaults are used when omitted)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    p = sub.add_parser("ingest", help="validate an IMU CSV and report gaps")
    p.add_argument("path", help="CSV with timestamp_ns,wx,wy,wz,ax,ay,az")
    p.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    config_path = getattr(args, "config", None)
    try:
        cfg = _load_config(config_path)
        seed = _resolve_seed(args, cfg)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
    except (OSError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_IO
    try:
        code = _run(args, out, cfg, seed)
    except ImuCsvError as exc:
        print("error: %s: %s" % (args.path, exc), file=sys.stderr)
        code = EXIT_IO
    except (OSError, ConfigError, KeyError, TypeError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        code = EXIT_IO
    manifest = RunManifest(args.command, config_path, seed, version_string(), str(out), time.perf_counter() - start)
    try:
        write_json(out / "manifest.json", asdict(manifest))
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_IO
    return code


if __name__ == "__main__":
    sys.exit(main())
