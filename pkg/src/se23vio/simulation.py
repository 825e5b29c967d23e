"""Synthetic ground truth: analytic motion, IMU synthesis, a fine-step
integration oracle and multi-camera scene generation.

The analytic trajectory is the motion *profile*. The simulated platform is
driven by that profile's body rate and specific force sampled once per IMU
period (at the middle of the period) and held constant, so the realised
ground truth is the exact integral of those held inputs. Noise-free IMU data
is therefore exactly consistent with the ground truth.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.spatial.transform import Rotation

from .imu import (
    CompensatedImuMeasurement,
    ImuBias,
    ImuIntrinsics,
    ImuNoise,
    RawImuMeasurement,
    compensate_stream,
    compensate_vectors,
)
from .lie import input_phase, input_phase_batch, so3_exp
from .preintegration import NavState
from .residuals import CameraRig, Landmark, Observation, PinholeCamera, project_points

GRAVITY = np.array([0.0, 0.0, -9.81])
SCENARIO_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RotationComponent:
    """``exp(amplitude * sin(frequency * t + phase) * axis)``; axis is normalised."""

    axis: tuple[float, float, float]
    amplitude: float
    frequency: float
    phase: float = 0.0


@dataclass(frozen=True)
class AnalyticTrajectory:
    """Sinusoidal position per axis and a product of single-axis oscillations."""

    p0: tuple[float, float, float] = (0.0, 0.0, 0.0)
    amplitude: tuple[float, float, float] = (0.0, 0.0, 0.0)
    frequency: tuple[float, float, float] = (0.0, 0.0, 0.0)
    phase: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotations: tuple[RotationComponent, ...] = ()

    def __post_init__(self):
        vals = [*self.p0, *self.amplitude, *self.frequency, *self.phase]
        for rc in self.rotations:
            vals += [*rc.axis, rc.amplitude, rc.frequency, rc.phase]
            if np.linalg.norm(rc.axis) == 0:
                raise ValueError("rotation axis must be non-zero")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("trajectory parameters must be finite")

    def position(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        A, w, ph = map(np.asarray, (self.amplitude, self.frequency, self.phase))
        return np.asarray(self.p0) + A * np.sin(w * t + ph)

    def velocity(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        A, w, ph = map(np.asarray, (self.amplitude, self.frequency, self.phase))
        return A * w * np.cos(w * t + ph)

    def acceleration(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        A, w, ph = map(np.asarray, (self.amplitude, self.frequency, self.phase))
        return -A * w * w * np.sin(w * t + ph)

    def _components(self, times: np.ndarray):
        for rc in self.rotations:
            n = np.asarray(rc.axis, dtype=float)
            n = n / np.linalg.norm(n)
            arg = rc.frequency * times + rc.phase
            angle = rc.amplitude * np.sin(arg)
            rate = rc.amplitude * rc.frequency * np.cos(arg)
            yield Rotation.from_rotvec(angle[:, None] * n).as_matrix(), rate[:, None] * n

    def rotations_and_rates(self, times) -> tuple[np.ndarray, np.ndarray]:
        """Attitudes ``(n, 3, 3)`` and body-frame angular velocities ``(n, 3)``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        R = np.broadcast_to(np.eye(3), (len(times), 3, 3))
        omega = np.zeros((len(times), 3))
        # for R = A B: omega = B^T omega_A + omega_B
        for Rk, wk in self._components(times):
            R = R @ Rk
            omega = np.einsum("nji,nj->ni", Rk, omega) + wk
        return np.array(R), omega

    def rotation(self, t: float) -> np.ndarray:
        return self.rotations_and_rates(t)[0][0]

    def body_rate(self, t: float) -> np.ndarray:
        """Angular velocity in the body frame (``R^T dR/dt`` as a vector)."""
        return self.rotations_and_rates(t)[1][0]

    def body_inputs(self, times, g: np.ndarray = GRAVITY) -> tuple[np.ndarray, np.ndarray]:
        """Noise-free gyro and accelerometer readings ``(n, 3)`` at ``times``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        R, gyro = self.rotations_and_rates(times)
        spec = np.einsum("nji,nj->ni", R, self.acceleration(times) - g)
        return gyro, spec


@dataclass(frozen=True)
class SimScenario:
    trajectory: AnalyticTrajectory
    imu_rate: float = 200.0
    duration: float = 10.0
    keyframe_interval: float = 0.2
    noise: ImuNoise = field(default_factory=lambda: ImuNoise(1.6968e-4, 2.0e-3, 1.9393e-5, 3.0e-3, 200.0))
    intrinsics: ImuIntrinsics = field(default_factory=ImuIntrinsics)
    initial_bias: ImuBias = field(default_factory=ImuBias)
    rig: CameraRig | None = None
    landmark_count: int = 300
    pixel_sigma: float = 1.0
    outlier_fraction: float = 0.0
    seed: int = 0
    gravity: tuple[float, float, float] = tuple(GRAVITY)
    simulate_noise: bool = True

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.imu_rate < 2.0 / self.keyframe_interval:
            raise ValueError("IMU rate must be at least 2 / keyframe_interval")
        if abs(self.noise.rate - self.imu_rate) > 1e-9 * self.imu_rate:
            raise ValueError("noise.rate must equal imu_rate")

    @property
    def g(self) -> np.ndarray:
        return np.asarray(self.gravity, dtype=float)

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.imu_rate))

    @property
    def samples_per_keyframe(self) -> int:
        return int(round(self.keyframe_interval * self.imu_rate))

    def sample_times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.imu_rate

    def keyframe_indices(self) -> np.ndarray:
        """Sample indices of keyframes; index ``n_samples`` is the end of the stream."""
        return np.arange(0, self.n_samples + 1, self.samples_per_keyframe)

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream])


def truth_state(scenario: SimScenario, t: float) -> NavState:
    """Closed-form profile state at ``t``; bias is the scenario's initial bias
    expressed in the compensated frame."""
    if not (0.0 <= t <= scenario.duration):
        raise ValueError("t=%r outside [0, %r]" % (t, scenario.duration))
    traj = scenario.trajectory
    return NavState(
        traj.rotation(t),
        traj.position(t),
        traj.velocity(t),
        compensated_bias(scenario.initial_bias, scenario.intrinsics),
    )


def compensated_bias(raw_bias: ImuBias, intrinsics: ImuIntrinsics) -> ImuBias:
    """The bias as it appears after intrinsic compensation (the model is linear)."""
    g, a = compensate_vectors(raw_bias.gyro, raw_bias.accel, intrinsics)
    return ImuBias(g, a)


@dataclass
class ImuSimulation:
    raw: list[RawImuMeasurement]
    true_gyro: np.ndarray  # (n, 3) held body rate
    true_accel: np.ndarray  # (n, 3) held specific force
    raw_bias: np.ndarray  # (n + 1, 6) sensor-frame bias at each sample boundary


def simulate_imu(scenario: SimScenario) -> ImuSimulation:
    n = scenario.n_samples
    dt = 1.0 / scenario.imu_rate
    t = scenario.sample_times()
    gyro, accel = scenario.trajectory.body_inputs(t + 0.5 * dt, scenario.g)
    rng = scenario.rng(0)
    noise = scenario.noise
    bias = np.empty((n + 1, 6))
    bias[0] = scenario.initial_bias.as_vector()
    if scenario.simulate_noise:
        white = rng.standard_normal((n, 6)) * np.repeat([noise.sigma_g, noise.sigma_a], 3) / math.sqrt(dt)
        walk = rng.standard_normal((n, 6)) * np.repeat([noise.sigma_bg, noise.sigma_ba], 3) * math.sqrt(dt)
        bias[1:] = bias[0] + np.cumsum(walk, axis=0)
    else:
        white = np.zeros((n, 6))
        bias[1:] = bias[0]
    intr = scenario.intrinsics
    meas_a = accel @ intr.accel_matrix.T + bias[:n, 3:] + white[:, 3:]
    meas_g = (
        gyro @ (intr.gyro_matrix @ intr.C_omega).T
        + accel @ intr.A_omega.T
        + bias[:n, :3]
        + white[:, :3]
    )
    raw = [RawImuMeasurement(float(t[k]), meas_g[k], meas_a[k]) for k in range(n)]
    return ImuSimulation(raw, gyro, accel, bias)


def sample_imu(scenario: SimScenario) -> list[RawImuMeasurement]:
    """Raw IMU stream for the scenario (deterministic given the seed)."""
    return simulate_imu(scenario).raw


def propagate_held_inputs(
    x0: NavState, gyro: np.ndarray, accel: np.ndarray, dt: float, g: np.ndarray
) -> list[NavState]:
    """Exact propagation through piecewise-constant unbiased inputs; returns n+1 states."""
    states = [x0]
    R, p, v = x0.rotation, x0.position, x0.velocity
    for w, a in zip(gyro, accel):
        step = input_phase(dt, w, a)
        p = p + dt * v + 0.5 * dt * dt * g + R @ step.p_column
        v = v + dt * g + R @ step.v_column
        R = R @ step.rotation_step
        states.append(NavState(R, p, v, x0.bias))
    return states


def _generators(h: np.ndarray, omega: np.ndarray, accel: np.ndarray) -> np.ndarray:
    n = len(omega)
    G = np.zeros((n, 5, 5))
    wx, wy, wz = (h[:, None] * omega).T
    G[:, 0, 1], G[:, 0, 2] = -wz, wy
    G[:, 1, 0], G[:, 1, 2] = wz, -wx
    G[:, 2, 0], G[:, 2, 1] = -wy, wx
    G[:, :3, 4] = h[:, None] * accel
    G[:, 4, 3] = h
    return G


def _ordered_product(M: np.ndarray) -> np.ndarray:
    """``M[0] @ M[1] @ ... @ M[-1]`` by pairwise reduction."""
    while len(M) > 1:
        if len(M) % 2:
            M = np.concatenate([M, np.eye(M.shape[1])[None]])
        M = M[0::2] @ M[1::2]
    return M[0]


def fine_oracle(
    measurements: Sequence[CompensatedImuMeasurement],
    x0: NavState,
    g: np.ndarray,
    substeps: int,
    signal: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None,
    method: str = "closed_form",
    chunk: int = 200_000,
) -> NavState:
    """Reference integration by sub-step refinement.

    Each hold period is split into ``substeps`` equal pieces and every piece
    is advanced with the exact constant-input step. ``method="expm"``
    replaces the closed-form step with a generic 5x5 matrix exponential of
    the piece's generator, which shares no code with the pre-integrator.
    Without ``signal`` the inputs are the held
    measurements minus ``x0.bias``. With ``signal`` (a vectorised callable
    mapping times to unbiased ``(gyro, accel)``) the inputs of each piece
    are sampled at its midpoint, so refinement converges to the solution for
    that continuous signal.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if method == "closed_form":
        step = input_phase_batch
    elif method == "expm":
        step = lambda h, w, a: expm(_generators(h, w, a))  # noqa: E731
    else:
        raise ValueError("unknown method %r" % method)
    g = np.asarray(g, dtype=float)
    t0 = np.array([m.t for m in measurements])
    dts = np.array([m.dt_to_next for m in measurements])
    h = np.repeat(dts / substeps, substeps)
    if signal is None:
        omega = np.repeat(np.array([m.gyro for m in measurements]) - x0.bias.gyro, substeps, axis=0)
        accel = np.repeat(np.array([m.accel for m in measurements]) - x0.bias.accel, substeps, axis=0)
    else:
        frac = (np.arange(substeps) + 0.5) / substeps
        tm = (t0[:, None] + dts[:, None] * frac[None, :]).ravel()
        omega, accel = signal(tm)
    total = np.eye(5)
    for s in range(0, len(h), chunk):
        sl = slice(s, s + chunk)
        total = total @ _ordered_product(step(h[sl], omega[sl], accel[sl]))
    T = float(dts.sum())
    R0, p0, v0 = x0.rotation, x0.position, x0.velocity
    dR, dp, dv = total[:3, :3], total[:3, 3], total[:3, 4]
    return NavState(
        R0 @ dR,
        p0 + T * v0 + 0.5 * T * T * g + R0 @ dp,
        v0 + T * g + R0 @ dv,
        x0.bias,
    )


# ---------------------------------------------------------------- cameras


def _front_mount() -> np.ndarray:
    # camera x right, y down, z forward; body x forward, y left, z up
    return np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


def _yawed(angle: float) -> np.ndarray:
    return so3_exp(np.array([0.0, 0.0, angle])) @ _front_mount()


def default_rig(n_cameras: int = 4) -> CameraRig:
    """Stereo pair looking forward plus two side cameras yawed +-70 deg.

    With a 90 deg horizontal field of view the side cameras overlap the
    forward pair by about 20 deg. ``n_cameras=1`` keeps only the left
    forward camera.
    """
    intr = dict(fx=320.0, fy=320.0, cx=320.0, cy=240.0, width=640, height=480)
    cams = [
        PinholeCamera(_front_mount(), np.array([0.05, 0.05, 0.0]), **intr),
        PinholeCamera(_front_mount(), np.array([0.05, -0.05, 0.0]), **intr),
        PinholeCamera(_yawed(math.radians(70)), np.array([0.0, 0.08, 0.0]), **intr),
        PinholeCamera(_yawed(math.radians(-70)), np.array([0.0, -0.08, 0.0]), **intr),
    ]
    if n_cameras not in (1, 2, 4):
        raise ValueError("preset rigs have 1, 2 or 4 cameras")
    return CameraRig(tuple(cams[:n_cameras]))


class UnderconstrainedScene(ValueError):
    pass


@dataclass
class Scene:
    landmarks: list[Landmark]
    observations: list[Observation]


def generate_scene(scenario: SimScenario, keyframe_states: Sequence[NavState], min_visible: int = 8) -> Scene:
    """Landmarks in a 2-10 m shell around the path and their noisy pixel observations.

    Each landmark is placed at a random distance in [2, 10] m and random
    direction from a random point of the path; candidates closer than 1 m to
    any keyframe position are redrawn. ``frame_id`` of an observation is the
    keyframe's index in ``keyframe_states``.
    """
    rig = scenario.rig if scenario.rig is not None else default_rig()
    rng = scenario.rng(1)
    kf_pos = np.array([s.position for s in keyframe_states])
    pts = []
    while len(pts) < scenario.landmark_count:
        anchor = kf_pos[rng.integers(len(kf_pos))]
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        cand = anchor + rng.uniform(2.0, 10.0) * d
        if np.min(np.linalg.norm(kf_pos - cand, axis=1)) >= 1.0:
            pts.append(cand)
    pts = np.array(pts)
    landmarks = [Landmark(i, pts[i]) for i in range(len(pts))]

    observations = []
    for f, state in enumerate(keyframe_states):
        seen = set()
        for k, cam in enumerate(rig.cameras):
            uv, vis = project_points(cam, state.rotation, state.position, pts)
            idx = np.flatnonzero(vis)
            noise = rng.standard_normal((len(idx), 2)) * scenario.pixel_sigma
            outlier = rng.random(len(idx)) < scenario.outlier_fraction
            offsets = rng.uniform(10.0, 30.0, (len(idx), 2)) * rng.choice([-1.0, 1.0], (len(idx), 2))
            if not scenario.simulate_noise:
                noise[:] = 0.0
                outlier[:] = False
            for n, lm in enumerate(idx):
                px = uv[lm] + noise[n] + (offsets[n] if outlier[n] else 0.0)
                if not (0 <= px[0] < cam.width and 0 <= px[1] < cam.height):
                    continue
                observations.append(Observation(f, k, int(lm), px, scenario.pixel_sigma))
                seen.add(int(lm))
        if len(seen) < min_visible:
            raise UnderconstrainedScene(
                "keyframe %d sees only %d landmarks (need %d)" % (f, len(seen), min_visible)
            )
    return Scene(landmarks, observations)


@dataclass
class Simulation:
    scenario: SimScenario
    imu: ImuSimulation
    measurements: list[CompensatedImuMeasurement]
    truth: list[NavState]  # at every sample boundary (n_samples + 1)
    keyframe_indices: np.ndarray
    scene: Scene

    @property
    def keyframe_truth(self) -> list[NavState]:
        return [self.truth[i] for i in self.keyframe_indices]

    def true_bias(self, sample_index: int) -> ImuBias:
        b = self.imu.raw_bias[sample_index]
        return compensated_bias(ImuBias(b[:3], b[3:]), self.scenario.intrinsics)


def simulate(scenario: SimScenario) -> Simulation:
    """Run the full generator: IMU stream, realised ground truth and scene."""
    imu = simulate_imu(scenario)
    meas = compensate_stream(imu.raw, scenario.intrinsics, scenario.imu_rate)
    x0 = truth_state(scenario, 0.0)
    truth = propagate_held_inputs(x0, imu.true_gyro, imu.true_accel, 1.0 / scenario.imu_rate, scenario.g)
    truth = [
        s.with_bias(compensated_bias(ImuBias(b[:3], b[3:]), scenario.intrinsics))
        for s, b in zip(truth, imu.raw_bias)
    ]
    kf = scenario.keyframe_indices()
    scene = generate_scene(scenario, [truth[i] for i in kf])
    return Simulation(scenario, imu, meas, truth, kf, scene)


# ---------------------------------------------------------------- export


def rotation_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0."""
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    return -q if q[0] < 0 else q


TRAJECTORY_HEADER = ("t", "qw", "qx", "qy", "qz", "px", "py", "pz", "vx", "vy", "vz")


def trajectory_rows(times: Sequence[float], states: Sequence[NavState]) -> list[list[float]]:
    rows = []
    for t, s in zip(times, states):
        rows.append([float(t), *rotation_to_quaternion(s.rotation), *s.position, *s.velocity])
    return rows


def write_trajectory_csv(path: str | Path, times: Sequence[float], states: Sequence[NavState]) -> None:
    """``t,qw,qx,qy,qz,px,py,pz,vx,vy,vz`` with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for row in trajectory_rows(times, states):
            w.writerow(["%.17g" % v for v in row])


# ---------------------------------------------------------------- config


def default_trajectory() -> AnalyticTrajectory:
    return AnalyticTrajectory(
        p0=(0.0, 0.0, 1.5),
        amplitude=(2.0, 1.5, 0.3),
        frequency=(0.6, 0.8, 1.1),
        phase=(0.0, 0.5, 1.0),
        rotations=(
            RotationComponent((0.0, 0.0, 1.0), 1.2, 2.3, 0.0),
            RotationComponent((1.0, 0.0, 0.0), 0.3, 3.0, 0.7),
            RotationComponent((0.0, 1.0, 0.0), 0.25, 2.6, 1.9),
        ),
    )


def default_intrinsics() -> ImuIntrinsics:
    return ImuIntrinsics(
        S_alpha=np.diag([1.004, 0.997, 1.002]),
        M_alpha=np.array([[1.0, 0.0, 0.0], [1e-3, 1.0, 0.0], [-2e-3, 5e-4, 1.0]]),
        S_omega=np.diag([0.998, 1.003, 1.001]),
        M_omega=np.array([[1.0, 0.0, 0.0], [-1e-3, 1.0, 0.0], [5e-4, 1.5e-3, 1.0]]),
        A_omega=np.full((3, 3), 2e-4) * np.array([[1, -1, 0.5], [0.3, 1, -0.2], [-0.4, 0.1, 1]]),
        C_omega=so3_exp(np.array([2e-3, -1e-3, 3e-3])),
    )


def default_scenario(**overrides) -> SimScenario:
    """10 s, 200 Hz IMU, 5 Hz keyframes, 4-camera rig, consumer-grade noise."""
    base = SimScenario(
        trajectory=default_trajectory(),
        intrinsics=default_intrinsics(),
        initial_bias=ImuBias(np.array([0.004, -0.006, 0.003]), np.array([0.05, -0.04, 0.08])),
        rig=default_rig(4),
        seed=20240601,
    )
    return replace(base, **overrides)


def _matrix(v) -> np.ndarray:
    return np.asarray(v, dtype=float)


def scenario_to_dict(s: SimScenario) -> dict:
    rig = s.rig if s.rig is not None else default_rig()
    tr = s.trajectory
    return {
        "schema_version": SCENARIO_SCHEMA_VERSION,
        "seed": int(s.seed),
        "duration": s.duration,
        "imu_rate": s.imu_rate,
        "keyframe_interval": s.keyframe_interval,
        "gravity": list(s.gravity),
        "simulate_noise": s.simulate_noise,
        "noise": {k: getattr(s.noise, k) for k in ("sigma_g", "sigma_a", "sigma_bg", "sigma_ba")},
        "intrinsics": {
            k: getattr(s.intrinsics, k).tolist()
            for k in ("S_alpha", "M_alpha", "S_omega", "M_omega", "A_omega", "C_omega")
        },
        "initial_bias": {"gyro": s.initial_bias.gyro.tolist(), "accel": s.initial_bias.accel.tolist()},
        "trajectory": {
            "p0": list(tr.p0),
            "amplitude": list(tr.amplitude),
            "frequency": list(tr.frequency),
            "phase": list(tr.phase),
            "rotations": [asdict(rc) | {"axis": list(rc.axis)} for rc in tr.rotations],
        },
        "rig": [
            {
                "R_bc": c.R_bc.tolist(),
                "t_bc": c.t_bc.tolist(),
                "fx": c.fx,
                "fy": c.fy,
                "cx": c.cx,
                "cy": c.cy,
                "width": c.width,
                "height": c.height,
            }
            for c in rig.cameras
        ],
        "landmark_count": s.landmark_count,
        "pixel_sigma": s.pixel_sigma,
        "outlier_fraction": s.outlier_fraction,
    }


def scenario_from_dict(d: dict) -> SimScenario:
    """Build a scenario from a (possibly partial) config dict.

    Missing keys fall back to :func:`default_scenario`. ``rig`` may be a list
    of camera dicts or an integer camera count for the preset rig.
    """
    version = d.get("schema_version", SCENARIO_SCHEMA_VERSION)
    if version != SCENARIO_SCHEMA_VERSION:
        raise ValueError("unsupported scenario schema_version %r" % version)
    base = default_scenario()
    kw = {}
    for key in ("seed", "duration", "imu_rate", "keyframe_interval", "landmark_count", "pixel_sigma",
                "outlier_fraction", "simulate_noise"):
        if key in d:
            kw[key] = d[key]
    if "gravity" in d:
        kw["gravity"] = tuple(float(v) for v in d["gravity"])
    rate = float(d.get("imu_rate", base.imu_rate))
    nd = {k: getattr(base.noise, k) for k in ("sigma_g", "sigma_a", "sigma_bg", "sigma_ba")}
    nd.update(d.get("noise", {}))
    kw["noise"] = ImuNoise(rate=rate, **nd)
    if "intrinsics" in d:
        kw["intrinsics"] = ImuIntrinsics(**{k: _matrix(v) for k, v in d["intrinsics"].items()})
    if "initial_bias" in d:
        b = d["initial_bias"]
        kw["initial_bias"] = ImuBias(_matrix(b.get("gyro", [0, 0, 0])), _matrix(b.get("accel", [0, 0, 0])))
    if "trajectory" in d:
        t = dict(d["trajectory"])
        rots = tuple(
            RotationComponent(tuple(r["axis"]), r["amplitude"], r["frequency"], r.get("phase", 0.0))
            for r in t.pop("rotations", [])
        )
        kw["trajectory"] = AnalyticTrajectory(**{k: tuple(v) for k, v in t.items()}, rotations=rots)
    if "rig" in d:
        rig = d["rig"]
        if isinstance(rig, int):
            kw["rig"] = default_rig(rig)
        else:
            kw["rig"] = CameraRig(
                tuple(
                    PinholeCamera(_matrix(c["R_bc"]), _matrix(c["t_bc"]), c["fx"], c["fy"], c["cx"], c["cy"],
                                  c["width"], c["height"])
                    for c in rig
                )
            )
    return replace(base, **kw)


def load_scenario(path: str | Path) -> SimScenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))
