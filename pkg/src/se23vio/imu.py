"""IMU measurements, the intrinsic error model and its compensation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .lie import check_rotation


@dataclass(frozen=True)
class RawImuMeasurement:
    t: float
    gyro: np.ndarray
    accel: np.ndarray


@dataclass(frozen=True)
class CompensatedImuMeasurement:
    """Biased but skew-free, scale-correct measurement held until ``t + dt_to_next``."""

    t: float
    gyro: np.ndarray
    accel: np.ndarray
    dt_to_next: float

    def __post_init__(self):
        if not self.dt_to_next > 0:
            raise ValueError("dt_to_next must be positive, got %r" % self.dt_to_next)


@dataclass(frozen=True)
class ImuBias:
    gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.gyro, self.accel])

    @classmethod
    def from_vector(cls, b: np.ndarray) -> "ImuBias":
        b = np.asarray(b, dtype=float)
        return cls(b[:3].copy(), b[3:6].copy())


@dataclass(frozen=True)
class ImuNoise:
    """Continuous-time noise densities and the nominal sample rate.

    sigma_g : rad/s/sqrt(Hz), sigma_a : m/s^2/sqrt(Hz),
    sigma_bg : rad/s^2/sqrt(Hz), sigma_ba : m/s^3/sqrt(Hz), rate : Hz.
    """

    sigma_g: float
    sigma_a: float
    sigma_bg: float
    sigma_ba: float
    rate: float

    def __post_init__(self):
        for name in ("sigma_g", "sigma_a", "sigma_bg", "sigma_ba", "rate"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError("%s must be strictly positive, got %r" % (name, value))

    def scaled(self, factor: float) -> "ImuNoise":
        return ImuNoise(
            self.sigma_g * factor,
            self.sigma_a * factor,
            self.sigma_bg * factor,
            self.sigma_ba * factor,
            self.rate,
        )


def _check_unitriangular(M: np.ndarray, name: str) -> None:
    if np.any(np.diag(M) != 1.0) or np.any(np.triu(M, 1) != 0.0):
        raise ValueError("%s must be lower unitriangular" % name)


def _check_scale(S: np.ndarray, name: str) -> None:
    if np.any(S - np.diag(np.diag(S)) != 0.0) or np.any(np.diag(S) <= 0):
        raise ValueError("%s must be diagonal with positive entries" % name)


@dataclass(frozen=True)
class ImuIntrinsics:
    """Scale, misalignment, g-sensitivity and gyro-to-accel rotation."""

    S_alpha: np.ndarray = field(default_factory=lambda: np.eye(3))
    M_alpha: np.ndarray = field(default_factory=lambda: np.eye(3))
    S_omega: np.ndarray = field(default_factory=lambda: np.eye(3))
    M_omega: np.ndarray = field(default_factory=lambda: np.eye(3))
    A_omega: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    C_omega: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        for name in ("S_alpha", "M_alpha", "S_omega", "M_omega", "A_omega", "C_omega"):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape != (3, 3) or not np.all(np.isfinite(value)):
                raise ValueError("%s must be a finite 3x3 matrix" % name)
            object.__setattr__(self, name, value)
        _check_scale(self.S_alpha, "S_alpha")
        _check_scale(self.S_omega, "S_omega")
        _check_unitriangular(self.M_alpha, "M_alpha")
        _check_unitriangular(self.M_omega, "M_omega")
        check_rotation(self.C_omega, 1e-10)
        for name, K in (("accelerometer", self.accel_matrix), ("gyroscope", self.gyro_matrix)):
            if np.linalg.cond(K) >= 1e3:
                raise ValueError("%s scale/misalignment is too badly conditioned" % name)

    @property
    def accel_matrix(self) -> np.ndarray:
        return self.S_alpha @ self.M_alpha

    @property
    def gyro_matrix(self) -> np.ndarray:
        return self.S_omega @ self.M_omega


def apply_intrinsics(
    true_gyro: np.ndarray,
    true_accel: np.ndarray,
    intrinsics: ImuIntrinsics,
    bias: ImuBias | None = None,
    noise_sample: tuple[np.ndarray, np.ndarray] | None = None,
    t: float = 0.0,
) -> RawImuMeasurement:
    """Forward sensor model. ``noise_sample`` is ``(n_gyro, n_accel)``."""
    bias = bias if bias is not None else ImuBias()
    n_g, n_a = noise_sample if noise_sample is not None else (np.zeros(3), np.zeros(3))
    a = np.asarray(true_accel, dtype=float)
    w = np.asarray(true_gyro, dtype=float)
    accel = intrinsics.accel_matrix @ a + bias.accel + n_a
    gyro = intrinsics.gyro_matrix @ intrinsics.C_omega @ w + intrinsics.A_omega @ a + bias.gyro + n_g
    return RawImuMeasurement(t, gyro, accel)


def compensate_vectors(
    gyro: np.ndarray, accel: np.ndarray, intrinsics: ImuIntrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """Invert the intrinsic model for one sample or a stack of samples (rows)."""
    accel = np.linalg.solve(intrinsics.accel_matrix, np.asarray(accel, dtype=float).T).T
    rhs = np.asarray(gyro, dtype=float).T - intrinsics.A_omega @ accel.T
    gyro = (intrinsics.C_omega.T @ np.linalg.solve(intrinsics.gyro_matrix, rhs)).T
    return gyro, accel


def compensate(
    raw: RawImuMeasurement, intrinsics: ImuIntrinsics, dt_to_next: float
) -> CompensatedImuMeasurement:
    gyro, accel = compensate_vectors(raw.gyro, raw.accel, intrinsics)
    return CompensatedImuMeasurement(raw.t, gyro, accel, dt_to_next)


def compensate_stream(
    raws: Sequence[RawImuMeasurement], intrinsics: ImuIntrinsics, rate: float
) -> list[CompensatedImuMeasurement]:
    """Compensate a batch; hold periods come from consecutive timestamps.

    The final sample takes the nominal period ``1 / rate``.
    """
    if not raws:
        return []
    t = np.array([m.t for m in raws])
    if np.any(np.diff(t) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    gyro, accel = compensate_vectors(
        np.array([m.gyro for m in raws]), np.array([m.accel for m in raws]), intrinsics
    )
    dts = np.append(np.diff(t), 1.0 / rate)
    return [
        CompensatedImuMeasurement(float(t[k]), gyro[k], accel[k], float(dts[k]))
        for k in range(len(raws))
    ]


def discrete_noise_covariance(noise: ImuNoise, dt: float) -> np.ndarray:
    """12x12 covariance of (n_gyro, n_accel, tau_gyro, tau_accel) over one step.

    Every block is the density squared divided by ``dt``; the step matrix
    multiplies the random-walk blocks by ``dt`` so their net contribution is
    ``sigma_b**2 * dt``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    diag = np.repeat(
        np.array([noise.sigma_g, noise.sigma_a, noise.sigma_bg, noise.sigma_ba]) ** 2 / dt, 3
    )
    return np.diag(diag)


class ImuCsvError(ValueError):
    """Malformed IMU CSV; ``line`` is the 1-based line number in the file."""

    def __init__(self, message: str, line: int):
        super().__init__("line %d: %s" % (line, message))
        self.line = line


IMU_CSV_HEADER = ("timestamp_ns", "wx", "wy", "wz", "ax", "ay", "az")


def read_imu_csv(path: str | Path) -> list[RawImuMeasurement]:
    """Read ``timestamp_ns,wx,wy,wz,ax,ay,az`` rows after one header line."""
    out: list[RawImuMeasurement] = []
    last_ns = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            next(reader)
        except StopIteration:
            raise ImuCsvError("empty file", 1) from None
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 7:
                raise ImuCsvError("expected 7 columns, got %d" % len(row), line)
            try:
                ns = int(row[0])
                vals = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise ImuCsvError(str(exc), line) from None
            if not all(math.isfinite(v) for v in vals):
                raise ImuCsvError("non-finite value", line)
            if last_ns is not None and ns <= last_ns:
                raise ImuCsvError("timestamp not strictly increasing", line)
            last_ns = ns
            out.append(RawImuMeasurement(ns * 1e-9, np.array(vals[:3]), np.array(vals[3:])))
    return out


def write_imu_csv(path: str | Path, measurements: Iterable[RawImuMeasurement]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(IMU_CSV_HEADER) + "\n")
        for m in measurements:
            vals = ",".join("%.17g" % v for v in (*m.gyro, *m.accel))
            fh.write("%d,%s\n" % (int(round(m.t * 1e9)), vals))
