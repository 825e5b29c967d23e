"""Exact SE_2(3) IMU pre-integration: mean, 15x15 error covariance and bias Jacobians.

Error-state order throughout: rotation (log), position, velocity, gyro bias,
accel bias. Noise order: gyro white, accel white, gyro random walk, accel
random walk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Literal, Sequence

import numpy as np
import scipy.linalg

from .imu import CompensatedImuMeasurement, ImuBias, ImuNoise, discrete_noise_covariance
from .lie import so3_exp, so3_log, step_rotation, step_terms

Mode = Literal["exact", "euler"]

_EYE3 = np.eye(3)


@dataclass(frozen=True)
class NavState:
    rotation: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    bias: ImuBias = field(default_factory=ImuBias)

    def with_bias(self, bias: ImuBias) -> "NavState":
        return replace(self, bias=bias)


@dataclass(frozen=True)
class PreintegratedImu:
    delta_R: np.ndarray
    delta_p: np.ndarray
    delta_v: np.ndarray
    delta_t: float
    bias_lin: ImuBias
    cov: np.ndarray
    jac_dR_dbg: np.ndarray
    jac_dp_dbg: np.ndarray
    jac_dp_dba: np.ndarray
    jac_dv_dbg: np.ndarray
    jac_dv_dba: np.ndarray
    noise: ImuNoise
    mode: Mode = "exact"
    # scales B in the covariance recursion; 1.0 except for fault injection
    noise_model_scale: float = 1.0


def new_preintegration(
    bias_lin: ImuBias, noise: ImuNoise, mode: Mode = "exact", noise_model_scale: float = 1.0
) -> PreintegratedImu:
    if mode not in ("exact", "euler"):
        raise ValueError("unknown mode %r" % mode)
    z = np.zeros((3, 3))
    return PreintegratedImu(
        delta_R=np.eye(3),
        delta_p=np.zeros(3),
        delta_v=np.zeros(3),
        delta_t=0.0,
        bias_lin=bias_lin,
        cov=np.zeros((15, 15)),
        jac_dR_dbg=z,
        jac_dp_dbg=z,
        jac_dp_dba=z,
        jac_dv_dbg=z,
        jac_dv_dba=z,
        noise=noise,
        mode=mode,
        noise_model_scale=noise_model_scale,
    )


def _skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def step_matrices(
    delta_R: np.ndarray,
    omega: np.ndarray,
    accel: np.ndarray,
    dt: float,
    mode: Mode = "exact",
) -> tuple[np.ndarray, np.ndarray, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Error transition ``A`` (15x15), noise input ``B`` (15x12) and ``(dR, J1, J2)``.

    ``delta_R`` is the accumulated rotation before the step; ``omega`` and
    ``accel`` have the linearisation bias removed.
    """
    if mode == "exact":
        dR, J1, J2, K1, K2 = step_terms(dt, omega, accel)
    else:
        dR = step_rotation(dt, omega)
        J1, J2 = dt * _EYE3, 0.5 * dt * dt * _EYE3
        K1 = K2 = np.zeros((3, 3))
    RJ1 = delta_R @ J1
    RJ2 = delta_R @ J2
    # D1 multiplies the gyro-bias error in the position row, D2 (negated) in
    # the velocity row; the noise columns carry the opposite signs
    D1 = -delta_R @ K2
    D2 = delta_R @ K1
    # dt * Jr(dt * omega) == J1^T (dt * I in euler mode)
    Jr = J1.T
    dtI = dt * _EYE3

    A = np.eye(15)
    A[0:3, 0:3] = dR.T
    A[0:3, 9:12] = -Jr
    A[3:6, 0:3] = -delta_R @ _skew(J2 @ accel)
    A[3:6, 6:9] = dtI
    A[3:6, 9:12] = D1
    A[3:6, 12:15] = -RJ2
    A[6:9, 0:3] = -delta_R @ _skew(J1 @ accel)
    A[6:9, 9:12] = -D2
    A[6:9, 12:15] = -RJ1

    B = np.zeros((15, 12))
    B[0:3, 0:3] = Jr
    B[3:6, 0:3] = -D1
    B[3:6, 3:6] = RJ2
    B[6:9, 0:3] = D2
    B[6:9, 3:6] = RJ1
    B[9:12, 6:9] = -dtI
    B[12:15, 9:12] = -dtI
    return A, B, (dR, J1, J2)


def _noise_diagonal(noise: ImuNoise, dt: float) -> np.ndarray:
    key = (noise, dt)
    q = _NOISE_CACHE.get(key)
    if q is None:
        if len(_NOISE_CACHE) > 256:
            _NOISE_CACHE.clear()
        q = _NOISE_CACHE[key] = np.diag(discrete_noise_covariance(noise, dt)).copy()
    return q


_NOISE_CACHE: dict = {}


def integrate(p: PreintegratedImu, m: CompensatedImuMeasurement, dt: float | None = None) -> PreintegratedImu:
    """Advance the pre-integration by one held measurement.

    ``dt`` overrides ``m.dt_to_next`` (used to truncate the last sample of a
    window at the keyframe time).
    """
    dt = m.dt_to_next if dt is None else dt
    if not dt > 0:
        raise ValueError("integration step must be positive, got %r" % dt)
    omega = m.gyro - p.bias_lin.gyro
    accel = m.accel - p.bias_lin.accel
    if not math.isfinite(omega.sum() + accel.sum()):
        raise ValueError("non-finite IMU measurement at t=%r" % m.t)
    A, B, (dR, J1, J2) = step_matrices(p.delta_R, omega, accel, dt, p.mode)
    R = p.delta_R

    if p.noise_model_scale != 1.0:
        B = p.noise_model_scale * B
    cov = A @ p.cov @ A.T + (B * _noise_diagonal(p.noise, dt)) @ B.T
    cov = 0.5 * (cov + cov.T)

    # bias Jacobians: accumulate the bias columns of the product of A's
    phi = np.zeros((9, 6))
    phi[0:3, 0:3] = p.jac_dR_dbg
    phi[3:6, 0:3] = p.jac_dp_dbg
    phi[3:6, 3:6] = p.jac_dp_dba
    phi[6:9, 0:3] = p.jac_dv_dbg
    phi[6:9, 3:6] = p.jac_dv_dba
    phi = A[0:9, 0:9] @ phi + A[0:9, 9:15]

    return PreintegratedImu(
        delta_R=R @ dR,
        delta_p=p.delta_p + dt * p.delta_v + R @ (J2 @ accel),
        delta_v=p.delta_v + R @ (J1 @ accel),
        delta_t=p.delta_t + dt,
        bias_lin=p.bias_lin,
        cov=cov,
        jac_dR_dbg=phi[0:3, 0:3],
        jac_dp_dbg=phi[3:6, 0:3],
        jac_dp_dba=phi[3:6, 3:6],
        jac_dv_dbg=phi[6:9, 0:3],
        jac_dv_dba=phi[6:9, 3:6],
        noise=p.noise,
        mode=p.mode,
        noise_model_scale=p.noise_model_scale,
    )


def integrate_all(p: PreintegratedImu, measurements: Iterable[CompensatedImuMeasurement]) -> PreintegratedImu:
    for m in measurements:
        p = integrate(p, m)
    return p


def preintegrate_interval(
    measurements: Sequence[CompensatedImuMeasurement],
    t_start: float,
    t_end: float,
    bias_lin: ImuBias,
    noise: ImuNoise,
    mode: Mode = "exact",
    min_step: float = 1e-9,
) -> PreintegratedImu:
    """Pre-integrate the zero-order-hold signal over ``[t_start, t_end]``.

    Each measurement holds from its timestamp to ``t + dt_to_next``; pieces
    shorter than ``min_step`` (timestamp round-off) are skipped.
    """
    p = new_preintegration(bias_lin, noise, mode)
    for m in measurements:
        lo = max(m.t, t_start)
        hi = min(m.t + m.dt_to_next, t_end)
        if hi - lo > min_step:
            p = integrate(p, m, hi - lo)
    return p


def predict(p: PreintegratedImu, x_i: NavState, g: np.ndarray) -> NavState:
    """Propagate a keyframe state through the pre-integrated motion."""
    T = p.delta_t
    R = x_i.rotation
    return NavState(
        rotation=R @ p.delta_R,
        position=x_i.position + T * x_i.velocity + 0.5 * T * T * g + R @ p.delta_p,
        velocity=x_i.velocity + T * g + R @ p.delta_v,
        bias=x_i.bias,
    )


def bias_corrected_deltas(
    p: PreintegratedImu, new_bias: ImuBias
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First-order update of the deltas to another bias (valid for |db| <~ 0.05)."""
    dbg = new_bias.gyro - p.bias_lin.gyro
    dba = new_bias.accel - p.bias_lin.accel
    return (
        p.delta_R @ so3_exp(p.jac_dR_dbg @ dbg),
        p.delta_p + p.jac_dp_dbg @ dbg + p.jac_dp_dba @ dba,
        p.delta_v + p.jac_dv_dbg @ dbg + p.jac_dv_dba @ dba,
    )


class IllConditionedCovariance(ValueError):
    pass


def information_sqrt(p_or_cov: PreintegratedImu | np.ndarray) -> tuple[np.ndarray, float]:
    """Upper-triangular ``W`` with ``W.T @ W == inv(cov + lam * I)``.

    Returns ``(W, lam)`` where ``lam = 1e-12 * trace(cov) / 15``.
    """
    cov = p_or_cov.cov if isinstance(p_or_cov, PreintegratedImu) else np.asarray(p_or_cov, dtype=float)
    n = cov.shape[0]
    lam = 1e-12 * float(np.trace(cov)) / n
    reg = cov + lam * np.eye(n)
    eig = np.linalg.eigvalsh(reg)
    if eig[0] <= 0 or eig[-1] / eig[0] > 1e14:
        raise IllConditionedCovariance(
            "covariance condition number too large (min eig %.3g, max eig %.3g)" % (eig[0], eig[-1])
        )
    rev = np.arange(n - 1, -1, -1)
    # chol of the reversed matrix gives an upper factor after reversing back
    L = np.linalg.cholesky(reg[np.ix_(rev, rev)])
    Linv = scipy.linalg.solve_triangular(L, np.eye(n), lower=True)
    W = Linv[np.ix_(rev, rev)]
    return W, lam


def error_vector(
    estimate: PreintegratedImu | tuple,
    reference: PreintegratedImu | tuple,
    bias_estimate: ImuBias | None = None,
    bias_true: ImuBias | None = None,
) -> np.ndarray:
    """15-vector error ``estimate (-) reference`` in the covariance's ordering."""
    def parts(x):
        if isinstance(x, PreintegratedImu):
            return x.delta_R, x.delta_p, x.delta_v
        return x

    Re, pe, ve = parts(estimate)
    Rt, pt, vt = parts(reference)
    e = np.zeros(15)
    e[0:3] = so3_log(Rt.T @ Re)
    e[3:6] = pe - pt
    e[6:9] = ve - vt
    if bias_estimate is not None and bias_true is not None:
        e[9:12] = bias_estimate.gyro - bias_true.gyro
        e[12:15] = bias_estimate.accel - bias_true.accel
    return e


def nees(error: np.ndarray, cov: np.ndarray) -> float:
    return float(error @ np.linalg.solve(cov, error))
