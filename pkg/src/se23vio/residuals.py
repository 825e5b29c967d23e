"""IMU and multi-camera reprojection residuals with analytic Jacobians.

State perturbations follow the estimator's retraction: rotations are
perturbed on the left (``R <- exp(phi) R``), everything else additively.
Per keyframe the 15 local coordinates are ordered (phi, p, v, b_g, b_a).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .imu import ImuBias
from .lie import check_rotation, hat, so3_exp, so3_log, so3_right_jacobian, so3_right_jacobian_inv
from .preintegration import NavState, PreintegratedImu, bias_corrected_deltas

__all__ = [
    "NavState",
    "PinholeCamera",
    "CameraRig",
    "Landmark",
    "Observation",
    "imu_residual",
    "imu_residual_jacobians",
    "project",
    "project_points",
    "reprojection_residual",
    "huber_weight",
    "Z_MIN",
]

Z_MIN = 0.05


@dataclass(frozen=True)
class PinholeCamera:
    """Pinhole camera mounted at ``(R_bc, t_bc)``: camera-to-body rotation and
    the camera centre in the body frame."""

    R_bc: np.ndarray
    t_bc: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "R_bc", check_rotation(self.R_bc, 1e-9))
        object.__setattr__(self, "t_bc", np.asarray(self.t_bc, dtype=float))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def project_camera(self, pc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pixels and 2x3 Jacobians for camera-frame points ``pc`` of shape (n, 3)."""
        X, Y, Z = pc[:, 0], pc[:, 1], pc[:, 2]
        iz = 1.0 / Z
        uv = np.stack([self.fx * X * iz + self.cx, self.fy * Y * iz + self.cy], axis=1)
        J = np.zeros((len(pc), 2, 3))
        J[:, 0, 0] = self.fx * iz
        J[:, 0, 2] = -self.fx * X * iz * iz
        J[:, 1, 1] = self.fy * iz
        J[:, 1, 2] = -self.fy * Y * iz * iz
        return uv, J

    def in_image(self, uv: np.ndarray) -> np.ndarray:
        return (uv[:, 0] >= 0) & (uv[:, 0] < self.width) & (uv[:, 1] >= 0) & (uv[:, 1] < self.height)


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple[PinholeCamera, ...]

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        if not self.cameras:
            raise ValueError("a rig needs at least one camera")

    def __len__(self) -> int:
        return len(self.cameras)


@dataclass(frozen=True)
class Landmark:
    id: int
    position: np.ndarray


@dataclass(frozen=True)
class Observation:
    frame_id: int
    camera_index: int
    landmark_id: int
    pixel: np.ndarray
    sigma_px: float = 1.0

    def __post_init__(self):
        if not self.sigma_px > 0:
            raise ValueError("sigma_px must be positive")


def _relative_terms(x_i: NavState, x_j: NavState, T: float, g: np.ndarray):
    y_p = x_j.position - x_i.position - T * x_i.velocity - 0.5 * T * T * g
    y_v = x_j.velocity - x_i.velocity - T * g
    return y_p, y_v


def imu_residual(x_i: NavState, x_j: NavState, p: PreintegratedImu, g: np.ndarray) -> np.ndarray:
    """15-vector (e_R, e_p, e_v, e_bg, e_ba) between two keyframe states.

    The deltas are first-order corrected to ``x_i.bias``; the rotation part
    is ``log((R_i^T R_j)^T dR)``.
    """
    if not p.delta_t > 0:
        raise ValueError("pre-integration covers no time")
    dR, dp, dv = bias_corrected_deltas(p, x_i.bias)
    Rt = x_i.rotation.T
    y_p, y_v = _relative_terms(x_i, x_j, p.delta_t, g)
    r = np.empty(15)
    r[0:3] = so3_log(x_j.rotation.T @ x_i.rotation @ dR)
    r[3:6] = dp - Rt @ y_p
    r[6:9] = dv - Rt @ y_v
    r[9:12] = x_j.bias.gyro - x_i.bias.gyro
    r[12:15] = x_j.bias.accel - x_i.bias.accel
    return r


def imu_residual_jacobians(
    x_i: NavState, x_j: NavState, p: PreintegratedImu, g: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residual and its 15x15 Jacobians with respect to the two states."""
    r = imu_residual(x_i, x_j, p, g)
    T = p.delta_t
    dbg = x_i.bias.gyro - p.bias_lin.gyro
    corr = p.jac_dR_dbg @ dbg
    dR = p.delta_R @ so3_exp(corr)
    Rt = x_i.rotation.T
    y_p, y_v = _relative_terms(x_i, x_j, T, g)
    Jrinv = so3_right_jacobian_inv(r[0:3])
    I3 = np.eye(3)

    Ji = np.zeros((15, 15))
    Jj = np.zeros((15, 15))
    dphi = Jrinv @ dR.T @ Rt
    Ji[0:3, 0:3] = dphi
    Jj[0:3, 0:3] = -dphi
    Ji[0:3, 9:12] = Jrinv @ so3_right_jacobian(corr) @ p.jac_dR_dbg

    Ji[3:6, 0:3] = -Rt @ hat(y_p)
    Ji[3:6, 3:6] = Rt
    Ji[3:6, 6:9] = T * Rt
    Ji[3:6, 9:12] = p.jac_dp_dbg
    Ji[3:6, 12:15] = p.jac_dp_dba
    Jj[3:6, 3:6] = -Rt

    Ji[6:9, 0:3] = -Rt @ hat(y_v)
    Ji[6:9, 6:9] = Rt
    Ji[6:9, 9:12] = p.jac_dv_dbg
    Ji[6:9, 12:15] = p.jac_dv_dba
    Jj[6:9, 6:9] = -Rt

    Ji[9:15, 9:15] = -np.eye(6)
    Jj[9:15, 9:15] = np.eye(6)
    return r, Ji, Jj


def project_points(
    camera: PinholeCamera,
    R_wb: np.ndarray,
    p_wb: np.ndarray,
    p_w: np.ndarray,
    jacobians: bool = False,
):
    """Project world points through body poses into one camera (vectorised).

    ``R_wb`` is (n, 3, 3) or (3, 3), ``p_wb`` (n, 3) or (3,), ``p_w`` (n, 3).
    Returns ``(uv, visible)`` and, when requested, the 2x3 Jacobians of the
    pixel with respect to the body rotation perturbation, body position and
    landmark position.
    """
    p_w = np.atleast_2d(np.asarray(p_w, dtype=float))
    R_wb = np.broadcast_to(R_wb, (len(p_w), 3, 3))
    p_wb = np.broadcast_to(p_wb, (len(p_w), 3))
    d = p_w - p_wb
    pb = np.einsum("nji,nj->ni", R_wb, d)  # R_wb^T d
    pc = (pb - camera.t_bc) @ camera.R_bc  # R_bc^T (pb - t_bc)
    visible = pc[:, 2] > Z_MIN
    safe = np.where(visible[:, None], pc, np.array([0.0, 0.0, 1.0]))
    uv, Jproj = camera.project_camera(safe)
    visible &= camera.in_image(uv)
    if not jacobians:
        return uv, visible
    # d pc / d p_w = R_bc^T R_wb^T
    M = np.einsum("ji,njk->nik", camera.R_bc, np.transpose(R_wb, (0, 2, 1)))
    J_lm = Jproj @ M
    J_pos = -J_lm
    # d pb / d phi = R_wb^T hat(d)
    dx, dy, dz = d[:, 0], d[:, 1], d[:, 2]
    Hd = np.zeros((len(d), 3, 3))
    Hd[:, 0, 1], Hd[:, 0, 2] = -dz, dy
    Hd[:, 1, 0], Hd[:, 1, 2] = dz, -dx
    Hd[:, 2, 0], Hd[:, 2, 1] = -dy, dx
    J_rot = J_lm @ Hd
    return uv, visible, J_rot, J_pos, J_lm


def project(rig: CameraRig, k: int, R_wb: np.ndarray, p_wb: np.ndarray, p_n: np.ndarray) -> np.ndarray | None:
    """Pixel of world point ``p_n`` in camera ``k``, or ``None`` if not visible."""
    uv, visible = project_points(rig.cameras[k], R_wb, p_wb, np.asarray(p_n, dtype=float)[None])
    return uv[0] if visible[0] else None


def reprojection_residual(
    obs: Observation, rig: CameraRig, x_i: NavState, lm: Landmark
) -> np.ndarray | None:
    """Whitened ``(observed - projected) / sigma_px``; ``None`` if not visible."""
    uv = project(rig, obs.camera_index, x_i.rotation, x_i.position, lm.position)
    if uv is None:
        return None
    return (np.asarray(obs.pixel, dtype=float) - uv) / obs.sigma_px


def huber_weight(whitened_norm, delta: float):
    """IRLS weight of the Huber loss: 1 inside ``delta``, ``delta / norm`` outside."""
    n = np.asarray(whitened_norm, dtype=float)
    w = np.where(n <= delta, 1.0, delta / np.maximum(n, delta))
    return float(w) if w.ndim == 0 else w


def huber_cost(whitened_norm, delta: float):
    """Huber loss of the whitened norm, scaled so it equals ``norm**2`` inside ``delta``."""
    n = np.asarray(whitened_norm, dtype=float)
    c = np.where(n <= delta, n * n, 2.0 * delta * n - delta * delta)
    return float(c) if c.ndim == 0 else c
