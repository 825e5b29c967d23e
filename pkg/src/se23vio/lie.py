"""SO(3) and SE_2(3) primitives used by the exact pre-integration.

Rotations are plain ``(3, 3)`` float64 arrays. Extended poses are stored as
``(R, p, v)`` triples; the 5x5 matrix form is only built on request.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Below this angle so3_exp / so3_log use their Taylor expansions.
SMALL_ANGLE = 1e-4
# Below this value of dt*|omega| the J1/J2 family uses truncated series.
# 1e-4 is too small for J2: (x^2/2 + cos x - 1)/x^4 loses all digits there.
JACOBIAN_SERIES_SWITCH = 0.05
_SERIES_TERMS = 7

_EYE3 = np.eye(3)


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix with ``hat(v) @ w == np.cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


so3_hat = hat
so3_vee = vee


def is_rotation(R: np.ndarray, tol: float = 1e-12) -> bool:
    R = np.asarray(R)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(
        np.max(np.abs(R.T @ R - _EYE3)) <= tol and abs(np.linalg.det(R) - 1.0) <= tol
    )


def check_rotation(R: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Return ``R`` as a float array, raising ``ValueError`` if it is not in SO(3)."""
    R = np.asarray(R, dtype=float)
    if not is_rotation(R, tol):
        raise ValueError("matrix is not a proper rotation (tolerance %g)" % tol)
    return R


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    u, _, vt = np.linalg.svd(R)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues' formula, with a 4th-order expansion near the identity."""
    phi = np.asarray(phi, dtype=float)
    x = math.sqrt(float(phi @ phi))
    W = hat(phi)
    if x < SMALL_ANGLE:
        x2 = x * x
        a = 1.0 - x2 / 6.0 + x2 * x2 / 120.0
        b = 0.5 - x2 / 24.0 + x2 * x2 / 720.0
    else:
        a = math.sin(x) / x
        s = math.sin(0.5 * x)
        b = 2.0 * s * s / (x * x)
    return _EYE3 + a * W + b * (W @ W)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Principal logarithm of a rotation, returned as a rotation vector.

    For angles within 1e-9 of pi the sense of rotation is numerically
    undefined. The axis is then read from the column of ``R + I`` with the
    largest diagonal entry and its sign is chosen so that the component of
    largest magnitude is positive.
    """
    R = np.asarray(R, dtype=float)
    w = 0.5 * vee(R - R.T)  # sin(theta) * axis
    s = math.sqrt(float(w @ w))
    c = 0.5 * (np.trace(R) - 1.0)
    theta = math.atan2(s, c)
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0) * w
    if theta < math.pi - 1e-2:
        return (theta / s) * w
    # near pi: the symmetric part carries the axis accurately
    B = 0.5 * (R + R.T) - c * _EYE3  # (1 - cos) n n^T
    k = int(np.argmax(np.diag(B)))
    n = B[:, k] / math.sqrt(B[k, k])
    n /= np.linalg.norm(n)
    if math.pi - theta < 1e-9:
        if n[int(np.argmax(np.abs(n)))] < 0:
            n = -n
    elif n @ w < 0:
        n = -n
    return theta * n


def _series_table(m: int, derivative: bool) -> tuple[float, ...]:
    # Horner coefficients in x^2 of sum_j (-1)^j x^(2j) / (2j+m)!  (or of c'(x)/x)
    start = 1 if derivative else 0
    coeffs = []
    for j in range(start, start + _SERIES_TERMS):
        c = (-1.0) ** j / math.factorial(2 * j + m)
        coeffs.append(2 * j * c if derivative else c)
    return tuple(reversed(coeffs))


_SERIES = {(m, d): _series_table(m, d) for m in (2, 3, 4) for d in (False, True)}


def _horner(coeffs: tuple[float, ...], x2: float) -> float:
    acc = 0.0
    for c in coeffs:
        acc = acc * x2 + c
    return acc


def _coefficients(x: float) -> tuple[float, float, float]:
    """c1 = (1-cos x)/x^2, c2 = (x-sin x)/x^3, c3 = (x^2/2+cos x-1)/x^4."""
    x2 = x * x
    if x < JACOBIAN_SERIES_SWITCH:
        return (
            _horner(_SERIES[2, False], x2),
            _horner(_SERIES[3, False], x2),
            _horner(_SERIES[4, False], x2),
        )
    s, c = math.sin(x), math.cos(x)
    return (1.0 - c) / x2, (x - s) / (x2 * x), (0.5 * x2 + c - 1.0) / (x2 * x2)


def _coefficient_derivatives(x: float) -> tuple[float, float, float]:
    """c_k'(x) / x for the three coefficients above."""
    x2 = x * x
    if x < JACOBIAN_SERIES_SWITCH:
        return (
            _horner(_SERIES[2, True], x2),
            _horner(_SERIES[3, True], x2),
            _horner(_SERIES[4, True], x2),
        )
    s, c = math.sin(x), math.cos(x)
    x4 = x2 * x2
    d1 = s / (x2 * x) - 2.0 * (1.0 - c) / x4
    d2 = (1.0 - c) / x4 - 3.0 * (x - s) / (x4 * x)
    d3 = (x - s) / (x4 * x) - 4.0 * (0.5 * x2 + c - 1.0) / (x4 * x2)
    return d1, d2, d3


def right_jacobians(dt: float, omega: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form single and double integrals of ``exp(s * hat(omega))``.

    Returns ``(J1, J2)`` with ``J1 = int_0^dt exp(s W) ds`` and
    ``J2 = int_0^dt int_0^s exp(u W) du ds``. For ``omega = 0`` they reduce to
    ``dt * I`` and ``dt**2 / 2 * I``.
    """
    omega = np.asarray(omega, dtype=float)
    x = dt * math.sqrt(float(omega @ omega))
    c1, c2, c3 = _coefficients(x)
    W = hat(omega)
    W2 = W @ W
    dt2 = dt * dt
    J1 = dt * _EYE3 + dt2 * c1 * W + dt2 * dt * c2 * W2
    J2 = 0.5 * dt2 * _EYE3 + dt2 * dt * c2 * W + dt2 * dt2 * c3 * W2
    return J1, J2


def input_jacobian_derivatives(
    dt: float, omega: np.ndarray, accel: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of ``J1(omega) @ accel`` and ``J2(omega) @ accel`` w.r.t. omega.

    Obtained by differentiating the closed forms term by term; below
    ``JACOBIAN_SERIES_SWITCH`` the same expressions are evaluated from their
    Taylor series so there is no cancellation as ``omega -> 0``.
    """
    omega = np.asarray(omega, dtype=float)
    a = np.asarray(accel, dtype=float)
    x = dt * math.sqrt(float(omega @ omega))
    c1, c2, c3 = _coefficients(x)
    d1, d2, d3 = _coefficient_derivatives(x)
    W = hat(omega)
    wa = W @ a
    wwa = W @ wa
    A = hat(a)
    # d(w x (w x a))/dw
    dwwa = -hat(wa) - W @ A
    dt2 = dt * dt
    dt3 = dt2 * dt
    K1 = (
        -dt2 * c1 * A
        + dt2 * dt2 * d1 * np.outer(wa, omega)
        + dt3 * c2 * dwwa
        + dt3 * dt2 * d2 * np.outer(wwa, omega)
    )
    K2 = (
        -dt3 * c2 * A
        + dt3 * dt2 * d2 * np.outer(wa, omega)
        + dt2 * dt2 * c3 * dwwa
        + dt3 * dt3 * d3 * np.outer(wwa, omega)
    )
    return K1, K2


def step_rotation(dt: float, omega: np.ndarray) -> np.ndarray:
    """``exp(dt W)`` evaluated exactly as in :func:`step_terms`.

    The Euler scheme uses this so both schemes share one rotation update.
    """
    wx, wy, wz = omega
    x = dt * math.sqrt(wx * wx + wy * wy + wz * wz)
    c1, c2, _ = _coefficients(x)
    W = np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])
    return _EYE3 + (dt * (1.0 - x * x * c2)) * W + (dt * dt * c1) * (W @ W)


def step_terms(
    dt: float, omega: np.ndarray, accel: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``(exp(dt W), J1, J2, dJ1a/dw, dJ2a/dw)`` sharing one set of coefficients.

    Equivalent to calling so3_exp, right_jacobians and
    input_jacobian_derivatives separately; used on the per-sample hot path.
    """
    wx, wy, wz = omega
    x = dt * math.sqrt(wx * wx + wy * wy + wz * wz)
    c1, c2, c3 = _coefficients(x)
    d1, d2, d3 = _coefficient_derivatives(x)
    W = np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])
    W2 = W @ W
    dt2 = dt * dt
    dt3 = dt2 * dt
    dt4 = dt2 * dt2
    # sin(x)/x == 1 - x^2 c2
    dR = _EYE3 + (dt * (1.0 - x * x * c2)) * W + (dt2 * c1) * W2
    J1 = dt * _EYE3 + (dt2 * c1) * W + (dt3 * c2) * W2
    J2 = (0.5 * dt2) * _EYE3 + (dt3 * c2) * W + (dt4 * c3) * W2
    wa = W @ accel
    wwa = W @ wa
    ax, ay, az = accel
    A = np.array([[0.0, -az, ay], [az, 0.0, -ax], [-ay, ax, 0.0]])
    ux, uy, uz = wa
    dwwa = -np.array([[0.0, -uz, uy], [uz, 0.0, -ux], [-uy, ux, 0.0]]) - W @ A
    o_wa = wa[:, None] * omega
    o_wwa = wwa[:, None] * omega
    K1 = (-dt2 * c1) * A + (dt4 * d1) * o_wa + (dt3 * c2) * dwwa + (dt4 * dt * d2) * o_wwa
    K2 = (-dt3 * c2) * A + (dt4 * dt * d2) * o_wa + (dt4 * c3) * dwwa + (dt3 * dt3 * d3) * o_wwa
    return dR, J1, J2, K1, K2


def so3_right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Right Jacobian of SO(3): ``exp(phi + d) ~= exp(phi) exp(Jr(phi) d)``."""
    J1, _ = right_jacobians(1.0, -np.asarray(phi, dtype=float))
    return J1


def so3_right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    x = math.sqrt(float(phi @ phi))
    W = hat(phi)
    if x < JACOBIAN_SERIES_SWITCH:
        x2 = x * x
        k = 1.0 / 12.0 + x2 / 720.0 + x2 * x2 / 30240.0
    else:
        k = 1.0 / (x * x) - (1.0 + math.cos(x)) / (2.0 * x * math.sin(x))
    return _EYE3 + 0.5 * W + k * (W @ W)


@dataclass(frozen=True)
class ExtendedPose:
    """Element of SE_2(3): attitude, position and velocity."""

    rotation: np.ndarray
    position: np.ndarray
    velocity: np.ndarray

    @classmethod
    def identity(cls) -> "ExtendedPose":
        return cls(np.eye(3), np.zeros(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "ExtendedPose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3].copy(), m[:3, 3].copy(), m[:3, 4].copy())

    def as_matrix(self) -> np.ndarray:
        m = np.eye(5)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.position
        m[:3, 4] = self.velocity
        return m

    def compose(self, other: "ExtendedPose") -> "ExtendedPose":
        return se23_compose(self, other)

    def inverse(self) -> "ExtendedPose":
        return se23_inverse(self)

    def __matmul__(self, other: "ExtendedPose") -> "ExtendedPose":
        return se23_compose(self, other)


def se23_compose(a: ExtendedPose, b: ExtendedPose) -> ExtendedPose:
    R = a.rotation
    return ExtendedPose(R @ b.rotation, R @ b.position + a.position, R @ b.velocity + a.velocity)


def se23_inverse(x: ExtendedPose) -> ExtendedPose:
    Rt = x.rotation.T
    return ExtendedPose(Rt, -Rt @ x.position, -Rt @ x.velocity)


def gravity_phase(T: float, g: np.ndarray) -> np.ndarray:
    """``exp(-T (G - D))`` as a 5x5 matrix.

    Only the position entry depends on T quadratically; note its sign is
    negative (``-T**2 / 2 * g``), which is what makes
    ``gravity_phase(a + b) == gravity_phase(a) @ gravity_phase(b)``.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    g = np.asarray(g, dtype=float)
    m = np.eye(5)
    m[:3, 3] = -0.5 * T * T * g
    m[:3, 4] = -T * g
    m[4, 3] = T
    return m


@dataclass(frozen=True)
class InputPhaseStep:
    rotation_step: np.ndarray
    p_column: np.ndarray
    v_column: np.ndarray
    dt: float

    def as_matrix(self) -> np.ndarray:
        m = np.eye(5)
        m[:3, :3] = self.rotation_step
        m[:3, 3] = self.p_column
        m[:3, 4] = self.v_column
        m[4, 3] = self.dt
        return m


def input_phase(dt: float, omega_unbiased: np.ndarray, accel_unbiased: np.ndarray) -> InputPhaseStep:
    """Closed form of ``exp(dt (U - B + D))`` for constant inputs."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    omega = np.asarray(omega_unbiased, dtype=float)
    accel = np.asarray(accel_unbiased, dtype=float)
    J1, J2 = right_jacobians(dt, omega)
    return InputPhaseStep(so3_exp(dt * omega), J2 @ accel, J1 @ accel, dt)


def input_generator(dt: float, omega: np.ndarray, accel: np.ndarray) -> np.ndarray:
    """The 5x5 matrix ``dt (U - B + D)`` (bias already removed from the inputs)."""
    m = np.zeros((5, 5))
    m[:3, :3] = dt * hat(omega)
    m[:3, 4] = dt * np.asarray(accel, dtype=float)
    m[4, 3] = dt
    return m


def gravity_generator(T: float, g: np.ndarray) -> np.ndarray:
    """The 5x5 matrix ``-T (G - D)``."""
    m = np.zeros((5, 5))
    m[:3, 4] = -T * np.asarray(g, dtype=float)
    m[4, 3] = T
    return m


def _batch_coefficients(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    small = x < JACOBIAN_SERIES_SWITCH
    xs = np.where(small, 1.0, x)
    x2s = xs * xs
    s, c = np.sin(xs), np.cos(xs)
    x2 = x * x
    out = []
    for m, closed in (
        (2, (1.0 - c) / x2s),
        (3, (xs - s) / (x2s * xs)),
        (4, (0.5 * x2s + c - 1.0) / (x2s * x2s)),
    ):
        series = np.zeros_like(x)
        for coef in _SERIES[m, False]:
            series = series * x2 + coef
        out.append(np.where(small, series, closed))
    return tuple(out)


def input_phase_batch(dt: np.ndarray, omega: np.ndarray, accel: np.ndarray) -> np.ndarray:
    """Vectorised :func:`input_phase` as ``(n, 5, 5)`` matrices.

    ``dt`` has shape ``(n,)``; ``omega`` and ``accel`` have shape ``(n, 3)``.
    """
    dt = np.asarray(dt, dtype=float)
    omega = np.asarray(omega, dtype=float)
    accel = np.asarray(accel, dtype=float)
    if np.any(dt <= 0):
        raise ValueError("dt must be positive")
    n = len(dt)
    W = np.zeros((n, 3, 3))
    wx, wy, wz = omega.T
    W[:, 0, 1], W[:, 0, 2] = -wz, wy
    W[:, 1, 0], W[:, 1, 2] = wz, -wx
    W[:, 2, 0], W[:, 2, 1] = -wy, wx
    W2 = W @ W
    x = dt * np.linalg.norm(omega, axis=1)
    c1, c2, c3 = _batch_coefficients(x)
    d1, d2, d3, d4 = (dt ** k for k in (1, 2, 3, 4))
    col = lambda f: f[:, None, None]  # noqa: E731
    dR = np.eye(3) + col(d1 * np.sinc(x / np.pi)) * W + col(d2 * c1) * W2
    J1 = col(d1) * np.eye(3) + col(d2 * c1) * W + col(d3 * c2) * W2
    J2 = col(0.5 * d2) * np.eye(3) + col(d3 * c2) * W + col(d4 * c3) * W2
    m = np.zeros((n, 5, 5))
    m[:, :3, :3] = dR
    m[:, :3, 3] = np.einsum("nij,nj->ni", J2, accel)
    m[:, :3, 4] = np.einsum("nij,nj->ni", J1, accel)
    m[:, 3, 3] = 1.0
    m[:, 4, 4] = 1.0
    m[:, 4, 3] = dt
    return m
