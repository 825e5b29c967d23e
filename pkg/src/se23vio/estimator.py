"""Fixed-lag visual-inertial bundle adjustment over a sliding window.

The cost is the sum of squared whitened IMU residuals plus Huber-robustified
squared whitened reprojection errors. It is minimised with Levenberg-Marquardt;
landmarks are eliminated with a Schur complement. The oldest keyframe's pose
is held fixed (the gauge); its velocity and biases stay free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg

from .imu import ImuBias
from .lie import so3_exp
from .preintegration import NavState, PreintegratedImu, information_sqrt
from .residuals import (
    CameraRig,
    Observation,
    huber_cost,
    huber_weight,
    imu_residual,
    imu_residual_jacobians,
    project_points,
)

STATE_DIM = 15
# rays to a landmark must span at least this angle (rad) for it to be estimated
MIN_PARALLAX = 5e-3
_BLOCK_NAMES = ("rotation", "position", "velocity", "gyro_bias", "accel_bias")


class RankDeficientSystem(np.linalg.LinAlgError):
    """Normal equations singular beyond the gauge; ``null_dimensions`` names them."""

    def __init__(self, null_dimensions: list[str]):
        super().__init__("rank-deficient normal equations, null dimensions: " + ", ".join(null_dimensions))
        self.null_dimensions = null_dimensions


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 20
    lambda0: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    lambda_max: float = 1e10
    rel_cost_tol: float = 1e-6
    update_tol: float = 1e-8
    huber_delta: float = 1.345
    window_size: int = 10
    # "anchor_pose": first keyframe rotation + position fixed;
    # "anchor_state": the whole first keyframe state fixed
    gauge: str = "anchor_pose"
    check_rank: bool = True

    def __post_init__(self):
        for name in ("lambda0", "lambda_up", "lambda_max", "rel_cost_tol", "update_tol", "huber_delta"):
            if not getattr(self, name) > 0:
                raise ValueError("%s must be positive" % name)
        if not 0 < self.lambda_down < 1 < self.lambda_up:
            raise ValueError("need 0 < lambda_down < 1 < lambda_up")
        if self.max_iterations < 1 or self.window_size < 2:
            raise ValueError("need max_iterations >= 1 and window_size >= 2")
        if self.gauge not in ("anchor_pose", "anchor_state"):
            raise ValueError("unknown gauge policy %r" % self.gauge)

    @property
    def fixed_dims(self) -> np.ndarray:
        return np.arange(6) if self.gauge == "anchor_pose" else np.arange(STATE_DIM)


@dataclass
class ImuFactor:
    preint: PreintegratedImu
    sqrt_info: np.ndarray = None

    def __post_init__(self):
        if self.sqrt_info is None:
            self.sqrt_info = information_sqrt(self.preint)[0]


@dataclass
class Window:
    """Keyframe states, IMU factors between consecutive keyframes, landmarks
    and the observations made from the keyframes in the window.

    ``frame_ids[k]`` is the global keyframe id of ``states[k]``; observations
    refer to keyframes by that id.
    """

    states: list[NavState]
    frame_ids: list[int]
    imu_factors: list[ImuFactor]
    landmarks: dict[int, np.ndarray]
    observations: list[Observation]
    rig: CameraRig
    gravity: np.ndarray

    def validate(self) -> None:
        if len(self.imu_factors) != len(self.states) - 1:
            raise ValueError("consecutive keyframes need exactly one IMU factor each")
        if len(self.frame_ids) != len(self.states):
            raise ValueError("frame_ids and states differ in length")
        counts = self.observation_counts()
        for lid in self.landmarks:
            if counts.get(lid, 0) < 2:
                raise ValueError("landmark %d has fewer than 2 observations" % lid)

    def observation_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for o in self.observations:
            counts[o.landmark_id] = counts.get(o.landmark_id, 0) + 1
        return counts

    def active_observations(self) -> list[Observation]:
        """Observations of landmarks that are currently estimated."""
        return [o for o in self.observations if o.landmark_id in self.landmarks]


@dataclass(frozen=True)
class KeyframeData:
    frame_id: int
    state: NavState  # initial guess
    preint: PreintegratedImu | None  # from the previous keyframe; None for the first
    observations: tuple[Observation, ...] = ()


def slide_window(window: Window, data: KeyframeData, max_size: int) -> Window:
    """Append a keyframe; beyond ``max_size`` drop the oldest keyframe.

    Dropping removes the oldest state, its outgoing IMU factor and its
    observations; landmarks left with fewer than two observations are
    removed (they are re-triangulated if observed again). The new oldest
    keyframe becomes the anchor.
    """
    states = window.states + [data.state]
    frame_ids = window.frame_ids + [data.frame_id]
    factors = list(window.imu_factors)
    if len(window.states) > 0:
        if data.preint is None:
            raise ValueError("a keyframe after the first needs an IMU factor")
        factors.append(ImuFactor(data.preint))
    observations = window.observations + list(data.observations)
    landmarks = dict(window.landmarks)
    while len(states) > max_size:
        gone = frame_ids[0]
        states, frame_ids, factors = states[1:], frame_ids[1:], factors[1:]
        observations = [o for o in observations if o.frame_id != gone]
    counts: dict[int, int] = {}
    for o in observations:
        counts[o.landmark_id] = counts.get(o.landmark_id, 0) + 1
    landmarks = {k: v for k, v in landmarks.items() if counts.get(k, 0) >= 2}
    return Window(states, frame_ids, factors, landmarks, observations, window.rig, window.gravity)


def empty_window(rig: CameraRig, gravity: np.ndarray) -> Window:
    return Window([], [], [], {}, [], rig, np.asarray(gravity, dtype=float))


# ------------------------------------------------------------------ triangulation


def triangulate(
    observations: Sequence[Observation],
    poses: dict[int, NavState],
    rig: CameraRig,
    max_whitened: float = 4.0,
    min_baseline: float = 1e-3,
    min_parallax: float = MIN_PARALLAX,
) -> np.ndarray | None:
    """Least-squares ray midpoint of the observations of one landmark.

    ``poses`` maps frame ids to body poses. Returns ``None`` when fewer than
    two rays are available, the camera centres are closer than
    ``min_baseline``, the rays span less than ``min_parallax`` radians, the
    point falls behind a camera or any reprojection error exceeds
    ``max_whitened`` sigmas.
    """
    obs = [o for o in observations if o.frame_id in poses]
    if len(obs) < 2:
        return None
    centres, dirs = [], []
    for o in obs:
        cam = rig.cameras[o.camera_index]
        x = poses[o.frame_id]
        ray_c = np.array([(o.pixel[0] - cam.cx) / cam.fx, (o.pixel[1] - cam.cy) / cam.fy, 1.0])
        R_wc = x.rotation @ cam.R_bc
        d = R_wc @ ray_c
        centres.append(x.position + x.rotation @ cam.t_bc)
        dirs.append(d / np.linalg.norm(d))
    centres, dirs = np.array(centres), np.array(dirs)
    if np.max(np.linalg.norm(centres - centres[0], axis=1)) <= min_baseline:
        return None
    P = np.eye(3)[None] - dirs[:, :, None] * dirs[:, None, :]
    A = P.sum(axis=0)
    b = np.einsum("nij,nj->i", P, centres)
    if _max_ray_angle(dirs) < min_parallax:
        return None
    X = np.linalg.solve(A, b)
    for o in obs:
        x = poses[o.frame_id]
        uv, vis = project_points(rig.cameras[o.camera_index], x.rotation, x.position, X[None])
        if not vis[0] or np.linalg.norm(uv[0] - o.pixel) / o.sigma_px > max_whitened:
            return None
    return X


def _max_ray_angle(dirs: np.ndarray) -> float:
    """Largest angle between any two unit vectors."""
    c = np.clip(dirs @ dirs.T, -1.0, 1.0)
    return float(np.arccos(c.min()))


def initialize_landmarks(window: Window) -> Window:
    """Triangulate landmarks that have two or more observations but no estimate."""
    pending: dict[int, list[Observation]] = {}
    for o in window.observations:
        if o.landmark_id not in window.landmarks:
            pending.setdefault(o.landmark_id, []).append(o)
    poses = dict(zip(window.frame_ids, window.states))
    landmarks = dict(window.landmarks)
    for lid, obs in pending.items():
        if len(obs) >= 2:
            X = triangulate(obs, poses, window.rig)
            if X is not None:
                landmarks[lid] = X
    return replace(window, landmarks=landmarks)


def prune_landmarks(window: Window, min_parallax: float = MIN_PARALLAX) -> Window:
    """Drop landmarks that would leave a (near-)singular block in the system:
    fewer than two observations projecting at the current estimate, or
    viewing rays spanning less than ``min_parallax``."""
    index = _visual_index(window)
    R, p, L = _stack(window, index.landmark_ids)
    nL = len(index.landmark_ids)
    visible = np.zeros(nL, dtype=int)
    # per landmark: running min of the cosine between each ray and the first ray seen
    first = np.full((nL, 3), np.nan)
    min_cos = np.ones(nL)
    for cam, f, l, _, _ in index.per_camera:
        c = window.rig.cameras[cam]
        _, vis = project_points(c, R[f], p[f], L[l])
        np.add.at(visible, l[vis], 1)
        centres = p[f] + np.einsum("nij,j->ni", R[f], c.t_bc)
        rays = L[l] - centres
        rays /= np.linalg.norm(rays, axis=1, keepdims=True)
        for k in range(len(l)):
            i = l[k]
            if not vis[k]:
                continue
            if np.isnan(first[i, 0]):
                first[i] = rays[k]
            else:
                min_cos[i] = min(min_cos[i], float(first[i] @ rays[k]))
    parallax = np.arccos(np.clip(min_cos, -1.0, 1.0))
    keep = {lid for lid, n, a in zip(index.landmark_ids, visible, parallax) if n >= 2 and a >= min_parallax}
    return replace(window, landmarks={k: v for k, v in window.landmarks.items() if k in keep})


# ------------------------------------------------------------------ normal equations


@dataclass
class NormalEquations:
    """Gauss-Newton system ``H dx = -g`` split into state and landmark parts.

    State blocks cover all ``15 N`` coordinates (fixed ones included);
    ``free`` selects the optimised ones. ``H_ll`` holds the 3x3 diagonal
    landmark blocks in ``landmark_ids`` order.
    """

    H_xx: np.ndarray
    H_xl: np.ndarray
    H_ll: np.ndarray
    g_x: np.ndarray
    g_l: np.ndarray
    cost: float
    n_invisible: int
    landmark_ids: list[int]
    free: np.ndarray

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        """Full reduced system ``(H, g)`` over free state coordinates then landmarks."""
        L = len(self.landmark_ids)
        Hxx = self.H_xx[np.ix_(self.free, self.free)]
        Hxl = self.H_xl[self.free]
        Hll = scipy.linalg.block_diag(*self.H_ll) if L else np.zeros((0, 0))
        H = np.block([[Hxx, Hxl], [Hxl.T, Hll]])
        return H, np.concatenate([self.g_x[self.free], self.g_l])


@dataclass
class _VisualIndex:
    """Per-camera arrays describing the active observations."""

    per_camera: list[tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    landmark_ids: list[int]


def _visual_index(window: Window) -> _VisualIndex:
    lids = sorted(window.landmarks)
    col = {lid: i for i, lid in enumerate(lids)}
    slot = {fid: k for k, fid in enumerate(window.frame_ids)}
    groups: dict[int, list[Observation]] = {}
    for o in window.observations:
        if o.landmark_id in col and o.frame_id in slot:
            groups.setdefault(o.camera_index, []).append(o)
    per_camera = []
    for cam, obs in sorted(groups.items()):
        per_camera.append(
            (
                cam,
                np.array([slot[o.frame_id] for o in obs]),
                np.array([col[o.landmark_id] for o in obs]),
                np.array([o.pixel for o in obs], dtype=float),
                np.array([o.sigma_px for o in obs], dtype=float),
            )
        )
    return _VisualIndex(per_camera, lids)


def _stack(window: Window, lids: list[int]):
    R = np.array([s.rotation for s in window.states])
    p = np.array([s.position for s in window.states])
    L = np.array([window.landmarks[i] for i in lids]).reshape(-1, 3)
    return R, p, L


def _imu_cost(window: Window) -> float:
    cost = 0.0
    for k, f in enumerate(window.imu_factors):
        r = f.sqrt_info @ imu_residual(window.states[k], window.states[k + 1], f.preint, window.gravity)
        cost += float(r @ r)
    return cost


def evaluate_cost(window: Window, config: SolverConfig, index: _VisualIndex | None = None) -> tuple[float, int]:
    """Total robust cost and the number of observations that failed to project."""
    index = index or _visual_index(window)
    cost = _imu_cost(window)
    R, p, L = _stack(window, index.landmark_ids)
    invisible = 0
    for cam, f, l, pix, sig in index.per_camera:
        uv, vis = project_points(window.rig.cameras[cam], R[f], p[f], L[l])
        n = np.linalg.norm(pix - uv, axis=1) / sig
        cost += float(huber_cost(n[vis], config.huber_delta).sum())
        invisible += int((~vis).sum())
    return cost, invisible


def _free_mask(n_states: int, config: SolverConfig) -> np.ndarray:
    mask = np.ones(STATE_DIM * n_states, dtype=bool)
    mask[config.fixed_dims] = False
    return np.flatnonzero(mask)


def build_normal_equations(
    window: Window, config: SolverConfig, index: _VisualIndex | None = None
) -> NormalEquations:
    """Linearise every factor at the current window and accumulate ``H`` and ``g``."""
    index = index or _visual_index(window)
    N = len(window.states)
    lids = index.landmark_ids
    nL = len(lids)
    Hxx = np.zeros((STATE_DIM * N, STATE_DIM * N))
    gx = np.zeros(STATE_DIM * N)
    cost = 0.0

    for k, f in enumerate(window.imu_factors):
        r, Ji, Jj = imu_residual_jacobians(window.states[k], window.states[k + 1], f.preint, window.gravity)
        W = f.sqrt_info
        r = W @ r
        J = np.hstack([W @ Ji, W @ Jj])
        sl = slice(STATE_DIM * k, STATE_DIM * (k + 2))
        Hxx[sl, sl] += J.T @ J
        gx[sl] += J.T @ r
        cost += float(r @ r)

    pose_H = np.zeros((N, 6, 6))
    pose_g = np.zeros((N, 6))
    Hxl = np.zeros((N, nL, 6, 3))
    Hll = np.zeros((nL, 3, 3))
    gl = np.zeros((nL, 3))
    invisible = 0
    R, p, L = _stack(window, lids)
    for cam, f, l, pix, sig in index.per_camera:
        uv, vis, J_rot, J_pos, J_lm = project_points(window.rig.cameras[cam], R[f], p[f], L[l], jacobians=True)
        invisible += int((~vis).sum())
        f, l, sig = f[vis], l[vis], sig[vis]
        r = (pix[vis] - uv[vis]) / sig[:, None]
        n = np.linalg.norm(r, axis=1)
        w = huber_weight(n, config.huber_delta)
        cost += float(huber_cost(n, config.huber_delta).sum())
        scale = -1.0 / sig[:, None, None]
        Jp = np.concatenate([J_rot[vis], J_pos[vis]], axis=2) * scale
        Jl = J_lm[vis] * scale
        JpT = np.transpose(Jp, (0, 2, 1)) * w[:, None, None]
        JlT = np.transpose(Jl, (0, 2, 1)) * w[:, None, None]
        np.add.at(pose_H, f, JpT @ Jp)
        np.add.at(pose_g, f, np.einsum("nij,nj->ni", JpT, r))
        np.add.at(Hxl, (f, l), JpT @ Jl)
        np.add.at(Hll, l, JlT @ Jl)
        np.add.at(gl, l, np.einsum("nij,nj->ni", JlT, r))

    for k in range(N):
        sl = slice(STATE_DIM * k, STATE_DIM * k + 6)
        Hxx[sl, sl] += pose_H[k]
        gx[sl] += pose_g[k]
    H_xl = np.zeros((STATE_DIM * N, 3 * nL))
    for k in range(N):
        H_xl[STATE_DIM * k : STATE_DIM * k + 6] = np.transpose(Hxl[k], (1, 0, 2)).reshape(6, 3 * nL)
    return NormalEquations(Hxx, H_xl, Hll, gx, gl.ravel(), cost, invisible, lids, _free_mask(N, config))


def _dimension_name(k: int, n_free_x: int, free: np.ndarray, lids: list[int]) -> str:
    if k < n_free_x:
        idx = int(free[k])
        state, local = divmod(idx, STATE_DIM)
        return "state[%d].%s[%d]" % (state, _BLOCK_NAMES[local // 3], local % 3)
    lm, axis = divmod(k - n_free_x, 3)
    return "landmark[%d][%d]" % (lids[lm], axis)


def check_rank(neq: NormalEquations, rel_tol: float = 1e-12) -> None:
    """Raise :class:`RankDeficientSystem` if the undamped system is singular.

    Each landmark block is checked first; the state part is then checked
    through its Schur complement, which is singular exactly when the full
    system is (given non-singular landmark blocks).
    """
    nx = len(neq.free)
    names = lambda ks: [_dimension_name(int(k), nx, neq.free, neq.landmark_ids) for k in ks]  # noqa: E731
    nL = len(neq.landmark_ids)
    if nL:
        d = np.sqrt(np.diagonal(neq.H_ll, axis1=1, axis2=2))
        dead = np.flatnonzero(np.any(d == 0, axis=1))
        if len(dead):
            raise RankDeficientSystem(names((nx + 3 * dead[:, None] + np.arange(3)).ravel()))
        ev = np.linalg.eigvalsh(neq.H_ll / d[:, :, None] / d[:, None, :])
        bad = np.flatnonzero(ev[:, 0] < rel_tol * ev[:, -1])
        if len(bad):
            raise RankDeficientSystem(names((nx + 3 * bad[:, None] + np.arange(3)).ravel()))
    S = _schur(neq, 0.0)[0]
    d = np.sqrt(np.diag(S).clip(min=0.0))
    if np.any(d == 0):
        raise RankDeficientSystem(names(np.flatnonzero(d == 0)))
    ev, V = np.linalg.eigh(S / d[:, None] / d[None, :])
    null = ev < rel_tol * ev[-1]
    if np.any(null):
        weight = np.sum(V[:, null] ** 2, axis=1)
        raise RankDeficientSystem(names(np.flatnonzero(weight > 0.1)))


def _schur(neq: NormalEquations, lam: float):
    free = neq.free
    nL = len(neq.landmark_ids)
    Hxx = neq.H_xx[np.ix_(free, free)]
    Hxx = Hxx + lam * np.diag(np.diag(Hxx))
    Hxl = neq.H_xl[free]
    gx = neq.g_x[free]
    if not nL:
        return Hxx, gx, Hxl, None
    diag = np.diagonal(neq.H_ll, axis1=1, axis2=2)
    Hll_inv = np.linalg.inv(neq.H_ll + lam * np.einsum("ni,ij->nij", diag, np.eye(3)))
    # Hxl * blockdiag(Hll^-1)
    blocks = Hxl.reshape(len(free), nL, 3).transpose(1, 0, 2) @ Hll_inv
    HxlHinv = blocks.transpose(1, 0, 2).reshape(len(free), 3 * nL)
    return Hxx - HxlHinv @ Hxl.T, gx - HxlHinv @ neq.g_l, Hxl, Hll_inv


def solve_normal_equations(neq: NormalEquations, lam: float, method: str = "schur") -> tuple[np.ndarray, np.ndarray]:
    """Damped step ``(dx over all 15N state coordinates, dl)``.

    Damping is Marquardt-style: ``lam * diag(H)`` is added to the diagonal.
    """
    free = neq.free
    nL = len(neq.landmark_ids)
    dx = np.zeros(len(neq.g_x))
    if method == "dense":
        H, g = neq.dense()
        H = H + lam * np.diag(np.diag(H))
        sol = scipy.linalg.solve(H, -g, assume_a="pos")
        dx[free] = sol[: len(free)]
        return dx, sol[len(free) :]
    if method != "schur":
        raise ValueError("unknown method %r" % method)
    S, rhs, Hxl, Hll_inv = _schur(neq, lam)
    c = scipy.linalg.cho_factor(S)
    dxf = scipy.linalg.cho_solve(c, -rhs)
    dx[free] = dxf
    if not nL:
        return dx, np.zeros(0)
    t = -neq.g_l.reshape(nL, 3) - (Hxl.T @ dxf).reshape(nL, 3)
    dl = np.einsum("nij,nj->ni", Hll_inv, t).ravel()
    return dx, dl


def retract(window: Window, dx: np.ndarray, dl: np.ndarray, landmark_ids: list[int]) -> Window:
    """Apply a step: rotations on the left, everything else additively."""
    states = []
    for k, s in enumerate(window.states):
        d = dx[STATE_DIM * k : STATE_DIM * (k + 1)]
        states.append(
            NavState(
                so3_exp(d[0:3]) @ s.rotation,
                s.position + d[3:6],
                s.velocity + d[6:9],
                ImuBias(s.bias.gyro + d[9:12], s.bias.accel + d[12:15]),
            )
        )
    landmarks = dict(window.landmarks)
    for i, lid in enumerate(landmark_ids):
        landmarks[lid] = landmarks[lid] + dl[3 * i : 3 * i + 3]
    return replace(window, states=states, landmarks=landmarks)


@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool
    lambda_trace: list[float] = field(default_factory=list)
    cost_trace: list[float] = field(default_factory=list)  # accepted costs, starting with the initial one
    n_invisible: int = 0


def solve_window(window: Window, config: SolverConfig = SolverConfig()) -> tuple[Window, SolveReport]:
    """Levenberg-Marquardt over the window with Schur elimination of landmarks.

    Returns the best iterate. ``report.converged`` is False when the
    iteration limit or the damping ceiling was hit first.
    """
    window.validate()
    if len(window.states) < 2:
        cost, inv = evaluate_cost(window, config)
        return window, SolveReport(0, cost, cost, True, [], [cost], inv)
    index = _visual_index(window)
    neq = build_normal_equations(window, config, index)
    if config.check_rank:
        check_rank(neq)
    cost = neq.cost
    report = SolveReport(0, cost, cost, False, [], [cost], neq.n_invisible)
    lam = config.lambda0
    while report.iterations < config.max_iterations:
        report.iterations += 1
        report.lambda_trace.append(lam)
        try:
            dx, dl = solve_normal_equations(neq, lam)
        except np.linalg.LinAlgError:
            lam *= config.lambda_up
            if lam > config.lambda_max:
                break
            continue
        candidate = retract(window, dx, dl, neq.landmark_ids)
        new_cost, invisible = evaluate_cost(candidate, config, index)
        step = math.sqrt(float(dx @ dx + dl @ dl))
        if math.isfinite(new_cost) and new_cost <= cost:
            assert new_cost <= report.cost_trace[-1]
            decrease = cost - new_cost
            window, cost = candidate, new_cost
            report.cost_trace.append(cost)
            report.n_invisible = invisible
            lam = max(lam * config.lambda_down, 1e-12)
            if step < config.update_tol or decrease <= config.rel_cost_tol * max(cost, 1e-300):
                report.converged = True
                break
            neq = build_normal_equations(window, config, index)
        else:
            if step < config.update_tol:
                report.converged = True
                break
            lam *= config.lambda_up
            if lam > config.lambda_max:
                break
    report.final_cost = cost
    return window, report


# ------------------------------------------------------------------ evaluation


def align_yaw_translation(est: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares yaw rotation ``R`` and translation ``t`` with ``R est + t ~ ref``."""
    ce, cr = est.mean(axis=0), ref.mean(axis=0)
    a, b = est - ce, ref - cr
    s = np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    c = np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1])
    yaw = math.atan2(s, c)
    R = so3_exp(np.array([0.0, 0.0, yaw]))
    return R, cr - R @ ce


def ate_rmse(est_positions: np.ndarray, ref_positions: np.ndarray) -> float:
    """Absolute trajectory error after 4-dof (yaw + translation) alignment."""
    est, ref = np.asarray(est_positions, float), np.asarray(ref_positions, float)
    R, t = align_yaw_translation(est, ref)
    err = est @ R.T + t - ref
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


# ------------------------------------------------------------------ pipeline


@dataclass
class EstimationResult:
    frame_ids: list[int]
    times: np.ndarray
    estimates: list[NavState]  # final estimate of every keyframe
    truth: list[NavState]
    reports: list[SolveReport]
    ate: float
    diverged: bool


def _finite_state(s: NavState) -> bool:
    return bool(
        np.all(np.isfinite(s.rotation))
        and np.all(np.isfinite(s.position))
        and np.all(np.isfinite(s.velocity))
        and np.all(np.isfinite(s.bias.as_vector()))
    )


def run_estimation(
    sim, config: SolverConfig = SolverConfig(), rig: CameraRig | None = None, min_keyframes: int = 3
) -> EstimationResult:
    """Run the fixed-lag estimator over a :class:`~se23vio.simulation.Simulation`.

    The first keyframe's pose and velocity are taken from ground truth with a
    zero bias guess; later keyframes are initialised by IMU prediction from
    the current estimate of their predecessor. Solving starts once the window
    holds ``min_keyframes`` keyframes (with two, the accelerometer bias and
    the velocities are not separable); while the window is still filling, a
    rank-deficient system skips the solve instead of failing the run.
    """
    from .preintegration import integrate_all, new_preintegration, predict

    scenario = sim.scenario
    rig = rig or scenario.rig
    kf = list(sim.keyframe_indices)
    by_frame: dict[int, list[Observation]] = {}
    for o in sim.scene.observations:
        if o.camera_index < len(rig.cameras):
            by_frame.setdefault(o.frame_id, []).append(o)
    t0 = sim.truth[0]
    first = NavState(t0.rotation, t0.position, t0.velocity, ImuBias())
    window = empty_window(rig, scenario.g)
    window = slide_window(window, KeyframeData(0, first, None, tuple(by_frame.get(0, ()))), config.window_size)
    final: dict[int, NavState] = {}
    reports = []
    diverged = False
    for f in range(1, len(kf)):
        prev = window.states[-1]
        p = integrate_all(
            new_preintegration(prev.bias, scenario.noise), sim.measurements[kf[f - 1] : kf[f]]
        )
        guess = predict(p, prev, scenario.g)
        if len(window.states) == config.window_size:
            final[window.frame_ids[0]] = window.states[0]
        window = slide_window(window, KeyframeData(f, guess, p, tuple(by_frame.get(f, ()))), config.window_size)
        window = prune_landmarks(initialize_landmarks(window))
        if len(window.states) < min_keyframes:
            continue
        try:
            window, report = solve_window(window, config)
        except RankDeficientSystem:
            if len(window.states) < config.window_size:
                # not yet observable while the window fills; keep the prediction
                continue
            diverged = True
            break
        except (np.linalg.LinAlgError, ValueError):
            diverged = True
            break
        reports.append(report)
        if not all(_finite_state(s) for s in window.states) or not math.isfinite(report.final_cost):
            diverged = True
            break
    for fid, s in zip(window.frame_ids, window.states):
        final[fid] = s
    ids = sorted(final)
    est = [final[i] for i in ids]
    truth = [sim.truth[kf[i]] for i in ids]
    if diverged or not all(_finite_state(s) for s in est):
        ate = math.inf
        diverged = True
    else:
        ate = ate_rmse(np.array([s.position for s in est]), np.array([s.position for s in truth]))
    times = np.array([kf[i] / scenario.imu_rate for i in ids])
    return EstimationResult(ids, times, est, truth, reports, ate, diverged)
