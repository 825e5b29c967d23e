import json

import numpy as np
import pytest

from se23vio.imu import CompensatedImuMeasurement, ImuBias, ImuIntrinsics, ImuNoise
from se23vio.lie import hat, so3_log, vee
from se23vio.preintegration import NavState, integrate_all, new_preintegration, predict
from se23vio.residuals import reprojection_residual
from se23vio.simulation import (
    GRAVITY,
    AnalyticTrajectory,
    RotationComponent,
    SimScenario,
    UnderconstrainedScene,
    default_rig,
    default_scenario,
    fine_oracle,
    generate_scene,
    load_scenario,
    rotation_to_quaternion,
    sample_imu,
    scenario_from_dict,
    scenario_to_dict,
    simulate,
    simulate_imu,
    truth_state,
    write_trajectory_csv,
)

# mean number of keyframes per observed landmark on the default scenario
DEFAULT_TRACK_LENGTH = 20.48872180451128

STATIONARY = AnalyticTrajectory(p0=(1.0, 2.0, 3.0))


def noise_free(trajectory, **kw):
    kw = {"landmark_count": 50, **kw}
    return SimScenario(trajectory=trajectory, simulate_noise=False, rig=default_rig(4), **kw)


def held_measurements(scenario):
    dt = 1.0 / scenario.imu_rate
    sim = simulate_imu(scenario)
    return [
        CompensatedImuMeasurement(k * dt, sim.true_gyro[k], sim.true_accel[k], dt) for k in range(len(sim.true_gyro))
    ]


# ---------------------------------------------------------------- truth


def test_truth_at_zero():
    traj = default_scenario().trajectory
    x = truth_state(default_scenario(), 0.0)
    np.testing.assert_allclose(x.position, traj.position(0.0))
    np.testing.assert_allclose(x.velocity, traj.velocity(0.0))


def test_truth_out_of_range():
    with pytest.raises(ValueError):
        truth_state(default_scenario(), 10.5)
    with pytest.raises(ValueError):
        truth_state(default_scenario(), -0.1)


def test_velocity_and_acceleration_match_finite_differences():
    traj = default_scenario().trajectory
    h = 1e-5
    for t in np.linspace(0.1, 9.9, 17):
        fd_v = (traj.position(t + h) - traj.position(t - h)) / (2 * h)
        fd_a = (traj.velocity(t + h) - traj.velocity(t - h)) / (2 * h)
        np.testing.assert_allclose(traj.velocity(t), fd_v, atol=1e-8)
        np.testing.assert_allclose(traj.acceleration(t), fd_a, atol=1e-8)


def test_body_rate_matches_finite_differences():
    traj = default_scenario().trajectory
    h = 1e-5
    for t in np.linspace(0.1, 9.9, 17):
        Rdot = (traj.rotation(t + h) - traj.rotation(t - h)) / (2 * h)
        W = traj.rotation(t).T @ Rdot
        np.testing.assert_allclose(vee(0.5 * (W - W.T)), traj.body_rate(t), atol=1e-8)


def test_default_trajectory_peaks_near_three_rad_per_second():
    traj = default_scenario().trajectory
    rates = np.linalg.norm(traj.rotations_and_rates(np.linspace(0, 10, 20001))[1], axis=1)
    assert 2.8 < rates.max() <= 3.0


def test_scenario_validation():
    with pytest.raises(ValueError):
        default_scenario(duration=0.0)
    with pytest.raises(ValueError):
        default_scenario(imu_rate=5.0, noise=ImuNoise(1, 1, 1, 1, 5.0))
    with pytest.raises(ValueError):
        default_scenario(imu_rate=100.0)
    with pytest.raises(ValueError):
        AnalyticTrajectory(rotations=(RotationComponent((0.0, 0.0, 0.0), 1.0, 1.0),))


# ---------------------------------------------------------------- IMU synthesis


def test_stationary_level_imu_reads_gravity_reaction():
    sc = SimScenario(trajectory=STATIONARY, duration=1.0, simulate_noise=False)
    for m in sample_imu(sc):
        assert np.array_equal(m.gyro, np.zeros(3))
        np.testing.assert_allclose(m.accel, [0.0, 0.0, 9.81], atol=1e-15)


def test_fixed_seed_is_deterministic():
    sc = default_scenario(duration=1.0)
    a, b = sample_imu(sc), sample_imu(sc)
    assert all(np.array_equal(x.gyro, y.gyro) and np.array_equal(x.accel, y.accel) for x, y in zip(a, b))
    c = sample_imu(default_scenario(duration=1.0, seed=1))
    assert not np.array_equal(a[0].gyro, c[0].gyro)


def test_white_noise_variance():
    noise = ImuNoise(1e-3, 2e-2, 1e-5, 1e-4, 200.0)
    sc = SimScenario(trajectory=STATIONARY, duration=500.0, noise=noise, seed=9)
    sim = simulate_imu(sc)
    raw = np.array([np.r_[m.gyro, m.accel] for m in sim.raw])
    clean = np.c_[sim.true_gyro, sim.true_accel]
    residual = raw - clean - sim.raw_bias[:-1]
    assert len(residual) == 100_000
    dt = 1.0 / sc.imu_rate
    var = residual.var(axis=0)
    expected = np.repeat([noise.sigma_g**2, noise.sigma_a**2], 3) / dt
    np.testing.assert_allclose(var, expected, rtol=0.05)


def test_bias_walk_increments():
    noise = ImuNoise(1e-3, 2e-2, 1e-3, 1e-2, 200.0)
    sc = SimScenario(trajectory=STATIONARY, duration=500.0, noise=noise, seed=4)
    steps = np.diff(simulate_imu(sc).raw_bias, axis=0)
    expected = np.repeat([noise.sigma_bg**2, noise.sigma_ba**2], 3) / sc.imu_rate
    np.testing.assert_allclose(steps.var(axis=0), expected, rtol=0.05)


# ---------------------------------------------------------------- oracle


def test_oracle_single_substep_equals_integrate():
    sc = default_scenario(duration=2.0)
    meas = simulate(sc).measurements
    x0 = NavState(np.eye(3), np.zeros(3), np.zeros(3), ImuBias(np.full(3, 0.01), np.full(3, 0.1)))
    pred = predict(integrate_all(new_preintegration(x0.bias, sc.noise), meas), x0, sc.g)
    for method in ("closed_form", "expm"):
        ref = fine_oracle(meas, x0, sc.g, 1, method=method)
        assert np.abs(ref.rotation - pred.rotation).max() < 1e-13
        assert np.abs(ref.position - pred.position).max() < 1e-12
        assert np.abs(ref.velocity - pred.velocity).max() < 1e-12


def test_oracle_refinement_is_idle_under_constant_input(rng):
    x0 = NavState(np.eye(3), np.zeros(3), np.zeros(3))
    for _ in range(5):
        w, a = rng.normal(size=3) * 3, rng.normal(size=3) * 5
        meas = [CompensatedImuMeasurement(0.0, w, a, 0.05)]
        coarse = fine_oracle(meas, x0, GRAVITY, 1)
        fine = fine_oracle(meas, x0, GRAVITY, 1000)
        np.testing.assert_allclose(fine.rotation, coarse.rotation, atol=1e-12)
        np.testing.assert_allclose(fine.position, coarse.position, atol=1e-12)
        np.testing.assert_allclose(fine.velocity, coarse.velocity, atol=1e-12)


def test_oracle_methods_agree(rng):
    x0 = NavState(np.eye(3), np.zeros(3), np.zeros(3))
    meas = [CompensatedImuMeasurement(0.01 * k, rng.normal(size=3), rng.normal(size=3), 0.01) for k in range(20)]
    a = fine_oracle(meas, x0, GRAVITY, 50)
    b = fine_oracle(meas, x0, GRAVITY, 50, method="expm")
    np.testing.assert_allclose(a.position, b.position, atol=1e-12)
    np.testing.assert_allclose(a.rotation, b.rotation, atol=1e-12)


def test_oracle_rejects_bad_arguments():
    meas = [CompensatedImuMeasurement(0.0, np.zeros(3), np.zeros(3), 0.01)]
    x0 = NavState(np.eye(3), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        fine_oracle(meas, x0, GRAVITY, 0)
    with pytest.raises(ValueError):
        fine_oracle(meas, x0, GRAVITY, 1, method="rk4")


def _signal_scenario(duration=2.0):
    return noise_free(default_scenario().trajectory, duration=duration)


def test_oracle_converges_on_time_varying_signal():
    sc = _signal_scenario(1.0)
    meas = held_measurements(sc)
    signal = lambda t: sc.trajectory.body_inputs(t, sc.g)  # noqa: E731
    x0 = truth_state(sc, 0.0)
    truth = truth_state(sc, 1.0)
    errs = [np.linalg.norm(fine_oracle(meas, x0, sc.g, s, signal=signal).position - truth.position) for s in (1, 2, 4, 8)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.0)


def test_oracle_matches_analytic_truth_at_keyframes():
    sc = _signal_scenario(2.0)
    meas = held_measurements(sc)
    signal = lambda t: sc.trajectory.body_inputs(t, sc.g)  # noqa: E731
    x0 = truth_state(sc, 0.0)
    for i in sc.keyframe_indices()[1:]:
        ref = fine_oracle(meas[:i], x0, sc.g, 1024, signal=signal)
        truth = truth_state(sc, i / sc.imu_rate)
        assert np.linalg.norm(ref.position - truth.position) < 1e-9
        assert np.linalg.norm(so3_log(truth.rotation.T @ ref.rotation)) < 1e-9


# ---------------------------------------------------------------- scene


def test_noise_free_observations_have_zero_residual():
    sim = simulate(noise_free(default_scenario().trajectory, duration=1.0))
    kf = sim.keyframe_truth
    lms = {lm.id: lm for lm in sim.scene.landmarks}
    for obs in sim.scene.observations[:500]:
        r = reprojection_residual(obs, sim.scenario.rig, kf[obs.frame_id], lms[obs.landmark_id])
        np.testing.assert_allclose(r, 0.0, atol=1e-9)


def test_landmark_behind_all_cameras_is_absent():
    sc = noise_free(STATIONARY, duration=1.0, landmark_count=300)
    # body at (1, 2, 3) level: front cameras look along +x, side cameras along +-70 deg yaw
    states = [NavState(np.eye(3), np.array([1.0, 2.0, 3.0]), np.zeros(3))]
    scene = generate_scene(sc, states)
    behind = {lm.id for lm in scene.landmarks if lm.position[0] < 1.0 - 0.1 and abs(lm.position[1] - 2.0) < 0.1}
    seen = {o.landmark_id for o in scene.observations}
    assert behind and seen
    assert not (behind & seen)


def test_default_track_length_regression():
    sim = simulate(default_scenario())
    frames = {}
    for o in sim.scene.observations:
        frames.setdefault(o.landmark_id, set()).add(o.frame_id)
    mean = np.mean([len(v) for v in frames.values()])
    assert mean > 2
    assert mean == pytest.approx(DEFAULT_TRACK_LENGTH, rel=1e-12)


def test_inter_camera_covisibility_exists():
    sim = simulate(default_scenario(duration=2.0))
    cams = {}
    for o in sim.scene.observations:
        cams.setdefault((o.frame_id, o.landmark_id), set()).add(o.camera_index)
    multi = [c for c in cams.values() if len(c) > 1]
    assert multi
    # both the stereo pair and a side camera overlap with the forward cameras
    assert any({0, 1} <= c for c in multi) and any(c & {2, 3} and c & {0, 1} for c in multi)


def test_underconstrained_scene_raises():
    sc = noise_free(STATIONARY, duration=1.0, landmark_count=3)
    with pytest.raises(UnderconstrainedScene):
        generate_scene(sc, [NavState(np.eye(3), np.array([1.0, 2.0, 3.0]), np.zeros(3))])


def test_scene_is_deterministic():
    a = simulate(default_scenario(duration=1.0)).scene
    b = simulate(default_scenario(duration=1.0)).scene
    assert len(a.observations) == len(b.observations)
    assert all(np.array_equal(x.pixel, y.pixel) for x, y in zip(a.observations, b.observations))


# ---------------------------------------------------------------- export and config


def test_trajectory_csv_is_byte_identical(tmp_path):
    paths = []
    for name in ("a.csv", "b.csv"):
        sim = simulate(default_scenario(duration=1.0))
        idx = sim.keyframe_indices
        write_trajectory_csv(tmp_path / name, idx / sim.scenario.imu_rate, sim.keyframe_truth)
        paths.append(tmp_path / name)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert paths[0].read_text().splitlines()[0] == "t,qw,qx,qy,qz,px,py,pz,vx,vy,vz"


def test_quaternion_convention():
    np.testing.assert_allclose(rotation_to_quaternion(np.eye(3)), [1, 0, 0, 0])
    R = np.diag([1.0, -1.0, -1.0])
    q = rotation_to_quaternion(R)
    assert q[0] >= 0 and abs(abs(q[1]) - 1) < 1e-12


def test_scenario_dict_roundtrip(tmp_path):
    sc = default_scenario(seed=5, duration=3.0)
    d = scenario_to_dict(sc)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(d))
    back = load_scenario(path)
    assert scenario_to_dict(back) == d
    assert back.seed == 5 and back.duration == 3.0


def test_scenario_partial_dict_and_rig_count():
    sc = scenario_from_dict({"duration": 2.0, "rig": 1})
    assert sc.duration == 2.0 and len(sc.rig) == 1
    assert sc.imu_rate == default_scenario().imu_rate
    with pytest.raises(ValueError):
        scenario_from_dict({"schema_version": 99})
