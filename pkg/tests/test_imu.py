import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from se23vio.imu import (
    CompensatedImuMeasurement,
    ImuBias,
    ImuCsvError,
    ImuIntrinsics,
    ImuNoise,
    RawImuMeasurement,
    apply_intrinsics,
    compensate,
    compensate_stream,
    compensate_vectors,
    discrete_noise_covariance,
    read_imu_csv,
    write_imu_csv,
)

from conftest import random_intrinsics, random_rotation


def test_identity_intrinsics_pass_through():
    w, a = np.array([0.1, -0.2, 0.3]), np.array([1.0, 2.0, 9.81])
    raw = apply_intrinsics(w, a, ImuIntrinsics())
    assert np.array_equal(raw.gyro, w) and np.array_equal(raw.accel, a)
    comp = compensate(raw, ImuIntrinsics(), 0.005)
    assert np.array_equal(comp.gyro, w) and np.array_equal(comp.accel, a)


def test_accel_scale_substitution():
    intr = ImuIntrinsics(S_alpha=np.diag([1.01, 1.0, 1.0]))
    raw = apply_intrinsics(np.zeros(3), np.array([1.0, 0.0, 0.0]), intr)
    np.testing.assert_allclose(raw.accel, [1.01, 0.0, 0.0], rtol=0, atol=1e-15)


def test_bias_and_noise_add_to_raw():
    bias = ImuBias(np.array([0.1, 0.0, 0.0]), np.array([0.0, 0.2, 0.0]))
    noise = (np.array([0.0, 0.01, 0.0]), np.array([0.0, 0.0, 0.03]))
    raw = apply_intrinsics(np.zeros(3), np.zeros(3), ImuIntrinsics(), bias, noise)
    np.testing.assert_allclose(raw.gyro, [0.1, 0.01, 0.0])
    np.testing.assert_allclose(raw.accel, [0.0, 0.2, 0.03])


def test_roundtrip_random_intrinsics(rng):
    for _ in range(200):
        intr = random_intrinsics(rng)
        w, a = rng.normal(size=3) * 2, rng.normal(size=3) * 10
        comp = compensate(apply_intrinsics(w, a, intr), intr, 0.005)
        np.testing.assert_allclose(comp.gyro, w, rtol=0, atol=1e-12)
        np.testing.assert_allclose(comp.accel, a, rtol=0, atol=1e-12)


def test_pure_g_sensitivity_is_removed():
    intr = ImuIntrinsics(A_omega=np.array([[1e-3, 2e-3, 3e-3], [0.0, -1e-3, 4e-3], [5e-4, 0.0, 2e-3]]))
    comp = compensate(apply_intrinsics(np.zeros(3), np.array([0, 0, 9.81]), intr), intr, 0.01)
    np.testing.assert_allclose(comp.gyro, 0.0, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_compensation_is_linear(seed):
    rng = np.random.default_rng(seed)
    intr = random_intrinsics(rng)
    g1, a1, g2, a2 = rng.normal(size=(4, 3))
    s = rng.uniform(-3, 3)
    cg, ca = compensate_vectors(g1 + s * g2, a1 + s * a2, intr)
    c1 = compensate_vectors(g1, a1, intr)
    c2 = compensate_vectors(g2, a2, intr)
    np.testing.assert_allclose(cg, c1[0] + s * c2[0], atol=1e-12)
    np.testing.assert_allclose(ca, c1[1] + s * c2[1], atol=1e-12)


def test_compensate_vectors_batches_rows(rng):
    intr = random_intrinsics(rng)
    G, A = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    bg, ba = compensate_vectors(G, A, intr)
    for k in range(5):
        g, a = compensate_vectors(G[k], A[k], intr)
        np.testing.assert_allclose(bg[k], g, atol=1e-15)
        np.testing.assert_allclose(ba[k], a, atol=1e-15)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(S_alpha=np.diag([1.0, -1.0, 1.0])),
        dict(S_omega=np.array([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])),
        dict(M_alpha=np.array([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])),
        dict(M_omega=np.diag([2.0, 1.0, 1.0])),
        dict(C_omega=np.diag([1.0, 1.0, -1.0])),
        dict(S_alpha=np.diag([1e-4, 1.0, 1.0])),
    ],
)
def test_invalid_intrinsics_rejected(kwargs):
    with pytest.raises(ValueError):
        ImuIntrinsics(**kwargs)


def test_compensated_measurement_requires_positive_dt():
    with pytest.raises(ValueError):
        CompensatedImuMeasurement(0.0, np.zeros(3), np.zeros(3), 0.0)


def test_compensate_stream_hold_periods():
    raws = [RawImuMeasurement(t, np.zeros(3), np.zeros(3)) for t in (0.0, 0.005, 0.012)]
    out = compensate_stream(raws, ImuIntrinsics(), 200.0)
    np.testing.assert_allclose([m.dt_to_next for m in out], [0.005, 0.007, 0.005])
    with pytest.raises(ValueError):
        compensate_stream(raws[::-1], ImuIntrinsics(), 200.0)


# ---------------------------------------------------------------- noise


def test_noise_rejects_nonpositive():
    with pytest.raises(ValueError):
        ImuNoise(0.0, 1.0, 1.0, 1.0, 200.0)


def test_noise_covariance_gyro_entry():
    Q = discrete_noise_covariance(ImuNoise(0.01, 0.1, 0.001, 0.01, 200.0), 0.005)
    # 0.01**2 / 0.005
    np.testing.assert_allclose(np.diag(Q)[:3], 0.02, rtol=1e-14)


def test_noise_covariance_unit_dt():
    Q = discrete_noise_covariance(ImuNoise(0.3, 0.3, 0.3, 0.3, 1.0), 1.0)
    np.testing.assert_allclose(Q, 0.09 * np.eye(12), rtol=1e-15)


def test_noise_covariance_order_and_scaling():
    noise = ImuNoise(1.0, 2.0, 3.0, 4.0, 100.0)
    Q1 = discrete_noise_covariance(noise, 0.01)
    Q2 = discrete_noise_covariance(noise, 0.005)
    np.testing.assert_allclose(np.diag(Q1), np.repeat([1.0, 4.0, 9.0, 16.0], 3) / 0.01)
    np.testing.assert_allclose(Q2, 2.0 * Q1)


@given(
    st.floats(1e-6, 10), st.floats(1e-6, 10), st.floats(1e-8, 1), st.floats(1e-8, 1), st.floats(1e-5, 1)
)
def test_noise_covariance_is_positive_definite(sg, sa, sbg, sba, dt):
    Q = discrete_noise_covariance(ImuNoise(sg, sa, sbg, sba, 1.0 / dt), dt)
    assert np.all(np.linalg.eigvalsh(Q) > 0)


def test_noise_covariance_rejects_bad_dt():
    with pytest.raises(ValueError):
        discrete_noise_covariance(ImuNoise(1, 1, 1, 1, 1), 0.0)


# ---------------------------------------------------------------- CSV


def test_csv_roundtrip(tmp_path, rng):
    raws = [RawImuMeasurement(k * 0.005, rng.normal(size=3), rng.normal(size=3)) for k in range(50)]
    path = tmp_path / "imu.csv"
    write_imu_csv(path, raws)
    back = read_imu_csv(path)
    assert len(back) == 50
    for a, b in zip(raws, back):
        assert abs(a.t - b.t) < 1e-9
        assert np.array_equal(a.gyro, b.gyro) and np.array_equal(a.accel, b.accel)


@pytest.mark.parametrize(
    "body, line",
    [
        ("0,0,0,0,0,0,0\n5,0,0,0,0,0,0\n5,0,0,0,0,0,0\n", 4),
        ("0,0,0,0,0,0,0\n1,0,0,0\n", 3),
        ("0,0,0,0,0,0,0\nx,0,0,0,0,0,0\n", 3),
        ("0,0,0,nan,0,0,0\n", 2),
    ],
)
def test_csv_errors_report_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text("timestamp_ns,wx,wy,wz,ax,ay,az\n" + body)
    with pytest.raises(ImuCsvError) as info:
        read_imu_csv(path)
    assert info.value.line == line
    assert ("line %d" % line) in str(info.value)
