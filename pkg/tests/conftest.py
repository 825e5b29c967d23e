import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng, max_angle=np.pi):
    from se23vio.lie import so3_exp

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))


def random_intrinsics(rng):
    """Valid intrinsics near identity: unit-diagonal lower-triangular
    misalignments, scales within 10 percent and a small gyro mounting rotation."""
    from se23vio.imu import ImuIntrinsics

    def lower(scale):
        M = np.eye(3)
        M[np.tril_indices(3, -1)] = rng.normal(scale=scale, size=3)
        return M

    return ImuIntrinsics(
        S_alpha=np.diag(rng.uniform(0.9, 1.1, 3)),
        M_alpha=lower(0.02),
        S_omega=np.diag(rng.uniform(0.9, 1.1, 3)),
        M_omega=lower(0.02),
        A_omega=rng.normal(scale=1e-3, size=(3, 3)),
        C_omega=random_rotation(rng, 0.05),
    )


# ---------------------------------------------------------------- acceptance report


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")
    config._acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when == "teardown":
        return
    if rep.when == "call" or rep.failed:
        detail = dict(item.user_properties).get("detail", "")
        item.config._acceptance[marker.args[0]] = (marker.args[1], rep.passed, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, passed, detail = results[number]
        terminalreporter.write_line(
            "criterion %2d %-4s %s%s" % (number, "PASS" if passed else "FAIL", title, "  (%s)" % detail if detail else "")
        )
