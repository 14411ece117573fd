import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import HealthCheck, settings

from imse.errors import ImseError
from imse.lti_rates import LtiSystemSpec
from imse.rng import trial_stream

settings.register_profile(
    "ci",
    derandomize=True,
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


def random_matrix_with_split_spectrum(rng, dim, stable_cap=0.9, unstable_floor=1.1,
                                      unstable_ceil=2.5):
    """Random A whose eigenvalue moduli avoid the unit-circle margin band."""
    while True:
        a = rng.standard_normal((dim, dim))
        moduli = np.abs(np.linalg.eigvals(a))
        if np.all((moduli <= stable_cap) | ((moduli >= unstable_floor)
                                            & (moduli <= unstable_ceil))):
            return a
        # rescale toward the band edges and retry
        a = a / (np.max(moduli) + 1e-12) * rng.uniform(1.2, 2.2)
        moduli = np.abs(np.linalg.eigvals(a))
        if np.all((moduli <= stable_cap) | ((moduli >= unstable_floor)
                                            & (moduli <= unstable_ceil))):
            return a


def lqr_gain(a, b):
    """Stabilizing state-feedback gain via the standard LQR Riccati solve."""
    p = sla.solve_discrete_are(a, b, np.eye(a.shape[0]), np.eye(b.shape[1]))
    return -np.linalg.solve(b.T @ p @ b + np.eye(b.shape[1]), b.T @ p @ a)


def random_control_instance(rng, max_dim=4):
    """Random stabilized LTI control system with channel dimension 1."""
    while True:
        dim = int(rng.integers(1, max_dim + 1))
        a = random_matrix_with_split_spectrum(rng, dim)
        b = rng.standard_normal((dim, 1))
        try:
            g = lqr_gain(a, b)
            return LtiSystemSpec(A=a, B=b, G=g, mode="control")
        except (np.linalg.LinAlgError, ValueError, ImseError):
            continue


def random_filtering_instance(rng, max_dim=4):
    while True:
        dim = int(rng.integers(1, max_dim + 1))
        a = random_matrix_with_split_spectrum(rng, dim)
        b = rng.standard_normal((dim, 1))
        h = rng.standard_normal((1, dim))
        try:
            return LtiSystemSpec(A=a, B=b, H=h, mode="filtering")
        except ImseError:
            continue


@pytest.fixture(scope="session")
def control_instances():
    rng = trial_stream(20240811)
    return [random_control_instance(rng) for _ in range(100)]


@pytest.fixture(scope="session")
def filtering_instances():
    rng = trial_stream(20240812)
    return [random_filtering_instance(rng) for _ in range(100)]
