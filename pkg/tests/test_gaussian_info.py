import numpy as np
import pytest
from hypothesis import given, strategies as st

from imse.errors import (
    DimensionMismatch,
    SingularCovariance,
    UnknownBlock,
    UnstableClosedLoop,
)
from imse.gaussian_info import (
    LOG_2PIE,
    GaussianJoint,
    assemble_closed_loop_joint,
    conditional_mutual_information,
    differential_entropy,
    entropy_difference_check,
    mutual_information_blocks,
)
from imse.lti_rates import LtiSystemSpec
from imse.rng import trial_stream


def joint_from_cov(cov, blocks):
    cov = np.asarray(cov, dtype=float)
    return GaussianJoint(mean=np.zeros(cov.shape[0]), cov=cov, blocks=blocks)


# ---------------------------------------------------------------------------
# differential entropy
# ---------------------------------------------------------------------------


def test_standard_normal_entropy():
    j = joint_from_cov(np.eye(1), {"X": (0, 1)})
    assert differential_entropy(j, "X").nats == pytest.approx(0.5 * LOG_2PIE)


def test_entropy_additivity_two_dim():
    j = joint_from_cov(np.eye(2), {"X": (0, 2)})
    assert differential_entropy(j, "X").nats == pytest.approx(LOG_2PIE)


def test_entropy_scalar_variance_four():
    # closed form 0.5 log(2 pi e sigma^2)
    j = joint_from_cov([[4.0]], {"X": (0, 1)})
    expected = 0.5 * (LOG_2PIE + np.log(4.0))
    assert differential_entropy(j, "X").nats == pytest.approx(expected)
    assert expected == pytest.approx(2.1121, abs=1e-4)


def test_unknown_block_raises():
    j = joint_from_cov(np.eye(1), {"X": (0, 1)})
    with pytest.raises(UnknownBlock):
        differential_entropy(j, "Y")


def test_singular_block_raises():
    j = joint_from_cov(np.diag([1.0, 0.0]), {"X": (0, 1), "Z": (1, 2)})
    with pytest.raises(SingularCovariance):
        differential_entropy(j, "Z")


# ---------------------------------------------------------------------------
# mutual information
# ---------------------------------------------------------------------------


def test_mi_independent_blocks_zero():
    j = joint_from_cov(np.diag([1.0, 2.0]), {"A": (0, 1), "B": (1, 2)})
    assert mutual_information_blocks(j, "A", "B").nats == pytest.approx(0.0, abs=1e-12)


def test_mi_scalar_correlation_half():
    rho = 0.5
    j = joint_from_cov([[1.0, rho], [rho, 1.0]], {"A": (0, 1), "B": (1, 2)})
    expected = -0.5 * np.log(1 - rho**2)
    got = mutual_information_blocks(j, "A", "B").nats
    assert got == pytest.approx(expected)
    assert got == pytest.approx(0.1438, abs=1e-4)


def test_mi_copy_plus_noise():
    # B = A + N(0,1), Var A = 2: I = 0.5 log(1 + 2/1) = 0.5 log 3
    cov = np.array([[2.0, 2.0], [2.0, 3.0]])
    j = joint_from_cov(cov, {"A": (0, 1), "B": (1, 2)})
    assert mutual_information_blocks(j, "A", "B").nats == pytest.approx(
        0.5 * np.log(3.0)
    )


def test_joint_invariants_rejected():
    with pytest.raises(SingularCovariance):
        joint_from_cov([[1.0, 0.5], [0.4, 1.0]], {"A": (0, 1), "B": (1, 2)})
    with pytest.raises(DimensionMismatch):
        joint_from_cov(np.eye(2), {"A": (0, 1)})  # not covering
    with pytest.raises(DimensionMismatch):
        joint_from_cov(np.eye(2), {"A": (0, 2), "B": (1, 2)})  # overlap
    bad = np.array([[1.0, 0.0], [0.0, -0.5]])
    with pytest.raises(SingularCovariance):
        joint_from_cov(bad, {"A": (0, 1), "B": (1, 2)})


# ---------------------------------------------------------------------------
# closed-loop assembly
# ---------------------------------------------------------------------------


def scalar_control_spec(a=2.0, b=1.0, g=-1.8, x0=1.0):
    return LtiSystemSpec(A=a, B=b, G=g, x0_cov=x0)


def test_zero_gain_loop_e_equals_w():
    spec = LtiSystemSpec(A=0.5, B=1.0, G=0.0)
    j = assemble_closed_loop_joint(spec, horizon=1)
    e = j._indices("E")
    w = j._indices("W")
    assert np.allclose(j.cov[np.ix_(e, e)], j.cov[np.ix_(w, w)])
    # cross-covariance between E and W is the identity (E_i = W_i exactly)
    assert np.allclose(j.cov[np.ix_(e, w)], np.eye(1))


def test_one_step_error_variance():
    j = assemble_closed_loop_joint(scalar_control_spec(), horizon=2)
    assert j.cov[0, 0] == pytest.approx(1.8**2 + 1.0)  # G^2 Sigma0 + 1 = 4.24


def test_filtering_stable_mi_bounded():
    spec = LtiSystemSpec(A=0.5, B=1.0, H=1.0, mode="filtering")
    rates = []
    values = []
    for n in (5, 10, 20, 40):
        j = assemble_closed_loop_joint(spec, n, epsilon=0.0, mode="filtering")
        mi = mutual_information_blocks(j, "Y", "X0")
        values.append(mi.nats)
        rates.append(mi.nats / n)
    # total information converges (stable plant, no unstable poles -> rate 0)
    assert values[-1] - values[-2] < 1e-6
    assert rates[-1] < rates[0] / 5  # rate decays like C/n toward 0
    assert all(values[i] <= values[i + 1] + 1e-12 for i in range(3))


class _RawSystem:
    def __init__(self, a, b, g):
        self.A = np.atleast_2d(np.asarray(a, dtype=float))
        self.B = np.atleast_2d(np.asarray(b, dtype=float))
        self.G = np.atleast_2d(np.asarray(g, dtype=float))
        self.x0_cov = None


def test_unstable_closed_loop_rejected():
    with pytest.raises(UnstableClosedLoop):
        LtiSystemSpec(A=2.0, B=1.0, G=0.0)
    with pytest.raises(UnstableClosedLoop):
        assemble_closed_loop_joint(_RawSystem(2.0, 1.0, 0.0), horizon=3)


def test_bad_horizon():
    with pytest.raises(DimensionMismatch):
        assemble_closed_loop_joint(scalar_control_spec(), horizon=0)


# ---------------------------------------------------------------------------
# entropy-difference identity
# ---------------------------------------------------------------------------


def test_entropy_difference_zero_gain():
    spec = LtiSystemSpec(A=0.5, B=1.0, G=0.0)
    j = assemble_closed_loop_joint(spec, horizon=5)
    assert entropy_difference_check(j, "E", "W", ["X0"]) < 1e-12
    assert abs(mutual_information_blocks(j, "E", "X0").nats) < 1e-12


def test_entropy_difference_control_horizon_30():
    j = assemble_closed_loop_joint(scalar_control_spec(), horizon=30)
    assert entropy_difference_check(j, "E", "W", ["X0"]) < 1e-8


def test_entropy_difference_filtering_eps0_horizon_30():
    spec = LtiSystemSpec(A=2.0, B=1.0, H=1.0, mode="filtering")
    j = assemble_closed_loop_joint(spec, horizon=30, epsilon=0.0, mode="filtering")
    assert entropy_difference_check(j, "Y", "V", ["X0"]) < 1e-8


def test_entropy_difference_filtering_with_noise():
    spec = LtiSystemSpec(A=2.0, B=1.0, H=1.0, mode="filtering")
    j = assemble_closed_loop_joint(spec, horizon=20, epsilon=0.3, mode="filtering")
    assert entropy_difference_check(j, "Y", "V", ["W", "X0"]) < 1e-8


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------


def random_three_block_joint(seed, dims):
    rng = trial_stream(seed)
    total = sum(dims)
    f = rng.standard_normal((total, total + 3))
    cov = f @ f.T + 0.1 * np.eye(total)
    blocks = {}
    start = 0
    for label, d in zip(("E", "C", "X0"), dims):
        blocks[label] = (start, start + d)
        start += d
    return joint_from_cov(cov, blocks)


@given(
    seed=st.integers(0, 10**6),
    dims=st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)),
)
def test_chain_rule_decomposition(seed, dims):
    j = random_three_block_joint(seed, dims)
    total = mutual_information_blocks(j, "E", ["C", "X0"]).nats
    part1 = mutual_information_blocks(j, "E", "X0").nats
    part2 = conditional_mutual_information(j, "E", "C", ["X0"]).nats
    assert abs(total - (part1 + part2)) < 1e-8


@given(
    seed=st.integers(0, 10**6),
    dims=st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)),
)
def test_mutual_information_non_negative(seed, dims):
    j = random_three_block_joint(seed, dims)
    for a, b in (("E", "C"), ("E", "X0"), ("C", "X0")):
        assert mutual_information_blocks(j, a, b).nats >= -1e-9


def test_data_processing_mi_nondecreasing_in_horizon():
    rng = trial_stream(55)
    from conftest import random_control_instance

    spec = random_control_instance(rng, max_dim=3)
    values = []
    for n in range(1, 12):
        j = assemble_closed_loop_joint(spec, n)
        values.append(mutual_information_blocks(j, "E", "X0").nats)
    for lo, hi in zip(values, values[1:]):
        assert hi >= lo - 1e-9


def test_factor_and_dense_routes_agree():
    spec = scalar_control_spec()
    j = assemble_closed_loop_joint(spec, horizon=12)
    dense = GaussianJoint(mean=j.mean, cov=j.cov, blocks=j.blocks)
    a = mutual_information_blocks(j, "E", "X0").nats
    b = mutual_information_blocks(dense, "E", "X0").nats
    assert a == pytest.approx(b, abs=1e-9)
    ha = differential_entropy(j, "E").nats
    hb = differential_entropy(dense, "E").nats
    assert ha == pytest.approx(hb, abs=1e-9)


def test_chain_rule_on_assembled_joint():
    # filtering joint with process noise: I(Y; W, X0) = I(Y;X0) + I(Y;W|X0)
    spec = LtiSystemSpec(A=2.0, B=1.0, H=1.0, mode="filtering")
    j = assemble_closed_loop_joint(spec, horizon=12, epsilon=0.5, mode="filtering")
    total = mutual_information_blocks(j, "Y", ["W", "X0"]).nats
    part1 = mutual_information_blocks(j, "Y", "X0").nats
    part2 = conditional_mutual_information(j, "Y", "W", ["X0"]).nats
    assert total == pytest.approx(part1 + part2, abs=1e-8)
