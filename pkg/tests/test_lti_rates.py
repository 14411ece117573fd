import numpy as np
import pytest
from hypothesis import given, strategies as st

from imse.errors import MarginalEigenvalue, NotDetectable, NotPSD
from imse.lti_rates import (
    LtiSystemSpec,
    capacity_with_power_limits,
    footnote_identity_checks,
    lti_rate_report,
    min_trace_ratio_bound,
    modal_decompose,
    solve_dare_antistable,
    unstable_spectrum_rate,
)
from imse.rng import trial_stream

LOG2 = np.log(2.0)


# ---------------------------------------------------------------------------
# unstable spectrum rate
# ---------------------------------------------------------------------------


def test_rate_stable_matrix_zero():
    assert unstable_spectrum_rate(np.diag([0.5, 0.9])) == 0.0


def test_rate_mixed_matrix():
    assert unstable_spectrum_rate(np.diag([2.0, 0.5])) == pytest.approx(LOG2)


def test_rate_complex_pair():
    # rotation scaled by 1.5: complex pair of modulus 1.5
    th = 0.7
    rot = 1.5 * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    # oracle via characteristic polynomial roots
    roots = np.roots([1.0, -np.trace(rot), np.linalg.det(rot)])
    expected = float(np.sum(np.log(np.abs(roots))))
    assert expected == pytest.approx(2 * np.log(1.5))
    assert unstable_spectrum_rate(rot) == pytest.approx(expected)


def test_rate_marginal_rejected():
    with pytest.raises(MarginalEigenvalue):
        unstable_spectrum_rate(np.diag([1.0 + 1e-12, 0.5]))


# ---------------------------------------------------------------------------
# modal decomposition
# ---------------------------------------------------------------------------


def test_modal_already_diagonal():
    spec = LtiSystemSpec(A=np.diag([2.0, 0.5]), B=np.eye(2),
                         G=np.array([[-1.7, 0.0], [0.0, 0.0]]))
    split = modal_decompose(spec)
    assert split.unstable_dim == 1
    assert split.A_u == pytest.approx(np.array([[2.0]]))
    assert split.A_s == pytest.approx(np.array([[0.5]]))
    # T is a permutation up to sign
    assert np.allclose(np.abs(split.T), np.array([[0, 1], [1, 0]])[::-1].T) or \
        np.allclose(np.abs(split.T), np.eye(2)[::-1]) or \
        np.allclose(np.abs(split.T), np.eye(2))


def test_modal_jordan_coupling():
    a = np.array([[2.0, 1.0], [0.0, 0.5]])
    spec = LtiSystemSpec(A=a, B=np.eye(2), G=np.array([[-1.7, -1.0], [0.0, 0.0]]))
    split = modal_decompose(spec)
    d = split.T @ a @ np.linalg.inv(split.T)
    ms = split.stable_dim
    assert np.linalg.norm(d[:ms, ms:]) < 1e-12
    assert np.linalg.norm(d[ms:, :ms]) < 1e-12
    assert split.A_u == pytest.approx(np.array([[2.0]]))
    assert split.A_s == pytest.approx(np.array([[0.5]]))


def test_modal_all_stable():
    spec = LtiSystemSpec(A=np.diag([0.5, 0.3]), B=np.eye(2), G=np.zeros((2, 2)))
    split = modal_decompose(spec)
    assert split.unstable_dim == 0
    assert split.A_u.size == 0


@given(seed=st.integers(0, 10**6))
def test_decomposition_residual_property(seed):
    from conftest import random_control_instance

    spec = random_control_instance(trial_stream(seed), max_dim=4)
    split = modal_decompose(spec)
    d = split.T @ spec.A @ np.linalg.inv(split.T)
    ms, mu = split.stable_dim, split.unstable_dim
    if ms and mu:
        off = max(np.linalg.norm(d[:ms, ms:]), np.linalg.norm(d[ms:, :ms]))
        assert off < 1e-9 * max(1.0, np.linalg.norm(spec.A))


# ---------------------------------------------------------------------------
# antistable DARE
# ---------------------------------------------------------------------------


def test_dare_scalar_pole_two():
    sol = solve_dare_antistable(np.array([[2.0]]), np.array([[1.0]]))
    # fixed-point algebra: P = 4P/(P+1) => P = 3; posterior 3 - 9/4
    assert sol.P_minus == pytest.approx(np.array([[3.0]]), abs=1e-10)
    assert sol.P == pytest.approx(np.array([[0.75]]), abs=1e-10)
    assert sol.residual < 1e-12


def test_dare_scalar_small_gain():
    sol = solve_dare_antistable(np.array([[2.0]]), np.array([[0.6]]))
    assert sol.P_minus[0, 0] == pytest.approx(3.0 / 0.36, rel=1e-9)
    # log(C^2 P + 1) = log 4 independent of the gain
    assert np.log(0.36 * sol.P_minus[0, 0] + 1) == pytest.approx(np.log(4.0))


def test_dare_decoupled_diagonal():
    sol = solve_dare_antistable(np.diag([2.0, 3.0]), np.eye(2))
    assert sol.P_minus == pytest.approx(np.diag([3.0, 8.0]), abs=1e-9)


def test_dare_requires_antistable():
    with pytest.raises(NotDetectable):
        solve_dare_antistable(np.array([[0.5]]), np.array([[1.0]]))


def test_dare_not_detectable_diverges():
    # unstable mode invisible to the measurement map
    with pytest.raises(NotDetectable):
        solve_dare_antistable(np.diag([2.0, 3.0]), np.array([[1.0, 0.0]]))


# ---------------------------------------------------------------------------
# rate report
# ---------------------------------------------------------------------------


def test_scalar_control_report():
    spec = LtiSystemSpec(A=2.0, B=1.0, G=-1.8)
    rep = lti_rate_report(spec, horizon=500)
    assert rep.rate_exact == pytest.approx(LOG2)
    assert rep.per_step_pmmse[-1] == pytest.approx(3.0, rel=1e-9)
    assert rep.per_step_cmmse[-1] == pytest.approx(0.75, rel=1e-9)
    assert rep.rate_lower == pytest.approx(0.375, rel=1e-6)
    assert rep.rate_upper == pytest.approx(1.5, rel=1e-6)
    assert rep.rate_lower <= rep.rate_exact <= rep.rate_upper


def test_stable_filtering_report():
    spec = LtiSystemSpec(A=np.diag([0.5, 0.3]), B=np.eye(2), H=np.eye(2),
                         mode="filtering")
    rep = lti_rate_report(spec, horizon=300, epsilon=0.0)
    assert rep.rate_exact == 0.0
    assert rep.per_step_pmmse[-1] < 1e-12


def test_scalar_filtering_report():
    spec = LtiSystemSpec(A=2.0, B=1.0, H=1.0, mode="filtering")
    rep = lti_rate_report(spec, horizon=500, epsilon=0.0)
    assert rep.per_step_pmmse[-1] == pytest.approx(3.0, rel=1e-9)
    assert rep.per_step_cmmse[-1] == pytest.approx(0.75, rel=1e-9)
    assert rep.rate_lower <= LOG2 <= rep.rate_upper


def test_filtering_with_noise_drops_exact_rate():
    spec = LtiSystemSpec(A=0.5, B=1.0, H=1.0, mode="filtering")
    rep = lti_rate_report(spec, horizon=200, epsilon=1.0)
    assert rep.rate_exact is None
    assert rep.boundary_terms["spectrum_rate"] == 0.0
    assert rep.rate_lower > 0.0  # process noise keeps the MMSEs positive


# ---------------------------------------------------------------------------
# capacity
# ---------------------------------------------------------------------------


def test_capacity_scalar_unit_power():
    assert capacity_with_power_limits([1.0], 1) == pytest.approx(
        0.5 * LOG2, abs=1e-12
    )


def test_capacity_zero():
    assert capacity_with_power_limits([0.0], 5) == 0.0


def test_capacity_two_dim_identity():
    assert capacity_with_power_limits([np.eye(2)], 3) == pytest.approx(LOG2)


def test_capacity_rejects_non_psd():
    with pytest.raises(NotPSD):
        capacity_with_power_limits([np.array([[1.0, 2.0], [2.0, 1.0]])], 1)


# ---------------------------------------------------------------------------
# footnote identities
# ---------------------------------------------------------------------------


def test_footnote_scalar():
    spec = LtiSystemSpec(A=2.0, B=1.0, G=-1.8)
    checks = footnote_identity_checks(spec)
    assert checks.eta == pytest.approx(np.array([3.0]), abs=1e-9)
    assert checks.identity_residual < 1e-10  # 2 log 2 = log(1 + 3)
    assert checks.cmmse_bound_holds and checks.pmmse_bound_holds
    assert checks.woodbury_residual < 1e-12
    bound = min_trace_ratio_bound(LOG2)
    assert bound == pytest.approx(2 * LOG2 / (1 + 2 * LOG2))
    assert bound == pytest.approx(0.5809, abs=1e-4)
    assert checks.cmmse_steady == pytest.approx(0.75, rel=1e-6)
    assert checks.cmmse_steady >= bound
    assert checks.notes["eta_trace_ratio"] == pytest.approx(0.75, abs=1e-9)


@given(seed=st.integers(0, 10**6))
def test_woodbury_posterior_relation_random_psd(seed):
    # ||C P C' - M(I+M)^{-1}|| with M = C P^- C' is a matrix identity
    rng = trial_stream(seed)
    f = rng.standard_normal((3, 5))
    p_minus = f @ f.T + 0.1 * np.eye(3)
    c = rng.standard_normal((2, 3))
    m = c @ p_minus @ c.T
    gain = p_minus @ c.T @ np.linalg.solve(m + np.eye(2), np.eye(2))
    p = p_minus - gain @ c @ p_minus
    lhs = c @ p @ c.T
    rhs = m @ np.linalg.solve(np.eye(2) + m, np.eye(2))
    assert np.linalg.norm(lhs - rhs) < 1e-10


@given(seed=st.integers(0, 10**6))
def test_gauge_invariance(seed):
    from conftest import random_control_instance

    rng = trial_stream(seed)
    spec = random_control_instance(rng, max_dim=3)
    m = spec.A.shape[0]
    t = np.eye(m) + 0.3 * rng.standard_normal((m, m))
    if np.linalg.cond(t) > 1e6:
        return
    spec_t = LtiSystemSpec(
        A=t @ spec.A @ np.linalg.inv(t), B=t @ spec.B,
        G=spec.G @ np.linalg.inv(t),
    )
    r1 = unstable_spectrum_rate(spec.A)
    r2 = unstable_spectrum_rate(spec_t.A)
    assert abs(r1 - r2) < 1e-9


def test_triple_agreement_smoke(control_instances):
    # small-scale version of the full acceptance criterion
    from imse.gaussian_info import assemble_closed_loop_joint, mutual_information_blocks

    for spec in control_instances[:5]:
        rep = lti_rate_report(spec, horizon=400)
        assert rep.boundary_terms["dare_identity_residual"] < 1e-9
        joint = assemble_closed_loop_joint(spec, 200)
        mi = mutual_information_blocks(joint, "E", "X0")
        assert abs(mi.rate - rep.rate_exact) < 5e-2
