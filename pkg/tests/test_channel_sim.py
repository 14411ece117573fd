import numpy as np
import pytest
from hypothesis import given, strategies as st

from imse.channel_sim import (
    ChannelSpec,
    LinearChannelStructure,
    MmseLedger,
    constant_message_spec,
    estimate_mmse_ledger,
    linear_channel_joint,
    simulate_channel,
    verify_sandwich,
)
from imse.errors import (
    CallbackFailure,
    HorizonMismatch,
    PowerCapExceeded,
    UnsupportedEstimator,
)
from imse.gaussian_info import InfoValue, mutual_information_blocks
from imse.rng import trial_stream


def zero_input_spec():
    return ChannelSpec(
        input_fn=lambda m, past, i: np.zeros(1),
        message_sampler=lambda rng: rng.standard_normal(1),
        dim=1,
        linear_structure=LinearChannelStructure(message_cov=1.0, coeffs=0.0),
    )


def feedback_spec(coef=-0.5):
    def input_fn(m, past, i):
        if i == 0:
            return m
        return m + coef * past[-1]

    return ChannelSpec(
        input_fn=input_fn,
        message_sampler=lambda rng: rng.standard_normal(1),
        dim=1,
        feedback=True,
    )


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def test_zero_input_outputs_equal_noise():
    # with the same seed, Y of the zero-input channel must equal Y - Phi of
    # any other channel: the noise streams coincide trial by trial
    ens0 = simulate_channel(zero_input_spec(), 4, 50, seed=3)
    ens1 = simulate_channel(constant_message_spec(), 4, 50, seed=3)
    # identical per-trial noise streams; equality up to (phi + w) - phi rounding
    assert np.allclose(ens0.outputs, ens1.outputs - ens1.inputs, atol=1e-12)
    assert np.all(ens0.inputs == 0.0)


def test_constant_message_moments():
    ens = simulate_channel(constant_message_spec(), 3, 4000, seed=9)
    # Y_i = M + W_i: mean 0, variance 2
    stderr_mean = np.sqrt(2.0 / ens.trials)
    stderr_var = 2.0 * np.sqrt(2.0 / ens.trials)
    for i in range(3):
        assert abs(np.mean(ens.outputs[:, i, 0])) < 4 * stderr_mean
        assert abs(np.var(ens.outputs[:, i, 0]) - 2.0) < 4 * stderr_var


def test_feedback_lag_regression():
    ens = simulate_channel(feedback_spec(), 3, 6000, seed=10)
    msgs = np.array([m[0] for m in ens.messages])
    target = ens.inputs[:, 1, 0]
    feats = np.column_stack([np.ones(ens.trials), msgs, ens.outputs[:, 0, 0]])
    beta, *_ = np.linalg.lstsq(feats, target, rcond=None)
    resid = target - feats @ beta
    se = np.sqrt(np.sum(resid**2) / (ens.trials - 3)
                 / np.sum((ens.outputs[:, 0, 0]) ** 2))
    assert beta[2] == pytest.approx(-0.5, abs=max(4 * se, 1e-6))


def test_non_feedback_probe_rejects_peeking():
    with pytest.raises(CallbackFailure):
        ChannelSpec(
            input_fn=lambda m, past, i: m + (past[-1] if len(past) else 0.0),
            message_sampler=lambda rng: rng.standard_normal(1),
            dim=1,
            feedback=False,
        )


def test_power_cap():
    spec = constant_message_spec(variance=100.0, power_cap=1.0)
    with pytest.raises(PowerCapExceeded):
        simulate_channel(spec, 2, 200, seed=1)


def test_simulation_determinism_across_threads():
    spec = constant_message_spec()
    a = simulate_channel(spec, 5, 64, seed=21, threads=1)
    b = simulate_channel(spec, 5, 64, seed=21, threads=8)
    assert np.array_equal(a.outputs, b.outputs)
    assert np.array_equal(a.inputs, b.inputs)


# ---------------------------------------------------------------------------
# ledgers
# ---------------------------------------------------------------------------


def test_closed_form_constant_message():
    led = estimate_mmse_ledger(constant_message_spec(), 6, 0, seed=0)
    for i in range(6):
        assert led.pmmse[i] == pytest.approx(1.0 / (1 + i))
        assert led.cmmse[i] == pytest.approx(1.0 / (2 + i))
    # one-observation shift and strict decrease
    assert np.all(np.diff(led.pmmse) < 0)
    assert led.cmmse[:-1] == pytest.approx(led.pmmse[1:])


def test_closed_form_zero_input():
    led = estimate_mmse_ledger(zero_input_spec(), 4, 0, seed=0)
    assert np.all(led.cmmse == 0.0)
    assert np.all(led.pmmse == 0.0)


def test_closed_form_needs_structure():
    with pytest.raises(UnsupportedEstimator):
        estimate_mmse_ledger(feedback_spec(), 3, 10, seed=0,
                             estimator="closed_form")


def test_regression_matches_closed_form():
    spec = constant_message_spec()
    exact = estimate_mmse_ledger(spec, 3, 0, seed=0)
    mc = estimate_mmse_ledger(spec, 3, 20000, seed=17, estimator="regression")
    for i in range(3):
        assert abs(mc.cmmse[i] - exact.cmmse[i]) < 3 * mc.stderr_cmmse[i]
        assert abs(mc.pmmse[i] - exact.pmmse[i]) < max(3 * mc.stderr_pmmse[i], 1e-3)


def test_particle_matches_closed_form():
    spec = constant_message_spec()
    exact = estimate_mmse_ledger(spec, 3, 0, seed=0)
    mc = estimate_mmse_ledger(spec, 3, 60, seed=23, estimator="particle",
                              particles=3000)
    for i in range(3):
        assert abs(mc.cmmse[i] - exact.cmmse[i]) < 4 * mc.stderr_cmmse[i] + 0.01
        assert abs(mc.pmmse[i] - exact.pmmse[i]) < 4 * mc.stderr_pmmse[i] + 0.01


def test_ledger_determinism():
    spec = constant_message_spec()
    a = estimate_mmse_ledger(spec, 4, 500, seed=5, estimator="regression")
    b = estimate_mmse_ledger(spec, 4, 500, seed=5, estimator="regression",
                             threads=4)
    assert np.array_equal(a.cmmse, b.cmmse)
    assert np.array_equal(a.pmmse, b.pmmse)


def test_unknown_estimator():
    with pytest.raises(UnsupportedEstimator):
        estimate_mmse_ledger(constant_message_spec(), 2, 10, seed=0,
                             estimator="magic")


# ---------------------------------------------------------------------------
# sandwich
# ---------------------------------------------------------------------------


def test_sandwich_desk_numbers():
    spec = constant_message_spec()
    led = estimate_mmse_ledger(spec, 2, 0, seed=0)
    joint = linear_channel_joint(spec, 2)
    info = mutual_information_blocks(joint, "Y", "M")
    rep = verify_sandwich(led, info)
    assert rep.lower == pytest.approx(5.0 / 12.0)
    assert rep.info == pytest.approx(0.5 * np.log(3.0))
    assert rep.upper == pytest.approx(0.75)
    assert rep.verdict == "holds"
    assert rep.rate_info == pytest.approx(0.25 * np.log(3.0))


def test_sandwich_zero_channel_equality():
    led = estimate_mmse_ledger(zero_input_spec(), 3, 0, seed=0)
    rep = verify_sandwich(led, InfoValue(nats=0.0, horizon=3))
    assert rep.lower == rep.info == rep.upper == 0.0
    assert rep.verdict == "holds"


def test_sandwich_horizon_mismatch():
    led = estimate_mmse_ledger(constant_message_spec(), 2, 0, seed=0)
    with pytest.raises(HorizonMismatch):
        verify_sandwich(led, InfoValue(nats=0.1, horizon=3))


def test_sandwich_violation_detected():
    led = estimate_mmse_ledger(constant_message_spec(), 2, 0, seed=0)
    rep = verify_sandwich(led, InfoValue(nats=10.0, horizon=2))
    assert rep.verdict == "violated"


def test_lti_loop_rate_bounds_straddle_log2():
    # exact MMSE sequences of the scalar unstable loop channel, with total
    # information from the covariance oracle at the same horizon
    from imse.gaussian_info import assemble_closed_loop_joint
    from imse.lti_rates import LtiSystemSpec, lti_rate_report

    n = 200
    spec = LtiSystemSpec(A=2.0, B=1.0, G=-1.8)
    rep = lti_rate_report(spec, horizon=n)
    led = MmseLedger(
        cmmse=rep.per_step_cmmse, pmmse=rep.per_step_pmmse, horizon=n,
        trials=0, stderr_cmmse=np.zeros(n), stderr_pmmse=np.zeros(n),
    )
    joint = assemble_closed_loop_joint(spec, n)
    info = mutual_information_blocks(joint, "E", "X0")
    sw = verify_sandwich(led, info)
    assert sw.verdict == "holds"
    assert sw.rate_lower <= np.log(2.0) <= sw.rate_upper


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------


@given(
    seed=st.integers(0, 10**5),
    horizon=st.integers(1, 50),
    msg_dim=st.integers(1, 2),
    dim=st.integers(1, 2),
)
def test_sandwich_property_random_conjugate(seed, horizon, msg_dim, dim):
    rng = trial_stream(seed, salt=7)
    f = rng.standard_normal((msg_dim, msg_dim + 1))
    msg_cov = f @ f.T + 0.2 * np.eye(msg_dim)
    coeffs = [rng.standard_normal((dim, msg_dim)) for _ in range(horizon)]
    chol = np.linalg.cholesky(msg_cov)

    spec = ChannelSpec(
        input_fn=lambda m, past, i: coeffs[i] @ m,
        message_sampler=lambda r: chol @ r.standard_normal(msg_dim),
        dim=dim,
        linear_structure=LinearChannelStructure(message_cov=msg_cov,
                                                coeffs=coeffs),
    )
    led = estimate_mmse_ledger(spec, horizon, 0, seed=0)
    joint = linear_channel_joint(spec, horizon)
    info = mutual_information_blocks(joint, "Y", "M")
    rep = verify_sandwich(led, info)
    assert rep.verdict == "holds"
    assert rep.lower <= rep.info + 1e-9
    assert rep.info <= rep.upper + 1e-9
