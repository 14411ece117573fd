"""Monte Carlo simulation of the discrete-time additive white Gaussian channel
with or without feedback:

    Y_i = Phi_i(M, Y_0^{i-1}) + W_i,      W_i ~ N(0, noise_cov)

plus per-step causal/predicted MMSE ledgers and the information sandwich

    1/2 sum cmmse(Phi_i)  <=  I(M; Y_0^n)  <=  1/2 sum pmmse(Phi_i).

Expectations run over per-trial counter-based RNG streams keyed by
(seed, trial index), so worker scheduling never changes results.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import (
    CallbackFailure,
    DegenerateWeights,
    DimensionMismatch,
    HorizonMismatch,
    PowerCapExceeded,
    UnsupportedEstimator,
)
from .gaussian_info import GaussianJoint, InfoValue
from .linalg import as_matrix
from .parallel import run_indexed
from .rng import trial_stream


@dataclass
class LinearChannelStructure:
    """Conjugate-Gaussian declaration: Phi_i = C_i @ M with M ~ N(0, message_cov).

    ``coeffs`` is a constant matrix, a list of per-step matrices, or a callable
    step -> matrix.  Only non-feedback channels can declare this structure.
    """

    message_cov: np.ndarray
    coeffs: object = 1.0

    def __post_init__(self):
        self.message_cov = as_matrix(self.message_cov)

    @property
    def message_dim(self):
        return self.message_cov.shape[0]

    def coeff(self, i):
        if callable(self.coeffs):
            c = self.coeffs(i)
        elif isinstance(self.coeffs, (list, tuple)):
            c = self.coeffs[i]
        else:
            c = self.coeffs
        return as_matrix(c)


@dataclass
class ChannelSpec:
    """Channel definition for simulation and MMSE estimation.

    ``input_fn(message, past_outputs, step)`` returns the input vector Phi_i;
    ``past_outputs`` is the (step, dim) array of outputs observed so far.  A
    non-feedback input_fn receives the history too but must ignore it; this is
    probed at construction with two distinct fake histories.
    """

    input_fn: object
    message_sampler: object
    dim: int
    feedback: bool = False
    noise_cov: np.ndarray | None = None
    power_cap: float = 1e6
    linear_structure: LinearChannelStructure | None = None

    def __post_init__(self):
        if self.noise_cov is None:
            self.noise_cov = np.eye(self.dim)
        self.noise_cov = as_matrix(self.noise_cov)
        if self.noise_cov.shape != (self.dim, self.dim):
            raise DimensionMismatch("noise_cov must be dim x dim")
        self._noise_chol = np.linalg.cholesky(self.noise_cov)
        if not self.feedback:
            self._probe_no_feedback()
        if self.feedback and self.linear_structure is not None:
            raise UnsupportedEstimator(
                "linear_structure declares a non-feedback conjugate channel"
            )

    def _probe_no_feedback(self):
        rng = trial_stream(0, 0, salt=2**32)
        msg = self.message_sampler(rng)
        h1 = rng.standard_normal((3, self.dim))
        h2 = rng.standard_normal((3, self.dim))
        for i in range(3):
            try:
                a = np.asarray(self.input_fn(msg, h1[:i], i), dtype=float)
                b = np.asarray(self.input_fn(msg, h2[:i], i), dtype=float)
            except Exception:  # noqa: BLE001 - step may be out of the fn's range
                continue
            if not np.array_equal(a, b):
                raise CallbackFailure(
                    "input_fn depends on past outputs but feedback=False"
                )


@dataclass
class ChannelEnsemble:
    """Simulated trajectories: one (M, Phi, Y) triple per trial."""

    messages: list
    inputs: np.ndarray   # (trials, horizon, dim)
    outputs: np.ndarray  # (trials, horizon, dim)
    horizon: int
    trials: int
    seed: int


@dataclass
class MmseLedger:
    """Per-step causal and predicted MMSE estimates with MC standard errors."""

    cmmse: np.ndarray
    pmmse: np.ndarray
    horizon: int
    trials: int
    stderr_cmmse: np.ndarray
    stderr_pmmse: np.ndarray
    estimator: str = "closed_form"

    def __post_init__(self):
        for name in ("cmmse", "pmmse", "stderr_cmmse", "stderr_pmmse"):
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr)
            if arr.shape != (self.horizon,):
                raise HorizonMismatch(f"{name} length != horizon")
            if np.any(arr < 0):
                raise ValueError(f"{name} has negative entries")
        slack = 3.0 * (self.stderr_cmmse + self.stderr_pmmse)
        if np.any(self.pmmse < self.cmmse - slack):
            raise ValueError("pmmse < cmmse beyond 3 sigma: conditioning on "
                             "more data cannot increase MMSE")

    def sums(self):
        return 0.5 * float(np.sum(self.cmmse)), 0.5 * float(np.sum(self.pmmse))


@dataclass
class SandwichReport:
    """Outcome of checking lower <= total information <= upper."""

    lower: float
    info: float
    upper: float
    margin_lower: float
    margin_upper: float
    verdict: str
    horizon: int
    rate_lower: float = 0.0
    rate_info: float = 0.0
    rate_upper: float = 0.0
    sigma_lower: float = 0.0
    sigma_upper: float = 0.0

    def to_dict(self):
        return {
            "lower": self.lower, "info": self.info, "upper": self.upper,
            "margin_lower": self.margin_lower, "margin_upper": self.margin_upper,
            "verdict": self.verdict, "horizon": self.horizon,
            "rate_lower": self.rate_lower, "rate_info": self.rate_info,
            "rate_upper": self.rate_upper,
        }


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def _simulate_one(spec, horizon, seed, trial):
    rng = trial_stream(seed, trial)
    msg = spec.message_sampler(rng)
    inputs = np.zeros((horizon, spec.dim))
    outputs = np.zeros((horizon, spec.dim))
    for i in range(horizon):
        past = outputs[:i] if spec.feedback else outputs[:0]
        try:
            phi = np.asarray(spec.input_fn(msg, past, i), dtype=float).reshape(-1)
        except Exception as exc:  # noqa: BLE001 - user callback boundary
            raise CallbackFailure(f"input_fn failed at step {i}: {exc}") from exc
        if phi.shape[0] != spec.dim:
            raise DimensionMismatch(f"input_fn returned dim {phi.shape[0]}")
        w = spec._noise_chol @ rng.standard_normal(spec.dim)
        inputs[i] = phi
        outputs[i] = phi + w
    return msg, inputs, outputs


def simulate_channel(spec, horizon, trials, seed, threads=1):
    """Simulate ``trials`` independent channel trajectories.

    Identical (spec, horizon, trials, seed) produce a bit-identical ensemble
    regardless of thread count.
    """
    if horizon < 1 or trials < 1:
        raise DimensionMismatch("horizon and trials must be >= 1")
    results = run_indexed(
        lambda t: _simulate_one(spec, horizon, seed, t), trials, threads
    )
    messages = [r[0] for r in results]
    inputs = np.stack([r[1] for r in results])
    outputs = np.stack([r[2] for r in results])
    power = np.mean(np.sum(inputs**2, axis=2), axis=0)
    if np.any(power > spec.power_cap):
        step = int(np.argmax(power > spec.power_cap))
        raise PowerCapExceeded(
            f"empirical E[Phi'Phi] = {power[step]:.3g} at step {step} exceeds "
            f"cap {spec.power_cap:.3g}"
        )
    return ChannelEnsemble(messages, inputs, outputs, horizon, trials, seed)


# ---------------------------------------------------------------------------
# MMSE ledgers
# ---------------------------------------------------------------------------


def _closed_form_ledger(spec, horizon):
    st = spec.linear_structure
    if st is None or spec.feedback:
        raise UnsupportedEstimator(
            "closed_form needs a declared non-feedback linear-Gaussian structure"
        )
    p = st.message_cov.copy()
    cm = np.zeros(horizon)
    pm = np.zeros(horizon)
    for i in range(horizon):
        c = st.coeff(i)
        if c.shape != (spec.dim, st.message_dim):
            raise DimensionMismatch("coeff shape must be dim x message_dim")
        pm[i] = float(np.trace(c @ p @ c.T))
        s = c @ p @ c.T + spec.noise_cov
        gain = p @ c.T @ np.linalg.solve(s, np.eye(spec.dim))
        p = p - gain @ c @ p
        p = 0.5 * (p + p.T)
        cm[i] = float(np.trace(c @ p @ c.T))
    zeros = np.zeros(horizon)
    return MmseLedger(cm, pm, horizon, 0, zeros, zeros, estimator="closed_form")


def _history_features(outputs, upto, degree):
    """Polynomial features of Y_0..Y_{upto-1}: [1, Y, Y^2, ...]."""
    t = outputs.shape[0]
    cols = [np.ones((t, 1))]
    if upto > 0:
        hist = outputs[:, :upto, :].reshape(t, -1)
        for d in range(1, degree + 1):
            cols.append(hist**d)
    return np.concatenate(cols, axis=1)


def _regression_ledger(spec, horizon, trials, seed, degree, threads):
    ens = simulate_channel(spec, horizon, trials, seed, threads=threads)
    cm = np.zeros(horizon)
    pm = np.zeros(horizon)
    se_c = np.zeros(horizon)
    se_p = np.zeros(horizon)
    for i in range(horizon):
        target = ens.inputs[:, i, :]
        for causal in (True, False):
            feats = _history_features(ens.outputs, i + 1 if causal else i, degree)
            dof = max(1, trials - feats.shape[1])
            beta, *_ = np.linalg.lstsq(feats, target, rcond=None)
            resid = target - feats @ beta
            sq = np.sum(resid**2, axis=1)
            value = float(np.sum(sq)) / dof
            stderr = float(np.std(sq, ddof=1)) / np.sqrt(trials)
            if causal:
                cm[i], se_c[i] = value, stderr
            else:
                pm[i], se_p[i] = value, stderr
    return MmseLedger(cm, pm, horizon, trials, se_c, se_p, estimator="regression")


def _particle_trial(spec, horizon, seed, trial, n_particles):
    rng = trial_stream(seed, trial)
    msg = spec.message_sampler(rng)
    prng = trial_stream(seed, trial, salt=1)
    particles = [spec.message_sampler(prng) for _ in range(n_particles)]
    log_w = np.full(n_particles, -np.log(n_particles))
    noise_inv = np.linalg.inv(spec.noise_cov)

    outputs = np.zeros((horizon, spec.dim))
    cm = np.zeros(horizon)
    pm = np.zeros(horizon)
    for i in range(horizon):
        past = outputs[:i] if spec.feedback else outputs[:0]
        phi_true = np.asarray(spec.input_fn(msg, past, i), dtype=float).reshape(-1)
        w = spec._noise_chol @ rng.standard_normal(spec.dim)
        outputs[i] = phi_true + w

        phis = np.array(
            [np.asarray(spec.input_fn(p, past, i), dtype=float).reshape(-1)
             for p in particles]
        )
        weights = np.exp(log_w - logsumexp(log_w))
        mean = weights @ phis
        pm[i] = float(weights @ np.sum(phis**2, axis=1) - mean @ mean)

        resid = outputs[i] - phis
        ll = -0.5 * np.einsum("nd,de,ne->n", resid, noise_inv, resid)
        if np.max(ll) < -700:
            raise DegenerateWeights(f"all log-likelihoods < -700 at step {i}")
        log_w = log_w + ll
        log_w -= logsumexp(log_w)
        weights = np.exp(log_w)
        ess = 1.0 / float(np.sum(weights**2))
        if ess < 0.01 * n_particles:
            raise DegenerateWeights(
                f"effective sample size {ess:.1f} < 1% of particles at step {i}"
            )
        mean = weights @ phis
        cm[i] = float(weights @ np.sum(phis**2, axis=1) - mean @ mean)
        if ess < 0.5 * n_particles:
            u = prng.uniform()
            positions = (np.arange(n_particles) + u) / n_particles
            idx = np.searchsorted(np.cumsum(weights), positions)
            idx = np.clip(idx, 0, n_particles - 1)
            particles = [particles[j] for j in idx]
            log_w = np.full(n_particles, -np.log(n_particles))
    return cm, pm


def estimate_mmse_ledger(spec, horizon, trials, seed, estimator="closed_form",
                         particles=1000, degree=1, threads=1):
    """Per-step cmmse/pmmse of the channel input under the chosen estimator.

    ``closed_form`` requires a declared conjugate-Gaussian structure and is
    exact (zero stderr).  ``regression`` fits the conditional mean by least
    squares on polynomial output-history features (default degree 1); its MSE
    upper-bounds the true MMSE, so treat the resulting sandwich lower bound as
    conservative-in-expectation only.  ``particle`` runs a per-trial particle
    filter over the message with systematic resampling.
    """
    if estimator == "closed_form":
        return _closed_form_ledger(spec, horizon)
    if estimator == "regression":
        return _regression_ledger(spec, horizon, trials, seed, degree, threads)
    if estimator == "particle":
        results = run_indexed(
            lambda t: _particle_trial(spec, horizon, seed, t, particles),
            trials, threads,
        )
        cms = np.stack([r[0] for r in results])
        pms = np.stack([r[1] for r in results])
        return MmseLedger(
            cms.mean(axis=0), pms.mean(axis=0), horizon, trials,
            cms.std(axis=0, ddof=1) / np.sqrt(trials) if trials > 1 else np.zeros(horizon),
            pms.std(axis=0, ddof=1) / np.sqrt(trials) if trials > 1 else np.zeros(horizon),
            estimator="particle",
        )
    raise UnsupportedEstimator(f"unknown estimator {estimator!r}")


# ---------------------------------------------------------------------------
# sandwich verification
# ---------------------------------------------------------------------------


def verify_sandwich(ledger, info):
    """Check 1/2 sum cmmse <= I <= 1/2 sum pmmse with 3-sigma MC slack."""
    if not isinstance(info, InfoValue):
        raise TypeError("info must be an InfoValue")
    if ledger.horizon != info.horizon:
        raise HorizonMismatch(
            f"ledger horizon {ledger.horizon} != info horizon {info.horizon}"
        )
    lower, upper = ledger.sums()
    sigma_l = 0.5 * float(np.sqrt(np.sum(ledger.stderr_cmmse**2)))
    sigma_u = 0.5 * float(np.sqrt(np.sum(ledger.stderr_pmmse**2)))
    if not np.isfinite([lower, upper, info.nats]).all():
        verdict = "inconclusive"
    elif lower - 3.0 * sigma_l <= info.nats <= upper + 3.0 * sigma_u:
        verdict = "holds"
    else:
        verdict = "violated"
    n = ledger.horizon
    return SandwichReport(
        lower=lower, info=info.nats, upper=upper,
        margin_lower=info.nats - lower, margin_upper=upper - info.nats,
        verdict=verdict, horizon=n,
        rate_lower=lower / n, rate_info=info.nats / n, rate_upper=upper / n,
        sigma_lower=sigma_l, sigma_upper=sigma_u,
    )


# ---------------------------------------------------------------------------
# exact joint for declared linear channels (oracle input to the sandwich)
# ---------------------------------------------------------------------------


def linear_channel_joint(spec, horizon):
    """Exact Gaussian joint (M, Y, W) for a declared linear channel."""
    st = spec.linear_structure
    if st is None or spec.feedback:
        raise UnsupportedEstimator("linear channel joint needs linear_structure")
    q = st.message_dim
    s = spec.dim
    n_src = q + horizon * s
    msg_chol = np.linalg.cholesky(st.message_cov)
    noise_chol = spec._noise_chol

    m_rows = np.zeros((q, n_src))
    m_rows[:, :q] = msg_chol
    y_rows = np.zeros((horizon * s, n_src))
    w_rows = np.zeros((horizon * s, n_src))
    for i in range(horizon):
        rows = slice(i * s, (i + 1) * s)
        cols = slice(q + i * s, q + (i + 1) * s)
        y_rows[rows, :q] = st.coeff(i) @ msg_chol
        y_rows[rows, cols] = noise_chol
        w_rows[rows, cols] = noise_chol
    factor = np.vstack([m_rows, y_rows, w_rows])
    cov = factor @ factor.T
    ny = horizon * s
    return GaussianJoint(
        mean=np.zeros(q + 2 * ny),
        cov=0.5 * (cov + cov.T),
        blocks={"M": (0, q), "Y": (q, q + ny), "W": (q + ny, q + 2 * ny)},
        factor=factor,
        source_spans={"M": (0, q), "W": (q, n_src)},
        block_steps={"M": 1, "Y": horizon, "W": horizon},
    )


def constant_message_spec(variance=1.0, dim=1, power_cap=1e6):
    """Phi_i = M with M ~ N(0, variance I): the textbook conjugate channel."""
    var = float(variance)

    def sampler(rng):
        return np.sqrt(var) * rng.standard_normal(dim)

    def input_fn(message, past, i):
        return message

    return ChannelSpec(
        input_fn=input_fn,
        message_sampler=sampler,
        dim=dim,
        feedback=False,
        power_cap=power_cap,
        linear_structure=LinearChannelStructure(
            message_cov=var * np.eye(dim), coeffs=np.eye(dim)
        ),
    )
