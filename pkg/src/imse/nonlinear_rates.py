"""Sequential-Bayes estimation of MMSE rate bounds for nonlinear loops.

Control mode wraps the closed loop into a filtering problem whose observation
is the error signal: conditioning on the observed errors makes the state
transition deterministic, so the correlated channel noise decouples exactly.
Filtering mode runs the plain Markov time/measurement updates.  Conditional
MMSEs are read off each ensemble with the conditional-variance (normal
correlation) formula, which is the exact MMSE under joint Gaussianity and the
filter-posterior conditional variance otherwise.

A particle filter with systematic resampling discretizes the density
recursions; a 1-dim grid-filter reference is included solely to validate the
particle path on scalar problems.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, logsumexp

from .errors import (
    CallbackFailure,
    DegenerateWeights,
    DimensionMismatch,
    DimensionTooHigh,
    InsufficientSamples,
    ModeMismatch,
    NonFiniteState,
    PowerCapExceeded,
)
from .gaussian_info import LOG_2PIE
from .parallel import run_indexed
from .reports import RateReport, cesaro_tail_average
from .rng import trial_stream


@dataclass
class NonlinearPlantSpec:
    """Nonlinear plant + optional controller, with vectorized callbacks.

    All callbacks act on a batch of states with shape (N, state_dim):
    ``f(step, states) -> (N, state_dim)`` drift, ``b(step, states) ->
    (N, state_dim, input_dim)`` gain (a constant (state_dim, input_dim) array
    is broadcast), ``h(step, states) -> (N, obs_dim)`` output, and in control
    mode ``g(step, outputs) -> (N, input_dim)``.  ``x0_sampler(rng, size)``
    draws (size, state_dim) initial states.  Callbacks must be deterministic;
    they are probed twice at construction.
    """

    f: object
    b: object
    h: object
    state_dim: int
    obs_dim: int
    x0_sampler: object
    g: object = None
    mode: str = "control"
    epsilon: float = 0.0
    input_dim: int | None = None
    power_cap: float = 1e6

    def __post_init__(self):
        if self.mode not in ("control", "filtering"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "control" and self.g is None:
            raise ModeMismatch("control mode requires a controller callback g")
        if self.input_dim is None:
            self.input_dim = self.obs_dim if self.mode == "control" else self.state_dim
        probe = trial_stream(0, 0, salt=2**33)
        states = probe.standard_normal((2, self.state_dim))
        for name, fn in (("f", self.f), ("b", self.b), ("h", self.h)):
            a = np.asarray(fn(0, states))
            bb = np.asarray(fn(0, states))
            if not np.array_equal(a, bb):
                raise CallbackFailure(f"callback {name} is not deterministic")
        if self.g is not None:
            y = np.asarray(self.h(0, states))
            a = np.asarray(self.g(0, y))
            bb = np.asarray(self.g(0, y))
            if not np.array_equal(a, bb):
                raise CallbackFailure("callback g is not deterministic")

    def gain(self, step, states):
        """b(step, states) broadcast to (N, state_dim, input_dim)."""
        bmat = np.asarray(self.b(step, states), dtype=float)
        n = states.shape[0]
        if bmat.ndim == 2:
            bmat = np.broadcast_to(bmat, (n,) + bmat.shape)
        if bmat.shape != (n, self.state_dim, self.input_dim):
            raise DimensionMismatch(f"gain shape {bmat.shape}")
        return bmat

    def control_input(self, step, states):
        """U_i(X_i) = g_i(h_i(X_i)) for a batch of states."""
        if self.g is None:
            raise ModeMismatch("no controller declared")
        return np.asarray(self.g(step, np.asarray(self.h(step, states))), dtype=float)


@dataclass
class DecoupledModel:
    """Markov model with independent observation noise for a control loop.

    Observation: E_i = U_i(X_i) + W_i with unit white W.  Transition given
    the observed error is deterministic: F_i(x, e) = fbar_i(x) + b_i(x)(e -
    U_i(x)) with fbar = f + b U, which simplifies to f(x) + b(x) e; the
    simplified form is used so that replaying a noise path reproduces the
    original closed-loop trajectory bit for bit.
    """

    spec: NonlinearPlantSpec

    def transition(self, step, states, error):
        drift = np.asarray(self.spec.f(step, states), dtype=float)
        gain = self.spec.gain(step, states)
        e = np.asarray(error, dtype=float).reshape(-1)
        return drift + np.einsum("nds,s->nd", gain, e)

    def obs_mean(self, step, states):
        return self.spec.control_input(step, states)


def decouple_feedback_noise(spec):
    """Rewrite a control loop as a filtering problem with independent noise."""
    if spec.mode != "control":
        raise ModeMismatch("decoupling applies to control-mode specs")
    return DecoupledModel(spec)


@dataclass
class ParticleEnsemble:
    """Weighted sample representation of a filtering prior or posterior."""

    states: np.ndarray
    log_weights: np.ndarray
    step: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        if self.states.shape[0] != self.log_weights.shape[0]:
            raise DimensionMismatch("states/log_weights length mismatch")
        norm = float(logsumexp(self.log_weights))
        if abs(norm) > 1e-9:
            raise DimensionMismatch(f"weights not normalized: logsumexp={norm:.3g}")

    @property
    def n(self):
        return self.states.shape[0]

    @property
    def weights(self):
        return np.exp(self.log_weights)

    @property
    def ess(self):
        return 1.0 / float(np.sum(self.weights**2))

    @classmethod
    def uniform(cls, states, step=0):
        n = states.shape[0]
        return cls(states, np.full(n, -np.log(n)), step)


def bayes_time_update(posterior, kernel, rng=None):
    """Propagate every particle through the transition kernel; weights kept.

    ``kernel(step, states, rng) -> states`` samples process noise itself in
    filtering mode and is deterministic (given the observed error) in control
    mode.
    """
    try:
        new_states = np.asarray(
            kernel(posterior.step, posterior.states, rng), dtype=float
        )
    except Exception as exc:  # noqa: BLE001 - user callback boundary
        raise CallbackFailure(f"transition kernel failed: {exc}") from exc
    if not np.isfinite(new_states).all():
        raise NonFiniteState("transition produced non-finite states")
    return ParticleEnsemble(new_states, posterior.log_weights.copy(),
                            posterior.step + 1)


def systematic_resample(weights, u):
    """Systematic resampling indices for one uniform draw u in [0, 1)."""
    n = weights.shape[0]
    positions = (np.arange(n) + u) / n
    idx = np.searchsorted(np.cumsum(weights), positions)
    return np.clip(idx, 0, n - 1)


def reweight(prior, loglik):
    """Multiply weights by the likelihood and renormalize (no resampling)."""
    ll = np.asarray(loglik(prior.states), dtype=float)
    if float(np.max(ll)) < -700.0:
        raise DegenerateWeights("all log-likelihoods below -700")
    lw = prior.log_weights + ll
    lw = lw - float(logsumexp(lw))
    post = ParticleEnsemble(prior.states, lw, prior.step)
    if post.ess < 0.01 * post.n:
        raise DegenerateWeights(
            f"effective sample size {post.ess:.1f} < 1% of particles"
        )
    return post


def _silverman_bandwidth(n, d):
    return (4.0 / (d + 2.0)) ** (1.0 / (d + 4.0)) * n ** (-1.0 / (d + 4.0))


def maybe_resample(post, rng, roughening=0.0):
    """Systematic resampling when ESS < N/2, with optional roughening.

    ``roughening`` scales a Silverman-bandwidth Gaussian kernel added to the
    resampled states.  Deterministic transition kernels (control mode, or
    filtering with zero process noise) need this: duplicates created by
    resampling would otherwise never re-diversify and the ensemble support
    collapses after about log2(N) steps.
    """
    if post.ess >= 0.5 * post.n:
        return post
    idx = systematic_resample(post.weights, float(rng.uniform()))
    states = post.states[idx]
    if roughening > 0.0:
        d = states.shape[1]
        w = post.weights
        mean = w @ post.states
        var = w @ (post.states - mean) ** 2
        bw = roughening * _silverman_bandwidth(post.n, d) * np.sqrt(var)
        states = states + bw * rng.standard_normal(states.shape)
    return ParticleEnsemble.uniform(states, post.step)


def bayes_measurement_update(prior, observation, loglik, rng, roughening=0.0):
    """Reweight by log-likelihood, renormalize, resample if ESS < N/2.

    ``loglik(states, observation)`` returns per-particle log-densities of the
    observation; for the unit-covariance Gaussian channels this is
    -||obs - mean(state)||^2 / 2 up to a constant.
    """
    post = reweight(prior, lambda states: loglik(states, observation))
    return maybe_resample(post, rng, roughening)


def normal_correlation_mmse(ensemble, output_fn):
    """Within-ensemble conditional MMSE of the output map.

    E[||Z||^2 | data] - ||E[Z | data]||^2 evaluated under the particle
    weights; exact for jointly Gaussian pairs, and otherwise the conditional
    variance of the represented posterior.
    """
    vals = np.asarray(output_fn(ensemble.states), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    w = ensemble.weights
    mean = w @ vals
    second = float(w @ np.sum(vals**2, axis=1))
    return max(0.0, second - float(mean @ mean))


# ---------------------------------------------------------------------------
# closed-loop simulation and the rate report
# ---------------------------------------------------------------------------


def simulate_closed_loop(spec, horizon, rng):
    """One truth trajectory; returns (states, observations, inputs).

    Control mode: observations are the error signals E_i = U_i + W_i.
    Filtering mode: observations are Y_i = h(X_i) + V_i.
    """
    x = spec.x0_sampler(rng, 1)
    states = np.zeros((horizon + 1, spec.state_dim))
    states[0] = x[0]
    obs_dim = spec.input_dim if spec.mode == "control" else spec.obs_dim
    observations = np.zeros((horizon, obs_dim))
    inputs = np.zeros((horizon, obs_dim))
    for i in range(horizon):
        if spec.mode == "control":
            u = spec.control_input(i, x)[0]
            e = u + rng.standard_normal(spec.input_dim)
            inputs[i] = u
            observations[i] = e
            gain = spec.gain(i, x)
            x = np.asarray(spec.f(i, x), dtype=float) + np.einsum(
                "nds,s->nd", gain, e
            )
        else:
            z = np.asarray(spec.h(i, x), dtype=float)[0]
            y = z + rng.standard_normal(spec.obs_dim)
            inputs[i] = z
            observations[i] = y
            w = spec.epsilon * rng.standard_normal(spec.input_dim)
            gain = spec.gain(i, x)
            x = np.asarray(spec.f(i, x), dtype=float) + np.einsum(
                "nds,s->nd", gain, w
            )
        if not np.isfinite(x).all():
            raise NonFiniteState(f"trajectory diverged at step {i}")
        states[i + 1] = x[0]
    return states, observations, inputs


def _run_filter_trial(spec, horizon, particles, seed, trial, roughening):
    truth_rng = trial_stream(seed, trial)
    _, observations, inputs = simulate_closed_loop(spec, horizon, truth_rng)

    pf_rng = trial_stream(seed, trial, salt=1)
    ensemble = ParticleEnsemble.uniform(spec.x0_sampler(pf_rng, particles))
    model = decouple_feedback_noise(spec) if spec.mode == "control" else None

    cm = np.zeros(horizon)
    pm = np.zeros(horizon)
    for i in range(horizon):
        if spec.mode == "control":
            def out_fn(states, _i=i):
                return model.obs_mean(_i, states)
        else:
            def out_fn(states, _i=i):
                return np.asarray(spec.h(_i, states), dtype=float)
        obs = observations[i]
        pm[i] = normal_correlation_mmse(ensemble, out_fn)

        def loglik(states, _obs=obs, _fn=out_fn):
            resid = _obs - np.asarray(_fn(states), dtype=float)
            return -0.5 * np.sum(resid**2, axis=1)

        # MMSE from the weighted posterior, before resampling perturbs it
        weighted = reweight(ensemble, loglik)
        cm[i] = normal_correlation_mmse(weighted, out_fn)
        ensemble = maybe_resample(weighted, pf_rng, roughening)

        if spec.mode == "control":
            def kernel(step, states, rng, _e=obs):
                return model.transition(step, states, _e)
        else:
            def kernel(step, states, rng):
                noise = spec.epsilon * rng.standard_normal(
                    (states.shape[0], spec.input_dim)
                )
                drift = np.asarray(spec.f(step, states), dtype=float)
                return drift + np.einsum("nds,ns->nd", spec.gain(step, states), noise)

        ensemble = bayes_time_update(ensemble, kernel, pf_rng)
    power = np.sum(inputs**2, axis=1)
    return cm, pm, power


def nonlinear_rate_report(spec, horizon, particles, trials, seed, threads=1,
                          roughening=None):
    """Particle-filter sandwich bounds on the total information rate.

    Per trial, a truth trajectory is simulated and the Bayes recursion run
    along its observations; pmmse/cmmse average the conditional output
    variance over the prior/posterior ensembles.  No closed form exists for
    the exact nonlinear rate, so ``rate_exact`` is absent.  Trials whose
    weights degenerate are aborted and counted; more than 10% aborted fails
    the run.

    ``roughening`` defaults to kernel-regularized resampling (coefficient 1)
    exactly when the transition kernel is deterministic (control mode, or
    filtering at epsilon = 0); pass 0.0 to force plain resampling.
    """
    if particles < 100:
        raise DimensionMismatch("need at least 100 particles")
    if trials < 10:
        raise DimensionMismatch("need at least 10 trials")
    if roughening is None:
        deterministic = spec.mode == "control" or spec.epsilon == 0.0
        roughening = 1.0 if deterministic else 0.0

    def one(t):
        try:
            return _run_filter_trial(spec, horizon, particles, seed, t, roughening)
        except DegenerateWeights:
            return None

    results = run_indexed(one, trials, threads)
    kept = [r for r in results if r is not None]
    aborted = trials - len(kept)
    if aborted > 0.1 * trials:
        raise DegenerateWeights(
            f"{aborted}/{trials} trials aborted with degenerate weights"
        )
    cms = np.stack([r[0] for r in kept])
    pms = np.stack([r[1] for r in kept])
    power = np.mean(np.stack([r[2] for r in kept]), axis=0)
    if np.any(power > spec.power_cap):
        raise PowerCapExceeded(
            f"empirical signal power {power.max():.3g} exceeds cap"
        )
    n_kept = len(kept)
    cm = cms.mean(axis=0)
    pm = pms.mean(axis=0)
    se_c = cms.std(axis=0, ddof=1) / np.sqrt(n_kept)
    se_p = pms.std(axis=0, ddof=1) / np.sqrt(n_kept)
    route = ("decoupled error-feedback filter" if spec.mode == "control"
             else "density time/measurement updates")
    return RateReport(
        horizon=horizon,
        rate_lower=0.5 * cesaro_tail_average(cm),
        rate_upper=0.5 * cesaro_tail_average(pm),
        per_step_cmmse=cm,
        per_step_pmmse=pm,
        stderr_cmmse=se_c,
        stderr_pmmse=se_p,
        boundary_terms={
            "aborted_trials": aborted,
            "kept_trials": n_kept,
            "route": route,
            "particles": particles,
        },
    )


# ---------------------------------------------------------------------------
# scalar grid-filter reference (validates the particle path on 1-dim problems)
# ---------------------------------------------------------------------------


def scalar_grid_filter(spec, observations, grid, x0_density):
    """Deterministic grid Bayes recursion for scalar control-mode problems.

    Requires state_dim = input_dim = 1 and a transition strictly monotone in
    the state.  Returns per-step (prior_mmse, posterior_mmse) of the control
    input, for cross-validation of the particle filter.
    """
    if spec.mode != "control" or spec.state_dim != 1:
        raise ModeMismatch("grid reference supports scalar control mode only")
    model = decouple_feedback_noise(spec)
    x = np.asarray(grid, dtype=float)
    pi = np.asarray(x0_density, dtype=float)
    pi = pi / np.trapezoid(pi, x)
    horizon = observations.shape[0]
    pm = np.zeros(horizon)
    cm = np.zeros(horizon)

    def moments(density, step):
        u = model.obs_mean(step, x[:, None]).reshape(-1)
        m1 = np.trapezoid(density * u, x)
        m2 = np.trapezoid(density * u**2, x)
        return max(0.0, float(m2 - m1**2))

    for i in range(horizon):
        e = float(np.asarray(observations[i]).reshape(-1)[0])
        pm[i] = moments(pi, i)
        u = model.obs_mean(i, x[:, None]).reshape(-1)
        pi = pi * np.exp(-0.5 * (e - u) ** 2)
        z = np.trapezoid(pi, x)
        if z <= 0:
            raise DegenerateWeights("grid posterior vanished")
        pi = pi / z
        cm[i] = moments(pi, i)
        f_img = model.transition(i, x[:, None], np.array([e])).reshape(-1)
        sign = 1.0 if f_img[-1] >= f_img[0] else -1.0
        f_mono = sign * f_img
        slope = np.gradient(f_img, x)
        inv_x = np.interp(sign * x, f_mono, x)
        dens = np.interp(inv_x, x, pi)
        jac = np.abs(np.interp(inv_x, x, slope))
        pi = dens / np.maximum(jac, 1e-12)
        inside = (sign * x >= f_mono[0]) & (sign * x <= f_mono[-1])
        pi = np.where(inside, pi, 0.0)
        z = np.trapezoid(pi, x)
        if z <= 0:
            raise DegenerateWeights("grid prior vanished after push-forward")
        pi = pi / z
    return cm, pm


# ---------------------------------------------------------------------------
# entropy-difference information-rate estimator
# ---------------------------------------------------------------------------


def knn_entropy(samples, k=4):
    """Kozachenko-Leonenko differential entropy (nats, Chebyshev metric)."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n <= k:
        raise InsufficientSamples(f"need more than k={k} samples")
    tree = cKDTree(x)
    dist, _ = tree.query(x, k=k + 1, p=np.inf)
    eps = np.maximum(dist[:, k], 1e-300)
    return float(
        digamma(n) - digamma(k) + d * np.log(2.0) + d * np.mean(np.log(eps))
    )


def _chain_entropy_rate(trajs, window, k):
    """h(E_0^n)/(n+1) from trailing-window kNN entropies.

    h(E_0^n) ~ h(window) + (n+1-w) * [h(window) - h(window-1)]: the bracket
    estimates the per-step conditional entropy at depth window-1, so the
    chain extension is exact for processes whose memory is shorter than the
    window.
    """
    n_samples, n_steps, s = trajs.shape
    w = min(window, n_steps)
    tail_w = trajs[:, n_steps - w:, :].reshape(n_samples, w * s)
    h_w = knn_entropy(tail_w, k=k)
    if w >= 2 and n_steps > w:
        tail_w1 = trajs[:, n_steps - w + 1:, :].reshape(n_samples, (w - 1) * s)
        h_w1 = knn_entropy(tail_w1, k=k)
        total = h_w + (n_steps - w) * (h_w - h_w1)
    else:
        total = h_w * (n_steps / w)
    return total / n_steps


def entropy_rate_estimate(trajectories, window=8, k=4, jackknife_blocks=10):
    """Differential entropy rate of trajectory samples, with jackknife stderr.

    ``trajectories`` is (samples, steps) or (samples, steps, s).  Slow to
    converge and biased like any kNN estimator; intended for cross-checks.
    """
    trajs = np.asarray(trajectories, dtype=float)
    if trajs.ndim == 2:
        trajs = trajs[:, :, None]
    n_samples, n_steps, s = trajs.shape
    if n_samples < 1000:
        raise InsufficientSamples("need at least 1e3 trajectory samples")
    if window is None:
        if n_steps * s > 8 * s:
            raise DimensionTooHigh(
                f"trajectory dimension {n_steps * s} exceeds cap with "
                "windowing disabled"
            )
        window = n_steps
    if window < 2:
        raise DimensionMismatch("window must be >= 2")
    estimate = _chain_entropy_rate(trajs, window, k)
    blocks = np.array_split(np.arange(n_samples), jackknife_blocks)
    thetas = []
    for blk in blocks:
        mask = np.ones(n_samples, dtype=bool)
        mask[blk] = False
        thetas.append(_chain_entropy_rate(trajs[mask], window, k))
    thetas = np.asarray(thetas)
    b = len(thetas)
    stderr = float(np.sqrt((b - 1) / b * np.sum((thetas - thetas.mean()) ** 2)))
    return estimate, stderr


def entropy_difference_rate_estimate(trajectories, window=8, k=4,
                                     jackknife_blocks=10):
    """Information rate via h(signal)/(n+1) minus the exact white-noise entropy.

    Estimates [h(E_0^n) - h(W_0^n)]/(n+1) for unit white W; a slow-converging
    sample-based cross-check of the exact computations, never a primary path.
    """
    trajs = np.asarray(trajectories, dtype=float)
    if trajs.ndim == 2:
        trajs = trajs[:, :, None]
    s = trajs.shape[2]
    rate, stderr = entropy_rate_estimate(trajs, window=window, k=k,
                                         jackknife_blocks=jackknife_blocks)
    return rate - 0.5 * s * LOG_2PIE, stderr
