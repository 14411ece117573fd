"""Time-varying rate computations.

The exact total information rate of a time-varying loop is the time-domain
Bode integral: the limsup of (1/n) log det of the transition matrix of the
antistable part.  It is accumulated per step in log space (the product matrix
is never materialized), cross-checked against the telescoping log-det
decomposition of the antistable Riccati difference equation, and sandwiched
by halved Cesaro averages of the full time-varying recursion's MMSEs.

Stable/antistable splitting is automated for constant and periodic sequences
(via monodromy eigen-splitting and per-step subspace propagation); arbitrary
callback sequences must supply a declared split.
"""

from dataclasses import dataclass, field
from math import lcm

import numpy as np

from .errors import (
    DimensionMismatch,
    IllConditionedTransform,
    MarginalMonodromy,
    NoSplitAvailable,
    NumericalBlowup,
    SingularStep,
    UnstableClosedLoop,
    ValidationFailure,
)
from .linalg import as_matrix, require_psd, spectral_radius, symmetrize
from .lti_rates import _riccati_correct, schur_split_transform
from .reports import RateReport, cesaro_tail_average, limsup_proxy

NORM_CAP = 1e6


class MatrixSequence:
    """Time-indexed matrix generator: constant, explicit list, periodic, or callback."""

    def __init__(self, kind, data, period=None):
        self.kind = kind
        self.data = data
        self.period = period

    @classmethod
    def constant(cls, m):
        return cls("constant", as_matrix(m), period=1)

    @classmethod
    def explicit(cls, mats):
        mats = [as_matrix(m) for m in mats]
        return cls("explicit", mats)

    @classmethod
    def periodic(cls, mats):
        mats = [as_matrix(m) for m in mats]
        return cls("periodic", mats, period=len(mats))

    @classmethod
    def callback(cls, fn):
        return cls("callback", fn)

    @classmethod
    def coerce(cls, obj):
        if isinstance(obj, MatrixSequence):
            return obj
        if callable(obj):
            return cls.callback(obj)
        if isinstance(obj, (list, tuple)):
            return cls.periodic(obj)
        return cls.constant(obj)

    def at(self, i):
        if self.kind == "constant":
            return self.data
        if self.kind == "explicit":
            return self.data[i]
        if self.kind == "periodic":
            return self.data[i % self.period]
        return as_matrix(self.data(i))


@dataclass
class LtvSystemSpec:
    """Time-varying plant + gain sequences feeding the Gaussian channel.

    ``declared_split`` (optional) supplies transforms for sequences whose
    dichotomy cannot be computed automatically: a dict with keys ``T`` (a
    callable step -> transform or list of matrices) and ``unstable_dim``.
    """

    A_seq: object
    B_seq: object
    C_seq: object
    mode: str = "control"
    x0_cov: np.ndarray | None = None
    declared_split: dict | None = None
    norm_cap: float = NORM_CAP

    def __post_init__(self):
        self.A_seq = MatrixSequence.coerce(self.A_seq)
        self.B_seq = MatrixSequence.coerce(self.B_seq)
        self.C_seq = MatrixSequence.coerce(self.C_seq)
        if self.mode not in ("control", "filtering"):
            raise ValueError(f"unknown mode {self.mode!r}")
        m = self.A_seq.at(0).shape[0]
        self.dim = m
        if self.x0_cov is None:
            self.x0_cov = np.eye(m)
        else:
            self.x0_cov = require_psd(as_matrix(self.x0_cov), "x0_cov")
        probe = self.period if self.period else 3
        for i in range(probe):
            a = self.A_seq.at(i)
            if a.shape != (m, m):
                raise DimensionMismatch(f"A_seq[{i}] shape {a.shape}")
            if np.linalg.norm(a) > self.norm_cap:
                raise DimensionMismatch(f"A_seq[{i}] norm exceeds cap")
        if self.period:
            mono = monodromy(self.A_seq, self.period)
            moduli = np.abs(np.linalg.eigvals(mono))
            if np.any(np.abs(moduli - 1.0) < 1e-8):
                raise MarginalMonodromy(
                    "monodromy matrix has an eigenvalue within 1e-8 of the unit circle"
                )
            if self.mode == "control":
                closed = np.eye(m)
                for i in range(self.period):
                    closed = (self.A_seq.at(i)
                              + self.B_seq.at(i) @ self.C_seq.at(i)) @ closed
                if spectral_radius(closed) >= 1.0 - 1e-9:
                    raise UnstableClosedLoop("closed-loop monodromy not Schur-stable")

    @property
    def period(self):
        """Common period when every sequence is constant or periodic, else None."""
        ps = []
        for seq in (self.A_seq, self.B_seq, self.C_seq):
            if seq.kind in ("constant", "periodic"):
                ps.append(seq.period)
            else:
                return None
        return lcm(*ps)

    def is_constant(self):
        return all(seq.kind == "constant"
                   for seq in (self.A_seq, self.B_seq, self.C_seq))


def monodromy(a_seq, period):
    """Product A_{p-1} ... A_0 over one period."""
    m = a_seq.at(0).shape[0]
    out = np.eye(m)
    for i in range(period):
        out = a_seq.at(i) @ out
    return out


@dataclass
class DichotomySplit:
    """Per-step transforms separating stable and antistable sub-bundles.

    ``T[i]`` maps original coordinates at step i to split coordinates
    (stable block leading); A/B/C partitions are materialized over the
    realized window.  ``kappa_moduli`` are the per-step moduli of the
    antistable monodromy eigenvalues (Floquet multipliers to the power 1/p).
    """

    T: list
    A_s: list
    A_u: list
    B_s: list
    B_u: list
    C_s: list
    C_u: list
    unstable_dim: int
    stable_dim: int
    window: int
    period: int | None = None
    kappa_moduli: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def T_at(self, i):
        if self.period and i >= len(self.T):
            return self.T[i % self.period]
        return self.T[min(i, len(self.T) - 1)]

    @property
    def spectrum_lower(self):
        """Sum of log kappa over the antistable spectrum (with multiplicity)."""
        return float(np.sum(np.log(self.kappa_moduli)))


def _materialize(spec, t_list, ms, window, period, kappa):
    """Partition the sequences under per-step transforms and verify commutation."""
    m = spec.dim
    mu = m - ms
    t_inv = [np.linalg.inv(t) for t in t_list]

    def t_at(i):
        if period:
            return t_list[i % period], t_inv[i % period]
        return t_list[min(i, len(t_list) - 1)], t_inv[min(i, len(t_list) - 1)]

    a_s, a_u, b_s, b_u, c_s, c_u = [], [], [], [], [], []
    for i in range(window):
        a = spec.A_seq.at(i)
        t_i, ti_inv = t_at(i)
        t_n, _ = t_at(i + 1)
        d = t_n @ a @ ti_inv
        off = 0.0
        if ms and mu:
            off = max(np.linalg.norm(d[:ms, ms:]), np.linalg.norm(d[ms:, :ms]))
        if off > 1e-9 * max(1.0, np.linalg.norm(a)):
            raise ValidationFailure(
                f"commutation residual {off:.3g} at step {i}", step=i
            )
        bt = t_n @ spec.B_seq.at(i)
        ct = spec.C_seq.at(i) @ ti_inv
        a_s.append(d[:ms, :ms]); a_u.append(d[ms:, ms:])
        b_s.append(bt[:ms]); b_u.append(bt[ms:])
        c_s.append(ct[:, :ms]); c_u.append(ct[:, ms:])
    for i, t in enumerate(t_list):
        if np.linalg.cond(t) > 1e12:
            raise IllConditionedTransform(f"T[{i}] condition number > 1e12")
    return DichotomySplit(
        T=t_list, A_s=a_s, A_u=a_u, B_s=b_s, B_u=b_u, C_s=c_s, C_u=c_u,
        unstable_dim=mu, stable_dim=ms, window=window, period=period,
        kappa_moduli=kappa,
    )


def _orth_blocks(m_cols, ms):
    """Re-orthonormalize the two column blocks separately (spans preserved)."""
    out = np.empty_like(m_cols)
    if ms:
        q, _ = np.linalg.qr(m_cols[:, :ms])
        out[:, :ms] = q
    if m_cols.shape[1] - ms:
        q, _ = np.linalg.qr(m_cols[:, ms:])
        out[:, ms:] = q
    return out


def dichotomy_split(spec, window):
    """Stable/antistable splitting over ``window`` steps.

    Routes: a declared split is validated and passed through; constant
    sequences delegate to the time-invariant modal decomposition; periodic
    sequences eigen-split the monodromy matrix and propagate the splitting
    subspaces (with per-block re-orthonormalization) across one period.
    """
    m = spec.dim

    if spec.declared_split is not None:
        t_decl = spec.declared_split["T"]
        mu = int(spec.declared_split["unstable_dim"])
        ms = m - mu
        if callable(t_decl):
            t_list = [as_matrix(t_decl(i)) for i in range(window + 1)]
        else:
            t_list = [as_matrix(t) for t in t_decl]
        kappa = np.asarray(spec.declared_split.get("kappa_moduli", np.zeros(0)))
        return _materialize(spec, t_list, ms, window, None, kappa)

    period = spec.period
    if period is None:
        raise NoSplitAvailable(
            "aperiodic callback sequences need a declared split; automatic "
            "dichotomy detection exists only for constant and periodic specs"
        )

    mono = monodromy(spec.A_seq, period)
    moduli = np.abs(np.linalg.eigvals(mono))
    if np.any(np.abs(moduli - 1.0) < 1e-8):
        raise MarginalMonodromy("monodromy eigenvalue within 1e-8 of unit circle")
    kappa = np.sort(moduli[moduli > 1.0]) ** (1.0 / period)

    if spec.is_constant():
        t_mat, _, ms = schur_split_transform(spec.A_seq.at(0))
        return _materialize(spec, [t_mat], ms, window, 1, kappa)

    # periodic: split the monodromy, then push the sub-bundles forward
    t0, t0_inv, ms = schur_split_transform(mono)
    t_list = [t0]
    cols = t0_inv
    for i in range(period - 1):
        cols = spec.A_seq.at(i) @ cols
        if ms and np.linalg.matrix_rank(cols[:, :ms]) < ms:
            raise SingularStep(f"stable sub-bundle collapses at step {i}")
        cols = _orth_blocks(cols, ms)
        t_list.append(np.linalg.inv(cols))
    return _materialize(spec, t_list, ms, window, period, kappa)


@dataclass
class TransitionAccumulator:
    """Running log det of the antistable transition product."""

    log_det_running: float
    window: tuple
    per_step_logdet: np.ndarray


def _as_indexable(seq):
    """Normalize a MatrixSequence / list / callable to ``i -> matrix``."""
    if isinstance(seq, MatrixSequence):
        return seq.at
    if isinstance(seq, (list, tuple)):
        return seq.__getitem__
    return seq


def transition_logdet_rate(a_u_seq, n_max):
    """Time-domain Bode integral estimate from per-step log |det A_u(i)|.

    Returns (rate, accumulator); the rate is the max of trailing-window
    Cesaro averages (limsup proxy), 0 when the antistable part is empty.
    """
    at = _as_indexable(a_u_seq)
    per_step = np.zeros(n_max)
    running = 0.0
    for i in range(n_max):
        a = np.atleast_2d(np.asarray(at(i), dtype=float))
        if a.size == 0:
            per_step[i] = 0.0
            continue
        sign, logabs = np.linalg.slogdet(a)
        if sign == 0 or logabs < np.log(1e-300):
            raise SingularStep(f"A_u({i}) is singular")
        per_step[i] = logabs
        running += logabs
    acc = TransitionAccumulator(
        log_det_running=running, window=(0, n_max), per_step_logdet=per_step
    )
    rate = limsup_proxy(per_step) if n_max else 0.0
    if np.all(per_step == 0.0):
        rate = 0.0
    return rate, acc


def rde_antistable_trajectory(a_u_seq, c_u_seq, p0, horizon):
    """Iterate the antistable Riccati difference equation for ``horizon`` steps.

    Returns P(0..horizon) with every iterate re-symmetrized; asymmetry drift
    beyond 1e-8 or norms beyond 1e12 abort.
    """
    at_a = _as_indexable(a_u_seq)
    at_c = _as_indexable(c_u_seq)
    p = np.atleast_2d(np.asarray(p0, dtype=float)).copy()
    if p.size:
        require_psd(p, "P0")
    out = [p]
    for i in range(horizon):
        a = np.atleast_2d(np.asarray(at_a(i), dtype=float))
        c = np.atleast_2d(np.asarray(at_c(i), dtype=float))
        if p.size == 0:
            out.append(p)
            continue
        p_next = a @ _riccati_correct(p, c) @ a.T
        drift = np.linalg.norm(p_next - p_next.T)
        if drift > 1e-8 * max(1.0, np.linalg.norm(p_next)):
            raise NumericalBlowup(f"symmetry drift {drift:.3g} at step {i}")
        p = symmetrize(p_next)
        if not np.isfinite(p).all() or np.linalg.norm(p) > 1e12:
            raise NumericalBlowup(f"RDE iterate norm blowup at step {i}")
        out.append(p)
    return out


def ltv_riccati_trajectory(spec, horizon, epsilon=0.0):
    """Full (unsplit) time-varying prior/posterior error covariances."""
    p_minus = spec.x0_cov.copy()
    priors, posteriors = [], []
    for i in range(horizon):
        c = spec.C_seq.at(i)
        priors.append(p_minus)
        p = _riccati_correct(p_minus, c)
        posteriors.append(p)
        a = spec.A_seq.at(i)
        p_minus = symmetrize(a @ p @ a.T)
        if spec.mode == "filtering" and epsilon > 0:
            b = spec.B_seq.at(i)
            p_minus = symmetrize(p_minus + (epsilon**2) * (b @ b.T))
        if not np.isfinite(p_minus).all() or np.linalg.norm(p_minus) > 1e12:
            raise NumericalBlowup(f"Riccati iterate blowup at step {i}")
    return priors, posteriors


def _telescoping(split, spec, horizon):
    """Log-det decomposition of the antistable RDE over the horizon.

    sum_i log det A_u(i) telescopes into half the sum of innovation log-dets
    plus boundary log det P(n+1) - log det P(0); the residual certifies the
    RDE trajectory against the transition product.
    """
    mu = split.unstable_dim
    if mu == 0:
        return {"telescoping_residual": 0.0, "initial_logdet": 0.0,
                "final_logdet": 0.0}
    t0 = split.T_at(0)
    p0 = symmetrize(t0 @ spec.x0_cov @ t0.T)[split.stable_dim:, split.stable_dim:]
    try:
        np.linalg.cholesky(p0)
    except np.linalg.LinAlgError:
        p0 = np.eye(mu)
    traj = rde_antistable_trajectory(split.A_u, split.C_u, p0, horizon)
    s = split.C_u[0].shape[0]
    lhs = np.zeros(horizon)
    innov = np.zeros(horizon)
    logdets = np.zeros(horizon + 1)
    for i in range(horizon):
        sign, la = np.linalg.slogdet(split.A_u[i])
        if sign == 0:
            raise SingularStep(f"A_u({i}) singular in telescoping check")
        lhs[i] = la
        _, innov[i] = np.linalg.slogdet(
            split.C_u[i] @ traj[i] @ split.C_u[i].T + np.eye(s)
        )
        _, logdets[i] = np.linalg.slogdet(traj[i])
    _, logdets[horizon] = np.linalg.slogdet(traj[horizon])
    rhs_total = 0.5 * (np.sum(innov) + logdets[horizon] - logdets[0])
    # same identity over the trailing half only: its boundary terms are the
    # converged (periodic) covariances, so the windowed rate is transient-free
    half = horizon // 2
    rhs_tail = 0.5 * (
        np.sum(innov[half:]) + logdets[horizon] - logdets[half]
    )
    return {
        "telescoping_residual": abs(float(np.sum(lhs)) - rhs_total),
        "telescoping_rate": rhs_tail / (horizon - half),
        "initial_logdet": float(logdets[0]),
        "final_logdet": float(logdets[horizon]),
    }


def ltv_rate_report(spec, horizon, epsilon=0.0):
    """Exact Bode-integral rate plus MMSE sandwich for a time-varying system."""
    split = dichotomy_split(spec, horizon)
    rate_exact, acc = transition_logdet_rate(split.A_u, horizon)
    priors, posteriors = ltv_riccati_trajectory(spec, horizon, epsilon)
    pm = np.array([
        float(np.trace(spec.C_seq.at(i) @ priors[i] @ spec.C_seq.at(i).T))
        for i in range(horizon)
    ])
    cm = np.array([
        float(np.trace(spec.C_seq.at(i) @ posteriors[i] @ spec.C_seq.at(i).T))
        for i in range(horizon)
    ])
    boundary = _telescoping(split, spec, horizon)
    boundary.update({
        "bode_rate": rate_exact,
        "plain_average": float(np.mean(acc.per_step_logdet)),
        "spectrum_lower": split.spectrum_lower,
        "clb": max(split.spectrum_lower, 0.5 * cesaro_tail_average(cm)),
        "limsup_lower": 0.5 * limsup_proxy(cm),
        "limsup_upper": 0.5 * limsup_proxy(pm),
        "epsilon": epsilon,
    })
    effective_exact = rate_exact if (spec.mode == "control" or epsilon == 0.0) else None
    return RateReport(
        horizon=horizon,
        rate_lower=0.5 * cesaro_tail_average(cm),
        rate_upper=0.5 * cesaro_tail_average(pm),
        per_step_cmmse=cm,
        per_step_pmmse=pm,
        rate_exact=effective_exact,
        boundary_terms=boundary,
    )


@dataclass
class VanishingNoiseDiagnostics:
    """Structure of the prior error covariance as process noise vanishes.

    In split coordinates the stable block scales like eps^2, the cross block
    at least as fast, and the antistable block tends to the noise-free RDE
    limit.  ``stable_slope``/``cross_slope`` are log-log fits over the sweep;
    ``antistable_extrapolated`` is the Richardson (order-2) extrapolation of
    the antistable block to eps = 0.
    """

    epsilons: list
    stable_norms: list
    cross_norms: list
    antistable_blocks: list
    antistable_distances: list
    rde_limit: np.ndarray
    stable_slope: float | None
    cross_slope: float | None
    antistable_extrapolated: np.ndarray | None


def _loglog_slope(eps, values):
    v = np.asarray(values)
    if np.all(v < 1e-13):
        return float("inf")
    x = np.log(np.asarray(eps))
    y = np.log(np.maximum(v, 1e-300))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def vanishing_noise_structure(spec, epsilons, horizon):
    """Run the full filtering recursion per epsilon and split the covariances."""
    if spec.mode != "filtering":
        raise DimensionMismatch("vanishing-noise structure is a filtering diagnostic")
    eps = [float(e) for e in epsilons]
    if not eps or any(e <= 0 for e in eps):
        raise DimensionMismatch("epsilons must all be > 0")
    if any(eps[i] <= eps[i + 1] for i in range(len(eps) - 1)):
        raise DimensionMismatch("epsilons must be strictly decreasing")
    split = dichotomy_split(spec, horizon)
    ms, mu = split.stable_dim, split.unstable_dim

    p0_u = np.eye(mu)
    rde = rde_antistable_trajectory(split.A_u, split.C_u, p0_u, horizon)
    rde_limit = rde[horizon - 1] if mu else np.zeros((0, 0))

    stable_norms, cross_norms, blocks, dists = [], [], [], []
    for e in eps:
        priors, _ = ltv_riccati_trajectory(spec, horizon, epsilon=e)
        t = split.T_at(horizon - 1)
        p_split = symmetrize(t @ priors[horizon - 1] @ t.T)
        s_block = p_split[:ms, :ms]
        x_block = p_split[:ms, ms:]
        u_block = p_split[ms:, ms:]
        stable_norms.append(float(np.linalg.norm(s_block)))
        cross_norms.append(float(np.linalg.norm(x_block)))
        blocks.append(u_block)
        dists.append(float(np.linalg.norm(u_block - rde_limit)))

    if len(eps) >= 2:
        stable_slope = _loglog_slope(eps, stable_norms)
        cross_slope = _loglog_slope(eps, cross_norms)
        e1, e2 = eps[-2], eps[-1]
        extrap = (e1**2 * blocks[-1] - e2**2 * blocks[-2]) / (e1**2 - e2**2)
    else:
        stable_slope = cross_slope = None
        extrap = None
    return VanishingNoiseDiagnostics(
        epsilons=eps,
        stable_norms=stable_norms,
        cross_norms=cross_norms,
        antistable_blocks=blocks,
        antistable_distances=dists,
        rde_limit=rde_limit,
        stable_slope=stable_slope,
        cross_slope=cross_slope,
        antistable_extrapolated=extrap,
    )
