"""Exact LTI control and filtering rate computations.

The total information rate of a stabilized LTI control loop (and of an LTI
filtering problem in the vanishing-process-noise limit) equals the sum of
log-moduli of the open-loop eigenvalues outside the unit circle.  This module
computes that rate three ways and cross-checks them:

* directly from the spectrum (``unstable_spectrum_rate``);
* from the steady-state Riccati fixed point on the antistable block, via
  log det(C_u P_u^- C_u' + I) = 2 * sum log|lambda|;
* as the sandwich of halved Cesaro-averaged causal/predicted MMSEs from the
  finite-horizon error-covariance recursions.

Note on "unstable": eigenvalues are classified by modulus relative to the
unit circle (discrete-time Schur sense), not by sign of real part; the
continuous-time half-plane criterion would break every identity below.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import (
    DimensionMismatch,
    IllConditionedTransform,
    MarginalEigenvalue,
    NoConvergence,
    NotDetectable,
    NotPSD,
    UnstableClosedLoop,
)
from .linalg import as_matrix, require_psd, spectral_radius, symmetrize
from .reports import RateReport, cesaro_tail_average, limsup_proxy

UNIT_CIRCLE_MARGIN = 1e-8


@dataclass
class LtiSystemSpec:
    """Time-invariant plant + linear gain feeding the Gaussian channel.

    Control mode: X_{i+1} = A X_i + B E_i, E_i = G X_i + W_i.
    Filtering mode: X_{i+1} = A X_i + B W_i, Y_i = H X_i + V_i.
    """

    A: np.ndarray
    B: np.ndarray
    mode: str = "control"
    G: np.ndarray | None = None
    H: np.ndarray | None = None
    x0_cov: np.ndarray | None = None

    def __post_init__(self):
        self.A = as_matrix(self.A)
        self.B = as_matrix(self.B)
        m = self.A.shape[0]
        if self.A.shape != (m, m) or self.B.shape[0] != m:
            raise DimensionMismatch("A must be square, B row-conformable")
        if self.mode not in ("control", "filtering"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "control":
            if self.G is None:
                raise DimensionMismatch("control mode requires G")
            self.G = as_matrix(self.G)
            if self.G.shape[1] != m or self.B.shape[1] != self.G.shape[0]:
                raise DimensionMismatch("G/B dimensions do not conform")
            if spectral_radius(self.A + self.B @ self.G) >= 1.0 - 1e-9:
                raise UnstableClosedLoop("A + B G is not Schur-stable")
        else:
            if self.H is None:
                raise DimensionMismatch("filtering mode requires H")
            self.H = as_matrix(self.H)
            if self.H.shape[1] != m:
                raise DimensionMismatch("H columns must match state dimension")
        moduli = np.abs(np.linalg.eigvals(self.A))
        if np.any(np.abs(moduli - 1.0) < UNIT_CIRCLE_MARGIN):
            raise MarginalEigenvalue(
                "A has an eigenvalue within 1e-8 of the unit circle"
            )
        if self.x0_cov is None:
            self.x0_cov = np.eye(m)
        else:
            self.x0_cov = require_psd(as_matrix(self.x0_cov), "x0_cov")

    @property
    def C(self):
        """The channel-facing map: G in control mode, H in filtering mode."""
        return self.G if self.mode == "control" else self.H


@dataclass
class ModalSplit:
    """Similarity transform separating stable and antistable eigenspaces.

    T A T^{-1} = blockdiag(A_s, A_u) with the stable block leading;
    B transforms to T B, the channel map C to C T^{-1}.
    """

    T: np.ndarray
    A_s: np.ndarray
    A_u: np.ndarray
    B_s: np.ndarray
    B_u: np.ndarray
    C_s: np.ndarray
    C_u: np.ndarray
    unstable_dim: int
    stable_dim: int


@dataclass
class DareSolution:
    """Fixed point of the antistable-block Riccati recursion.

    P_minus solves P = A_u P (C_u P C_u' + I)^{-1}-style prediction (realized
    as A_u * correct(P) * A_u'); P is the corresponding posterior.
    """

    P_minus: np.ndarray
    P: np.ndarray
    iterations: int
    residual: float


def unstable_spectrum_rate(a):
    """Sum of log-moduli of eigenvalues outside the unit circle, in nats."""
    a = as_matrix(a)
    if a.size == 0:
        return 0.0
    moduli = np.abs(np.linalg.eigvals(a))
    if np.any(np.abs(moduli - 1.0) < UNIT_CIRCLE_MARGIN):
        raise MarginalEigenvalue("eigenvalue modulus within 1e-8 of 1")
    return float(np.sum(np.log(moduli[moduli > 1.0])))


def schur_split_transform(a):
    """Transform T with T A T^{-1} = blockdiag(stable, antistable).

    Ordered real Schur (eigenvalues inside the unit circle leading) followed
    by a Sylvester solve T11 Y - Y T22 = -T12 that zeroes the remaining
    coupling.  Returns (T, T_inv, stable_dim).
    """
    a = as_matrix(a)
    m = a.shape[0]
    moduli = np.abs(np.linalg.eigvals(a))
    if np.any(np.abs(moduli - 1.0) < UNIT_CIRCLE_MARGIN):
        raise MarginalEigenvalue("cannot split: eigenvalue near unit circle")
    t_schur, z, sdim = sla.schur(a, output="real", sort="iuc")
    ms = int(sdim)
    if 0 < ms < m:
        t11 = t_schur[:ms, :ms]
        t12 = t_schur[:ms, ms:]
        t22 = t_schur[ms:, ms:]
        y = sla.solve_sylvester(t11, -t22, -t12)
        s = np.eye(m)
        s[:ms, ms:] = y
        s_inv = np.eye(m)
        s_inv[:ms, ms:] = -y
        t_mat = s_inv @ z.T
        t_inv = z @ s
    else:
        t_mat = z.T
        t_inv = z
    cond = np.linalg.cond(t_inv)
    if cond > 1e12:
        raise IllConditionedTransform(f"split transform condition {cond:.3g}")
    return t_mat, t_inv, ms


def modal_decompose(spec):
    """Ordered real Schur split + Sylvester decoupling of the off-block.

    Eigenvalues are sorted by modulus (inside unit circle first); the
    remaining upper-triangular coupling T12 is zeroed by solving
    T11 Y - Y T22 = -T12 and absorbing Y into the transform.
    """
    a = spec.A
    m = a.shape[0]
    t_mat, t_inv, ms = schur_split_transform(a)
    mu = m - ms
    d = t_mat @ a @ t_inv
    off = max(
        np.linalg.norm(d[:ms, ms:]) if ms and mu else 0.0,
        np.linalg.norm(d[ms:, :ms]) if ms and mu else 0.0,
    )
    if off > 1e-9 * max(1.0, np.linalg.norm(a)):
        raise IllConditionedTransform(f"off-block residual {off:.3g} too large")
    b_t = t_mat @ spec.B
    c_t = spec.C @ t_inv
    return ModalSplit(
        T=t_mat,
        A_s=d[:ms, :ms], A_u=d[ms:, ms:],
        B_s=b_t[:ms], B_u=b_t[ms:],
        C_s=c_t[:, :ms], C_u=c_t[:, ms:],
        unstable_dim=mu, stable_dim=ms,
    )


def _riccati_correct(p_minus, c):
    """Posterior from prior under a unit-covariance observation map c."""
    if p_minus.size == 0:
        return p_minus
    s = c @ p_minus @ c.T + np.eye(c.shape[0])
    gain = p_minus @ c.T @ np.linalg.solve(s, np.eye(c.shape[0]))
    return symmetrize(p_minus - gain @ c @ p_minus)


def solve_dare_antistable(a_u, c_u, tol=1e-12, max_iterations=10**5):
    """Antistable-block DARE by fixed-point iteration of its own recursion.

    Iterates P <- A_u correct(P) A_u' from P = I until the residual
    ||P - map(P)|| / max(1, ||P||) drops below ``tol``.  The iteration mirrors
    the finite-horizon prediction/correction recursion, so the converged pair
    satisfies log det(C_u P^- C_u' + I) = 2 log|det A_u| exactly at the fixed
    point.
    """
    a_u = as_matrix(a_u) if np.size(a_u) else np.zeros((0, 0))
    c_u = as_matrix(c_u) if np.size(c_u) else np.zeros((0, 0))
    mu = a_u.shape[0]
    if mu == 0:
        empty = np.zeros((0, 0))
        return DareSolution(empty, empty, 0, 0.0)
    if c_u.shape[1] != mu:
        raise DimensionMismatch("C_u columns must match A_u dimension")
    if np.any(np.abs(np.linalg.eigvals(a_u)) <= 1.0):
        raise NotDetectable("A_u must be antistable (all |lambda| > 1)")
    p = np.eye(mu)
    for it in range(1, max_iterations + 1):
        p_next = symmetrize(a_u @ _riccati_correct(p, c_u) @ a_u.T)
        residual = float(np.linalg.norm(p_next - p)) / max(1.0, float(np.linalg.norm(p)))
        p = p_next
        if not np.isfinite(p).all() or np.linalg.norm(p) > 1e14:
            raise NotDetectable("Riccati iteration diverged; (A_u, C_u) not detectable")
        if residual < tol:
            return DareSolution(
                P_minus=p, P=_riccati_correct(p, c_u),
                iterations=it, residual=residual,
            )
    raise NoConvergence(f"DARE fixed point not reached in {max_iterations} iterations")


def riccati_trajectory(spec, horizon, epsilon=0.0):
    """Finite-horizon prior/posterior error covariances from P_0^- = x0_cov.

    Returns (priors, posteriors) with ``horizon`` entries each.  Filtering
    mode adds eps^2 B B' process noise in the prediction; control mode runs
    the noise-free prediction (the transition is deterministic given the
    observed error signal).
    """
    c = spec.C
    q = (epsilon**2) * (spec.B @ spec.B.T) if spec.mode == "filtering" else None
    p_minus = spec.x0_cov.copy()
    priors, posteriors = [], []
    for _ in range(horizon):
        priors.append(p_minus)
        p = _riccati_correct(p_minus, c)
        posteriors.append(p)
        p_minus = symmetrize(spec.A @ p @ spec.A.T)
        if q is not None:
            p_minus = symmetrize(p_minus + q)
    return priors, posteriors


def lti_rate_report(spec, horizon, epsilon=0.0):
    """Exact rate, MMSE sandwich, and steady-state diagnostics for one system.

    ``epsilon`` is the process-noise scale in filtering mode (0 runs the exact
    noise-free recursion); control mode ignores it (channel noise is unit).
    """
    priors, posteriors = riccati_trajectory(spec, horizon, epsilon)
    c = spec.C
    pm = np.array([float(np.trace(c @ p @ c.T)) for p in priors])
    cm = np.array([float(np.trace(c @ p @ c.T)) for p in posteriors])
    spectrum_rate = unstable_spectrum_rate(spec.A)
    # with process noise present the sandwich brackets I(Y; W, X0), for which
    # the spectrum sum is only the vanishing-noise limit, not an exact value
    rate_exact = spectrum_rate if (spec.mode == "control" or epsilon == 0.0) else None

    split = modal_decompose(spec)
    dare = solve_dare_antistable(split.A_u, split.C_u)
    if split.unstable_dim:
        _, logdet = np.linalg.slogdet(
            split.C_u @ dare.P_minus @ split.C_u.T + np.eye(c.shape[0])
        )
        dare_rate = 0.5 * float(logdet)
    else:
        dare_rate = 0.0

    boundary = {
        "spectrum_rate": spectrum_rate,
        "dare_rate": dare_rate,
        "dare_identity_residual": abs(dare_rate - spectrum_rate),
        "dare_iterations": dare.iterations,
        "steady_cmmse": cm[-1],
        "steady_pmmse": pm[-1],
        "limsup_lower": 0.5 * limsup_proxy(cm),
        "limsup_upper": 0.5 * limsup_proxy(pm),
        "epsilon": epsilon,
    }
    return RateReport(
        horizon=horizon,
        rate_lower=0.5 * cesaro_tail_average(cm),
        rate_upper=0.5 * cesaro_tail_average(pm),
        per_step_cmmse=cm,
        per_step_pmmse=pm,
        rate_exact=rate_exact,
        capacity=_steady_capacity(spec, epsilon),
        boundary_terms=boundary,
    )


def _steady_capacity(spec, epsilon=0.0):
    """Per-step capacity at the realized steady input (output) covariance.

    Control mode: the stationary closed-loop state covariance Sigma solves the
    discrete Lyapunov equation Sigma = F Sigma F' + B B' with F = A + B G, and
    the realized input covariance is G Sigma G'.  Feeding that back as the
    power budget gives capacity = 1/2 log det(Sigma_U + I) per step, which
    upper-bounds the exact rate.  Filtering mode: analogous with Sigma_Z when
    the open loop is stable, otherwise no finite stationary power exists.
    """
    if spec.mode == "control":
        f = spec.A + spec.B @ spec.G
        sigma = sla.solve_discrete_lyapunov(f, spec.B @ spec.B.T)
        sigma_u = spec.G @ sigma @ spec.G.T
    else:
        if spectral_radius(spec.A) >= 1.0:
            return None
        sigma = (epsilon**2) * sla.solve_discrete_lyapunov(spec.A, spec.B @ spec.B.T)
        sigma_u = spec.H @ sigma @ spec.H.T
    return capacity_with_power_limits([sigma_u], 1)


def capacity_with_power_limits(covariances, horizon):
    """[2(n+1)]^{-1} sum_i log det(Sigma_i + I) in nats per step.

    A single covariance is broadcast across the horizon.  Each entry must be
    symmetric PSD.
    """
    covs = [require_psd(as_matrix(c), f"Sigma[{k}]") for k, c in enumerate(covariances)]
    if len(covs) == 1 and horizon > 1:
        covs = covs * horizon
    if len(covs) != horizon:
        raise DimensionMismatch("need one covariance per step (or a single one)")
    total = 0.0
    for c in covs:
        _, logdet = np.linalg.slogdet(c + np.eye(c.shape[0]))
        total += float(logdet)
    return total / (2.0 * horizon)


@dataclass
class FootnoteDiagnostics:
    """Steady-state identity and inequality checks on one LTI system.

    ``identity_residual``: |2 sum log|lambda+| - sum log(1 + eta_k)| with
    eta_k the eigenvalues of C_u P_u^- C_u'.
    ``cmmse_bound_holds`` / ``pmmse_bound_holds``: steady tr(C P C') <= 2*rate
    and steady tr(C P^- C') >= 2*rate.
    ``woodbury_residual``: ||C P C' - M (I + M)^{-1}|| with M = C P^- C'.
    ``min_cmmse_bound``: value of min sum eta/(1+eta) s.t. sum eta >= 2*rate;
    the objective is concave in each coordinate, so mass concentrates in one
    coordinate and the optimum is 2r/(1+2r) in closed form.
    """

    eta: np.ndarray
    rate: float
    identity_residual: float
    cmmse_steady: float
    pmmse_steady: float
    cmmse_bound_holds: bool
    pmmse_bound_holds: bool
    woodbury_residual: float
    min_cmmse_bound: float
    notes: dict = field(default_factory=dict)


def min_trace_ratio_bound(rate):
    """min sum_k eta_k/(1+eta_k) subject to sum_k eta_k >= 2*rate, eta_k > 0."""
    if rate <= 0:
        return 0.0
    r2 = 2.0 * rate
    return r2 / (1.0 + r2)


def footnote_identity_checks(spec, horizon=2000):
    """Steady-state eigenvalue identities tying the DARE to the spectrum."""
    split = modal_decompose(spec)
    dare = solve_dare_antistable(split.A_u, split.C_u)
    rate = unstable_spectrum_rate(spec.A)
    s = spec.C.shape[0]
    if split.unstable_dim:
        m_mat = split.C_u @ dare.P_minus @ split.C_u.T
        eta = np.linalg.eigvalsh(symmetrize(m_mat))
        identity_residual = abs(2.0 * rate - float(np.sum(np.log1p(eta))))
        lhs = split.C_u @ dare.P @ split.C_u.T
        rhs = m_mat @ np.linalg.solve(np.eye(s) + m_mat, np.eye(s))
        woodbury_residual = float(np.linalg.norm(lhs - rhs))
    else:
        eta = np.zeros(0)
        identity_residual = abs(2.0 * rate)
        woodbury_residual = 0.0

    priors, posteriors = riccati_trajectory(spec, horizon)
    c = spec.C
    cm_steady = float(np.trace(c @ posteriors[-1] @ c.T))
    pm_steady = float(np.trace(c @ priors[-1] @ c.T))
    return FootnoteDiagnostics(
        eta=eta,
        rate=rate,
        identity_residual=identity_residual,
        cmmse_steady=cm_steady,
        pmmse_steady=pm_steady,
        cmmse_bound_holds=bool(cm_steady <= 2.0 * rate + 1e-9),
        pmmse_bound_holds=bool(pm_steady >= 2.0 * rate - 1e-9),
        woodbury_residual=woodbury_residual,
        min_cmmse_bound=min_trace_ratio_bound(rate),
        notes={
            "eta_trace_ratio": float(np.sum(eta / (1.0 + eta))) if eta.size else 0.0,
        },
    )
