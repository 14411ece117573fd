"""Small shared linear-algebra helpers.

log-determinants are always accumulated from triangular-factor diagonals
(Cholesky pivots or QR R-factors), never from determinant products, so
horizons in the thousands cannot overflow.
"""

import numpy as np

from .errors import NotPSD, SingularCovariance

LOG_DET_FLOOR = np.log(1e-300)


def symmetrize(m):
    return 0.5 * (m + m.T)


def symmetry_defect(m):
    """Relative asymmetry ||M - M^T|| / max(1, ||M||)."""
    scale = max(1.0, float(np.linalg.norm(m)))
    return float(np.linalg.norm(m - m.T)) / scale


def spectral_radius(a):
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def chol_logdet(m, jitter_rel=1e-12):
    """log det of a symmetric PD matrix via Cholesky pivot sums.

    One jitter retry of at most ``jitter_rel * mean diagonal`` is allowed;
    a larger deficit raises SingularCovariance instead of being repaired.
    """
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return 0.0
    try:
        c = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        jitter = jitter_rel * (np.trace(m) / m.shape[0])
        if jitter <= 0:
            raise SingularCovariance("covariance block is not positive definite")
        try:
            c = np.linalg.cholesky(m + jitter * np.eye(m.shape[0]))
        except np.linalg.LinAlgError:
            raise SingularCovariance(
                "covariance block is not positive definite (jitter retry failed)"
            ) from None
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    if logdet <= LOG_DET_FLOOR:
        raise SingularCovariance(f"log det {logdet:.3g} below floor")
    return logdet


def gram_logdet(factor):
    """log det(F F^T) for a row-factor F via QR; stable for huge dynamic range.

    The R-factor of F^T is the (transposed) Cholesky factor of F F^T, so this
    is still a triangular-diagonal sum, without ever squaring the data.
    """
    f = np.asarray(factor, dtype=float)
    if f.shape[0] == 0:
        return 0.0
    if f.shape[1] < f.shape[0]:
        raise SingularCovariance("factor has fewer sources than dimensions")
    r = np.linalg.qr(f.T, mode="r")
    diag = np.abs(np.diag(r))
    if np.any(diag <= 0.0):
        raise SingularCovariance("rank-deficient factor")
    logdet = 2.0 * float(np.sum(np.log(diag)))
    if logdet <= LOG_DET_FLOOR:
        raise SingularCovariance(f"log det {logdet:.3g} below floor")
    return logdet


def require_psd(m, name="matrix", tol=1e-10):
    """Raise NotPSD unless eigenvalues are >= -tol * largest."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        return m
    if symmetry_defect(m) > 1e-8:
        raise NotPSD(f"{name} is not symmetric")
    w = np.linalg.eigvalsh(symmetrize(m))
    floor = -tol * max(1.0, float(w[-1]))
    if w[0] < floor:
        raise NotPSD(f"{name} has negative eigenvalue {w[0]:.3g}")
    return m


def as_matrix(x):
    """Coerce scalars / nested lists to a 2-D float array (1-D becomes a column)."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    return a
