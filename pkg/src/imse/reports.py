"""Shared result containers for rate computations."""

from dataclasses import dataclass, field

import numpy as np


def cesaro_tail_average(values, fraction=0.5):
    """Mean over the trailing ``fraction`` of a per-step sequence."""
    v = np.asarray(values, dtype=float)
    start = int(np.floor(v.shape[0] * (1.0 - fraction)))
    return float(np.mean(v[start:]))


def limsup_proxy(values):
    """Max of trailing-window Cesaro averages over windows {n/4, n/2, n}.

    Approximates the limit superior of running averages; reported alongside
    the plain tail average so dispersion is visible.
    """
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    out = -np.inf
    for w in {max(1, n // 4), max(1, n // 2), n}:
        out = max(out, float(np.mean(v[n - w:])))
    return out


def tail_spread(values):
    """Spread of trailing-window averages; a transient-size estimate."""
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    avgs = [float(np.mean(v[n - w:])) for w in {max(1, n // 4), max(1, n // 2), n}]
    return max(avgs) - min(avgs)


@dataclass
class RateReport:
    """Lower/upper MMSE rate bounds plus the exact rate when one exists.

    All rates are in nats per step.  ``per_step_cmmse``/``per_step_pmmse``
    are the raw per-step MMSE sequences (not halved); the bounds are halved
    Cesaro averages over the trailing half of the horizon.
    """

    horizon: int
    rate_lower: float
    rate_upper: float
    per_step_cmmse: np.ndarray
    per_step_pmmse: np.ndarray
    rate_exact: float | None = None
    capacity: float | None = None
    stderr_cmmse: np.ndarray | None = None
    stderr_pmmse: np.ndarray | None = None
    boundary_terms: dict = field(default_factory=dict)
    units: str = "nats/step"

    def __post_init__(self):
        if self.rate_exact is not None:
            # decaying transients keep tail averages of an exact recursion
            # slightly above their limit; allow that spread plus MC noise
            tol_low = 1e-9 + 3.0 * self._bound_sigma() \
                + 0.5 * tail_spread(self.per_step_cmmse)
            tol_up = 1e-9 + 3.0 * self._bound_sigma() \
                + 0.5 * tail_spread(self.per_step_pmmse)
            if not (self.rate_lower <= self.rate_exact + tol_low
                    and self.rate_exact <= self.rate_upper + tol_up):
                raise ValueError(
                    f"rate ordering violated: {self.rate_lower} <= "
                    f"{self.rate_exact} <= {self.rate_upper} fails"
                )

    def _bound_sigma(self):
        sigma = 0.0
        for err in (self.stderr_cmmse, self.stderr_pmmse):
            if err is not None and len(err):
                sigma = max(sigma, 0.5 * float(np.mean(err)))
        return sigma

    def to_dict(self):
        d = {
            "horizon": self.horizon,
            "rate_lower": self.rate_lower,
            "rate_upper": self.rate_upper,
            "rate_exact": self.rate_exact,
            "capacity": self.capacity,
            "units": self.units,
            "boundary_terms": {k: _jsonable(v) for k, v in self.boundary_terms.items()},
        }
        return d


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v
