"""Effect estimands from a fitted outcome model and the fixed-tau sensitivity sweep."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .links import Link, inverse_link
from .model import Dataset, OutcomeParams, check_tau

log = logging.getLogger(__name__)


def risk_difference(theta: OutcomeParams, data: Dataset) -> float:
    """Average over the observed rows of p(Y=1|A=1,x_i) - p(Y=1|A=0,x_i)."""
    if data.n < 1:
        raise ValueError("risk difference needs at least one row")
    base = theta.linear_predictor(data.x, 0.0)
    if theta.exposure_coef == 0.0:
        return 0.0
    p1 = inverse_link(theta.link, base + theta.exposure_coef)
    p0 = inverse_link(theta.link, base)
    return float(np.mean(p1 - p0))


def adjusted_odds_ratio(theta: OutcomeParams) -> float:
    """exp(theta_a); the covariate-conditional odds ratio of a logit outcome model."""
    if theta.link is not Link.LOGIT:
        raise NotImplementedError(
            f"odds ratio exp(theta_a) is only defined for the logit link, not {theta.link.value}"
        )
    return float(np.exp(theta.exposure_coef))


@dataclass(frozen=True)
class SensitivityBand:
    tau_grid: np.ndarray
    rd_estimates: np.ndarray
    converged: np.ndarray
    ci_lower: Optional[np.ndarray] = None
    ci_upper: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.tau_grid)
        for name in ("rd_estimates", "converged", "ci_lower", "ci_upper"):
            value = getattr(self, name)
            if value is not None and len(value) != n:
                raise ValueError(f"{name} length does not match tau_grid")
        if np.any(np.diff(self.tau_grid) <= 0):
            raise ValueError("tau_grid must be strictly increasing")


def sensitivity_sweep(
    data: Dataset,
    base_config,
    tau_grid: Sequence[float],
    bootstrap_opts: Optional[dict] = None,
) -> SensitivityBand:
    """Fit with tau held at each grid value and report the risk difference.

    Every grid point reuses ``base_config.seed``, so a point equals a direct
    known-tau fit with the same seed. A failed point is kept as NaN with
    ``converged=False`` instead of being dropped.
    """
    from .estimator import Mode, bootstrap, fit

    grid = np.array([check_tau(t) for t in tau_grid], dtype=float)
    if grid.size == 0:
        raise ValueError("tau grid must not be empty")
    rds = np.full(grid.size, np.nan)
    ok = np.zeros(grid.size, dtype=bool)
    lo = hi = None
    if bootstrap_opts:
        lo = np.full(grid.size, np.nan)
        hi = np.full(grid.size, np.nan)
    for i, tau in enumerate(grid):
        config = dataclasses.replace(base_config, mode=Mode.KNOWN_TAU, tau=float(tau))
        try:
            if bootstrap_opts:
                boot = bootstrap(data, config, **bootstrap_opts)
                result = boot.point
                lo[i], hi[i] = boot.intervals["rd"]
            else:
                result = fit(data, config)
        except (RuntimeError, ValueError) as exc:
            log.warning("sweep point tau=%g failed: %s", tau, exc)
            continue
        rds[i] = risk_difference(result.params.outcome, data)
        ok[i] = result.converged
    return SensitivityBand(grid, rds, ok, lo, hi)
