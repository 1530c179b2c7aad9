"""Synthetic data with underreported exposure and Monte-Carlo MSE experiments."""

from __future__ import annotations

import dataclasses
import enum
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, special

from ._parallel import map_ordered
from .effects import risk_difference
from .estimator import FitConfig, Mode, fit
from .links import Link
from .model import Dataset, FullParams, OutcomeParams, PropensityParams, check_tau

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings.

    ``propensity_scale`` multiplies p(A=1|x) (scaled-logistic propensity,
    non-identifiable from a single report when < 1). ``tau2`` adds a second,
    conditionally independent report.
    """

    n: int = 1000
    d: int = 5
    tau: float = 0.25
    theta_a: float = 1.0
    phi_scale: float = 1.0
    seed: int = 0
    tau2: Optional[float] = None
    propensity_scale: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.d < 0:
            raise ValueError("need n >= 1 and d >= 0")
        check_tau(self.tau)
        if self.tau2 is not None:
            check_tau(self.tau2)
        if not 0.0 <= self.phi_scale <= 1.0:
            raise ValueError("phi_scale must lie in [0, 1]")
        if not 0.0 < self.propensity_scale <= 1.0:
            raise ValueError("propensity_scale must lie in (0, 1]")


@dataclass(frozen=True)
class Synthetic:
    data: Dataset
    params: FullParams
    true_rd: float
    a_true: np.ndarray = field(repr=False)


def generate(config: SynthConfig) -> Synthetic:
    """Draw one dataset.

    Coefficients (intercepts included) are standard normal; theta_a is fixed,
    phi weights are multiplied by ``phi_scale``. The report is a_obs = Z * A
    with Z ~ Bern(1 - tau).
    """
    rng = np.random.default_rng(config.seed)
    d, n = config.d, config.n
    phi0 = rng.standard_normal()
    phi_w = rng.standard_normal(d) * config.phi_scale
    theta0 = rng.standard_normal()
    theta_w = rng.standard_normal(d)

    x = rng.standard_normal((n, d))
    pi = config.propensity_scale * special.expit(phi0 + x @ phi_w)
    a = (rng.random(n) < pi).astype(np.int8)
    z = (rng.random(n) < 1.0 - config.tau).astype(np.int8)
    a_obs = z * a
    a_obs2 = None
    if config.tau2 is not None:
        z2 = (rng.random(n) < 1.0 - config.tau2).astype(np.int8)
        a_obs2 = z2 * a
    p_y = special.expit(theta0 + x @ theta_w + config.theta_a * a)
    y = (rng.random(n) < p_y).astype(np.int8)

    tau = (config.tau,) if config.tau2 is None else (config.tau, config.tau2)
    params = FullParams(
        tau=tau,
        propensity=PropensityParams(phi0, phi_w, Link.LOGIT),
        outcome=OutcomeParams(theta0, theta_w, config.theta_a, Link.LOGIT),
    )
    data = Dataset(x=x, y=y, a_obs=a_obs, a_obs2=a_obs2)
    return Synthetic(data, params, risk_difference(params.outcome, data), a)


def _binary_entropy(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-300, 1.0)
    q = np.clip(1.0 - p, 1e-300, 1.0)
    return -(p * np.log(p) + q * np.log(q))


def _logistic_probabilities(x: np.ndarray, target: np.ndarray, max_iter: int = 200) -> np.ndarray:
    design = np.column_stack([np.ones(len(target)), x])
    t = target.astype(float)

    def objective(w):
        eta = design @ w
        # mean negative Bernoulli log-likelihood, stable in both tails
        loss = np.mean(np.logaddexp(0.0, eta) - t * eta)
        grad = design.T @ (special.expit(eta) - t) / len(t)
        return loss, grad

    res = optimize.minimize(
        objective, np.zeros(design.shape[1]), jac=True, method="L-BFGS-B",
        options=dict(maxiter=max_iter, gtol=1e-10),
    )
    return special.expit(design @ res.x)


def mutual_information(data: Dataset, target: str = "a_obs") -> float:
    """Plug-in I(target; X) in nats from a logistic regression of the target on x.

    Estimated as H(mean fitted p) - mean H(fitted p_i), clamped at zero.
    """
    if target not in ("a_obs", "a_obs2"):
        raise ValueError(f"unknown target {target!r}")
    values = getattr(data, target)
    if values is None:
        raise ValueError(f"dataset has no {target} column")
    if data.n < 50:
        raise ValueError("mutual information needs at least 50 rows")
    if values.min() == values.max():
        warnings.warn(f"{target} is constant; mutual information is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    p = _logistic_probabilities(data.x, values)
    mi = _binary_entropy(np.array([p.mean()]))[0] - np.mean(_binary_entropy(p))
    return float(max(mi, 0.0))


class Axis(str, enum.Enum):
    TAU = "tau"
    SIZE = "size"
    MI = "mi"


@dataclass(frozen=True)
class ExperimentReport:
    axis: Axis
    grid: np.ndarray
    mse_adjusted: np.ndarray
    mse_unadjusted: np.ndarray
    n_failed: np.ndarray
    flagged: np.ndarray
    mutual_information: np.ndarray
    replicates: int
    true_rd_per_replicate: np.ndarray
    rd_adjusted: np.ndarray
    rd_unadjusted: np.ndarray

    def to_dict(self) -> dict:
        return {
            "axis": self.axis.value,
            "grid": self.grid.tolist(),
            "mse_adjusted": self.mse_adjusted.tolist(),
            "mse_unadjusted": self.mse_unadjusted.tolist(),
            "n_failed": self.n_failed.tolist(),
            "flagged": self.flagged.tolist(),
            "mutual_information": self.mutual_information.tolist(),
            "replicates": self.replicates,
            "true_rd_per_replicate": self.true_rd_per_replicate.tolist(),
            "rd_adjusted": self.rd_adjusted.tolist(),
            "rd_unadjusted": self.rd_unadjusted.tolist(),
        }


def _grid_config(axis: Axis, value: float, base: SynthConfig, seed: int) -> SynthConfig:
    if axis is Axis.TAU:
        return dataclasses.replace(base, tau=float(value), seed=seed)
    if axis is Axis.SIZE:
        if value != int(value):
            raise ValueError(f"sample size must be an integer, got {value}")
        return dataclasses.replace(base, n=int(value), seed=seed)
    return dataclasses.replace(base, phi_scale=float(value), seed=seed)


def replicate_seed(seed: int, grid_index: int, replicate: int) -> int:
    ss = np.random.SeedSequence([int(seed), int(grid_index), int(replicate)])
    return int(ss.generate_state(2, dtype=np.uint64)[0])


def _replicate(args):
    synth_config, fit_config = args
    sample = generate(synth_config)
    adjusted_config = dataclasses.replace(fit_config, mode=Mode.SINGLE, tau=None)
    naive_config = dataclasses.replace(fit_config, mode=Mode.KNOWN_TAU, tau=0.0)
    naive = fit(sample.data, naive_config)
    rd_naive = risk_difference(naive.params.outcome, sample.data)
    try:
        adjusted = fit(sample.data, adjusted_config)
    except (ValueError, FloatingPointError):
        adjusted = None
    rd_adj = np.nan
    if adjusted is not None and adjusted.converged:
        rd_adj = risk_difference(adjusted.params.outcome, sample.data)
    mi = mutual_information(sample.data) if sample.data.n >= 50 else np.nan
    return sample.true_rd, rd_adj, rd_naive if naive.converged else np.nan, mi


def run_experiment(
    axis: Axis | str,
    grid: Sequence[float],
    base: SynthConfig,
    replicates: int,
    fit_config: FitConfig,
    seed: int,
) -> ExperimentReport:
    """Paired Monte-Carlo comparison of adjusted (single report) and unadjusted fits.

    Each replicate generates one dataset seeded from (seed, grid index,
    replicate) and fits both estimators to it. Replicates where either fit
    fails are dropped from both MSEs; more than 20% dropped flags the point.
    """
    axis = Axis(axis)
    grid = np.asarray(list(grid), dtype=float)
    if grid.size == 0:
        raise ValueError("grid must not be empty")
    if replicates < 2:
        raise ValueError("need at least 2 replicates")
    tasks = [
        (_grid_config(axis, value, base, replicate_seed(seed, g, r)), fit_config)
        for g, value in enumerate(grid)
        for r in range(replicates)
    ]
    out = np.array(map_ordered(_replicate, tasks), dtype=float).reshape(grid.size, replicates, 4)
    true_rd, rd_adj, rd_naive, mi = (out[..., k] for k in range(4))
    ok = np.isfinite(rd_adj) & np.isfinite(rd_naive)
    n_failed = (~ok).sum(axis=1)
    mse_adj = np.array([np.mean((rd_adj[g, ok[g]] - true_rd[g, ok[g]]) ** 2) if ok[g].any() else np.nan
                        for g in range(grid.size)])
    mse_naive = np.array([np.mean((rd_naive[g, ok[g]] - true_rd[g, ok[g]]) ** 2) if ok[g].any() else np.nan
                          for g in range(grid.size)])
    flagged = n_failed > 0.2 * replicates
    for g in np.flatnonzero(flagged):
        log.warning("grid point %g: %d of %d replicates failed", grid[g], n_failed[g], replicates)
    return ExperimentReport(
        axis=axis,
        grid=grid,
        mse_adjusted=mse_adj,
        mse_unadjusted=mse_naive,
        n_failed=n_failed,
        flagged=flagged,
        mutual_information=np.nanmean(mi, axis=1) if np.isfinite(mi).any() else np.full(grid.size, np.nan),
        replicates=replicates,
        true_rd_per_replicate=true_rd,
        rd_adjusted=rd_adj,
        rd_unadjusted=rd_naive,
    )
