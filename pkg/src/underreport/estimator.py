"""Maximum-likelihood fitting with multiple restarts, plus percentile bootstrap."""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize, special

from ._parallel import map_ordered
from .effects import adjusted_odds_ratio, risk_difference
from .likelihood import ParamLayout, gradient, log_likelihood, value_and_gradient
from .links import Link
from .model import Dataset, FullParams, check_tau

log = logging.getLogger(__name__)

WARM_TAU = 0.1
AGREEMENT_TOL = 1e-4
BOUNDARY_TOL = 1e-4
# Moment estimates are kept away from 0 before taking logit(tau).
_MOMENT_TAU_FLOOR = 1e-3


class Mode(str, enum.Enum):
    KNOWN_TAU = "known-tau"
    SINGLE = "single"
    DUAL = "dual"


@dataclass(frozen=True)
class FitConfig:
    mode: Mode = Mode.SINGLE
    tau: Optional[float] = None
    link_propensity: Link = Link.LOGIT
    link_outcome: Link = Link.LOGIT
    restarts: int = 5
    max_iterations: int = 500
    grad_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "link_propensity", Link(self.link_propensity))
        object.__setattr__(self, "link_outcome", Link(self.link_outcome))
        if self.mode is Mode.KNOWN_TAU:
            if self.tau is None:
                raise ValueError("known-tau mode requires tau")
            object.__setattr__(self, "tau", check_tau(self.tau))
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.max_iterations < 1 or not self.grad_tol > 0:
            raise ValueError("max_iterations and grad_tol must be positive")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class FitResult:
    """Best optimum across restarts.

    ``gradient_norm`` is the infinity norm of the gradient of the *mean*
    per-row log-likelihood, the scale on which ``grad_tol`` applies.
    """

    params: FullParams
    log_likelihood_at_opt: float
    converged: bool
    gradient_norm: float
    n_restarts_agreeing: int
    boundary_suspect: bool
    restart_log_likelihoods: tuple[float, ...]
    n_iterations: int
    vector: np.ndarray = field(repr=False)
    layout: ParamLayout = field(repr=False)


def layout_for(data: Dataset, config: FitConfig) -> ParamLayout:
    links = dict(link_propensity=config.link_propensity, link_outcome=config.link_outcome)
    if config.mode is Mode.KNOWN_TAU:
        return ParamLayout(d=data.d, n_tau=1, fixed_tau=(config.tau,), **links)
    if config.mode is Mode.DUAL:
        if not data.dual:
            raise ValueError("dual mode requires a second exposure column (a_obs2)")
        return ParamLayout(d=data.d, n_tau=2, **links)
    return ParamLayout(d=data.d, n_tau=1, **links)


def _model_data(data: Dataset, config: FitConfig) -> Dataset:
    # Only dual mode consumes the second report.
    if config.mode is not Mode.DUAL and data.dual:
        return Dataset(data.x, data.y, data.a_obs, covariate_names=data.covariate_names)
    return data


@dataclass
class _Run:
    u: np.ndarray
    loglik: float
    grad_inf: float
    n_iter: int


def _optimize(u0, data: Dataset, layout: ParamLayout, config: FitConfig) -> _Run:
    n = data.n

    def objective(u):
        value, grad = value_and_gradient(u, data, layout)
        return -value / n, -grad / n

    u = np.asarray(u0, dtype=float)
    n_iter = 0
    # L-BFGS-B also stops on relative function change; resume a bounded number
    # of times so that the gradient criterion decides convergence.
    for _ in range(3):
        res = optimize.minimize(
            objective,
            u,
            jac=True,
            method="L-BFGS-B",
            options=dict(
                maxiter=max(1, config.max_iterations - n_iter),
                maxcor=10,
                gtol=config.grad_tol,
                ftol=1e-15,
                maxls=50,
            ),
        )
        u = res.x
        n_iter += int(res.nit)
        grad_inf = float(np.max(np.abs(res.jac))) if res.jac.size else 0.0
        if grad_inf <= config.grad_tol or n_iter >= config.max_iterations or res.nit == 0:
            break
    return _Run(u=u, loglik=log_likelihood(u, data, layout), grad_inf=grad_inf, n_iter=n_iter)


def moment_init(data: Dataset) -> tuple[float, float]:
    """Closed-form underreporting rates from two conditionally independent reports.

    tau_1 is the share of rows with a_obs2 = 1 where a_obs = 0, and vice versa.
    """
    if not data.dual:
        raise ValueError("moment initialisation needs two exposure reports")
    a1 = data.a_obs.astype(bool)
    a2 = data.a_obs2.astype(bool)
    out = []
    for this, other, name in ((a1, a2, "a_obs2"), (a2, a1, "a_obs")):
        denom = int(other.sum())
        if denom == 0:
            warnings.warn(
                f"no rows with {name}=1; falling back to tau={WARM_TAU}", RuntimeWarning, stacklevel=2
            )
            out.append(WARM_TAU)
            continue
        tau = np.sum(~this & other) / denom
        out.append(float(min(max(tau, 0.0), 1.0 - 1e-6)))
    return out[0], out[1]


def _warm_start(data: Dataset, config: FitConfig, layout: ParamLayout) -> np.ndarray:
    naive_layout = ParamLayout(
        d=data.d,
        n_tau=1,
        fixed_tau=(0.0,),
        link_propensity=config.link_propensity,
        link_outcome=config.link_outcome,
    )
    naive_data = Dataset(data.x, data.y, data.a_obs, covariate_names=data.covariate_names)
    naive = _optimize(np.zeros(naive_layout.size), naive_data, naive_layout, config).u
    if layout.fixed_tau is not None:
        return naive
    if config.mode is Mode.DUAL:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            taus = np.clip(moment_init(data), _MOMENT_TAU_FLOOR, 1.0 - 1e-6)
    else:
        taus = np.full(layout.n_tau, WARM_TAU)
    return np.concatenate([special.logit(taus), naive])


def restart_rng(seed: int, restart_index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(restart_index)])


def initialize(
    data: Dataset,
    config: FitConfig,
    restart_index: int,
    rng: Optional[np.random.Generator] = None,
    warm: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Starting point for one restart.

    Restart 0 is the deterministic warm start: propensity and outcome from a
    fit that treats a_obs as the true exposure, tau at 0.1 (or the moment
    estimate in dual mode). Later restarts add N(0, 0.5^2) noise to it.
    """
    data = _model_data(data, config)
    layout = layout_for(data, config)
    if warm is None:
        warm = _warm_start(data, config, layout)
    if restart_index == 0:
        return warm.copy()
    if rng is None:
        rng = restart_rng(config.seed, restart_index)
    return warm + 0.5 * rng.standard_normal(warm.shape)


def fit(data: Dataset, config: FitConfig) -> FitResult:
    """Maximise the marginal log-likelihood from ``config.restarts`` starting points."""
    data = _model_data(data, config)
    layout = layout_for(data, config)
    warm = _warm_start(data, config, layout)
    runs = [
        _optimize(initialize(data, config, r, warm=warm), data, layout, config)
        for r in range(config.restarts)
    ]
    lls = [r.loglik if np.isfinite(r.loglik) else -np.inf for r in runs]
    best = runs[int(np.argmax(lls))]
    best_ll = max(lls)
    agreeing = sum(1 for ll in lls if best_ll - ll <= AGREEMENT_TOL)
    grad_inf = float(np.max(np.abs(gradient(best.u, data, layout) / data.n))) if layout.size else 0.0
    params = layout.to_full(best.u)
    converged = bool(np.isfinite(best_ll) and grad_inf <= config.grad_tol)
    if not converged:
        log.warning("fit did not converge: gradient norm %.3g > %.3g", grad_inf, config.grad_tol)
    boundary = layout.fixed_tau is None and any(
        t < BOUNDARY_TOL or t > 1.0 - BOUNDARY_TOL for t in params.tau
    )
    return FitResult(
        params=params,
        log_likelihood_at_opt=float(best_ll),
        converged=converged,
        gradient_norm=grad_inf,
        n_restarts_agreeing=agreeing,
        boundary_suspect=bool(boundary),
        restart_log_likelihoods=tuple(float(v) for v in lls),
        n_iterations=best.n_iter,
        vector=best.u,
        layout=layout,
    )


def parameter_names(data: Dataset, config: FitConfig) -> list[str]:
    names = []
    if config.mode is Mode.SINGLE:
        names.append("tau")
    elif config.mode is Mode.DUAL:
        names += ["tau1", "tau2"]
    names.append("phi_0")
    names += [f"phi_{c}" for c in data.covariate_names]
    names.append("theta_0")
    names += [f"theta_{c}" for c in data.covariate_names]
    names.append("theta_a")
    return names


def estimands(result: FitResult, data: Dataset, config: FitConfig) -> dict[str, float]:
    """Named parameters on the natural scale plus the risk difference and odds ratio."""
    p = result.params
    values = []
    if config.mode is not Mode.KNOWN_TAU:
        values += list(p.tau)
    values += [p.propensity.intercept, *p.propensity.weights]
    values += [p.outcome.intercept, *p.outcome.weights, p.outcome.exposure_coef]
    out = dict(zip(parameter_names(data, config), (float(v) for v in values)))
    out["rd"] = risk_difference(p.outcome, data)
    if p.outcome.link is Link.LOGIT:
        out["or"] = adjusted_odds_ratio(p.outcome)
    return out


@dataclass(frozen=True)
class BootstrapResult:
    point: FitResult
    replicates: int
    ci_level: float
    intervals: dict[str, tuple[float, float]]
    n_failed: int
    draws: dict[str, np.ndarray] = field(repr=False)


def percentile_interval(values, ci_level: float) -> tuple[float, float]:
    """Nearest-rank percentile interval; with 200 draws at 0.95 this is (5th, 196th)."""
    v = np.sort(np.asarray(values, dtype=float))
    b = v.size
    if b == 0:
        raise ValueError("no bootstrap draws")
    lower_rank = max(1, math.ceil(round(b * (1.0 - ci_level) / 2.0, 9)))
    upper_rank = b + 1 - lower_rank
    if upper_rank < lower_rank:
        lower_rank = upper_rank = (b + 1) // 2
    return float(v[lower_rank - 1]), float(v[upper_rank - 1])


def _bootstrap_task(args):
    data, config, seed, index = args
    rng = np.random.default_rng([int(seed), int(index)])
    sample = data.take(rng.integers(0, data.n, size=data.n))
    try:
        result = fit(sample, config)
    except (ValueError, FloatingPointError) as exc:
        log.debug("bootstrap replicate %d failed: %s", index, exc)
        return None
    if not result.converged:
        return None
    return estimands(result, sample, config)


def bootstrap(
    data: Dataset,
    config: FitConfig,
    replicates: int = 200,
    ci_level: float = 0.95,
    seed: Optional[int] = None,
    restarts: int = 2,
) -> BootstrapResult:
    """Case-resampling percentile bootstrap around a full-restart point fit.

    Replicate ``i`` draws rows from a generator seeded with ``(seed, i)``.
    Replicates that fail to converge are dropped; more than half failing is an error.
    """
    if replicates < 10:
        raise ValueError("bootstrap needs at least 10 replicates")
    if not 0.0 < ci_level < 1.0:
        raise ValueError("ci_level must lie in (0, 1)")
    seed = config.seed if seed is None else seed
    point = fit(data, config)
    boot_config = dataclasses.replace(config, restarts=min(config.restarts, restarts))
    tasks = [(data, boot_config, seed, i) for i in range(replicates)]
    draws_list = [d for d in map_ordered(_bootstrap_task, tasks) if d is not None]
    n_failed = replicates - len(draws_list)
    if n_failed > replicates / 2:
        raise RuntimeError(
            f"{n_failed} of {replicates} bootstrap replicates failed; intervals would be unreliable"
        )
    if n_failed:
        log.warning("%d of %d bootstrap replicates dropped", n_failed, replicates)
    keys = list(draws_list[0])
    draws = {k: np.array([d[k] for d in draws_list]) for k in keys}
    intervals = {k: percentile_interval(v, ci_level) for k, v in draws.items()}
    return BootstrapResult(point, replicates, ci_level, intervals, n_failed, draws)
