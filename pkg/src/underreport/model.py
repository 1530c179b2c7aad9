"""Data and parameter types, the underreporting error model and the per-row joint probability."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .links import Link, inverse_link


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def _binary(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must contain only 0/1 values")
    return arr.astype(np.int8)


@dataclass(frozen=True)
class Dataset:
    """Covariates (no intercept column), outcome and one or two error-prone exposures."""

    x: np.ndarray
    y: np.ndarray
    a_obs: np.ndarray
    a_obs2: Optional[np.ndarray] = None
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = _binary(self.y, "y")
        n = y.shape[0]
        if n < 1:
            raise ValueError("dataset must contain at least one row")
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1 and x.size == 0:
            x = x.reshape(n, 0)
        if x.ndim != 2 or x.shape[0] != n:
            raise ValueError(f"x must have shape ({n}, d), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("covariates must be finite")
        a_obs = _binary(self.a_obs, "a_obs")
        if a_obs.shape[0] != n:
            raise ValueError("a_obs length does not match y")
        a_obs2 = None
        if self.a_obs2 is not None:
            a_obs2 = _binary(self.a_obs2, "a_obs2")
            if a_obs2.shape[0] != n:
                raise ValueError("a_obs2 length does not match y")
            a_obs2 = _frozen(a_obs2)
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise ValueError("covariate_names length does not match x")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "a_obs", _frozen(a_obs))
        object.__setattr__(self, "a_obs2", a_obs2)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def dual(self) -> bool:
        return self.a_obs2 is not None

    def take(self, idx) -> "Dataset":
        """Row subset (used for resampling and permutation)."""
        return Dataset(
            x=self.x[idx],
            y=self.y[idx],
            a_obs=self.a_obs[idx],
            a_obs2=None if self.a_obs2 is None else self.a_obs2[idx],
            covariate_names=self.covariate_names,
        )


def _vector(values, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be a finite vector")
    return _frozen(arr)


@dataclass(frozen=True)
class PropensityParams:
    intercept: float
    weights: np.ndarray
    link: Link = Link.LOGIT

    def __post_init__(self):
        if not np.isfinite(self.intercept):
            raise ValueError("propensity intercept must be finite")
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(self, "weights", _vector(self.weights, "propensity weights"))
        object.__setattr__(self, "link", Link(self.link))

    def linear_predictor(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.weights.shape[0]:
            raise ValueError(
                f"covariate dimension {x.shape[-1]} != propensity dimension {self.weights.shape[0]}"
            )
        return self.intercept + x @ self.weights


@dataclass(frozen=True)
class OutcomeParams:
    intercept: float
    weights: np.ndarray
    exposure_coef: float
    link: Link = Link.LOGIT

    def __post_init__(self):
        if not (np.isfinite(self.intercept) and np.isfinite(self.exposure_coef)):
            raise ValueError("outcome intercept and exposure coefficient must be finite")
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(self, "exposure_coef", float(self.exposure_coef))
        object.__setattr__(self, "weights", _vector(self.weights, "outcome weights"))
        object.__setattr__(self, "link", Link(self.link))

    def linear_predictor(self, x: np.ndarray, a) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.weights.shape[0]:
            raise ValueError(
                f"covariate dimension {x.shape[-1]} != outcome dimension {self.weights.shape[0]}"
            )
        return self.intercept + x @ self.weights + self.exposure_coef * np.asarray(a, dtype=float)


def check_tau(tau: float) -> float:
    tau = float(tau)
    if not (0.0 <= tau < 1.0):
        raise ValueError(f"underreporting rate must lie in [0, 1), got {tau}")
    return tau


@dataclass(frozen=True)
class FullParams:
    """The triple (tau, propensity, outcome); ``tau`` has one entry, or two in dual mode."""

    tau: tuple[float, ...]
    propensity: PropensityParams
    outcome: OutcomeParams

    def __post_init__(self):
        tau = tuple(check_tau(t) for t in np.atleast_1d(self.tau))
        if len(tau) not in (1, 2):
            raise ValueError("tau must have one or two components")
        object.__setattr__(self, "tau", tau)
        if self.propensity.weights.shape != self.outcome.weights.shape:
            raise ValueError("propensity and outcome covariate dimensions differ")

    @property
    def d(self) -> int:
        return self.propensity.weights.shape[0]

    @property
    def dual(self) -> bool:
        return len(self.tau) == 2


def error_prob(tau: float, a_obs: int, a: int) -> float:
    """Entry p(a_obs | a) of the strict-underreporting error matrix."""
    tau = check_tau(tau)
    if a_obs not in (0, 1) or a not in (0, 1):
        raise ValueError("exposures must be 0 or 1")
    if a == 0:
        return 1.0 if a_obs == 0 else 0.0
    return tau if a_obs == 0 else 1.0 - tau


def error_matrix(tau: float) -> np.ndarray:
    """2x2 matrix M[a_obs, a]; columns sum to one."""
    return np.array([[error_prob(tau, r, c) for c in (0, 1)] for r in (0, 1)])


def propensity_prob(phi: PropensityParams, x) -> float:
    """p(A=1 | x)."""
    return inverse_link(phi.link, phi.linear_predictor(x))


def outcome_prob(theta: OutcomeParams, a: int, x, y: int):
    p1 = inverse_link(theta.link, theta.linear_predictor(x, a))
    return p1 if y == 1 else 1.0 - p1


def joint_conditional(params: FullParams, x, a_obs, y: int, a_obs2=None) -> float:
    """p(y, a_obs[, a_obs2] | x) with the true exposure summed out."""
    if (a_obs2 is None) == params.dual:
        raise ValueError("second exposure must be supplied exactly when tau has two components")
    pi = propensity_prob(params.propensity, x)
    total = 0.0
    for a in (0, 1):
        err = error_prob(params.tau[0], a_obs, a)
        if a_obs2 is not None:
            err *= error_prob(params.tau[1], a_obs2, a)
        prior = pi if a == 1 else 1.0 - pi
        total += err * prior * outcome_prob(params.outcome, a, x, y)
    return float(total)
