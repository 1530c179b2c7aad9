"""Marginal log-likelihood of the underreporting model and its analytic gradient.

Parameters are handled as a flat unconstrained vector laid out as
``[eta_tau..., phi_0, phi_w..., theta_0, theta_w..., theta_a]`` where each
free underreporting rate is ``tau = expit(eta_tau)``. When the rates are held
fixed they are absent from the vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .links import Link, inverse_and_derivative
from .model import Dataset, FullParams, OutcomeParams, PropensityParams, check_tau

# Smallest tau mapped to a finite eta when packing a free rate.
_TAU_FLOOR = 1e-12


@dataclass(frozen=True)
class ParamLayout:
    """Shape of the unconstrained parameter vector.

    ``n_tau`` is 1 for a single observed exposure and 2 for dual observations.
    ``fixed_tau`` holds the rates when they are known rather than estimated.
    """

    d: int
    n_tau: int = 1
    fixed_tau: Optional[tuple[float, ...]] = None
    link_propensity: Link = Link.LOGIT
    link_outcome: Link = Link.LOGIT

    def __post_init__(self):
        if self.n_tau not in (1, 2):
            raise ValueError("n_tau must be 1 or 2")
        if self.fixed_tau is not None:
            fixed = tuple(check_tau(t) for t in np.atleast_1d(self.fixed_tau))
            if len(fixed) != self.n_tau:
                raise ValueError("fixed_tau length must equal n_tau")
            object.__setattr__(self, "fixed_tau", fixed)
        object.__setattr__(self, "link_propensity", Link(self.link_propensity))
        object.__setattr__(self, "link_outcome", Link(self.link_outcome))

    @property
    def n_free_tau(self) -> int:
        return 0 if self.fixed_tau is not None else self.n_tau

    @property
    def size(self) -> int:
        return self.n_free_tau + (self.d + 1) + (self.d + 2)

    def split(self, u: np.ndarray):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.size,):
            raise ValueError(f"parameter vector must have length {self.size}, got {u.shape}")
        k = self.n_free_tau
        d = self.d
        eta_tau = u[:k]
        phi = u[k : k + d + 1]
        theta = u[k + d + 1 :]
        return eta_tau, phi, theta

    def taus(self, eta_tau: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(tau, 1 - tau) per component, computed without cancellation."""
        if self.fixed_tau is not None:
            tau = np.asarray(self.fixed_tau, dtype=float)
            return tau, 1.0 - tau
        return special.expit(eta_tau), special.expit(-eta_tau)

    def to_full(self, u: np.ndarray) -> FullParams:
        eta_tau, phi, theta = self.split(u)
        tau, _ = self.taus(eta_tau)
        return FullParams(
            tau=tuple(float(t) for t in tau),
            propensity=PropensityParams(phi[0], phi[1:], self.link_propensity),
            outcome=OutcomeParams(theta[0], theta[1:-1], theta[-1], self.link_outcome),
        )

    def from_full(self, params: FullParams) -> np.ndarray:
        if params.d != self.d or len(params.tau) != self.n_tau:
            raise ValueError("parameters do not match layout")
        parts = []
        if self.fixed_tau is None:
            tau = np.clip(np.asarray(params.tau, dtype=float), _TAU_FLOOR, None)
            parts.append(special.logit(tau))
        phi = params.propensity
        theta = params.outcome
        parts.append([phi.intercept, *phi.weights])
        parts.append([theta.intercept, *theta.weights, theta.exposure_coef])
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def _check_data(data: Dataset, layout: ParamLayout) -> None:
    if data.d != layout.d:
        raise ValueError(f"dataset has {data.d} covariates, layout expects {layout.d}")
    if data.dual != (layout.n_tau == 2):
        raise ValueError("dual-observation data requires a two-component tau and vice versa")


def _evaluate(u, data: Dataset, layout: ParamLayout, with_grad: bool):
    _check_data(data, layout)
    eta_tau, phi, theta = layout.split(u)
    tau, one_minus_tau = layout.taus(eta_tau)
    x = data.x
    y = data.y.astype(float)
    obs = [data.a_obs] if layout.n_tau == 1 else [data.a_obs, data.a_obs2]

    pi, not_pi, dpi = inverse_and_derivative(layout.link_propensity, phi[0] + x @ phi[1:])
    base = theta[0] + x @ theta[1:-1]
    p1, c1, dp1 = inverse_and_derivative(layout.link_outcome, base + theta[-1])
    p0, c0, dp0 = inverse_and_derivative(layout.link_outcome, base)
    sign = 2.0 * y - 1.0
    is_one = y == 1
    q1 = np.where(is_one, p1, c1)
    q0 = np.where(is_one, p0, c0)

    # p(a_obs_k | a=1) per component; p(all a_obs | a=0) is 1 iff every report is 0.
    factors = [np.where(a == 1, one_minus_tau[k], tau[k]) for k, a in enumerate(obs)]
    e1 = factors[0] if len(factors) == 1 else factors[0] * factors[1]
    e0 = np.ones_like(y)
    for a in obs:
        e0 = e0 * (a == 0)

    t1 = e1 * pi * q1
    t0 = e0 * not_pi * q0
    joint = t1 + t0
    if not with_grad:
        return joint, None

    w = 1.0 / joint
    grads = []
    if layout.fixed_tau is None:
        for k, a in enumerate(obs):
            other = np.ones_like(y) if len(factors) == 1 else factors[1 - k]
            dj_dtau = pi * q1 * other * np.where(a == 1, -1.0, 1.0)
            grads.append(np.sum(w * dj_dtau) * tau[k] * one_minus_tau[k])
    r_phi = w * (e1 * q1 - e0 * q0) * dpi
    r1 = w * e1 * pi * sign * dp1
    r0 = w * e0 * not_pi * sign * dp0
    r_base = r1 + r0
    grad = np.concatenate(
        [
            np.asarray(grads, dtype=float),
            [r_phi.sum()],
            x.T @ r_phi,
            [r_base.sum()],
            x.T @ r_base,
            [r1.sum()],
        ]
    )
    return joint, grad


def row_log_likelihood(u, data: Dataset, layout: ParamLayout) -> np.ndarray:
    """Per-row contributions log p(y_i, a_obs_i | x_i)."""
    joint, _ = _evaluate(u, data, layout, with_grad=False)
    return np.log(joint)


def log_likelihood(u, data: Dataset, layout: ParamLayout) -> float:
    """Sum over rows of log sum_a p(a_obs|a) p(a|x) p(y|a,x)."""
    return float(np.sum(row_log_likelihood(u, data, layout)))


def gradient(u, data: Dataset, layout: ParamLayout) -> np.ndarray:
    """Analytic gradient of :func:`log_likelihood` with respect to ``u``."""
    _, grad = _evaluate(u, data, layout, with_grad=True)
    return grad


def value_and_gradient(u, data: Dataset, layout: ParamLayout) -> tuple[float, np.ndarray]:
    joint, grad = _evaluate(u, data, layout, with_grad=True)
    return float(np.sum(np.log(joint))), grad


def fd_gradient_oracle(u, data: Dataset, layout: ParamLayout, step: float = 1e-6) -> np.ndarray:
    """Central finite-difference approximation of the gradient."""
    if not step > 0:
        raise ValueError("step must be positive")
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    for j in range(u.size):
        hi = u.copy()
        lo = u.copy()
        hi[j] += step
        lo[j] -= step
        out[j] = (log_likelihood(hi, data, layout) - log_likelihood(lo, data, layout)) / (2 * step)
    return out
