"""Bernoulli link functions: logit, probit and complementary log-log."""

from __future__ import annotations

import enum

import numpy as np
from scipy import special

PROB_EPS = 1e-12

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Link(str, enum.Enum):
    LOGIT = "logit"
    PROBIT = "probit"
    CLOGLOG = "cloglog"

    def inverse(self, eta):
        return inverse_link(self, eta)

    def inverse_derivative(self, eta):
        return inverse_link_derivative(self, eta)

    def link(self, p):
        return link(self, p)


def _check_finite(eta):
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise ValueError("linear predictor must be finite")
    return eta


def _raw_inverse(kind: Link, eta: np.ndarray) -> np.ndarray:
    if kind is Link.LOGIT:
        return special.expit(eta)
    if kind is Link.PROBIT:
        return 0.5 * special.erfc(-eta / _SQRT2)
    if kind is Link.CLOGLOG:
        return -np.expm1(-np.exp(eta))
    raise ValueError(f"unknown link {kind!r}")


def inverse_link(kind: Link, eta):
    """Map a linear predictor to a probability in [1e-12, 1 - 1e-12].

    The clamp is a numerical guard so that log-probabilities stay finite.
    """
    kind = Link(kind)
    eta = _check_finite(eta)
    p = np.clip(_raw_inverse(kind, eta), PROB_EPS, 1.0 - PROB_EPS)
    return p if p.ndim else float(p)


def inverse_link_derivative(kind: Link, eta):
    """d/d(eta) of the unclamped inverse link."""
    kind = Link(kind)
    eta = _check_finite(eta)
    if kind is Link.LOGIT:
        p = special.expit(eta)
        out = p * (1.0 - p)
    elif kind is Link.PROBIT:
        out = _INV_SQRT_2PI * np.exp(-0.5 * eta * eta)
    elif kind is Link.CLOGLOG:
        out = np.exp(eta - np.exp(eta))
    else:
        raise ValueError(f"unknown link {kind!r}")
    return out if out.ndim else float(out)


def _raw_complement(kind: Link, eta: np.ndarray) -> np.ndarray:
    if kind is Link.LOGIT:
        return special.expit(-eta)
    if kind is Link.PROBIT:
        return 0.5 * special.erfc(eta / _SQRT2)
    return np.exp(-np.exp(eta))


def inverse_and_derivative(
    kind: Link, eta: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Clamped p, clamped 1 - p and dp/d(eta), the derivative zeroed where a clamp is active.

    The complement is evaluated directly so that it keeps full relative
    precision when p is close to 1.
    """
    kind = Link(kind)
    raw = _raw_inverse(kind, eta)
    raw_c = _raw_complement(kind, eta)
    p = np.clip(raw, PROB_EPS, 1.0 - PROB_EPS)
    q = np.clip(raw_c, PROB_EPS, 1.0 - PROB_EPS)
    dp = np.asarray(inverse_link_derivative(kind, eta), dtype=float)
    dp = np.where((p == raw) & (q == raw_c), dp, 0.0)
    return p, q, dp


def link(kind: Link, p):
    """Forward link: probability to linear predictor."""
    kind = Link(kind)
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    if kind is Link.LOGIT:
        out = special.logit(p)
    elif kind is Link.PROBIT:
        out = special.ndtri(p)
    else:
        out = np.log(-np.log1p(-p))
    return out if out.ndim else float(out)
