"""Benchmark prices from Feynman-Kac representations.

Expectations over the analytic transition law are computed in the law's
standard Gaussian coordinate ``z``: Gauss-Hermite for smooth payoffs, and
Gauss-Legendre panels split at the kinks (on ``|z| <= 16``) for
call/put/piecewise payoffs. The number of nodes is doubled until two
successive prices agree to 1e-10 relative.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import roots_hermitenorm, roots_legendre

from ._normal import norm_ppf
from .errors import (
    ConfigurationError,
    DomainError,
    IntegrabilityError,
    UnsupportedRepresentationError,
)
from .model import DiffusionModel, Monotonicity, Payoff, PayoffKind
from .principles import Distortion, PrincipleKind, PrincipleSpec

RTOL = 1e-10
ATOL = 1e-14
_MIN_NODES = 16
_MAX_NODES = 1024
_Z_CUTOFF = 16.0
SMALL_ALPHA = 1e-6


@lru_cache(maxsize=None)
def _hermite(n: int):
    z, w = roots_hermitenorm(n)
    return z, w / math.sqrt(2.0 * math.pi)


@lru_cache(maxsize=None)
def _legendre(n: int):
    return roots_legendre(n)


def _rule(n: int, kinks_z: tuple[float, ...]):
    if not kinks_z:
        return _hermite(n)
    edges = [-_Z_CUTOFF, *sorted(k for k in kinks_z if -_Z_CUTOFF < k < _Z_CUTOFF), _Z_CUTOFF]
    u, wu = _legendre(n)
    zs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        z = lo + half * (u + 1.0)
        zs.append(z)
        ws.append(half * wu * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi))
    return np.concatenate(zs), np.concatenate(ws)


def _law(model: DiffusionModel):
    if model.transition is None:
        raise UnsupportedRepresentationError(
            "model has no analytic transition law; use the lattice or PDE engine")
    return model.transition


def _state_at(law, mean, sd, z):
    core = mean[:, None] + sd[:, None] * z[None, :]
    return np.exp(core) if law.family == "lognormal" else core


def _kinks_in_z(law, payoff: Payoff, mean: np.ndarray, sd: np.ndarray) -> list[tuple[float, ...]]:
    kinks = payoff.kinks
    out = []
    for m, s in zip(mean, sd):
        zs = []
        for k in kinks:
            if law.family == "lognormal":
                if k <= 0:
                    continue
                k = math.log(k)
            if s > 0:
                zs.append((k - m) / s)
        out.append(tuple(zs))
    return out


def expectation(
    model: DiffusionModel,
    payoff: Payoff,
    transform: Callable[[np.ndarray], np.ndarray],
    t: float,
    y,
    T: float,
    finish: Callable[[np.ndarray, np.ndarray], np.ndarray] = lambda e, idx: e,
) -> np.ndarray:
    """Prices built from ``E[transform(f(y_T)) | y_t = y]`` for each ``y``, adaptively refined.

    ``finish(e, idx)`` maps the raw expectations at nodes ``y[idx]`` to
    prices; convergence is judged on the prices.
    """
    law = _law(model)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    tau = T - t
    if tau < 0:
        raise ConfigurationError("valuation time after maturity", "t")
    if tau == 0:
        return finish(transform(payoff(y)), np.arange(y.size))
    mean, sd = law.moments(y, tau)
    kinks = _kinks_in_z(law, payoff, mean, sd)
    out = np.empty_like(y)
    # group nodes sharing a kink layout so each group uses one rule
    groups: dict[tuple[float, ...], list[int]] = {}
    for j, kz in enumerate(kinks):
        groups.setdefault(kz if payoff.kinks else (), []).append(j)
    for kz, idx in groups.items():
        idx = np.asarray(idx)
        prev = None
        n = _MIN_NODES
        while True:
            z, w = _rule(n, kz)
            states = _state_at(law, mean[idx], sd[idx], z)
            with np.errstate(over="ignore"):
                vals = transform(payoff(states))
            e = vals @ w
            price = finish(e, idx)
            if not np.all(np.isfinite(price)):
                raise IntegrabilityError("expectation is not finite")
            if prev is not None and np.all(np.abs(price - prev) <= RTOL * np.abs(price) + ATOL):
                break
            if n >= _MAX_NODES:
                break
            prev = price
            n *= 2
        out[idx] = price
    return out


def _scalar_or_array(y, values):
    return float(values[0]) if np.ndim(y) == 0 else values


def _check_exponential_integrability(model: DiffusionModel, payoff: Payoff, a: float) -> None:
    """Reject ``E[exp(a f)]``, ``a > 0``, that diverges, judged from the payoff's growth class."""
    if a <= 0:
        return
    up, down = payoff.growth()
    if model.transition.family == "lognormal":
        if up > 0:
            raise IntegrabilityError(
                "exp(risk_aversion * payoff) has no finite mean under a lognormal law "
                "for a payoff unbounded above")
    elif up > 1 or down > 1:
        raise IntegrabilityError(
            "exp(risk_aversion * payoff) has no finite mean under a Gaussian law "
            "for a payoff with super-linear growth")


def exp_indifference_price(
    model: DiffusionModel,
    payoff: Payoff,
    t: float,
    y,
    T: float,
    alpha: float | None = None,
    *,
    gamma: float | None = None,
    X0: float | None = None,
    r: float = 0.0,
):
    """Exponential indifference price.

    Flat form ``(1/alpha) ln E[e^{alpha f}]`` when ``alpha`` is given;
    benchmark form ``(X0 e^{rt}/gamma) ln E[exp(gamma f / (X0 e^{rT}))]``
    when ``gamma`` and ``X0`` are given. Below ``alpha = 1e-6`` the
    two-cumulant expansion ``E[f] + alpha/2 Var[f]`` is used.
    """
    if alpha is not None:
        if gamma is not None:
            raise ConfigurationError("give either alpha or (gamma, X0), not both", "alpha")
        if not alpha >= 0:
            raise ConfigurationError("must be >= 0", "alpha")
        a, scale = float(alpha), 1.0 / float(alpha) if alpha else math.inf
    else:
        if gamma is None or X0 is None:
            raise ConfigurationError("need alpha, or gamma with X0", "alpha")
        if not gamma >= 0 or not X0 > 0:
            raise ConfigurationError("need gamma >= 0 and X0 > 0", "gamma")
        a = gamma / (X0 * math.exp(r * T))
        scale = X0 * math.exp(r * t) / gamma if gamma else math.inf
    _law(model)
    _check_exponential_integrability(model, payoff, a)

    if a < SMALL_ALPHA:
        m1 = expectation(model, payoff, lambda v: v, t, y, T)
        m2 = expectation(model, payoff, lambda v: v * v, t, y, T)
        forward = m1 + 0.5 * a * np.maximum(m2 - m1 * m1, 0.0)
        ratio = math.exp(r * (t - T)) if alpha is None else 1.0
        return _scalar_or_array(y, ratio * forward)

    prices = expectation(
        model, payoff, lambda v: np.exp(a * v), t, y, T,
        finish=lambda e, idx: scale * np.log(e),
    )
    return _scalar_or_array(y, prices)


def power_price(model: DiffusionModel, payoff: Payoff, gamma: float, r: float, t: float, y, T: float):
    """``e^{-r(T-t)} (E[f^{1+gamma}])^{1/(1+gamma)}`` for a positive payoff."""
    if not payoff.positive:
        raise DomainError("power pricing needs a payoff declared positive")
    if not gamma >= 0:
        raise ConfigurationError("must be >= 0", "gamma")
    e = 1.0 + gamma
    disc = math.exp(-r * (T - t))

    def transform(v):
        if np.any(v <= 0):
            raise DomainError("payoff takes nonpositive values under the transition law")
        return np.power(v, e)

    prices = expectation(model, payoff, transform, t, y, T, finish=lambda m, idx: disc * np.power(m, 1.0 / e))
    return _scalar_or_array(y, prices)


def _monotone_sign(payoff: Payoff) -> float:
    if payoff.monotonicity is Monotonicity.INCREASING or payoff.kind is PayoffKind.CONSTANT:
        return 1.0
    if payoff.monotonicity is Monotonicity.DECREASING:
        return -1.0
    raise UnsupportedRepresentationError(
        "non-monotone payoff has no drift-adjusted representation; use the PDE solver")


def stddev_price(model: DiffusionModel, payoff: Payoff, beta: float, r: float, t: float, y, T: float):
    """Discounted expectation under the drift ``a + beta b`` (increasing payoff)
    or ``a - beta b`` (decreasing payoff)."""
    sign = _monotone_sign(payoff)
    if not beta >= 0:
        raise ConfigurationError("must be >= 0", "beta")
    adjusted = model.shifted(sign * beta)
    disc = math.exp(-r * (T - t))
    prices = expectation(adjusted, payoff, lambda v: v, t, y, T, finish=lambda m, idx: disc * m)
    return _scalar_or_array(y, prices)


def coc_price(model, payoff, delta: float, q: float, r: float, t: float, y, T: float):
    """Std-dev price with ``beta = delta * Phi^{-1}(q)``."""
    if not 0.5 < q < 1.0:
        raise ConfigurationError("confidence level must lie in (0.5, 1)", "q")
    return stddev_price(model, payoff, delta * norm_ppf(q), r, t, y, T)


def mean_value_price(model, payoff, v: Distortion, r: float, t: float, y, T: float):
    """``e^{rt} v^{-1}(E[v(f / e^{rT})])``."""
    fwd = math.exp(r * T)
    law = _law(model)
    ys = np.atleast_1d(np.asarray(y, dtype=float))

    def transform(vals):
        scaled = vals / fwd
        if np.any(scaled < v.lo) or np.any(scaled > v.hi):
            raise DomainError(f"forward payoff leaves the domain of distortion {v.name}")
        return v.value(scaled)

    def finish(e, idx):
        if not np.all(np.isfinite(e)):
            raise DomainError(f"distorted expectation outside the range of {v.name}")
        lo, hi = _payoff_range(law, payoff, ys[idx], t, T)
        return math.exp(r * t) * v.inverse(e, lo / fwd, hi / fwd)

    prices = expectation(model, payoff, transform, t, ys, T, finish=finish)
    return _scalar_or_array(y, prices)


def _payoff_range(law, payoff, y, t, T):
    """Bracket for the certainty equivalent: payoff extremes over ``|z| <= 16``."""
    tau = T - t
    if tau == 0:
        f = payoff(y)
        return f, f
    mean, sd = law.moments(y, tau)
    z = np.linspace(-_Z_CUTOFF, _Z_CUTOFF, 513)
    vals = payoff(_state_at(law, mean, sd, z))
    return vals.min(axis=1), vals.max(axis=1)


def closed_form_price(model, payoff, principle: PrincipleSpec, t: float, y, T: float):
    """Dispatch ``principle`` to its closed form."""
    k = principle.kind
    if k is PrincipleKind.VARIANCE:
        return exp_indifference_price(model, payoff, t, y, T, principle.alpha)
    if k is PrincipleKind.VARIANCE_DISCOUNTED:
        return exp_indifference_price(model, payoff, t, y, T, gamma=principle.gamma,
                                      X0=principle.X0, r=principle.r)
    if k is PrincipleKind.CURRENT_PRICE_BENCHMARK:
        return power_price(model, payoff, principle.gamma, principle.r, t, y, T)
    if k is PrincipleKind.MEAN_VALUE:
        return mean_value_price(model, payoff, principle.v, principle.r, t, y, T)
    if k is PrincipleKind.STDDEV:
        return stddev_price(model, payoff, principle.beta, principle.r, t, y, T)
    return coc_price(model, payoff, principle.delta, principle.q, principle.r, t, y, T)
