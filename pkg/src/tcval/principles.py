"""One-step premium principles on finite discrete distributions.

Each public ``*_step`` function values a single :class:`DiscreteDistribution`.
The lattice calls the same kernels on a whole row at once: ``values`` is an
``(n_nodes, n_children)`` array sharing one probability vector, and every
reduction runs elementwise over nodes in a fixed child order so the result
does not depend on how the nodes are chunked.

Risk parameters are per unit time. The ``sqrt(dt)`` scaling of ``beta`` and of
the cost-of-capital charge is applied here, never by callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable

import numpy as np

from .errors import ConfigurationError, DomainError

PROB_TOL = 1e-12
# cumulative mass within this of q counts as equal to q (quantile tie-break)
QUANTILE_TIE_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteDistribution:
    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        p = np.array(self.probs, dtype=float).reshape(-1)
        if v.size == 0 or v.shape != p.shape:
            raise ConfigurationError("need matching, non-empty values and probabilities", "outcomes")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("outcome values must be finite", "values")
        if np.any(p <= 0) or abs(p.sum() - 1.0) > PROB_TOL:
            raise ConfigurationError("probabilities must be > 0 and sum to 1", "probs")
        v.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]]) -> "DiscreteDistribution":
        pairs = list(pairs)
        return cls([v for v, _ in pairs], [p for _, p in pairs])

    def mean(self) -> float:
        return float(_mean(self.values[None, :], self.probs)[0])

    def variance(self) -> float:
        return float(_variance(self.values[None, :], self.probs)[0])

    def std(self) -> float:
        return math.sqrt(self.variance())


def _mean(values: np.ndarray, probs: np.ndarray) -> np.ndarray:
    out = probs[0] * values[:, 0]
    for k in range(1, probs.size):
        out = out + probs[k] * values[:, k]
    return out


def _variance(values: np.ndarray, probs: np.ndarray, mean: np.ndarray | None = None) -> np.ndarray:
    if mean is None:
        mean = _mean(values, probs)
    d = values[:, 0] - mean
    out = probs[0] * d * d
    for k in range(1, probs.size):
        d = values[:, k] - mean
        out = out + probs[k] * d * d
    return out


def _upper_quantile(centered: np.ndarray, probs: np.ndarray, q: float) -> np.ndarray:
    order = np.argsort(centered, axis=1, kind="stable")
    xs = np.take_along_axis(centered, order, axis=1)
    cum = np.cumsum(probs[order], axis=1)
    idx = np.argmax(cum > q + QUANTILE_TIE_TOL, axis=1)
    # no cell exceeds q only through rounding of a total mass of 1
    idx = np.where(np.any(cum > q + QUANTILE_TIE_TOL, axis=1), idx, xs.shape[1] - 1)
    return xs[np.arange(xs.shape[0]), idx]


# ---------------------------------------------------------------------------
# Mean value distortions


@dataclass(frozen=True)
class Distortion:
    """Convex increasing function ``v`` with first and second derivatives.

    ``lo``/``hi`` bound the domain (inclusive). All callables must accept numpy
    arrays.
    """

    value: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    lo: float = -math.inf
    hi: float = math.inf
    name: str = "custom"

    def local_risk_aversion(self, x):
        return self.d2(x) / self.d1(x)

    def check(self, n: int = 201) -> None:
        """Sample the domain and reject ``v' <= 0`` or ``v'' < 0``."""
        lo = self.lo if math.isfinite(self.lo) else -10.0
        hi = self.hi if math.isfinite(self.hi) else 10.0
        if self.lo == 0.0 and not math.isfinite(self.hi):
            xs = np.geomspace(1e-3, 1e3, n)
        else:
            lo, hi = max(lo, self.lo), min(hi, self.hi)
            xs = np.linspace(lo, hi, n)[1:-1]
        with np.errstate(over="ignore"):
            d1, d2 = self.d1(xs), self.d2(xs)
        ok = np.isfinite(d1)
        if np.any(d1[ok] <= 0):
            raise ConfigurationError(f"distortion {self.name} is not strictly increasing", "v")
        if np.any(d2[np.isfinite(d2)] < 0):
            raise ConfigurationError(f"distortion {self.name} is not convex", "v")

    def inverse(self, target: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        return invert_increasing(self.value, self.d1, target, lo, hi)


def exponential_distortion(alpha: float) -> Distortion:
    """``v(x) = exp(alpha x)``: constant local risk aversion ``alpha``."""
    if not alpha > 0:
        raise ConfigurationError("exponential distortion needs alpha > 0", "alpha")
    a = float(alpha)
    return Distortion(
        lambda x: np.exp(a * np.asarray(x, dtype=float)),
        lambda x: a * np.exp(a * np.asarray(x, dtype=float)),
        lambda x: a * a * np.exp(a * np.asarray(x, dtype=float)),
        name=f"exp({a})",
    )


def power_distortion(gamma: float) -> Distortion:
    """``v(x) = x**(1 + gamma)`` on ``x >= 0``."""
    if not gamma >= 0:
        raise ConfigurationError("power distortion needs gamma >= 0", "gamma")
    e = 1.0 + float(gamma)
    return Distortion(
        lambda x: np.power(np.asarray(x, dtype=float), e),
        lambda x: e * np.power(np.asarray(x, dtype=float), e - 1.0),
        lambda x: e * (e - 1.0) * np.power(np.asarray(x, dtype=float), e - 2.0),
        lo=0.0,
        name=f"power({e})",
    )


def linear_distortion() -> Distortion:
    return Distortion(
        lambda x: np.asarray(x, dtype=float) + 0.0,
        lambda x: np.ones_like(np.asarray(x, dtype=float)),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        name="linear",
    )


def invert_increasing(v, dv, target, lo, hi, rtol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Solve ``v(x) = target`` elementwise inside ``[lo, hi]``.

    Newton started from the upper end (monotone for convex ``v``) with a
    bisection fallback whenever a step leaves the bracket.
    """
    target = np.asarray(target, dtype=float)
    lo = np.array(np.broadcast_to(lo, target.shape), dtype=float)
    hi = np.array(np.broadcast_to(hi, target.shape), dtype=float)
    x = hi.copy()
    active = hi > lo
    x[~active] = lo[~active]
    for _ in range(max_iter):
        if not active.any():
            break
        xa = x[active]
        f = v(xa) - target[active]
        slope = dv(xa)
        lo_a, hi_a = lo[active], hi[active]
        hi_a = np.where(f > 0, xa, hi_a)
        lo_a = np.where(f < 0, xa, lo_a)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_new = xa - f / slope
        bad = ~np.isfinite(x_new) | (x_new < lo_a) | (x_new > hi_a)
        x_new = np.where(bad, 0.5 * (lo_a + hi_a), x_new)
        x_new = np.where(f == 0, xa, x_new)
        lo[active], hi[active] = lo_a, hi_a
        done = (np.abs(x_new - xa) <= rtol * np.abs(x_new)) | (hi_a - lo_a <= rtol * np.abs(x_new)) | (f == 0)
        x[active] = x_new
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return x


# ---------------------------------------------------------------------------
# Principle parameters and vectorised kernels


class PrincipleKind(str, Enum):
    VARIANCE = "Variance"
    VARIANCE_DISCOUNTED = "VarianceDiscounted"
    CURRENT_PRICE_BENCHMARK = "CurrentPriceBenchmark"
    MEAN_VALUE = "MeanValue"
    STDDEV = "StdDev"
    COST_OF_CAPITAL = "CostOfCapital"


@dataclass(frozen=True)
class PrincipleSpec:
    """Which one-step valuation to iterate and its risk parameters.

    alpha : absolute risk aversion, 1/currency (Variance)
    gamma : relative risk aversion (VarianceDiscounted, CurrentPriceBenchmark)
    X0 : benchmark initial wealth (VarianceDiscounted)
    r : continuously compounded rate
    beta : std-dev loading per sqrt(unit time) (StdDev)
    delta : cost-of-capital rate per unit time, with confidence level q
    v : distortion for MeanValue
    """

    kind: PrincipleKind
    alpha: float = 0.0
    gamma: float = 0.0
    X0: float = 1.0
    r: float = 0.0
    beta: float = 0.0
    delta: float = 0.0
    q: float = 0.995
    v: Distortion | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PrincipleKind(self.kind))
        for name in ("alpha", "gamma", "beta", "delta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigurationError("must be finite and >= 0", name)
        if not (math.isfinite(self.X0) and self.X0 > 0):
            raise ConfigurationError("benchmark wealth must be > 0", "X0")
        if not math.isfinite(self.r):
            raise ConfigurationError("rate must be finite", "r")
        if not 0.5 < self.q < 1.0:
            raise ConfigurationError("confidence level must lie in (0.5, 1)", "q")
        if self.kind is PrincipleKind.MEAN_VALUE:
            if self.v is None:
                raise ConfigurationError("MeanValue needs a distortion", "v")
            self.v.check()

    def step(self, values: np.ndarray, probs: np.ndarray, t: float, dt: float) -> np.ndarray:
        """Apply the one-step valuation at time ``t`` to child prices at ``t + dt``."""
        k = self.kind
        if k is PrincipleKind.VARIANCE:
            return _variance_kernel(values, probs, self.alpha)
        if k is PrincipleKind.VARIANCE_DISCOUNTED:
            return _variance_discounted_kernel(values, probs, self.gamma, self.X0, self.r, t, dt)
        if k is PrincipleKind.CURRENT_PRICE_BENCHMARK:
            return _current_price_kernel(values, probs, self.gamma, self.r, dt)
        if k is PrincipleKind.MEAN_VALUE:
            return _mean_value_kernel(values, probs, self.v, self.r, t, dt)
        if k is PrincipleKind.STDDEV:
            return _stddev_kernel(values, probs, self.beta, self.r, dt)
        return _coc_kernel(values, probs, self.delta, self.q, self.r, dt)

    def discounted_expectation(self, values, probs, dt):
        """The loading-free value: ``e^{-r dt} E[X]`` (no discounting for Variance)."""
        rate = 0.0 if self.kind is PrincipleKind.VARIANCE else self.r
        return math.exp(-rate * dt) * _mean(values, probs)


def _check_dt(dt: float) -> None:
    if not dt > 0:
        raise ConfigurationError("time step must be > 0", "dt")


def _variance_kernel(values, probs, alpha):
    m = _mean(values, probs)
    return m + 0.5 * alpha * _variance(values, probs, m)


def _variance_discounted_kernel(values, probs, gamma, X0, r, t, dt):
    _check_dt(dt)
    m = _mean(values, probs)
    risk_aversion = gamma / (X0 * math.exp(r * (t + dt)))
    return math.exp(-r * dt) * (m + 0.5 * risk_aversion * _variance(values, probs, m))


def _current_price_kernel(values, probs, gamma, r, dt):
    _check_dt(dt)
    m = _mean(values, probs)
    if np.any(m <= 0):
        raise DomainError("current-price benchmark needs a strictly positive expected price")
    return math.exp(-r * dt) * (m + 0.5 * gamma * _variance(values, probs, m) / m)


def _mean_value_kernel(values, probs, v: Distortion, r, t, dt):
    _check_dt(dt)
    scaled = values / math.exp(r * (t + dt))
    if np.any(scaled < v.lo) or np.any(scaled > v.hi):
        raise DomainError(f"forward values leave the domain of distortion {v.name}")
    with np.errstate(over="raise"):
        try:
            target = _mean(v.value(scaled), probs)
        except FloatingPointError as exc:
            raise DomainError(f"distorted expectation overflows for {v.name}") from exc
    if not np.all(np.isfinite(target)):
        raise DomainError(f"distorted expectation outside the range of {v.name}")
    forward = v.inverse(target, scaled.min(axis=1), scaled.max(axis=1))
    return math.exp(r * t) * forward


def _stddev_kernel(values, probs, beta, r, dt):
    _check_dt(dt)
    m = _mean(values, probs)
    return math.exp(-r * dt) * (m + beta * math.sqrt(dt) * np.sqrt(_variance(values, probs, m)))


def _coc_kernel(values, probs, delta, q, r, dt):
    _check_dt(dt)
    m = _mean(values, probs)
    var_q = _upper_quantile(values - m[:, None], probs, q)
    return math.exp(-r * dt) * (m + delta * math.sqrt(dt) * var_q)


# ---------------------------------------------------------------------------
# Scalar API


def _row(dist: DiscreteDistribution) -> np.ndarray:
    return dist.values[None, :]


def variance_step(dist: DiscreteDistribution, alpha: float) -> float:
    """``E[X] + alpha/2 Var[X]``."""
    if not alpha >= 0:
        raise ConfigurationError("must be >= 0", "alpha")
    return float(_variance_kernel(_row(dist), dist.probs, alpha)[0])


def variance_discounted_step(dist, gamma, X0, r, t, dt) -> float:
    """Variance principle with risk aversion ``gamma / (X0 e^{r(t+dt)})``, discounted over ``dt``."""
    return float(_variance_discounted_kernel(_row(dist), dist.probs, gamma, X0, r, t, dt)[0])


def current_price_benchmark_step(dist, gamma, r, dt) -> float:
    return float(_current_price_kernel(_row(dist), dist.probs, gamma, r, dt)[0])


def mean_value_step(dist, v: Distortion, r, t, dt) -> float:
    """``e^{rt} v^{-1}(E[v(X / e^{r(t+dt)})])``."""
    return float(_mean_value_kernel(_row(dist), dist.probs, v, r, t, dt)[0])


def stddev_step(dist, beta, r, dt) -> float:
    return float(_stddev_kernel(_row(dist), dist.probs, beta, r, dt)[0])


def var_quantile(dist: DiscreteDistribution, q: float) -> float:
    """Upper ``q``-quantile of ``X - E[X]``: ``inf{x : P(X - E[X] <= x) > q}``.

    Cumulative mass equal to ``q`` up to 1e-12 does not exceed ``q``, so a
    quadrinomial tree's centered quantile lands on its outer branch.
    """
    if not 0.5 < q < 1.0:
        raise ConfigurationError("confidence level must lie in (0.5, 1)", "q")
    centered = _row(dist) - dist.mean()
    return float(_upper_quantile(centered, dist.probs, q)[0])


def coc_step(dist, delta, q, r, dt) -> float:
    if not 0.5 < q < 1.0:
        raise ConfigurationError("confidence level must lie in (0.5, 1)", "q")
    return float(_coc_kernel(_row(dist), dist.probs, delta, q, r, dt)[0])
