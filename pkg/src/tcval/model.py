"""Diffusion models, payoffs, grids and price surfaces.

Everything here is immutable once constructed. A model carries its drift and
diffusion as closures ``(t, y) -> value`` that accept scalars or numpy arrays,
plus an analytic transition law when one exists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError

Coefficient = Callable[[float, np.ndarray], np.ndarray]


class ModelKind(str, Enum):
    ABM = "ABM"
    OU = "OU"
    GBM = "GBM"
    CUSTOM = "Custom"


class PayoffKind(str, Enum):
    LINEAR = "Linear"
    CONSTANT = "Constant"
    CALL = "Call"
    PUT = "Put"
    POWER = "Power"
    PIECEWISE_LINEAR = "PiecewiseLinear"


class Monotonicity(str, Enum):
    INCREASING = "Increasing"
    DECREASING = "Decreasing"
    NON_MONOTONE = "NonMonotone"


@dataclass(frozen=True)
class TransitionLaw:
    """Law of ``y(T)`` given ``y(t) = y``.

    ``family`` is ``"normal"`` (``y(T) ~ N(mean, sd**2)``) or ``"lognormal"``
    (``log y(T) ~ N(mean, sd**2)``). ``moments(y, tau)`` returns the pair
    ``(mean, sd)`` of the underlying Gaussian core, vectorised over ``y``.
    """

    family: str
    moments: Callable[[np.ndarray, float], tuple[np.ndarray, np.ndarray]]

    def mean(self, y, tau: float):
        m, s = self.moments(np.asarray(y, dtype=float), tau)
        if self.family == "lognormal":
            return np.exp(m + 0.5 * s * s)
        return m

    def variance(self, y, tau: float):
        m, s = self.moments(np.asarray(y, dtype=float), tau)
        if self.family == "lognormal":
            return np.expm1(s * s) * np.exp(2.0 * m + s * s)
        return s * s


@dataclass(frozen=True)
class DiffusionModel:
    kind: ModelKind
    params: Mapping[str, float]
    drift: Coefficient
    diffusion: Coefficient
    transition: TransitionLaw | None = None
    lipschitz: float | None = None

    def terminal_scale(self, tau: float, y0: float) -> float:
        """Standard deviation scale of the state after ``tau``; log-scale for GBM."""
        p = self.params
        if self.kind is ModelKind.ABM:
            return abs(p["b"]) * math.sqrt(tau)
        if self.kind is ModelKind.OU:
            kappa = p["kappa"]
            if kappa == 0.0:
                return abs(p["b"]) * math.sqrt(tau)
            return abs(p["b"]) * math.sqrt(-math.expm1(-2.0 * kappa * tau) / (2.0 * kappa))
        if self.kind is ModelKind.GBM:
            return p["sigma"] * math.sqrt(tau)
        return float(np.abs(self.diffusion(0.0, np.asarray(y0, dtype=float)))) * math.sqrt(tau)

    def shifted(self, drift_shift_per_vol: float) -> "DiffusionModel":
        """Same model with drift ``a + c * b``; stays in the analytic family."""
        c = float(drift_shift_per_vol)
        p = dict(self.params)
        if self.kind is ModelKind.ABM:
            p["a"] = p["a"] + c * p["b"]
        elif self.kind is ModelKind.OU:
            if p["kappa"] == 0.0:
                raise ConfigurationError("cannot shift OU with kappa = 0", "kappa")
            p["theta"] = p["theta"] + c * p["b"] / p["kappa"]
        elif self.kind is ModelKind.GBM:
            p["mu"] = p["mu"] + c * p["sigma"]
        else:
            a, b = self.drift, self.diffusion
            return DiffusionModel(
                ModelKind.CUSTOM, p,
                lambda t, y: a(t, y) + c * b(t, y), b, None, self.lipschitz,
            )
        return make_model(self.kind, p)


def _require(params: Mapping[str, float], names: Sequence[str], kind: str) -> dict[str, float]:
    out = {}
    for name in names:
        if name not in params:
            raise ConfigurationError(f"missing parameter for {kind}", name)
        value = params[name]
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigurationError(f"must be a finite number, got {value!r}", name)
        out[name] = float(value)
    extra = set(params) - set(names)
    if extra:
        raise ConfigurationError(f"unknown parameter(s) for {kind}: {sorted(extra)}", sorted(extra)[0])
    return out


def make_model(kind: ModelKind | str, params: Mapping[str, object]) -> DiffusionModel:
    """Build a diffusion model.

    Parameters by kind:

    * ``ABM``: ``a`` (drift), ``b`` (volatility), ``dy = a dt + b dW``
    * ``OU``: ``kappa``, ``theta``, ``b``, ``dy = kappa (theta - y) dt + b dW``
    * ``GBM``: ``mu``, ``sigma``, ``dy = mu y dt + sigma y dW``
    * ``Custom``: ``drift`` and ``diffusion`` callables plus a declared
      ``lipschitz`` bound for the coefficients
    """
    kind = ModelKind(kind)
    if kind is ModelKind.ABM:
        p = _require(params, ("a", "b"), "ABM")
        if p["b"] < 0:
            raise ConfigurationError("diffusion must be >= 0", "b")
        a, b = p["a"], p["b"]

        def moments(y, tau):
            return y + a * tau, np.full_like(y, b * math.sqrt(tau))

        return DiffusionModel(
            kind, p,
            lambda t, y: np.full_like(np.asarray(y, dtype=float), a),
            lambda t, y: np.full_like(np.asarray(y, dtype=float), b),
            TransitionLaw("normal", moments),
        )
    if kind is ModelKind.OU:
        p = _require(params, ("kappa", "theta", "b"), "OU")
        if p["b"] < 0:
            raise ConfigurationError("diffusion must be >= 0", "b")
        if p["kappa"] < 0:
            raise ConfigurationError("mean reversion speed must be >= 0", "kappa")
        kappa, theta, b = p["kappa"], p["theta"], p["b"]

        def moments(y, tau):
            if kappa == 0.0:
                return y.copy(), np.full_like(y, b * math.sqrt(tau))
            decay = math.exp(-kappa * tau)
            sd = b * math.sqrt(-math.expm1(-2.0 * kappa * tau) / (2.0 * kappa))
            return theta + (y - theta) * decay, np.full_like(y, sd)

        return DiffusionModel(
            kind, p,
            lambda t, y: kappa * (theta - np.asarray(y, dtype=float)),
            lambda t, y: np.full_like(np.asarray(y, dtype=float), b),
            TransitionLaw("normal", moments),
        )
    if kind is ModelKind.GBM:
        p = _require(params, ("mu", "sigma"), "GBM")
        if p["sigma"] <= 0:
            raise ConfigurationError("volatility must be > 0", "sigma")
        mu, sigma = p["mu"], p["sigma"]

        def moments(y, tau):
            if np.any(y <= 0):
                raise ContractError("GBM state must be positive")
            return np.log(y) + (mu - 0.5 * sigma * sigma) * tau, np.full_like(y, sigma * math.sqrt(tau))

        return DiffusionModel(
            kind, p,
            lambda t, y: mu * np.asarray(y, dtype=float),
            lambda t, y: sigma * np.asarray(y, dtype=float),
            TransitionLaw("lognormal", moments),
        )

    drift = params.get("drift")
    diffusion = params.get("diffusion")
    lipschitz = params.get("lipschitz")
    if not callable(drift):
        raise ConfigurationError("Custom model needs a drift callable", "drift")
    if not callable(diffusion):
        raise ConfigurationError("Custom model needs a diffusion callable", "diffusion")
    if not isinstance(lipschitz, (int, float)) or not lipschitz > 0:
        raise ConfigurationError("Custom model needs a positive Lipschitz bound", "lipschitz")
    extra = set(params) - {"drift", "diffusion", "lipschitz"}
    if extra:
        raise ConfigurationError(f"unknown parameter(s) for Custom: {sorted(extra)}", sorted(extra)[0])
    return DiffusionModel(
        kind, {},
        lambda t, y: np.asarray(drift(t, y), dtype=float) + 0.0 * np.asarray(y, dtype=float),
        lambda t, y: np.asarray(diffusion(t, y), dtype=float) + 0.0 * np.asarray(y, dtype=float),
        None, float(lipschitz),
    )


# ---------------------------------------------------------------------------
# Payoffs

_DEFAULT_MONOTONICITY = {
    PayoffKind.CONSTANT: Monotonicity.NON_MONOTONE,
    PayoffKind.CALL: Monotonicity.INCREASING,
    PayoffKind.PUT: Monotonicity.DECREASING,
}


@dataclass(frozen=True)
class Payoff:
    """Terminal claim ``f(y)``.

    ``params`` by kind: Linear ``[slope, intercept]``, Constant ``[c]``,
    Call/Put ``[strike]``, Power ``[exponent]`` (``y**p``, meant for positive
    states), PiecewiseLinear ``[x1, v1, x2, v2, ...]`` with strictly increasing
    breakpoints and the end slopes continued beyond them.
    """

    kind: PayoffKind
    params: tuple[float, ...]
    monotonicity: Monotonicity
    positive: bool = False

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        p = self.params
        k = self.kind
        if k is PayoffKind.LINEAR:
            return p[0] * y + p[1]
        if k is PayoffKind.CONSTANT:
            return np.full_like(y, p[0])
        if k is PayoffKind.CALL:
            return np.maximum(y - p[0], 0.0)
        if k is PayoffKind.PUT:
            return np.maximum(p[0] - y, 0.0)
        if k is PayoffKind.POWER:
            return np.power(y, p[0])
        xs, vs = np.asarray(p[0::2]), np.asarray(p[1::2])
        out = np.interp(y, xs, vs)
        lo, hi = y < xs[0], y > xs[-1]
        out = np.where(lo, vs[0] + (y - xs[0]) * (vs[1] - vs[0]) / (xs[1] - xs[0]), out)
        return np.where(hi, vs[-1] + (y - xs[-1]) * (vs[-1] - vs[-2]) / (xs[-1] - xs[-2]), out)

    @property
    def kinks(self) -> tuple[float, ...]:
        if self.kind in (PayoffKind.CALL, PayoffKind.PUT):
            return (self.params[0],)
        if self.kind is PayoffKind.PIECEWISE_LINEAR:
            return tuple(self.params[0::2])
        return ()

    def growth(self) -> tuple[float, float]:
        """Polynomial growth degree of ``f`` as ``y -> +inf`` and ``y -> -inf``
        toward ``+inf`` values (0 when bounded above in that direction)."""
        p = self.params
        k = self.kind
        if k is PayoffKind.LINEAR:
            return (1.0 if p[0] > 0 else 0.0, 1.0 if p[0] < 0 else 0.0)
        if k is PayoffKind.CALL:
            return (1.0, 0.0)
        if k is PayoffKind.PUT:
            return (0.0, 1.0)
        if k is PayoffKind.POWER:
            e = p[0]
            return (max(e, 0.0), 0.0)
        if k is PayoffKind.PIECEWISE_LINEAR:
            vs, xs = p[1::2], p[0::2]
            right = (vs[-1] - vs[-2]) / (xs[-1] - xs[-2])
            left = (vs[1] - vs[0]) / (xs[1] - xs[0])
            return (1.0 if right > 0 else 0.0, 1.0 if left < 0 else 0.0)
        return (0.0, 0.0)


def make_payoff(
    kind: PayoffKind | str,
    params: Sequence[float],
    monotonicity: Monotonicity | str | None = None,
    positive: bool = False,
) -> Payoff:
    kind = PayoffKind(kind)
    params = tuple(float(v) for v in params)
    expected = {
        PayoffKind.LINEAR: 2, PayoffKind.CONSTANT: 1, PayoffKind.CALL: 1,
        PayoffKind.PUT: 1, PayoffKind.POWER: 1,
    }
    if kind in expected and len(params) != expected[kind]:
        raise ConfigurationError(f"{kind.value} takes {expected[kind]} parameter(s)", "params")
    if kind is PayoffKind.PIECEWISE_LINEAR:
        if len(params) < 4 or len(params) % 2:
            raise ConfigurationError("PiecewiseLinear needs >= 2 (x, value) pairs", "params")
        if np.any(np.diff(params[0::2]) <= 0):
            raise ConfigurationError("breakpoints must be strictly increasing", "params")
    if not all(math.isfinite(v) for v in params):
        raise ConfigurationError("parameters must be finite", "params")

    if monotonicity is None:
        if kind in _DEFAULT_MONOTONICITY:
            monotonicity = _DEFAULT_MONOTONICITY[kind]
        elif kind is PayoffKind.LINEAR:
            slope = params[0]
            monotonicity = (Monotonicity.INCREASING if slope > 0 else
                            Monotonicity.DECREASING if slope < 0 else Monotonicity.NON_MONOTONE)
        elif kind is PayoffKind.POWER:
            monotonicity = Monotonicity.INCREASING if params[0] > 0 else Monotonicity.DECREASING
        else:
            d = np.diff(params[1::2])
            monotonicity = (Monotonicity.INCREASING if np.all(d >= 0) else
                            Monotonicity.DECREASING if np.all(d <= 0) else Monotonicity.NON_MONOTONE)
    return Payoff(kind, params, Monotonicity(monotonicity), bool(positive))


def check_monotone(values: np.ndarray, monotonicity: Monotonicity) -> bool:
    d = np.diff(values)
    if monotonicity is Monotonicity.INCREASING:
        return bool(np.all(d >= 0))
    if monotonicity is Monotonicity.DECREASING:
        return bool(np.all(d <= 0))
    return True


def evaluate_payoff(payoff: Payoff, y_nodes) -> np.ndarray:
    """Evaluate ``payoff`` on increasing nodes, checking its declared contract."""
    y = np.asarray(y_nodes, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ContractError("evaluation nodes must be finite")
    values = payoff(y)
    if not np.all(np.isfinite(values)):
        raise ContractError(f"{payoff.kind.value} payoff is not finite on the given nodes")
    if y.ndim == 1 and np.all(np.diff(y) > 0) and not check_monotone(values, payoff.monotonicity):
        raise ContractError(f"payoff declared {payoff.monotonicity.value} but is not on these nodes")
    if payoff.positive and np.any(values <= 0):
        raise ContractError("payoff declared positive but takes nonpositive values")
    return values


# ---------------------------------------------------------------------------
# Grids and surfaces


@dataclass(frozen=True)
class Grid:
    """Rectangular time-space grid.

    Space nodes are uniform in the solver coordinate ``x``; the state is
    ``y = x`` except on log-state grids (GBM) where ``y = exp(x)``.
    """

    t0: float
    T: float
    n_time: int
    y_center: float
    n_space: int
    n_stddevs: float
    x_lo: float
    x_hi: float
    log_state: bool = False

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_time

    @property
    def times(self) -> np.ndarray:
        t = self.t0 + self.dt * np.arange(self.n_time + 1)
        t[-1] = self.T
        return t

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n_space)

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / (self.n_space - 1)

    @property
    def y(self) -> np.ndarray:
        return np.exp(self.x) if self.log_state else self.x

    @property
    def dy(self) -> float:
        """Node spacing in state units (uniform grids only)."""
        if self.log_state:
            raise ConfigurationError("log-state grids have non-uniform state spacing", "log_state")
        return self.dx

    def time_index(self, t: float) -> int:
        times = self.times
        i = int(np.argmin(np.abs(times - t)))
        if abs(times[i] - t) > 1e-12 * max(1.0, abs(self.T)):
            raise KeyError(t)
        return i

    def window(self, fraction: float = 0.5) -> np.ndarray:
        """Boolean mask of nodes in the central ``fraction`` of the space domain."""
        c = 0.5 * (self.x_lo + self.x_hi)
        half = 0.5 * fraction * (self.x_hi - self.x_lo)
        x = self.x
        return (x >= c - half - 1e-12) & (x <= c + half + 1e-12)


def build_grid(
    model: DiffusionModel,
    t0: float,
    T: float,
    n_time: int,
    n_space: int,
    n_stddevs: float = 6.0,
    y_center: float = 0.0,
) -> Grid:
    """Grid spanning ``y_center +/- n_stddevs`` terminal standard deviations.

    GBM grids are uniform in ``log y`` around ``log y_center``, which keeps the
    lower edge strictly positive.
    """
    if not T > t0:
        raise ConfigurationError(f"horizon T={T} must exceed t0={t0}", "T")
    if int(n_time) != n_time or n_time < 1:
        raise ConfigurationError("n_time must be an integer >= 1", "n_time")
    if int(n_space) != n_space or n_space < 3:
        raise ConfigurationError("n_space must be an integer >= 3", "n_space")
    if not n_stddevs > 0:
        raise ConfigurationError("n_stddevs must be > 0", "n_stddevs")
    log_state = model.kind is ModelKind.GBM
    if log_state and not y_center > 0:
        raise ConfigurationError("GBM grids need y_center > 0", "y_center")
    scale = model.terminal_scale(T - t0, y_center)
    if not scale > 0:
        raise ConfigurationError("model has zero terminal spread; cannot size the grid", "model")
    half = n_stddevs * scale
    centre = math.log(y_center) if log_state else float(y_center)
    return Grid(float(t0), float(T), int(n_time), float(y_center), int(n_space), float(n_stddevs),
                centre - half, centre + half, log_state)


@dataclass(frozen=True)
class PriceSurface:
    """Prices ``values[i, j]`` at ``(grid.times[i], grid.y[j])``."""

    grid: Grid
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n_time + 1, self.grid.n_space):
            raise ContractError(f"surface shape {v.shape} does not match grid")
        if not np.all(np.isfinite(v)):
            i, j = np.argwhere(~np.isfinite(v))[0]
            raise ContractError(f"non-finite price at t={self.grid.times[i]}, y={self.grid.y[j]}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def at(self, t: float, y: float) -> float:
        """Price at a grid time, linearly interpolated in the state."""
        row = self.values[self.grid.time_index(t)]
        return float(np.interp(y, self.grid.y, row))
