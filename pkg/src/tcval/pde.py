"""Finite-difference solver for semi-linear terminal-value problems

    pi_t + a pi_y + 1/2 b^2 pi_yy + g(t, y, pi, b pi_y) = 0,   pi(T, y) = f(y).

Time stepping is IMEX: the advection-diffusion part and any ``-r pi`` term
of ``g`` go into a theta-weighted tridiagonal solve, the rest of ``g`` is
evaluated explicitly at the previous time level with ``Z = b * pi_y`` from
central differences. Both edges impose ``pi_yy = 0``.

Log-state grids (GBM) are solved in ``x = log y`` with the coefficients
transformed accordingly; ``Z`` is coordinate free (``b_y pi_y = b_x pi_x``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from ._normal import norm_ppf
from .errors import ConfigurationError, DomainError, SliceLookupError
from .model import DiffusionModel, Grid, Payoff, PriceSurface, evaluate_payoff
from .principles import Distortion, PrincipleKind, PrincipleSpec


class GeneratorKind(str, Enum):
    VARIANCE_FLAT = "VarianceFlat"
    VARIANCE_DISCOUNTED = "VarianceDiscounted"
    POWER_BENCHMARK = "PowerBenchmark"
    MEAN_VALUE = "MeanValue"
    STDDEV_ABS = "StdDevAbs"
    COC_ABS = "CoCAbs"
    LINEAR = "Linear"


PriceOfRisk = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Generator:
    """Nonlinearity ``g(t, y, Y, Z)``.

    ``loading`` is ``beta`` for StdDevAbs and ``delta * k`` for CoCAbs.
    ``price_of_risk`` (Linear only) is ``lambda(t, y)`` in
    ``g = lambda Z - r Y``, i.e. a drift shift of ``lambda * b``.
    """

    kind: GeneratorKind
    alpha: float = 0.0
    gamma: float = 0.0
    X0: float = 1.0
    r: float = 0.0
    loading: float = 0.0
    v: Distortion | None = None
    price_of_risk: float | PriceOfRisk = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", GeneratorKind(self.kind))
        if self.kind is GeneratorKind.MEAN_VALUE and self.v is None:
            raise ConfigurationError("MeanValue generator needs a distortion", "v")

    @property
    def rate(self) -> float:
        """Coefficient of the linear ``-r Y`` part, treated implicitly."""
        if self.kind in (GeneratorKind.VARIANCE_FLAT, GeneratorKind.MEAN_VALUE):
            return 0.0
        return self.r

    def lambda_at(self, t: float, y: np.ndarray) -> np.ndarray:
        lam = self.price_of_risk
        if callable(lam):
            return np.asarray(lam(t, y), dtype=float)
        return np.full_like(y, float(lam))

    def explicit(self, t: float, y: np.ndarray, Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
        """The part of ``g`` not absorbed by the implicit linear operator."""
        k = self.kind
        if k is GeneratorKind.VARIANCE_FLAT:
            return 0.5 * self.alpha * Z * Z
        if k is GeneratorKind.VARIANCE_DISCOUNTED:
            return 0.5 * self.gamma / (self.X0 * math.exp(self.r * t)) * Z * Z
        if k is GeneratorKind.POWER_BENCHMARK:
            return 0.5 * self.gamma / Y * Z * Z
        if k is GeneratorKind.MEAN_VALUE:
            return 0.5 * self.v.local_risk_aversion(Y) * Z * Z
        if k in (GeneratorKind.STDDEV_ABS, GeneratorKind.COC_ABS):
            return self.loading * np.abs(Z)
        return np.zeros_like(Y)

    def evaluate(self, t: float, y, Y, Z):
        y, Y, Z = (np.asarray(a, dtype=float) for a in (y, Y, Z))
        g = self.explicit(t, y, Y, Z) - self.rate * Y
        if self.kind is GeneratorKind.LINEAR:
            g = g + self.lambda_at(t, np.broadcast_to(y, Z.shape).astype(float)) * Z
        return g

    @property
    def z_lipschitz(self) -> float | None:
        """Bound on ``|dg/dZ|`` for the nonsmooth generators, else ``None``."""
        if self.kind in (GeneratorKind.STDDEV_ABS, GeneratorKind.COC_ABS):
            return self.loading
        return None


def generator_for(principle: PrincipleSpec) -> Generator:
    """The continuous-time generator obtained in the limit of ``principle``."""
    k = principle.kind
    if k is PrincipleKind.VARIANCE:
        return Generator(GeneratorKind.VARIANCE_FLAT, alpha=principle.alpha)
    if k is PrincipleKind.VARIANCE_DISCOUNTED:
        return Generator(GeneratorKind.VARIANCE_DISCOUNTED, gamma=principle.gamma,
                         X0=principle.X0, r=principle.r)
    if k is PrincipleKind.CURRENT_PRICE_BENCHMARK:
        return Generator(GeneratorKind.POWER_BENCHMARK, gamma=principle.gamma, r=principle.r)
    if k is PrincipleKind.MEAN_VALUE:
        return Generator(GeneratorKind.MEAN_VALUE, v=principle.v, r=principle.r)
    if k is PrincipleKind.STDDEV:
        return Generator(GeneratorKind.STDDEV_ABS, loading=principle.beta, r=principle.r)
    return Generator(GeneratorKind.COC_ABS, loading=principle.delta * norm_ppf(principle.q),
                     r=principle.r)


def linear_generator(price_of_risk: float | PriceOfRisk = 0.0, r: float = 0.0) -> Generator:
    return Generator(GeneratorKind.LINEAR, r=r, price_of_risk=price_of_risk)


@dataclass(frozen=True)
class SolverConfig:
    """theta: implicit weight of the linear part (0.5 = Crank-Nicolson).
    max_cfl: bound on ``dt * speed / dx`` for the explicit ``|Z|`` term.
    rannacher_steps: leading fully implicit steps that damp payoff kinks.
    """

    theta: float = 0.5
    max_cfl: float = 1.0
    rannacher_steps: int = 2

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigurationError("theta must lie in [0, 1]", "theta")
        if not self.max_cfl > 0:
            raise ConfigurationError("max_cfl must be > 0", "max_cfl")
        if self.rannacher_steps < 0:
            raise ConfigurationError("rannacher_steps must be >= 0", "rannacher_steps")


def _coefficients(model: DiffusionModel, grid: Grid, t: float, y: np.ndarray):
    a = model.drift(t, y)
    b = model.diffusion(t, y)
    if grid.log_state:
        return a / y - 0.5 * (b / y) ** 2, b / y
    return a, b


def _edge_weights(y: np.ndarray):
    """``pi_0 = c1 pi_1 + c2 pi_2`` and ``pi_-1 = e1 pi_-2 + e2 pi_-3`` (linear in y)."""
    w = (y[0] - y[1]) / (y[2] - y[1])
    v = (y[-1] - y[-2]) / (y[-2] - y[-3])
    return (1.0 - w, w), (1.0 + v, -v)


def solve_semilinear(
    model: DiffusionModel,
    payoff: Payoff,
    generator: Generator,
    grid: Grid,
    config: SolverConfig | None = None,
    *,
    terminal_values: np.ndarray | None = None,
) -> PriceSurface:
    """Price surface of the semi-linear PDE with generator ``generator``.

    MeanValue generators act on the forward price ``pi / e^{rt}``; the returned
    surface is converted back to spot prices. ``terminal_values`` replaces the
    payoff on the nodes (e.g. for a combination of claims); ``payoff`` still
    carries the positivity declaration.
    """
    config = config or SolverConfig()
    if grid.n_space < 4:
        raise ConfigurationError("PDE solve needs at least 4 space nodes", "n_space")
    kind = generator.kind
    y = grid.y
    dx = grid.dx
    times = grid.times
    dt = grid.dt
    n = grid.n_time

    if kind is GeneratorKind.POWER_BENCHMARK and not payoff.positive:
        raise DomainError("power-benchmark pricing needs a payoff declared positive")

    speed_bound = generator.z_lipschitz
    if speed_bound:
        speed = 0.0
        for t in (times[0], times[-1]):
            speed = max(speed, speed_bound * float(np.max(np.abs(_coefficients(model, grid, t, y)[1]))))
        if dt * speed > config.max_cfl * dx:
            need = math.ceil((grid.T - grid.t0) * speed / (config.max_cfl * dx))
            raise ConfigurationError(
                f"explicit |Z| term violates dt <= max_cfl*dx/speed "
                f"(dt={dt:.3g}, speed={speed:.3g}, dx={dx:.3g}); use n_time >= {need}",
                "n_time",
            )

    values = np.empty((n + 1, grid.n_space))
    if terminal_values is None:
        terminal = evaluate_payoff(payoff, y)
    else:
        terminal = np.array(terminal_values, dtype=float)
        if terminal.shape != y.shape or not np.all(np.isfinite(terminal)):
            raise ConfigurationError("terminal values must be finite, one per space node", "terminal_values")
    forward = kind is GeneratorKind.MEAN_VALUE and generator.r != 0.0
    if forward:
        terminal = terminal / math.exp(generator.r * grid.T)
    values[n] = terminal

    (c1, c2), (e1, e2) = _edge_weights(y)
    inner = slice(1, -1)
    rate = generator.rate
    is_linear = kind is GeneratorKind.LINEAR

    def operator(t):
        ax, bx = _coefficients(model, grid, t, y)
        if is_linear:
            ax = ax + generator.lambda_at(t, y) * bx
        diff = 0.5 * bx[inner] ** 2 / dx**2
        adv = ax[inner] / (2.0 * dx)
        return diff - adv, -2.0 * diff - rate, diff + adv, bx

    low_old, diag_old, up_old, bx_old = operator(times[n])
    for step, i in enumerate(range(n - 1, -1, -1)):
        theta = 1.0 if step < config.rannacher_steps else config.theta
        t_old, t_new = times[i + 1], times[i]
        old = values[i + 1]

        rhs = old[inner].copy()
        if theta < 1.0:
            rhs += (1.0 - theta) * dt * (low_old * old[:-2] + diag_old * old[inner] + up_old * old[2:])
        if not is_linear:
            z = bx_old[inner] * (old[2:] - old[:-2]) / (2.0 * dx)
            rhs += dt * generator.explicit(t_old, y[inner], old[inner], z)

        low, diag, up, bx = operator(t_new)
        a_low = -theta * dt * low
        a_diag = 1.0 - theta * dt * diag
        a_up = -theta * dt * up
        a_diag[0] += a_low[0] * c1
        a_up[0] += a_low[0] * c2
        a_diag[-1] += a_up[-1] * e1
        a_low[-1] += a_up[-1] * e2

        m = a_diag.size
        banded = np.zeros((3, m))
        banded[0, 1:] = a_up[:-1]
        banded[1] = a_diag
        banded[2, :-1] = a_low[1:]
        sol = solve_banded((1, 1), banded, rhs, check_finite=False)

        row = values[i]
        row[inner] = sol
        row[0] = c1 * sol[0] + c2 * sol[1]
        row[-1] = e1 * sol[-1] + e2 * sol[-2]

        if not np.all(np.isfinite(row)):
            j = int(np.flatnonzero(~np.isfinite(row))[0])
            raise DomainError(f"non-finite price at t={t_new:.10g}, y={y[j]:.10g}")
        if kind is GeneratorKind.POWER_BENCHMARK and np.any(row <= 0):
            j = int(np.flatnonzero(row <= 0)[0])
            raise DomainError(f"power-benchmark price reached {row[j]:.3g} <= 0 at t={t_new:.10g}, y={y[j]:.10g}")
        low_old, diag_old, up_old, bx_old = low, diag, up, bx

    if forward:
        values *= np.exp(generator.r * times)[:, None]
    return PriceSurface(grid, values, {"engine": "pde", "generator": kind.value, "warnings": []})


def solve_principle(model, payoff, principle: PrincipleSpec, grid, config=None) -> PriceSurface:
    return solve_semilinear(model, payoff, generator_for(principle), grid, config)


def state_gradient(surface: PriceSurface) -> np.ndarray:
    """``pi_y`` on every row: central differences inside, one-sided at the edges."""
    return np.gradient(surface.values, surface.grid.y, axis=1)


def solve_davis(
    model: DiffusionModel,
    base_payoff: Payoff,
    perturbation_payoff: Payoff,
    principle: PrincipleSpec,
    grid: Grid,
    config: SolverConfig | None = None,
    base: PriceSurface | None = None,
) -> PriceSurface:
    """Marginal price of a small extra claim on top of a variance-priced book.

    Solves the discounted-variance PDE for the book, then the linear PDE with
    drift ``a + gamma/(X0 e^{rt}) b^2 pi_y``, diffusion ``b`` and discounting
    ``-r pi``. The base surface is returned in ``meta["base"]``.
    """
    if principle.kind not in (PrincipleKind.VARIANCE_DISCOUNTED, PrincipleKind.VARIANCE):
        raise ConfigurationError("Davis prices are defined relative to a variance-priced book", "principle")
    if principle.kind is PrincipleKind.VARIANCE:
        principle = PrincipleSpec(PrincipleKind.VARIANCE_DISCOUNTED, gamma=principle.alpha, X0=1.0, r=0.0)
    if base is None:
        base = solve_principle(model, base_payoff, principle, grid, config)
    slope = state_gradient(base)
    gamma, X0, r = principle.gamma, principle.X0, principle.r

    def price_of_risk(t, y):
        i = grid.time_index(t)
        return gamma / (X0 * math.exp(r * t)) * model.diffusion(t, y) * slope[i]

    surface = solve_semilinear(model, perturbation_payoff, linear_generator(price_of_risk, r), grid, config)
    meta = {"engine": "pde", "generator": "Davis", "warnings": [], "base": base}
    return PriceSurface(grid, surface.values, meta)


def extract_slice(surface: PriceSurface, t: float) -> tuple[np.ndarray, np.ndarray]:
    try:
        i = surface.grid.time_index(t)
    except KeyError:
        raise SliceLookupError(f"t={t} is not on the time grid") from None
    return surface.grid.y.copy(), surface.values[i].copy()
