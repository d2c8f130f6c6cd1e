"""Binomial and quadrinomial trees iterated backwards on a spatial grid.

Trees with state-dependent coefficients do not recombine, so instead of
enumerating them we keep prices on the grid's nodes: every node spawns its
one-step children, the children are priced by piecewise-linear interpolation
of the next row, and the chosen principle collapses them into a price.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._normal import norm_ppf
from .errors import CalibrationError, ConfigurationError, DomainError
from .model import DiffusionModel, Grid, Payoff, PriceSurface, evaluate_payoff
from .principles import DiscreteDistribution, PrincipleKind, PrincipleSpec


class TreeKind(str, Enum):
    BINOMIAL = "binomial"
    QUADRINOMIAL = "quadrinomial"


@dataclass(frozen=True)
class QuadrinomialCalibration:
    q: float
    k: float
    l: float

    @property
    def offsets(self) -> np.ndarray:
        """Standardised branch positions in increasing order."""
        return np.array([-self.k, -self.l, self.l, self.k])

    @property
    def probs(self) -> np.ndarray:
        tail = 1.0 - self.q
        return np.array([tail, 0.5 - tail, 0.5 - tail, tail])


@dataclass(frozen=True)
class LatticeStep:
    children: DiscreteDistribution
    dt: float


def calibrate_quadrinomial(q: float) -> QuadrinomialCalibration:
    """Outer branches at the normal ``q``-quantile ``k``; inner ones at ``l``
    chosen so the four-point law has unit variance."""
    if not 0.5 < q < 1.0:
        raise CalibrationError(f"confidence level must lie in (0.5, 1), got {q}")
    k = norm_ppf(q)
    tail = 1.0 - q
    l_sq = (0.5 - tail * k * k) / (0.5 - tail)
    if not l_sq > 0:
        raise CalibrationError(f"q={q} gives l^2={l_sq:.4g} <= 0; no valid quadrinomial tree")
    return QuadrinomialCalibration(q, k, math.sqrt(l_sq))


def _children(model: DiffusionModel, t: float, y: np.ndarray, dt: float, offsets: np.ndarray) -> np.ndarray:
    a = model.drift(t, y)
    b = model.diffusion(t, y)
    return (y + a * dt)[:, None] + (b * math.sqrt(dt))[:, None] * offsets[None, :]


def binomial_children(model: DiffusionModel, t: float, y: float, dt: float) -> LatticeStep:
    if not dt > 0:
        raise ConfigurationError("time step must be > 0", "dt")
    states = _children(model, t, np.array([float(y)]), dt, np.array([-1.0, 1.0]))[0]
    return LatticeStep(DiscreteDistribution(states, [0.5, 0.5]), dt)


def quadrinomial_children(
    model: DiffusionModel, t: float, y: float, dt: float, calib: QuadrinomialCalibration
) -> LatticeStep:
    if not dt > 0:
        raise ConfigurationError("time step must be > 0", "dt")
    states = _children(model, t, np.array([float(y)]), dt, calib.offsets)[0]
    return LatticeStep(DiscreteDistribution(states, calib.probs), dt)


def interp_extrap(xq: np.ndarray, xp: np.ndarray, fp: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation, continuing the edge slopes outside ``xp``."""
    out = np.interp(xq, xp, fp)
    lo = xq < xp[0]
    if lo.any():
        out[lo] = fp[0] + (xq[lo] - xp[0]) * ((fp[1] - fp[0]) / (xp[1] - xp[0]))
    hi = xq > xp[-1]
    if hi.any():
        out[hi] = fp[-1] + (xq[hi] - xp[-1]) * ((fp[-1] - fp[-2]) / (xp[-1] - xp[-2]))
    return out


def backward_induct(
    model: DiffusionModel,
    payoff: Payoff,
    principle: PrincipleSpec,
    grid: Grid,
    tree_kind: TreeKind | str = TreeKind.BINOMIAL,
    *,
    terminal_index: int | None = None,
    terminal_values: np.ndarray | None = None,
    threads: int = 1,
) -> PriceSurface:
    """Time-consistent price surface from iterating ``principle`` one step at a time.

    Parameters
    ----------
    terminal_index, terminal_values
        Start the induction from row ``terminal_index`` holding
        ``terminal_values`` instead of the payoff at ``T``. Rows after the
        terminal index are left equal to the terminal row.
    threads
        Worker threads per row. Nodes are independent given the next row, so
        the result is identical for any worker count.
    """
    tree_kind = TreeKind(tree_kind)
    if principle.kind is PrincipleKind.COST_OF_CAPITAL and tree_kind is not TreeKind.QUADRINOMIAL:
        raise ConfigurationError("cost-of-capital pricing needs the quadrinomial tree", "tree")
    if tree_kind is TreeKind.QUADRINOMIAL:
        calib = calibrate_quadrinomial(principle.q)
        offsets, probs = calib.offsets, calib.probs
    else:
        offsets, probs = np.array([-1.0, 1.0]), np.array([0.5, 0.5])

    y = grid.y
    times = grid.times
    dt = grid.dt
    n = grid.n_time
    values = np.empty((n + 1, grid.n_space))
    if terminal_index is None:
        start = n
        values[n] = evaluate_payoff(payoff, y)
    else:
        start = int(terminal_index)
        if not 0 <= start <= n:
            raise ConfigurationError("terminal index outside the time grid", "terminal_index")
        values[start] = np.asarray(terminal_values, dtype=float)
        values[start + 1:] = values[start]

    lo_edge = y[0] - 2.0 * (y[1] - y[0])
    hi_edge = y[-1] + 2.0 * (y[-1] - y[-2])
    escapes: list[tuple[float, int]] = []
    chunks = _chunks(grid.n_space, max(1, int(threads)))
    pool = ThreadPoolExecutor(len(chunks)) if len(chunks) > 1 else None

    try:
        for i in range(start - 1, -1, -1):
            t = times[i]
            nxt = values[i + 1]

            def block(bounds, t=t, nxt=nxt):
                lo, hi = bounds
                states = _children(model, t, y[lo:hi], dt, offsets)
                prices = interp_extrap(states.ravel(), y, nxt).reshape(states.shape)
                escaped = int(np.count_nonzero((states < lo_edge) | (states > hi_edge)))
                return principle.step(prices, probs, t, dt), escaped

            results = list(pool.map(block, chunks)) if pool else [block(chunks[0])]
            row = np.concatenate([r[0] for r in results])
            escaped = sum(r[1] for r in results)
            if escaped:
                escapes.append((float(t), escaped))
            bad = ~np.isfinite(row)
            if bad.any():
                j = int(np.flatnonzero(bad)[0])
                raise DomainError(f"non-finite price at t={t:.10g}, y={y[j]:.10g}")
            values[i] = row
    finally:
        if pool:
            pool.shutdown()

    meta = {"engine": "lattice", "tree": tree_kind.value, "warnings": []}
    if escapes:
        meta["warnings"].append(
            f"domain too narrow: children escaped the grid by > 2 spacings at {len(escapes)} "
            f"time step(s), first at t={escapes[0][0]:.6g} ({escapes[0][1]} children)"
        )
    return PriceSurface(grid, values, meta)


def _chunks(n: int, workers: int) -> list[tuple[int, int]]:
    workers = min(workers, n)
    edges = np.linspace(0, n, workers + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]
