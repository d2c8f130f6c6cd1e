"""Convergence studies and cross-engine equivalence checks.

Errors are sup-norms over the central half of the nominal space domain at
``t0``. Lattice grids are laid out so that the node spacing is a fixed
fraction of the one-step spread ``b sqrt(dt)``; for the binomial tree on
constant-volatility models the children then land on nodes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from ._normal import norm_ppf
from .closedform import closed_form_price
from .errors import ConfigurationError
from .lattice import TreeKind, backward_induct, interp_extrap
from .model import DiffusionModel, Grid, ModelKind, Payoff, build_grid
from .pde import SolverConfig, solve_davis, solve_principle, solve_semilinear, generator_for
from .principles import PrincipleKind, PrincipleSpec

ZERO_FLOOR = 1e-10
MIN_POINTS = 4


class Reference(str, Enum):
    CLOSED_FORM = "ClosedForm"
    PDE_FINE = "PDEFine"


@dataclass(frozen=True)
class Case:
    model: DiffusionModel
    payoff: Payoff
    principle: PrincipleSpec
    T: float = 1.0
    t0: float = 0.0
    y_center: float = 0.0
    n_stddevs: float = 6.0
    case_id: str = "case"
    # PDE resolution for Davis studies
    n_time: int = 400
    n_space: int = 401


@dataclass
class ConvergenceReport:
    case_id: str
    dt_sequence: list[float]
    errors: list[float]
    fitted_order: float | None
    reference: str
    exact_zero: bool = False
    inconclusive: bool = False
    insufficient: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def halving_ratios(self) -> list[float]:
        e = self.errors
        return [a / b if b > 0 else math.inf for a, b in zip(e[:-1], e[1:])]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["halving_ratios"] = self.halving_ratios
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_rows(self) -> list[list]:
        order = "" if self.fitted_order is None else fmt17(self.fitted_order)
        return [[self.case_id, fmt17(dt), fmt17(err), order, self.reference]
                for dt, err in zip(self.dt_sequence, self.errors)]


def fmt17(x: float) -> str:
    """Full double precision, 17 significant digits."""
    return format(float(x), ".17g")


CSV_HEADER = ["case_id", "dt", "error", "fitted_order", "reference"]


def reports_to_csv(reports: list[ConvergenceReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CSV_HEADER)
    for rep in reports:
        w.writerows(rep.csv_rows())
    return buf.getvalue()


def fit_order(dts, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(dt)``."""
    return float(np.polyfit(np.log(dts), np.log(errors), 1)[0])


def _report(case_id, dts, errors, reference, notes=()) -> ConvergenceReport:
    errors = [float(e) for e in errors]
    rep = ConvergenceReport(case_id, [float(d) for d in dts], errors, None, reference, notes=list(notes))
    if len(errors) < MIN_POINTS:
        rep.insufficient = True
        rep.notes.append(f"fewer than {MIN_POINTS} points; no order fitted")
    if max(errors) < ZERO_FLOOR:
        rep.exact_zero = True
        rep.notes.append(f"all errors below {ZERO_FLOOR:g}: scheme exact up to roundoff, order undefined")
        return rep
    if min(errors) < ZERO_FLOOR:
        rep.inconclusive = True
        rep.notes.append("some errors at the roundoff floor")
        return rep
    if any(b > 2.0 * a for a, b in zip(errors[:-1], errors[1:])):
        rep.inconclusive = True
        rep.notes.append("error grows by more than a factor 2 under refinement")
    if not rep.insufficient:
        rep.fitted_order = fit_order(dts, errors)
    return rep


def _check_dt_sequence(dts, horizon) -> list[int]:
    dts = [float(d) for d in dts]
    if any(b >= a for a, b in zip(dts[:-1], dts[1:])):
        raise ConfigurationError("dt_sequence must be strictly decreasing", "dt_sequence")
    n_times = []
    for d in dts:
        n = round(horizon / d)
        if n < 1 or abs(n * d - horizon) > 1e-9 * horizon:
            raise ConfigurationError(f"dt={d} does not divide the horizon {horizon}", "dt_sequence")
        n_times.append(n)
    if any(abs(a / b - 2.0) > 1e-9 for a, b in zip(dts[:-1], dts[1:])):
        raise ConfigurationError("dt_sequence must halve at each step", "dt_sequence")
    return n_times


def _nominal(case: Case):
    """Centre and half-width of the nominal domain in solver coordinates."""
    scale = case.model.terminal_scale(case.T - case.t0, case.y_center)
    log = case.model.kind is ModelKind.GBM
    centre = math.log(case.y_center) if log else case.y_center
    return centre, case.n_stddevs * scale, scale


def _local_vol(case: Case) -> float:
    y = np.array([case.y_center], dtype=float)
    b = float(case.model.diffusion(case.t0, y)[0])
    if case.model.kind is ModelKind.GBM:
        b /= case.y_center
    return abs(b)


def lattice_grid(case: Case, n_time: int, nodes_per_step: int) -> Grid:
    """Grid whose spacing is ``b sqrt(dt) / nodes_per_step`` at the centre."""
    centre, half, scale = _nominal(case)
    dt = (case.T - case.t0) / n_time
    target = _local_vol(case) * math.sqrt(dt) / nodes_per_step
    if not target > 0:
        raise ConfigurationError("zero local volatility at the grid centre", "model")
    m = math.ceil(half / target - 1e-9)
    return build_grid(case.model, case.t0, case.T, n_time, 2 * m + 1, m * target / scale, case.y_center)


def _window(grid: Grid, centre: float, half: float) -> np.ndarray:
    return np.abs(grid.x - centre) <= 0.5 * half + 1e-12


def _default_nodes_per_step(tree: TreeKind, n_time: int) -> int:
    # quadrinomial children never sit on nodes: refine so interpolation error stays O(dt)
    return 1 if tree is TreeKind.BINOMIAL else max(1, math.ceil(math.sqrt(n_time) / 2))


def converge_lattice_to_limit(
    case: Case,
    dt_sequence,
    reference: Reference | str = Reference.CLOSED_FORM,
    *,
    tree: TreeKind | str | None = None,
    nodes_per_step: int | None = None,
    threads: int = 1,
) -> ConvergenceReport:
    """Lattice prices at ``t0`` against a limit price, for each ``dt``."""
    reference = Reference(reference)
    if tree is None:
        tree = TreeKind.QUADRINOMIAL if case.principle.kind is PrincipleKind.COST_OF_CAPITAL else TreeKind.BINOMIAL
    tree = TreeKind(tree)
    n_times = _check_dt_sequence(dt_sequence, case.T - case.t0)
    centre, half, _ = _nominal(case)

    grids, rows = [], []
    for n in n_times:
        m = nodes_per_step or _default_nodes_per_step(tree, n)
        grid = lattice_grid(case, n, m)
        surface = backward_induct(case.model, case.payoff, case.principle, grid, tree, threads=threads)
        grids.append(grid)
        rows.append(surface.values[0])

    notes = []
    if reference is Reference.CLOSED_FORM:
        def ref_at(grid, mask):
            return np.asarray(closed_form_price(case.model, case.payoff, case.principle,
                                                case.t0, grid.y[mask], case.T))
    else:
        fine = fine_reference(case, grids[-1])
        notes.append(f"reference: PDE with n_time={fine.grid.n_time}, n_space={fine.grid.n_space}")

        def ref_at(grid, mask):
            return interp_extrap(grid.x[mask], fine.grid.x, fine.values[0])

    errors = []
    for grid, row in zip(grids, rows):
        mask = _window(grid, centre, half)
        errors.append(float(np.max(np.abs(row[mask] - ref_at(grid, mask)))))
    return _report(case.case_id, [float(d) for d in dt_sequence], errors, reference.value, notes)


def fine_reference(case: Case, finest: Grid, config: SolverConfig | None = None):
    """PDE solve with a quarter of the finest time step and half its spacing."""
    centre, half, scale = _nominal(case)
    dx = finest.dx / 2.0
    m = math.ceil(half / dx - 1e-9)
    grid = build_grid(case.model, case.t0, case.T, 4 * finest.n_time, 2 * m + 1, m * dx / scale, case.y_center)
    return solve_principle(case.model, case.payoff, case.principle, grid, config)


def coc_equals_stddev_limit(
    case: Case,
    delta: float,
    q: float,
    dt_sequence,
    *,
    nodes_per_step: int | None = None,
    threads: int = 1,
) -> ConvergenceReport:
    """Quadrinomial cost-of-capital lattice against the std-dev closed form
    with ``beta = delta * Phi^{-1}(q)``."""
    principle = PrincipleSpec(PrincipleKind.COST_OF_CAPITAL, delta=delta, q=q, r=case.principle.r)
    coc_case = Case(case.model, case.payoff, principle, case.T, case.t0, case.y_center,
                    case.n_stddevs, case.case_id)
    rep = converge_lattice_to_limit(coc_case, dt_sequence, Reference.CLOSED_FORM,
                                    tree=TreeKind.QUADRINOMIAL, nodes_per_step=nodes_per_step,
                                    threads=threads)
    rep.notes.append(f"limit: std-dev price with beta = delta*k = {delta * norm_ppf(q):.10g}")
    return rep


@dataclass
class DavisReport:
    case_id: str
    eps_sequence: list[float]
    quotients: list[float]
    davis_price: float
    gaps: list[float]
    observed_order: float | None
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["case_id", "eps", "quotient", "davis", "gap"])
        for e, qv, g in zip(self.eps_sequence, self.quotients, self.gaps):
            w.writerow([self.case_id, fmt17(e), fmt17(qv), fmt17(self.davis_price), fmt17(g)])
        return buf.getvalue()


def _davis_grid(case: Case) -> Grid:
    return build_grid(case.model, case.t0, case.T, case.n_time, case.n_space, case.n_stddevs, case.y_center)


def davis_is_marginal_price(
    case: Case,
    perturbation: Payoff,
    eps_sequence,
    config: SolverConfig | None = None,
) -> DavisReport:
    """Difference quotients of the nonlinear variance price against the Davis price.

    ``gaps`` are sup-norm distances on the central window at ``t0``;
    ``quotients`` and ``davis_price`` are reported at ``(t0, y_center)``.
    """
    grid = _davis_grid(case)
    principle = case.principle
    if principle.kind is PrincipleKind.VARIANCE:
        principle = PrincipleSpec(PrincipleKind.VARIANCE_DISCOUNTED, gamma=principle.alpha, X0=1.0)
    if principle.kind is not PrincipleKind.VARIANCE_DISCOUNTED:
        raise ConfigurationError("Davis studies need a variance principle", "principle")
    generator = generator_for(principle)
    base = solve_principle(case.model, case.payoff, principle, grid, config)
    davis = solve_davis(case.model, case.payoff, perturbation, principle, grid, config, base=base)
    f_vals = case.payoff(grid.y)
    g_vals = perturbation(grid.y)
    mask = grid.window(0.5)
    centre = case.y_center

    quotients, gaps = [], []
    for eps in eps_sequence:
        bumped = solve_semilinear(case.model, case.payoff, generator, grid, config,
                                  terminal_values=f_vals + eps * g_vals)
        dq = (bumped.values[0] - base.values[0]) / eps
        gaps.append(float(np.max(np.abs(dq - davis.values[0])[mask])))
        quotients.append(float(np.interp(centre, grid.y, dq)))

    eps = np.asarray(eps_sequence, dtype=float)
    g = np.asarray(gaps)
    order = None
    notes = []
    if np.all(g > ZERO_FLOOR) and len(g) >= 2:
        order = fit_order(eps, g)
    else:
        notes.append("gaps at the roundoff floor; quotient and Davis price agree exactly")
    return DavisReport(case.case_id, [float(e) for e in eps], quotients,
                       float(np.interp(centre, grid.y, davis.values[0])), gaps, order, notes)
