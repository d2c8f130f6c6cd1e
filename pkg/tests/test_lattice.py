import math
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import norm

from tcval.errors import CalibrationError, ConfigurationError
from tcval.lattice import (
    TreeKind,
    backward_induct,
    binomial_children,
    calibrate_quadrinomial,
    interp_extrap,
    quadrinomial_children,
)
from tcval.model import build_grid, make_model, make_payoff
from tcval.principles import PrincipleKind, PrincipleSpec, var_quantile

ABM = make_model("ABM", {"a": 0.0, "b": 1.0})
IDENTITY = make_payoff("Linear", [1.0, 0.0])


def sig3(x):
    return float(f"{x:.3g}")


def test_calibration_figures():
    c = calibrate_quadrinomial(0.995)
    assert (sig3(c.k), sig3(c.l)) == (2.58, 0.971)
    c = calibrate_quadrinomial(0.99)
    k = norm.ppf(0.99)
    l = math.sqrt((0.5 - 0.01 * k * k) / 0.49)
    assert round(c.k, 4) == 2.3263 and round(c.l, 4) == 0.9539
    assert c.k == pytest.approx(k, rel=1e-13) and c.l == pytest.approx(l, rel=1e-13)


@given(st.floats(0.5001, 0.9999))
def test_calibration_moment_identity(q):
    try:
        c = calibrate_quadrinomial(q)
    except CalibrationError:
        # only where (1-q) k^2 >= 1/2, which never happens on (0.5, 1)
        pytest.fail("calibration should exist")
    assert 2 * (1 - q) * c.k**2 + 2 * (0.5 - (1 - q)) * c.l**2 == pytest.approx(1.0, abs=1e-12)
    assert np.all((c.probs > 0) & (c.probs < 0.5))


def test_calibration_rejects_bad_levels():
    for q in (0.5, 1.0, 0.2):
        with pytest.raises(CalibrationError):
            calibrate_quadrinomial(q)


def test_calibration_is_fast():
    calibrate_quadrinomial(0.995)
    t0 = time.perf_counter()
    for _ in range(100):
        calibrate_quadrinomial(0.995)
    assert (time.perf_counter() - t0) / 100 < 1e-3


def test_binomial_children_examples():
    s = binomial_children(ABM, 0.0, 0.0, 0.25)
    assert sorted(s.children.values) == [-0.5, 0.5]
    assert list(s.children.probs) == [0.5, 0.5]
    s = binomial_children(make_model("ABM", {"a": 1.0, "b": 0.0}), 0.0, 0.0, 0.5)
    assert list(s.children.values) == [0.5, 0.5]
    s = binomial_children(make_model("GBM", {"mu": 0.1, "sigma": 0.2}), 0.0, 1.0, 0.01)
    assert np.allclose(sorted(s.children.values), [1.001 - 0.02, 1.001 + 0.02], rtol=0, atol=1e-15)
    assert s.children.variance() == pytest.approx(0.2**2 * 0.01, rel=1e-12)


def test_quadrinomial_children_examples():
    c = calibrate_quadrinomial(0.995)
    s = quadrinomial_children(ABM, 0.0, 0.0, 1.0, c)
    assert [sig3(v) for v in s.children.values] == [-2.58, -0.971, 0.971, 2.58]
    assert np.allclose(s.children.probs, [0.005, 0.495, 0.495, 0.005], atol=1e-15)
    s = quadrinomial_children(make_model("ABM", {"a": 0.2, "b": 1.7}), 0.0, 0.4, 0.01, c)
    assert s.children.mean() == pytest.approx(0.4 + 0.002, abs=1e-14)
    assert s.children.variance() == pytest.approx(1.7**2 * 0.01, rel=1e-12)
    assert var_quantile(s.children, 0.995) == pytest.approx(c.k * 1.7 * 0.1, rel=1e-12)


def test_interp_extrap_continues_edge_slopes():
    xp = np.array([0.0, 1.0, 2.0])
    fp = np.array([0.0, 1.0, 4.0])
    assert np.allclose(interp_extrap(np.array([-1.0, 0.5, 3.0]), xp, fp), [-1.0, 0.5, 7.0])


def grid_for(n_time=20, n_space=161, model=ABM, T=1.0, y_center=0.0, n_stddevs=6.0):
    return build_grid(model, 0.0, T, n_time, n_space, n_stddevs, y_center)


def test_one_binomial_step_variance():
    g = grid_for(n_time=1, n_space=121)
    s = backward_induct(ABM, IDENTITY, PrincipleSpec(PrincipleKind.VARIANCE, alpha=0.8), g)
    assert np.allclose(s.values[0], g.y + 0.5 * 0.8 * 1.0 * g.dt, atol=1e-13)
    assert np.array_equal(s.values[-1], g.y)


def test_constant_payoff_stddev():
    g = grid_for()
    s = backward_induct(ABM, make_payoff("Constant", [2.5]), PrincipleSpec(PrincipleKind.STDDEV, beta=0.4), g)
    assert np.all(s.values == 2.5)


def test_alpha_zero_is_drifted_identity():
    model = make_model("ABM", {"a": 0.3, "b": 1.0})
    g = grid_for(model=model)
    s = backward_induct(model, IDENTITY, PrincipleSpec(PrincipleKind.VARIANCE), g)
    expected = g.y[None, :] + 0.3 * (1.0 - g.times[:, None])
    assert np.allclose(s.values, expected, atol=1e-12)


def test_cost_of_capital_needs_quadrinomial():
    g = grid_for()
    with pytest.raises(ConfigurationError):
        backward_induct(ABM, IDENTITY, PrincipleSpec(PrincipleKind.COST_OF_CAPITAL, delta=0.06), g, "binomial")


def test_threads_do_not_change_results():
    g = grid_for(n_time=16)
    p = PrincipleSpec(PrincipleKind.COST_OF_CAPITAL, delta=0.06)
    f = make_payoff("Call", [0.2])
    a = backward_induct(ABM, f, p, g, "quadrinomial", threads=1)
    b = backward_induct(ABM, f, p, g, "quadrinomial", threads=4)
    assert a.values.tobytes() == b.values.tobytes()


def test_narrow_domain_warns():
    g = grid_for(n_time=4, n_space=9, n_stddevs=0.5)
    s = backward_induct(ABM, IDENTITY, PrincipleSpec(PrincipleKind.VARIANCE, alpha=1.0), g)
    assert s.meta["warnings"]


@given(st.integers(1, 19), st.sampled_from(["Variance", "StdDev", "CostOfCapital"]), st.floats(0.0, 1.0))
def test_time_consistency_composition(split, kind, risk):
    g = grid_for(n_time=20, n_space=81)
    spec = PrincipleSpec(kind, alpha=risk, beta=risk, delta=risk)
    tree = TreeKind.QUADRINOMIAL if kind == "CostOfCapital" else TreeKind.BINOMIAL
    f = make_payoff("Call", [0.3])
    full = backward_induct(ABM, f, spec, g, tree)
    part = backward_induct(ABM, f, spec, g, tree, terminal_index=split, terminal_values=full.values[split])
    assert part.values[: split + 1].tobytes() == full.values[: split + 1].tobytes()


@given(
    st.floats(-0.5, 0.5), st.floats(0.2, 2.0), st.floats(0.0, 1.0),
    st.sampled_from(["Variance", "StdDev", "CostOfCapital"]),
    st.sampled_from([("Call", [0.1], 1), ("Put", [0.0], -1), ("Linear", [-2.0, 1.0], -1)]),
)
def test_rows_monotone_in_state(a, b, risk, kind, payoff):
    model = make_model("ABM", {"a": a, "b": b})
    g = grid_for(n_time=10, n_space=61, model=model)
    spec = PrincipleSpec(kind, alpha=risk, beta=risk, delta=risk)
    tree = TreeKind.QUADRINOMIAL if kind == "CostOfCapital" else TreeKind.BINOMIAL
    name, params, sign = payoff
    s = backward_induct(model, make_payoff(name, params), spec, g, tree)
    assert np.all(sign * np.diff(s.values, axis=1) >= -1e-12)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.sampled_from(["Variance", "StdDev", "CostOfCapital"]))
def test_loading_monotonicity(r1, r2, kind):
    lo, hi = sorted((r1, r2))
    g = grid_for(n_time=10, n_space=61)
    tree = TreeKind.QUADRINOMIAL if kind == "CostOfCapital" else TreeKind.BINOMIAL
    f = make_payoff("Call", [0.0])
    a = backward_induct(ABM, f, PrincipleSpec(kind, alpha=lo, beta=lo, delta=lo), g, tree)
    b = backward_induct(ABM, f, PrincipleSpec(kind, alpha=hi, beta=hi, delta=hi), g, tree)
    assert np.all(b.values >= a.values - 1e-12)


def test_quadrinomial_coc_tracks_stddev_binomial():
    c = calibrate_quadrinomial(0.995)
    delta = 0.06
    f = make_payoff("Linear", [1.0, 0.0])
    errs = []
    for n in (32, 64):
        g = grid_for(n_time=n, n_space=241)
        coc = backward_induct(ABM, f, PrincipleSpec(PrincipleKind.COST_OF_CAPITAL, delta=delta), g, "quadrinomial")
        sd = backward_induct(ABM, f, PrincipleSpec(PrincipleKind.STDDEV, beta=delta * c.k), g, "binomial")
        mask = g.window(0.5)
        errs.append(np.max(np.abs(coc.values[0] - sd.values[0])[mask]))
    assert max(errs) < 1e-10


def test_quadrinomial_coc_approaches_stddev_binomial_for_kinked_payoff():
    c = calibrate_quadrinomial(0.995)
    delta = 0.06
    f = make_payoff("Call", [0.0])
    errs = []
    for n in (16, 64, 256):
        g = grid_for(n_time=n, n_space=20 * int(math.sqrt(n)) * 6 + 1)
        coc = backward_induct(ABM, f, PrincipleSpec(PrincipleKind.COST_OF_CAPITAL, delta=delta), g, "quadrinomial")
        sd = backward_induct(ABM, f, PrincipleSpec(PrincipleKind.STDDEV, beta=delta * c.k), g, "binomial")
        errs.append(np.max(np.abs(coc.values[0] - sd.values[0])[g.window(0.5)]))
    assert errs[0] > errs[1] > errs[2]
    # the value-at-risk of a curved price picks up a sqrt(dt) bias, so
    # quartering dt only halves the gap
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.25)
