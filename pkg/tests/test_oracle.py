import numpy as np
import pytest

from horesnet import oracle as O
from horesnet.schemes import TABLEAUS, DivergenceError, get_tableau


def growth(t, y):
    return y


@pytest.mark.parametrize("name,expected", [("euler", 2.0), ("midpoint", 2.5), ("rk4", 1 + 10.25 / 6)])
def test_single_step_examples(name, expected):
    assert O.step(get_tableau(name), growth, 0.0, np.array([1.0]), 1.0)[0] == pytest.approx(expected, abs=1e-15)


def test_step_requires_positive_h():
    with pytest.raises(ValueError):
        O.step(get_tableau("euler"), growth, 0.0, np.array([1.0]), 0.0)


def test_step_reports_divergence():
    with np.errstate(over="ignore"), pytest.raises(DivergenceError):
        O.step(get_tableau("rk4"), lambda t, y: y * 1e308, 0.0, np.array([1e10]), 1.0)


@pytest.mark.parametrize("name", list(TABLEAUS))
def test_zero_rhs_is_constant(name):
    p = O.IVProblem("zero", lambda t, y: np.zeros_like(y), [0.7, -2.0], (0.0, 1.0))
    ts, ys = O.integrate(get_tableau(name), p, 5)
    assert len(ts) == 6
    np.testing.assert_array_equal(ys, np.tile([0.7, -2.0], (6, 1)))


def test_rk4_growth_ten_steps():
    _, ys = O.integrate(get_tableau("rk4"), O.growth_problem(), 10)
    assert abs(ys[-1, 0] - np.e) < 1e-6


def test_rk4_gaussian_long_span():
    _, ys = O.integrate(get_tableau("rk4"), O.gaussian_problem(t1=2.0), 100)
    assert abs(ys[-1, 0] - np.exp(-4.0)) < 1e-8


def test_integrate_needs_steps():
    with pytest.raises(ValueError):
        O.integrate(get_tableau("euler"), O.growth_problem(), 0)


def test_analytic_must_match_initial_value():
    with pytest.raises(ValueError):
        O.IVProblem("bad", growth, [2.0], (0.0, 1.0), lambda t: np.array([np.exp(t)]))


def test_euler_order_on_growth():
    assert O.measure_order(get_tableau("euler"), O.growth_problem(), O.DEFAULT_H).order == pytest.approx(1.0, abs=0.1)


def test_midpoint_order_on_growth():
    est = O.measure_order(get_tableau("midpoint"), O.growth_problem(), O.DEFAULT_H)
    assert est.order == pytest.approx(2.0, abs=0.1)


def test_rk4_order_on_gaussian():
    est = O.measure_order(get_tableau("rk4"), O.gaussian_problem(), O.DEFAULT_H)
    assert est.order == pytest.approx(4.0, abs=0.2)


def test_order_monotone_on_every_problem():
    for p in O.problem_suite():
        orders = [O.measure_order(get_tableau(n), p, O.DEFAULT_H).order for n in ("euler", "midpoint", "rk4")]
        assert orders[0] < orders[1] < orders[2]


def test_canonical_verner_underflow_shrinks_range():
    est = O.measure_order(get_tableau("verner-canonical"), O.growth_problem(), O.DEFAULT_H)
    assert "shrank" in est.note
    assert len(est.used) >= 4
    assert min(est.errors[i] for i in est.used) >= 1e-13
    assert est.order >= 7.0


def test_measure_order_input_contract():
    tab = get_tableau("euler")
    with pytest.raises(ValueError):
        O.measure_order(tab, O.growth_problem(), [0.5, 0.25, 0.125])
    with pytest.raises(ValueError):
        O.measure_order(tab, O.growth_problem(), [0.5, 0.25, 0.2, 0.1])


def test_problem_suite_is_fixed():
    assert [p.name for p in O.problem_suite()] == ["growth", "gaussian", "rotation"]


def test_tolerance_table_covers_every_tableau():
    assert set(O.ORDER_TOLERANCE) == set(TABLEAUS)


def test_rk4_growth_ten_steps_matches_exact_rational():
    # independent oracle: ten applications of the degree-4 Taylor polynomial at h = 1/10
    from fractions import Fraction
    h = Fraction(1, 10)
    exact = float((1 + h + h ** 2 / 2 + h ** 3 / 6 + h ** 4 / 24) ** 10)
    _, ys = O.integrate(get_tableau("rk4"), O.growth_problem(), 10)
    assert ys[-1, 0] == pytest.approx(exact, rel=1e-14)
