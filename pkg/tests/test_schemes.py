from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from horesnet import oracle as O
from horesnet.schemes import (
    EULER, MIDPOINT, RK4, RK4_LITE, TABLEAUS, VERNER, VERNER_CANONICAL, Block, DivergenceError, StepScale,
    euler_block, get_tableau, midpoint_block, op_counts, peak_live_states, retained_shortcuts, rk4_block,
    stacked_euler_chain, verner_block,
)
from horesnet.subnet import Dense2, make_stub
from horesnet.tensor import Tensor, no_grad, parameter, tsum

from conftest import check_grads


def stub_block(tab, resp="identity", h=1.0, learnable=False):
    step = StepScale(value=h, learnable=learnable)
    return Block(tab, [make_stub(resp) for _ in range(tab.s)], step)


def x1():
    return Tensor([1.0])


def test_stage_counts():
    assert [get_tableau(n).s for n in ("euler", "midpoint", "rk4", "verner")] == [1, 2, 4, 14]
    assert [get_tableau(n).layers_per_block for n in ("euler", "midpoint", "rk4", "verner")] == [2, 4, 8, 28]


@pytest.mark.parametrize("tab", list(TABLEAUS.values()), ids=list(TABLEAUS))
def test_explicit_structure(tab):
    for i, row in enumerate(tab.stages, start=1):
        assert all(1 <= j < i for j, _ in row)
    assert np.allclose(np.triu(tab.a()), 0)


@pytest.mark.parametrize("tab", [EULER, MIDPOINT, RK4])
def test_classical_weights_sum_to_one_exactly(tab):
    assert tab.exact_weight_sum() == Fraction(1)


def test_verner_printed_weights_sum():
    assert abs(VERNER.weight_sum() - 1.0) < 1e-2
    assert VERNER.weight_sum() == pytest.approx(0.9924, abs=1e-12)


def test_verner_canonical_is_consistent():
    assert VERNER_CANONICAL.weight_sum() == pytest.approx(1.0, abs=1e-14)
    assert VERNER_CANONICAL.exact_weight_sum() == Fraction(1)


def test_unknown_scheme_lists_valid_names():
    with pytest.raises(KeyError, match="rk4"):
        get_tableau("rk17")


def test_euler_block_examples():
    assert euler_block(stub_block(EULER), x1()).data[0] == 2.0
    assert euler_block(stub_block(EULER, 0.0), x1()).data[0] == 1.0
    x = Tensor([3.0, -1.5])
    np.testing.assert_array_equal(euler_block(stub_block(EULER), x).data, 2 * x.data)


def test_midpoint_block_examples():
    assert midpoint_block(stub_block(MIDPOINT), x1()).data[0] == 2.5
    assert midpoint_block(stub_block(MIDPOINT, 0.0), x1()).data[0] == 1.0


def test_rk4_block_examples():
    b = stub_block(RK4)
    assert rk4_block(b, x1()).data[0] == pytest.approx(1 + 10.25 / 6, abs=1e-15)
    assert rk4_block(b, x1(), lite=True).data[0] == 3.75
    z = stub_block(RK4, 0.0)
    assert rk4_block(z, x1()).data[0] == 1.0
    assert rk4_block(z, x1(), lite=True).data[0] == 1.0


def test_verner_zero_stubs_and_zero_h():
    assert verner_block(stub_block(VERNER, 0.0), x1()).data[0] == 1.0
    assert verner_block(stub_block(VERNER, "identity", h=0.0), Tensor([1.7])).data[0] == 1.7


def test_verner_printed_identity_stub_near_e():
    # printed coefficients, one step of y' = y with h = 1
    out = verner_block(stub_block(VERNER), x1()).data[0]
    assert abs(out - np.e) < 0.05


def test_verner_canonical_identity_stub_near_e():
    out = verner_block(stub_block(VERNER_CANONICAL), x1()).data[0]
    assert abs(out - np.e) < 1e-4


@pytest.mark.parametrize("name", list(TABLEAUS))
@pytest.mark.parametrize("lam", [-2.0, 0.5, 1.0])
@pytest.mark.parametrize("h", [0.5, 1.0])
def test_block_equals_oracle_step(name, lam, h):
    tab = get_tableau(name)
    out = stub_block(tab, lam, h=h)(Tensor([1.3])).data
    # the block's F carries no h, so a stub of lam*x with scale h matches y' = lam*y at step h
    ref = O.step(tab, lambda t, y: lam * y, 0.0, np.array([1.3]), h)
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)


def test_stacked_euler_chain():
    blocks = [stub_block(EULER) for _ in range(4)]
    out, ks = stacked_euler_chain(blocks[:2], x1())
    assert out.data[0] == 4.0 and len(ks) == 2
    assert stacked_euler_chain(blocks, x1())[0].data[0] == 16.0
    x = x1()
    assert stacked_euler_chain([], x)[0] is x


def test_divergence_reports_stage():
    b = stub_block(RK4, 1e308)
    with np.errstate(over="ignore"), pytest.raises(DivergenceError) as e:
        b(Tensor([10.0]))
    assert e.value.stage == 1


def test_learnable_h_gradient(rng):
    tab = get_tableau("verner-canonical-adaptive")
    stages = [Dense2(3, rng=rng, activation="tanh", norm=False) for _ in range(tab.s)]
    b = Block(tab, stages, StepScale(0.7, learnable=True))
    x = Tensor(rng.standard_normal((4, 3)))
    check_grads(lambda: tsum(b(x)), b.step.parameters() + stages[0].parameters() + stages[-1].parameters(),
                rtol=1e-5, atol=1e-8)


def test_per_stage_h_gradient(rng):
    stages = [Dense2(3, rng=rng, activation="tanh", norm=False) for _ in range(4)]
    step = StepScale(0.9, learnable=True, per_stage=4)
    b = Block(RK4, stages, step)
    x = Tensor(rng.standard_normal((5, 3)))
    check_grads(lambda: tsum(b(x) * b(x)), step.parameters(), rtol=1e-6, atol=1e-9)
    assert len(step.parameters()) == 4


def test_step_clamp_projection():
    s = StepScale(1.0, learnable=True, clamp=(0.125, 4.0))
    s.set(9.0)
    s.project()
    assert s.h == 4.0
    s.set(-1.0)
    s.project()
    assert s.h == 0.125


def test_static_shortcut_counts():
    assert retained_shortcuts(EULER) == 1
    assert retained_shortcuts(MIDPOINT) == 1
    assert retained_shortcuts(RK4) == 4
    assert retained_shortcuts(RK4, accumulate=True) == 2
    assert retained_shortcuts(RK4_LITE) == 1


def test_midpoint_has_one_extra_multiply():
    assert op_counts(MIDPOINT)["extra_multiplies"] == 1
    assert op_counts(EULER)["extra_multiplies"] == 0


def test_peak_live_states_bounds():
    for tab in TABLEAUS.values():
        assert 1 <= peak_live_states(tab) <= retained_shortcuts(tab)


def test_to_dict_round_trips_values():
    d = RK4.to_dict()
    assert [t["value"] for t in d["output_rule"]["terms"]] == pytest.approx([1 / 6, 1 / 3, 1 / 3, 1 / 6])
    assert d["stage_rules"][1]["terms"][0]["expr"] == "1/2"


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["euler", "midpoint", "rk4", "verner-canonical"]),
       st.floats(-3, 3), st.floats(0.05, 1.0), st.floats(-5, 5))
def test_linear_stub_block_matches_stability_polynomial(name, lam, h, x0):
    # for y' = lam*y one step multiplies by R(h*lam) = 1 + z b^T (I - zA)^-1 1
    tab = get_tableau(name)
    z = h * lam
    A, b = tab.a(), tab.b()
    R = 1 + z * b @ np.linalg.solve(np.eye(tab.s) - z * A, np.ones(tab.s))
    out = stub_block(tab, lam, h=h)(Tensor([x0])).data[0]
    assert out == pytest.approx(R * x0, rel=1e-10, abs=1e-10)
