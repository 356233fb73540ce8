"""Online price-update loop tests: step semantics, sign conventions, and the
vectorized fast path's bit-for-bit agreement with the generic loop."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from od3sim.model import Dimensions, QuadraticUtility, derive_global_params
from od3sim.od3 import (
    OnlineState,
    SignConvention,
    initial_state,
    od3_step,
    quadratic_population,
    run_od3,
)
from od3sim.oracle import aggregate_demand, solve_trace
from od3sim.traces import SystemTrace, synth_trace


def hand_example(horizon=6):
    """N=2, R=1, targets (3, 5), capacity 4, static."""
    caps = np.full((horizon, 1), 4.0)
    tgts = np.broadcast_to(np.array([[3.0], [5.0]]), (horizon, 2, 1)).copy()
    return SystemTrace.from_arrays(caps, tgts)


def test_hand_example_first_step_dual_descent():
    """p(0)=0: demands (3,5), excess 4, p(1) = 0 + 0.4*4 = 1.6."""
    tr = hand_example()
    uts = quadratic_population(tr)
    params = derive_global_params(uts, tr, eta=0.4)
    states = run_od3(tr, uts, params, np.zeros(1))
    np.testing.assert_allclose(states[0].allocations, [[3.0, 5.0]])
    np.testing.assert_allclose(states[0].excess, [4.0])
    np.testing.assert_allclose(states[1].price, [1.6])


def test_hand_example_first_step_paper_literal():
    tr = hand_example()
    uts = quadratic_population(tr)
    params = derive_global_params(uts, tr, eta=0.4)
    states = run_od3(tr, uts, params, np.zeros(1), SignConvention.PAPER_LITERAL)
    np.testing.assert_allclose(states[1].price, [-1.6])


def test_sign_convention_parse():
    assert SignConvention.parse("dual-descent") is SignConvention.DUAL_DESCENT
    assert SignConvention.parse("dual_descent") is SignConvention.DUAL_DESCENT
    assert SignConvention.parse("paper-literal") is SignConvention.PAPER_LITERAL
    with pytest.raises(ValueError):
        SignConvention.parse("sideways")


def test_online_state_validation_and_immutability():
    s = initial_state(
        [QuadraticUtility(target=np.array([3.0])), QuadraticUtility(target=np.array([5.0]))],
        np.array([4.0]),
        np.zeros(1),
    )
    assert s.t == 0
    with pytest.raises(ValueError):
        s.price[0] = 1.0
    with pytest.raises(ValueError):
        s.allocations[0, 0] = 1.0
    np.testing.assert_allclose(s.aggregate, [8.0])


def test_od3_step_rejects_nonpositive_eta():
    tr = hand_example(2)
    uts = quadratic_population(tr)
    s = initial_state(uts[0], tr.capacities[0], np.zeros(1))
    with pytest.raises(ValueError):
        od3_step(s, uts[1], tr.capacities[1], eta=0.0)


def test_run_od3_validates_shapes():
    tr = hand_example(3)
    uts = quadratic_population(tr)
    params = derive_global_params(uts, tr, eta=0.1)
    with pytest.raises(ValueError):
        run_od3(tr, uts[:-1], params, np.zeros(1))
    with pytest.raises(ValueError):
        run_od3(tr, uts, params, np.zeros(2))


def test_fast_path_matches_generic_loop_bitwise():
    """The all-quadratic vectorized run must equal od3_step exactly."""
    tr = synth_trace(Dimensions(n_users=5, n_suppliers=3), 40, 0.7, 0.9, seed=17)
    uts = quadratic_population(tr, scales=[0.5, 1.0, 1.5, 2.0, 2.5])
    params = derive_global_params(uts, tr)
    p0 = np.array([0.3, -0.2, 0.9])
    for sign in SignConvention:
        fast = run_od3(tr, uts, params, p0, sign)
        slow = [initial_state(uts[0], tr.capacities[0], p0)]
        for t in range(1, tr.horizon):
            slow.append(od3_step(slow[-1], uts[t], tr.capacities[t], params.eta, sign))
        for a, b in zip(fast, slow):
            assert np.array_equal(a.price, b.price)
            assert np.array_equal(a.allocations, b.allocations)
            assert np.array_equal(a.excess, b.excess)


def test_warm_start_static_is_fixed_point():
    tr = hand_example(20)
    uts = quadratic_population(tr)
    params = derive_global_params(uts, tr, eta=0.3)
    p_star = solve_trace(tr, uts)[0].price_opt
    states = run_od3(tr, uts, params, p_star)
    for s in states:
        np.testing.assert_allclose(s.price, p_star, atol=1e-12)
        np.testing.assert_allclose(s.excess, 0.0, atol=1e-12)


@given(seed=st.integers(min_value=0, max_value=10_000))
@settings(max_examples=25, deadline=None)
def test_excess_is_aggregate_demand_minus_capacity(seed):
    tr = synth_trace(Dimensions(n_users=3, n_suppliers=2), 6, 0.5, 0.5, seed=seed)
    uts = quadratic_population(tr)
    params = derive_global_params(uts, tr)
    states = run_od3(tr, uts, params, np.zeros(2))
    for t, s in enumerate(states):
        expect = aggregate_demand(uts[t], s.price) - tr.capacities[t]
        np.testing.assert_allclose(s.excess, expect, atol=1e-12)
        assert s.t == t


def test_paper_literal_diverges_on_static_example():
    """With the literal update the price error grows by 1 + eta*N/2 per step."""
    tr = hand_example(12)
    uts = quadratic_population(tr)
    params = derive_global_params(uts, tr, eta=0.4)
    p_star = solve_trace(tr, uts)[0].price_opt
    states = run_od3(tr, uts, params, np.zeros(1), SignConvention.PAPER_LITERAL)
    errs = [float(np.linalg.norm(s.price - p_star)) for s in states]
    growth = np.diff(np.log(errs))
    np.testing.assert_allclose(np.exp(growth), 1.4, rtol=1e-12)
