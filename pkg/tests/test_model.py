"""Unit tests for the utility families and global parameter derivation."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from od3sim.model import (
    Dimensions,
    GlobalParams,
    QuadraticUtility,
    SeparableUtility,
    derive_global_params,
    gradient_drift,
    local_demand,
    stack_quadratics,
)
from od3sim.traces import synth_trace


class SoftQuadratic(SeparableUtility):
    """Non-quadratic separable test family:
    U(q) = -||q - s||^2 - sum_r log cosh(q_r - s_r).

    Marginal curvature is 2 + sech^2 in [2, 3], so sigma = 2, L = 3; the
    inverse gradient has no closed form, which exercises the bisection path.
    """

    def __init__(self, target):
        self._target = np.asarray(target, dtype=float)

    def value(self, q):
        d = np.asarray(q, dtype=float) - self._target
        out = -np.sum(d * d, axis=-1) - np.sum(np.log(np.cosh(d)), axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def gradient(self, q):
        d = np.asarray(q, dtype=float) - self._target
        return -2.0 * d - np.tanh(d)

    @property
    def sigma(self):
        return 2.0

    @property
    def lipschitz_grad(self):
        return 3.0

    @property
    def n_suppliers(self):
        return int(self._target.shape[0])


finite_vectors = st.lists(
    st.floats(min_value=-50, max_value=50, allow_nan=False), min_size=1, max_size=4
)


# ---------------------------------------------------------------------
# Dimensions / GlobalParams
# ---------------------------------------------------------------------


def test_dimensions_validation():
    with pytest.raises(ValueError):
        Dimensions(n_users=0, n_suppliers=1)
    with pytest.raises(ValueError):
        Dimensions(n_users=3, n_suppliers=0)
    d = Dimensions(n_users=3, n_suppliers=2)
    assert (d.n_users, d.n_suppliers) == (3, 2)


def test_global_params_validation():
    with pytest.raises(ValueError):
        GlobalParams(sigma=0.0, lipschitz_grad=1.0, gamma=0, alpha=0, eta=0.1, n_users=2)
    with pytest.raises(ValueError):
        GlobalParams(sigma=2.0, lipschitz_grad=1.0, gamma=0, alpha=0, eta=0.1, n_users=2)
    with pytest.raises(ValueError):
        GlobalParams(sigma=1.0, lipschitz_grad=1.0, gamma=-1, alpha=0, eta=0.1, n_users=2)
    with pytest.raises(ValueError):
        GlobalParams(sigma=1.0, lipschitz_grad=1.0, gamma=0, alpha=0, eta=0.0, n_users=2)


def test_eta_max_and_contraction_reference_values():
    """sigma = L = 2, N = 10: eta_max = 4/50 = 0.08 and c = sqrt(0.36) = 0.6."""
    p = GlobalParams(sigma=2.0, lipschitz_grad=2.0, gamma=0, alpha=0, eta=0.08, n_users=10)
    assert p.eta_max == pytest.approx(0.08, abs=1e-15)
    assert p.eta_in_proven_range
    assert p.contraction_factor == pytest.approx(0.6, abs=1e-12)
    assert not p.with_eta(0.08 * 1.01).eta_in_proven_range


def test_contraction_factor_undefined_raises():
    p = GlobalParams(sigma=2.0, lipschitz_grad=2.0, gamma=0, alpha=0, eta=10.0, n_users=10)
    with pytest.raises(ValueError, match="radicand"):
        p.contraction_factor


def test_drift_constant_and_floor():
    p = GlobalParams(sigma=2.0, lipschitz_grad=2.0, gamma=1.0, alpha=0.5, eta=0.08, n_users=10)
    # b = L^2 (gamma/(sigma N) + alpha/sigma^2)
    assert p.drift_constant == pytest.approx(4 * (1.0 / 20 + 0.5 / 4), rel=1e-12)
    assert p.tracking_floor == pytest.approx(p.drift_constant / 0.4, rel=1e-12)


# ---------------------------------------------------------------------
# QuadraticUtility
# ---------------------------------------------------------------------


@given(finite_vectors, st.floats(min_value=0.1, max_value=10))
@settings(max_examples=100, deadline=None)
def test_quadratic_gradient_inverse_roundtrip(target, scale):
    u = QuadraticUtility(target=np.array(target), scale=scale)
    q = np.array(target) + 1.7
    p = u.gradient(q)
    np.testing.assert_allclose(u.inverse_gradient(p), q, atol=1e-12)
    assert u.sigma == u.lipschitz_grad == pytest.approx(2 * scale)


def test_quadratic_validation():
    with pytest.raises(ValueError):
        QuadraticUtility(target=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        QuadraticUtility(target=np.zeros(2), scale=0.0)


def test_quadratic_target_is_locked():
    u = QuadraticUtility(target=np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        u.target[0] = 9.0


def test_quadratic_batched_shapes():
    u = QuadraticUtility(target=np.array([1.0, 2.0]))
    p = np.zeros((7, 3, 2))
    assert u.inverse_gradient(p).shape == (7, 3, 2)
    assert u.gradient(p).shape == (7, 3, 2)
    assert u.value(p).shape == (7, 3)


@given(finite_vectors)
@settings(max_examples=50, deadline=None)
def test_local_demand_is_optimal(target):
    """demand(p) maximizes value(q) - p.q: random perturbations never win."""
    u = QuadraticUtility(target=np.array(target), scale=1.3)
    price = np.linspace(-1, 1, u.n_suppliers)
    q = local_demand(u, price)
    obj = u.value(q) - price @ q
    rng = np.random.default_rng(0)
    for _ in range(10):
        q2 = q + rng.normal(scale=0.5, size=q.shape)
        assert u.value(q2) - price @ q2 <= obj + 1e-9


def test_local_demand_shape_check():
    u = QuadraticUtility(target=np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        local_demand(u, np.zeros(3))


def test_lipschitz_value_on_is_max_gradient_norm():
    u = QuadraticUtility(target=np.array([1.0, -2.0]), scale=0.7)
    lo, hi = np.array([-3.0, -3.0]), np.array([4.0, 4.0])
    exact = u.lipschitz_value_on(lo, hi)
    # dense probe of the box can't beat the corner formula
    axes = [np.linspace(lo[r], hi[r], 41) for r in range(2)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 2)
    probed = np.max(np.linalg.norm(u.gradient(mesh), axis=-1))
    assert probed <= exact + 1e-12
    assert exact == pytest.approx(probed, rel=1e-6)  # corners are on the grid


# ---------------------------------------------------------------------
# Numeric inverse (SeparableUtility bisection)
# ---------------------------------------------------------------------


def test_soft_quadratic_inverse_bisection():
    u = SoftQuadratic(target=[1.0, -2.0, 0.5])
    rng = np.random.default_rng(3)
    p = rng.normal(scale=4.0, size=(20, 3))
    q = u.inverse_gradient(p)
    np.testing.assert_allclose(u.gradient(q), p, atol=1e-10)


def test_soft_quadratic_inverse_scalar_shape():
    u = SoftQuadratic(target=[0.0])
    p = np.array([2.5])
    q = u.inverse_gradient(p)
    assert q.shape == (1,)
    assert abs(float(u.gradient(q)[0]) - 2.5) < 1e-10


# ---------------------------------------------------------------------
# stack_quadratics / gradient_drift / derive_global_params
# ---------------------------------------------------------------------


def test_stack_quadratics_roundtrip_and_rejections():
    tr = synth_trace(Dimensions(n_users=3, n_suppliers=2), 4, 0.2, 0.3, seed=1)
    grid = [
        [QuadraticUtility(target=tr.targets[t, i], scale=1.0 + i) for i in range(3)]
        for t in range(4)
    ]
    stacked = stack_quadratics(grid)
    assert stacked is not None
    targets, scales = stacked
    np.testing.assert_array_equal(targets, tr.targets)
    np.testing.assert_array_equal(scales, [1.0, 2.0, 3.0])

    grid_mixed = [row[:] for row in grid]
    grid_mixed[2][1] = SoftQuadratic(target=tr.targets[2, 1])
    assert stack_quadratics(grid_mixed) is None

    grid_var = [row[:] for row in grid]
    grid_var[1][0] = QuadraticUtility(target=tr.targets[1, 0], scale=9.0)
    assert stack_quadratics(grid_var) is None


def test_gradient_drift_quadratic_exact_and_scale_change():
    a = QuadraticUtility(target=np.array([1.0, 1.0]), scale=2.0)
    b = QuadraticUtility(target=np.array([1.0, 4.0]), scale=2.0)
    assert gradient_drift(a, b) == pytest.approx(2 * 2.0 * 3.0)
    with pytest.raises(ValueError, match="scale"):
        gradient_drift(a, QuadraticUtility(target=a.target, scale=3.0))


def test_derive_global_params_from_trace():
    tr = synth_trace(Dimensions(n_users=4, n_suppliers=1), horizon=30, gamma=0.5,
                     alpha=0.25, seed=9)
    grid = [[QuadraticUtility(target=tr.targets[t, i]) for i in range(4)] for t in range(30)]
    p = derive_global_params(grid, tr)
    assert p.sigma == p.lipschitz_grad == 2.0
    assert p.gamma == tr.realized_gamma
    # alpha is the realized gradient drift, exact for quadratics
    steps = 2.0 * np.linalg.norm(np.diff(tr.targets, axis=0), axis=-1)
    assert p.alpha == pytest.approx(float(steps.max()), rel=1e-12)
    assert p.eta == pytest.approx(p.eta_max)  # default step size


def test_derive_global_params_shape_mismatch():
    tr = synth_trace(Dimensions(n_users=2, n_suppliers=1), horizon=5, gamma=0, alpha=0, seed=0)
    grid = [[QuadraticUtility(target=tr.targets[t, i]) for i in range(2)] for t in range(4)]
    with pytest.raises(ValueError):
        derive_global_params(grid, tr)
    with pytest.raises(ValueError, match="empty"):
        derive_global_params([], tr)
