import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from costreach.dynamics import (CostSpec, SystemModel, TargetSet, builtin_system, control_grid,
                                estimate_cost_bounds, frozen_stage_cost, frozen_step, integrate_step,
                                stage_cost)
from costreach.errors import AssumptionViolation, InputError, ModelError

from conftest import reference_rk4

# frozen from the 1024-substep reference integrator in conftest
PLANAR_ORIGIN_STEP = [0.01999866667733247, -0.00019999733283558317, 0.0]
POLY_STEP = [0.5051508401546247, 0.009949000745410785]


def planar_rhs(s):
    x, y, th = s
    return np.array([math.cos(th) + y + 0.1 * y ** 3, math.sin(th) - x - 0.1 * x ** 3, 0.0])


def poly_rhs(s, u=1.0):
    x, y = s
    return np.array([y + x * x, -x + y ** 3 + u])


@pytest.fixture(scope="module")
def planar():
    return builtin_system("planar_flight")


@pytest.fixture(scope="module")
def poly():
    return builtin_system("two_dim_poly")


def test_zero_field_is_identity():
    model = SystemModel("zero", 2, [[0.0]], lambda s, u: np.zeros_like(s))
    np.testing.assert_array_equal(integrate_step(model, [0.3, -0.7], [0.0], 0.5), [0.3, -0.7])


def test_planar_step_from_origin(planar):
    model, _, _ = planar
    got = integrate_step(model, [0.0, 0.0, 0.0], [0.0], 0.02)
    np.testing.assert_allclose(got, reference_rk4(planar_rhs, [0, 0, 0], 0.02), atol=1e-10)
    np.testing.assert_allclose(got, PLANAR_ORIGIN_STEP, atol=1e-10)


def test_poly_step(poly):
    model, _, _ = poly
    got = integrate_step(model, [0.5, 0.0], [1.0], 0.02)
    np.testing.assert_allclose(got, reference_rk4(poly_rhs, [0.5, 0.0], 0.02), atol=1e-10)
    np.testing.assert_allclose(got, POLY_STEP, atol=1e-10)


def test_rk4_fourth_order(poly):
    model, _, _ = poly
    ref = reference_rk4(poly_rhs, [0.5, 0.0], 0.2, substeps=4096)

    def err(n):
        s = np.array([0.5, 0.0])
        for _ in range(n):
            s = integrate_step(model, s, [1.0], 0.2 / n)
        return np.abs(s - ref).max()

    ratio = err(2) / err(4)
    assert 12 < ratio < 20


def test_non_finite_derivative_raises():
    model = SystemModel("bad", 1, [[0.0]], lambda s, u: s / 0.0)
    with np.errstate(all="ignore"), pytest.raises(ModelError):
        integrate_step(model, [1.0], [0.0], 0.1)


def test_heading_wraps(planar):
    model, _, _ = planar
    s = integrate_step(model, [0.0, 0.0, 2 * math.pi - 0.01], [1.0], 0.02)
    assert 0.0 <= s[2] < 2 * math.pi
    assert s[2] == pytest.approx(0.01, abs=1e-12)


def test_frozen_step_branches(poly):
    model, _, target = poly
    np.testing.assert_array_equal(frozen_step(model, target, [0.1, -0.1], [1.0], 0.02), [0.1, -0.1])
    np.testing.assert_array_equal(frozen_step(model, target, [0.2, 0.2], [1.0], 0.02), [0.2, 0.2])
    outside = [0.5, 0.0]
    np.testing.assert_array_equal(frozen_step(model, target, outside, [1.0], 0.02),
                                  integrate_step(model, outside, [1.0], 0.02))


def test_target_box_boundary_is_inside():
    k = TargetSet(boxes=[((-0.2, 0.2), (-0.2, 0.2))])
    assert k.contains([0.2, -0.2])
    assert not k.contains([0.2000001, 0.0])


def test_target_unbounded_dimension(planar):
    _, _, target = planar
    assert target.contains([0.0, 2.0, 5.0])
    assert not target.contains([0.0, 0.0, 0.0])


def test_stage_cost_unit(poly):
    _, costs, _ = poly
    assert stage_cost(costs, [0.5, 0.5], [0.0], 0.02) == pytest.approx(0.02)
    assert stage_cost(costs, [0.5, 0.5], [0.0], 0.0) == 0.0


def test_stage_cost_path_length():
    _, costs, _ = builtin_system("planar_flight", gamma=0.1)
    # heading 0 at the origin: wind vanishes, speed is exactly 1
    assert stage_cost(costs, [0.0, 0.0, 0.0], [0.0], 0.02) == pytest.approx(1.1 * 0.02)


def test_frozen_stage_cost(poly):
    _, costs, target = poly
    assert frozen_stage_cost(costs, target, [0.0, 0.0], [1.0], 0.02) == 0.0
    assert frozen_stage_cost(costs, target, [0.5, 0.0], [1.0], 0.02) == pytest.approx(0.02)
    _, fc, ft = builtin_system("planar_flight", gamma=0.1)
    s = [1.0, -1.0, 0.3]
    assert frozen_stage_cost(fc, ft, s, [0.0], 0.02) == stage_cost(fc, s, [0.0], 0.02)


def test_builtin_values(poly):
    model, _, _ = poly
    np.testing.assert_array_equal(model.vector_field(np.zeros((1, 2)), np.zeros((1, 1))), [[0.0, 0.0]])
    pm, _, _ = builtin_system("planar_flight")
    d = pm.vector_field(np.array([[1.0, 0.0, math.pi / 2]]), np.zeros((1, 1)))
    # heading pi/2 contributes (0, 1); subtract it to isolate the wind
    np.testing.assert_allclose(d[0, :2] - [0.0, 1.0], [0.0, -1.1], atol=1e-15)
    _, c2, _ = builtin_system("planar_flight", gamma=0.1, endpoint="exp")
    assert c2.endpoint_cost(np.zeros((1, 3)))[0] == pytest.approx(-1.0)
    assert c2.Lam == -1.0 and c2.lam == 1.0


def test_default_control_count():
    assert control_grid(-1, 1).shape == (21, 1)
    assert builtin_system("planar_flight")[0].control_count == 21


def test_unknown_builtin():
    with pytest.raises(InputError):
        builtin_system("pendulum")
    with pytest.raises(InputError):
        builtin_system("planar_flight", endpoint="quadratic")


def test_lambda_must_be_positive():
    with pytest.raises(AssumptionViolation):
        CostSpec(lambda s, u: np.zeros(len(s)), lambda s: np.zeros(len(s)), 0.0, 0.0)


def test_sampled_bounds():
    model, costs, _ = builtin_system("planar_flight", gamma=0.1, endpoint="exp")
    nodes = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [-3.0, 2.0, 4.0]])
    lam, Lam, cmax = estimate_cost_bounds(costs.running_cost, costs.endpoint_cost, model, nodes)
    assert lam >= 1.0 and Lam == pytest.approx(-1.0) and cmax >= lam
    costs.check_bounds(model, nodes)


@settings(max_examples=50, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4), st.floats(0, 2 * math.pi), st.floats(-1, 1))
def test_flight_cost_bounds_hold(x, y, th, u):
    _, costs, _ = builtin_system("planar_flight", gamma=0.1, endpoint="exp")
    s = np.array([[x, y, th]])
    assert costs.running_cost(s, np.array([[u]]))[0] >= costs.lam - 1e-12
    assert costs.endpoint_cost(s)[0] >= costs.Lam - 1e-12
