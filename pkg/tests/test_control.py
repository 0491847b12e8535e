import numpy as np
import pytest

from costreach.control import (control_candidates, optimal_control, optimal_controls, simulate_closed_loop,
                               simulate_many, slice_sampler, verify_region)
from costreach.dynamics import builtin_system
from costreach.errors import InputError
from costreach.grid import GridSpec, interpolate
from costreach.solver import SolverConfig, bellman_step, solve


@pytest.fixture(scope="module")
def integrator_field():
    model, costs, target = builtin_system("integrator_1d")
    g = GridSpec.from_bounds([(-1, 1)], [201])
    field, _ = solve(model, costs, target, g, SolverConfig(dt=0.01, steps=100))
    return field


def test_integrator_steers_toward_target(integrator_field):
    model, costs, target = builtin_system("integrator_1d")
    np.testing.assert_array_equal(optimal_control(integrator_field, model, costs, target, [0.5]), [-1.0])
    np.testing.assert_array_equal(optimal_control(integrator_field, model, costs, target, [-0.5]), [1.0])


def test_inside_target_returns_lowest_index(integrator_field):
    model, costs, target = builtin_system("integrator_1d")
    cand = control_candidates(integrator_field, model, costs, target, np.array([[0.05]]))
    assert np.all(cand == cand[0])
    np.testing.assert_array_equal(optimal_control(integrator_field, model, costs, target, [0.05]),
                                  model.control_values[0])


def test_out_of_domain_rejected(integrator_field):
    model, costs, target = builtin_system("integrator_1d")
    with pytest.raises(InputError):
        optimal_control(integrator_field, model, costs, target, [1.5])


def test_candidate_consistency_with_solver(poly_problem, poly_field):
    model, costs, target = poly_problem
    nodes = poly_field.grid.all_nodes()
    _, best = optimal_controls(poly_field, model, costs, target, nodes)
    nxt = bellman_step(poly_field, model, costs, target, SolverConfig(dt=0.1, steps=1))
    np.testing.assert_array_equal(best, nxt.values)


def test_candidate_near_field_value(poly_problem, poly_field):
    model, costs, target = poly_problem
    rng = np.random.default_rng(7)
    pts = rng.uniform(-0.9, 0.9, size=(40, 2))
    _, best = optimal_controls(poly_field, model, costs, target, pts)
    w = interpolate(poly_field, pts)
    valid = w < 0.8
    assert np.all(np.abs(best - w)[valid] <= 0.1 * 1.0 + 1e-12)


def test_start_in_target(poly_problem, poly_field):
    model, costs, target = poly_problem
    tr = simulate_closed_loop(poly_field, model, costs, target, [0.1, 0.1], 20)
    assert tr.reached_target and tr.first_hit_time == 0.0
    assert tr.accumulated_cost == 0.0 and tr.controls == []


def test_closed_loop_hits_in_time(poly_problem, poly_field):
    model, costs, target = poly_problem
    nodes = poly_field.grid.all_nodes()
    # interpolated values are not multiples of dt; take every node just below 0.4
    idx = np.flatnonzero((poly_field.values > 0.3) & (poly_field.values <= 0.4))
    assert idx.size > 10
    for s0 in nodes[idx]:
        tr = simulate_closed_loop(poly_field, model, costs, target, s0, 20)
        assert tr.reached_target
        assert tr.first_hit_time <= 0.5 + 2 * 0.1 + 1e-12


def test_trajectory_accounting(poly_problem, poly_field, tmp_path):
    model, costs, target = poly_problem
    tr = simulate_closed_loop(poly_field, model, costs, target, [0.6, -0.3], 20)
    assert len(tr.states) == len(tr.times) == len(tr.controls) + 1
    run = tr.running_costs[:-1] if tr.reached_target else tr.running_costs
    assert all(b >= a for a, b in zip(run, run[1:]))
    # lambda times elapsed time outside K
    assert tr.accumulated_cost >= costs.lam * (len(tr.states) - 1) * 0.1 - 1e-12
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,s0,s1,u0,J" and len(lines) == len(tr.states) + 1


def test_domain_exit_flagged(poly_problem, poly_field):
    model, costs, target = poly_problem
    trs = simulate_many(poly_field, model, costs, target, np.array([[0.98, 0.98]]), 30)
    assert not trs[0].reached_target and trs[0].exited_domain


def test_empty_sample_set(poly_problem, poly_field):
    model, costs, target = poly_problem
    rep = verify_region(poly_field, model, costs, target, [0.5], [])
    assert rep.levels == []


def test_verify_min_time_coarse(poly_problem, poly_field, tmp_path):
    model, costs, target = poly_problem
    samples = slice_sampler(poly_field, stride=2)
    rep = verify_region(poly_field, model, costs, target, [0.5, 0.8], samples)
    for lv in rep.levels:
        assert lv.successes <= lv.predicted_inside
        assert lv.predicted_inside > 0 and lv.success_rate >= 0.95
    rep.to_json(tmp_path / "v.json")


def test_slice_sampler_embeds_fixed():
    g = GridSpec.from_bounds([(-1, 1), (-1, 1), (0, 6)], [5, 3, 4], [False, False, True])
    from costreach.grid import ValueField
    f = ValueField(g, np.zeros(g.size))
    pts = slice_sampler(f, {2: 3.0})
    assert pts.shape == (15, 3) and (pts[:, 2] == 3.0).all()
