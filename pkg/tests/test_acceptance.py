"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test prints a ``criterion N [PASS|FAIL]`` line; the lines are also
collected into a summary section at the end of the pytest run.
"""
import math
import time

import numpy as np
import pytest

from costreach.analysis import mask
from costreach.control import slice_sampler, verify_region
from costreach.dynamics import builtin_system, running_cost_max
from costreach.grid import GridSpec, load_field, save_field
from costreach.oracle import brute_force_many, compare_field, probe_lattice
from costreach.solver import SolverConfig, compute_horizon, solve

from conftest import record_criterion

SQUARE = [(-1, 1), (-1, 1)]
FLIGHT_BOUNDS = [(-4, 4), (-4, 4), (0, 2 * math.pi)]
FLIGHT_GRID = GridSpec.from_bounds(FLIGHT_BOUNDS, [65, 65, 64], [False, False, True])
FLIGHT_DT = 0.04
PROBES = probe_lattice([(-0.8, 0.8), (-0.8, 0.8)], 15)  # 225 interior probes


def min_time_checks(field, model, costs, target, levels):
    """Bounds [0, m*dt], nested masks, and exact endpoint values inside the target."""
    m_dt = field.meta.step_index * field.meta.dt
    nodes = field.grid.all_nodes()
    inside = target.contains(nodes)
    masks = [mask(field, J) for J in levels]
    return {
        "min": float(field.values.min()),
        "max": float(field.values.max()),
        "bound": m_dt,
        "in_bounds": bool(field.values.min() >= 0.0 and field.values.max() <= m_dt + 1e-9),
        "nest_violations": sum(int((a & ~b).sum()) for a, b in zip(masks, masks[1:])),
        "target_exact": bool(np.array_equal(field.values[inside], costs.endpoint_cost(nodes[inside]))),
    }


@pytest.fixture(scope="module")
def poly3():
    return builtin_system("two_dim_poly", control_count=3)


@pytest.fixture(scope="module")
def poly_pair_101():
    """Full 2-D settings (dt=0.02, 21 controls) at 101x101 with m=55 and m=105."""
    model, costs, target = builtin_system("two_dim_poly")
    g = GridSpec.from_bounds(SQUARE, [101, 101])
    short, _ = solve(model, costs, target, g, SolverConfig(dt=0.02, steps=55))
    long, _ = solve(model, costs, target, g, SolverConfig(dt=0.02, steps=105))
    return short, long


@pytest.fixture(scope="module")
def flight_case1():
    model, costs, target = builtin_system("planar_flight")
    cfg = SolverConfig.build(dt=FLIGHT_DT, levels=[1.5, 3.0], lam=costs.lam, Lam=costs.Lam)
    field, _ = solve(model, costs, target, FLIGHT_GRID, cfg)
    return field, (model, costs, target), cfg


@pytest.fixture(scope="module")
def flight_case2():
    model, costs, target = builtin_system("planar_flight", gamma=0.1, endpoint="exp")
    levels = [0.75, 1.5, 2.25, 3.0]
    cfg = SolverConfig.build(dt=FLIGHT_DT, levels=levels, lam=costs.lam, Lam=costs.Lam)
    field, _ = solve(model, costs, target, FLIGHT_GRID, cfg)
    return field, (model, costs, target), cfg


def test_criterion_1_oracle_agreement(poly3):
    model, costs, target = poly3
    t0 = time.perf_counter()
    g = GridSpec.from_bounds(SQUARE, [41, 41])
    field, _ = solve(model, costs, target, g, SolverConfig(dt=0.1, steps=10))
    results = brute_force_many(model, costs, target, PROBES, 10, 0.1, domain=SQUARE)
    assert all(r.sequence_count <= 3 ** 10 * 3 for r in results)
    stats = compare_field(field, results, thresholds=[0.5], band_cells=2)
    within = stats.fraction_within(0.1 + 0.1)
    agree, considered = stats.agreement[0.5]
    elapsed = time.perf_counter() - t0
    ok = stats.count >= 200 and within >= 0.90 and agree / considered >= 0.90 and elapsed < 120
    record_criterion(1, "oracle agreement (2-D, 41x41)", ok,
                     f"{stats.count} probes, |W-J*|<=0.2 at {within:.1%}, J=0.5 agreement "
                     f"{agree}/{considered} outside band, mean err {stats.mean_abs:.4f}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_stabilization(poly_pair_101):
    short, long = poly_pair_101
    sel = long.values <= 55 * 0.02 - 2 * 0.02
    diff = np.abs(short.values[sel] - long.values[sel])
    bad = int(np.sum(diff > 1e-9))
    ok = bad == 0
    record_criterion(2, "stabilization m=55 vs m=105 (101x101)", ok,
                     f"{bad} of {int(sel.sum())} nodes with value <= 1.06 differ by > 1e-9 "
                     f"(max diff {diff.max():.3g})")
    assert ok


def test_criterion_3_nesting_and_bounds(poly3, poly_pair_101, flight_case1):
    levels = [0.5, 1.0, 1.5, 2.0]
    checks = []
    model, costs, target = poly3
    small, _ = solve(model, costs, target, GridSpec.from_bounds(SQUARE, [41, 41]),
                     SolverConfig(dt=0.1, steps=10))
    checks.append(("41x41 m=10", min_time_checks(small, model, costs, target, levels)))
    model, costs, target = builtin_system("two_dim_poly")
    for f in poly_pair_101:
        checks.append((f"101x101 m={f.meta.step_index}", min_time_checks(f, model, costs, target, levels)))
    field, problem, _ = flight_case1
    checks.append(("flight 65x65x64", min_time_checks(field, *problem, [0.75, 1.5, 2.25, 3.0])))
    failed = [name for name, c in checks
              if not (c["in_bounds"] and c["nest_violations"] == 0 and c["target_exact"])]
    ok = not failed
    record_criterion(3, "nesting and bounds (min-time fields)", ok,
                     f"{len(checks)} fields, failing: {failed or 'none'}, "
                     f"nesting violations {sum(c['nest_violations'] for _, c in checks)}")
    assert ok


def test_criterion_4_closed_loop_case1(flight_case1):
    field, (model, costs, target), cfg = flight_case1
    assert cfg.steps == math.ceil(3.1 / FLIGHT_DT)
    samples = slice_sampler(field, {2: math.pi})
    c_max = running_cost_max(costs, model, field.grid.all_nodes())
    rep = verify_region(field, model, costs, target, [1.5, 3.0], samples, band_cells=2,
                        cost_tolerance=2 * FLIGHT_DT * c_max)
    parts, ok = [], True
    for lv in rep.levels:
        ok &= lv.predicted_inside >= 100 and lv.success_rate >= 0.95
        parts.append(f"J={lv.J:g}: {lv.successes}/{lv.predicted_inside} ({lv.success_rate:.1%})")
    record_criterion(4, "closed-loop verification, planar flight case 1", ok,
                     f"m={cfg.steps}, " + ", ".join(parts))
    assert ok


def test_criterion_5_cost_limited_case2(flight_case2):
    field, (model, costs, target), cfg = flight_case2
    levels = [0.75, 1.5, 2.25, 3.0]
    horizon = compute_horizon(3.0, costs.lam, costs.Lam, 0.1)
    masks = [mask(field, J) for J in levels]
    violations = sum(int((a & ~b).sum()) for a, b in zip(masks, masks[1:]))
    samples = slice_sampler(field, {2: math.pi})
    rep = verify_region(field, model, costs, target, [3.0], samples, band_cells=2)
    lv = rep.levels[0]
    ok = horizon == pytest.approx(4.1, abs=1e-12) and violations == 0 and lv.predicted_inside > 0 \
        and lv.success_rate >= 0.90
    record_criterion(5, "cost-limited generalization, planar flight case 2", ok,
                     f"auto-horizon {horizon:.12g} (m={cfg.steps}), nesting violations {violations}, "
                     f"J=3: {lv.successes}/{lv.predicted_inside} ({lv.success_rate:.1%})")
    assert ok


def test_criterion_6_refinement_trend(poly3):
    model, costs, target = poly3
    dt, steps = 0.02, 10
    results = brute_force_many(model, costs, target, PROBES, steps, dt, domain=SQUARE)
    errors = []
    for n in (51, 101, 201):
        field, _ = solve(model, costs, target, GridSpec.from_bounds(SQUARE, [n, n]),
                         SolverConfig(dt=dt, steps=steps))
        errors.append(compare_field(field, results).mean_abs)
    ok = errors[0] >= errors[1] >= errors[2]
    record_criterion(6, "grid-refinement trend (51^2, 101^2, 201^2)", ok,
                     "mean |W-J*| " + " >= ".join(f"{e:.5f}" for e in errors))
    assert ok


def test_criterion_7_determinism(tmp_path, poly3, flight_case1):
    model, costs, target = poly3
    g = GridSpec.from_bounds(SQUARE, [101, 101])
    files = []
    for i, workers in enumerate((1, 1, 4)):
        f, _ = solve(model, costs, target, g, SolverConfig(dt=0.02, steps=40, workers=workers))
        files.append(save_field(f, tmp_path / f"run{i}.rchf").read_bytes())
    repeat_ok = files[0] == files[1]
    parallel_ok = files[0] == files[2]

    field3, problem, cfg = flight_case1
    p3 = save_field(field3, tmp_path / "flight.rchf")
    back = load_field(p3)
    roundtrip_ok = back.values.tobytes() == field3.values.tobytes() and back.meta == field3.meta \
        and back.grid == field3.grid
    g3 = GridSpec.from_bounds(FLIGHT_BOUNDS, [33, 33, 32], [False, False, True])
    a, _ = solve(*problem, g3, SolverConfig(dt=FLIGHT_DT, steps=10, workers=1))
    b, _ = solve(*problem, g3, SolverConfig(dt=FLIGHT_DT, steps=10, workers=3))
    parallel3_ok = a.values.tobytes() == b.values.tobytes()
    ok = repeat_ok and parallel_ok and roundtrip_ok and parallel3_ok
    record_criterion(7, "determinism and persistence", ok,
                     f"repeat identical={repeat_ok}, parallel 2-D identical={parallel_ok}, "
                     f"parallel 3-D identical={parallel3_ok}, round-trip bit-exact={roundtrip_ok}")
    assert ok
