"""Feedback synthesis from a stored value field and closed-loop checks.

The feedback law is the one-step lookahead over the discrete control set,
evaluated with the same candidate formula the solver minimizes, so the
minimized candidate at a node reproduces the solver's value there.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .analysis import local_value_band
from .dynamics import (CostSpec, SystemModel, TargetSet, Trajectory, integrate_step,
                       running_cost_max, stage_cost)
from .errors import InputError
from .grid import OutOfDomain, ValueField, interpolate
from .solver import Transitions, minimize


def _dt(field: ValueField, dt: float | None) -> float:
    dt = field.meta.dt if dt is None else dt
    if not dt > 0:
        raise InputError("field carries no time step; pass dt explicitly")
    return dt


def control_candidates(field: ValueField, model: SystemModel, costs: CostSpec, target: TargetSet,
                       states: np.ndarray, dt: float | None = None,
                       policy: OutOfDomain = OutOfDomain.SATURATE) -> np.ndarray:
    """``C_K(s,u) + W(F_K(s,u))`` for every control, shape ``(controls, N)``."""
    tr = Transitions(field.grid, model, costs, target, _dt(field, dt), policy, points=states)
    return tr.candidates(field.values)


def optimal_controls(field: ValueField, model: SystemModel, costs: CostSpec, target: TargetSet,
                     states: np.ndarray, dt: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Batch feedback: returns ``(control indices, minimized candidate values)``."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    outside = ~field.grid.contains(states)
    if outside.any():
        raise InputError(f"state {states[outside][0].tolist()} is outside the grid domain")
    best, idx = minimize(control_candidates(field, model, costs, target, states, dt))
    return idx, best


def optimal_control(field: ValueField, model: SystemModel, costs: CostSpec, target: TargetSet,
                    s, dt: float | None = None) -> np.ndarray:
    idx, _ = optimal_controls(field, model, costs, target, np.asarray(s, dtype=np.float64)[None, :], dt)
    return model.control_values[idx[0]].copy()


def simulate_many(field: ValueField, model: SystemModel, costs: CostSpec, target: TargetSet,
                  starts: np.ndarray, max_steps: int, dt: float | None = None) -> list[Trajectory]:
    """Closed-loop runs from several starts, advanced in lockstep.

    Each run uses the true dynamics and running cost, checks target
    membership after every full step, and adds the endpoint cost at the
    first hitting state.
    """
    dt = _dt(field, dt)
    starts = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    n = starts.shape[0]
    if (~field.grid.contains(starts)).any():
        raise InputError("closed-loop start outside the grid domain")
    states = [[s.copy()] for s in starts]
    controls = [[] for _ in range(n)]
    running = [[0.0] for _ in range(n)]
    acc = np.zeros(n)
    cur = starts.copy()
    active = np.ones(n, dtype=bool)
    reached = np.zeros(n, dtype=bool)
    exited = np.zeros(n, dtype=bool)
    hit_step = np.full(n, -1)

    inside = target.contains(cur)
    reached |= inside
    hit_step[inside] = 0
    active &= ~inside

    for k in range(max_steps):
        if not active.any():
            break
        ids = np.flatnonzero(active)
        idx, _ = optimal_controls(field, model, costs, target, cur[ids], dt)
        u = model.control_values[idx]
        acc[ids] += stage_cost(costs, cur[ids], u, dt)
        nxt = integrate_step(model, cur[ids], u, dt)
        cur[ids] = nxt
        for j, i in enumerate(ids):
            controls[i].append(u[j].copy())
            states[i].append(nxt[j].copy())
            running[i].append(float(acc[i]))
        out = ~field.grid.contains(nxt)
        hit = target.contains(nxt) & ~out
        exited[ids[out]] = True
        reached[ids[hit]] = True
        hit_step[ids[hit]] = k + 1
        active[ids[out | hit]] = False

    trajs = []
    for i in range(n):
        total = float(acc[i])
        first = None
        if reached[i]:
            total += float(np.asarray(costs.endpoint_cost(cur[i][None, :]))[0])
            first = hit_step[i] * dt
            running[i][-1] = total
        trajs.append(Trajectory(
            times=[j * dt for j in range(len(states[i]))],
            states=[s.tolist() for s in states[i]],
            controls=[u.tolist() for u in controls[i]],
            accumulated_cost=total,
            reached_target=bool(reached[i]),
            first_hit_time=first,
            exited_domain=bool(exited[i]),
            running_costs=running[i],
        ))
    return trajs


def simulate_closed_loop(field: ValueField, model: SystemModel, costs: CostSpec, target: TargetSet,
                         s0, max_steps: int, dt: float | None = None) -> Trajectory:
    return simulate_many(field, model, costs, target, np.asarray(s0, dtype=np.float64)[None, :],
                         max_steps, dt)[0]


@dataclass
class LevelResult:
    J: float
    sample_count: int
    predicted_inside: int
    successes: int
    failures: list = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        return self.successes / self.predicted_inside if self.predicted_inside else float("nan")


@dataclass
class VerificationReport:
    levels: list = field(default_factory=list)
    band_cells: int = 2
    cost_tolerance: float = 0.0

    def to_dict(self) -> dict:
        out = {"band_cells": self.band_cells, "cost_tolerance": self.cost_tolerance, "levels": []}
        for lv in self.levels:
            d = asdict(lv)
            d["success_rate"] = lv.success_rate
            out["levels"].append(d)
        return out

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=float)
            fh.write("\n")


def slice_sampler(field: ValueField, fixed: dict | None = None, stride: int = 1) -> np.ndarray:
    """Grid nodes of a 2-D slice (every ``stride``-th node), embedded in the full state."""
    grid = field.grid
    fixed = dict(fixed or {})
    free = [d for d in range(grid.ndim) if d not in fixed]
    axes = [grid.axes[d].nodes()[::stride] for d in free]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.empty((mesh[0].size, grid.ndim))
    for j, d in enumerate(free):
        pts[:, d] = mesh[j].ravel()
    for d, v in fixed.items():
        pts[:, d] = v
    return pts


def verify_region(field: ValueField, model: SystemModel, costs: CostSpec, target: TargetSet,
                  levels: Sequence[float], samples: Iterable, band_cells: int = 2,
                  cost_tolerance: float | None = None, max_steps: int | None = None,
                  dt: float | None = None) -> VerificationReport:
    """Closed-loop check of predicted sub-level membership.

    A sample counts as predicted inside level ``J`` when ``W(s) <= J`` and
    ``J - W(s)`` exceeds the local value range over +-``band_cells`` cells.
    Success means reaching the target with accumulated cost at most
    ``J + cost_tolerance``; the default tolerance is ``2 * dt * c_max``.
    """
    dt = _dt(field, dt)
    pts = np.asarray(list(samples), dtype=np.float64)
    if cost_tolerance is None:
        c_max = running_cost_max(costs, model, field.grid.all_nodes())
        cost_tolerance = 2.0 * dt * c_max
    report = VerificationReport(band_cells=band_cells, cost_tolerance=cost_tolerance)
    if pts.size == 0:
        return report
    pts = pts.reshape(len(pts), field.grid.ndim)
    if max_steps is None:
        max_steps = 2 * max(field.meta.step_index, int(math.ceil(field.meta.horizon / dt)), 1)
    values = interpolate(field, pts, OutOfDomain.SATURATE)
    band = local_value_band(field, pts, band_cells)
    in_domain = field.grid.contains(pts)
    for J in levels:
        sel = np.flatnonzero(in_domain & (values <= J) & (J - values > band))
        res = LevelResult(float(J), len(pts), len(sel), 0)
        if len(sel):
            trajs = simulate_many(field, model, costs, target, pts[sel], max_steps, dt)
            for i, tr in zip(sel, trajs):
                if tr.reached_target and tr.accumulated_cost <= J + cost_tolerance:
                    res.successes += 1
                else:
                    res.failures.append({"sample": int(i), "state": pts[i].tolist(),
                                         "predicted": float(values[i]), "cost": tr.accumulated_cost,
                                         "reached": tr.reached_target, "exited": tr.exited_domain,
                                         "margin": float(tr.accumulated_cost - J)})
        report.levels.append(res)
    return report
