"""Backward dynamic-programming recursion for the frozen-target value field.

Each sweep computes, for every node ``s``::

    W'(s) = min_u [ C_K(s, u) + interp(W, F_K(s, u)) ]

with Jacobi-style double buffering.  The dynamics are time invariant, so the
per-control next-state stencils and stage costs are built once per solve and
reused by every sweep.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import CostSpec, SystemModel, TargetSet, frozen_stage_cost, frozen_step
from .errors import AssumptionViolation, InputError, ModelError, SolverError
from .grid import FieldMeta, GridSpec, OutOfDomain, Stencil, ValueField

log = logging.getLogger(__name__)

THREADS_ENV = "COSTREACH_THREADS"
DEFAULT_EPSILON = 0.1
CHANGE_TOL = 1e-12


def compute_horizon(J_max: float, lam: float, Lam: float, epsilon: float = DEFAULT_EPSILON) -> float:
    """Smallest horizon (plus slack) for which every level up to ``J_max`` is valid."""
    if not lam > 0:
        raise AssumptionViolation(f"lambda must be positive, got {lam}")
    if not epsilon > 0:
        raise InputError("epsilon must be positive")
    return (J_max - Lam) / lam + epsilon


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    steps: int
    epsilon: float = DEFAULT_EPSILON
    policy: OutOfDomain = OutOfDomain.SATURATE
    workers: Optional[int] = None
    # transition tables above this size are rebuilt every sweep instead of cached
    cache_limit_bytes: int = 2 << 30

    def __post_init__(self):
        if not self.dt > 0:
            raise InputError("dt must be positive")
        if int(self.steps) < 0:
            raise InputError("step count must be non-negative")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "policy", OutOfDomain(self.policy))

    @property
    def horizon(self) -> float:
        return self.steps * self.dt

    @classmethod
    def build(cls, *, dt: float | None = None, steps: int | None = None, horizon: float | None = None,
              levels: Sequence[float] | None = None, lam: float | None = None, Lam: float | None = None,
              epsilon: float = DEFAULT_EPSILON, **kw) -> "SolverConfig":
        """Resolve any two of ``dt``/``steps``/``horizon``, or derive the horizon from ``levels``.

        When both ``horizon`` and ``dt`` are given and do not divide evenly,
        the step count is rounded up, so the effective horizon is
        ``steps * dt >= horizon``.
        """
        if horizon is None and levels:
            if lam is None or Lam is None:
                raise InputError("auto-horizon needs lambda and Lambda")
            horizon = compute_horizon(max(levels), lam, Lam, epsilon)
        if dt is not None and steps is not None:
            if horizon is not None and abs(dt * steps - horizon) > 1e-9:
                raise InputError(f"steps*dt = {steps * dt} does not match horizon {horizon}")
            return cls(dt=dt, steps=steps, epsilon=epsilon, **kw)
        if horizon is None:
            raise InputError("need two of dt, steps, horizon (or levels for auto-horizon)")
        if steps is not None:
            return cls(dt=horizon / steps, steps=steps, epsilon=epsilon, **kw)
        if dt is not None:
            n = math.ceil(horizon / dt - 1e-9)
            return cls(dt=dt, steps=n, epsilon=epsilon, **kw)
        raise InputError("need dt or steps alongside horizon")

    def resolved_workers(self) -> int:
        if self.workers is not None:
            return max(1, int(self.workers))
        env = os.environ.get(THREADS_ENV)
        return max(1, int(env)) if env else 1


@dataclass
class StepStats:
    step: int
    wall_time: float
    max_value: float
    min_value: float
    changed: int


@dataclass
class SolveReport:
    steps: list = field(default_factory=list)
    final_digest: str = ""
    problem_digest: str = ""

    def to_dict(self) -> dict:
        return {"problem_digest": self.problem_digest, "final_digest": self.final_digest,
                "steps": [asdict(s) for s in self.steps]}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def problem_digest(model: SystemModel, costs: CostSpec, target: TargetSet, grid: GridSpec,
                   config: SolverConfig) -> str:
    doc = {"model": model.describe(), "costs": costs.describe(), "target": target.describe(),
           "grid": grid.to_dict(), "dt": config.dt, "policy": config.policy.value}
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()


def init_terminal(grid: GridSpec, costs: CostSpec, meta: FieldMeta | None = None) -> ValueField:
    nodes = grid.all_nodes()
    vals = np.asarray(costs.endpoint_cost(nodes), dtype=np.float64).reshape(-1)
    if not np.isfinite(vals).all():
        i = int(np.argwhere(~np.isfinite(vals))[0][0])
        raise ModelError(f"endpoint cost is not finite at node {nodes[i].tolist()}")
    meta = meta or FieldMeta()
    return ValueField(grid, vals, FieldMeta(0, meta.dt, meta.horizon, meta.problem_digest))


class Transitions:
    """Per-control interpolation stencils at ``F_K(point, u)`` plus ``C_K(point, u)``.

    With ``lazy=True`` nothing is stored and each control's stencil is
    rebuilt on demand, trading time for memory on large grids.
    """

    def __init__(self, grid: GridSpec, model: SystemModel, costs: CostSpec, target: TargetSet,
                 dt: float, policy: OutOfDomain, points: np.ndarray | None = None, lazy: bool = False):
        self.grid, self.model, self.costs_spec, self.target = grid, model, costs, target
        self.dt, self.policy, self.lazy = dt, OutOfDomain(policy), lazy
        self.points = grid.all_nodes() if points is None else np.atleast_2d(points)
        self._cache = None if lazy else [self._build(i) for i in range(model.control_count)]

    def _build(self, i: int) -> tuple[Stencil, np.ndarray]:
        u = self.model.control_values[i]
        nxt = frozen_step(self.model, self.target, self.points, u, self.dt)
        cost = np.asarray(frozen_stage_cost(self.costs_spec, self.target, self.points, u, self.dt),
                          dtype=np.float64)
        return Stencil(self.grid, nxt, self.policy), cost

    def __len__(self):
        return self.model.control_count

    @property
    def nbytes(self) -> int:
        if self._cache is None:
            return 0
        return sum(s.nbytes + c.nbytes for s, c in self._cache)

    def candidate(self, i: int, values: np.ndarray) -> np.ndarray:
        stencil, cost = self._cache[i] if self._cache is not None else self._build(i)
        return cost + stencil.apply(values)

    def iter_candidates(self, values: np.ndarray, workers: int = 1):
        """Yield ``(control index, candidate row)`` in control order."""
        idx = range(len(self))
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                yield from zip(idx, pool.map(lambda i: self.candidate(i, values), idx))
        else:
            for i in idx:
                yield i, self.candidate(i, values)

    def candidates(self, values: np.ndarray, workers: int = 1) -> np.ndarray:
        """All candidate values, shape ``(controls, points)``."""
        return np.stack([row for _, row in self.iter_candidates(values, workers)])

    def minimize(self, values: np.ndarray, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Running min over controls without materializing every candidate row.

        Strict ``<`` keeps the lowest control index on ties, matching
        :func:`minimize`.
        """
        best = arg = None
        for i, row in self.iter_candidates(values, workers):
            _check_candidates(row, self.points, self.model, i)
            if best is None:
                best, arg = row, np.zeros(row.shape, dtype=np.int64)
            else:
                better = row < best
                best = np.where(better, row, best)
                arg[better] = i
        return best, arg


def estimate_transition_bytes(grid: GridSpec, model: SystemModel) -> int:
    index_bytes = 8 if grid.size >= 2 ** 31 else 4
    per_point = (1 << grid.ndim) * (index_bytes + 8) + 1 + 8
    return grid.size * model.control_count * per_point


def minimize(cand: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise min over controls; ties go to the lowest control index."""
    idx = np.argmin(cand, axis=0)
    return cand[idx, np.arange(cand.shape[1])], idx


def _check_candidates(row: np.ndarray, points: np.ndarray, model: SystemModel, control: int):
    bad = ~np.isfinite(row)
    if bad.any():
        ni = int(np.argwhere(bad)[0][0])
        raise SolverError(f"non-finite candidate at node {points[ni].tolist()} "
                          f"with control {model.control_values[control].tolist()}")


def _check_problem(model: SystemModel, grid: GridSpec):
    if model.state_dim != grid.ndim:
        raise InputError(f"model has {model.state_dim} states, grid has {grid.ndim} dimensions")
    for d, (ax, per) in enumerate(zip(grid.axes, model.periodic)):
        if ax.periodic != (per is not None):
            raise InputError(f"dimension {d}: grid and model disagree on periodicity")
        if per is not None and (abs(per[0] - ax.lower) > 1e-12 or abs(per[1] - ax.upper) > 1e-12):
            raise InputError(f"dimension {d}: grid period does not match model period")


def bellman_step(field_k: ValueField, model: SystemModel, costs: CostSpec, target: TargetSet,
                 config: SolverConfig, transitions: Transitions | None = None) -> ValueField:
    _check_problem(model, field_k.grid)
    if transitions is None:
        transitions = Transitions(field_k.grid, model, costs, target, config.dt, config.policy)
    new, _ = transitions.minimize(field_k.values, config.resolved_workers())
    return field_k.replace(new, step_index=field_k.meta.step_index + 1, dt=config.dt)


def solve(model: SystemModel, costs: CostSpec, target: TargetSet, grid: GridSpec, config: SolverConfig,
          progress: Callable[[StepStats], None] | None = None) -> tuple[ValueField, SolveReport]:
    _check_problem(model, grid)
    digest = problem_digest(model, costs, target, grid, config)
    meta = FieldMeta(0, config.dt, config.horizon, digest)
    field_k = init_terminal(grid, costs, meta)
    report = SolveReport(problem_digest=digest)

    transitions = None
    if config.steps:
        lazy = estimate_transition_bytes(grid, model) > config.cache_limit_bytes
        transitions = Transitions(grid, model, costs, target, config.dt, config.policy, lazy=lazy)
        log.debug("transitions: lazy=%s, %.1f MB cached", lazy, transitions.nbytes / 1e6)

    for k in range(1, config.steps + 1):
        t0 = time.perf_counter()
        try:
            nxt = bellman_step(field_k, model, costs, target, config, transitions)
        except SolverError as exc:
            raise SolverError(str(exc), step=k) from exc
        except ModelError as exc:
            raise SolverError(str(exc), step=k) from exc
        changed = int(np.count_nonzero(np.abs(nxt.values - field_k.values) > CHANGE_TOL))
        lo, hi = nxt.value_range
        stats = StepStats(k, time.perf_counter() - t0, hi, lo, changed)
        report.steps.append(stats)
        if progress:
            progress(stats)
        field_k = nxt

    report.final_digest = field_k.digest()
    return field_k.replace(horizon=config.horizon, dt=config.dt), report
