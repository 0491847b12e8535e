"""Exhaustive enumeration of piecewise-constant control sequences.

Gives the exact discrete minimal cost-to-target for the same control set
and time step the solver uses, without touching grids or interpolation.
Enumeration proceeds level by level over whole frontiers of branches;
with a positive running cost, any branch whose accumulated cost plus the
endpoint lower bound already reaches the best hit cannot improve it and is
dropped, so pruning never changes the minimum.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .analysis import local_value_band
from .dynamics import CostSpec, SystemModel, TargetSet, integrate_step, stage_cost
from .errors import BudgetExceeded, DigestMismatch
from .grid import OutOfDomain, ValueField, interpolate

DEFAULT_BUDGET = 10 ** 7


@dataclass
class OracleResult:
    start: np.ndarray
    value: float              # math.inf when no sequence hits the target
    hit_step: Optional[int]
    sequence_count: int
    saturation: float         # lambda * steps * dt + Lambda, lower bound when nothing hits
    problem_digest: str = ""

    @property
    def reached(self) -> bool:
        return self.hit_step is not None


def brute_force_value(model: SystemModel, costs: CostSpec, target: TargetSet, s0, steps: int, dt: float,
                      budget: int = DEFAULT_BUDGET, prune: bool = True,
                      problem_digest: str = "", domain: Sequence[tuple] | None = None) -> OracleResult:
    """Exact minimal cost over all control sequences of at most ``steps`` steps.

    ``domain`` optionally gives ``(lo, hi)`` bounds per dimension (``None``
    for unbounded); branches leaving it are abandoned, mirroring a solver
    that treats domain exits as worst case.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    n_u = model.control_count
    required = n_u ** steps
    if required > budget:
        raise BudgetExceeded(required, budget)
    s0 = np.asarray(s0, dtype=np.float64).reshape(-1)
    sat = costs.lam * steps * dt + costs.Lam
    if target.contains(s0):
        phi = float(np.asarray(costs.endpoint_cost(s0[None, :]))[0])
        return OracleResult(s0, phi, 0, 1, sat, problem_digest)

    frontier = s0[None, :]
    acc = np.zeros(1)
    best, best_step = math.inf, None
    count = 0
    for k in range(1, steps + 1):
        if frontier.shape[0] == 0:
            break
        # children ordered (parent, control) so control index varies fastest
        m = frontier.shape[0]
        parents = np.repeat(frontier, n_u, axis=0)
        us = np.tile(model.control_values, (m, 1))
        acc_c = np.repeat(acc, n_u) + stage_cost(costs, parents, us, dt)
        child = integrate_step(model, parents, us, dt)
        count += child.shape[0]
        hit = target.contains(child)
        if domain is not None:
            hit &= _within(child, domain)
        if hit.any():
            totals = acc_c[hit] + np.asarray(costs.endpoint_cost(child[hit]), dtype=np.float64)
            lvl_best = float(totals.min())
            if lvl_best < best:
                best, best_step = lvl_best, k
        keep = ~hit
        if domain is not None:
            keep &= _within(child, domain)
        if prune:
            keep &= acc_c + costs.Lam < best
        frontier, acc = child[keep], acc_c[keep]
    return OracleResult(s0, best, best_step, count, sat, problem_digest)


def _within(points: np.ndarray, domain) -> np.ndarray:
    ok = np.ones(points.shape[0], dtype=bool)
    for d, iv in enumerate(domain):
        if iv is not None:
            ok &= (points[:, d] >= iv[0]) & (points[:, d] <= iv[1])
    return ok


def brute_force_many(model, costs, target, starts, steps, dt, **kw) -> list[OracleResult]:
    return [brute_force_value(model, costs, target, s, steps, dt, **kw) for s in np.atleast_2d(starts)]


def probe_lattice(bounds: Sequence[tuple], per_dim: int | Sequence[int]) -> np.ndarray:
    """Uniform lattice of probe states covering ``bounds`` (inclusive)."""
    counts = [per_dim] * len(bounds) if isinstance(per_dim, int) else list(per_dim)
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(bounds, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass
class ComparisonStats:
    errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    field_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    oracle_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mean_abs: float = float("nan")
    max_abs: float = float("nan")
    agreement: dict = field(default_factory=dict)  # J -> (agreeing, considered)

    @property
    def count(self) -> int:
        return int(self.errors.size)

    def fraction_within(self, tol: float) -> float:
        return float(np.mean(np.abs(self.errors) <= tol)) if self.count else float("nan")

    def agreement_rate(self, J: float) -> float:
        agree, total = self.agreement[J]
        return agree / total if total else float("nan")


def compare_field(field: ValueField, results: Sequence[OracleResult], thresholds: Sequence[float] = (),
                  band_cells: int = 2) -> ComparisonStats:
    """Signed error ``W(s0) - J*`` per probe plus classification agreement.

    Probes with no hitting sequence are compared at the saturation level:
    both sides only claim a cost of at least ``saturation`` there, so the
    field value is capped at it before differencing.  Classification
    excludes probes whose field value is within the local 2-cell value band
    of the threshold.
    """
    if not results:
        return ComparisonStats()
    digests = {r.problem_digest for r in results if r.problem_digest}
    if field.meta.problem_digest and digests and digests != {field.meta.problem_digest}:
        raise DigestMismatch("oracle results were computed for a different problem")
    starts = np.array([r.start for r in results])
    w = interpolate(field, starts, OutOfDomain.SATURATE)
    sat = np.array([r.saturation for r in results])
    reached = np.array([r.reached for r in results])
    ora = np.where(reached, [r.value for r in results], sat)
    w_cmp = np.where(reached, w, np.minimum(w, sat))
    err = w_cmp - ora
    stats = ComparisonStats(err, w, np.where(reached, ora, np.inf),
                            float(np.mean(np.abs(err))), float(np.max(np.abs(err))))
    if thresholds:
        band = local_value_band(field, starts, band_cells)
        for J in thresholds:
            ok = np.abs(w - J) > band
            pred = w <= J
            truth = reached & (ora <= J)
            stats.agreement[J] = (int(np.sum((pred == truth) & ok)), int(np.sum(ok)))
    return stats


def write_oracle_csv(results: Sequence[OracleResult], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        n = len(results[0].start) if results else 0
        w.writerow([*[f"s{i}" for i in range(n)], "J_star", "hit_step", "sequences"])
        for r in results:
            w.writerow([*map(repr, r.start.tolist()), repr(r.value),
                        "" if r.hit_step is None else r.hit_step, r.sequence_count])
