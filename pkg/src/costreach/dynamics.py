"""System models, target sets, costs and the one-step discrete maps.

Evaluators are vectorized: ``vector_field(states, controls)`` takes arrays
of shape ``(N, n)`` and ``(N, m)`` and returns ``(N, n)``; costs return
``(N,)``.  Single states are accepted everywhere and promoted internally.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import AssumptionViolation, InputError, ModelError

log = logging.getLogger(__name__)

DEFAULT_CONTROL_COUNT = 21
# closed boxes: points on the face count as inside, with rounding slack
BOX_TOL = 1e-12


def _as_batch(x, width=None) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim <= 1
    arr = np.atleast_2d(arr) if arr.ndim == 1 else (arr.reshape(1, 1) if arr.ndim == 0 else arr)
    if width is not None and arr.shape[-1] != width:
        raise InputError(f"expected vectors of length {width}, got {arr.shape[-1]}")
    return arr, single


def control_grid(lower: float, upper: float, count: int = DEFAULT_CONTROL_COUNT) -> np.ndarray:
    """Uniform sampling of a scalar control interval, shape ``(count, 1)``."""
    if count < 1:
        raise ValueError("control count must be positive")
    if count == 1:
        return np.array([[0.5 * (lower + upper)]])
    return np.linspace(lower, upper, count).reshape(-1, 1)


@dataclass(frozen=True, eq=False)
class SystemModel:
    name: str
    state_dim: int
    control_values: np.ndarray
    vector_field: Callable[[np.ndarray, np.ndarray], np.ndarray]
    periodic: tuple = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        u = np.asarray(self.control_values, dtype=np.float64)
        if u.ndim == 1:
            u = u.reshape(-1, 1)
        if u.shape[0] == 0:
            raise ValueError("control set is empty")
        u.flags.writeable = False
        object.__setattr__(self, "control_values", u)
        per = tuple(self.periodic) or (None,) * self.state_dim
        if len(per) != self.state_dim:
            raise ValueError("periodic spec must have one entry per state dimension")
        object.__setattr__(self, "periodic", per)

    @property
    def control_count(self) -> int:
        return self.control_values.shape[0]

    def wrap(self, states: np.ndarray) -> np.ndarray:
        for d, bounds in enumerate(self.periodic):
            if bounds is not None:
                lo, hi = bounds
                states[:, d] = lo + np.mod(states[:, d] - lo, hi - lo)
        return states

    def describe(self) -> dict:
        return {"name": self.name, "params": self.params,
                "controls": self.control_values.tolist(),
                "periodic": [list(p) if p else None for p in self.periodic]}


@dataclass(frozen=True, eq=False)
class TargetSet:
    """Union of closed axis-aligned boxes, optionally with ``{g(s) <= 0}``.

    A box is a sequence with one ``(lo, hi)`` pair per dimension, or
    ``None`` for an unconstrained dimension.
    """
    boxes: tuple = ()
    implicit: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(tuple(b) for b in self.boxes))
        if not self.boxes and self.implicit is None:
            raise ValueError("target set needs at least one box or an implicit function")

    def contains(self, states):
        pts, single = _as_batch(states)
        inside = np.zeros(pts.shape[0], dtype=bool)
        for box in self.boxes:
            hit = np.ones(pts.shape[0], dtype=bool)
            for d, iv in enumerate(box):
                if iv is None:
                    continue
                lo, hi = iv
                x = pts[:, d]
                hit &= (x >= lo - BOX_TOL) & (x <= hi + BOX_TOL)
            inside |= hit
        if self.implicit is not None:
            inside |= np.asarray(self.implicit(pts)) <= 0.0
        return bool(inside[0]) if single else inside

    def describe(self) -> dict:
        return {"boxes": [[list(iv) if iv is not None else None for iv in b] for b in self.boxes],
                "implicit": self.implicit is not None}


@dataclass(frozen=True, eq=False)
class CostSpec:
    running_cost: Callable[[np.ndarray, np.ndarray], np.ndarray]
    endpoint_cost: Callable[[np.ndarray], np.ndarray]
    lam: float
    Lam: float
    name: str = "custom"
    params: dict = field(default_factory=dict)
    running_max: Optional[float] = None

    def __post_init__(self):
        if not self.lam > 0:
            raise AssumptionViolation(f"running cost lower bound must be positive, got {self.lam}")

    def describe(self) -> dict:
        return {"name": self.name, "params": self.params, "lambda": self.lam, "Lambda": self.Lam}

    def check_bounds(self, model: SystemModel, nodes: np.ndarray, tol: float = 1e-12):
        """Sample both costs on ``nodes`` x controls; raise if a bound is violated."""
        c_min = _sample_running(self, model, nodes).min()
        phi_min = np.min(self.endpoint_cost(nodes))
        if c_min < self.lam - tol:
            raise AssumptionViolation(f"sampled running cost {c_min} below lambda={self.lam}")
        if phi_min < self.Lam - tol:
            raise AssumptionViolation(f"sampled endpoint cost {phi_min} below Lambda={self.Lam}")


def _sample_running(costs: CostSpec, model: SystemModel, nodes: np.ndarray) -> np.ndarray:
    out = []
    for u in model.control_values:
        out.append(np.asarray(costs.running_cost(nodes, np.broadcast_to(u, (nodes.shape[0], u.size)))))
    return np.concatenate(out)


def estimate_cost_bounds(running_cost, endpoint_cost, model: SystemModel, nodes: np.ndarray):
    """Sampled ``(lambda, Lambda, c_max)`` over grid nodes x control values."""
    probe = CostSpec(running_cost, endpoint_cost, lam=1.0, Lam=0.0)
    c = _sample_running(probe, model, nodes)
    phi = np.asarray(endpoint_cost(nodes))
    lam, Lam = float(c.min()), float(phi.min())
    log.warning("cost bounds estimated by sampling %d nodes: lambda=%.6g Lambda=%.6g", nodes.shape[0], lam, Lam)
    return lam, Lam, float(c.max())


def running_cost_max(costs: CostSpec, model: SystemModel, nodes: np.ndarray) -> float:
    if costs.running_max is not None:
        return costs.running_max
    return float(_sample_running(costs, model, nodes).max())


def _controls_for(u, n: int) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 0:
        u = u.reshape(1)
    if u.ndim == 1:
        u = np.broadcast_to(u, (n, u.size))
    return u


def _eval(model: SystemModel, s: np.ndarray, u: np.ndarray) -> np.ndarray:
    ds = np.asarray(model.vector_field(s, u), dtype=np.float64)
    if not np.isfinite(ds).all():
        bad = np.argwhere(~np.isfinite(ds))[0][0]
        raise ModelError(f"{model.name}: non-finite derivative at state {s[bad].tolist()}")
    return ds


def integrate_step(model: SystemModel, s, u, dt: float):
    """Advance ``s`` by ``dt`` under constant control ``u`` with classical RK4."""
    if dt < 0:
        raise InputError("dt must be non-negative")
    pts, single = _as_batch(s, model.state_dim)
    uu = _controls_for(u, pts.shape[0])
    k1 = _eval(model, pts, uu)
    k2 = _eval(model, pts + 0.5 * dt * k1, uu)
    k3 = _eval(model, pts + 0.5 * dt * k2, uu)
    k4 = _eval(model, pts + dt * k3, uu)
    out = pts + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    model.wrap(out)
    return out[0] if single else out


def frozen_step(model: SystemModel, target: TargetSet, s, u, dt: float):
    pts, single = _as_batch(s, model.state_dim)
    inside = target.contains(pts)
    out = pts.copy()
    if not inside.all():
        uu = _controls_for(u, pts.shape[0])
        out[~inside] = integrate_step(model, pts[~inside], uu[~inside], dt)
    return out[0] if single else out


def stage_cost(costs: CostSpec, s, u, dt: float):
    """Left-endpoint rectangle rule for the running cost over one step."""
    pts, single = _as_batch(s)
    c = np.asarray(costs.running_cost(pts, _controls_for(u, pts.shape[0])), dtype=np.float64) * dt
    return float(c[0]) if single else c


def frozen_stage_cost(costs: CostSpec, target: TargetSet, s, u, dt: float):
    pts, single = _as_batch(s)
    c = np.where(target.contains(pts), 0.0, stage_cost(costs, pts, u, dt))
    return float(c[0]) if single else c


@dataclass
class Trajectory:
    times: list
    states: list
    controls: list
    accumulated_cost: float
    reached_target: bool
    first_hit_time: Optional[float] = None
    exited_domain: bool = False
    running_costs: list = field(default_factory=list)

    def to_csv(self, path, state_names: Sequence[str] | None = None):
        n = len(self.states[0])
        m = len(self.controls[0]) if self.controls else 0
        names = list(state_names or [f"s{i}" for i in range(n)])

        def cell(x):
            return "" if x is None else repr(float(x))

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *names, *[f"u{j}" for j in range(m)], "J"])
            for i, (t, s) in enumerate(zip(self.times, self.states)):
                # the final state has no control applied after it
                u = self.controls[i] if i < len(self.controls) else [None] * m
                j = self.running_costs[i] if i < len(self.running_costs) else None
                w.writerow([cell(t), *map(cell, s), *map(cell, u), cell(j)])


# --- built-in systems -----------------------------------------------------

def _two_dim_poly_field(s, u):
    x, y = s[..., 0], s[..., 1]
    return np.stack([y + x * x, -x + y ** 3 + u[..., 0]], axis=-1)


def _wind(x, y):
    return y + 0.1 * y ** 3, -x - 0.1 * x ** 3


def _planar_flight_field(s, u, v=1.0):
    x, y, th = s[..., 0], s[..., 1], s[..., 2]
    wx, wy = _wind(x, y)
    return np.stack([v * np.cos(th) + wx, v * np.sin(th) + wy,
                     np.broadcast_to(u[..., 0], x.shape)], axis=-1)


def _integrator_field(s, u):
    return np.broadcast_to(u[..., :1], s.shape).astype(np.float64)


def _zero_endpoint(s):
    return np.zeros(np.atleast_2d(s).shape[0])


def _unit_running(s, u):
    return np.ones(np.atleast_2d(s).shape[0])


def flight_endpoint_cost(s):
    s = np.atleast_2d(s)
    th = np.mod(s[:, 2], 2.0 * math.pi)
    return -np.exp(-s[:, 0] ** 2 - s[:, 1] ** 2 - np.minimum(th, 2.0 * math.pi - th))


BUILTIN_NAMES = ("two_dim_poly", "planar_flight", "integrator_1d")


def builtin_system(name: str, control_count: int | None = None, **params):
    """Return ``(model, costs, target)`` for a named example problem.

    ``planar_flight`` takes ``gamma`` (path-length weight, default 0) and
    ``endpoint`` (``"zero"`` or ``"exp"``).
    """
    if name == "two_dim_poly":
        if params:
            raise InputError(f"two_dim_poly takes no parameters, got {sorted(params)}")
        n_u = control_count or DEFAULT_CONTROL_COUNT
        model = SystemModel(name, 2, control_grid(-1.0, 1.0, n_u), _two_dim_poly_field,
                            params={"control_count": n_u})
        costs = CostSpec(_unit_running, _zero_endpoint, 1.0, 0.0, name="min_time", running_max=1.0)
        target = TargetSet(boxes=[((-0.2, 0.2), (-0.2, 0.2))])
        return model, costs, target

    if name == "planar_flight":
        gamma = float(params.pop("gamma", 0.0))
        endpoint = params.pop("endpoint", "zero")
        velocity = float(params.pop("velocity", 1.0))
        if params:
            raise InputError(f"unknown planar_flight parameters {sorted(params)}")
        if gamma < 0:
            raise InputError("gamma must be non-negative")
        if endpoint not in ("zero", "exp"):
            raise InputError(f"unknown endpoint cost {endpoint!r}")
        n_u = control_count or DEFAULT_CONTROL_COUNT

        def vf(s, u):
            return _planar_flight_field(s, u, velocity)

        model = SystemModel(name, 3, control_grid(-1.0, 1.0, n_u), vf,
                            periodic=(None, None, (0.0, 2.0 * math.pi)),
                            params={"gamma": gamma, "endpoint": endpoint, "velocity": velocity,
                                    "control_count": n_u})

        def running(s, u):
            d = vf(np.atleast_2d(s), np.atleast_2d(u))
            return 1.0 + gamma * np.hypot(d[:, 0], d[:, 1])

        if endpoint == "zero":
            phi, Lam = _zero_endpoint, 0.0
        else:
            phi, Lam = flight_endpoint_cost, -1.0
        costs = CostSpec(running if gamma > 0 else _unit_running, phi, 1.0, Lam,
                         name=f"flight_gamma{gamma:g}_{endpoint}", params={"gamma": gamma, "endpoint": endpoint},
                         running_max=None if gamma > 0 else 1.0)
        target = TargetSet(boxes=[((-0.5, 0.5), (1.5, 2.5), None)])
        return model, costs, target

    if name == "integrator_1d":
        half = float(params.pop("target_half_width", 0.1))
        if params:
            raise InputError(f"unknown integrator_1d parameters {sorted(params)}")
        n_u = control_count or 3
        model = SystemModel(name, 1, control_grid(-1.0, 1.0, n_u), _integrator_field,
                            params={"target_half_width": half, "control_count": n_u})
        costs = CostSpec(_unit_running, _zero_endpoint, 1.0, 0.0, name="min_time", running_max=1.0)
        target = TargetSet(boxes=[((-half, half),)])
        return model, costs, target

    raise InputError(f"unknown system {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
