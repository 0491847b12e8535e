"""Run configuration: YAML file -> validated pydantic models -> problem objects."""
from __future__ import annotations

import ast
import hashlib
import json
import math
import operator
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .dynamics import BUILTIN_NAMES, TargetSet, builtin_system
from .errors import ConfigError
from .grid import Axis, GridSpec, OutOfDomain
from .solver import DEFAULT_EPSILON, SolverConfig

Number = Union[float, str]

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}


def parse_number(value) -> float:
    """Float, or a small arithmetic expression in ``pi`` such as ``"2*pi"``."""
    if isinstance(value, (int, float)):
        return float(value)

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
            return -ev(node.operand)
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        raise ValueError(f"unsupported expression {value!r}")

    return ev(ast.parse(str(value), mode="eval"))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemSection(_Strict):
    name: str
    params: Dict[str, Union[float, str]] = Field(default_factory=dict)
    control_count: Optional[int] = Field(default=None, ge=1)

    @field_validator("name")
    @classmethod
    def _known(cls, v):
        if v not in BUILTIN_NAMES:
            raise ValueError(f"unknown system {v!r}; choose from {', '.join(BUILTIN_NAMES)}")
        return v


class GridSection(_Strict):
    bounds: List[Tuple[Number, Number]]
    points: List[int]
    periodic: Optional[List[bool]] = None

    @model_validator(mode="after")
    def _consistent(self):
        if len(self.points) != len(self.bounds):
            raise ValueError("bounds and points must have the same length")
        if self.periodic is not None and len(self.periodic) != len(self.bounds):
            raise ValueError("periodic must have one flag per dimension")
        for lo, hi in self.bounds:
            if not parse_number(hi) > parse_number(lo):
                raise ValueError(f"upper bound {hi} must exceed lower bound {lo}")
        if any(n < 2 for n in self.points):
            raise ValueError("every dimension needs at least 2 points")
        return self


class TargetSection(_Strict):
    # one box per entry: a [lo, hi] pair or null per dimension
    boxes: List[List[Optional[Tuple[Number, Number]]]]


class CostSection(_Strict):
    lam: Optional[float] = Field(default=None, alias="lambda", gt=0)
    Lam: Optional[float] = Field(default=None, alias="Lambda")


class SolverSection(_Strict):
    dt: Optional[float] = Field(default=None, gt=0)
    steps: Optional[int] = Field(default=None, ge=0)
    horizon: Optional[float] = Field(default=None, gt=0)
    epsilon: float = Field(default=DEFAULT_EPSILON, gt=0)
    policy: OutOfDomain = OutOfDomain.SATURATE
    workers: Optional[int] = Field(default=None, ge=1)


class SliceRequest(_Strict):
    fixed: Dict[int, Number] = Field(default_factory=dict)


class AnalysisSection(_Strict):
    slices: List[SliceRequest] = Field(default_factory=list)
    contours: bool = True
    masks: bool = True


class VerifySection(_Strict):
    levels: Optional[List[float]] = None
    slice: Dict[int, Number] = Field(default_factory=dict)
    stride: int = Field(default=1, ge=1)
    band_cells: int = Field(default=2, ge=0)
    cost_tolerance: Optional[float] = None
    max_steps: Optional[int] = Field(default=None, ge=1)


class OracleSection(_Strict):
    bounds: List[Tuple[Number, Number]]
    per_dim: int = Field(default=15, ge=1)
    steps: int = Field(default=10, ge=1)
    dt: Optional[float] = Field(default=None, gt=0)
    thresholds: List[float] = Field(default_factory=list)
    budget: int = Field(default=10 ** 7, ge=1)
    restrict_to_grid: bool = True


class RunConfig(_Strict):
    system: SystemSection
    grid: GridSection
    target: Optional[TargetSection] = None
    costs: CostSection = Field(default_factory=CostSection)
    solver: SolverSection
    levels: List[float] = Field(default_factory=list)
    analysis: AnalysisSection = Field(default_factory=AnalysisSection)
    verify: Optional[VerifySection] = None
    oracle: Optional[OracleSection] = None
    output: str = "runs"

    @field_validator("levels")
    @classmethod
    def _increasing(cls, v):
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("levels must be strictly increasing")
        return v

    def resolved(self) -> dict:
        return json.loads(self.model_dump_json(by_alias=True))

    def digest(self) -> str:
        doc = self.resolved()
        doc.pop("output", None)
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _fmt_loc(err) -> str:
    return ".".join(str(p) for p in err["loc"]) or "<root>"


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(_fmt_loc(first), first["msg"]) from exc


def load_config(path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    return parse_config(data)


class Problem:
    """Everything a pipeline stage needs, built from a :class:`RunConfig`."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        sysc = cfg.system
        try:
            self.model, costs, target = builtin_system(sysc.name, control_count=sysc.control_count,
                                                       **dict(sysc.params))
        except ValueError as exc:
            raise ConfigError("system.params", str(exc)) from exc
        periodic = cfg.grid.periodic or [p is not None for p in self.model.periodic]
        self.grid = GridSpec(tuple(Axis(parse_number(lo), parse_number(hi), n, p)
                                   for (lo, hi), n, p in zip(cfg.grid.bounds, cfg.grid.points, periodic)))
        if self.grid.ndim != self.model.state_dim:
            raise ConfigError("grid.bounds", f"{sysc.name} has {self.model.state_dim} states, "
                                             f"grid has {self.grid.ndim} dimensions")
        if cfg.target is not None:
            boxes = [[None if iv is None else (parse_number(iv[0]), parse_number(iv[1])) for iv in box]
                     for box in cfg.target.boxes]
            if any(len(b) != self.grid.ndim for b in boxes):
                raise ConfigError("target.boxes", "each box needs one entry per dimension")
            target = TargetSet(boxes=boxes)
        if cfg.costs.lam is not None or cfg.costs.Lam is not None:
            costs = replace(costs, lam=cfg.costs.lam if cfg.costs.lam is not None else costs.lam,
                            Lam=cfg.costs.Lam if cfg.costs.Lam is not None else costs.Lam)
        self.costs = costs
        self.target = target
        s = cfg.solver
        try:
            self.solver = SolverConfig.build(dt=s.dt, steps=s.steps, horizon=s.horizon,
                                             levels=cfg.levels if s.horizon is None and (s.dt is None or s.steps is None) else None,
                                             lam=costs.lam, Lam=costs.Lam, epsilon=s.epsilon,
                                             policy=s.policy, workers=s.workers)
        except ValueError as exc:
            raise ConfigError("solver", str(exc)) from exc

    @property
    def validity_bound(self) -> float:
        return self.costs.lam * self.solver.horizon + self.costs.Lam

    def slices(self) -> list[dict]:
        if self.grid.ndim == 2:
            return [{}]
        out = [{int(d): parse_number(v) for d, v in s.fixed.items()} for s in self.cfg.analysis.slices]
        for sl in out:
            if len(sl) != self.grid.ndim - 2:
                raise ConfigError("analysis.slices", f"each slice must fix {self.grid.ndim - 2} dimensions")
        return out
