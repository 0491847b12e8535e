"""Queries on a solved value field: membership, slices, contours, masks."""
from __future__ import annotations

import csv
import itertools
import json
import warnings
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from .errors import InputError
from .grid import Axis, GridSpec, OutOfDomain, Stencil, ValueField, interpolate


class Membership(NamedTuple):
    inside: bool
    value: float
    out_of_domain: bool

    def __bool__(self):
        return self.inside


class ValidityWarning(UserWarning):
    """A threshold lies at or above the horizon's validity bound."""


# levels within rounding of the bound count as violating it
VALIDITY_TOL = 1e-9


def check_validity(levels, bound: float | None):
    if bound is None:
        return
    for J in np.atleast_1d(levels):
        if J >= bound - VALIDITY_TOL:
            warnings.warn(f"level {J} is not below lambda*T+Lambda = {bound}; "
                          "the sub-level set may not equal the cost-limited reachable set",
                          ValidityWarning, stacklevel=3)


def member(field: ValueField, s, J: float, validity_bound: float | None = None,
           policy: OutOfDomain | str = OutOfDomain.SATURATE) -> Membership:
    """Closed sub-level membership ``W(s) <= J``.

    Under the saturate policy a state outside the grid domain is never a
    member; the result carries ``out_of_domain`` so callers can tell.
    """
    check_validity(J, validity_bound)
    s = np.asarray(s, dtype=np.float64)
    st = Stencil(field.grid, s, policy)
    value = float(st.apply(field.values)[0])
    outside = bool(st.outside[0])
    if outside and OutOfDomain(policy) is OutOfDomain.SATURATE:
        return Membership(False, value, True)
    return Membership(value <= J, value, outside)


def members(field: ValueField, states: np.ndarray, J: float) -> np.ndarray:
    """Vectorized :func:`member` under the saturate policy."""
    st = Stencil(field.grid, states, OutOfDomain.SATURATE)
    return (st.apply(field.values) <= J) & ~st.outside


def mask(field: ValueField, J: float) -> np.ndarray:
    return field.as_array() <= J


@dataclass(frozen=True)
class SliceSpec:
    fixed: tuple  # ((dim, value), ...)
    free: tuple   # remaining dimension indices

    def embed(self, pts2: np.ndarray, ndim: int) -> np.ndarray:
        pts2 = np.atleast_2d(pts2)
        out = np.empty((pts2.shape[0], ndim))
        for j, d in enumerate(self.free):
            out[:, d] = pts2[:, j]
        for d, v in self.fixed:
            out[:, d] = v
        return out

    def to_dict(self):
        return {"fixed": {str(d): v for d, v in self.fixed}, "free": list(self.free)}


def slice_field(field: ValueField, fixed: Mapping[int, float] | None = None) -> tuple[ValueField, SliceSpec]:
    """Restrict a field to the 2-D plane obtained by fixing all other dimensions."""
    fixed = dict(fixed or {})
    grid = field.grid
    if len(fixed) != grid.ndim - 2:
        raise InputError(f"need {grid.ndim - 2} fixed dimensions for a 2-D slice, got {len(fixed)}")
    for d, v in fixed.items():
        if not 0 <= d < grid.ndim:
            raise InputError(f"no dimension {d}")
        ax = grid.axes[d]
        if not ax.periodic and not ax.lower <= v <= ax.upper:
            raise InputError(f"fixed value {v} outside dimension {d} range [{ax.lower}, {ax.upper}]")
    free = tuple(d for d in range(grid.ndim) if d not in fixed)
    spec = SliceSpec(tuple(sorted(fixed.items())), free)
    sub = GridSpec(tuple(grid.axes[d] for d in free))
    if not fixed:
        return ValueField(sub, field.values, field.meta), spec
    pts = spec.embed(sub.all_nodes(), grid.ndim)
    vals = interpolate(field, pts, OutOfDomain.CLAMP)
    return ValueField(sub, vals, field.meta), spec


def local_value_band(field: ValueField, points: np.ndarray, cells: int = 2) -> np.ndarray:
    """Local value range (max - min) of the interpolated field over the box
    of +-``cells`` grid cells around each point.

    Used to exclude states whose classification is ambiguous at grid
    resolution.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    steps = np.arange(-cells, cells + 1, dtype=np.float64)
    lo = np.full(pts.shape[0], np.inf)
    hi = np.full(pts.shape[0], -np.inf)
    for off in itertools.product(steps, repeat=field.grid.ndim):
        vals = interpolate(field, pts + np.asarray(off) * field.grid.spacing, OutOfDomain.CLAMP)
        np.minimum(lo, vals, out=lo)
        np.maximum(hi, vals, out=hi)
    return hi - lo


# --- marching squares --------------------------------------------------------

@dataclass
class LevelSetContour:
    threshold: float
    slice: dict
    polylines: list = field(default_factory=list)  # each an (k, 2) array

    def to_json(self, path):
        doc = {"threshold": self.threshold, "slice": self.slice,
               "polylines": [p.tolist() for p in self.polylines]}
        with open(path, "w") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "polyline"])
            for pid, line in enumerate(self.polylines):
                for x, y in line:
                    w.writerow([repr(float(x)), repr(float(y)), pid])


# edges of a cell: 0 bottom (i0,j0)-(i1,j0) along dim0 at j0, 1 right (i1,j0)-(i1,j1),
# 2 top (i0,j1)-(i1,j1), 3 left (i0,j0)-(i0,j1).  Corner bits: 1 (i0,j0), 2 (i1,j0),
# 4 (i1,j1), 8 (i0,j1); a set bit means value above the threshold.
_SEGMENTS = {
    0: (), 15: (),
    1: ((3, 0),), 14: ((3, 0),),
    2: ((0, 1),), 13: ((0, 1),),
    3: ((3, 1),), 12: ((3, 1),),
    4: ((1, 2),), 11: ((1, 2),),
    6: ((0, 2),), 9: ((0, 2),),
    7: ((3, 2),), 8: ((3, 2),),
}


def _saddle_segments(case: int, center_above: bool):
    # case 5: corners 1 and 4 above; case 10: corners 2 and 8 above
    if case == 5:
        return ((3, 2), (0, 1)) if center_above else ((3, 0), (1, 2))
    return ((3, 0), (1, 2)) if center_above else ((3, 2), (0, 1))


def extract_contours(field2d: ValueField, J: float, slice_info: dict | None = None) -> LevelSetContour:
    """Polylines of the ``J`` level of a 2-D field.

    Crossings are placed by linear interpolation along cell edges.  Saddle
    cells are resolved by comparing the cell-centre average against ``J``.
    Closed curves repeat their first point at the end.
    """
    grid = field2d.grid
    if grid.ndim != 2:
        raise InputError("contour extraction needs a 2-D field")
    v = field2d.as_array()
    nx, ny = grid.shape
    xs, ys = grid.axes[0].nodes(), grid.axes[1].nodes()
    px, py = grid.axes[0].periodic, grid.axes[1].periodic
    # periodic axes close the last cell back onto node 0
    cx = nx if px else nx - 1
    cy = ny if py else ny - 1
    xs_ext = np.append(xs, grid.axes[0].upper) if px else xs
    ys_ext = np.append(ys, grid.axes[1].upper) if py else ys

    above = v > J
    points: dict = {}

    def edge_point(i, j, e):
        # canonical key: ("h", i, j) edge from node (i,j) to (i+1,j); ("v", i, j) from (i,j) to (i,j+1)
        if e == 0:
            key = ("h", i, j)
        elif e == 2:
            key = ("h", i, j + 1)
        elif e == 3:
            key = ("v", i, j)
        else:
            key = ("v", i + 1, j)
        kind, a, b = key
        a_n, b_n = a % nx, b % ny
        if kind == "h":
            v0, v1 = v[a_n, b_n], v[(a + 1) % nx, b_n]
            t = (J - v0) / (v1 - v0)
            pt = (xs_ext[a] + t * (xs_ext[a + 1] - xs_ext[a]), ys_ext[b])
        else:
            v0, v1 = v[a_n, b_n], v[a_n, (b + 1) % ny]
            t = (J - v0) / (v1 - v0)
            pt = (xs_ext[a], ys_ext[b] + t * (ys_ext[b + 1] - ys_ext[b]))
        key = (kind, a_n, b_n)
        points.setdefault(key, pt)
        return key

    adjacency: dict = {}
    for i in range(cx):
        i1 = (i + 1) % nx
        for j in range(cy):
            j1 = (j + 1) % ny
            case = (above[i, j] * 1) | (above[i1, j] * 2) | (above[i1, j1] * 4) | (above[i, j1] * 8)
            if case in (5, 10):
                centre = 0.25 * (v[i, j] + v[i1, j] + v[i1, j1] + v[i, j1])
                segs = _saddle_segments(case, centre > J)
            else:
                segs = _SEGMENTS[case]
            for ea, eb in segs:
                ka, kb = edge_point(i, j, ea), edge_point(i, j, eb)
                adjacency.setdefault(ka, []).append(kb)
                adjacency.setdefault(kb, []).append(ka)

    polylines = []
    visited = set()

    def walk(start):
        line = [start]
        visited.add(start)
        cur = start
        while True:
            nxt = [k for k in adjacency[cur] if k not in visited]
            if not nxt:
                if len(line) > 2 and start in adjacency[cur]:
                    line.append(start)
                return line
            cur = nxt[0]
            visited.add(cur)
            line.append(cur)

    # open curves start at degree-1 ends, then closed loops
    for key in sorted(adjacency, key=repr):
        if key not in visited and len(adjacency[key]) == 1:
            polylines.append(walk(key))
    for key in sorted(adjacency, key=repr):
        if key not in visited:
            polylines.append(walk(key))

    lines = [np.array([points[k] for k in line]) for line in polylines if len(line) > 1]
    return LevelSetContour(float(J), slice_info or {}, lines)
