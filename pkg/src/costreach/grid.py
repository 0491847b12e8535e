"""Cartesian grids, stored value fields and multilinear interpolation.

Node order is row-major with the first declared dimension outermost, so a
field buffer reshapes to ``grid.shape`` in C order.  Periodic dimensions
do not duplicate the endpoint node: ``point_count`` nodes span
``[lower, upper)`` and ``upper`` is identified with ``lower``.
"""
from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FieldFormatError, FieldTruncatedError, InputError

MAGIC = b"RCHF"
FORMAT_VERSION = 1

KIND_FIELD = 0
KIND_MASK = 1

# fractional cell coordinates within this distance of an integer snap onto
# the node, which keeps interpolation exact at nodes despite rounding
_SNAP = 1e-9


class OutOfDomain(str, enum.Enum):
    SATURATE = "saturate"
    CLAMP = "clamp"


@dataclass(frozen=True)
class Axis:
    lower: float
    upper: float
    point_count: int
    periodic: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise ValueError("axis bounds must be finite")
        if not self.upper > self.lower:
            raise ValueError(f"axis upper ({self.upper}) must exceed lower ({self.lower})")
        if int(self.point_count) < 2:
            raise ValueError("axis needs at least 2 points")
        object.__setattr__(self, "point_count", int(self.point_count))
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))
        object.__setattr__(self, "periodic", bool(self.periodic))

    @property
    def period(self) -> float:
        return self.upper - self.lower

    @property
    def spacing(self) -> float:
        if self.periodic:
            return self.period / self.point_count
        return self.period / (self.point_count - 1)

    def nodes(self) -> np.ndarray:
        i = np.arange(self.point_count, dtype=np.float64)
        return self.lower + i * self.spacing


@dataclass(frozen=True)
class GridSpec:
    axes: tuple[Axis, ...]

    def __post_init__(self):
        axes = tuple(self.axes)
        if not axes:
            raise ValueError("grid needs at least one dimension")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def from_bounds(cls, bounds: Sequence[tuple], counts: Sequence[int],
                    periodic: Sequence[bool] | None = None) -> "GridSpec":
        periodic = periodic or [False] * len(counts)
        return cls(tuple(Axis(lo, hi, n, p) for (lo, hi), n, p in zip(bounds, counts, periodic)))

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.point_count for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return np.array([a.spacing for a in self.axes])

    @property
    def periodic(self) -> tuple[bool, ...]:
        return tuple(a.periodic for a in self.axes)

    def node_coordinates(self, index: Sequence[int]) -> np.ndarray:
        if len(index) != self.ndim:
            raise IndexError(f"expected {self.ndim} indices, got {len(index)}")
        out = np.empty(self.ndim)
        for d, (i, ax) in enumerate(zip(index, self.axes)):
            if not 0 <= i < ax.point_count:
                raise IndexError(f"index {i} out of range for dimension {d} ({ax.point_count} points)")
            out[d] = ax.lower + i * ax.spacing
        return out

    def all_nodes(self) -> np.ndarray:
        """Coordinates of every node, shape ``(size, ndim)`` in buffer order."""
        mesh = np.meshgrid(*[a.nodes() for a in self.axes], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """True where every non-periodic coordinate lies in its closed interval."""
        points = np.atleast_2d(points)
        ok = np.ones(points.shape[0], dtype=bool)
        for d, ax in enumerate(self.axes):
            if not ax.periodic:
                x = points[:, d]
                ok &= (x >= ax.lower - tol) & (x <= ax.upper + tol)
        return ok

    def to_dict(self) -> dict:
        return {"axes": [
            {"lower": a.lower, "upper": a.upper, "point_count": a.point_count, "periodic": a.periodic}
            for a in self.axes]}


@dataclass(frozen=True)
class FieldMeta:
    step_index: int = 0
    dt: float = 0.0
    horizon: float = 0.0
    problem_digest: str = ""


@dataclass(frozen=True, eq=False)
class ValueField:
    grid: GridSpec
    values: np.ndarray
    meta: FieldMeta = field(default_factory=FieldMeta)

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        if vals.size != self.grid.size:
            raise ValueError(f"buffer has {vals.size} values, grid needs {self.grid.size}")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def replace(self, values: np.ndarray | None = None, **meta) -> "ValueField":
        new_meta = FieldMeta(**{**self.meta.__dict__, **meta})
        return ValueField(self.grid, self.values if values is None else values, new_meta)

    def digest(self) -> str:
        return hashlib.sha256(self.values.tobytes()).hexdigest()

    @property
    def value_range(self) -> tuple[float, float]:
        return float(self.values.min()), float(self.values.max())


class Stencil:
    """Precomputed multilinear weights for a batch of query points.

    Building the stencil is the expensive part of interpolation (wrapping,
    cell lookup); :meth:`apply` is a cheap gather that can be reused against
    successive fields on the same grid.
    """

    def __init__(self, grid: GridSpec, points: np.ndarray, policy: OutOfDomain = OutOfDomain.SATURATE):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points[None, :]
        if points.shape[-1] != grid.ndim:
            raise InputError(f"points have {points.shape[-1]} components, grid has {grid.ndim}")
        if np.isnan(points).any():
            raise InputError("NaN in interpolation query")
        self.grid = grid
        self.policy = OutOfDomain(policy)
        npts = points.shape[0]
        self.outside = np.zeros(npts, dtype=bool)
        lo_idx, hi_idx, fracs = [], [], []
        for d, ax in enumerate(grid.axes):
            x = points[:, d]
            if not np.isfinite(x).all():
                raise InputError("non-finite interpolation query")
            n = ax.point_count
            if ax.periodic:
                t = np.mod(x - ax.lower, ax.period) / ax.spacing
                r = np.rint(t)
                t = np.where(np.abs(t - r) < _SNAP, r, t)
                t = np.where(t >= n, t - n, t)
                i0 = np.floor(t).astype(np.int64)
                i0 = np.minimum(i0, n - 1)
                frac = t - i0
                i1 = (i0 + 1) % n
            else:
                self.outside |= (x < ax.lower) | (x > ax.upper)
                t = (np.clip(x, ax.lower, ax.upper) - ax.lower) / ax.spacing
                r = np.rint(t)
                t = np.where(np.abs(t - r) < _SNAP, r, t)
                t = np.clip(t, 0.0, n - 1)
                i0 = np.minimum(np.floor(t).astype(np.int64), n - 2)
                frac = t - i0
                i1 = i0 + 1
            lo_idx.append(i0)
            hi_idx.append(i1)
            fracs.append(frac)
        strides = np.cumprod((grid.shape[1:] + (1,))[::-1])[::-1].astype(np.int64)
        ndim = grid.ndim
        # corners enumerated with dimension 0 as the most significant bit
        self._index = []
        self._weight = []
        for corner in range(1 << ndim):
            flat = np.zeros(npts, dtype=np.int64)
            weight = np.ones(npts, dtype=np.float64)
            for d in range(ndim):
                if (corner >> (ndim - 1 - d)) & 1:
                    flat += hi_idx[d] * strides[d]
                    weight *= fracs[d]
                else:
                    flat += lo_idx[d] * strides[d]
                    weight *= 1.0 - fracs[d]
            self._index.append(flat.astype(np.intp if grid.size >= 2 ** 31 else np.int32))
            self._weight.append(weight)

    def __len__(self):
        return self.outside.shape[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Interpolate a flat node buffer at the stencil's query points."""
        out = self._weight[0] * values[self._index[0]]
        for idx, w in zip(self._index[1:], self._weight[1:]):
            out += w * values[idx]
        if self.policy is OutOfDomain.SATURATE and self.outside.any():
            out[self.outside] = values.max()
        return out

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in self._index + self._weight) + self.outside.nbytes


def interpolate(field: ValueField, points: np.ndarray,
                policy: OutOfDomain | str = OutOfDomain.SATURATE):
    """Multilinear interpolation of ``field`` at one point or a batch.

    A 1-D ``points`` returns a float; an ``(N, ndim)`` array returns ``(N,)``.
    Non-periodic coordinates outside the domain are clamped onto the
    boundary (``clamp``) or answered with the field maximum (``saturate``).
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    res = Stencil(field.grid, pts, OutOfDomain(policy)).apply(field.values)
    return float(res[0]) if single else res


def _header_bytes(grid: GridSpec, meta: FieldMeta, kind: int) -> bytes:
    parts = [MAGIC, struct.pack("<HH", FORMAT_VERSION, grid.ndim)]
    for ax in grid.axes:
        parts.append(struct.pack("<ddIB", ax.lower, ax.upper, ax.point_count, int(ax.periodic)))
    digest = meta.problem_digest.encode("utf-8")
    parts.append(struct.pack("<Idd", meta.step_index, meta.dt, meta.horizon))
    parts.append(struct.pack("<H", len(digest)))
    parts.append(digest)
    parts.append(struct.pack("<B", kind))
    return b"".join(parts)


def _write_sidecar(path: Path, grid: GridSpec, meta: FieldMeta, kind: int, extra: dict | None = None):
    doc = {
        "format": "RCHF",
        "version": FORMAT_VERSION,
        "kind": "mask" if kind == KIND_MASK else "field",
        "grid": grid.to_dict(),
        "meta": {
            "step_index": meta.step_index,
            "dt": meta.dt,
            "horizon": meta.horizon,
            "problem_digest": meta.problem_digest,
        },
    }
    if extra:
        doc.update(extra)
    Path(str(path) + ".json").write_text(json.dumps(doc, indent=2) + "\n")


def save_field(field: ValueField, path) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_header_bytes(field.grid, field.meta, KIND_FIELD))
        fh.write(field.values.astype("<f8").tobytes())
    _write_sidecar(path, field.grid, field.meta, KIND_FIELD,
                   {"value_min": field.value_range[0], "value_max": field.value_range[1]})
    return path


def save_mask(mask: np.ndarray, grid: GridSpec, meta: FieldMeta, path, threshold: float | None = None) -> Path:
    path = Path(path)
    buf = np.ascontiguousarray(mask, dtype=bool).reshape(-1)
    if buf.size != grid.size:
        raise ValueError("mask size does not match grid")
    with open(path, "wb") as fh:
        fh.write(_header_bytes(grid, meta, KIND_MASK))
        fh.write(buf.astype(np.uint8).tobytes())
    _write_sidecar(path, grid, meta, KIND_MASK, {"threshold": threshold, "inside_count": int(buf.sum())})
    return path


@dataclass(frozen=True)
class LoadedFile:
    grid: GridSpec
    meta: FieldMeta
    kind: int
    data: np.ndarray

    @property
    def is_mask(self) -> bool:
        return self.kind == KIND_MASK


def _read_file(path) -> LoadedFile:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FieldFormatError(f"{path}: bad magic {raw[:4]!r}")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise FieldTruncatedError(f"{path}: header truncated")
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    version, ndim = take("<HH")
    if version != FORMAT_VERSION:
        raise FieldFormatError(f"{path}: unsupported format version {version}")
    axes = []
    for _ in range(ndim):
        lo, hi, n, per = take("<ddIB")
        axes.append(Axis(lo, hi, n, bool(per)))
    k, dt, horizon = take("<Idd")
    (dlen,) = take("<H")
    if pos + dlen > len(raw):
        raise FieldTruncatedError(f"{path}: header truncated")
    digest = raw[pos:pos + dlen].decode("utf-8")
    pos += dlen
    (kind,) = take("<B")
    if kind not in (KIND_FIELD, KIND_MASK):
        raise FieldFormatError(f"{path}: unknown kind byte {kind}")
    grid = GridSpec(tuple(axes))
    itemsize = 8 if kind == KIND_FIELD else 1
    need = grid.size * itemsize
    body = raw[pos:]
    if len(body) < need:
        raise FieldTruncatedError(f"{path}: buffer has {len(body)} bytes, header declares {need}")
    if len(body) > need:
        raise FieldFormatError(f"{path}: {len(body) - need} trailing bytes")
    dtype = "<f8" if kind == KIND_FIELD else np.uint8
    data = np.frombuffer(body, dtype=dtype).copy()
    return LoadedFile(grid, FieldMeta(k, dt, horizon, digest), kind, data)


def load_field(path) -> ValueField:
    f = _read_file(path)
    if f.is_mask:
        raise FieldFormatError(f"{path}: is a mask file, not a value field")
    return ValueField(f.grid, f.data.astype(np.float64), f.meta)


def load_any(path) -> LoadedFile:
    """Read either a field or a mask file."""
    return _read_file(path)


def load_mask(path) -> tuple[np.ndarray, GridSpec, FieldMeta]:
    f = _read_file(path)
    if not f.is_mask:
        raise FieldFormatError(f"{path}: is a value field, not a mask")
    return f.data.astype(bool).reshape(f.grid.shape), f.grid, f.meta
