"""Truncated uniform grids on [-L, L]^d and the field arithmetic built on them.

Fields are sampled at the nodes ``x_k = -L + k h`` (``h = 2L/n``) of every
axis.  Values are stored as C-ordered arrays of shape ``(n,) * d``; vector
fields carry a leading component axis and flows a leading time axis.
All containers are immutable: arrays are copied on construction and marked
read-only.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "VectorField",
    "FieldFlow",
    "GridMismatchError",
    "field_from_function",
    "integrate",
    "gradient",
    "sup_norm",
    "sup_distance",
    "holder_seminorm",
    "write_fields",
    "read_fields",
    "write_csv",
]

FIELD_MAGIC = b"MFGF"
FIELD_VERSION = 1
_HEADER = struct.Struct("<4sIIIdI")


class GridMismatchError(ValueError):
    pass


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True, order="C")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``[-half_width, half_width]^dim`` with ``n`` nodes per axis."""

    dim: int
    half_width: float
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if self.n < 16 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 16, got {self.n}")
        object.__setattr__(self, "half_width", float(self.half_width))

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def axis(self) -> np.ndarray:
        return -self.half_width + np.arange(self.n) * self.h

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (dim,)``."""
        axes = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack(axes, axis=-1)

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.shape))

    def constant(self, value: float) -> "Field":
        return Field(self, np.full(self.shape, float(value)))


def _check_finite(values: np.ndarray, what: str):
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise FloatingPointError(f"{what} has a non-finite value at index {tuple(int(i) for i in bad)}")


@dataclass(frozen=True, eq=False)
class Field:
    """Scalar function sampled on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} does not match grid shape {self.grid.shape}")
        _check_finite(vals, "field")
        object.__setattr__(self, "values", vals)

    def _other(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise GridMismatchError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Field(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    """``dim`` component fields stacked on a leading axis."""

    grid: Grid
    components: np.ndarray

    def __post_init__(self):
        comps = _frozen(self.components)
        expected = (self.grid.dim,) + self.grid.shape
        if comps.shape != expected:
            raise ValueError(f"components shape {comps.shape}, expected {expected}")
        _check_finite(comps, "vector field")
        object.__setattr__(self, "components", comps)

    def component(self, i: int) -> Field:
        return Field(self.grid, self.components[i])

    def magnitude(self) -> Field:
        return Field(self.grid, np.sqrt(np.sum(self.components**2, axis=0)))

    def __neg__(self):
        return VectorField(self.grid, -self.components)


@dataclass(frozen=True, eq=False)
class FieldFlow:
    """Time-indexed sequence of fields on the uniform ladder ``t0 + k (t1 - t0)/M``.

    ``frames`` has shape ``(M + 1,) + grid.shape`` for scalar flows and
    ``(M + 1, dim) + grid.shape`` for vector flows.
    """

    grid: Grid
    t0: float
    t1: float
    frames: np.ndarray
    vector: bool = field(default=False)

    def __post_init__(self):
        arr = _frozen(self.frames)
        tail = ((self.grid.dim,) if self.vector else ()) + self.grid.shape
        if arr.ndim != len(tail) + 1 or arr.shape[1:] != tail:
            raise ValueError(f"frames shape {arr.shape} incompatible with grid (expected (M+1,)+{tail})")
        if arr.shape[0] < 2:
            raise ValueError("a flow needs at least two frames")
        if not self.t1 > self.t0:
            raise ValueError("t1 must exceed t0")
        _check_finite(arr, "flow")
        object.__setattr__(self, "frames", arr)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "t1", float(self.t1))

    @property
    def steps(self) -> int:
        return self.frames.shape[0] - 1

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.steps + 1) * self.dt

    def __len__(self):
        return self.frames.shape[0]

    def frame(self, k: int):
        if self.vector:
            return VectorField(self.grid, self.frames[k])
        return Field(self.grid, self.frames[k])

    def sup_norm(self) -> float:
        if self.vector:
            return float(np.sqrt(np.sum(self.frames**2, axis=1)).max())
        return float(np.abs(self.frames).max())

    @classmethod
    def constant_in_time(cls, f: Field | VectorField, t0: float, t1: float, steps: int) -> "FieldFlow":
        if isinstance(f, VectorField):
            return cls(f.grid, t0, t1, np.broadcast_to(f.components, (steps + 1,) + f.components.shape), vector=True)
        return cls(f.grid, t0, t1, np.broadcast_to(f.values, (steps + 1,) + f.values.shape))


def field_from_function(grid: Grid, fn: Callable, vectorized: bool = True) -> Field:
    """Sample ``fn`` at every node.

    With ``vectorized=True`` (default) ``fn`` receives all nodes at once as an
    array of shape ``grid.shape + (dim,)``; otherwise it is called once per node
    with a length-``dim`` array.
    """
    pts = grid.points()
    if vectorized:
        vals = np.asarray(fn(pts), dtype=float)
        vals = np.broadcast_to(vals, grid.shape)
    else:
        vals = np.empty(grid.shape)
        for idx in np.ndindex(*grid.shape):
            vals[idx] = fn(pts[idx])
    bad = ~np.isfinite(vals)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise FloatingPointError(f"function is not finite at node {idx}, x = {pts[idx].tolist()}")
    return Field(grid, vals)


def integrate(f: Field) -> float:
    """Rectangle rule: ``h^d * sum(values)``."""
    return float(f.values.sum() * f.grid.cell_volume)


def gradient(f: Field) -> VectorField:
    """Second-order central differences, one-sided second-order stencils at the edges."""
    g = f.grid
    comps = [np.gradient(f.values, g.h, axis=k, edge_order=2) for k in range(g.dim)]
    return VectorField(g, np.stack(comps))


def sup_norm(f: Field | VectorField) -> float:
    if isinstance(f, VectorField):
        return float(np.sqrt(np.sum(f.components**2, axis=0)).max())
    return float(np.abs(f.values).max())


def sup_distance(f: Field | VectorField, g: Field | VectorField) -> float:
    if f.grid != g.grid:
        raise GridMismatchError("fields live on different grids")
    if isinstance(f, VectorField) != isinstance(g, VectorField):
        raise TypeError("cannot compare a scalar field with a vector field")
    if isinstance(f, VectorField):
        return float(np.sqrt(np.sum((f.components - g.components) ** 2, axis=0)).max())
    return float(np.abs(f.values - g.values).max())


def _window_offsets(dim: int, radius: int) -> list[tuple[int, ...]]:
    # one representative per +/- pair
    offs = []
    for off in np.ndindex(*([2 * radius + 1] * dim)):
        o = tuple(i - radius for i in off)
        if sum(c * c for c in o) > radius * radius or o <= (0,) * dim:
            continue
        offs.append(o)
    return offs


def holder_seminorm(f: Field, gamma: float, window_radius: int = 4) -> float:
    """Local Hölder seminorm over node pairs at most ``window_radius * h`` apart."""
    if window_radius < 1:
        raise ValueError("window_radius must be >= 1")
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    v = f.values
    h = f.grid.h
    best = 0.0
    for off in _window_offsets(f.grid.dim, window_radius):
        a = [slice(None)] * v.ndim
        b = [slice(None)] * v.ndim
        for ax, o in enumerate(off):
            if o > 0:
                a[ax], b[ax] = slice(o, None), slice(None, -o)
            elif o < 0:
                a[ax], b[ax] = slice(None, o), slice(-o, None)
        diff = np.abs(v[tuple(a)] - v[tuple(b)])
        if diff.size == 0:
            continue
        dist = h * np.sqrt(sum(o * o for o in off))
        best = max(best, float(diff.max()) / dist**gamma)
    return best


def holder_norm(f: Field, gamma: float, window_radius: int = 4) -> float:
    return holder_seminorm(f, gamma, window_radius) + sup_norm(f)


def write_fields(path: str | Path, grid: Grid, arrays: Sequence[np.ndarray]) -> None:
    """Binary dump: little-endian header then ``count`` row-major float64 arrays."""
    arrays = [np.ascontiguousarray(a, dtype="<f8") for a in arrays]
    for a in arrays:
        if a.shape != grid.shape:
            raise ValueError(f"array shape {a.shape} does not match grid {grid.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELD_MAGIC, FIELD_VERSION, grid.dim, grid.n, grid.half_width, len(arrays)))
        for a in arrays:
            fh.write(a.tobytes(order="C"))


def read_fields(path: str | Path) -> tuple[Grid, list[np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, dim, n, half_width, count = _HEADER.unpack_from(raw, 0)
    if magic != FIELD_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FIELD_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    grid = Grid(dim, half_width, n)
    size = n**dim
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != count * size:
        raise ValueError(f"{path}: expected {count * size} values, found {body.size}")
    return grid, [body[i * size : (i + 1) * size].reshape(grid.shape).astype(float) for i in range(count)]


def write_csv(path: str | Path, f: Field) -> None:
    """One row per node: ``x1[,x2],value``."""
    pts = f.grid.points().reshape(-1, f.grid.dim)
    vals = f.values.reshape(-1)
    header = [f"x{k + 1}" for k in range(f.grid.dim)] + ["value"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for p, v in zip(pts, vals):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
