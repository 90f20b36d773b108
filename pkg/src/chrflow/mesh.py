"""Tensor-product grids, nodal fields and trapezoidal quadrature.

Nodes are vertex-centred and include the boundary.  In 2D the node id of
(i, j) is ``i * ny + j`` so that ``values.reshape(nx, ny)`` indexes x first.

Boundary data is stored face-wise: every face lists its nodes, its outward
normal and its own trapezoidal weights.  A corner therefore appears twice,
once per face, each time with a half cell weight.  Flattening the faces gives
the "boundary entries" used throughout the package (``Grid.bnode``,
``Grid.bnormal``, ``Grid.bweight``).
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

MIN_NODES = 5


def _trapezoid_weights(n: int, h: float) -> NDArray[np.float64]:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass(frozen=True)
class Face:
    name: str
    axis: int
    side: int  # 0 at the low end of the axis, 1 at the high end
    normal: tuple[float, ...]
    nodes: NDArray[np.int64]
    weights: NDArray[np.float64]


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid on [0, Lx] or [0, Lx] x [0, Ly]."""

    dim: int
    extents: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if len(self.extents) != self.dim or len(self.counts) != self.dim:
            raise ValueError("extents and counts need one entry per axis")
        for n in self.counts:
            if int(n) != n or n < MIN_NODES:
                raise ValueError(f"need at least {MIN_NODES} nodes per axis, got {n}")
        for length in self.extents:
            if not np.isfinite(length) or length <= 0:
                raise ValueError(f"extents must be positive, got {length}")

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / (n - 1) for L, n in zip(self.extents, self.counts))

    @property
    def h(self) -> float:
        """Largest mesh spacing."""
        return max(self.spacing)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.counts))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.counts)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    @cached_property
    def axes(self) -> tuple[NDArray[np.float64], ...]:
        return tuple(np.linspace(0.0, L, n) for L, n in zip(self.extents, self.counts))

    @cached_property
    def axis_weights(self) -> tuple[NDArray[np.float64], ...]:
        return tuple(_trapezoid_weights(n, h) for n, h in zip(self.counts, self.spacing))

    @cached_property
    def coords(self) -> NDArray[np.float64]:
        """Node coordinates, shape (n_nodes, dim)."""
        if self.dim == 1:
            return self.axes[0][:, None].copy()
        X, Y = np.meshgrid(self.axes[0], self.axes[1], indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def quad_weights(self) -> NDArray[np.float64]:
        if self.dim == 1:
            return self.axis_weights[0].copy()
        return np.outer(self.axis_weights[0], self.axis_weights[1]).ravel()

    def node_id(self, i: int, j: int = 0) -> int:
        return i if self.dim == 1 else i * self.counts[1] + j

    @cached_property
    def faces(self) -> tuple[Face, ...]:
        if self.dim == 1:
            n = self.counts[0]
            return (
                Face("x0", 0, 0, (-1.0,), np.array([0]), np.array([1.0])),
                Face("x1", 0, 1, (1.0,), np.array([n - 1]), np.array([1.0])),
            )
        nx, ny = self.counts
        ids = np.arange(nx * ny).reshape(nx, ny)
        wx, wy = self.axis_weights
        return (
            Face("x0", 0, 0, (-1.0, 0.0), ids[0, :].copy(), wy.copy()),
            Face("x1", 0, 1, (1.0, 0.0), ids[-1, :].copy(), wy.copy()),
            Face("y0", 1, 0, (0.0, -1.0), ids[:, 0].copy(), wx.copy()),
            Face("y1", 1, 1, (0.0, 1.0), ids[:, -1].copy(), wx.copy()),
        )

    @cached_property
    def bnode(self) -> NDArray[np.int64]:
        return np.concatenate([f.nodes for f in self.faces])

    @cached_property
    def bweight(self) -> NDArray[np.float64]:
        return np.concatenate([f.weights for f in self.faces])

    @cached_property
    def bnormal(self) -> NDArray[np.float64]:
        return np.concatenate([np.tile(f.normal, (len(f.nodes), 1)) for f in self.faces])

    @cached_property
    def bface(self) -> NDArray[np.int64]:
        """Face index of every boundary entry."""
        return np.concatenate([np.full(len(f.nodes), k) for k, f in enumerate(self.faces)])

    @property
    def n_entries(self) -> int:
        return len(self.bnode)

    @cached_property
    def boundary_nodes(self) -> NDArray[np.int64]:
        return np.unique(self.bnode)

    @cached_property
    def boundary_index(self) -> list[tuple[int, tuple[tuple[float, ...], ...]]]:
        """(node, outward normals) pairs; corners carry two normals."""
        normals: dict[int, list[tuple[float, ...]]] = {}
        for f in self.faces:
            for k in f.nodes:
                normals.setdefault(int(k), []).append(f.normal)
        return [(k, tuple(normals[k])) for k in sorted(normals)]

    @cached_property
    def bquad_weights(self) -> NDArray[np.float64]:
        """Boundary weight of each node, summed over the faces it belongs to."""
        return np.bincount(self.bnode, weights=self.bweight, minlength=self.n_nodes)

    @cached_property
    def interior_mask(self) -> NDArray[np.bool_]:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return mask

    # quadrature on raw arrays -------------------------------------------------

    def integrate(self, values: NDArray[np.float64]) -> float:
        return float(self.quad_weights @ np.asarray(values, dtype=float))

    def entry_values(self, data) -> NDArray[np.float64]:
        """Boundary data as one value per boundary entry.

        Accepts a nodal array, an array already laid out per entry, a scalar,
        or a callable ``fn(coords, normals)`` evaluated per entry.
        """
        if callable(data):
            return np.asarray(data(self.coords[self.bnode], self.bnormal), dtype=float)
        arr = np.asarray(data, dtype=float)
        if arr.ndim == 0:
            return np.full(self.n_entries, float(arr))
        if arr.shape[0] == self.n_entries:
            return arr
        if arr.shape[0] == self.n_nodes:
            return arr[self.bnode]
        raise ValueError(
            f"boundary data of length {arr.shape[0]} matches neither nodes "
            f"({self.n_nodes}) nor boundary entries ({self.n_entries})"
        )

    def boundary_integrate(self, data) -> float:
        return float(self.bweight @ self.entry_values(data))

    def boundary_source(self, data) -> NDArray[np.float64]:
        """Nodal load vector of the boundary integral of ``data`` against hat functions."""
        return np.bincount(self.bnode, weights=self.bweight * self.entry_values(data), minlength=self.n_nodes)

    def normal_derivative(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        """Outward normal derivative per boundary entry, second-order one-sided stencil."""
        v = np.asarray(values, dtype=float).reshape(self.shape)
        out = []
        for f in self.faces:
            h = self.spacing[f.axis]
            a = np.moveaxis(v, f.axis, 0)
            if f.side == 0:
                d = -(-3.0 * a[0] + 4.0 * a[1] - a[2]) / (2.0 * h)
            else:
                d = (3.0 * a[-1] - 4.0 * a[-2] + a[-3]) / (2.0 * h)
            out.append(np.atleast_1d(d))
        return np.concatenate(out)

    def sample(self, fn: Callable[..., NDArray[np.float64]]) -> NDArray[np.float64]:
        """Evaluate ``fn(x)`` or ``fn(x, y)`` at the nodes."""
        cols = [self.coords[:, k] for k in range(self.dim)]
        return np.broadcast_to(np.asarray(fn(*cols), dtype=float), (self.n_nodes,)).copy()

    def header(self) -> str:
        parts = [f"dim={self.dim}", f"nx={self.counts[0]}"]
        if self.dim == 2:
            parts.append(f"ny={self.counts[1]}")
        parts.append(f"Lx={self.extents[0]!r}")
        if self.dim == 2:
            parts.append(f"Ly={self.extents[1]!r}")
        return "# grid " + " ".join(parts)


def build_grid(dim: int, extents: float | Sequence[float], counts: int | Sequence[int]) -> Grid:
    ext = (float(extents),) if np.isscalar(extents) else tuple(float(e) for e in extents)
    cnt = (int(counts),) if np.isscalar(counts) else tuple(int(c) for c in counts)
    if dim == 2 and len(ext) == 1:
        ext = ext * 2
    if dim == 2 and len(cnt) == 1:
        cnt = cnt * 2
    return Grid(int(dim), ext, cnt)


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal values on a grid; scalar (n_nodes,) or vector (n_nodes, k)."""

    grid: Grid
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.ndim not in (1, 2) or vals.shape[0] != self.grid.n_nodes:
            raise ValueError(f"field needs {self.grid.n_nodes} node values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            bad = int(np.argwhere(~np.isfinite(vals))[0][0])
            raise ValueError(f"non-finite field value at node {bad}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[..., NDArray[np.float64]]) -> "Field":
        return cls(grid, grid.sample(fn))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "Field":
        return cls(grid, np.full(grid.n_nodes, float(value)))

    @property
    def components(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def _scalar_values(f: Field) -> NDArray[np.float64]:
    if f.components != 1:
        raise ValueError("scalar field required")
    return f.values


def integrate(f: Field) -> float:
    """Trapezoidal integral over the domain."""
    return f.grid.integrate(_scalar_values(f))


def boundary_integrate(f: Field) -> float:
    """Trapezoidal integral over the boundary, one pass per face."""
    return f.grid.boundary_integrate(_scalar_values(f))


def write_field_csv(f: Field, path: str | os.PathLike | io.TextIOBase) -> None:
    g = f.grid
    vals = f.values.reshape(g.n_nodes, -1)
    lines = [g.header()]
    if g.dim == 1:
        for i in range(g.n_nodes):
            x = g.coords[i, 0]
            lines.append(",".join([str(i), repr(float(x))] + [repr(float(v)) for v in vals[i]]))
    else:
        ny = g.counts[1]
        for k in range(g.n_nodes):
            i, j = divmod(k, ny)
            x, y = g.coords[k]
            lines.append(",".join([str(i), str(j), repr(float(x)), repr(float(y))] + [repr(float(v)) for v in vals[k]]))
    text = "\n".join(lines) + "\n"
    if isinstance(path, io.TextIOBase):
        path.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def read_field_csv(path: str | os.PathLike) -> Field:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        rows = [line.strip().split(",") for line in fh if line.strip()]
    if not header.startswith("# grid"):
        raise ValueError(f"{path}: missing '# grid' header")
    meta = dict(tok.split("=", 1) for tok in header.split()[2:])
    dim = int(meta["dim"])
    if dim == 1:
        grid = build_grid(1, float(meta["Lx"]), int(meta["nx"]))
        vals = np.array([[float(v) for v in r[2:]] for r in rows])
    else:
        grid = build_grid(2, (float(meta["Lx"]), float(meta["Ly"])), (int(meta["nx"]), int(meta["ny"])))
        vals = np.array([[float(v) for v in r[4:]] for r in rows])
    if vals.shape[1] == 1:
        vals = vals[:, 0]
    return Field(grid, vals)
