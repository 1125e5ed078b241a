"""Uniform 1-D grids, nodal fields, discrete norms and the Dirichlet Laplacian.

Fields store interior nodal values only; the two boundary values are implicit
zeros.  The discrete L2 inner product is the composite trapezoid rule with
those zeros, ``<v, w>_H = h * sum(v * w)``, and the H1_0 seminorm is the
forward-difference energy ``<-Lap_h v, v>_H``, so ``-Lap_h`` is exactly
self-adjoint in the discrete H inner product.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg


class GridError(ValueError):
    """Invalid grid parameters."""


@dataclass(frozen=True)
class Grid:
    a: float
    b: float
    n: int

    def __post_init__(self):
        if not self.b > self.a:
            raise GridError(f"empty domain: b={self.b} must exceed a={self.a}")
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise GridError(f"need at least one interior node, got n={self.n}")

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.n + 1)

    @property
    def length(self) -> float:
        return self.b - self.a

    @property
    def nodes(self) -> np.ndarray:
        return self.a + np.arange(1, self.n + 1) * self.h

    def to_json(self) -> dict:
        return {"a": self.a, "b": self.b, "n": self.n}

    @classmethod
    def from_json(cls, d: dict) -> "Grid":
        return cls(float(d["a"]), float(d["b"]), int(d["n"]))


def make_uniform_grid(a: float, b: float, n: int) -> Grid:
    return Grid(float(a), float(b), n)


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n,):
            raise ValueError(
                f"field has shape {self.values.shape}, grid expects ({self.grid.n},)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @classmethod
    def from_function(cls, grid: Grid, func) -> "ScalarField":
        return cls(grid, np.broadcast_to(func(grid.nodes), (grid.n,)).copy())

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.n, float(value)))

    def __add__(self, other):
        return ScalarField(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - _vals(other))

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


def _vals(x):
    return x.values if isinstance(x, ScalarField) else x


class NormKind(enum.Enum):
    H = "H"
    V_SEMI = "V_semi"
    V_FULL = "V_full"
    H_MINUS1 = "H_minus1"


class DirichletLaplacian:
    """The matrix of ``-Lap_h`` on the interior nodes, ``(2v_i - v_{i-1} - v_{i+1}) / h^2``."""

    def __init__(self, grid: Grid):
        self.grid = grid
        n, h2 = grid.n, grid.h ** 2
        self.diag = np.full(n, 2.0 / h2)
        self.off = np.full(max(n - 1, 0), -1.0 / h2)

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        out = self.diag * v
        out[:-1] += self.off * v[1:]
        out[1:] += self.off * v[:-1]
        return out

    def banded(self, scale: float = 1.0, shift: float | np.ndarray = 0.0) -> np.ndarray:
        """Banded storage of ``shift*I + scale*(-Lap_h)`` for ``scipy.linalg.solve_banded``."""
        n = self.grid.n
        ab = np.zeros((3, n))
        ab[0, 1:] = scale * self.off
        ab[1] = scale * self.diag + shift
        ab[2, :-1] = scale * self.off
        return ab

    def solve(self, f: np.ndarray, scale: float = 1.0, shift: float | np.ndarray = 0.0) -> np.ndarray:
        return linalg.solve_banded((1, 1), self.banded(scale, shift), np.asarray(f, dtype=float))

    def matrix(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    @cached_property
    def smallest_eigenvalue(self) -> float:
        if self.grid.n == 1:
            return float(self.diag[0])
        w = linalg.eigvalsh_tridiagonal(self.diag, self.off, select="i", select_range=(0, 0))
        return float(w[0])


_LAPLACIANS: dict[Grid, DirichletLaplacian] = {}


def assemble_laplacian(grid: Grid) -> DirichletLaplacian:
    lap = _LAPLACIANS.get(grid)
    if lap is None:
        lap = _LAPLACIANS[grid] = DirichletLaplacian(grid)
    return lap


def embedding_constant(grid: Grid) -> float:
    """Largest c with ``|v|_{V_semi}^2 >= c |v|_H^2`` for every discrete field.

    The quadrature mass matrix is ``h*I``, so this is the smallest eigenvalue
    of ``-Lap_h`` itself.
    """
    return assemble_laplacian(grid).smallest_eigenvalue


def sup_embedding_factor(grid: Grid) -> float:
    """Constant with ``max|v_i| <= C |v|_{V_semi}``; ``sqrt(length)/2`` holds on the grid too."""
    return 0.5 * math.sqrt(grid.length)


# array-level kernels, used in the time loops

def inner_h(v: np.ndarray, w: np.ndarray, grid: Grid) -> float:
    return grid.h * float(np.dot(v, w))


def norm_h(v: np.ndarray, grid: Grid) -> float:
    return math.sqrt(grid.h * float(np.dot(v, v)))


def norm_v(v: np.ndarray, grid: Grid) -> float:
    d = np.diff(v, prepend=0.0, append=0.0)
    return math.sqrt(float(np.dot(d, d)) / grid.h)


def norm_dual(w: np.ndarray, grid: Grid) -> float:
    """Dual norm of ``V_semi``: ``sup <w, v>_H / |v|_V = sqrt(<w, (-Lap_h)^{-1} w>_H)``."""
    y = assemble_laplacian(grid).solve(w)
    return math.sqrt(max(grid.h * float(np.dot(w, y)), 0.0))


def norm(field: ScalarField, kind: NormKind) -> float:
    v, g = field.values, field.grid
    if kind is NormKind.H:
        return norm_h(v, g)
    if kind is NormKind.V_SEMI:
        return norm_v(v, g)
    if kind is NormKind.V_FULL:
        return math.sqrt(norm_h(v, g) ** 2 + norm_v(v, g) ** 2)
    if kind is NormKind.H_MINUS1:
        return norm_dual(v, g)
    raise ValueError(f"unknown norm kind {kind!r}")


def write_field_csv(field: ScalarField, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "value"])
        for x, v in zip(field.grid.nodes, field.values):
            w.writerow([f"{x:.17g}", f"{v:.17g}"])


def read_field_csv(path, grid: Grid) -> ScalarField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if not np.allclose(data[:, 0], grid.nodes, rtol=0, atol=1e-12 * grid.length):
        raise ValueError(f"{path}: node coordinates do not match grid {grid}")
    return ScalarField(grid, data[:, 1])


def write_grid_json(grid: Grid, path) -> None:
    Path(path).write_text(json.dumps(grid.to_json(), indent=2) + "\n")
