"""Periodic 1D grid, fields, rectangle-rule quadrature and circular convolution."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ._accel import NUMBA_ENABLED, kernel


class GridMismatchError(ValueError):
    pass


class NegativeDensityError(ValueError):
    pass


NONNEG_BAND = 1e-12


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic grid on the torus ``[0, L)`` with nodes ``x_i = i*h``."""

    length: float
    n_points: int

    def __post_init__(self):
        if not (self.length > 0 and np.isfinite(self.length)):
            raise ValueError(f"torus length must be positive and finite, got {self.length}")
        if int(self.n_points) != self.n_points or self.n_points < 8:
            raise ValueError(f"n_points must be an integer >= 8, got {self.n_points}")
        object.__setattr__(self, "n_points", int(self.n_points))

    @property
    def spacing(self) -> float:
        return self.length / self.n_points

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_points) * self.spacing

    def displacements(self) -> np.ndarray:
        """Signed torus displacement held by each node, in ``(-L/2, L/2]``."""
        x = self.nodes
        return np.where(x <= 0.5 * self.length, x, x - self.length)

    def __str__(self):
        return f"Grid1D(L={self.length:g}, N={self.n_points})"


@dataclass(frozen=True, eq=False)
class Field:
    """Samples of a density on a :class:`Grid1D` (particles per unit length)."""

    grid: Grid1D
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n_points,):
            raise ValueError(
                f"field has shape {v.shape}, grid {self.grid} needs ({self.grid.n_points},)"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.grid.n_points

    def __add__(self, other: "Field") -> "Field":
        require_same_grid(self.grid, other.grid)
        return Field(self.grid, self.values + other.values)

    def scaled(self, factor: float) -> "Field":
        return Field(self.grid, factor * self.values)

    def shifted(self, m: int) -> "Field":
        return Field(self.grid, np.roll(self.values, m))

    def is_nonnegative(self, band: float = NONNEG_BAND) -> bool:
        scale = float(np.max(np.abs(self.values))) if self.values.size else 0.0
        return bool(np.all(self.values >= -band * scale))

    def to_csv(self, column: str = "value") -> str:
        return fields_to_csv(self.grid, {column: self.values})

    @classmethod
    def constant(cls, grid: Grid1D, value: float) -> "Field":
        return cls(grid, np.full(grid.n_points, float(value)))


def require_same_grid(g1: Grid1D, g2: Grid1D) -> None:
    if g1 != g2:
        raise GridMismatchError(f"grid mismatch: {g1} vs {g2}")


def integrate(f: Field) -> float:
    """Rectangle rule ``h * sum(values)``."""
    return f.grid.spacing * float(np.sum(f.values))


def convolve_periodic(f: Field, k: Field) -> Field:
    """Circular convolution ``g_i = h * sum_j k[(i-j) mod N] f[j]`` via FFT."""
    require_same_grid(f.grid, k.grid)
    g = fft_convolve(f.values, k.values, f.grid.spacing)
    return Field(f.grid, g)


def fft_convolve(f: np.ndarray, k: np.ndarray, h: float) -> np.ndarray:
    n = f.shape[-1]
    return h * np.fft.irfft(np.fft.rfft(f) * np.fft.rfft(k), n=n)


def convolve_direct(f: Field, k: Field) -> Field:
    """The O(N^2) defining sum; reference for :func:`convolve_periodic`."""
    require_same_grid(f.grid, k.grid)
    direct = _direct_circular if NUMBA_ENABLED else direct_circular_numpy
    return Field(f.grid, direct(f.values, k.values, f.grid.spacing))


@kernel
def _direct_circular(f, k, h):
    # summing over the kernel offset m keeps the operation order independent of i,
    # so shifting f shifts the result bit for bit
    n = f.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for m in range(n):
            j = i - m
            if j < 0:
                j += n
            acc += k[m] * f[j]
        out[i] = h * acc
    return out


def direct_circular_numpy(f: np.ndarray, k: np.ndarray, h: float) -> np.ndarray:
    """Vectorised fallback for the direct sum, same offset order as the compiled loop."""
    out = np.zeros(f.shape[0])
    for m in range(f.shape[0]):
        out += k[m] * np.roll(f, m)
    return h * out


def fields_to_csv(grid: Grid1D, columns: dict[str, Iterable[float]]) -> str:
    buf = io.StringIO()
    names = list(columns)
    buf.write(",".join(["x", *names]) + "\n")
    cols = [np.asarray(columns[c], dtype=float) for c in names]
    for i, x in enumerate(grid.nodes):
        buf.write(",".join([_fmt(x), *(_fmt(c[i]) for c in cols)]) + "\n")
    return buf.getvalue()


def field_from_csv(text: str, length: float) -> Field:
    """Parse an ``x,value`` CSV written by :meth:`Field.to_csv`."""
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    rows = np.array([[float(t) for t in ln.split(",")[:2]] for ln in lines[1:]])
    grid = Grid1D(length, rows.shape[0])
    if not np.allclose(rows[:, 0], grid.nodes, atol=1e-9 * length):
        raise ValueError("CSV x column does not match a uniform periodic grid")
    return Field(grid, rows[:, 1])


def _fmt(v: float) -> str:
    return repr(float(v))
