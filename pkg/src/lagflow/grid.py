"""Periodic grids on the unit torus: map storage, stencils and snapshot files.

A torus map is stored as a displacement from an affine base map,

    f(x, y) = L @ (x, y) + (u(x, y), v(x, y))

with ``u`` and ``v`` periodic on the ``n x n`` lattice ``x = i/n``, ``y = j/n``.
Axis 0 of every field is ``i`` (the x direction), axis 1 is ``j``.
``L`` is the identity for maps homotopic to the identity; other values are
only used for stationary affine test maps on the lifted lattice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError

MAP_HEADER = "# lagflow-map"

# Centered first/second derivative weights for offsets -2..2.
_D1 = {
    2: np.array([0.0, -0.5, 0.0, 0.5, 0.0]),
    4: np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0,
}
_D2 = {
    2: np.array([0.0, 1.0, -2.0, 1.0, 0.0]),
    4: np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0,
}


def _check_order(order: int) -> None:
    if order not in (2, 4):
        raise ValueError(f"derivative order must be 2 or 4, got {order}")


def _stencil(f: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    out = np.zeros_like(f)
    for offset, w in zip(range(-2, 3), weights):
        if w != 0.0:
            # np.roll(f, -k)[i] == f[i + k]
            out += w * np.roll(f, -offset, axis=axis)
    return out


def d1(f: np.ndarray, axis: int, h: float, order: int = 2) -> np.ndarray:
    """Centered periodic first derivative along ``axis``."""
    _check_order(order)
    return _stencil(f, _D1[order], axis) / h


def d2(f: np.ndarray, axis: int, h: float, order: int = 2) -> np.ndarray:
    """Centered periodic second derivative along ``axis``."""
    _check_order(order)
    return _stencil(f, _D2[order], axis) / (h * h)


def dxy(f: np.ndarray, h: float, order: int = 2) -> np.ndarray:
    """Mixed derivative as the composition of the two first-derivative stencils."""
    return d1(d1(f, 1, h, order), 0, h, order)


@dataclass
class MapGrid:
    """Periodic displacement representation of a torus diffeomorphism."""

    n: int
    u: np.ndarray
    v: np.ndarray
    linear: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        self.n = int(self.n)
        if self.n < 8:
            raise ConfigError(f"grid resolution must be >= 8, got {self.n}")
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.linear = np.asarray(self.linear, dtype=float).reshape(2, 2)
        shape = (self.n, self.n)
        if self.u.shape != shape or self.v.shape != shape:
            raise ConfigError(f"displacement fields must have shape {shape}")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise NumericError("map displacement contains NaN or Inf")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @classmethod
    def identity(cls, n: int) -> "MapGrid":
        return cls(n, np.zeros((n, n)), np.zeros((n, n)))

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Parameter coordinates ``(x, y)`` of the lattice nodes."""
        s = np.arange(self.n) / self.n
        return np.meshgrid(s, s, indexing="ij")

    def values(self) -> tuple[np.ndarray, np.ndarray]:
        """The lifted map components ``f`` and ``g`` on the fundamental domain."""
        x, y = self.coords()
        L = self.linear
        return L[0, 0] * x + L[0, 1] * y + self.u, L[1, 0] * x + L[1, 1] * y + self.v

    def is_identity_class(self) -> bool:
        return bool(np.array_equal(self.linear, np.eye(2)))

    def copy(self) -> "MapGrid":
        return MapGrid(self.n, self.u.copy(), self.v.copy(), self.linear.copy())


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_map(path: str | Path, grid: MapGrid) -> None:
    """Write ``grid`` in the ``# lagflow-map n=<N>`` text format."""
    header = f"{MAP_HEADER} n={grid.n}"
    if not grid.is_identity_class():
        header += " linear=" + ",".join(_fmt(a) for a in grid.linear.ravel())
    lines = [header]
    n = grid.n
    for i in range(n):
        for j in range(n):
            lines.append(f"{i} {j} {_fmt(grid.u[i, j])} {_fmt(grid.v[i, j])}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_map(path: str | Path) -> MapGrid:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(MAP_HEADER):
        raise ConfigError(f"{path}: not a lagflow map snapshot")
    meta = dict(tok.split("=", 1) for tok in text[0][len(MAP_HEADER):].split())
    try:
        n = int(meta["n"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: bad header {text[0]!r}") from exc
    linear = np.eye(2)
    if "linear" in meta:
        linear = np.array([float(a) for a in meta["linear"].split(",")]).reshape(2, 2)
    rows = [r for r in text[1:] if r.strip()]
    if len(rows) != n * n:
        raise ConfigError(f"{path}: expected {n * n} rows, found {len(rows)}")
    u = np.empty((n, n))
    v = np.empty((n, n))
    for row in rows:
        i, j, a, b = row.split()
        u[int(i), int(j)] = float(a)
        v[int(i), int(j)] = float(b)
    return MapGrid(n, u, v, linear)


def write_sidecar(path: str | Path, t: float, step: int) -> None:
    Path(path).write_text(f"# t={_fmt(t)} step={step}\n")


def read_sidecar(path: str | Path) -> tuple[float, int]:
    line = Path(path).read_text().strip()
    if not line.startswith("#"):
        raise ConfigError(f"{path}: not a checkpoint sidecar")
    meta = dict(tok.split("=", 1) for tok in line[1:].split())
    return float(meta["t"]), int(meta["step"])
