"""Scalar monitors recorded along a flow, plus the density and rescaling tools."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from .grid import MapGrid
from .torus import GeometryField, compute_geometry

CSV_COLUMNS = (
    "t",
    "dt",
    "area",
    "min_eta",
    "max_eta",
    "eta_bound",
    "sup_H2",
    "int_H2",
    "sup_A2",
    "int_A2",
    "lag_defect_sup",
    "lag_defect_l2",
    "max_rho",
    "willmore",
    "sigma_ratio_max",
    "twist_residual_sup",
)

RATIO_FLOOR = 1e-14
# exp(-r^2 / 4s) < 1e-16  <=>  r^2 > 4 s ln(1e16)
_KERNEL_CUTOFF = math.log(1e16)

EULER_CHARACTERISTIC = {"torus": 0, "sphere": 2}


@dataclass
class ObservableRow:
    t: float
    dt: float
    area: float
    min_eta: float
    max_eta: float
    eta_bound: float
    sup_H2: float
    int_H2: float
    sup_A2: float
    int_A2: float
    lag_defect_sup: float
    lag_defect_l2: float
    max_rho: float
    willmore: float
    sigma_ratio_max: float
    twist_residual_sup: float = 0.0

    def as_tuple(self) -> tuple[float, ...]:
        return astuple(self)


assert tuple(f.name for f in fields(ObservableRow)) == CSV_COLUMNS


def comparison_bound(t: float, eta0_min: float, c: int) -> float:
    """Lower barrier alpha e^{ct} / sqrt(1 + alpha^2 e^{2ct}) for min eta.

    ``alpha / sqrt(1 + alpha^2) = eta0_min``. Evaluated as
    ``1 / sqrt(1 + e^{-2ct} / alpha^2)`` to stay finite for large ``t``.
    """
    if not (0.0 < eta0_min <= 1.0):
        raise ValueError(f"eta0_min must lie in (0, 1], got {eta0_min}")
    if c not in (0, 1):
        raise ValueError(f"curvature constant must be 0 or 1, got {c}")
    if eta0_min == 1.0:
        return 1.0
    inv_alpha2 = (1.0 - eta0_min) * (1.0 + eta0_min) / (eta0_min * eta0_min)
    return 1.0 / math.sqrt(1.0 + inv_alpha2 * math.exp(-2.0 * c * t))


def wrapped_displacement(grid: MapGrid) -> tuple[np.ndarray, np.ndarray]:
    """Displacement f(x) - x reduced to the nearest lattice representative."""
    x, y = grid.coords()
    f, g = grid.values()
    dx = f - x
    dy = g - y
    return dx - np.round(dx), dy - np.round(dy)


def max_rho(target) -> float:
    """Largest distance from the graph to the diagonal.

    For a product metric, the distance from ``(x, f(x))`` to the diagonal is
    ``d(x, f(x)) / sqrt(2)`` with ``d`` the distance in one factor.
    """
    if isinstance(target, MapGrid):
        dx, dy = wrapped_displacement(target)
        return float(np.max(np.hypot(dx, dy)) / math.sqrt(2.0))
    from .sphere import TwistProfile, great_circle_offset

    if isinstance(target, TwistProfile):
        return float(np.max(great_circle_offset(target)) / math.sqrt(2.0))
    raise TypeError(f"unsupported map type {type(target).__name__}")


def willmore(geom, chi: int) -> float:
    """1/2 int |H|^2 dmu - chi."""
    return 0.5 * geom.integrate(geom.h_norm2) - chi


def sigma_ratio_max(b_tensor: np.ndarray, sigma: np.ndarray, floor: float = RATIO_FLOOR) -> float:
    b2 = np.sum(b_tensor * b_tensor, axis=(0, 1, 2))
    s2 = np.sum(sigma * sigma, axis=0)
    mask = b2 > floor
    if not np.any(mask):
        return 0.0
    return float(np.max(s2[mask] / b2[mask]))


def torus_row(grid: MapGrid, geom: GeometryField, t: float, dt: float, eta0_min: float) -> ObservableRow:
    from .torus import lagrangian_defect

    sup_def, l2_def = lagrangian_defect(geom)
    return ObservableRow(
        t=t,
        dt=dt,
        area=geom.area,
        min_eta=float(np.min(geom.eta)),
        max_eta=float(np.max(geom.eta)),
        eta_bound=comparison_bound(t, eta0_min, 0),
        sup_H2=float(np.max(geom.h_norm2)),
        int_H2=geom.integrate(geom.h_norm2),
        sup_A2=float(np.max(geom.a_norm2)),
        int_A2=geom.integrate(geom.a_norm2),
        lag_defect_sup=sup_def,
        lag_defect_l2=l2_def,
        max_rho=max_rho(grid),
        willmore=willmore(geom, EULER_CHARACTERISTIC["torus"]),
        sigma_ratio_max=sigma_ratio_max(geom.b_tensor, geom.sigma),
        twist_residual_sup=0.0,
    )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path: str | Path, rows) -> None:
    lines = [",".join(CSV_COLUMNS)]
    lines.extend(",".join(_fmt(x) for x in row.as_tuple()) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path: str | Path) -> list[ObservableRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected CSV header")
        return [ObservableRow(**{k: float(v) for k, v in rec.items()}) for rec in reader]


# --- Gaussian density ---------------------------------------------------


def surface_points(grid: MapGrid) -> np.ndarray:
    """Lifted points ``(x, y, f, g)`` in R^4, shape ``(4, n, n)``."""
    x, y = grid.coords()
    f, g = grid.values()
    return np.stack([x, y, f, g])


def surface_point(grid: MapGrid, i: int, j: int) -> np.ndarray:
    return surface_points(grid)[:, i % grid.n, j % grid.n].copy()


def heat_kernel(dist2: np.ndarray, s: float) -> np.ndarray:
    """Backward heat kernel on a 2-dimensional surface at time lag ``s = t0 - t``."""
    return np.exp(-dist2 / (4.0 * s)) / (4.0 * math.pi * s)


def gaussian_density(grid: MapGrid, y0, t0: float, t: float, order: int = 2, geom: GeometryField | None = None) -> float:
    """Integral of the backward heat kernel centred at ``(y0, t0)`` over the graph at time ``t``.

    The torus graph is lifted to R^4 and the kernel is summed over the lattice
    translates whose contribution can exceed 1e-16 of the peak.
    """
    s = t0 - t
    if not s > 0.0:
        raise ValueError(f"density needs t < t0 (got t={t}, t0={t0})")
    y0 = np.asarray(y0, dtype=float)
    if geom is None:
        geom = compute_geometry(grid, order)
    pts = surface_points(grid)
    w = geom.volume_density * geom.cell_area
    radius = math.sqrt(4.0 * s * _KERNEL_CUTOFF)
    L = grid.linear
    total = 0.0
    # Parameter coordinates coincide with the first two ambient ones, so a
    # translate whose unit cell misses the radius cannot contribute.
    m_lo, m_hi = math.floor(y0[0] - radius) - 1, math.ceil(y0[0] + radius) + 1
    k_lo, k_hi = math.floor(y0[1] - radius) - 1, math.ceil(y0[1] + radius) + 1
    for m in range(m_lo, m_hi + 1):
        if m + 1 < y0[0] - radius or m > y0[0] + radius:
            continue
        for k in range(k_lo, k_hi + 1):
            if k + 1 < y0[1] - radius or k > y0[1] + radius:
                continue
            shift = np.array([m, k, L[0, 0] * m + L[0, 1] * k, L[1, 0] * m + L[1, 1] * k])
            d = pts + (shift - y0)[:, None, None]
            total += float(np.sum(heat_kernel(np.sum(d * d, axis=0), s) * w))
    return total


def density_trace(snapshots, y0, t0: float, order: int = 2) -> list[tuple[float, float]]:
    """Density at every snapshot ``(t, grid)`` with ``t < t0``."""
    out = []
    for t, grid in snapshots:
        if t < t0:
            out.append((float(t), gaussian_density(grid, y0, t0, t, order)))
    return out


def parabolic_rescale(points, times, center, t0: float, lam: float):
    """Space-time map ``(x, t) -> (lam (x - center), lam^2 (t - t0))``."""
    if not lam > 0.0:
        raise ValueError(f"rescale factor must be positive, got {lam}")
    points = np.asarray(points, dtype=float)
    times = np.asarray(times, dtype=float)
    center = np.asarray(center, dtype=float)
    return lam * (points - center), lam * lam * (times - t0)
