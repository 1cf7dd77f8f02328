"""Geometry of the graph of a torus map inside the flat product T^2 x T^2.

The graph is the immersion ``F(x, y) = (x, y, f(x, y), g(x, y))`` in R^4
(universal cover). All tensors are stored component-first, node axes last:
the metric is ``(2, 2, n, n)``, the second fundamental form ``(4, 2, 2, n, n)``
indexed ``[alpha, i, j]`` and the B tensor ``(2, 2, 2, n, n)`` indexed
``[k, i, j]`` in the Gram-Schmidt frame built from ``F_x, F_y``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGraphError, NumericError
from .grid import MapGrid, d1, d2, dxy

# Flat complex structure of omega' = omega_1 - omega_2 on R^2 x R^2.
JPRIME = np.array(
    [
        [0.0, -1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0, 0.0],
    ]
)

SYMMETRY_TOL = 1e-8


@dataclass
class GeometryField:
    """Pointwise geometry of a graph surface on the parameter grid."""

    n: int
    order: int
    tangents: np.ndarray  # (2, 4, n, n): F_x, F_y
    jacobian: np.ndarray  # f_x g_y - f_y g_x
    metric: np.ndarray
    inv_metric: np.ndarray
    volume_density: np.ndarray
    second_ff: np.ndarray
    mean_curvature: np.ndarray
    a_norm2: np.ndarray
    h_norm2: np.ndarray
    b_tensor: np.ndarray
    sigma: np.ndarray
    eta: np.ndarray
    lag_defect: np.ndarray

    @property
    def cell_area(self) -> float:
        return 1.0 / self.n**2

    def integrate(self, density: np.ndarray) -> float:
        """Midpoint quadrature of ``density * dmu`` over the torus."""
        return float(np.sum(density * self.volume_density) * self.cell_area)

    @property
    def area(self) -> float:
        return float(np.sum(self.volume_density) * self.cell_area)


def _derivatives(grid: MapGrid, order: int):
    h = grid.h
    L = grid.linear
    fx = L[0, 0] + d1(grid.u, 0, h, order)
    fy = L[0, 1] + d1(grid.u, 1, h, order)
    gx = L[1, 0] + d1(grid.v, 0, h, order)
    gy = L[1, 1] + d1(grid.v, 1, h, order)
    second = np.empty((2, 2, 2) + grid.u.shape)  # [component, i, j]
    for c, w in enumerate((grid.u, grid.v)):
        second[c, 0, 0] = d2(w, 0, h, order)
        second[c, 1, 1] = d2(w, 1, h, order)
        second[c, 0, 1] = second[c, 1, 0] = dxy(w, h, order)
    return fx, fy, gx, gy, second


def _frame_coefficients(metric: np.ndarray) -> np.ndarray:
    """Coefficients ``C[i, a]`` with ``e_i = C[i, a] F_a`` orthonormal (Gram-Schmidt)."""
    g11, g12, g22 = metric[0, 0], metric[0, 1], metric[1, 1]
    det = g11 * g22 - g12 * g12
    n1 = np.sqrt(g11)
    n2 = np.sqrt(det / g11)
    C = np.zeros((2, 2) + g11.shape)
    C[0, 0] = 1.0 / n1
    C[1, 0] = -g12 / (g11 * n2)
    C[1, 1] = 1.0 / n2
    return C


def frame_tensors(tangents, second_ff, mean_curvature, metric, jprime=JPRIME):
    """B_{kij} = -<A(e_i, e_j), J' e_k> and sigma_k = <J' e_k, H> in the Gram-Schmidt frame."""
    C = _frame_coefficients(metric)
    dim = tangents.shape[1]
    e = [C[i, 0] * tangents[0] + C[i, 1] * tangents[1] for i in range(2)]
    je = [np.tensordot(jprime, e[k], axes=(1, 0)) for k in range(2)]
    # A(e_i, e_j) = C_ia C_jb A_ab
    A_frame = np.zeros((dim, 2, 2) + metric.shape[2:])
    for i in range(2):
        for j in range(i, 2):
            acc = 0.0
            for a in range(2):
                for b in range(2):
                    acc = acc + C[i, a] * C[j, b] * second_ff[:, a, b]
            A_frame[:, i, j] = acc
            A_frame[:, j, i] = acc
    B = np.empty((2, 2, 2) + metric.shape[2:])
    sigma = np.empty((2,) + metric.shape[2:])
    for k in range(2):
        for i in range(2):
            for j in range(2):
                B[k, i, j] = -np.sum(A_frame[:, i, j] * je[k], axis=0)
        sigma[k] = np.sum(je[k] * mean_curvature, axis=0)
    return B, sigma


def _normal_parts(Fij, tangents, ginv):
    """Subtract the tangential projection from each F_ij (flat ambient space)."""
    A = np.empty_like(Fij)
    for i in range(2):
        for j in range(i, 2):
            X = Fij[:, i, j]
            p0 = np.sum(X * tangents[0], axis=0)
            p1 = np.sum(X * tangents[1], axis=0)
            c0 = ginv[0, 0] * p0 + ginv[0, 1] * p1
            c1 = ginv[1, 0] * p0 + ginv[1, 1] * p1
            A[:, i, j] = X - c0 * tangents[0] - c1 * tangents[1]
            A[:, j, i] = A[:, i, j]
    return A


def contract_second_ff(A, ginv):
    """H = g^{ij} A_ij and |A|^2 = g^{ik} g^{jl} <A_ij, A_kl>."""
    H = ginv[0, 0] * A[:, 0, 0] + 2.0 * ginv[0, 1] * A[:, 0, 1] + ginv[1, 1] * A[:, 1, 1]
    a2 = 0.0
    for i in range(2):
        for j in range(2):
            for k in range(2):
                for l in range(2):
                    a2 = a2 + ginv[i, k] * ginv[j, l] * np.sum(A[:, i, j] * A[:, k, l], axis=0)
    return H, a2


def compute_geometry(grid: MapGrid, order: int = 2) -> GeometryField:
    """Induced metric, second fundamental form, H, B, sigma and eta of the graph.

    Raises:
        DegenerateGraphError: the induced metric is not positive definite somewhere.
        NumericError: a derived field is not finite.
    """
    fx, fy, gx, gy, second = _derivatives(grid, order)
    return geometry_from_jet(fx, fy, gx, gy, second, n=grid.n, order=order)


def geometry_from_jet(fx, fy, gx, gy, second, *, n: int = 0, order: int = 2) -> GeometryField:
    """Graph geometry from first derivatives and ``second[c, i, j]`` of (f, g).

    Works on arrays of any shape, so a single node (or an analytic jet) can
    be evaluated without building a grid. ``n`` only sets the quadrature cell.
    """
    fx, fy, gx, gy = (np.asarray(a, dtype=float) for a in (fx, fy, gx, gy))
    second = np.asarray(second, dtype=float)
    one = np.ones_like(fx)
    zero = np.zeros_like(fx)
    tangents = np.stack([np.stack([one, zero, fx, gx]), np.stack([zero, one, fy, gy])])

    g = np.empty((2, 2) + fx.shape)
    g[0, 0] = 1.0 + fx * fx + gx * gx
    g[1, 1] = 1.0 + fy * fy + gy * gy
    g[0, 1] = g[1, 0] = fx * fy + gx * gy
    det = g[0, 0] * g[1, 1] - g[0, 1] ** 2
    if not (np.all(np.isfinite(det)) and np.all(np.isfinite(second))):
        raise NumericError("non-finite derivatives in geometry computation")
    bad = (det <= 0.0) | (g[0, 0] <= 0.0)
    if np.any(bad):
        node = tuple(int(a) for a in np.argwhere(bad)[0])
        raise DegenerateGraphError("induced metric is not positive definite", node)
    ginv = np.empty_like(g)
    ginv[0, 0] = g[1, 1] / det
    ginv[1, 1] = g[0, 0] / det
    ginv[0, 1] = ginv[1, 0] = -g[0, 1] / det

    # F_ij = (0, 0, u_ij, v_ij)
    Fij = np.zeros((4, 2, 2) + fx.shape)
    Fij[2:] = second
    A = _normal_parts(Fij, tangents, ginv)
    H, a2 = contract_second_ff(A, ginv)
    h2 = np.sum(H * H, axis=0)

    jac = fx * gy - fy * gx
    sqrt_det = np.sqrt(det)
    eta = (1.0 + jac) / sqrt_det
    B, sigma = frame_tensors(tangents, A, H, g)

    for name, arr in (("mean curvature", H), ("|A|^2", a2), ("eta", eta)):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite {name}")

    return GeometryField(
        n=n,
        order=order,
        tangents=tangents,
        jacobian=jac,
        metric=g,
        inv_metric=ginv,
        volume_density=sqrt_det,
        second_ff=A,
        mean_curvature=H,
        a_norm2=a2,
        h_norm2=h2,
        b_tensor=B,
        sigma=sigma,
        eta=eta,
        lag_defect=jac - 1.0,
    )


def eta_closed_form(geom: GeometryField) -> np.ndarray:
    """eta from the area-preserving graph formula 2 / sqrt(1 + |Df|^2 + Jac^2).

    Only meaningful where the Jacobian is 1; elsewhere it can exceed 1.
    """
    t = geom.tangents
    dfs = t[0, 2] ** 2 + t[1, 2] ** 2 + t[0, 3] ** 2 + t[1, 3] ** 2
    return 2.0 / np.sqrt(1.0 + dfs + geom.jacobian**2)


def eta_field(geom: GeometryField, tol: float = 1e-12) -> np.ndarray:
    """eta = *(omega_1 + omega_2) = (1 + Jac) / sqrt(det g) per node.

    At nodes whose Lagrangian defect is below ``tol`` the closed graph formula
    must agree to ``tol``; a mismatch indicates an internal inconsistency.
    """
    eta = geom.eta
    exact = np.abs(geom.lag_defect) <= tol
    if np.any(exact):
        gap = np.max(np.abs(eta_closed_form(geom)[exact] - eta[exact]))
        if gap > 10 * tol:
            raise NumericError(f"eta cross-check failed: closed form differs by {gap:.3e}")
    return eta


def lagrangian_defect(geom: GeometryField) -> tuple[float, float]:
    """Sup norm and area-weighted L2 norm of ``Jac - 1``."""
    r = geom.lag_defect
    sup = float(np.max(np.abs(r)))
    l2 = float(np.sqrt(geom.integrate(r * r)))
    return sup, l2


def b_sigma_from_A(geom: GeometryField) -> tuple[np.ndarray, np.ndarray]:
    """Recompute (B, sigma) from the stored second fundamental form and H."""
    return frame_tensors(geom.tangents, geom.second_ff, geom.mean_curvature, geom.metric)


@dataclass
class BIdentity:
    lhs: np.ndarray  # 2|B|^2 - |sigma|^2
    rhs: np.ndarray  # sum_k (h_31k - h_42k)^2 + (h_32k + h_41k)^2
    ratio: np.ndarray  # |sigma|^2 / |B|^2, NaN where |B|^2 <= ratio_floor
    b_norm2: np.ndarray
    sigma_norm2: np.ndarray
    asymmetry: float
    warning: str | None = None


def symmetry_defect(B: np.ndarray) -> float:
    """Largest deviation of B from full symmetry in its three indices."""
    Bt = np.moveaxis(B, (0, 1, 2), (1, 0, 2))  # B_{ikj}
    Bs = np.moveaxis(B, (0, 1, 2), (2, 1, 0))  # B_{jik}
    return float(max(np.max(np.abs(B - Bt)), np.max(np.abs(B - Bs)), 0.0))


def b_identities(B, sigma=None, *, ratio_floor: float = 1e-14, tol: float = SYMMETRY_TOL) -> BIdentity:
    """Both sides of the 2|B|^2 - |sigma|^2 identity and the |sigma|^2/|B|^2 ratio.

    ``B`` has shape ``(2, 2, 2, ...)``. If ``sigma`` is omitted it is taken as
    the trace ``-sum_i B_kii`` (sign is irrelevant for the norms).
    """
    B = np.asarray(B, dtype=float)
    if sigma is None:
        sigma = -np.einsum("kii...->k...", B)
    sigma = np.asarray(sigma, dtype=float)
    b2 = np.sum(B * B, axis=(0, 1, 2))
    s2 = np.sum(sigma * sigma, axis=0)
    lhs = 2.0 * b2 - s2

    # h_{3ij} = -B_{1ij}, h_{4ij} = -B_{2ij}
    h3, h4 = -B[0], -B[1]
    rhs = np.zeros_like(b2)
    for k in range(2):
        rhs = rhs + (h3[0, k] - h4[1, k]) ** 2 + (h3[1, k] + h4[0, k]) ** 2

    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(b2 > ratio_floor, s2 / np.where(b2 > 0, b2, 1.0), np.nan)

    asym = symmetry_defect(B)
    warning = None
    if asym > tol:
        warning = f"B is not fully symmetric (defect {asym:.3e}); identity not guaranteed"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return BIdentity(lhs, rhs, ratio, b2, s2, asym, warning)
