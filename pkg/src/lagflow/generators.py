"""Construction and validation of area-preserving initial maps.

Torus kinds produce a :class:`MapGrid`, ``sphere_twist`` a :class:`TwistProfile`.

* ``shear``: ``u = a sin(2 pi k y)``, ``v = 0``.
* ``double_shear``: the x-shear above followed by ``Y -> Y + b sin(2 pi k2 X)``.
* ``hamiltonian``: time-1 map of ``x' = psi_y, y' = -psi_x`` by implicit midpoint.
* ``sphere_twist``: ``h = a (1 - cos theta)`` or a cosine series ``sum c_j cos(j theta)``.
* ``compose``: ``children[1] o children[0]`` resampled with periodic cubic splines.
* ``identity``, ``translation`` and ``affine``: stationary maps used as fixed-point inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy import ndimage

from .errors import ConfigError, GeneratorError
from .grid import MapGrid
from .sphere import TwistProfile, sphere_geometry
from .torus import compute_geometry

TORUS_KINDS = ("shear", "double_shear", "hamiltonian", "compose", "identity", "translation", "affine")
SPHERE_KINDS = ("sphere_twist",)
KINDS = TORUS_KINDS + SPHERE_KINDS

NEWTON_TOL = 1e-13
NEWTON_MAX_ITER = 50
MIN_SUBSTEPS = 16
TWO_PI = 2.0 * math.pi


@dataclass
class StreamMode:
    """One Fourier term of the stream function.

    ``psi = cc cos(X) cos(Y) + cs cos(X) sin(Y) + sc sin(X) cos(Y) + ss sin(X) sin(Y)``
    with ``X = 2 pi kx x`` and ``Y = 2 pi ky y``.
    """

    kx: int = 0
    ky: int = 0
    cc: float = 0.0
    cs: float = 0.0
    sc: float = 0.0
    ss: float = 0.0


@dataclass
class GeneratorSpec:
    kind: str
    a: float = 0.0
    b: float = 0.0
    k: int = 1
    k2: int = 1
    modes: list[StreamMode] = field(default_factory=list)
    substeps: int = 64
    coefficients: list[float] = field(default_factory=list)
    shift: tuple[float, float] = (0.0, 0.0)
    matrix: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.0), (0.0, 1.0))
    children: list["GeneratorSpec"] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown generator kind {self.kind!r}; expected one of {KINDS}")
        for name in ("k", "k2"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ConfigError(f"wavenumber {name} must be an integer >= 1, got {value}")
            setattr(self, name, int(value))
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ConfigError("amplitudes must be finite")
        self.modes = [m if isinstance(m, StreamMode) else StreamMode(**m) for m in self.modes]
        for m in self.modes:
            if m.kx < 0 or m.ky < 0 or (m.kx == 0 and m.ky == 0):
                raise ConfigError(f"stream mode wavenumbers must be >= 0 and not both 0: {m}")
            if not all(math.isfinite(c) for c in (m.cc, m.cs, m.sc, m.ss)):
                raise ConfigError("stream mode coefficients must be finite")
        if self.kind == "hamiltonian":
            if self.substeps < MIN_SUBSTEPS:
                raise ConfigError(f"hamiltonian generator needs substeps >= {MIN_SUBSTEPS}, got {self.substeps}")
            if not self.modes:
                raise ConfigError("hamiltonian generator needs at least one stream mode")
        if not all(math.isfinite(c) for c in self.coefficients):
            raise ConfigError("twist coefficients must be finite")
        self.shift = tuple(float(s) for s in self.shift)
        self.matrix = tuple(tuple(float(x) for x in row) for row in self.matrix)
        if np.asarray(self.matrix).shape != (2, 2) or len(self.shift) != 2:
            raise ConfigError("matrix must be 2x2 and shift a pair")
        self.children = [c if isinstance(c, GeneratorSpec) else GeneratorSpec.from_dict(c) for c in self.children]
        if self.kind == "compose":
            if len(self.children) != 2:
                raise ConfigError("compose needs exactly two children")
            if any(c.kind in SPHERE_KINDS for c in self.children):
                raise ConfigError("compose is only defined for torus maps")

    @property
    def geometry(self) -> str:
        return "sphere" if self.kind in SPHERE_KINDS else "torus"

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorSpec":
        if not isinstance(data, dict) or "kind" not in data:
            raise ConfigError("generator spec must be an object with a 'kind' key")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown generator keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid generator spec: {exc}") from exc


@dataclass
class GeneratorReport:
    """What the generator itself knows about the map it produced.

    ``defect_bound`` is the largest ``|det(Df) - 1|`` of the exact tangent map
    of the discrete construction (zero for the analytic kinds).
    """

    kind: str
    defect_bound: float = 0.0
    newton_iterations: int = 0
    newton_residual: float = 0.0


@dataclass
class ValidationReport:
    jacobian_min: float
    defect_sup: float
    defect_l2: float
    min_eta: float
    is_diffeo: bool

    def lines(self) -> list[str]:
        return [
            f"jacobian_min {self.jacobian_min:.17g}",
            f"defect_sup {self.defect_sup:.17g}",
            f"defect_l2 {self.defect_l2:.17g}",
            f"min_eta {self.min_eta:.17g}",
            f"is_diffeo {str(self.is_diffeo).lower()}",
        ]


# --- stream functions -----------------------------------------------------


def _stream_derivatives(modes, x, y):
    """Gradient and Hessian of psi at the points (x, y)."""
    px = np.zeros_like(x)
    py = np.zeros_like(x)
    pxx = np.zeros_like(x)
    pxy = np.zeros_like(x)
    pyy = np.zeros_like(x)
    for m in modes:
        wx, wy = TWO_PI * m.kx, TWO_PI * m.ky
        cx, sx = np.cos(wx * x), np.sin(wx * x)
        cy, sy = np.cos(wy * y), np.sin(wy * y)
        # psi = X1 * Y1 where X1 in {cos, sin}(wx x), Y1 in {cos, sin}(wy y)
        for coeff, fx, dfx, fy, dfy in (
            (m.cc, cx, -wx * sx, cy, -wy * sy),
            (m.cs, cx, -wx * sx, sy, wy * cy),
            (m.sc, sx, wx * cx, cy, -wy * sy),
            (m.ss, sx, wx * cx, sy, wy * cy),
        ):
            if coeff == 0.0:
                continue
            px += coeff * dfx * fy
            py += coeff * fx * dfy
            pxx += coeff * (-wx * wx) * fx * fy
            pxy += coeff * dfx * dfy
            pyy += coeff * fx * (-wy * wy) * fy
    return px, py, pxx, pxy, pyy


def _hamiltonian(spec: GeneratorSpec, n: int) -> tuple[MapGrid, GeneratorReport]:
    base = MapGrid.identity(n)
    x0, y0 = base.coords()
    x, y = x0.copy(), y0.copy()
    # tangent map of the accumulated flow, per node
    T = np.zeros((2, 2) + x.shape)
    T[0, 0] = 1.0
    T[1, 1] = 1.0
    tau = 1.0 / spec.substeps
    worst_iter = 0
    worst_res = 0.0
    for _ in range(spec.substeps):
        x1, y1 = x.copy(), y.copy()
        for it in range(1, NEWTON_MAX_ITER + 1):
            mx, my = 0.5 * (x + x1), 0.5 * (y + y1)
            px, py, pxx, pxy, pyy = _stream_derivatives(spec.modes, mx, my)
            rx = x1 - x - tau * py
            ry = y1 - y - tau * -px
            res = float(max(np.max(np.abs(rx)), np.max(np.abs(ry))))
            if res <= NEWTON_TOL:
                break
            # d(residual)/d(z1) = I - tau/2 DX with X = (psi_y, -psi_x)
            a11 = 1.0 - 0.5 * tau * pxy
            a12 = -0.5 * tau * pyy
            a21 = 0.5 * tau * pxx
            a22 = 1.0 + 0.5 * tau * pxy
            det = a11 * a22 - a12 * a21
            x1 = x1 - (a22 * rx - a12 * ry) / det
            y1 = y1 - (-a21 * rx + a11 * ry) / det
        else:
            raise GeneratorError(f"implicit midpoint solve did not converge (residual {res:.3e})")
        worst_iter = max(worst_iter, it)
        worst_res = max(worst_res, res)
        mx, my = 0.5 * (x + x1), 0.5 * (y + y1)
        _, _, pxx, pxy, pyy = _stream_derivatives(spec.modes, mx, my)
        # step tangent map (I - tau/2 DX)^{-1} (I + tau/2 DX), DX = [[pxy, pyy], [-pxx, -pxy]]
        h = 0.5 * tau
        m11, m12, m21, m22 = 1.0 - h * pxy, -h * pyy, h * pxx, 1.0 + h * pxy
        p11, p12, p21, p22 = 1.0 + h * pxy, h * pyy, -h * pxx, 1.0 - h * pxy
        det = m11 * m22 - m12 * m21
        s11 = (m22 * p11 - m12 * p21) / det
        s12 = (m22 * p12 - m12 * p22) / det
        s21 = (-m21 * p11 + m11 * p21) / det
        s22 = (-m21 * p12 + m11 * p22) / det
        T = np.stack(
            [
                np.stack([s11 * T[0, 0] + s12 * T[1, 0], s11 * T[0, 1] + s12 * T[1, 1]]),
                np.stack([s21 * T[0, 0] + s22 * T[1, 0], s21 * T[0, 1] + s22 * T[1, 1]]),
            ]
        )
        x, y = x1, y1
    jac = T[0, 0] * T[1, 1] - T[0, 1] * T[1, 0]
    report = GeneratorReport("hamiltonian", float(np.max(np.abs(jac - 1.0))), worst_iter, worst_res)
    return MapGrid(n, x - x0, y - y0), report


# --- composition ----------------------------------------------------------


def _sample_periodic(field_: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    n = field_.shape[0]
    return ndimage.map_coordinates(field_, [x * n, y * n], order=3, mode="grid-wrap")


def _compose(spec: GeneratorSpec, n: int) -> tuple[MapGrid, GeneratorReport]:
    first, r1 = generate_with_report(spec.children[0], n)
    second, r2 = generate_with_report(spec.children[1], n)
    L1, L2 = first.linear, second.linear
    if not np.array_equal(L1, np.round(L1)):
        raise GeneratorError("compose needs an integer linear part in the inner map")
    x, y = first.coords()
    fx, fy = first.values()
    u = L2[0, 0] * first.u + L2[0, 1] * first.v + _sample_periodic(second.u, fx, fy)
    v = L2[1, 0] * first.u + L2[1, 1] * first.v + _sample_periodic(second.v, fx, fy)
    out = MapGrid(n, u, v, L2 @ L1)
    report = validate(out)
    if not report.is_diffeo:
        raise GeneratorError(f"composed map folds: minimum Jacobian {report.jacobian_min:.3e}")
    # analytic children are exact; the resampled result carries interpolation error
    return out, GeneratorReport("compose", max(r1.defect_bound, r2.defect_bound, report.defect_sup))


# --- dispatch ---------------------------------------------------------------


def _twist(spec: GeneratorSpec, m: int) -> TwistProfile:
    if spec.coefficients:
        coeffs = list(spec.coefficients)
        return TwistProfile.from_function(m, lambda t: sum(c * np.cos(j * t) for j, c in enumerate(coeffs)))
    return TwistProfile.from_function(m, lambda t: spec.a * (1.0 - np.cos(t)))


def generate_with_report(spec: GeneratorSpec, n: int):
    """Build the map for ``spec`` at resolution ``n`` and the generator's own report."""
    if spec.kind == "sphere_twist":
        if n < 32:
            raise ConfigError(f"sphere profiles need m >= 32, got {n}")
        return _twist(spec, n), GeneratorReport(spec.kind)
    if n < 8:
        raise ConfigError(f"resolution must be >= 8, got {n}")
    base = MapGrid.identity(n)
    x, y = base.coords()
    if spec.kind == "identity":
        return base, GeneratorReport(spec.kind)
    if spec.kind == "shear":
        return MapGrid(n, spec.a * np.sin(TWO_PI * spec.k * y), np.zeros((n, n))), GeneratorReport(spec.kind)
    if spec.kind == "double_shear":
        u = spec.a * np.sin(TWO_PI * spec.k * y)
        v = spec.b * np.sin(TWO_PI * spec.k2 * (x + u))
        return MapGrid(n, u, v), GeneratorReport(spec.kind)
    if spec.kind == "translation":
        return MapGrid(n, np.full((n, n), spec.shift[0]), np.full((n, n), spec.shift[1])), GeneratorReport(spec.kind)
    if spec.kind == "affine":
        L = np.asarray(spec.matrix, dtype=float)
        u = np.full((n, n), spec.shift[0])
        v = np.full((n, n), spec.shift[1])
        return MapGrid(n, u, v, L), GeneratorReport(spec.kind, abs(float(np.linalg.det(L)) - 1.0))
    if spec.kind == "hamiltonian":
        return _hamiltonian(spec, n)
    return _compose(spec, n)


def generate(spec: GeneratorSpec, n: int) -> MapGrid | TwistProfile:
    return generate_with_report(spec, n)[0]


def validate(target: MapGrid | TwistProfile, order: int = 2) -> ValidationReport:
    """Jacobian, Lagrangian defect and eta of a map; never raises on folded maps."""
    if isinstance(target, TwistProfile):
        geom = sphere_geometry(target)
        defect = geom.jacobian - 1.0
        jac_min = float(np.min(geom.jacobian))
        return ValidationReport(
            jacobian_min=jac_min,
            defect_sup=float(np.max(np.abs(defect))),
            defect_l2=math.sqrt(geom.integrate(defect * defect)),
            min_eta=float(np.min(geom.eta)),
            is_diffeo=jac_min > 0.0,
        )
    geom = compute_geometry(target, order)
    defect = geom.lag_defect
    jac_min = float(np.min(geom.jacobian))
    return ValidationReport(
        jacobian_min=jac_min,
        defect_sup=float(np.max(np.abs(defect))),
        defect_l2=math.sqrt(geom.integrate(defect * defect)),
        min_eta=float(np.min(geom.eta)),
        is_diffeo=jac_min > 0.0,
    )
