"""Equivariant twist maps of the round sphere and their flow in S^2 x S^2.

A profile ``h`` on the colatitude nodes ``theta_i = (i + 1/2) pi / m``
represents the area-preserving map ``(theta, phi) -> (theta, phi + h(theta))``.
Its graph is embedded in R^3 x R^3. Because the graph is invariant under the
diagonal rotation about the z axis, all geometry is evaluated on the slice
``phi = 0``; phi-derivatives come from the rotation generator exactly.

The mean curvature is ``g^{ij} d_ij F`` projected off the surface tangents
and the two radial directions ``(p, 0)`` and ``(0, q)``. The reduced velocity
is the coefficient of the normal part ``W`` of the twist field ``(0, dq/dphi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .errors import ConfigError, DegenerateGraphError, NumericError

TWIST_HEADER = "# lagflow-twist"
MIN_NODES = 32
W_FLOOR = 1e-10
RATIO_FLOOR = 1e-14


@dataclass
class TwistProfile:
    m: int
    h: np.ndarray

    def __post_init__(self):
        self.m = int(self.m)
        self.h = np.asarray(self.h, dtype=float).copy()
        if self.h.shape != (self.m,):
            raise ConfigError(f"profile must have {self.m} values, got shape {self.h.shape}")
        if not np.all(np.isfinite(self.h)):
            raise NumericError("twist profile contains NaN or Inf")

    @property
    def dtheta(self) -> float:
        return math.pi / self.m

    @property
    def theta(self) -> np.ndarray:
        return (np.arange(self.m) + 0.5) * self.dtheta

    @classmethod
    def from_function(cls, m: int, fn) -> "TwistProfile":
        theta = (np.arange(m) + 0.5) * math.pi / m
        return cls(m, fn(theta))

    def copy(self) -> "TwistProfile":
        return TwistProfile(self.m, self.h.copy())


def profile_derivatives(h: np.ndarray, dtheta: float) -> tuple[np.ndarray, np.ndarray]:
    """Centered h' and h'' with even reflection across both poles."""
    ext = np.concatenate(([h[0]], h, [h[-1]]))
    hp = (ext[2:] - ext[:-2]) / (2.0 * dtheta)
    hpp = (ext[:-2] - 2.0 * ext[1:-1] + ext[2:]) / (dtheta * dtheta)
    return hp, hpp


@njit(cache=True, boundscheck=False, error_model="numpy")
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True, boundscheck=False, error_model="numpy")
def _dot6(a, b):
    acc = 0.0
    for k in range(6):
        acc += a[k] * b[k]
    return acc


@njit(cache=True, boundscheck=False, error_model="numpy")
def sphere_fields(theta, h, hp, hpp, Hout, Wout, scal, full=True):
    """Per-node geometry of the twist graph on the phi = 0 slice.

    With ``full=False`` only rows 0 and 10 (what the time step needs) are written.

    ``scal`` rows: 0 hdot, 1 residual, 2 |A|^2, 3 |H|^2, 4 sqrt(det g),
    5 eta, 6 Jacobian, 7 |B|^2, 8 |sigma|^2, 9 |W|, 10 g^{theta theta}.
    """
    m = theta.shape[0]
    Ft = np.empty(6)
    Ff = np.empty(6)
    Ftt = np.empty(6)
    Ftf = np.empty(6)
    Fff = np.empty(6)
    n1 = np.zeros(6)
    n2 = np.zeros(6)
    A = np.empty((3, 6))  # tt, tf, ff
    X = np.empty(6)
    W = np.empty(6)
    H = np.empty(6)
    cr = np.empty(3)
    e = np.empty((2, 6))
    je = np.empty((2, 6))
    Af = np.empty((3, 6))  # frame components 11, 12, 22
    for i in range(m):
        s = math.sin(theta[i])
        c = math.cos(theta[i])
        cp = math.cos(h[i])
        sp = math.sin(h[i])
        d1 = hp[i]
        d2 = hpp[i]
        # first factor p(theta, phi) at phi = 0
        p = (s, 0.0, c)
        pt = (c, 0.0, -s)
        pf = (0.0, s, 0.0)
        ptt = (-s, 0.0, -c)
        ptf = (0.0, c, 0.0)
        pff = (-s, 0.0, 0.0)
        # second factor q(theta, psi), psi = phi + h
        q = (s * cp, s * sp, c)
        qt = (c * cp, c * sp, -s)
        qp = (-s * sp, s * cp, 0.0)
        qtt = (-s * cp, -s * sp, -c)
        qtp = (-c * sp, c * cp, 0.0)
        qpp = (-s * cp, -s * sp, 0.0)
        for k in range(3):
            Ft[k] = pt[k]
            Ft[3 + k] = qt[k] + d1 * qp[k]
            Ff[k] = pf[k]
            Ff[3 + k] = qp[k]
            Ftt[k] = ptt[k]
            Ftt[3 + k] = qtt[k] + 2.0 * d1 * qtp[k] + d1 * d1 * qpp[k] + d2 * qp[k]
            Ftf[k] = ptf[k]
            Ftf[3 + k] = qtp[k] + d1 * qpp[k]
            Fff[k] = pff[k]
            Fff[3 + k] = qpp[k]
            n1[k] = p[k]
            n2[3 + k] = q[k]
            X[k] = 0.0
            X[3 + k] = qp[k]
        g11 = _dot6(Ft, Ft)
        g12 = _dot6(Ft, Ff)
        g22 = _dot6(Ff, Ff)
        det = g11 * g22 - g12 * g12
        i11 = g22 / det
        i12 = -g12 / det
        i22 = g11 / det
        # normal projection (tangent to S^2 x S^2, normal to the surface)
        for r in range(4):
            if r == 0:
                src = Ftt
            elif r == 1:
                src = Ftf
            elif r == 2:
                src = Fff
            else:
                src = X
            a = _dot6(src, Ft)
            b = _dot6(src, Ff)
            ca = i11 * a + i12 * b
            cb = i12 * a + i22 * b
            r1 = _dot6(src, n1)
            r2 = _dot6(src, n2)
            for k in range(6):
                val = src[k] - ca * Ft[k] - cb * Ff[k] - r1 * n1[k] - r2 * n2[k]
                if r < 3:
                    A[r, k] = val
                else:
                    W[k] = val
        for k in range(6):
            H[k] = i11 * A[0, k] + 2.0 * i12 * A[1, k] + i22 * A[2, k]
            Hout[k, i] = H[k]
            Wout[k, i] = W[k]
        ww = _dot6(W, W)
        hdot = _dot6(H, W) / ww
        if not full:
            scal[0, i] = hdot
            scal[10, i] = i11
            continue
        res = 0.0
        for k in range(6):
            dlt = H[k] - hdot * W[k]
            res += dlt * dlt
        # |A|^2 = g^{ik} g^{jl} <A_ij, A_kl>
        gi = ((i11, i12), (i12, i22))
        a2 = 0.0
        for ii in range(2):
            for jj in range(2):
                for kk in range(2):
                    for ll in range(2):
                        a2 += gi[ii][kk] * gi[jj][ll] * _dot6(A[ii + jj], A[kk + ll])
        sq = math.sqrt(det)
        _cross(pt, pf, cr)
        w1 = p[0] * cr[0] + p[1] * cr[1] + p[2] * cr[2]
        _cross(Ft[3:], Ff[3:], cr)
        w2 = q[0] * cr[0] + q[1] * cr[1] + q[2] * cr[2]
        # Gram-Schmidt frame and J' = (p x ., -q x .)
        n_1 = math.sqrt(g11)
        n_2 = math.sqrt(det / g11)
        C = ((1.0 / n_1, 0.0), (-g12 / (g11 * n_2), 1.0 / n_2))
        for kk in range(2):
            for k in range(6):
                e[kk, k] = C[kk][0] * Ft[k] + C[kk][1] * Ff[k]
            _cross(p, e[kk, :3], cr)
            je[kk, 0] = cr[0]
            je[kk, 1] = cr[1]
            je[kk, 2] = cr[2]
            _cross(q, e[kk, 3:], cr)
            je[kk, 3] = -cr[0]
            je[kk, 4] = -cr[1]
            je[kk, 5] = -cr[2]
        for r in range(3):
            ii = 0 if r < 2 else 1
            jj = 0 if r == 0 else 1
            for k in range(6):
                acc = 0.0
                for a in range(2):
                    for b in range(2):
                        acc += C[ii][a] * C[jj][b] * A[a + b, k]
                Af[r, k] = acc
        b2 = 0.0
        s2 = 0.0
        for kk in range(2):
            b11 = -_dot6(Af[0], je[kk])
            b12 = -_dot6(Af[1], je[kk])
            b22 = -_dot6(Af[2], je[kk])
            b2 += b11 * b11 + 2.0 * b12 * b12 + b22 * b22
            sg = _dot6(je[kk], H)
            s2 += sg * sg
        scal[0, i] = hdot
        scal[1, i] = math.sqrt(res)
        scal[2, i] = a2
        scal[3, i] = _dot6(H, H)
        scal[4, i] = sq
        scal[5, i] = (w1 + w2) / sq
        scal[6, i] = w2 / w1
        scal[7, i] = b2
        scal[8, i] = s2
        scal[9, i] = math.sqrt(ww)
        scal[10, i] = i11


@njit(cache=True, boundscheck=False, error_model="numpy")
def _advance(theta, h, dth, cfl, pole_weight, nsteps, t, t_end):
    """Up to ``nsteps`` forward-Euler steps of the twist profile, stopping at ``t_end``.

    Returns ``(t, dt, steps, finite)``; ``h`` is updated in place. Each step
    reads only the previous profile (derivatives are formed before the update).
    """
    m = h.shape[0]
    hp = np.empty(m)
    hpp = np.empty(m)
    H = np.empty((6, m))
    W = np.empty((6, m))
    scal = np.empty((11, m))
    dt = 0.0
    inv2 = 0.5 / dth
    inv = 1.0 / (dth * dth)
    for k in range(nsteps):
        if t >= t_end:
            return t, dt, k, True
        for i in range(m):
            lo = h[i - 1] if i > 0 else h[0]
            hi = h[i + 1] if i < m - 1 else h[m - 1]
            hp[i] = (hi - lo) * inv2
            hpp[i] = (lo - 2.0 * h[i] + hi) * inv
        sphere_fields(theta, h, hp, hpp, H, W, scal, False)
        worst = 0.0
        for i in range(m):
            if not math.isfinite(scal[0, i]):
                return t, dt, k, False
            w = scal[10, i] * pole_weight[i]
            if w > worst:
                worst = w
        dt = cfl * dth * dth / worst
        if dt >= t_end - t:
            dt = t_end - t
            t_new = t_end
        else:
            t_new = t + dt
        for i in range(m):
            h[i] += dt * scal[0, i]
        t = t_new
    return t, dt, nsteps, True


@dataclass
class SphereGeometry:
    m: int
    theta: np.ndarray
    p: np.ndarray  # (3, m)
    q: np.ndarray  # (3, m)
    h_prime: np.ndarray
    volume_density: np.ndarray  # sqrt det g in (theta, phi)
    inv_metric_tt: np.ndarray
    mean_curvature: np.ndarray  # (6, m), normal to the surface inside S^2 x S^2
    twist_field: np.ndarray  # W, (6, m)
    hdot: np.ndarray
    twist_residual: np.ndarray
    a_norm2: np.ndarray
    h_norm2: np.ndarray
    eta: np.ndarray
    jacobian: np.ndarray
    b_norm2: np.ndarray
    sigma_norm2: np.ndarray

    @property
    def dtheta(self) -> float:
        return math.pi / self.m

    def integrate(self, density: np.ndarray) -> float:
        """Quadrature over the full surface: 2 pi sum density * sqrt(g) dtheta."""
        return float(2.0 * math.pi * np.sum(density * self.volume_density) * self.dtheta)

    @property
    def area(self) -> float:
        return self.integrate(np.ones(self.m))

    @property
    def sigma_ratio(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.b_norm2 > RATIO_FLOOR, self.sigma_norm2 / self.b_norm2, np.nan)


def _embedding(profile: TwistProfile):
    th = profile.theta
    s, c = np.sin(th), np.cos(th)
    p = np.stack([s, np.zeros_like(s), c])
    q = np.stack([s * np.cos(profile.h), s * np.sin(profile.h), c])
    return p, q


def sphere_geometry(profile: TwistProfile, *, min_nodes: int = MIN_NODES) -> SphereGeometry:
    """Geometry of the twist graph in S^2 x S^2 on the colatitude nodes."""
    if profile.m < min_nodes:
        raise ConfigError(f"sphere profiles need m >= {min_nodes}, got {profile.m}")
    th = profile.theta
    hp, hpp = profile_derivatives(profile.h, profile.dtheta)
    H = np.empty((6, profile.m))
    W = np.empty((6, profile.m))
    scal = np.empty((11, profile.m))
    sphere_fields(th, profile.h, hp, hpp, H, W, scal)
    if not np.all(np.isfinite(scal)):
        raise NumericError("non-finite sphere geometry")
    if np.min(scal[9]) < W_FLOOR:
        i = int(np.argmin(scal[9]))
        raise DegenerateGraphError("twist field vanishes (near-pole degeneracy)", (i,))
    p, q = _embedding(profile)
    return SphereGeometry(
        m=profile.m,
        theta=th,
        p=p,
        q=q,
        h_prime=hp,
        volume_density=scal[4].copy(),
        inv_metric_tt=scal[10].copy(),
        mean_curvature=H,
        twist_field=W,
        hdot=scal[0].copy(),
        twist_residual=scal[1].copy(),
        a_norm2=scal[2].copy(),
        h_norm2=scal[3].copy(),
        eta=scal[5].copy(),
        jacobian=scal[6].copy(),
        b_norm2=scal[7].copy(),
        sigma_norm2=scal[8].copy(),
    )


def twist_velocity(geom: SphereGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Reduced velocity hdot = <H, W>/|W|^2 and the residual |H - hdot W| per node."""
    return geom.hdot, geom.twist_residual


def great_circle_offset(profile: TwistProfile) -> np.ndarray:
    """Great-circle distance between each node x and its image f(x)."""
    p, q = _embedding(profile)
    cr = np.cross(p.T, q.T)
    return np.arctan2(np.linalg.norm(cr, axis=1), np.sum(p * q, axis=0))


def sphere_cfl_dt(geom: SphereGeometry, cfl: float) -> float:
    """cfl * dtheta^2 / max_i [g^{tt}_i (1 + 1.5 dtheta |cot theta_i|)].

    The cot term is the first-order part of the reduced operator, which
    behaves like a zonal Laplacian on S^4 and stiffens near the poles.
    """
    dth = geom.dtheta
    weight = geom.inv_metric_tt * (1.0 + 1.5 * dth * np.abs(np.cos(geom.theta) / np.sin(geom.theta)))
    return cfl * dth * dth / float(np.max(weight))


def profile_drift(profile: TwistProfile) -> float:
    """sup |h - mean(h)| with the mean weighted by the sphere area element."""
    w = np.sin(profile.theta)
    mean = float(np.sum(profile.h * w) / np.sum(w))
    return float(np.max(np.abs(profile.h - mean)))


def write_profile(path: str | Path, profile: TwistProfile) -> None:
    lines = [f"{TWIST_HEADER} m={profile.m}"]
    for i, (th, hv) in enumerate(zip(profile.theta, profile.h)):
        lines.append(f"{i} {format(float(th), '.17g')} {format(float(hv), '.17g')}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_profile(path: str | Path) -> TwistProfile:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(TWIST_HEADER):
        raise ConfigError(f"{path}: not a lagflow twist snapshot")
    meta = dict(tok.split("=", 1) for tok in text[0][len(TWIST_HEADER):].split())
    m = int(meta["m"])
    rows = [r.split() for r in text[1:] if r.strip()]
    if len(rows) != m:
        raise ConfigError(f"{path}: expected {m} rows, found {len(rows)}")
    h = np.empty(m)
    for i, _theta, hv in rows:
        h[int(i)] = float(hv)
    return TwistProfile(m, h)


def _sphere_row(profile: TwistProfile, geom: SphereGeometry, t: float, dt: float, eta0: float):
    from .observables import EULER_CHARACTERISTIC, ObservableRow, comparison_bound, max_rho, willmore

    defect = geom.jacobian - 1.0
    ratio = geom.sigma_ratio
    return ObservableRow(
        t=t,
        dt=dt,
        area=geom.area,
        min_eta=float(np.min(geom.eta)),
        max_eta=float(np.max(geom.eta)),
        eta_bound=comparison_bound(t, eta0, 1),
        sup_H2=float(np.max(geom.h_norm2)),
        int_H2=geom.integrate(geom.h_norm2),
        sup_A2=float(np.max(geom.a_norm2)),
        int_A2=geom.integrate(geom.a_norm2),
        lag_defect_sup=float(np.max(np.abs(defect))),
        lag_defect_l2=math.sqrt(geom.integrate(defect * defect)),
        max_rho=max_rho(profile),
        willmore=willmore(geom, EULER_CHARACTERISTIC["sphere"]),
        sigma_ratio_max=float(np.nanmax(ratio)) if np.any(np.isfinite(ratio)) else 0.0,
        twist_residual_sup=float(np.max(geom.twist_residual)),
    )


def _write_checkpoint(directory: Path, profile: TwistProfile, t: float, step: int) -> Path:
    from .grid import write_sidecar

    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"checkpoint_{step:08d}.txt"
    write_profile(path, profile)
    write_sidecar(path.with_suffix(".meta"), t, step)
    return path


def run_sphere(config, initial, *, checkpoint_dir=None, snapshot_every: int = 0, on_snapshot=None, eta0=None):
    """Forward-Euler flow of a twist profile by the projected mean curvature.

    ``initial`` is a :class:`TwistProfile` (start at t = 0) or a resumed
    ``FlowState`` whose ``map`` is a profile. ``config.n`` is the number of
    colatitude nodes. The comparison bound uses the curvature constant 1.
    Scheduling follows the absolute step index, as in the torus loop.
    """
    from .flow import FlowResult, FlowState

    if isinstance(initial, FlowState):
        state = FlowState(initial.t, initial.map.copy(), initial.dt, initial.step_index, [])
    else:
        state = FlowState(0.0, initial.copy(), 0.0, 0, [])
    prof: TwistProfile = state.map
    if prof.m != config.n:
        raise ConfigError(f"profile has m={prof.m} but config n={config.n}")
    if config.order != 2:
        raise ConfigError("sphere flow supports derivative order 2 only")
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    snapshots: list = []
    extras: list[dict] = []

    def keep():
        if snapshots and snapshots[-1][1] == state.step_index:
            return
        snapshots.append((state.t, state.step_index, state.map.copy()))
        if on_snapshot is not None:
            on_snapshot(state)

    try:
        geom = sphere_geometry(prof)
    except (DegenerateGraphError, NumericError) as exc:
        return FlowResult(state, state.history, "degenerate", str(exc))
    if eta0 is None:
        eta0 = float(np.min(geom.eta))

    def observe(geom):
        row = _sphere_row(state.map, geom, state.t, state.dt, eta0)
        state.history.append(row)
        extras.append({"t": state.t, "h_drift": profile_drift(state.map)})
        return row

    row = observe(geom)
    keep()
    last_observed = state.step_index
    stop2 = config.stop_h_sup**2
    dth = prof.dtheta
    theta = prof.theta
    pole_weight = 1.0 + 1.5 * dth * np.abs(np.cos(theta) / np.sin(theta))
    reason, message = "", ""
    while True:
        if row.sup_H2 < stop2:
            reason = "stop_h_sup"
            break
        if state.t >= config.t_end:
            reason = "t_end"
            break
        if row.sup_A2 * dth * dth > config.blowup_threshold:
            reason = "blowup"
            message = f"max|A|^2 h^2 = {row.sup_A2 * dth * dth:.3e}: curvature no longer resolved"
            break
        if state.step_index >= config.max_steps:
            reason = "max_steps"
            break
        # run compiled steps up to the next observation, checkpoint, snapshot or guard
        block = config.observe_every - state.step_index % config.observe_every
        block = min(block, config.max_steps - state.step_index)
        for every in (config.checkpoint_every if ckpt is not None else 0, snapshot_every):
            if every:
                block = min(block, every - state.step_index % every)
        h = state.map.h.copy()
        t_new, dt, done, finite = _advance(theta, h, dth, config.cfl, pole_weight, block, state.t, config.t_end)
        if not finite:
            reason, message = "numeric", "non-finite twist velocity"
            break
        if done == 0:
            continue
        state.map = TwistProfile(prof.m, h)
        state.t, state.dt = t_new, dt
        state.step_index += done
        if ckpt is not None and config.checkpoint_every and state.step_index % config.checkpoint_every == 0:
            _write_checkpoint(ckpt, state.map, state.t, state.step_index)
        if snapshot_every and state.step_index % snapshot_every == 0:
            keep()
        if state.step_index % config.observe_every == 0 or state.t >= config.t_end:
            try:
                row = observe(sphere_geometry(state.map))
            except (DegenerateGraphError, NumericError) as exc:
                reason, message = "degenerate", str(exc)
                break
            last_observed = state.step_index
    if last_observed != state.step_index and reason != "numeric":
        try:
            observe(sphere_geometry(state.map))
        except (DegenerateGraphError, NumericError) as exc:
            reason, message = "degenerate", str(exc)
    keep()
    return FlowResult(state, state.history, reason, message, snapshots, extras)
