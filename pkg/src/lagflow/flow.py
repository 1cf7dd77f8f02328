"""Explicit time integration of graphical mean curvature flow on the torus.

The graph ``(x, f(x))`` is evolved in the non-parametric gauge

    d/dt f^a = g^{ij} d_i d_j f^a,

which differs from dF/dt = H by a tangential reparametrization only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from .errors import ConfigError, DegenerateGraphError, NumericError
from .grid import MapGrid, d1, write_map, write_sidecar
from .observables import ObservableRow, torus_row
from .torus import compute_geometry

log = logging.getLogger(__name__)

PROJECTION_MODES = ("off", "gradient")


@dataclass
class FlowConfig:
    t_end: float = 1.0
    cfl: float = 0.2
    observe_every: int = 10
    stop_h_sup: float = 0.0
    n: int = 64
    order: int = 2
    projection_mode: str = "off"
    projection_iterations: int = 1
    checkpoint_every: int = 0
    max_steps: int = 10_000_000
    # abort once max|A|^2 h^2 exceeds this: curvature no longer resolved
    blowup_threshold: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.cfl <= 0.5):
            raise ConfigError(f"cfl must lie in (0, 0.5], got {self.cfl}")
        if not (self.t_end >= 0.0 and math.isfinite(self.t_end)):
            raise ConfigError(f"t_end must be a finite non-negative number, got {self.t_end}")
        if self.stop_h_sup < 0.0:
            raise ConfigError("stop_h_sup must be >= 0")
        if self.observe_every < 1:
            raise ConfigError("observe_every must be >= 1")
        if self.order not in (2, 4):
            raise ConfigError(f"order must be 2 or 4, got {self.order}")
        if self.projection_mode not in PROJECTION_MODES:
            raise ConfigError(f"projection_mode must be one of {PROJECTION_MODES}")
        if self.projection_iterations < 0 or self.checkpoint_every < 0 or self.max_steps < 0:
            raise ConfigError("iteration counts must be non-negative")
        if int(self.n) < 8:
            raise ConfigError(f"resolution must be >= 8, got {self.n}")

    @classmethod
    def from_dict(cls, data: dict) -> "FlowConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown flow keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class FlowState:
    t: float
    map: MapGrid
    dt: float = 0.0
    step_index: int = 0
    history: list[ObservableRow] = field(default_factory=list)


@dataclass
class FlowResult:
    state: FlowState
    history: list[ObservableRow]
    reason: str
    message: str = ""
    snapshots: list[tuple[float, int, object]] = field(default_factory=list)
    extras: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.reason in ("t_end", "stop_h_sup", "max_steps")


def velocity(grid: MapGrid, order: int = 2):
    """Per-node velocity (u_t, v_t), the largest eigenvalue of g^{-1} and min Jacobian."""
    n = grid.n
    P = np.empty((n + 2 * _kernels.PAD, n + 2 * _kernels.PAD))
    Q = np.empty_like(P)
    _kernels.wrap_pad(grid.u, P)
    _kernels.wrap_pad(grid.v, Q)
    ru = np.empty((n, n))
    rv = np.empty((n, n))
    lam_all = np.empty((n, n))
    jac_all = np.empty((n, n))
    _kernels.torus_rhs(P, Q, grid.linear, grid.h, order, ru, rv, lam_all, jac_all)
    lam = float(np.max(lam_all))
    jac = float(np.min(jac_all))
    if not (math.isfinite(lam) and math.isfinite(jac) and np.all(np.isfinite(ru)) and np.all(np.isfinite(rv))):
        raise NumericError("non-finite velocity")
    return ru, rv, lam, jac


def _dt_from_lambda(cfl: float, h: float, lam: float) -> float:
    return cfl * h * h / (2.0 * lam)


def cfl_dt(state: FlowState, cfl: float = 0.2, order: int = 2) -> float:
    """cfl * h^2 / (2 * max_nodes lambda_max(g^{-1}))."""
    _, _, lam, _ = velocity(state.map, order)
    return _dt_from_lambda(cfl, state.map.h, lam)


def step(state: FlowState, dt: float, order: int = 2) -> FlowState:
    """One forward-Euler step; returns a new state (the input is not modified)."""
    ru, rv, _, jac = velocity(state.map, order)
    if jac <= 0.0:
        raise DegenerateGraphError(f"Jacobian {jac:.3e} <= 0 before step {state.step_index}")
    g = state.map
    new = MapGrid(g.n, g.u + dt * ru, g.v + dt * rv, g.linear.copy())
    return FlowState(state.t + dt, new, dt, state.step_index + 1, state.history)


def _defect_energy(grid: MapGrid, order: int):
    h = grid.h
    L = grid.linear
    fx = L[0, 0] + d1(grid.u, 0, h, order)
    fy = L[0, 1] + d1(grid.u, 1, h, order)
    gx = L[1, 0] + d1(grid.v, 0, h, order)
    gy = L[1, 1] + d1(grid.v, 1, h, order)
    r = fx * gy - fy * gx - 1.0
    return float(np.sum(r * r)) * h * h, r, (fx, fy, gx, gy)


def project_area_preserving(grid: MapGrid, iterations: int, order: int = 2) -> MapGrid:
    """Gradient descent on int (Jac - 1)^2 dx dy with step h^2/4.

    The gradient is the exact derivative of the discrete energy (centered
    stencils are antisymmetric, D^T = -D). A step that would raise the energy
    is retried with half the step, at most ten times.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    out = grid.copy()
    h = grid.h
    energy, r, (fx, fy, gx, gy) = _defect_energy(out, order)
    for _ in range(iterations):
        if energy == 0.0:
            break
        grad_u = 2.0 * (-d1(r * gy, 0, h, order) + d1(r * gx, 1, h, order))
        grad_v = 2.0 * (-d1(r * fx, 1, h, order) + d1(r * fy, 0, h, order))
        tau = h * h / 4.0
        for _halving in range(11):
            trial = MapGrid(out.n, out.u - tau * grad_u, out.v - tau * grad_v, out.linear)
            e_new, r_new, der_new = _defect_energy(trial, order)
            if e_new <= energy:
                break
            tau *= 0.5
        else:
            raise NumericError("area-preserving projection failed to decrease the defect")
        out, energy, r, (fx, fy, gx, gy) = trial, e_new, r_new, der_new
    return out


def _write_checkpoint(directory: Path, state: FlowState) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"checkpoint_{state.step_index:08d}.txt"
    write_map(path, state.map)
    write_sidecar(path.with_suffix(".meta"), state.t, state.step_index)
    return path


def run(
    config: FlowConfig,
    initial: MapGrid | FlowState,
    *,
    checkpoint_dir: str | Path | None = None,
    snapshot_every: int = 0,
    on_snapshot: Callable[[FlowState], None] | None = None,
    eta0: float | None = None,
) -> FlowResult:
    """Integrate the flow until ``t_end``, ``stop_h_sup``, the step guard or a failure.

    ``initial`` may be a map (start at t = 0) or a resumed :class:`FlowState`.
    Snapshots (every ``snapshot_every`` steps, and the first and last state)
    are kept in the result and passed to ``on_snapshot``.

    Observations, checkpoints and the step guard follow the absolute step
    index, so a resumed run records the same rows as an uninterrupted one
    when it is given the original ``eta0`` (initial min eta for the bound).
    """
    if isinstance(initial, FlowState):
        state = FlowState(initial.t, initial.map.copy(), initial.dt, initial.step_index, [])
    else:
        state = FlowState(0.0, initial.copy(), 0.0, 0, [])
    if state.map.n != config.n:
        raise ConfigError(f"map resolution {state.map.n} does not match config n={config.n}")
    order = config.order
    h = state.map.h
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    snapshots: list[tuple[float, int, object]] = []

    def keep(st: FlowState) -> None:
        if snapshots and snapshots[-1][1] == st.step_index:
            return
        snapshots.append((st.t, st.step_index, st.map.copy()))
        if on_snapshot is not None:
            on_snapshot(st)

    try:
        geom0 = compute_geometry(state.map, order)
    except (DegenerateGraphError, NumericError) as exc:
        return FlowResult(state, state.history, "degenerate", str(exc))
    if eta0 is None:
        eta0 = float(np.min(geom0.eta))
    if not eta0 > 0.0:
        return FlowResult(state, state.history, "degenerate", f"initial min eta {eta0:.3e} <= 0")

    def observe(geom=None):
        if geom is None:
            geom = compute_geometry(state.map, order)
        row = torus_row(state.map, geom, state.t, state.dt, eta0)
        state.history.append(row)
        return row

    row = observe(geom0)
    last_observed = state.step_index
    keep(state)
    reason, message = "", ""
    stop2 = config.stop_h_sup**2
    while True:
        if row.sup_H2 < stop2:
            reason = "stop_h_sup"
            break
        if state.t >= config.t_end:
            reason = "t_end"
            break
        if row.sup_A2 * h * h > config.blowup_threshold:
            reason = "blowup"
            message = f"max|A|^2 h^2 = {row.sup_A2 * h * h:.3e}: curvature no longer resolved"
            break
        if state.step_index >= config.max_steps:
            reason = "max_steps"
            break
        try:
            ru, rv, lam, jac = velocity(state.map, order)
        except NumericError as exc:
            reason, message = "numeric", str(exc)
            break
        if jac <= 0.0:
            reason = "degenerate"
            message = (
                f"discrete Jacobian {jac:.3e} <= 0 at t={state.t:.6g}: "
                "resolution failure, not a property of the continuum flow"
            )
            break
        dt = _dt_from_lambda(config.cfl, h, lam)
        remaining = config.t_end - state.t
        if dt >= remaining:
            dt, t_new = remaining, config.t_end
        else:
            t_new = state.t + dt
        g = state.map
        new_map = MapGrid(g.n, g.u + dt * ru, g.v + dt * rv, g.linear)
        if config.projection_mode == "gradient" and config.projection_iterations > 0:
            new_map = project_area_preserving(new_map, config.projection_iterations, order)
        state.map, state.t, state.dt = new_map, t_new, dt
        state.step_index += 1
        if ckpt is not None and config.checkpoint_every and state.step_index % config.checkpoint_every == 0:
            _write_checkpoint(ckpt, state)
        if snapshot_every and state.step_index % snapshot_every == 0:
            keep(state)
        if state.step_index % config.observe_every == 0 or state.t >= config.t_end:
            try:
                row = observe()
            except (DegenerateGraphError, NumericError) as exc:
                reason, message = "degenerate", str(exc)
                break
            last_observed = state.step_index

    if last_observed != state.step_index and reason not in ("numeric",):
        try:
            observe()
        except (DegenerateGraphError, NumericError) as exc:
            reason, message = "degenerate", str(exc)
    keep(state)
    log.info("flow stopped at t=%.6g after %d steps: %s", state.t, state.step_index, reason)
    return FlowResult(state, state.history, reason, message, snapshots)
