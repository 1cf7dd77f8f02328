"""Acceptance criteria 1-10.

Every criterion is a function returning ``(passed, detail)``. Under pytest
each one is a test that also records a summary line (printed at the end of
the session); run this file directly to print only the summary lines.

The long runs go through the command-line interface and are cached per
process, so the criteria that share a run do not repeat it.
"""

from __future__ import annotations

import functools
import json
import math
import sys
import tempfile
import time
import warnings
from pathlib import Path

import mpmath
import numpy as np
import pytest

from lagflow import (
    FlowConfig,
    GeneratorSpec,
    MapGrid,
    TwistProfile,
    b_identities,
    compute_geometry,
    gaussian_density,
    generate,
    read_csv,
    read_map,
    run_sphere,
    step,
)
from lagflow.cli import main as cli_main
from lagflow.flow import FlowState
from lagflow.observables import surface_points
from lagflow.torus import geometry_from_jet

try:
    from conftest import ACCEPTANCE_RESULTS
except ImportError:  # run as a script from another directory
    ACCEPTANCE_RESULTS = {}

WORKDIR = Path(tempfile.mkdtemp(prefix="lagflow-acceptance-"))

SHEAR_A = 0.2
T_END_TORUS = 5.0
STOP_H = 1e-4
TWIST_A = 0.3
SPHERE_M = 256
T_END_SPHERE = 6.0


def observe_every(n: int) -> int:
    # roughly the same flow-time spacing of rows at every resolution
    return 10 * (n // 64) ** 2


def torus_config(kind: str, n: int, emit: bool = False, **gen) -> dict:
    generator = {"kind": kind, "a": SHEAR_A, "k": 1, **gen}
    return {
        "geometry": "torus",
        "generator": generator,
        "flow": {"n": n, "t_end": T_END_TORUS, "stop_h_sup": STOP_H, "observe_every": observe_every(n)},
        "emit_snapshots": emit,
        "snapshot_stride": 50,
    }


def sphere_config(m: int = SPHERE_M) -> dict:
    return {
        "geometry": "sphere",
        "generator": {"kind": "sphere_twist", "a": TWIST_A},
        "flow": {"n": m, "t_end": T_END_SPHERE, "observe_every": 2000},
    }


def cli_run(name: str, config: dict) -> Path:
    out = WORKDIR / name
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(config, indent=2))
    code = cli_main(["run", "--config", str(cfg_path), "--out", str(out)])
    if code != 0:
        raise RuntimeError(f"run {name} exited with {code}: {(out / 'termination.txt').read_text()}")
    return out


@functools.lru_cache(maxsize=None)
def shear_run(n: int) -> Path:
    return cli_run(f"shear_{n}", torus_config("shear", n, emit=(n == 64)))


@functools.lru_cache(maxsize=None)
def double_shear_run(n: int) -> Path:
    return cli_run(f"double_shear_{n}", torus_config("double_shear", n, b=0.15))


@functools.lru_cache(maxsize=None)
def sphere_run() -> Path:
    return cli_run("sphere", sphere_config())


def termination(out: Path) -> dict[str, str]:
    return dict(line.split(" ", 1) for line in (out / "termination.txt").read_text().splitlines())


def column(rows, name: str) -> np.ndarray:
    return np.array([getattr(r, name) for r in rows])


# --- criteria -------------------------------------------------------------


def _brute_force_identity(B: np.ndarray) -> tuple[float, float, float, float]:
    """Both sides of the identity by explicit index sums, independent of the library."""
    b2 = 0.0
    for k in range(2):
        for i in range(2):
            for j in range(2):
                b2 += B[k, i, j] ** 2
    s2 = 0.0
    for k in range(2):
        s = 0.0
        for i in range(2):
            s += B[k, i, i]
        s2 += s * s
    h3 = [[-B[0, i, j] for j in range(2)] for i in range(2)]
    h4 = [[-B[1, i, j] for j in range(2)] for i in range(2)]
    rhs = 0.0
    for k in range(2):
        rhs += (h3[0][k] - h4[1][k]) ** 2 + (h3[1][k] + h4[0][k]) ** 2
    return b2, s2, 2.0 * b2 - s2, rhs


def _symmetric_tensor(b111, b112, b122, b222) -> np.ndarray:
    B = np.empty((2, 2, 2))
    for k in range(2):
        for i in range(2):
            for j in range(2):
                ones = (k == 1) + (i == 1) + (j == 1)
                B[k, i, j] = (b111, b112, b122, b222)[ones]
    return B


def criterion_1():
    start = time.perf_counter()
    rng = np.random.default_rng(20240601)
    worst_gap = 0.0
    worst_ratio = 0.0
    for _ in range(1000):
        B = _symmetric_tensor(*rng.normal(size=4))
        res = b_identities(B)
        b2, s2, lhs, rhs = _brute_force_identity(B)
        scale = max(1.0, b2)
        worst_gap = max(worst_gap, abs(float(res.lhs) - rhs) / scale, abs(lhs - rhs) / scale)
        worst_ratio = max(worst_ratio, float(res.ratio))
    eq_ratios = []
    for b111, b222 in ((1.0, 0.0), (0.0, 1.0), (0.7, -1.3), (2.0, 0.5)):
        B = _symmetric_tensor(b111, b222 / 3.0, b111 / 3.0, b222)
        eq_ratios.append(float(b_identities(B).ratio))
    eq_gap = max(abs(r - 4.0 / 3.0) for r in eq_ratios)
    elapsed = time.perf_counter() - start
    ok = worst_gap <= 1e-12 and worst_ratio <= 4.0 / 3.0 + 1e-12 and eq_gap <= 1e-12 and elapsed < 1.0
    return ok, (
        f"identity gap {worst_gap:.2e} (<=1e-12), max ratio {worst_ratio:.15f} (<=4/3), "
        f"equality family gap {eq_gap:.1e}, {elapsed:.2f} s (<1 s)"
    )


def criterion_2():
    start = time.perf_counter()
    drifts = {}
    n = 32
    torus_maps = {
        "identity": MapGrid.identity(n),
        "affine_sl2z": generate(GeneratorSpec("affine", matrix=((2.0, 1.0), (1.0, 1.0)), shift=(0.1, 0.3)), n),
        "affine_diag": generate(GeneratorSpec("affine", matrix=((2.0, 0.0), (0.0, 0.5))), n),
    }
    for name, grid in torus_maps.items():
        state = FlowState(0.0, grid)
        dt = 0.2 * grid.h**2
        worst = 0.0
        for _ in range(1000):
            new = step(state, dt)
            worst = max(worst, float(np.max(np.abs(new.map.u - state.map.u))), float(np.max(np.abs(new.map.v - state.map.v))))
            state = new
        drifts[name] = worst
    prof = TwistProfile(64, np.full(64, 0.7))
    cfg = FlowConfig(n=64, t_end=1e9, observe_every=1000, max_steps=1000)
    res = run_sphere(cfg, prof, snapshot_every=1)
    hs = [snap[2].h for snap in res.snapshots]
    worst = max(float(np.max(np.abs(b - a))) for a, b in zip(hs, hs[1:]))
    assert res.state.step_index == 1000 and len(hs) == 1001
    drifts["sphere_const_0.7"] = worst
    elapsed = time.perf_counter() - start
    ok = max(drifts.values()) <= 1e-12 and elapsed < 10.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in drifts.items())
    return ok, f"max per-step drift: {detail} (<=1e-12); {elapsed:.1f} s (<10 s)"


def criterion_3():
    parts = []
    ok = True
    for n in (64, 128):
        rows = read_csv(shear_run(n) / "timeseries.csv")
        eta = column(rows, "min_eta")
        worst = float(np.max(eta[:-1] - eta[1:]))
        ok &= worst <= 1e-8 and eta[-1] > eta[0]
        parts.append(f"n={n}: max decrease {worst:.1e}, min_eta {eta[0]:.6f} -> {eta[-1]:.6f}")
    return ok, "; ".join(parts) + " (tol 1e-8)"


def _bound_mp(t: float, eta0: float) -> float:
    mpmath.mp.dps = 50
    alpha = mpmath.mpf(eta0) / mpmath.sqrt(1 - mpmath.mpf(eta0) ** 2)
    e = mpmath.exp(mpmath.mpf(t))
    return float(alpha * e / mpmath.sqrt(1 + alpha**2 * e**2))


def criterion_4():
    out = sphere_run()
    rows = read_csv(out / "timeseries.csv")
    t = column(rows, "t")
    eta = column(rows, "min_eta")
    eta0 = eta[0]
    bound = np.array([_bound_mp(ti, eta0) for ti in t])
    slack = float(np.min(eta - (bound - 1e-3)))
    column_gap = float(np.max(np.abs(column(rows, "eta_bound") - bound)))
    sel = (t >= 2.0) & (t <= 5.0)
    rate = -float(np.polyfit(t[sel], np.log(1.0 - eta[sel]), 1)[0])
    drift = float(termination(out)["h_drift"])
    ok = slack >= 0.0 and rate >= 1.9 and column_gap <= 1e-12 and drift < 1e-3
    return ok, (
        f"min(eta - bound + 1e-3) = {slack:.3e} (>=0), bound column vs mpmath {column_gap:.1e}, "
        f"decay exponent {rate:.3f} (>=1.9), final drift {drift:.2e} (<1e-3)"
    )


def _dissipation_ratio(rows) -> float:
    t = column(rows, "t")
    area = column(rows, "area")
    ih2 = column(rows, "int_H2")
    err = np.sum(np.abs(np.diff(area) + 0.5 * (ih2[1:] + ih2[:-1]) * np.diff(t)))
    return float(err / (area[0] - area[-1]))


def criterion_5():
    r128 = _dissipation_ratio(read_csv(shear_run(128) / "timeseries.csv"))
    r256 = _dissipation_ratio(read_csv(shear_run(256) / "timeseries.csv"))
    ok = r128 <= 0.05 and r256 <= 0.015
    return ok, f"accumulated dissipation error / area loss: n=128 {r128:.3%} (<=5%), n=256 {r256:.3%} (<=1.5%)"


def criterion_6():
    parts = []
    ok = True
    for n in (64, 128):
        out = shear_run(n)
        rows = read_csv(out / "timeseries.csv")
        term = termination(out)
        rho = column(rows, "max_rho")
        rho_inc = float(np.max(rho[1:] - rho[:-1]))
        final = rows[-1]
        sup_h = math.sqrt(final.sup_H2)
        good = term["reason"] == "stop_h_sup" and final.t < T_END_TORUS and sup_h < STOP_H
        good &= final.int_A2 < 1e-3 and rho_inc <= 1e-8
        ok &= good
        parts.append(
            f"n={n}: {term['reason']} at t={final.t:.4f}, sup|H| {sup_h:.1e}, int|A|^2 {final.int_A2:.1e}, "
            f"max rho increase {rho_inc:.1e}"
        )
    return ok, "; ".join(parts)


def _defect_constant(out: Path, n: int) -> float:
    return float(np.max(column(read_csv(out / "timeseries.csv"), "lag_defect_sup"))) * n * n


def criterion_7():
    shear = {n: _defect_constant(shear_run(n), n) for n in (64, 128)}
    double = {n: _defect_constant(double_shear_run(n), n) for n in (64, 128)}
    ratio = double[128] / double[64]
    ok = max(shear.values()) <= 1e-9 and 0.5 <= ratio <= 2.0
    return ok, (
        f"C = max defect / h^2: shear {shear[64]:.1e} / {shear[128]:.1e} (exact discrete Jacobian), "
        f"double shear {double[64]:.3f} / {double[128]:.3f}, ratio {ratio:.3f} (within [0.5, 2])"
    )


def criterion_8():
    out = shear_run(64)
    final = read_map(out / "final_map.txt")
    pts = surface_points(final)
    flat = []
    for node in ((0, 0), (17, 40), (32, 8)):
        y0 = pts[:, node[0], node[1]]
        for s in (0.1, 0.05, 0.01):
            flat.append(gaussian_density(final, y0, 1.0 + s, 1.0))
    flat_gap = float(np.max(np.abs(np.array(flat) - 1.0)))

    code = cli_main(["diagnose", "density", "--out", str(out), "--t0", "0.15", "--node", "0", "8"])
    lines = (out / "density.csv").read_text().splitlines()[1:]
    trace = np.array([[float(v) for v in line.split(",")] for line in lines])
    t0 = _snapshot_time_near(out, 0.15)
    picked = []
    for s in (0.1, 0.05, 0.01):
        idx = int(np.argmin(np.abs((t0 - trace[:, 0]) - s)))
        picked.append((t0 - trace[idx, 0], trace[idx, 1]))
    gaps = [abs(d - 1.0) for _, d in picked]
    monotone = all(a >= b for a, b in zip(gaps, gaps[1:]))
    ok = code == 0 and flat_gap <= 1e-4 and monotone and gaps[-1] <= 1e-2
    trace_txt = ", ".join(f"s={s:.4f}: {d:.6f}" for s, d in picked)
    return ok, f"flat state |density - 1| <= {flat_gap:.1e} (<=1e-4); shear trace {trace_txt} (monotone, finest within 1e-2)"


def _snapshot_time_near(out: Path, t: float) -> float:
    times = []
    for meta in (out / "snapshots").glob("*.meta"):
        head = meta.read_text().split()
        times.append(float(head[1].split("=")[1]))
    return min(times, key=lambda s: abs(s - t))


_D1 = {2: np.array([0.0, -0.5, 0.0, 0.5, 0.0]), 4: np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0}
_D2 = {2: np.array([0.0, 1.0, -2.0, 1.0, 0.0]), 4: np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0}


def _shear_values(geom, index=None) -> np.ndarray:
    sel = (0, index) if index is not None else (0,)
    return np.array([math.sqrt(geom.h_norm2[sel]), geom.a_norm2[sel], geom.eta[sel]])


def shear_oracle(n: int, order: int, a: float, y: float) -> np.ndarray:
    """What an n x n grid computes at a node on the line y, from the stencils alone.

    The shear depends on y only, so the node's 5-point stencil of the closed
    form is all a fine grid would use; this avoids allocating n^2 nodes.
    """
    h = 1.0 / n
    samples = a * np.sin(2.0 * math.pi * (y + h * np.arange(-2, 3)))
    uy = float(_D1[order] @ samples) / h
    uyy = float(_D2[order] @ samples) / h**2
    second = np.zeros((2, 2, 2, 1))
    second[0, 1, 1] = uyy
    geom = geometry_from_jet(np.ones(1), np.full(1, uy), np.zeros(1), np.ones(1), second, n=n, order=order)
    return _shear_values(geom)


def criterion_9():
    a, y = 0.1, 0.125
    parts = []
    ok = True
    for order, sizes in ((2, (32, 64, 128, 256)), (4, (16, 32, 64, 128))):
        ref = shear_oracle(2048, order, a, y)
        errs = []
        for n in sizes:
            geom = compute_geometry(generate(GeneratorSpec("shear", a=a), n), order)
            errs.append(np.abs(_shear_values(geom, n // 8) - ref))
        errs = np.array(errs)
        slopes = [-float(np.polyfit(np.log(sizes), np.log(errs[:, q]), 1)[0]) for q in range(3)]
        ok &= all(abs(s - order) <= 0.2 for s in slopes)
        parts.append(f"order {order}: slopes |H| {slopes[0]:.3f}, |A|^2 {slopes[1]:.3f}, eta {slopes[2]:.3f}")
    return ok, "; ".join(parts) + " (within 0.2 of nominal)"


def criterion_10():
    pairs = []
    ok = True
    for name, first, config in (
        ("shear n=64", shear_run(64), torus_config("shear", 64)),
        ("sphere m=256", sphere_run(), sphere_config()),
    ):
        again = cli_run(f"repeat_{name.replace(' ', '_').replace('=', '')}", config)
        same = (first / "timeseries.csv").read_bytes() == (again / "timeseries.csv").read_bytes()
        ok &= same
        pairs.append(f"{name} {'identical' if same else 'DIFFERENT'}")
    return ok, "re-run CSV bytes: " + ", ".join(pairs)


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 11)}

TITLES = {
    1: "algebraic identity and 4/3 bound",
    2: "stationarity of isometry graphs",
    3: "torus min eta monotone",
    4: "sphere comparison bound and decay",
    5: "area dissipation",
    6: "convergence to totally geodesic",
    7: "Lagrangian defect C h^2",
    8: "Gaussian density",
    9: "oracle refinement rates",
    10: "determinism",
}


def evaluate(number: int) -> tuple[bool, str]:
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        passed, detail = CRITERIA[number]()
    ACCEPTANCE_RESULTS[number] = (bool(passed), f"[{TITLES[number]}] {detail}")
    return bool(passed), detail


class TestAcceptance:
    @pytest.mark.parametrize("number", sorted(CRITERIA), ids=[f"criterion_{i}" for i in sorted(CRITERIA)])
    def test_criterion(self, number):
        passed, detail = evaluate(number)
        assert passed, detail


if __name__ == "__main__":
    failures = 0
    for number in sorted(CRITERIA):
        try:
            passed, detail = evaluate(number)
        except Exception as exc:  # report and continue with the other criteria
            passed, detail = False, f"error: {exc!r}"
        failures += not passed
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  [{TITLES[number]}] {detail}", flush=True)
    sys.exit(1 if failures else 0)
