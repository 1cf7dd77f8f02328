"""Command-line entry point.

Exit codes: 0 success, 1 geometric or numerical failure at run time,
2 configuration error (bad JSON, unknown keys, invalid values, unreadable files).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ConfigError, DegenerateGraphError, GeneratorError, LagflowError, NumericError
from .flow import FlowConfig, FlowResult, FlowState
from .flow import run as run_torus
from .generators import GeneratorSpec, generate_with_report, validate
from .grid import MAP_HEADER, MapGrid, read_map, read_sidecar, write_map, write_sidecar
from .observables import ObservableRow, gaussian_density, parabolic_rescale, read_csv, surface_points, write_csv
from .sphere import TWIST_HEADER, TwistProfile, read_profile, run_sphere, write_profile

log = logging.getLogger("lagflow")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

GEOMETRIES = ("torus", "sphere")
SNAPSHOT_DIR = "snapshots"
CHECKPOINT_DIR = "checkpoints"
TIMESERIES = "timeseries.csv"
TERMINATION = "termination.txt"
DENSITY = "density.csv"
RESCALED = "rescaled_points.txt"


@dataclass
class RunConfig:
    geometry: str = "torus"
    generator: GeneratorSpec | None = None
    input: str | None = None
    flow: FlowConfig = field(default_factory=FlowConfig)
    output_dir: str = "lagflow-out"
    emit_snapshots: bool = False
    snapshot_stride: int = 100

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {"geometry", "generator", "input", "flow", "output_dir", "emit_snapshots", "snapshot_stride"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        geometry = data.get("geometry", "torus")
        if geometry not in GEOMETRIES:
            raise ConfigError(f"geometry must be one of {GEOMETRIES}, got {geometry!r}")
        generator = GeneratorSpec.from_dict(data["generator"]) if "generator" in data else None
        if generator is not None and generator.geometry != geometry:
            raise ConfigError(f"generator kind {generator.kind!r} does not match geometry {geometry!r}")
        inp = data.get("input")
        if inp is not None and base is not None:
            inp = str((base / inp) if not Path(inp).is_absolute() else Path(inp))
        flow = FlowConfig.from_dict(data.get("flow", {}))
        stride = data.get("snapshot_stride", 100)
        if isinstance(stride, bool) or not isinstance(stride, int) or stride < 1:
            raise ConfigError(f"snapshot_stride must be a positive integer, got {stride!r}")
        emit = data.get("emit_snapshots", False)
        if not isinstance(emit, bool):
            raise ConfigError("emit_snapshots must be true or false")
        return cls(geometry, generator, inp, flow, str(data.get("output_dir", "lagflow-out")), emit, stride)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return RunConfig.from_dict(data, base=path.parent)


def _output_dir(cfg: RunConfig, override: str | None) -> Path:
    out = Path(override if override is not None else cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
    return out


def read_snapshot(path: str | Path) -> MapGrid | TwistProfile:
    """Read a torus map or twist profile, dispatching on the header line."""
    path = Path(path)
    try:
        with open(path) as fh:
            head = fh.readline()
    except OSError as exc:
        raise ConfigError(f"cannot read snapshot {path}: {exc}") from exc
    if head.startswith(MAP_HEADER):
        return read_map(path)
    if head.startswith(TWIST_HEADER):
        return read_profile(path)
    raise ConfigError(f"{path}: unknown snapshot format")


def write_snapshot(path: Path, target: MapGrid | TwistProfile) -> None:
    if isinstance(target, MapGrid):
        write_map(path, target)
    else:
        write_profile(path, target)


def _initial_map(cfg: RunConfig) -> MapGrid | TwistProfile:
    if cfg.input is not None:
        target = read_snapshot(cfg.input)
    elif cfg.generator is not None:
        target, _ = generate_with_report(cfg.generator, cfg.flow.n)
    else:
        raise ConfigError("config needs either 'generator' or 'input'")
    _check_geometry(cfg, target)
    return target


def _check_geometry(cfg: RunConfig, target) -> None:
    expected = MapGrid if cfg.geometry == "torus" else TwistProfile
    if not isinstance(target, expected):
        raise ConfigError(f"input map does not match geometry {cfg.geometry!r}")
    size = target.n if isinstance(target, MapGrid) else target.m
    if size != cfg.flow.n:
        raise ConfigError(f"input resolution {size} does not match flow.n = {cfg.flow.n}")


def _map_name(cfg: RunConfig, stem: str) -> str:
    return f"{stem}_map.txt" if cfg.geometry == "torus" else f"{stem}_profile.txt"


# --- generate -------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    if cfg.generator is None:
        raise ConfigError("generate needs a 'generator' section")
    out = _output_dir(cfg, args.out)
    target, report = generate_with_report(cfg.generator, cfg.flow.n)
    check = validate(target, cfg.flow.order if cfg.geometry == "torus" else 2)
    write_snapshot(out / _map_name(cfg, "initial"), target)
    lines = [f"kind {cfg.generator.kind}", f"n {cfg.flow.n}"] + check.lines()
    lines.append(f"generator_defect_bound {report.defect_bound:.17g}")
    text = "\n".join(lines) + "\n"
    (out / "generate_report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if check.is_diffeo else EXIT_FAILURE


# --- run / resume ---------------------------------------------------------


def _snapshot_writer(cfg: RunConfig, out: Path):
    if not cfg.emit_snapshots:
        return None
    snap_dir = out / SNAPSHOT_DIR
    snap_dir.mkdir(parents=True, exist_ok=True)

    def write(state: FlowState) -> None:
        path = snap_dir / f"snapshot_{state.step_index:08d}.txt"
        write_snapshot(path, state.map)
        write_sidecar(path.with_suffix(".meta"), state.t, state.step_index)

    return write


def _execute(cfg: RunConfig, out: Path, initial, eta0: float | None = None) -> FlowResult:
    runner = run_torus if cfg.geometry == "torus" else run_sphere
    ckpt = out / CHECKPOINT_DIR if cfg.flow.checkpoint_every else None
    return runner(
        cfg.flow,
        initial,
        checkpoint_dir=ckpt,
        snapshot_every=cfg.snapshot_stride if cfg.emit_snapshots else 0,
        on_snapshot=_snapshot_writer(cfg, out),
        eta0=eta0,
    )


def _finish(cfg: RunConfig, out: Path, result: FlowResult, rows: list[ObservableRow]) -> int:
    write_csv(out / TIMESERIES, rows)
    write_snapshot(out / _map_name(cfg, "final"), result.state.map)
    code = EXIT_OK if result.ok else EXIT_FAILURE
    lines = [
        f"reason {result.reason}",
        f"message {result.message or '-'}",
        f"t {result.state.t:.17g}",
        f"step {result.state.step_index}",
        f"rows {len(rows)}",
        f"exit_code {code}",
    ]
    if result.reason == "degenerate":
        lines.append("note discrete degeneracy indicates under-resolution, not a continuum counterexample")
    if result.extras:
        lines.append(f"h_drift {result.extras[-1]['h_drift']:.17g}")
    (out / TERMINATION).write_text("\n".join(lines) + "\n")
    log.info("run finished: %s at t=%.6g", result.reason, result.state.t)
    return code


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = _output_dir(cfg, args.out)
    initial = _initial_map(cfg)
    write_snapshot(out / _map_name(cfg, "initial"), initial)
    result = _execute(cfg, out, initial)
    return _finish(cfg, out, result, result.history)


def cmd_resume(args) -> int:
    """Continue from a checkpoint pair, appending to an existing time series.

    Rows recorded before the checkpoint are kept, and the initial min eta of
    the original run is reused for the bound, so the merged CSV matches an
    uninterrupted run. Without an existing CSV the checkpoint state defines
    the initial eta.
    """
    cfg = load_config(args.config)
    out = _output_dir(cfg, args.out)
    ckpt = Path(args.resume)
    target = read_snapshot(ckpt)
    _check_geometry(cfg, target)
    meta = ckpt.with_suffix(".meta")
    try:
        t0, step0 = read_sidecar(meta)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint sidecar {meta}: {exc}") from exc
    previous: list[ObservableRow] = []
    eta0 = None
    csv_path = out / TIMESERIES
    if csv_path.exists():
        try:
            old = read_csv(csv_path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read existing time series: {exc}") from exc
        if old:
            eta0 = old[0].min_eta
            previous = [r for r in old if r.t <= t0]
    result = _execute(cfg, out, FlowState(t0, target, 0.0, step0, []), eta0)
    new_rows = list(result.history)
    # The checkpoint state itself is already in the old series when the
    # schedule recorded it (with its true dt, which the sidecar lacks).
    if eta0 is not None and new_rows:
        new_rows = new_rows[1:]
    return _finish(cfg, out, result, previous + new_rows)


# --- diagnose -------------------------------------------------------------


def load_snapshots(run_dir: Path) -> list[tuple[float, int, MapGrid | TwistProfile]]:
    snap_dir = run_dir / SNAPSHOT_DIR
    if not snap_dir.is_dir():
        raise ConfigError(f"{snap_dir} not found: run with emit_snapshots = true first")
    found = []
    for path in sorted(snap_dir.glob("snapshot_*.txt")):
        t, step = read_sidecar(path.with_suffix(".meta"))
        found.append((t, step, read_snapshot(path)))
    if not found:
        raise ConfigError(f"no snapshots in {snap_dir}")
    found.sort(key=lambda rec: rec[1])
    return found


def _center(snaps, t0: float | None, node: tuple[int, int]):
    torus = [s for s in snaps if isinstance(s[2], MapGrid)]
    if len(torus) != len(snaps):
        raise ConfigError("density and rescaling are implemented for torus runs only")
    if t0 is None:
        ref = snaps[-1]
    else:
        ref = min(snaps, key=lambda s: abs(s[0] - t0))
    grid = ref[2]
    i, j = node
    y0 = surface_points(grid)[:, i % grid.n, j % grid.n]
    return ref[0], y0


def cmd_density(args) -> int:
    run_dir = Path(args.out)
    snaps = load_snapshots(run_dir)
    t0, y0 = _center(snaps, args.t0, tuple(args.node))
    lines = ["t,density"]
    for t, _step, grid in snaps:
        if t < t0:
            value = gaussian_density(grid, y0, t0, t, args.order)
            lines.append(f"{format(t, '.17g')},{format(value, '.17g')}")
    (run_dir / DENSITY).write_text("\n".join(lines) + "\n")
    log.info("density trace with %d rows, center time %.6g", len(lines) - 1, t0)
    return EXIT_OK


def cmd_rescale(args) -> int:
    if not args.lam > 0.0:
        raise ConfigError(f"--lambda must be positive, got {args.lam}")
    run_dir = Path(args.out)
    snaps = load_snapshots(run_dir)
    t0, y0 = _center(snaps, args.t0, tuple(args.node))
    center = ",".join(format(float(c), ".17g") for c in y0)
    lines = [f"# lagflow-rescale lambda={format(args.lam, '.17g')} t0={format(t0, '.17g')} center={center}"]
    for t, step, grid in snaps:
        pts = surface_points(grid).reshape(4, -1).T
        scaled, s = parabolic_rescale(pts, np.full(len(pts), t), y0, t0, args.lam)
        n = grid.n
        for idx, row in enumerate(scaled):
            i, j = divmod(idx, n)
            vals = " ".join(format(float(c), ".17g") for c in row)
            lines.append(f"{step} {format(float(s[idx]), '.17g')} {i} {j} {vals}")
    (run_dir / RESCALED).write_text("\n".join(lines) + "\n")
    return EXIT_OK


# --- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lagflow", description="Mean curvature flow of area-preserving map graphs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="build and validate an initial map")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run the flow and write the time series")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("resume", help="continue a run from a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", required=True, help="checkpoint snapshot (its .meta sidecar must sit next to it)")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("diagnose", help="post-process recorded snapshots")
    dsub = p.add_subparsers(dest="diagnostic", required=True)
    for name, func, doc in (
        ("density", cmd_density, "Gaussian density trace (columns t,density)"),
        ("rescale", cmd_rescale, "parabolically rescaled point set"),
    ):
        d = dsub.add_parser(name, help=doc)
        d.add_argument("--out", required=True, help="run directory containing snapshots/")
        d.add_argument("--t0", type=float, help="center time; the nearest snapshot is used (default: last)")
        d.add_argument("--node", type=int, nargs=2, default=(0, 0), metavar=("I", "J"), help="center node")
        if name == "density":
            d.add_argument("--order", type=int, choices=(2, 4), default=2)
        else:
            d.add_argument("--lambda", dest="lam", type=float, default=1.0)
        d.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _kernels.configure_threads()
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"lagflow: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateGraphError, NumericError, GeneratorError) as exc:
        print(f"lagflow: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except LagflowError as exc:
        print(f"lagflow: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
