"""
Command-line front end: simulate | reconstruct | evaluate | sweep | verify.

All randomness flows from the single plan seed through the documented hash
tree (transmit sequence, per-pixel speckle, per-pixel noise, solver batches,
sweep cells), so re-running any pipeline with the same plan and seed yields
byte-identical archives and reports. Wall-clock timings are the one
exception and live in a separate timing.json.

Exit codes: 0 success, 1 config/usage error, 2 I/O or archive error,
3 solver failure. WAVELIDAR_THREADS sets the default worker count.
"""

import argparse
import concurrent.futures
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import fileio, report
from .core import (ROLE_CELL, ROLE_NOISE, ROLE_SPECKLE, ROLE_TX, ConfigError,
                   NoiseModel, ShapeError, SolverError, SystemConfig,
                   WavelidarError, derive_seed)
from .metrics import MetricsReport, evaluate_depth, evaluate_velocity
from .modulation import ModulationScheme, generate_tx, receiver_projection
from .reconstruction import (ExtractionMap, SolverParams, extract,
                             matched_filter_generalized, matched_filter_naive,
                             solve_stage1, solve_stage2, solver_grid)
from .scenes import GroundTruth, SceneSpec, acquire_pixel, realize_scene

METHODS = ("naive_mf", "generalized_mf", "joint")


@dataclasses.dataclass
class ExperimentPlan:
    system: SystemConfig
    scene: SceneSpec
    scheme: ModulationScheme
    solver: SolverParams
    seed: int = 0
    snr_db: float | None = None
    sigma: float | None = None
    methods: tuple = ("joint", "generalized_mf")
    sweep: dict = dataclasses.field(default_factory=dict)
    output_dir: str | None = None

    def noise_dict(self) -> dict:
        return {"snr_db": self.snr_db} if self.sigma is None else {"sigma": self.sigma}


def load_plan(path) -> ExperimentPlan:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ArchiveIOError(f"cannot read plan: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return plan_from_dict(data, path)


def plan_from_dict(data: dict, origin="plan") -> ExperimentPlan:
    try:
        system = fileio.system_from_dict(data.get("system", {}))
        scene = fileio.scene_from_dict(data["scene"])
        scheme = fileio.scheme_from_dict(data.get("scheme", {}))
        solver = fileio.solver_from_dict(data.get("solver", {}))
        noise = data.get("noise", {"snr_db": None})
        sweep = data.get("sweep", {}) or {}
        for axis, values in sweep.items():
            if axis not in ("n_symbols", "scheme", "snr_db"):
                raise ConfigError(f"unknown sweep axis {axis!r}")
            if not values:
                raise ConfigError(f"sweep axis {axis!r} is empty")
        return ExperimentPlan(
            system=system, scene=scene, scheme=scheme, solver=solver,
            seed=int(data.get("seed", 0)),
            snr_db=noise.get("snr_db"), sigma=noise.get("sigma"),
            methods=tuple(data.get("methods", ("joint", "generalized_mf"))),
            sweep=sweep, output_dir=data.get("output_dir"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{origin}: invalid plan: {exc}") from exc


class ArchiveIOError(WavelidarError):
    """Archive is missing, unreadable, or fails verification."""


def plan_snapshot(plan: ExperimentPlan) -> dict:
    return {
        "system": fileio.system_to_dict(plan.system),
        "scene": fileio.scene_to_dict(plan.scene),
        "scheme": dataclasses.asdict(plan.scheme),
        "solver": dataclasses.asdict(plan.solver),
        "noise": plan.noise_dict(),
        "seed": plan.seed,
        "methods": list(plan.methods),
    }


def _frame_sigma(plan: ExperimentPlan, realizations) -> float:
    """Noise sigma for the frame: explicit, or from the toolkit SNR applied
    to the pixel-averaged echo energy."""
    if plan.sigma is not None:
        return float(plan.sigma)
    if plan.snr_db is None:
        return 0.0
    energies = [ch.total_jones_energy for row in realizations for ch in row
                if ch.echoes]
    if not energies:
        raise ConfigError("SNR-specified noise needs at least one echo in the scene")
    mean_energy = float(np.mean(energies))
    if np.isinf(plan.snr_db):
        return 0.0
    signal = mean_energy * plan.scheme.power_per_pol
    return float(np.sqrt(signal / (2.0 * 10.0 ** (plan.snr_db / 10.0))))


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _px_name(i: int, j: int) -> str:
    return f"rx/px_{i:04d}_{j:04d}.bin"


def cmd_simulate(plan: ExperimentPlan, out_dir) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "rx").mkdir(parents=True, exist_ok=True)
    cfg = plan.system
    scheme = dataclasses.replace(plan.scheme, seed=derive_seed(plan.seed, ROLE_TX))
    scene = dataclasses.replace(plan.scene, master_seed=derive_seed(plan.seed, ROLE_SPECKLE))
    tx = generate_tx(scheme, cfg.n_symbols)
    gt, realizations = realize_scene(scene, cfg)
    sigma = _frame_sigma(plan, realizations)
    noise = NoiseModel(sigma=sigma, seed=derive_seed(plan.seed, ROLE_NOISE))
    files = ["tx.bin", "tx.bin.json", "gt.npz", "channels.json"]
    fileio.write_symbols(out_dir / "tx.bin",
                         tx, {"scheme": scheme.kind, "seed": scheme.seed,
                              "power_per_pol": scheme.power_per_pol})
    h, w = scene.height, scene.width
    for i in range(h):
        for j in range(w):
            rx = acquire_pixel(tx, realizations[i][j], cfg, noise, (i, j))
            flat = np.empty((rx.shape[0], 4), dtype="<f4")
            flat[:, 0] = rx[:, 0].real
            flat[:, 1] = rx[:, 0].imag
            flat[:, 2] = rx[:, 1].real
            flat[:, 3] = rx[:, 1].imag
            (out_dir / _px_name(i, j)).write_bytes(flat.tobytes())
            files.append(_px_name(i, j))
    with open(out_dir / "gt.npz", "wb") as fh:
        np.savez(fh, depth=gt.depth_map, velocity=gt.velocity_map,
                 surface_count=gt.surface_count_map)
    fileio._dump_json(out_dir / "channels.json", {
        "pixels": [[fileio.channel_to_dict(realizations[i][j]) for j in range(w)]
                   for i in range(h)],
        "sigma": sigma, "noise_seed": noise.seed})
    fileio.write_manifest(out_dir, {
        "kind": "frame-archive", "plan": plan_snapshot(plan),
        "pixel_grid": [h, w], "n_symbols": cfg.n_symbols,
        "sigma": sigma,
        "rx_format": {"dtype": "float32-le", "layout": "re1,im1,re2,im2",
                      "length": cfg.n_symbols},
    }, files)
    return out_dir


def _load_archive(archive):
    archive = Path(archive)
    if not (archive / "manifest.json").exists():
        raise ArchiveIOError(f"{archive}: not an archive (missing manifest.json)")
    manifest = fileio.read_manifest(archive)
    plan = plan_from_dict(manifest["plan"], str(archive))
    tx, _ = fileio.read_symbols(archive / "tx.bin")
    return archive, manifest, plan, tx


def _load_frames(archive, manifest) -> np.ndarray:
    h, w = manifest["pixel_grid"]
    n = manifest["n_symbols"]
    # complex64 halves memory for long exposures; the solver upcasts per chunk
    out = np.empty((h, w, n, 2), dtype=np.complex64)
    for i in range(h):
        for j in range(w):
            path = Path(archive) / _px_name(i, j)
            raw = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(-1, 4)
            if raw.shape[0] != n:
                raise ArchiveIOError(f"{path}: wrong frame length")
            out[i, j, :, 0] = raw[:, 0] + 1j * raw[:, 1]
            out[i, j, :, 1] = raw[:, 2] + 1j * raw[:, 3]
    return out


def _load_gt(archive) -> GroundTruth:
    with np.load(Path(archive) / "gt.npz") as data:
        return GroundTruth(depth_map=data["depth"], velocity_map=data["velocity"],
                           surface_count_map=data["surface_count"])


# ---------------------------------------------------------------------------
# reconstruct
# ---------------------------------------------------------------------------

def _masked_mf_peak(profile, cfg: SystemConfig) -> int:
    """Matched-filter argmax honoring delta_min and internal-delay masking."""
    masked = profile.copy()
    masked[:cfg.delta_min + 1] = -np.inf
    for d in cfg.internal_reflection_delays:
        if d < len(masked):
            masked[d] = -np.inf
    return int(np.argmax(masked))


def cmd_reconstruct(archive, method: str, out_dir, solver_overrides: dict | None = None,
                    k: int = 1) -> Path:
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    archive, manifest, plan, tx = _load_archive(archive)
    cfg = plan.system
    params = plan.solver
    if solver_overrides:
        params = dataclasses.replace(params, **solver_overrides)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = _load_frames(archive, manifest)
    scheme = dataclasses.replace(plan.scheme, seed=derive_seed(plan.seed, ROLE_TX))
    h, w = frames.shape[:2]
    t0 = time.monotonic()
    iterations = 0
    if method == "joint":
        rx_proj = np.empty_like(frames)
        for i in range(h):
            for j in range(w):
                rx_proj[i, j] = receiver_projection(scheme, frames[i, j].astype(np.complex128))
        field = solve_stage1(tx, rx_proj, cfg, params)
        iterations = params.stage1_iters
        if params.stage2_iters > 0 and params.lambda_tv > 0.0:
            field = solve_stage2(field, tx, rx_proj, cfg, params)
            iterations += params.stage2_iters
        extr = extract(field, cfg, k=k)
    else:
        mf = matched_filter_naive if method == "naive_mf" else matched_filter_generalized
        delta_bins, _ = solver_grid(cfg, params)
        delta_max = int(delta_bins.max())
        shape = (h, w, 1)
        extr = ExtractionMap(delta=np.zeros(shape, dtype=np.int64),
                             nu=np.zeros(shape), depth=np.zeros(shape),
                             velocity=np.zeros(shape), frob=np.zeros(shape),
                             jones=np.zeros(shape + (2, 2), dtype=np.complex128))
        tx_energy = float(np.sum(np.abs(tx) ** 2))
        for i in range(h):
            for j in range(w):
                rx = receiver_projection(scheme, frames[i, j].astype(np.complex128))
                _, profile = mf(tx, rx, delta_max)
                peak = _masked_mf_peak(profile, cfg)
                extr.delta[i, j, 0] = peak
                extr.depth[i, j, 0] = peak * cfg.depth_step
                # correlation magnitude normalized to an amplitude estimate
                extr.frob[i, j, 0] = float(np.sqrt(profile[peak]) / tx_energy * 2.0)
        iterations = 1
    wall = time.monotonic() - t0
    fileio.write_extraction(out_dir, extr, cfg)
    report.save_depth_velocity_figures(out_dir, extr, _load_gt(archive))
    fileio.write_manifest(out_dir, {
        "kind": "extraction", "method": method,
        "archive_manifest_sha256": fileio.sha256_file(archive / "manifest.json"),
        "iterations": iterations, "k": k,
        "solver": dataclasses.asdict(params)},
        ["extraction.csv", "extraction.bin", "extraction.bin.json",
         "depth.png", "velocity.png"])
    fileio._dump_json(out_dir / "timing.json", {"wall_clock_s": wall})
    return out_dir


def _load_extraction(extr_dir) -> ExtractionMap:
    extr_dir = Path(extr_dir)
    meta = fileio._load_json(extr_dir / "extraction.bin.json")
    h, w = meta["pixel_grid"]
    k = meta["k"]
    raw = np.frombuffer((extr_dir / "extraction.bin").read_bytes(),
                        dtype="<f4").reshape(h, w, k, 3).astype(float)
    return ExtractionMap(delta=np.zeros((h, w, k), dtype=np.int64),
                         nu=np.zeros((h, w, k)), depth=raw[..., 0],
                         velocity=raw[..., 1], frob=raw[..., 2],
                         jones=np.zeros((h, w, k, 2, 2), dtype=np.complex128))


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def cmd_evaluate(extr_dir, archive, out_dir, plane_fit: bool = False,
                 want_velocity: str = "auto", label: str | None = None):
    """Returns (MetricsReport, velocity_undefined_but_requested)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    extr = _load_extraction(extr_dir)
    gt = _load_gt(Path(archive))
    if extr.depth.shape[:2] != gt.depth_map.shape:
        raise ConfigError("extraction and archive pixel grids differ")
    rep = evaluate_depth(extr, gt, plane_fit=plane_fit)
    undefined = False
    if want_velocity in ("auto", "yes"):
        vrep = evaluate_velocity(extr, gt)
        if not vrep.velocity_defined and want_velocity == "yes":
            undefined = True
        if vrep.velocity_defined or want_velocity == "yes":
            rep = rep.merged_with(vrep)
    fileio._dump_json(out_dir / "metrics.json", rep.to_dict())
    name = label or Path(extr_dir).name
    (out_dir / "metrics.txt").write_text(report.metrics_table([(name, rep)]),
                                         encoding="utf-8")
    return rep, undefined


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _sweep_cells(plan: ExperimentPlan):
    axes = []
    for axis in ("n_symbols", "scheme", "snr_db"):
        if axis in plan.sweep:
            axes.append([(axis, v) for v in plan.sweep[axis]])
    if not axes:
        axes = [[("single", None)]]
    cells = [()]
    for axis in axes:
        cells = [c + (choice,) for c in cells for choice in axis]
    return cells


def _cell_plan(plan: ExperimentPlan, cell, index: int) -> ExperimentPlan:
    system, scheme = plan.system, plan.scheme
    snr_db, sigma = plan.snr_db, plan.sigma
    for axis, value in cell:
        if axis == "n_symbols":
            system = dataclasses.replace(system, n_symbols=int(value), max_range=None)
        elif axis == "scheme":
            scheme = dataclasses.replace(scheme, kind=str(value))
        elif axis == "snr_db":
            snr_db, sigma = float(value), None
    return dataclasses.replace(plan, system=system, scheme=scheme, snr_db=snr_db,
                               sigma=sigma, sweep={},
                               seed=derive_seed(plan.seed, ROLE_CELL, index))


def _cell_name(cell) -> str:
    parts = [f"{axis}={value}" for axis, value in cell if value is not None]
    return "_".join(parts) if parts else "single"


def _run_cell(plan: ExperimentPlan, cell, index: int, out_dir: Path) -> dict:
    cell_dir = out_dir / "cells" / _cell_name(cell)
    cplan = _cell_plan(plan, cell, index)
    archive = cmd_simulate(cplan, cell_dir / "archive")
    row = {"cell": dict((a, v) for a, v in cell if v is not None),
           "name": _cell_name(cell), "methods": {}}
    for method in cplan.methods:
        rdir = cmd_reconstruct(archive, method, cell_dir / method)
        rep, _ = cmd_evaluate(rdir, archive, cell_dir / f"eval_{method}",
                              label=f"{_cell_name(cell)}/{method}")
        row["methods"][method] = rep.to_dict()
    return row


def cmd_sweep(plan: ExperimentPlan, out_dir, threads: int) -> int:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = _sweep_cells(plan)
    results = [None] * len(cells)
    failures = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = {pool.submit(_run_cell, plan, cell, idx, out_dir): idx
                   for idx, cell in enumerate(cells)}
        for fut in concurrent.futures.as_completed(futures):
            idx = futures[fut]
            try:
                results[idx] = fut.result()
            except Exception as exc:  # keep other cells running
                failures.append({"name": _cell_name(cells[idx]), "error": str(exc)})
                results[idx] = {"name": _cell_name(cells[idx]), "failed": str(exc)}
    fileio._dump_json(out_dir / "sweep_results.json",
                      {"cells": results, "failures": failures})
    rows = []
    for row in results:
        for method, rep in (row.get("methods") or {}).items():
            rows.append((f"{row['name']}/{method}",
                         MetricsReport(**rep)))
    (out_dir / "sweep_table.txt").write_text(report.metrics_table(rows),
                                             encoding="utf-8")
    if "n_symbols" in plan.sweep and not failures:
        axis_vals = [int(v) for v in plan.sweep["n_symbols"]]
        series = {}
        for method in plan.methods:
            vals = []
            for n in axis_vals:
                picks = [r for r in results
                         if r.get("cell", {}).get("n_symbols") == n]
                vals.append(np.mean([p["methods"][method]["pct_within_6mm"]
                                     for p in picks]))
            series[method] = vals
        report.save_sweep_figure(out_dir / "sweep_trend.png", "symbols per exposure",
                                 axis_vals, series, "% pixels < 6 mm",
                                 "depth precision vs exposure")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1 per the CLI contract
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wavelidar",
                     description="coherent dual-polarization lidar simulation "
                                 "and reconstruction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="synthesize a frame archive")
    sim.add_argument("--config", required=True, help="experiment plan YAML")
    sim.add_argument("--seed", type=int, default=None, help="override plan seed")
    sim.add_argument("--out", required=True, help="archive output directory")

    rec = sub.add_parser("reconstruct", help="run an estimator on an archive")
    rec.add_argument("archive")
    rec.add_argument("--method", default="joint", metavar="METHOD",
                     help=f"one of: {', '.join(METHODS)}")
    rec.add_argument("--out", required=True)
    rec.add_argument("--static", action="store_true",
                     help="restrict the Doppler grid to zero shift")
    rec.add_argument("--k", type=int, default=1, help="surfaces per pixel")
    rec.add_argument("--stage1-iters", type=int, default=None)
    rec.add_argument("--stage2-iters", type=int, default=None)
    rec.add_argument("--lambda-sparse", type=float, default=None)
    rec.add_argument("--lambda-tv", type=float, default=None)
    rec.add_argument("--learning-rate", type=float, default=None)
    rec.add_argument("--delta-max", type=int, default=None)
    rec.add_argument("--batch-pixels", type=int, default=None)

    ev = sub.add_parser("evaluate", help="compare extractions to ground truth")
    ev.add_argument("extraction")
    ev.add_argument("archive")
    ev.add_argument("--out", required=True)
    ev.add_argument("--plane-fit", action="store_true")
    ev.add_argument("--velocity", choices=("auto", "yes", "no"), default="auto")

    sw = sub.add_parser("sweep", help="run the cartesian sweep in the plan")
    sw.add_argument("--config", required=True)
    sw.add_argument("--seed", type=int, default=None)
    sw.add_argument("--out", required=True)
    sw.add_argument("--threads", type=int, default=None)

    ver = sub.add_parser("verify", help="check archive hashes against the manifest")
    ver.add_argument("archive")
    return parser


def _default_threads(value) -> int:
    if value is not None:
        return value
    env = os.environ.get("WAVELIDAR_THREADS", "")
    try:
        return int(env) if env else (os.cpu_count() or 1)
    except ValueError:
        return os.cpu_count() or 1


def _solver_overrides(args) -> dict:
    mapping = {"stage1_iters": args.stage1_iters, "stage2_iters": args.stage2_iters,
               "lambda_sparse": args.lambda_sparse, "lambda_tv": args.lambda_tv,
               "learning_rate": args.learning_rate, "delta_max": args.delta_max,
               "batch_pixels": args.batch_pixels}
    overrides = {k: v for k, v in mapping.items() if v is not None}
    if args.static:
        overrides["static_scene"] = True
    return overrides


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            plan = load_plan(args.config)
            if args.seed is not None:
                plan = dataclasses.replace(plan, seed=args.seed)
            cmd_simulate(plan, args.out)
            print(f"archive written to {args.out}")
        elif args.command == "reconstruct":
            cmd_reconstruct(args.archive, args.method, args.out,
                            solver_overrides=_solver_overrides(args), k=args.k)
            print(f"extraction written to {args.out}")
        elif args.command == "evaluate":
            rep, undefined = cmd_evaluate(args.extraction, args.archive, args.out,
                                          plane_fit=args.plane_fit,
                                          want_velocity=args.velocity)
            print(report.metrics_table([(Path(args.extraction).name, rep)]),
                  end="")
            if undefined:
                print("warning: velocity metric requested but the scene has "
                      "no moving pixels", file=sys.stderr)
                return 1
        elif args.command == "sweep":
            plan = load_plan(args.config)
            if args.seed is not None:
                plan = dataclasses.replace(plan, seed=args.seed)
            threads = _default_threads(args.threads)
            os.environ.setdefault("WAVELIDAR_THREADS", str(threads))
            code = cmd_sweep(plan, args.out, threads)
            print(f"sweep results written to {args.out}")
            return code
        elif args.command == "verify":
            problems = fileio.verify_manifest(args.archive)
            if problems:
                for name, reason in problems:
                    print(f"FAIL {name}: {reason}", file=sys.stderr)
                return 2
            print("archive verified")
    except (ConfigError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ArchiveIOError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
