"""
On-disk formats.

* Symbol sequences (and debug field traces): raw little-endian float32,
  interleaved per symbol as (re, im) x (pol1, pol2), i.e. columns
  re1, im1, re2, im2 - plus a JSON sidecar carrying length, scheme, seed,
  and power. A CSV export is provided for inspection.
* Channel realizations: JSON (integer delays, Doppler in rad/s, Jones as
  8 floats row-major re/im).
* System / scene / experiment configuration: YAML, SI base units.
* Archives: a manifest.json with a format version, config snapshot, seeds,
  and SHA-256 hashes of every payload file. Readers reject manifests whose
  major format version is newer than theirs.
* Grayscale renders: 16-bit PNG with fixed, documented min/max
  normalization recorded in the sidecar.

All JSON is written with sorted keys and no timestamps so that re-running a
pipeline with the same plan and seed yields byte-identical files.
"""

import csv
import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .core import (ConfigError, EchoPath, NoiseModel, ShapeError, SystemConfig,
                   as_dual_pol)
from .channel import ChannelRealization, SpeckleModel
from .modulation import ModulationScheme
from .reconstruction import ExtractionMap, JonesField, SolverParams
from .scenes import Composite, Plane, SceneSpec, SpinningDisk, TwoLayer

FORMAT_VERSION = "1.0"


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def _load_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Symbol sequences
# ---------------------------------------------------------------------------

def write_symbols(path, samples, meta: dict | None = None):
    """Write an (N, 2) complex sequence as interleaved float32 plus sidecar."""
    samples = as_dual_pol(samples)
    flat = np.empty((samples.shape[0], 4), dtype="<f4")
    flat[:, 0] = samples[:, 0].real
    flat[:, 1] = samples[:, 0].imag
    flat[:, 2] = samples[:, 1].real
    flat[:, 3] = samples[:, 1].imag
    path = Path(path)
    path.write_bytes(flat.tobytes())
    sidecar = {"format": "dual-pol-symbols", "version": FORMAT_VERSION,
               "dtype": "float32-le", "layout": "re1,im1,re2,im2",
               "length": int(samples.shape[0])}
    sidecar.update(meta or {})
    _dump_json(path.with_suffix(path.suffix + ".json"), sidecar)


def read_symbols(path):
    """Read a sequence written by write_symbols; returns (samples, sidecar)."""
    path = Path(path)
    sidecar = _load_json(path.with_suffix(path.suffix + ".json"))
    raw = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(-1, 4)
    if raw.shape[0] != sidecar["length"]:
        raise ShapeError(f"{path}: payload length {raw.shape[0]} does not match "
                         f"sidecar length {sidecar['length']}")
    samples = np.empty((raw.shape[0], 2), dtype=np.complex128)
    samples[:, 0] = raw[:, 0] + 1j * raw[:, 1]
    samples[:, 1] = raw[:, 2] + 1j * raw[:, 3]
    return samples, sidecar


def symbols_to_csv(path, samples):
    samples = as_dual_pol(samples)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "re1", "im1", "re2", "im2"])
        for n, row in enumerate(samples):
            writer.writerow([n, repr(float(row[0].real)), repr(float(row[0].imag)),
                             repr(float(row[1].real)), repr(float(row[1].imag))])


# ---------------------------------------------------------------------------
# Channel realizations
# ---------------------------------------------------------------------------

def channel_to_dict(ch: ChannelRealization) -> dict:
    return {
        "echoes": [{"delay": int(e.delay), "doppler": float(e.doppler),
                    "jones": [float(v) for pair in
                              ((z.real, z.imag) for z in e.jones.ravel())
                              for v in pair]}
                   for e in ch.echoes],
        "noise": {"sigma": float(ch.noise.sigma), "seed": int(ch.noise.seed)},
    }


def channel_from_dict(d: dict) -> ChannelRealization:
    echoes = []
    for e in d["echoes"]:
        j = np.asarray(e["jones"], dtype=float).reshape(4, 2)
        echoes.append(EchoPath(delay=e["delay"], doppler=e["doppler"],
                               jones=(j[:, 0] + 1j * j[:, 1]).reshape(2, 2)))
    return ChannelRealization(echoes=tuple(echoes),
                              noise=NoiseModel(**d["noise"]))


# ---------------------------------------------------------------------------
# YAML configuration
# ---------------------------------------------------------------------------

def system_to_dict(cfg: SystemConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["internal_reflection_delays"] = list(cfg.internal_reflection_delays)
    return d


def system_from_dict(d: dict) -> SystemConfig:
    return SystemConfig(**d)


def save_system_config(path, cfg: SystemConfig):
    Path(path).write_text(yaml.safe_dump({"system": system_to_dict(cfg)},
                                         sort_keys=True), encoding="utf-8")


def load_system_config(path) -> SystemConfig:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    try:
        return system_from_dict(data["system"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: invalid system config: {exc}") from exc


_SCENE_KINDS = {"plane": Plane, "spinning_disk": SpinningDisk,
                "two_layer": TwoLayer, "composite": Composite}


def _kind_to_dict(kind) -> dict:
    name = {v: k for k, v in _SCENE_KINDS.items()}[type(kind)]
    d = {"kind": name}
    if isinstance(kind, Composite):
        d["parts"] = [_kind_to_dict(p) for p in kind.parts]
    else:
        raw = dataclasses.asdict(kind)
        d.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in raw.items()})
    return d


def _kind_from_dict(d: dict):
    d = dict(d)
    name = d.pop("kind")
    if name not in _SCENE_KINDS:
        raise ConfigError(f"unknown scene kind {name!r}")
    cls = _SCENE_KINDS[name]
    if cls is Composite:
        return Composite(parts=tuple(_kind_from_dict(p) for p in d["parts"]))
    for key in ("tilt", "orientation"):
        if key in d:
            d[key] = tuple(d[key])
    return cls(**d)


def scene_to_dict(spec: SceneSpec) -> dict:
    return {"surface": _kind_to_dict(spec.kind),
            "height": spec.height, "width": spec.width,
            "angular_spacing": spec.angular_spacing,
            "speckle": dataclasses.asdict(spec.speckle),
            "master_seed": spec.master_seed,
            "internal_amplitudes": list(spec.internal_amplitudes)}


def scene_from_dict(d: dict) -> SceneSpec:
    d = dict(d)
    kind = _kind_from_dict(d.pop("surface"))
    speckle = SpeckleModel(**d.pop("speckle", {}))
    d["internal_amplitudes"] = tuple(d.get("internal_amplitudes", ()))
    return SceneSpec(kind=kind, speckle=speckle, **d)


def scheme_from_dict(d: dict) -> ModulationScheme:
    return ModulationScheme(**d)


def solver_from_dict(d: dict) -> SolverParams:
    return SolverParams(**d)


# ---------------------------------------------------------------------------
# Jones fields and extraction maps
# ---------------------------------------------------------------------------

def write_jones_field(path, field: JonesField):
    """Binary float32 (re, im interleaved, row-major) plus JSON sidecar."""
    path = Path(path)
    flat = np.stack([field.values.real, field.values.imag], axis=-1)
    path.write_bytes(flat.astype("<f4").tobytes())
    _dump_json(path.with_suffix(path.suffix + ".json"), {
        "format": "jones-field", "version": FORMAT_VERSION, "dtype": "float32-le",
        "pixel_grid": list(field.pixel_grid),
        "delta_bins": [int(d) for d in field.delta_bins],
        "nu_grid": [float(v) for v in field.nu_grid],
        "layout": "pixel_grid + (delta, nu, 2, 2, re/im)"})


def read_jones_field(path) -> JonesField:
    path = Path(path)
    meta = _load_json(path.with_suffix(path.suffix + ".json"))
    delta = np.asarray(meta["delta_bins"], dtype=np.int64)
    nu = np.asarray(meta["nu_grid"], dtype=float)
    shape = tuple(meta["pixel_grid"]) + (len(delta), len(nu), 2, 2, 2)
    raw = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(shape).astype(np.float64)
    return JonesField(raw[..., 0] + 1j * raw[..., 1], delta, nu)


def write_extraction(out_dir, extr: ExtractionMap, cfg: SystemConfig):
    """CSV + binary + sidecar + 16-bit grayscale renders for an extraction map.

    Depth renders normalize [0, max_range]; velocity renders
    [-max_abs_velocity, +max_abs_velocity]; the sidecar records both.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h, w = extr.pixel_grid
    with open(out_dir / "extraction.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pixel_i", "pixel_j", "rank", "depth_m", "velocity_mps",
                         "jones_frobenius"])
        for i in range(h):
            for j in range(w):
                for r in range(extr.k):
                    writer.writerow([i, j, r, repr(float(extr.depth[i, j, r])),
                                     repr(float(extr.velocity[i, j, r])),
                                     repr(float(extr.frob[i, j, r]))])
    stack = np.stack([extr.depth, extr.velocity, extr.frob], axis=-1)
    (out_dir / "extraction.bin").write_bytes(stack.astype("<f4").tobytes())
    _dump_json(out_dir / "extraction.bin.json", {
        "format": "extraction-map", "version": FORMAT_VERSION, "dtype": "float32-le",
        "pixel_grid": [h, w], "k": extr.k,
        "layout": "(H, W, k, [depth_m, velocity_mps, jones_frobenius])",
        "render_normalization": {
            "depth_png": [0.0, float(cfg.max_range)],
            "velocity_png": [-float(cfg.max_abs_velocity), float(cfg.max_abs_velocity)]}})
    save_gray16(out_dir / "depth.png", extr.depth[..., 0], 0.0, float(cfg.max_range))
    save_gray16(out_dir / "velocity.png", extr.velocity[..., 0],
                -float(cfg.max_abs_velocity), float(cfg.max_abs_velocity))


def save_gray16(path, arr, vmin: float, vmax: float):
    """Render a 2-D map to 16-bit grayscale PNG with fixed normalization."""
    arr = np.asarray(arr, dtype=float)
    if arr.ndim != 2:
        raise ShapeError("render expects a 2-D map")
    if vmax <= vmin:
        raise ConfigError("vmax must exceed vmin")
    scaled = np.clip((arr - vmin) / (vmax - vmin), 0.0, 1.0)
    scaled = np.nan_to_num(scaled, nan=0.0)
    img = (scaled * 65535.0).round().astype(np.uint16)
    Image.fromarray(img).save(path)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(directory, entries: dict, files):
    """Manifest with format version, metadata entries, and file hashes.

    `files` are paths relative to `directory`.
    """
    directory = Path(directory)
    manifest = {"format_version": FORMAT_VERSION, **entries,
                "files": {str(f): sha256_file(directory / f) for f in sorted(map(str, files))}}
    _dump_json(directory / "manifest.json", manifest)


def read_manifest(directory) -> dict:
    manifest = _load_json(Path(directory) / "manifest.json")
    major = int(str(manifest.get("format_version", "0")).split(".")[0])
    if major > int(FORMAT_VERSION.split(".")[0]):
        raise ConfigError(f"archive format version {manifest['format_version']} is "
                          f"newer than supported {FORMAT_VERSION}")
    return manifest


def verify_manifest(directory) -> list:
    """Return a list of (file, reason) problems; empty means verified."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    problems = []
    for name, expected in manifest.get("files", {}).items():
        target = directory / name
        if not target.exists():
            problems.append((name, "missing"))
        elif sha256_file(target) != expected:
            problems.append((name, "hash mismatch"))
    return problems
