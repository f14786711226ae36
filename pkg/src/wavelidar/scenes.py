"""
Analytic synthetic scenes and raster-scan frame assembly.

Scenes are specified geometrically (no mesh ingestion): a tilted plane, a
spinning disk (optionally in front of other surfaces via a composite), and
a translucent two-layer target. The camera sits at the origin looking down
+z; pixel (i, j) of an H x W grid views along the direction obtained from
the angular offsets

    az = (j - (W-1)/2) * angular_spacing,   el = (i - (H-1)/2) * angular_spacing.

Depths are true ray distances (not axial distances). Radial velocity is the
rigid-motion velocity projected on the view ray, positive toward the sensor.

Per-pixel randomness (speckle Jones draws, acquisition noise) is keyed on
(seed, role, i, j), so enlarging the grid never perturbs existing pixels.
"""

import dataclasses
from dataclasses import dataclass, field as _field

import numpy as np

from .core import (ROLE_NOISE, ROLE_SPECKLE, NoiseModel, SceneError, ShapeError,
                   SystemConfig, as_dual_pol, depth_to_delay, derive_rng,
                   derive_seed, velocity_to_doppler, EchoPath)
from .channel import ChannelRealization, SpeckleModel, apply_channel, sample_jones


# ---------------------------------------------------------------------------
# Scene geometry kinds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Plane:
    """Infinite plane through (0, 0, distance); tilt = (pitch_deg, yaw_deg)
    rotates its normal away from the optical axis."""

    distance: float
    tilt: tuple = (0.0, 0.0)


@dataclass(frozen=True)
class SpinningDisk:
    """Rigid disk of the given radius spinning about its own normal.

    center is the distance of the disk center along the optical axis;
    rim_speed the tangential speed at the rim (m/s); orientation =
    (pitch_deg, yaw_deg) tilts the disk normal / spin axis. Rays missing
    the disk see nothing (combine with a backdrop via Composite).
    """

    center: float
    radius: float
    rim_speed: float
    orientation: tuple = (30.0, 0.0)


@dataclass(frozen=True)
class TwoLayer:
    """Fronto-parallel translucent layer over an opaque back surface.

    The front reflects front_reflectance of the energy; the back surface
    is seen through the layer with its speckle reflectance scaled by the
    squared transmission (1 - front_reflectance)^2.
    """

    front: float
    back: float
    front_reflectance: float = 0.3


@dataclass(frozen=True)
class Composite:
    """Opaque union of parts; each ray sees the nearest intersected part."""

    parts: tuple


@dataclass(frozen=True)
class SceneSpec:
    kind: object
    height: int = 16
    width: int = 16
    angular_spacing: float = 1e-3  # rad between adjacent pixel rays
    speckle: SpeckleModel = _field(default_factory=SpeckleModel)
    master_seed: int = 0
    internal_amplitudes: tuple = ()

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise SceneError("pixel grid must be at least 1 x 1")
        object.__setattr__(self, "internal_amplitudes", tuple(self.internal_amplitudes))


@dataclass
class GroundTruth:
    """Per-pixel truth maps: depth of the nearest surface (m), its radial
    velocity (m/s, positive approaching), and the number of surfaces."""

    depth_map: np.ndarray
    velocity_map: np.ndarray
    surface_count_map: np.ndarray


def _rotated_axis(pitch_deg: float, yaw_deg: float) -> np.ndarray:
    """Unit vector from +z rotated by pitch about x then yaw about y."""
    p = np.deg2rad(pitch_deg)
    y = np.deg2rad(yaw_deg)
    v = np.array([0.0, np.sin(p), np.cos(p)])
    rot_y = np.array([[np.cos(y), 0, np.sin(y)], [0, 1, 0], [-np.sin(y), 0, np.cos(y)]])
    return rot_y @ v


def pixel_rays(spec: SceneSpec) -> np.ndarray:
    """(H, W, 3) unit view directions."""
    h, w, s = spec.height, spec.width, spec.angular_spacing
    az = (np.arange(w) - (w - 1) / 2.0) * s
    el = (np.arange(h) - (h - 1) / 2.0) * s
    dirs = np.empty((h, w, 3))
    dirs[..., 0] = np.tan(az)[None, :]
    dirs[..., 1] = np.tan(el)[:, None]
    dirs[..., 2] = 1.0
    return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)


def _plane_hit(ray, point, normal):
    denom = ray @ normal
    if abs(denom) < 1e-12:
        return None
    t = (point @ normal) / denom
    return t if t > 0 else None


def _surfaces_for_ray(kind, ray):
    """List of (ray_distance, radial_velocity, reflectance_scale) for one ray.

    reflectance_scale multiplies the speckle model's mean reflectance; the
    two-layer front uses its own absolute reflectance instead (flagged by a
    negative scale carrying the value).
    """
    if isinstance(kind, Plane):
        n = _rotated_axis(*kind.tilt)
        t = _plane_hit(ray, np.array([0.0, 0.0, kind.distance]), n)
        return [(t, 0.0, 1.0)] if t is not None else []
    if isinstance(kind, SpinningDisk):
        n = _rotated_axis(*kind.orientation)
        center = np.array([0.0, 0.0, kind.center])
        t = _plane_hit(ray, center, n)
        if t is None:
            return []
        hit = t * ray
        r = hit - center
        if np.linalg.norm(r) > kind.radius:
            return []
        omega = (kind.rim_speed / kind.radius) * n
        u = np.cross(omega, r)
        return [(t, -float(u @ ray), 1.0)]
    if isinstance(kind, TwoLayer):
        rho = kind.front_reflectance
        tf = _plane_hit(ray, np.array([0.0, 0.0, kind.front]), np.array([0.0, 0.0, 1.0]))
        tb = _plane_hit(ray, np.array([0.0, 0.0, kind.back]), np.array([0.0, 0.0, 1.0]))
        out = []
        if tf is not None:
            out.append((tf, 0.0, -rho))  # absolute reflectance
        if tb is not None:
            out.append((tb, 0.0, (1.0 - rho) ** 2))
        return out
    if isinstance(kind, Composite):
        hits = []
        for part in kind.parts:
            hits.extend(_surfaces_for_ray(part, ray))
        if not hits:
            return []
        return [min(hits, key=lambda s: s[0])]  # nearest opaque surface wins
    raise SceneError(f"unknown scene kind {type(kind).__name__}")


def realize_scene(spec: SceneSpec, cfg: SystemConfig):
    """Ray-trace the scene into (GroundTruth, per-pixel ChannelRealization).

    Per pixel and surface: the delay is depth_to_delay of the ray distance,
    the Doppler shift velocity_to_doppler of the projected rigid-motion
    velocity, and the Jones matrix a speckle draw from the stream keyed on
    (master_seed, ROLE_SPECKLE, i, j), drawn in near-to-far surface order.
    Internal reflections configured in cfg are appended with zero Doppler.
    """
    rays = pixel_rays(spec)
    h, w = spec.height, spec.width
    depth = np.zeros((h, w))
    vel = np.zeros((h, w))
    count = np.zeros((h, w), dtype=np.int64)
    realizations = []
    if spec.internal_amplitudes and len(spec.internal_amplitudes) != len(
            cfg.internal_reflection_delays):
        raise SceneError("internal_amplitudes must align with the configured "
                         "internal reflection delays")
    min_depth = cfg.delta_min * cfg.depth_step
    for i in range(h):
        row = []
        for j in range(w):
            surfaces = _surfaces_for_ray(spec.kind, rays[i, j])
            surfaces.sort(key=lambda s: s[0])
            echoes = []
            rng = derive_rng(spec.master_seed, ROLE_SPECKLE, i, j)
            for s_idx, (dist, v_r, scale) in enumerate(surfaces):
                if not (min_depth <= dist <= cfg.max_range):
                    raise SceneError(
                        f"surface at {dist:.3f} m outside [{min_depth:.3f}, "
                        f"{cfg.max_range:.3f}] m at pixel ({i}, {j})")
                if abs(v_r) > cfg.max_abs_velocity * (1 + 1e-9):
                    raise SceneError(f"|velocity| {abs(v_r):.2f} m/s exceeds "
                                     f"max_abs_velocity at pixel ({i}, {j})")
                refl = -scale if scale < 0 else spec.speckle.mean_reflectance * scale
                model = dataclasses.replace(spec.speckle, mean_reflectance=min(refl, 1.0))
                echoes.append(EchoPath(
                    delay=depth_to_delay(dist, cfg),
                    doppler=velocity_to_doppler(v_r, cfg),
                    jones=sample_jones(model, rng)))
            for d, a in zip(cfg.internal_reflection_delays,
                            spec.internal_amplitudes or
                            (0.5,) * len(cfg.internal_reflection_delays)):
                echoes.append(EchoPath(delay=d, doppler=0.0,
                                       jones=a * np.eye(2, dtype=np.complex128)))
            if surfaces:
                depth[i, j] = surfaces[0][0]
                vel[i, j] = surfaces[0][1]
            else:
                depth[i, j] = np.nan
                vel[i, j] = np.nan
            count[i, j] = len(surfaces)
            row.append(ChannelRealization(echoes=tuple(echoes)))
        realizations.append(row)
    return GroundTruth(depth, vel, count), realizations


def acquire_pixel(tx, realization: ChannelRealization, cfg: SystemConfig,
                  noise: NoiseModel, pixel) -> np.ndarray:
    """One pixel's received frame with its derived noise seed."""
    i, j = pixel
    seeded = ChannelRealization(
        echoes=realization.echoes,
        noise=NoiseModel(sigma=noise.sigma,
                         seed=derive_seed(noise.seed, ROLE_NOISE, i, j)))
    return apply_channel(tx, seeded, cfg)


def acquire_frame(tx, realizations, cfg: SystemConfig,
                  noise: NoiseModel) -> np.ndarray:
    """(H, W, N, 2) received frames for every pixel (deterministic)."""
    tx = as_dual_pol(tx)
    h = len(realizations)
    w = len(realizations[0])
    out = np.empty((h, w, tx.shape[0], 2), dtype=np.complex128)
    for i in range(h):
        if len(realizations[i]) != w:
            raise ShapeError("ragged realization grid")
        for j in range(w):
            out[i, j] = acquire_pixel(tx, realizations[i][j], cfg, noise, (i, j))
    return out
