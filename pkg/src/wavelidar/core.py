"""
Core system model: shared constants, configuration, domain types, and the
unit conversions between integer symbol delays / depth and angular Doppler
shift / radial velocity.

Conventions used throughout the toolkit
---------------------------------------
* The symbol period is T = 1 / symbol_rate; one delay step corresponds to
  c / (2 * symbol_rate) of depth (round trip).
* Delays are integer symbol counts. Sub-symbol interpolation is out of scope.
* Doppler sign: positive angular shift (nu > 0) means the target is
  approaching; the returned velocity is then positive.
* Velocity <-> Doppler uses v = nu * c / omega by default, where omega is
  the angular optical carrier frequency. Set
  ``SystemConfig.doppler_round_trip = True`` to use the monostatic
  convention v = nu * c / (2 * omega) instead.
* All randomness derives from explicit 64-bit seeds through NumPy's PCG64
  generator, keyed via SeedSequence so that results are reproducible across
  platforms and so that per-pixel streams are independent of grid size.
"""

from dataclasses import dataclass

import numpy as np

C0 = 299_792_458.0  # speed of light, m/s (exact)

# Roles for the seed derivation tree; a derived stream is keyed on
# (master_seed, role, *indices) so adding pixels never perturbs existing ones.
ROLE_TX = 0
ROLE_SPECKLE = 1
ROLE_NOISE = 2
ROLE_SOLVER = 3
ROLE_CELL = 4


class WavelidarError(Exception):
    """Base class for toolkit errors."""


class ConfigError(WavelidarError):
    """Invalid configuration or parameter value."""


class ShapeError(WavelidarError):
    """Array arguments have inconsistent or unsupported shapes."""


class SceneError(WavelidarError):
    """Scene specification cannot be realized (e.g. surface out of range)."""


class SolverError(WavelidarError):
    """Optimization diverged or could not run."""


class NoSurfaceError(WavelidarError):
    """Extraction requested but every candidate bin is masked."""


def derive_rng(master_seed: int, *keys: int) -> np.random.Generator:
    """Deterministic child generator for (master_seed, *keys).

    The documented hash tree of the toolkit: every stochastic quantity is
    drawn from ``PCG64(SeedSequence([master_seed, *keys]))``.
    """
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF,
                                 *[int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]])
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(master_seed: int, *keys: int) -> int:
    """64-bit child seed from the same (master_seed, *keys) hash tree."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF,
                                 *[int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]])
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemConfig:
    """Static system parameters.

    Attributes
    ----------
    symbol_rate : float
        Modulation/sampling rate 1/T in Hz.
    carrier_wavelength : float
        Optical carrier wavelength in m (omega = 2*pi*c / wavelength).
    n_symbols : int
        Symbols per frame (exposure = n_symbols / symbol_rate).
    delta_min : int
        Smallest delay attributable to the free-space scene; bins at or
        below this are masked during extraction.
    max_range : float
        Largest representable depth in m; defaults to the unambiguous
        range n_symbols * c / (2 * symbol_rate).
    max_abs_velocity : float
        Magnitude bound for radial velocities, m/s.
    doppler_bin_count : int
        0 = derive the Doppler grid from the exposure-limited resolution
        2*pi/(N*T); an explicit odd count instead spans [-nu_max, nu_max]
        with that many uniformly spaced bins.
    internal_reflection_delays : tuple of int
        Calibrated static echo delays from the optical path; masked during
        extraction but included in forward models and solver grids.
    doppler_round_trip : bool
        False (default) uses v = nu*c/omega; True uses v = nu*c/(2*omega).
    """

    symbol_rate: float = 74e9
    carrier_wavelength: float = 1550e-9
    n_symbols: int = 2**16
    delta_min: int = 0
    max_range: float | None = None
    max_abs_velocity: float = 30.0
    doppler_bin_count: int = 0
    internal_reflection_delays: tuple = ()
    doppler_round_trip: bool = False

    def __post_init__(self):
        if self.symbol_rate <= 0:
            raise ConfigError(f"symbol_rate must be positive, got {self.symbol_rate}")
        if self.carrier_wavelength <= 0:
            raise ConfigError("carrier_wavelength must be positive")
        if self.n_symbols < 1:
            raise ConfigError("n_symbols must be >= 1")
        if not (0 <= self.delta_min < self.n_symbols):
            raise ConfigError(f"delta_min must lie in [0, n_symbols), got {self.delta_min}")
        unambiguous = self.n_symbols * C0 / (2.0 * self.symbol_rate)
        if self.max_range is None:
            object.__setattr__(self, "max_range", unambiguous)
        elif self.max_range > unambiguous * (1 + 1e-12):
            raise ConfigError(
                f"max_range {self.max_range} m exceeds the unambiguous range "
                f"{unambiguous:.3f} m implied by n_symbols")
        if self.max_abs_velocity < 0:
            raise ConfigError("max_abs_velocity must be nonnegative")
        if self.doppler_bin_count < 0 or (self.doppler_bin_count % 2 == 0
                                          and self.doppler_bin_count != 0):
            raise ConfigError("doppler_bin_count must be 0 (auto) or a positive odd count")
        object.__setattr__(self, "internal_reflection_delays",
                           tuple(int(d) for d in self.internal_reflection_delays))
        for d in self.internal_reflection_delays:
            if not (0 <= d < self.n_symbols):
                raise ConfigError(f"internal reflection delay {d} outside [0, n_symbols)")

    @property
    def symbol_period(self) -> float:
        return 1.0 / self.symbol_rate

    @property
    def carrier_omega(self) -> float:
        return 2.0 * np.pi * C0 / self.carrier_wavelength

    @property
    def depth_step(self) -> float:
        """Depth quantum per unit delay, c / (2 * symbol_rate)."""
        return C0 / (2.0 * self.symbol_rate)

    @property
    def exposure(self) -> float:
        return self.n_symbols / self.symbol_rate


@dataclass(frozen=True)
class EchoPath:
    """One reflected copy of the transmit sequence.

    delay is an integer symbol count, doppler an angular shift in rad/s,
    and jones the 2x2 complex transform applied to the dual-pol field.
    """

    delay: int
    doppler: float
    jones: np.ndarray

    def __post_init__(self):
        j = np.asarray(self.jones, dtype=np.complex128)
        if j.shape != (2, 2):
            raise ShapeError(f"jones must be 2x2, got {j.shape}")
        if not np.all(np.isfinite(j.view(np.float64))):
            raise ConfigError("jones entries must be finite")
        object.__setattr__(self, "jones", j)
        object.__setattr__(self, "delay", int(self.delay))
        if self.delay < 0:
            raise ConfigError(f"delay must be >= 0, got {self.delay}")


@dataclass(frozen=True)
class NoiseModel:
    """Per-channel circularly symmetric complex Gaussian noise.

    sigma is the complex standard deviation per polarization channel
    (E|eta|^2 = sigma^2). Identical seed and inputs reproduce the identical
    realization.
    """

    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError(f"sigma must be nonnegative, got {self.sigma}")


def as_dual_pol(samples, n_symbols: int | None = None) -> np.ndarray:
    """Validate and return an (N, 2) complex128 dual-polarization sequence."""
    arr = np.asarray(samples, dtype=np.complex128)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ShapeError(f"expected shape (N, 2), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ShapeError("empty symbol sequence")
    if not np.all(np.isfinite(arr.view(np.float64))):
        raise ShapeError("symbol sequence contains non-finite entries")
    if n_symbols is not None and arr.shape[0] != n_symbols:
        raise ShapeError(f"expected {n_symbols} symbols, got {arr.shape[0]}")
    return arr


# ---------------------------------------------------------------------------
# Unit conversions
# ---------------------------------------------------------------------------

def delay_to_depth(delta, cfg: SystemConfig):
    """Depth in m for an integer symbol delay: delta * c / (2 * symbol_rate)."""
    delta = np.asarray(delta)
    if np.any(delta < 0):
        raise ConfigError("delay must be nonnegative")
    out = delta * cfg.depth_step
    return float(out) if out.ndim == 0 else out


def depth_to_delay(d, cfg: SystemConfig):
    """Integer symbol delay floor(2*d/c * symbol_rate) for a depth in m."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or np.any(d > cfg.max_range * (1 + 1e-12)):
        raise ConfigError(f"depth outside [0, {cfg.max_range}] m")
    x = 2.0 * d / C0 * cfg.symbol_rate
    # relative guard so depths produced by delay_to_depth floor back exactly
    delta = np.floor(x * (1.0 + 1e-12) + 1e-12).astype(np.int64)
    return int(delta) if delta.ndim == 0 else delta


def _velocity_scale(cfg: SystemConfig) -> float:
    # v = nu * c / omega, halved under the round-trip convention
    scale = C0 / cfg.carrier_omega
    if cfg.doppler_round_trip:
        scale *= 0.5
    return scale


def doppler_to_velocity(nu, cfg: SystemConfig):
    """Radial velocity (m/s, positive = approaching) for an angular shift."""
    out = np.asarray(nu, dtype=float) * _velocity_scale(cfg)
    return float(out) if out.ndim == 0 else out


def velocity_to_doppler(v, cfg: SystemConfig):
    """Angular Doppler shift in rad/s for a radial velocity in m/s."""
    out = np.asarray(v, dtype=float) / _velocity_scale(cfg)
    return float(out) if out.ndim == 0 else out


def doppler_bin_spacing(cfg: SystemConfig) -> float:
    """Exposure-limited angular frequency resolution 2*pi/(N*T)."""
    return 2.0 * np.pi * cfg.symbol_rate / cfg.n_symbols


def doppler_bin_grid(cfg: SystemConfig) -> np.ndarray:
    """Symmetric, strictly increasing Doppler grid containing exactly one
    zero bin.

    Auto mode (doppler_bin_count == 0) spaces bins by 2*pi/(N*T) and keeps
    every bin inside [-nu_max, +nu_max] with nu_max derived from
    max_abs_velocity. An explicit odd doppler_bin_count spans the same
    interval uniformly instead.
    """
    if cfg.n_symbols < 2:
        raise ConfigError("doppler_bin_grid requires n_symbols >= 2")
    nu_max = abs(velocity_to_doppler(cfg.max_abs_velocity, cfg))
    if cfg.doppler_bin_count:
        half = (cfg.doppler_bin_count - 1) // 2
        if half == 0 or nu_max == 0.0:
            return np.zeros(1)
        step = nu_max / half
        return step * np.arange(-half, half + 1, dtype=float)
    step = doppler_bin_spacing(cfg)
    # guard against float noise when nu_max is an exact bin multiple
    half = int(np.floor(nu_max / step + 1e-9))
    return step * np.arange(-half, half + 1, dtype=float)


def velocity_bin_spacing(cfg: SystemConfig) -> float:
    """Velocity quantum of the Doppler grid, in m/s per bin."""
    grid = doppler_bin_grid(cfg)
    if len(grid) < 2:
        return doppler_to_velocity(doppler_bin_spacing(cfg), cfg)
    return doppler_to_velocity(grid[1] - grid[0], cfg)
