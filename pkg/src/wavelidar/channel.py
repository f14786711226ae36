"""
Symbol-domain forward model: the received frame is a superposition of
delayed, Doppler-rotated, Jones-scrambled copies of the transmit sequence
plus complex Gaussian noise,

    Y_n = sum_s J_s X_{n - delta_s} exp(j nu_s n T) + eta_n,

with X_k = 0 for k < 0 (the frame is zero-padded at the head; there is no
wraparound, matching a real acquisition window). The Doppler phasor is
evaluated at t = n*T; any constant per-symbol offset is indistinguishable
from a global Jones phase.

SNR convention (used by every synthetic sweep in the toolkit): total echo
power over total noise power across both channels,

    snr = (sum_s ||J_s||_F^2 * power_per_pol) / (2 * sigma^2).
"""

from dataclasses import dataclass, field

import numpy as np

from .core import (ConfigError, EchoPath, NoiseModel, SystemConfig,
                   as_dual_pol, derive_rng)

SPECKLE_KINDS = ("fully_scrambling", "unitary_rotation")


@dataclass(frozen=True)
class SpeckleModel:
    """Statistics for per-pixel random Jones matrices.

    'fully_scrambling' draws four i.i.d. circular complex Gaussian entries;
    'unitary_rotation' draws a Haar-random 2x2 unitary. Both are scaled so
    E ||J||_F^2 = 2 * mean_reflectance (exactly so for the unitary kind).
    """

    kind: str = "fully_scrambling"
    mean_reflectance: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SPECKLE_KINDS:
            raise ConfigError(f"unknown speckle kind {self.kind!r}")
        if not (0.0 < self.mean_reflectance <= 1.0):
            raise ConfigError("mean_reflectance must lie in (0, 1]")


@dataclass(frozen=True)
class ChannelRealization:
    """Echo list plus the noise model for one pixel's acquisition."""

    echoes: tuple = ()
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        object.__setattr__(self, "echoes", tuple(self.echoes))

    @property
    def total_jones_energy(self) -> float:
        return float(sum(np.sum(np.abs(e.jones) ** 2) for e in self.echoes))


def sample_jones(model: SpeckleModel, rng=None) -> np.ndarray:
    """Draw one Jones matrix from the speckle model (deterministic in seed)."""
    if rng is None:
        rng = derive_rng(model.seed)
    if model.kind == "fully_scrambling":
        g = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        # E|entry|^2 = mean_reflectance / 2 so that E||J||_F^2 = 2 * reflectance
        return g * np.sqrt(model.mean_reflectance / 4.0)
    # Haar-random unitary via QR with phase correction
    g = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))) / np.sqrt(2)
    q, r = np.linalg.qr(g)
    d = np.diagonal(r)
    q = q * (d / np.abs(d))
    return q * np.sqrt(model.mean_reflectance)


def apply_channel(tx, ch: ChannelRealization, cfg: SystemConfig) -> np.ndarray:
    """Propagate (N, 2) transmit symbols through the channel realization."""
    tx = as_dual_pol(tx)
    n = tx.shape[0]
    t = np.arange(n) / cfg.symbol_rate
    rx = np.zeros_like(tx)
    for echo in ch.echoes:
        if echo.delay >= n:
            raise ConfigError(f"echo delay {echo.delay} >= frame length {n}")
        shifted = np.zeros_like(tx)
        shifted[echo.delay:] = tx[:n - echo.delay]
        if echo.doppler != 0.0:
            shifted = shifted * np.exp(1j * echo.doppler * t)[:, None]
        rx += shifted @ echo.jones.T
    if ch.noise.sigma > 0.0:
        rng = derive_rng(ch.noise.seed)
        eta = rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))
        rx += eta * (ch.noise.sigma / np.sqrt(2.0))
    return rx


def with_internal_reflections(ch: ChannelRealization, cfg: SystemConfig,
                              amplitudes) -> ChannelRealization:
    """Append one static (zero-Doppler) diagonal echo per calibrated internal
    reflection delay in the config."""
    delays = cfg.internal_reflection_delays
    amplitudes = list(amplitudes)
    if len(amplitudes) != len(delays):
        raise ConfigError(
            f"{len(amplitudes)} amplitudes for {len(delays)} configured internal delays")
    extra = [EchoPath(delay=d, doppler=0.0, jones=a * np.eye(2, dtype=np.complex128))
             for d, a in zip(delays, amplitudes)]
    return ChannelRealization(echoes=ch.echoes + tuple(extra), noise=ch.noise)


def snr_to_sigma(snr_db: float, echoes, power_per_pol: float) -> float:
    """Noise sigma realizing the toolkit SNR definition for the given echoes.

    snr = (sum_s ||J_s||_F^2 * power_per_pol) / (2 sigma^2); snr_db = inf
    returns sigma = 0.
    """
    echoes = list(echoes)
    if not echoes:
        raise ConfigError("SNR is undefined for an empty echo list")
    if np.isinf(snr_db):
        return 0.0
    signal = sum(float(np.sum(np.abs(e.jones) ** 2)) for e in echoes) * power_per_pol
    return float(np.sqrt(signal / (2.0 * 10.0 ** (snr_db / 10.0))))
