"""
Transmit symbol generation for the four modulation schemes, the matching
receiver-side information-discarding projections, and symbol-to-waveform
pulse shaping for the continuous-time front end.

Scheme definitions (all schemes transmit the same total power):

* ``full_wavefield``      - i.i.d. circular complex Gaussian amplitude and
  phase on both polarization channels.
* ``dual_pol_phase``      - constant amplitude, uniform random phase on both
  channels; the receiver normalizes each symbol to unit modulus.
* ``dual_pol_amplitude``  - constant (zero) phase, Gaussian real amplitudes
  on both channels; the receiver projects each symbol onto the transmit
  phase direction, discarding quadrature information.
* ``single_pol``          - complex Gaussian on channel 1 at twice the
  per-channel power, channel 2 dark; the receiver discards channel 2.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import upfirdn

from .core import ConfigError, ShapeError, as_dual_pol, derive_rng

SCHEME_KINDS = ("full_wavefield", "dual_pol_phase", "dual_pol_amplitude", "single_pol")

# transmit phase direction used by dual_pol_amplitude (unit complex per channel)
_AMPLITUDE_PHASE = np.array([1.0 + 0.0j, 1.0 + 0.0j])


@dataclass(frozen=True)
class ModulationScheme:
    kind: str = "full_wavefield"
    seed: int = 0
    power_per_pol: float = 1.0

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ConfigError(f"unknown modulation scheme {self.kind!r}; "
                              f"expected one of {SCHEME_KINDS}")
        if self.power_per_pol < 0:
            raise ConfigError("power_per_pol must be nonnegative")

    @property
    def total_power(self) -> float:
        """Mean transmit power summed over channels; equal for all kinds."""
        return 2.0 * self.power_per_pol


@dataclass(frozen=True)
class PulseShape:
    """Symbol-to-waveform filter.

    kind 'rect' holds each symbol for `oversampling` samples. Kind 'rrc'
    is a root-raised-cosine filter with the given rolloff in [0, 1] and
    span in symbols on either side of the tap center; taps are normalized
    to unit DC gain through the upsampling path (tap sum = oversampling).
    """

    kind: str = "rect"
    oversampling: int = 4
    rolloff: float = 0.25
    span: int = 16

    def __post_init__(self):
        if self.kind not in ("rect", "rrc"):
            raise ConfigError(f"unknown pulse shape {self.kind!r}")
        if self.oversampling < 2:
            raise ConfigError("oversampling must be >= 2")
        if self.kind == "rrc":
            if not (0.0 <= self.rolloff <= 1.0):
                raise ConfigError("rolloff must lie in [0, 1]")
            if self.span < 1:
                raise ConfigError("span must be >= 1")

    def taps(self) -> np.ndarray:
        os = self.oversampling
        if self.kind == "rect":
            return np.ones(os)
        beta = self.rolloff
        t = np.arange(-self.span * os, self.span * os + 1) / os  # in symbols
        h = np.empty_like(t)
        if beta == 0.0:
            h = np.sinc(t)
        else:
            # limits of the root-raised-cosine impulse response
            tiny = 1e-9
            at_zero = np.abs(t) < tiny
            at_sing = np.abs(np.abs(t) - 1.0 / (4.0 * beta)) < tiny
            normal = ~(at_zero | at_sing)
            tn = t[normal]
            num = (np.sin(np.pi * tn * (1 - beta))
                   + 4 * beta * tn * np.cos(np.pi * tn * (1 + beta)))
            den = np.pi * tn * (1 - (4 * beta * tn) ** 2)
            h[normal] = num / den
            h[at_zero] = 1 - beta + 4 * beta / np.pi
            h[at_sing] = (beta / np.sqrt(2)) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
                + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta)))
        s = h.sum()
        if s == 0.0:
            raise ConfigError("pulse shape taps sum to zero")
        return h * (os / s)


def generate_tx(scheme: ModulationScheme, n: int) -> np.ndarray:
    """Draw a deterministic (n, 2) transmit symbol sequence for the scheme.

    All schemes hit the same total transmit power. The Gaussian schemes are
    i.i.d. draws with the target power in expectation; the amplitude-only
    scheme is rescaled to the power target exactly (the pre-scale variance
    of its Gaussian amplitudes is immaterial).
    """
    if n < 1:
        raise ShapeError("cannot generate an empty symbol sequence")
    rng = derive_rng(scheme.seed)
    p = scheme.power_per_pol
    if scheme.kind == "full_wavefield":
        x = rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))
        x *= np.sqrt(p / 2.0)
    elif scheme.kind == "dual_pol_phase":
        phase = rng.uniform(0.0, 2.0 * np.pi, (n, 2))
        x = np.sqrt(p) * np.exp(1j * phase)
    elif scheme.kind == "dual_pol_amplitude":
        amp = rng.standard_normal((n, 2))
        rms = np.sqrt(np.mean(amp**2, axis=0, keepdims=True))
        rms[rms == 0] = 1.0
        x = (amp / rms * np.sqrt(p)) * _AMPLITUDE_PHASE
    else:  # single_pol
        x = np.zeros((n, 2), dtype=np.complex128)
        g = rng.standard_normal((n, 2))
        x[:, 0] = (g[:, 0] + 1j * g[:, 1]) * np.sqrt(p)  # variance 2p
    return x.astype(np.complex128)


def receiver_projection(scheme: ModulationScheme, rx) -> np.ndarray:
    """Apply the scheme's receiver-side information discard to rx symbols.

    Identity for full_wavefield. Phase-only divides every nonzero symbol by
    its modulus. Amplitude-only keeps only the component along the transmit
    phase direction. Single-pol zeroes channel 2.
    """
    rx = as_dual_pol(rx)
    if scheme.kind == "full_wavefield":
        return rx.copy()
    if scheme.kind == "dual_pol_phase":
        mag = np.abs(rx)
        out = rx.copy()
        nz = mag > 0
        out[nz] = rx[nz] / mag[nz]
        return out
    if scheme.kind == "dual_pol_amplitude":
        coeff = np.real(rx * np.conj(_AMPLITUDE_PHASE))
        return coeff * _AMPLITUDE_PHASE
    out = rx.copy()
    out[:, 1] = 0.0
    return out


def pulse_shape(tx, shape: PulseShape) -> np.ndarray:
    """Expand (N, 2) symbols to an (N * oversampling, 2) complex waveform.

    Sample m carries time t = (m - (oversampling - 1) / 2) * T / oversampling,
    so each symbol's sample block is centered on its nominal time n*T; the
    homodyne front end relies on this alignment when integrating Doppler
    phasors over a symbol period.
    """
    tx = as_dual_pol(tx)
    os = shape.oversampling
    n = tx.shape[0]
    if shape.kind == "rect":
        return np.repeat(tx, os, axis=0)
    h = shape.taps()
    out = np.empty((n * os, 2), dtype=np.complex128)
    trim = shape.span * os
    for ch in range(2):
        full = upfirdn(h, tx[:, ch], up=os)
        out[:, ch] = full[trim:trim + n * os]
    return out
