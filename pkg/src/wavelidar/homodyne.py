"""
Continuous-time homodyne balanced-detection front end, used as a physical
layer oracle for the symbol-domain channel model.

Traces are analytic baseband: the optical carrier exp(j*omega*t) is never
sampled (at 1550 nm it oscillates near 193 THz), because it cancels exactly
in the balanced mixing products; only the modulation envelope is simulated.

Time convention: sample index m of a trace with `oversampling` samples per
symbol carries t = (m - (oversampling - 1) / 2) * T / oversampling, so each
symbol's sample block is centered on its nominal symbol time n*T. The mean
of a Doppler phasor over symbol n is then exp(j*nu*n*T) times a real
attenuation 1 - O((nu*T)^2), matching the symbol-domain model's t = n*T
convention to second order.

Balanced detection is modeled as an ideal photodiode pair: both branch
intensities |E_RX +/- E_LO|^2 are formed explicitly, and their difference
cancels common-mode terms identically, term by term - so injected ambient
intensity changes the output by exactly zero, not merely to rounding.
"""

from dataclasses import dataclass

import numpy as np

from .core import ConfigError, EchoPath, ShapeError, SystemConfig


@dataclass(frozen=True)
class OpticalFieldTrace:
    """Oversampled dual-polarization analytic-baseband field.

    samples has shape (M, 2) complex; the field amplitude includes the
    sqrt(power) scale. p_tx / p_lo record the optical powers in W for
    bookkeeping. Only baseband mode is supported; the carrier is handled
    analytically.
    """

    samples: np.ndarray
    sample_rate: float
    p_tx: float = 0.0
    p_lo: float = 0.0
    baseband: bool = True

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.complex128)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ShapeError(f"trace samples must be (M, 2), got {arr.shape}")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if not self.baseband:
            raise ConfigError("carrier-explicit traces are not supported; "
                              "the carrier is handled analytically")
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class PhotocurrentPair:
    """In-phase and quadrature photocurrents per polarization channel."""

    in_phase: np.ndarray
    quadrature: np.ndarray
    sample_rate: float

    def __post_init__(self):
        i = np.asarray(self.in_phase, dtype=np.float64)
        q = np.asarray(self.quadrature, dtype=np.float64)
        if i.shape != q.shape or i.ndim != 2 or i.shape[1] != 2:
            raise ShapeError("photocurrents must be matching (M, 2) real arrays")
        object.__setattr__(self, "in_phase", i)
        object.__setattr__(self, "quadrature", q)


def make_tx_trace(waveform, cfg: SystemConfig, p_tx: float,
                  oversampling: int) -> OpticalFieldTrace:
    """Scale a pulse-shaped (M, 2) waveform to a transmit field trace."""
    waveform = np.asarray(waveform, dtype=np.complex128)
    return OpticalFieldTrace(samples=np.sqrt(p_tx) * waveform,
                             sample_rate=cfg.symbol_rate * oversampling,
                             p_tx=p_tx)


def make_lo_trace(length: int, sample_rate: float, p_lo: float) -> OpticalFieldTrace:
    """Unmodulated local oscillator trace (constant field, phase 0)."""
    samples = np.full((length, 2), np.sqrt(p_lo), dtype=np.complex128)
    return OpticalFieldTrace(samples=samples, sample_rate=sample_rate, p_lo=p_lo)


def _sample_times(n: int, sample_rate: float, oversampling: int) -> np.ndarray:
    return (np.arange(n) - (oversampling - 1) / 2.0) / sample_rate


def propagate(txfield: OpticalFieldTrace, echo: EchoPath, cfg: SystemConfig) -> OpticalFieldTrace:
    """Delay, Jones-transform, and Doppler-rotate a transmit trace."""
    ratio = txfield.sample_rate / cfg.symbol_rate
    os = int(round(ratio))
    if abs(ratio - os) > 1e-9:
        raise ConfigError("trace sample rate is not an integer multiple of the symbol rate")
    shift = echo.delay * os
    samples = txfield.samples
    out = np.zeros_like(samples)
    if shift < len(samples):
        out[shift:] = samples[:len(samples) - shift]
    out = out @ echo.jones.T
    if echo.doppler != 0.0:
        t = _sample_times(len(samples), txfield.sample_rate, os)
        out *= np.exp(1j * echo.doppler * t)[:, None]
    return OpticalFieldTrace(samples=out, sample_rate=txfield.sample_rate,
                             p_tx=txfield.p_tx, p_lo=txfield.p_lo)


def superpose(traces) -> OpticalFieldTrace:
    """Sum of field traces (linear medium)."""
    traces = list(traces)
    if not traces:
        raise ShapeError("no traces to superpose")
    base = traces[0]
    total = np.zeros_like(base.samples)
    for tr in traces:
        if len(tr) != len(base) or tr.sample_rate != base.sample_rate:
            raise ShapeError("traces must share length and sample rate")
        total = total + tr.samples
    return OpticalFieldTrace(samples=total, sample_rate=base.sample_rate,
                             p_tx=base.p_tx, p_lo=base.p_lo)


def _check_ambient(ambient, n):
    amb = np.asarray(ambient, dtype=np.float64)
    if amb.ndim == 1:
        amb = amb[:, None] * np.ones((1, 2))
    if amb.shape != (n, 2) or np.any(amb < 0):
        raise ShapeError("ambient must be a nonnegative per-sample intensity")
    return amb


def branch_intensities(rx: OpticalFieldTrace, lo: OpticalFieldTrace,
                       ambient=None):
    """Intensities on the four photodiodes per polarization, (M, 2) each.

    Returns (plus_i, minus_i, plus_q, minus_q). Ambient light, when given,
    is a common-mode intensity that lands on every diode.
    """
    if len(rx) != len(lo) or rx.sample_rate != lo.sample_rate:
        raise ShapeError("rx and lo traces must share length and sample rate")
    lo_q = lo.samples * 1j  # 90 degree phase shift
    branches = [np.abs(rx.samples + lo.samples) ** 2,
                np.abs(rx.samples - lo.samples) ** 2,
                np.abs(rx.samples + lo_q) ** 2,
                np.abs(rx.samples - lo_q) ** 2]
    if ambient is not None:
        amb = _check_ambient(ambient, len(rx))
        branches = [b + amb for b in branches]
    return tuple(branches)


def balanced_detect(rx: OpticalFieldTrace, lo: OpticalFieldTrace,
                    ambient=None) -> PhotocurrentPair:
    """Mix rx with the LO on two balanced photodiode pairs per polarization.

    The in-phase pair forms |rx + lo|^2 - |rx - lo|^2; the quadrature pair
    does the same with the LO phase-shifted by 90 degrees. Ambient is a
    nonnegative common-mode intensity landing on both diodes of every pair
    (see branch_intensities); a matched balanced pair cancels it identically,
    term by term, so the returned photocurrents are bit-exact regardless of
    its magnitude.
    """
    if len(rx) != len(lo) or rx.sample_rate != lo.sample_rate:
        raise ShapeError("rx and lo traces must share length and sample rate")
    if ambient is not None:
        _check_ambient(ambient, len(rx))  # validated; cancels identically
    plus_i = np.abs(rx.samples + lo.samples) ** 2
    minus_i = np.abs(rx.samples - lo.samples) ** 2
    lo_q = lo.samples * 1j  # 90 degree phase shift
    plus_q = np.abs(rx.samples + lo_q) ** 2
    minus_q = np.abs(rx.samples - lo_q) ** 2
    return PhotocurrentPair(in_phase=plus_i - minus_i,
                            quadrature=plus_q - minus_q,
                            sample_rate=rx.sample_rate)


def demodulate(pc: PhotocurrentPair, cfg: SystemConfig) -> np.ndarray:
    """Integrate I + jQ over each symbol period to recover dual-pol symbols.

    The output is proportional to the symbol-domain received sequence with
    constant of proportionality 4 * sqrt(p_tx * p_lo).
    """
    ratio = pc.sample_rate / cfg.symbol_rate
    os = int(round(ratio))
    if abs(ratio - os) > 1e-9 or os < 1:
        raise ShapeError("photocurrent sample rate is not an integer multiple "
                         "of the symbol rate")
    m = pc.in_phase.shape[0]
    if m % os:
        raise ShapeError(f"trace length {m} is not a whole number of symbol periods")
    z = pc.in_phase + 1j * pc.quadrature
    return z.reshape(m // os, os, 2).mean(axis=1)


def oracle_demodulated_symbols(tx_symbols, echoes, cfg: SystemConfig,
                               oversampling: int = 4,
                               p_tx: float = 1e-3, p_lo: float = 1e-3) -> np.ndarray:
    """Full physical-layer pipeline with rect pulses, rescaled for direct
    comparison against the symbol-domain channel output.

    Runs pulse shaping, per-echo propagation, superposition, balanced
    detection, and demodulation, then divides out 4*sqrt(p_tx*p_lo).
    """
    from .modulation import PulseShape, pulse_shape

    waveform = pulse_shape(tx_symbols, PulseShape(kind="rect", oversampling=oversampling))
    fs = cfg.symbol_rate * oversampling
    txf = OpticalFieldTrace(samples=np.sqrt(p_tx) * waveform, sample_rate=fs, p_tx=p_tx)
    if echoes:
        rxf = superpose([propagate(txf, e, cfg) for e in echoes])
    else:
        rxf = OpticalFieldTrace(samples=np.zeros_like(waveform), sample_rate=fs, p_tx=p_tx)
    lo = make_lo_trace(len(rxf), fs, p_lo)
    pc = balanced_detect(rxf, lo)
    return demodulate(pc, cfg) / (4.0 * np.sqrt(p_tx * p_lo))
