"""
Estimators: naive and generalized matched filters, regularized joint
estimation of a per-pixel Jones field over (delay, Doppler) bins, and
depth / velocity / multi-surface extraction.

The joint estimator minimizes, per frame,

    sum_px sum_n || Y_n - sum_{d,v} J[d,v] X_{n-d} exp(j v n T) ||^2
        + lambda_sparse * sum_px sum_{d,v} ||J[d,v]||_F
        + lambda_tv * TV(||J||_F maps)

over complex Jones matrices J, one per (delay bin, Doppler bin) per pixel.
Optimization is a proximal variant of Adam: the smooth part (data term plus
TV) is handled by Adam moment updates on the real view of J (decay 0.9 /
0.999, stabilizer 1e-8), and the group-sparsity term by an exact
group-soft-threshold proximal step scaled by the per-group mean of the
effective Adam step size. Starting from the zero field this keeps groups
exactly zero whenever lambda_sparse exceeds the group threshold
||grad_data at 0||_F, and with lambda_sparse = 0 it reduces to plain Adam.

Stage 1 runs per pixel with the sparsity term only; stage 2 adds the TV
term and visits stochastic pixel batches together with their 4-neighbors
(both the sampled pixels and their neighbors are updated). Optimizer state
is reset at the stage boundary. All gradients are evaluated with FFT-based
convolution/correlation against the zero-padded transmit sequence, which
matches the direct evaluation in data_residual exactly.
"""

import os as _os
from dataclasses import dataclass, field as _field

import numpy as np
import scipy.fft as sfft

from .core import (ROLE_SOLVER, ConfigError, NoSurfaceError, ShapeError,
                   SolverError, SystemConfig, as_dual_pol, delay_to_depth,
                   depth_to_delay, derive_rng, doppler_bin_grid,
                   doppler_to_velocity)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _workers() -> int:
    try:
        return int(_os.environ.get("WAVELIDAR_THREADS", "") or -1)
    except ValueError:
        return -1


# ---------------------------------------------------------------------------
# Matched filtering
# ---------------------------------------------------------------------------

def _lag_correlations(tx, rx, delta_max: int) -> np.ndarray:
    """c[d, p, q] = sum_n conj(tx[n-d, p]) * rx[n, q] for d in [0, delta_max]."""
    tx = as_dual_pol(tx)
    rx = as_dual_pol(rx)
    n = tx.shape[0]
    if rx.shape[0] != n:
        raise ShapeError("tx and rx must have equal length")
    if not (0 <= delta_max < n):
        raise ShapeError(f"delta_max must lie in [0, {n}), got {delta_max}")
    nfft = sfft.next_fast_len(n + delta_max + 1)
    txf = sfft.fft(tx, n=nfft, axis=0, workers=_workers())
    rxf = sfft.fft(rx, n=nfft, axis=0, workers=_workers())
    prod = np.conj(txf)[:, :, None] * rxf[:, None, :]
    corr = sfft.ifft(prod, axis=0, workers=_workers())
    return corr[:delta_max + 1]


def matched_filter_naive(tx, rx, delta_max: int):
    """Same-channel correlation ranging.

    Returns (delta_star, profile) with
    profile[d] = sum_p |sum_n conj(tx[n-d, p]) rx[n, p]|^2; ties break
    toward the smallest delay.
    """
    corr = _lag_correlations(tx, rx, delta_max)
    profile = np.abs(corr[:, 0, 0]) ** 2 + np.abs(corr[:, 1, 1]) ** 2
    return int(np.argmax(profile)), profile


def matched_filter_generalized(tx, rx, delta_max: int):
    """Cross-polarization correlation ranging over all four channel pairs."""
    corr = _lag_correlations(tx, rx, delta_max)
    profile = np.sum(np.abs(corr) ** 2, axis=(1, 2))
    return int(np.argmax(profile)), profile


# ---------------------------------------------------------------------------
# Jones field container and solver parameters
# ---------------------------------------------------------------------------

@dataclass
class JonesField:
    """Per-pixel Jones matrices over (delay bin, Doppler bin).

    values has shape pixel_grid + (D, V, 2, 2) complex; delta_bins (D,) holds
    the integer delays of the bins (not necessarily contiguous: the solver
    grid is (delta_min, delta_max] plus any calibrated internal-reflection
    delays); nu_grid (V,) holds the Doppler grid in rad/s.
    """

    values: np.ndarray
    delta_bins: np.ndarray
    nu_grid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        self.delta_bins = np.asarray(self.delta_bins, dtype=np.int64)
        self.nu_grid = np.asarray(self.nu_grid, dtype=np.float64)
        d, v = len(self.delta_bins), len(self.nu_grid)
        if self.values.shape[-4:] != (d, v, 2, 2):
            raise ShapeError(f"values shape {self.values.shape} inconsistent with "
                             f"{d} delay bins and {v} Doppler bins")

    @property
    def pixel_grid(self) -> tuple:
        return self.values.shape[:-4]

    @property
    def delta_max(self) -> int:
        return int(self.delta_bins.max())

    def norm_maps(self) -> np.ndarray:
        """Frobenius norm per bin: shape pixel_grid + (D, V)."""
        return np.sqrt(np.sum(np.abs(self.values) ** 2, axis=(-2, -1)))

    def zero_like(self) -> "JonesField":
        return JonesField(np.zeros_like(self.values), self.delta_bins.copy(),
                          self.nu_grid.copy())


@dataclass(frozen=True)
class SolverParams:
    """Joint-estimation hyperparameters.

    Defaults follow the reference operating point: learning rate 1e-2,
    lambda_sparse 0.1 for static scenes (use 0.3 for dynamic scenes),
    lambda_tv 0.1, 50 stage-1 and 500 stage-2 iterations, 1024-pixel
    batches. delta_max None derives the bound from a 4 m maximum plausible
    scene distance (clamped to the frame length).
    """

    lambda_sparse: float = 0.1
    lambda_tv: float = 0.1
    learning_rate: float = 1e-2
    stage1_iters: int = 50
    stage2_iters: int = 500
    batch_pixels: int = 1024
    static_scene: bool = False
    tv_on_static_only: bool = True
    delta_max: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise ConfigError("iteration counts must be nonnegative")
        if self.batch_pixels < 1:
            raise ConfigError("batch_pixels must be >= 1")
        if self.lambda_sparse < 0 or self.lambda_tv < 0:
            raise ConfigError("regularizer weights must be nonnegative")


def solver_grid(cfg: SystemConfig, params: SolverParams):
    """(delta_bins, nu_grid) searched by the joint estimator.

    Delay bins cover (delta_min, delta_max] plus the calibrated internal
    reflection delays; the Doppler grid collapses to {0} for static scenes.
    """
    if params.delta_max is not None:
        dmax = int(params.delta_max)
    else:
        dmax = depth_to_delay(min(4.0, cfg.max_range), cfg)
    dmax = min(dmax, cfg.n_symbols - 1)
    if dmax <= cfg.delta_min:
        raise ConfigError(f"delta_max {dmax} leaves no bins above delta_min {cfg.delta_min}")
    bins = set(range(cfg.delta_min + 1, dmax + 1))
    bins.update(d for d in cfg.internal_reflection_delays if d < cfg.n_symbols)
    delta_bins = np.array(sorted(bins), dtype=np.int64)
    nu_grid = np.zeros(1) if params.static_scene else doppler_bin_grid(cfg)
    return delta_bins, nu_grid


def zero_field(pixel_grid, cfg: SystemConfig, params: SolverParams) -> JonesField:
    delta_bins, nu_grid = solver_grid(cfg, params)
    shape = tuple(pixel_grid) + (len(delta_bins), len(nu_grid), 2, 2)
    return JonesField(np.zeros(shape, dtype=np.complex128), delta_bins, nu_grid)


# ---------------------------------------------------------------------------
# Objective terms (direct reference evaluations)
# ---------------------------------------------------------------------------

def _pixel_values(field: JonesField, pixel):
    vals = field.values[pixel] if pixel is not None else field.values
    if vals.ndim != 4:
        raise ShapeError("pixel index does not select a single pixel")
    return vals


def data_residual(tx, rx, field: JonesField, pixel=None, cfg: SystemConfig = None) -> float:
    """Exact data term sum_n ||Y_n - model_n||^2 for one pixel."""
    tx = as_dual_pol(tx)
    rx = as_dual_pol(rx, tx.shape[0])
    model = _model_direct(tx, field, pixel, cfg)
    return float(np.sum(np.abs(rx - model) ** 2))


def _model_direct(tx, field: JonesField, pixel, cfg: SystemConfig) -> np.ndarray:
    if cfg is None:
        raise ConfigError("cfg is required to evaluate the Doppler phasor")
    tx = as_dual_pol(tx)
    n = tx.shape[0]
    vals = _pixel_values(field, pixel)
    t = np.arange(n) / cfg.symbol_rate
    model = np.zeros_like(tx)
    for di, d in enumerate(field.delta_bins):
        shifted = np.zeros_like(tx)
        shifted[d:] = tx[:n - d]
        for vi, nu in enumerate(field.nu_grid):
            term = shifted if nu == 0.0 else shifted * np.exp(1j * nu * t)[:, None]
            model += term @ vals[di, vi].T
    return model


def data_residual_grad(tx, rx, field: JonesField, pixel=None,
                       cfg: SystemConfig = None) -> np.ndarray:
    """Gradient of the data term with respect to the real and imaginary
    parts of J, packed as a complex (D, V, 2, 2) array:
    G = dL/d(Re J) + j dL/d(Im J) = -2 sum_n r_n conj(X_{n-d} e^{jvnT})^T.
    """
    tx = as_dual_pol(tx)
    rx = as_dual_pol(rx, tx.shape[0])
    if cfg is None:
        raise ConfigError("cfg is required to evaluate the Doppler phasor")
    n = tx.shape[0]
    r = rx - _model_direct(tx, field, pixel, cfg)
    t = np.arange(n) / cfg.symbol_rate
    vals = _pixel_values(field, pixel)
    grad = np.zeros_like(vals)
    for di, d in enumerate(field.delta_bins):
        shifted = np.zeros_like(tx)
        shifted[d:] = tx[:n - d]
        for vi, nu in enumerate(field.nu_grid):
            basis = shifted if nu == 0.0 else shifted * np.exp(1j * nu * t)[:, None]
            grad[di, vi] = -2.0 * (r.T @ np.conj(basis))
    return grad


def sparsity_penalty(field: JonesField) -> float:
    """Group-sparsity term: sum of Frobenius norms over all bins and pixels."""
    return float(np.sum(field.norm_maps()))


def sparsity_grad(field: JonesField) -> np.ndarray:
    """Subgradient of the sparsity term, J / ||J||_F per group (0 at zero)."""
    norms = field.norm_maps()[..., None, None]
    out = np.zeros_like(field.values)
    np.divide(field.values, norms, out=out, where=norms > 0)
    return out


def _tv_diffs(maps):
    # forward differences with replicate boundary (zero outward difference)
    dv = np.zeros_like(maps)
    dh = np.zeros_like(maps)
    dv[:-1] = maps[1:] - maps[:-1]
    dh[:, :-1] = maps[:, 1:] - maps[:, :-1]
    return dv, dh


def _static_slice(field: JonesField, static_only: bool):
    if not static_only:
        return slice(None)
    idx = np.nonzero(field.nu_grid == 0.0)[0]
    return idx if len(idx) else slice(0, 0)


def tv_penalty(field: JonesField, static_only: bool = True) -> float:
    """Isotropic total variation of the per-bin Frobenius norm maps over the
    pixel grid; by default only the zero-Doppler slices contribute."""
    if len(field.pixel_grid) != 2:
        raise ShapeError("tv_penalty requires an H x W pixel grid")
    maps = field.norm_maps()[:, :, :, _static_slice(field, static_only)]
    dv, dh = _tv_diffs(maps)
    return float(np.sum(np.sqrt(dv ** 2 + dh ** 2)))


def tv_grad_norm_maps(maps) -> np.ndarray:
    """d TV / d m for (H, W, ...) norm maps (forward differences, replicate
    boundary); degenerate zero-difference points use subgradient 0."""
    dv, dh = _tv_diffs(maps)
    e = np.sqrt(dv ** 2 + dh ** 2)
    inv = np.zeros_like(e)
    np.divide(1.0, e, out=inv, where=e > 0)
    g = -(dv + dh) * inv
    g[1:] += dv[:-1] * inv[:-1]
    g[:, 1:] += dh[:, :-1] * inv[:, :-1]
    return g


def tv_grad(field: JonesField, static_only: bool = True) -> np.ndarray:
    """Gradient of tv_penalty with respect to J (complex-packed), chaining
    through m = ||J||_F."""
    if len(field.pixel_grid) != 2:
        raise ShapeError("tv_grad requires an H x W pixel grid")
    sl = _static_slice(field, static_only)
    norms = field.norm_maps()
    gm = np.zeros_like(norms)
    gm[:, :, :, sl] = tv_grad_norm_maps(norms[:, :, :, sl])
    direction = np.zeros_like(field.values)
    np.divide(field.values, norms[..., None, None], out=direction,
              where=norms[..., None, None] > 0)
    return gm[..., None, None] * direction


# ---------------------------------------------------------------------------
# FFT frame model (shared by both solver stages)
# ---------------------------------------------------------------------------

class _FrameModel:
    """Batched FFT evaluation of the data term and its gradient.

    Correlations run against the zero-padded transmit sequence; the FFT
    length covers N + delta_max + 1 so linear (non-circular) shifts are
    exact, matching the channel's acquisition-window convention.
    """

    def __init__(self, tx, cfg: SystemConfig, delta_bins, nu_grid):
        tx = as_dual_pol(tx)
        self.n = tx.shape[0]
        self.delta_bins = np.asarray(delta_bins, dtype=np.int64)
        self.nu_grid = np.asarray(nu_grid, dtype=np.float64)
        if self.delta_bins.max() >= self.n:
            raise ConfigError("delay bins exceed the frame length")
        self.dspan = int(self.delta_bins.max()) + 1
        self.nfft = sfft.next_fast_len(self.n + self.dspan)
        t = np.arange(self.n) / cfg.symbol_rate
        xhat = np.empty((len(self.nu_grid), 2, self.nfft), dtype=np.complex128)
        for vi, nu in enumerate(self.nu_grid):
            mod = tx if nu == 0.0 else tx * np.exp(1j * nu * t)[:, None]
            xhat[vi] = sfft.fft(mod.T, n=self.nfft, axis=-1, workers=_workers())
        self.xhat = xhat
        # exp(j * nu * delta * T) reindexing phases, shape (V, D)
        self.delay_phase = np.exp(1j * np.outer(self.nu_grid,
                                                self.delta_bins / cfg.symbol_rate))

    def loss_resid_grad(self, values, rx):
        """values (P, D, V, 2, 2), rx (P, N, 2) -> (loss (P,), grad like values)."""
        p = values.shape[0]
        grad = np.empty_like(values)
        loss = np.empty(p)
        # chunk pixels to bound the (C, 2, 2, nfft) temporaries
        chunk = max(1, int(1.2e8 / (4 * self.nfft * 16 * 2)))
        for lo in range(0, p, chunk):
            hi = min(p, lo + chunk)
            loss[lo:hi], grad[lo:hi] = self._chunk(values[lo:hi], rx[lo:hi])
        return loss, grad

    def _chunk(self, values, rx):
        c = values.shape[0]
        w = _workers()
        mhat = np.zeros((c, 2, self.nfft), dtype=np.complex128)
        for vi in range(len(self.nu_grid)):
            kern = np.zeros((c, 2, 2, self.dspan), dtype=np.complex128)
            kern[..., self.delta_bins] = np.moveaxis(
                values[:, :, vi] * self.delay_phase[vi][None, :, None, None], 1, -1)
            khat = sfft.fft(kern, n=self.nfft, axis=-1, workers=w)
            mhat += np.einsum("cqpf,pf->cqf", khat, self.xhat[vi])
        model = sfft.ifft(mhat, axis=-1, workers=w)[..., :self.n]
        resid = np.moveaxis(rx, 1, 2) - model  # (C, 2, N)
        loss = np.sum(np.abs(resid) ** 2, axis=(1, 2))
        rhat = sfft.fft(resid, n=self.nfft, axis=-1, workers=w)
        grad = np.empty_like(values)
        for vi in range(len(self.nu_grid)):
            chat = rhat[:, :, None, :] * np.conj(self.xhat[vi])[None, None, :, :]
            corr = sfft.ifft(chat, axis=-1, workers=w)[..., self.delta_bins]
            grad[:, :, vi] = np.moveaxis(
                -2.0 * corr * np.conj(self.delay_phase[vi])[None, None, None, :], -1, 1)
        return loss, grad


# ---------------------------------------------------------------------------
# Proximal Adam solver
# ---------------------------------------------------------------------------

class _AdamState:
    def __init__(self, shape):
        self.m = np.zeros(shape, dtype=np.complex128)
        self.v = np.zeros(shape)
        self.t = np.zeros(shape[:1], dtype=np.int64)  # per-pixel step count


def _adam_prox_update(values, grad, state: _AdamState, rows, lr, lam_sparse):
    """Adam step plus an exact group-soft-threshold proximal step.

    Adam runs on the complex parameters with the second moment shared
    between the real and imaginary parts of each entry (v accumulates
    |g|^2), which keeps the whole trajectory equivariant under a global
    phase rotation of the data - the inherent ambiguity of coherent
    detection. Moment decays and the stabilizer are the standard 0.9 /
    0.999 / 1e-8.

    The sparsity term enters twice, with distinct roles: its subgradient
    J / ||J||_F (zero at zero groups) joins the smooth gradient and drives
    noise groups down at the Adam rate, while the proximal step zeroes
    groups exactly. The prox threshold per (2, 2) group is lambda * lr
    divided by the group's mean Adam denominator (a robust group step
    scale even when some entries receive no gradient); from a zero start
    this keeps a group at exactly zero whenever lambda exceeds its
    data-gradient Frobenius norm, since the norm bounds twice the mean
    entry magnitude.
    """
    if lam_sparse > 0.0:
        w0 = values[rows]
        norms = np.sqrt(np.sum(np.abs(w0) ** 2, axis=(-2, -1)))[..., None, None]
        sub = np.zeros_like(w0)
        np.divide(w0, norms, out=sub, where=norms > 0)
        grad = grad + lam_sparse * sub
    state.t[rows] += 1
    t = state.t[rows].reshape((-1,) + (1,) * (grad.ndim - 1))
    m = ADAM_BETA1 * state.m[rows] + (1 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * state.v[rows] + (1 - ADAM_BETA2) * np.abs(grad) ** 2
    state.m[rows] = m
    state.v[rows] = v
    mhat = m / (1.0 - ADAM_BETA1 ** t)
    vhat = v / (1.0 - ADAM_BETA2 ** t)
    denom = np.sqrt(vhat) + ADAM_EPS
    w = values[rows] - lr * mhat / denom
    if lam_sparse > 0.0:
        tau = lam_sparse * lr / np.mean(denom, axis=(-2, -1))
        wnorm = np.sqrt(np.sum(np.abs(w) ** 2, axis=(-2, -1)))
        scale = np.zeros_like(wnorm)
        np.divide(tau, wnorm, out=scale, where=wnorm > 0)
        w *= np.maximum(0.0, 1.0 - scale)[..., None, None]
    values[rows] = w


def _neighbors_union(batch, grid_shape):
    """Batch pixels plus their 4-neighborhoods, as sorted flat indices."""
    h, w = grid_shape
    i, j = np.unravel_index(batch, grid_shape)
    ii = np.concatenate([i, np.clip(i - 1, 0, h - 1), np.clip(i + 1, 0, h - 1), i, i])
    jj = np.concatenate([j, j, j, np.clip(j - 1, 0, w - 1), np.clip(j + 1, 0, w - 1)])
    return np.unique(np.ravel_multi_index((ii, jj), grid_shape))


def _check_finite(loss, rows, iteration, grid_shape):
    bad = ~np.isfinite(loss)
    if np.any(bad):
        flat = int(rows[np.argmax(bad)])
        pixel = np.unravel_index(flat, grid_shape) if len(grid_shape) == 2 else flat
        raise SolverError(f"non-finite loss at iteration {iteration}, pixel {pixel}")


def _flatten_frame(rx_frame):
    rx = np.asarray(rx_frame)
    if not np.iscomplexobj(rx):
        rx = rx.astype(np.complex128)
    if rx.ndim == 2:
        rx = rx[None]
    if rx.ndim == 3:
        grid = (rx.shape[0],)
    elif rx.ndim == 4:
        grid = rx.shape[:2]
    else:
        raise ShapeError(f"rx_frame must be (N,2), (P,N,2) or (H,W,N,2), got {rx.shape}")
    return rx.reshape((-1,) + rx.shape[-2:]), grid


def solve_stage1(tx, rx_frame, cfg: SystemConfig, params: SolverParams,
                 init: JonesField | None = None) -> JonesField:
    """Per-pixel joint estimation with the sparsity regularizer only.

    Every pixel is updated at every iteration (full-frame gradients, no
    symbol subsampling), starting from the zero field unless an initial
    field is supplied.
    """
    if params.stage1_iters < 1:
        raise ConfigError("stage1_iters must be >= 1")
    tx = as_dual_pol(tx)
    rx, grid = _flatten_frame(rx_frame)
    field = zero_field(grid, cfg, params) if init is None else init
    values = field.values.reshape((-1,) + field.values.shape[-4:]).copy()
    model = _FrameModel(tx, cfg, field.delta_bins, field.nu_grid)
    state = _AdamState(values.shape)
    rows = np.arange(values.shape[0])
    for it in range(params.stage1_iters):
        loss, grad = model.loss_resid_grad(values, rx)
        _check_finite(loss, rows, it, grid)
        _adam_prox_update(values, grad, state, rows, params.learning_rate,
                          params.lambda_sparse)
    out_shape = tuple(grid) + field.values.shape[-4:]
    return JonesField(values.reshape(out_shape), field.delta_bins, field.nu_grid)


def solve_stage2(stage1_field: JonesField, tx, rx_frame, cfg: SystemConfig,
                 params: SolverParams) -> JonesField:
    """Continue optimization with the TV term on stochastic pixel batches.

    Each iteration samples batch_pixels pixels uniformly without
    replacement; the sampled pixels and their 4-neighbors are updated (the
    TV stencil reads the full current field). Deterministic in params.seed.
    Optimizer state is fresh (not carried over from stage 1).
    """
    tx = as_dual_pol(tx)
    rx, grid = _flatten_frame(rx_frame)
    if len(grid) != 2 and params.lambda_tv > 0.0:
        raise ShapeError("stage 2 with TV requires an H x W pixel grid")
    field = JonesField(stage1_field.values.copy(), stage1_field.delta_bins,
                       stage1_field.nu_grid)
    values = field.values.reshape((-1,) + field.values.shape[-4:])
    n_px = values.shape[0]
    model = _FrameModel(tx, cfg, field.delta_bins, field.nu_grid)
    state = _AdamState(values.shape)
    rng = derive_rng(params.seed, ROLE_SOLVER)
    batch = min(params.batch_pixels, n_px)
    sl = _static_slice(field, params.tv_on_static_only)
    for it in range(params.stage2_iters):
        chosen = rng.choice(n_px, size=batch, replace=False)
        rows = (_neighbors_union(chosen, grid) if len(grid) == 2
                else np.unique(chosen))
        loss, grad = model.loss_resid_grad(values[rows], rx[rows])
        _check_finite(loss, rows, it, grid)
        if params.lambda_tv > 0.0:
            norms = np.sqrt(np.sum(np.abs(values) ** 2, axis=(-2, -1)))
            norms = norms.reshape(grid + norms.shape[1:])
            gm = np.zeros_like(norms)
            gm[:, :, :, sl] = tv_grad_norm_maps(norms[:, :, :, sl])
            gm = gm.reshape((n_px,) + gm.shape[2:])[rows]
            nr = np.sqrt(np.sum(np.abs(values[rows]) ** 2, axis=(-2, -1)))
            direction = np.zeros_like(values[rows])
            np.divide(values[rows], nr[..., None, None], out=direction,
                      where=nr[..., None, None] > 0)
            grad = grad + params.lambda_tv * gm[..., None, None] * direction
        _adam_prox_update(values, grad, state, rows, params.learning_rate,
                          params.lambda_sparse)
    return field


def solve_joint(tx, rx_frame, cfg: SystemConfig, params: SolverParams) -> JonesField:
    """Stage 1 followed by stage 2 (stage 2 skipped when its iteration count
    or the TV weight is zero)."""
    field = solve_stage1(tx, rx_frame, cfg, params)
    if params.stage2_iters > 0 and params.lambda_tv > 0.0:
        field = solve_stage2(field, tx, rx_frame, cfg, params)
    return field


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Extraction:
    """Strongest echo estimate for one pixel, plus ranked runners-up."""

    delta_star: int
    nu_star: float
    jones_star: np.ndarray
    secondary: tuple = ()


@dataclass
class ExtractionMap:
    """Top-k extraction over a pixel grid.

    Arrays have shape pixel_grid + (k,); slot 0 is the primary surface.
    """

    delta: np.ndarray
    nu: np.ndarray
    depth: np.ndarray
    velocity: np.ndarray
    frob: np.ndarray
    jones: np.ndarray

    @property
    def pixel_grid(self) -> tuple:
        return self.delta.shape[:-1]

    @property
    def k(self) -> int:
        return self.delta.shape[-1]

    def at(self, *pixel) -> Extraction:
        idx = pixel if len(pixel) > 1 else pixel[0]
        secondary = tuple(
            (int(self.delta[idx][i]), float(self.nu[idx][i]), self.jones[idx][i])
            for i in range(1, self.k))
        return Extraction(delta_star=int(self.delta[idx][0]),
                          nu_star=float(self.nu[idx][0]),
                          jones_star=self.jones[idx][0],
                          secondary=secondary)


def extract(field: JonesField, cfg: SystemConfig, k: int = 1) -> ExtractionMap:
    """Top-k (delay, Doppler) bins per pixel by Jones Frobenius norm.

    Bins at or below delta_min and bins at calibrated internal-reflection
    delays are masked. Ties break toward the smaller delay, then the
    smaller |nu|, then negative nu.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    masked = (field.delta_bins <= cfg.delta_min) | np.isin(
        field.delta_bins, np.asarray(cfg.internal_reflection_delays, dtype=np.int64))
    if np.all(masked):
        raise NoSurfaceError("every delay bin is masked by delta_min / internal delays")
    grid = field.pixel_grid
    d, v = len(field.delta_bins), len(field.nu_grid)
    norms = field.norm_maps().reshape(-1, d, v)
    norms[:, masked, :] = -1.0  # below any admissible norm
    delta_flat = np.repeat(field.delta_bins, v)
    nu_flat = np.tile(field.nu_grid, d)
    order_keys = (nu_flat, np.abs(nu_flat), delta_flat)
    n_px = norms.shape[0]
    out_delta = np.empty((n_px, k), dtype=np.int64)
    out_nu = np.empty((n_px, k))
    out_frob = np.empty((n_px, k))
    out_jones = np.empty((n_px, k, 2, 2), dtype=np.complex128)
    vals = field.values.reshape(-1, d, v, 2, 2)
    for px in range(n_px):
        flat = norms[px].ravel()
        order = np.lexsort(order_keys + (-flat,))[:k]
        di, vi = np.unravel_index(order, (d, v))
        out_delta[px] = field.delta_bins[di]
        out_nu[px] = field.nu_grid[vi]
        out_frob[px] = flat[order]
        out_jones[px] = vals[px, di, vi]
    depth = delay_to_depth(out_delta, cfg)
    velocity = doppler_to_velocity(out_nu, cfg)
    shape = tuple(grid) + (k,)
    return ExtractionMap(delta=out_delta.reshape(shape), nu=out_nu.reshape(shape),
                         depth=np.asarray(depth).reshape(shape),
                         velocity=np.asarray(velocity).reshape(shape),
                         frob=out_frob.reshape(shape),
                         jones=out_jones.reshape(shape + (2, 2)))
