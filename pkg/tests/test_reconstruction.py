import dataclasses

import numpy as np
import pytest
import scipy.stats

from wavelidar import (ChannelRealization, EchoPath, ModulationScheme,
                       NoiseModel, NoSurfaceError, SolverParams, SpeckleModel,
                       SystemConfig, apply_channel, data_residual,
                       data_residual_grad, derive_rng, doppler_bin_grid,
                       extract, generate_tx, matched_filter_generalized,
                       matched_filter_naive, sample_jones, solve_stage1,
                       solve_stage2, sparsity_grad, sparsity_penalty,
                       tv_grad, tv_penalty, zero_field)
from wavelidar.reconstruction import JonesField, _FrameModel
from util import ambiguity_scan, central_difference

CFG = SystemConfig(n_symbols=1024, max_abs_velocity=1500.0)
TX = generate_tx(ModulationScheme(seed=2), 1024)
GRID = doppler_bin_grid(CFG)


def _echo(delay, nu_bins, seed, kind="fully_scrambling", reflectance=0.8):
    nu = float(GRID[len(GRID) // 2 + nu_bins])
    jones = sample_jones(SpeckleModel(kind=kind, mean_reflectance=reflectance,
                                      seed=seed))
    return EchoPath(delay, nu, jones)


def _rx(echoes, sigma=0.0, seed=0):
    return apply_channel(TX, ChannelRealization(echoes=echoes,
                                                noise=NoiseModel(sigma, seed)), CFG)


# ---------------------------------------------------------------------------
# Matched filters
# ---------------------------------------------------------------------------

def test_naive_filter_recovers_identity_jones_echo():
    rx = _rx([EchoPath(17, 0.0, np.eye(2))])
    delta, profile = matched_filter_naive(TX, rx, 64)
    assert delta == 17
    assert profile.shape == (65,)


def test_naive_filter_fails_on_cross_polarized_echo():
    # a pure polarization swap has no same-channel correlation at the true lag
    swap = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    rx = _rx([EchoPath(17, 0.0, swap)])
    _, profile = matched_filter_naive(TX, rx, 64)
    off = np.delete(profile, 17)
    assert profile[17] < 10 * np.median(off)  # at the noise level


def test_generalized_filter_recovers_cross_polarized_echo():
    swap = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    rx = _rx([EchoPath(17, 0.0, swap)])
    delta, profile = matched_filter_generalized(TX, rx, 64)
    assert delta == 17
    assert profile[17] > 50 * np.median(np.delete(profile, 17))


def test_generalized_score_dominates_naive_at_true_lag():
    for seed in range(5):
        rx = _rx([_echo(23, 0, seed)])
        _, naive = matched_filter_naive(TX, rx, 40)
        _, gen = matched_filter_generalized(TX, rx, 40)
        assert gen[23] >= naive[23]


def test_filter_profiles_match_brute_force_scan():
    rx = _rx([_echo(11, 0, 3)], sigma=0.2, seed=1)
    _, gen = matched_filter_generalized(TX, rx, 32)
    brute = ambiguity_scan(TX, rx, range(33), [0.0], CFG.symbol_rate)[:, 0]
    np.testing.assert_allclose(gen, brute, rtol=1e-10)
    _, naive = matched_filter_naive(TX, rx, 32)
    assert np.all(naive <= gen + 1e-9)


def test_matched_filter_null_distribution():
    # pure-noise profiles: lags exceeding 5x the median should occur no more
    # often than the chi-square tail probability predicts
    delta_max = 499
    exceed = total = 0
    p_sum = 0.0
    for seed in range(20):
        rng = derive_rng(seed, 77)
        noise = (rng.standard_normal((1024, 2)) + 1j * rng.standard_normal((1024, 2)))
        _, profile = matched_filter_naive(TX, noise, delta_max)
        med = np.median(profile)
        exceed += int(np.sum(profile > 5 * med))
        total += profile.size
        # naive score is a sum of two |CN|^2 terms: chi2 with 4 dof
        scale = med / scipy.stats.chi2.median(4)
        p_sum += scipy.stats.chi2.sf(5 * med / scale, 4) * profile.size
    p_chance = p_sum / total
    sigma = np.sqrt(p_chance * (1 - p_chance) / total)
    assert exceed / total < p_chance + 4 * sigma + 1e-4


def test_doppler_shift_attenuates_matched_filter_peak():
    # off-band Doppler suppresses the correlation peak roughly like the
    # magnitude of the mean phasor sum (a sinc in nu*N*T)
    jones = sample_jones(SpeckleModel(seed=12, mean_reflectance=1.0))
    rx0 = _rx([EchoPath(17, 0.0, jones)])
    _, p0 = matched_filter_generalized(TX, rx0, 32)
    nu = float(GRID[len(GRID) // 2 + 10])
    rx1 = _rx([EchoPath(17, nu, jones)])
    _, p1 = matched_filter_generalized(TX, rx1, 32)
    n = CFG.n_symbols
    t = np.arange(n) / CFG.symbol_rate
    atten = np.abs(np.mean(np.exp(1j * nu * t))) ** 2
    ratio = p1[17] / p0[17]
    assert ratio < 0.05  # ten bins off: strongly attenuated
    assert ratio == pytest.approx(atten, rel=0.5, abs=5e-3)


def test_scale_equivariance_of_filters():
    rx = _rx([_echo(9, 1, 5)], sigma=0.1, seed=2)
    d1, p1 = matched_filter_generalized(TX, rx, 32)
    d2, p2 = matched_filter_generalized(TX, 3.0 * rx, 32)
    assert d1 == d2
    np.testing.assert_allclose(p2, 9.0 * p1, rtol=1e-10)


# ---------------------------------------------------------------------------
# Objective terms
# ---------------------------------------------------------------------------

def _small_field(seed=0, pixels=(), d=6, v=3, fill="random"):
    params = SolverParams(delta_max=d, static_scene=(v == 1))
    cfg = SystemConfig(n_symbols=256, max_abs_velocity=1500.0)
    delta_bins = np.arange(1, d + 1)
    if v == 1:
        nu_grid = np.zeros(1)
    else:
        full = doppler_bin_grid(SystemConfig(n_symbols=256, max_abs_velocity=5000.0))
        mid = len(full) // 2
        nu_grid = full[mid - (v // 2): mid + (v + 1) // 2]
    shape = tuple(pixels) + (len(delta_bins), len(nu_grid), 2, 2)
    rng = derive_rng(seed, 99)
    if fill == "random":
        values = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    else:
        values = np.zeros(shape, dtype=complex)
    return JonesField(values, delta_bins, nu_grid), cfg, params


def test_data_residual_ground_truth_and_zero_field():
    params = SolverParams(delta_max=32, static_scene=False)
    field = zero_field((1,), CFG, params)
    echo = _echo(17, 2, 31)
    rx = _rx([echo])
    # zero field: residual equals the received energy
    assert data_residual(TX, rx, field, pixel=0, cfg=CFG) == pytest.approx(
        float(np.sum(np.abs(rx) ** 2)))
    # one-hot ground truth: residual is zero (model realizability)
    di = list(field.delta_bins).index(17)
    vi = list(field.nu_grid).index(echo.doppler)
    field.values[0, di, vi] = echo.jones
    assert data_residual(TX, rx, field, pixel=0, cfg=CFG) < 1e-18 * np.sum(np.abs(rx) ** 2)


def test_data_residual_quadratic_in_perturbation():
    params = SolverParams(delta_max=16, static_scene=True)
    field = zero_field((1,), CFG, params)
    echo = EchoPath(7, 0.0, sample_jones(SpeckleModel(seed=8)))
    rx = _rx([echo])
    di = list(field.delta_bins).index(7)
    field.values[0, di, 0] = echo.jones
    direction = sample_jones(SpeckleModel(seed=9))
    eps_values = np.array([1e-3, 2e-3, 4e-3])
    residuals = []
    for eps in eps_values:
        perturbed = JonesField(field.values.copy(), field.delta_bins, field.nu_grid)
        perturbed.values[0, di, 0] += eps * direction
        residuals.append(data_residual(TX, rx, perturbed, pixel=0, cfg=CFG))
    ratios = np.array(residuals) / eps_values**2
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-6)


def test_sparsity_penalty_values_and_convexity():
    field, _, _ = _small_field(fill="zero")
    assert sparsity_penalty(field) == 0.0
    field.values[..., 0, 0, :, :] = np.eye(2)
    assert sparsity_penalty(field) == pytest.approx(np.sqrt(2.0))
    a, _, _ = _small_field(seed=1)
    b, _, _ = _small_field(seed=2)
    summed = JonesField(a.values + b.values, a.delta_bins, a.nu_grid)
    assert sparsity_penalty(summed) <= sparsity_penalty(a) + sparsity_penalty(b) + 1e-12


def test_tv_penalty_hand_values():
    field, _, _ = _small_field(pixels=(4, 5), fill="zero", v=1)
    assert tv_penalty(field) == 0.0
    # unit-norm impulse at an interior pixel: own term sqrt(1+1), plus one
    # vertical and one horizontal neighbor difference of 1 each
    field.values[2, 2, 0, 0] = np.eye(2) / np.sqrt(2.0)
    assert tv_penalty(field) == pytest.approx(2.0 + np.sqrt(2.0), rel=1e-12)


def test_tv_invariant_to_global_phase():
    field, _, _ = _small_field(pixels=(3, 3), v=1)
    rotated = JonesField(field.values * np.exp(0.7j), field.delta_bins, field.nu_grid)
    assert tv_penalty(rotated) == pytest.approx(tv_penalty(field), rel=1e-12)


def test_tv_static_only_ignores_moving_slices():
    field, _, _ = _small_field(pixels=(3, 3), v=3, fill="zero")
    vi_zero = list(field.nu_grid).index(0.0)
    vi_move = (vi_zero + 1) % len(field.nu_grid)
    field.values[1, 1, 2, vi_move] = np.eye(2)
    assert tv_penalty(field, static_only=True) == 0.0
    assert tv_penalty(field, static_only=False) > 0.0


# ---------------------------------------------------------------------------
# Gradient checks
# ---------------------------------------------------------------------------

def test_data_gradient_matches_finite_differences():
    cfg = SystemConfig(n_symbols=128, max_abs_velocity=4000.0)
    tx = generate_tx(ModulationScheme(seed=4), 128)
    params = SolverParams(delta_max=5, static_scene=False)
    field = zero_field((1,), cfg, params)
    rng = derive_rng(5, 1)
    field.values[:] = (rng.standard_normal(field.values.shape)
                       + 1j * rng.standard_normal(field.values.shape)) * 0.3
    rx = apply_channel(tx, ChannelRealization(
        echoes=[EchoPath(3, 0.0, sample_jones(SpeckleModel(seed=1)))],
        noise=NoiseModel(0.2, 3)), cfg)
    analytic = data_residual_grad(tx, rx, field, pixel=0, cfg=cfg)

    def fun(vals):
        f = JonesField(vals.reshape(field.values.shape), field.delta_bins, field.nu_grid)
        return data_residual(tx, rx, f, pixel=0, cfg=cfg)

    numeric = central_difference(fun, field.values.copy(), eps=1e-6)
    np.testing.assert_allclose(analytic, numeric[0], rtol=1e-5, atol=1e-7)


def test_fft_model_matches_direct_gradient():
    params = SolverParams(delta_max=24, static_scene=False)
    field = zero_field((1,), CFG, params)
    rng = derive_rng(6, 1)
    field.values[:] = rng.standard_normal(field.values.shape) * (0.1 + 0.2j)
    rx = _rx([_echo(11, -1, 2)], sigma=0.1, seed=5)
    model = _FrameModel(TX, CFG, field.delta_bins, field.nu_grid)
    loss, grad = model.loss_resid_grad(
        field.values.reshape((1,) + field.values.shape[-4:]), rx[None])
    assert loss[0] == pytest.approx(data_residual(TX, rx, field, pixel=0, cfg=CFG),
                                    rel=1e-12)
    np.testing.assert_allclose(grad[0],
                               data_residual_grad(TX, rx, field, pixel=0, cfg=CFG),
                               rtol=1e-10)


def test_sparsity_gradient_matches_finite_differences():
    field, _, _ = _small_field(seed=3)
    analytic = sparsity_grad(field)

    def fun(vals):
        return sparsity_penalty(JonesField(vals, field.delta_bins, field.nu_grid))

    numeric = central_difference(fun, field.values.copy(), eps=1e-7)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


def test_tv_gradient_matches_finite_differences():
    field, _, _ = _small_field(seed=4, pixels=(3, 4), v=1)

    def fun(vals):
        return tv_penalty(JonesField(vals, field.delta_bins, field.nu_grid))

    numeric = central_difference(fun, field.values.copy(), eps=1e-7)
    np.testing.assert_allclose(tv_grad(field), numeric, rtol=1e-5, atol=1e-8)


# ---------------------------------------------------------------------------
# Solver stages
# ---------------------------------------------------------------------------

def test_stage1_zero_frame_is_fixed_point():
    params = SolverParams(delta_max=16, static_scene=True, stage1_iters=10)
    rx = np.zeros((1, 1024, 2), dtype=complex)
    field = solve_stage1(TX, rx, CFG, params)
    assert not np.any(field.values)


def test_stage1_recovers_single_echo_bin_unregularized():
    params = SolverParams(delta_max=48, static_scene=True, stage1_iters=50,
                          lambda_sparse=0.0)
    rx = _rx([EchoPath(17, 0.0, sample_jones(SpeckleModel(seed=7)))])
    field = solve_stage1(TX, rx[None], CFG, params)
    norms = field.norm_maps()[0]
    best = np.unravel_index(np.argmax(norms), norms.shape)
    assert field.delta_bins[best[0]] == 17


def test_stage1_recovers_delay_and_doppler_bin():
    params = SolverParams(delta_max=48, static_scene=False, stage1_iters=150,
                          lambda_sparse=0.3)
    echo = _echo(17, 4, 7)
    rx = _rx([echo])
    field = solve_stage1(TX, rx[None], CFG, params)
    norms = field.norm_maps()[0]
    best = np.unravel_index(np.argmax(norms), norms.shape)
    assert field.delta_bins[best[0]] == 17
    assert field.nu_grid[best[1]] == pytest.approx(echo.doppler)
    # independent oracle agrees: brute-force correlation scan over the grid
    scan = ambiguity_scan(TX, rx, field.delta_bins, field.nu_grid, CFG.symbol_rate)
    assert np.unravel_index(np.argmax(scan), scan.shape) == best


def test_stage1_shrinks_to_exact_zero_above_group_threshold():
    params = SolverParams(delta_max=24, static_scene=True, stage1_iters=25)
    rx = _rx([_echo(9, 0, 11)], sigma=0.05, seed=8)
    base = zero_field((1,), CFG, params)
    g0 = data_residual_grad(TX, rx, base, pixel=0, cfg=CFG)
    bound = float(np.max(np.sqrt(np.sum(np.abs(g0) ** 2, axis=(-2, -1)))))
    shrink = dataclasses.replace(params, lambda_sparse=bound * 1.05)
    field = solve_stage1(TX, rx[None], CFG, shrink)
    assert not np.any(field.values)
    # and below the bound the field must move
    grow = dataclasses.replace(params, lambda_sparse=bound * 0.05)
    field2 = solve_stage1(TX, rx[None], CFG, grow)
    assert np.any(field2.values)


def test_stage1_global_phase_equivariance():
    params = SolverParams(delta_max=24, static_scene=True, stage1_iters=30)
    rx = _rx([_echo(9, 0, 11)], sigma=0.1, seed=9)
    f1 = solve_stage1(TX, rx[None], CFG, params)
    f2 = solve_stage1(TX, (np.exp(0.9j) * rx)[None], CFG, params)
    np.testing.assert_allclose(f2.values, np.exp(0.9j) * f1.values, atol=1e-9)
    e1, e2 = extract(f1, CFG), extract(f2, CFG)
    np.testing.assert_array_equal(e1.delta, e2.delta)
    np.testing.assert_allclose(e1.frob, e2.frob, atol=1e-10)


def test_stage1_deterministic():
    params = SolverParams(delta_max=16, static_scene=True, stage1_iters=20)
    rx = _rx([_echo(5, 0, 1)], sigma=0.2, seed=3)
    f1 = solve_stage1(TX, rx[None], CFG, params)
    f2 = solve_stage1(TX, rx[None], CFG, params)
    np.testing.assert_array_equal(f1.values, f2.values)


def test_stage2_full_batch_no_tv_continues_stage1():
    params = SolverParams(delta_max=12, static_scene=True, stage1_iters=15,
                          stage2_iters=10, lambda_tv=0.0, batch_pixels=16)
    rng = derive_rng(12, 4)
    frame = np.stack([
        _rx([_echo(5, 0, 100 + k)], sigma=0.1, seed=200 + k) for k in range(4)
    ]).reshape(2, 2, 1024, 2)
    stage1 = solve_stage1(TX, frame, CFG, params)
    stage2 = solve_stage2(stage1, TX, frame, CFG, params)
    # reference: continue stage-1 from its own output with fresh state
    cont = solve_stage1(TX, frame, CFG,
                        dataclasses.replace(params, stage1_iters=10), init=stage1)
    np.testing.assert_allclose(stage2.values, cont.values, atol=1e-10)
    assert rng is not None


def test_stage2_constant_scene_keeps_argmax():
    # spatially constant truth: TV at the truth is zero, argmax bins stay
    params = SolverParams(delta_max=12, static_scene=True, stage1_iters=40,
                          stage2_iters=25, lambda_tv=0.1, batch_pixels=4)
    jones = sample_jones(SpeckleModel(seed=5))
    frame = np.stack([_rx([EchoPath(7, 0.0, jones)]) for _ in range(9)])
    frame = frame.reshape(3, 3, 1024, 2)
    stage1 = solve_stage1(TX, frame, CFG, params)
    stage2 = solve_stage2(stage1, TX, frame, CFG, params)
    for field in (stage1, stage2):
        ex = extract(field, CFG)
        assert np.all(ex.delta[..., 0] == 7)


def test_stage2_seeded_determinism():
    params = SolverParams(delta_max=12, static_scene=True, stage1_iters=10,
                          stage2_iters=12, lambda_tv=0.1, batch_pixels=2, seed=5)
    frame = np.stack([_rx([_echo(5, 0, k)], sigma=0.3, seed=k) for k in range(4)])
    frame = frame.reshape(2, 2, 1024, 2)
    s1 = solve_stage1(TX, frame, CFG, params)
    a = solve_stage2(s1, TX, frame, CFG, params)
    b = solve_stage2(s1, TX, frame, CFG, params)
    np.testing.assert_array_equal(a.values, b.values)


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

def test_extract_one_hot_field():
    params = SolverParams(delta_max=120, static_scene=True)
    field = zero_field((1,), CFG, params)
    di = list(field.delta_bins).index(100)
    field.values[0, di, 0] = np.eye(2)
    ex = extract(field, CFG)
    assert ex.delta[0, 0] == 100
    assert ex.nu[0, 0] == 0.0
    assert ex.depth[0, 0] == pytest.approx(100 * CFG.depth_step)
    assert ex.at(0).delta_star == 100


def test_extract_masks_internal_reflections_and_delta_min():
    cfg = SystemConfig(n_symbols=1024, delta_min=3, internal_reflection_delays=(40,))
    params = SolverParams(delta_max=64, static_scene=True)
    field = zero_field((1,), cfg, params)
    bins = list(field.delta_bins)
    field.values[0, bins.index(40), 0] = 0.9 * np.eye(2)  # internal: masked
    field.values[0, bins.index(50), 0] = 0.5 * np.eye(2)  # scene surface
    ex = extract(field, cfg)
    assert ex.delta[0, 0] == 50
    # delta_min bins never win either
    assert np.all(field.delta_bins > cfg.delta_min)


def test_extract_all_masked_raises():
    cfg = SystemConfig(n_symbols=1024, delta_min=0, internal_reflection_delays=(1, 2))
    params = SolverParams(delta_max=2, static_scene=True)
    field = zero_field((1,), cfg, params)
    with pytest.raises(NoSurfaceError):
        extract(field, cfg)


def test_extract_tie_breaks_toward_small_delta_then_small_nu():
    params = SolverParams(delta_max=16, static_scene=False)
    field = zero_field((1,), CFG, params)
    bins = list(field.delta_bins)
    vz = list(field.nu_grid).index(0.0)
    field.values[0, bins.index(9), vz] = np.eye(2)
    field.values[0, bins.index(5), vz + 1] = np.eye(2)
    field.values[0, bins.index(5), vz - 1] = np.eye(2)
    ex = extract(field, CFG, k=3)
    assert ex.delta[0, 0] == 5
    assert ex.nu[0, 0] < 0  # equal |nu|: negative bin listed first
    assert ex.delta[0, 2] == 9


def test_extract_top2_reports_both_layers():
    params = SolverParams(delta_max=300, static_scene=True)
    field = zero_field((1,), CFG, params)
    bins = list(field.delta_bins)
    field.values[0, bins.index(120), 0] = 0.4 * np.eye(2)
    field.values[0, bins.index(260), 0] = 0.7 * np.eye(2)
    ex = extract(field, CFG, k=2)
    assert ex.delta[0, 0] == 260
    assert ex.delta[0, 1] == 120
    assert ex.at(0).secondary[0][0] == 120
