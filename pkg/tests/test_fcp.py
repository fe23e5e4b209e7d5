import numpy as np
import pytest

from odsep.errors import ConfigurationError, DegenerateInputError, GeometryError
from odsep.fcp import (FcpConfig, estimate_filter, estimate_filterbank,
                       fcp_image, fcp_weight, identity_filter, stack_frames)
from odsep.sim import grid_taps_filterbank, hop_grid_scene, oracle_relative_rir, render
from odsep.stft import StftConfig, stft, stft_stack


def _rand_spec(seed, t=50, f=17):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((t, f)) + 1j * rng.standard_normal((t, f))


# ------------------------------------------------------------------ weights


def test_weight_floor_from_peak_mean_power():
    mix = np.stack([_rand_spec(0)])
    lam = fcp_weight(mix, xi=1e-4)
    floor = 1e-4 * (np.abs(mix) ** 2).mean(axis=0).max()
    assert np.all(lam >= floor)
    np.testing.assert_allclose(lam, floor + np.abs(mix) ** 2)


def test_weight_hand_example_single_bin():
    # one frame, one nonzero bin of magnitude 2, single mic:
    # lam at that bin = |Y|^2 + xi * max(|Y|^2) = 4 + 4 xi
    xi = 1e-4
    mix = np.zeros((1, 1, 5), dtype=complex)
    mix[0, 0, 2] = 2.0
    lam = fcp_weight(mix, xi=xi)
    assert lam[0, 0, 2] == pytest.approx(4.0 + 4.0 * xi)
    assert lam[0, 0, 0] == pytest.approx(4.0 * xi)


def test_weight_scaling_is_quadratic():
    mix = np.stack([_rand_spec(1), _rand_spec(2)])
    np.testing.assert_allclose(fcp_weight(3.0 * mix), 9.0 * fcp_weight(mix),
                               rtol=1e-12)


def test_weight_zero_mixture_rejected():
    with pytest.raises(DegenerateInputError):
        fcp_weight(np.zeros((2, 4, 5), dtype=complex))


def test_weight_positive_and_speaker_independent():
    mix = np.stack([_rand_spec(3), _rand_spec(4), _rand_spec(5)])
    lam = fcp_weight(mix)
    assert lam.shape == mix.shape  # one weight per (mic, frame, bin); no speaker axis
    assert np.all(lam > 0)


# ---------------------------------------------------------------- stacking


def test_stack_frames_layout():
    spec = np.arange(12, dtype=complex).reshape(4, 3)
    stacked = stack_frames(spec, 1, 1)
    assert stacked.shape == (4, 3, 3)
    np.testing.assert_array_equal(stacked[0, :, 0], 0.0)      # before start
    np.testing.assert_array_equal(stacked[2, :, 0], spec[1])  # past frame
    np.testing.assert_array_equal(stacked[2, :, 1], spec[2])  # current
    np.testing.assert_array_equal(stacked[2, :, 2], spec[3])  # future
    np.testing.assert_array_equal(stacked[3, :, 2], 0.0)      # past end


# ------------------------------------------------------------------ config


def test_config_validation():
    with pytest.raises(ConfigurationError):
        FcpConfig(n_past=-1)
    with pytest.raises(ConfigurationError):
        FcpConfig(xi=0.0)
    with pytest.raises(ConfigurationError):
        FcpConfig(ridge=-1e-9)
    with pytest.raises(ConfigurationError):
        FcpConfig(n_past=64, n_future=1)  # K > 64
    assert FcpConfig().n_taps == 20


# ----------------------------------------------------------------- solving


def test_self_prediction_gives_unit_filter():
    spec = _rand_spec(6)
    cfg = FcpConfig(n_past=0, n_future=0, ridge=0.0)
    filt = estimate_filter(spec, spec, np.ones(spec.shape), cfg)
    np.testing.assert_allclose(filt[:, 0], 1.0, atol=1e-10)


def test_zero_estimate_gives_zero_filter():
    y = _rand_spec(7)
    cfg = FcpConfig(n_past=2, n_future=0)
    filt = estimate_filter(np.zeros_like(y), y, np.ones(y.shape), cfg)
    np.testing.assert_array_equal(filt, 0.0)


def test_normal_equation_consistency():
    zhat = _rand_spec(8, t=80)
    y = _rand_spec(9, t=80)
    lam = fcp_weight(np.stack([y]))[0]
    cfg = FcpConfig(n_past=3, n_future=1, ridge=1e-6)
    filt = estimate_filter(zhat, y, lam, cfg)
    stacked = stack_frames(zhat, cfg.n_past, cfg.n_future)
    inv_w = 1.0 / lam
    for f in range(zhat.shape[1]):
        a = stacked[:, f, :]
        gram = np.einsum("t,tk,tl->kl", inv_w[:, f], a, a.conj())
        rhs = np.einsum("t,tk,t->k", inv_w[:, f], a, y[:, f].conj())
        loaded = gram + cfg.ridge * np.trace(gram).real / cfg.n_taps * np.eye(cfg.n_taps)
        resid = loaded @ filt[f] - rhs
        assert np.linalg.norm(resid) / np.linalg.norm(rhs) < 1e-8


def test_first_order_stationarity():
    # with zero ridge the solution beats 100 random perturbations
    rng = np.random.default_rng(11)
    zhat = _rand_spec(12, t=60, f=3)
    y = _rand_spec(13, t=60, f=3)
    lam = np.ones(y.shape)
    cfg = FcpConfig(n_past=2, n_future=0, ridge=0.0)
    filt = estimate_filter(zhat, y, lam, cfg)
    stacked = stack_frames(zhat, cfg.n_past, cfg.n_future)

    def objective(g, f):
        pred = stacked[:, f, :] @ np.conj(g)
        return np.sum(np.abs(y[:, f] - pred) ** 2)

    for f in range(y.shape[1]):
        base = objective(filt[f], f)
        for _ in range(100):
            d = rng.standard_normal(cfg.n_taps) + 1j * rng.standard_normal(cfg.n_taps)
            eps = 1e-3 * np.linalg.norm(filt[f]) / np.linalg.norm(d)
            assert objective(filt[f] + eps * d, f) >= base - 1e-12 * base


def test_frame_shift_equivariance():
    # delaying the estimate by one frame moves the dominant tap one slot
    zhat = _rand_spec(14, t=100, f=9)
    y = zhat * 0.9  # target = current frame scaled
    cfg = FcpConfig(n_past=2, n_future=1, ridge=1e-8)
    lam = np.ones(y.shape)
    filt = estimate_filter(zhat, y, lam, cfg)
    assert np.all(np.abs(filt).argmax(axis=1) == cfg.n_past)
    delayed = np.zeros_like(zhat)
    delayed[1:] = zhat[:-1]
    filt2 = estimate_filter(delayed, y, lam, cfg)
    assert np.all(np.abs(filt2).argmax(axis=1) == cfg.n_past + 1)


def test_uncorrelated_noise_filter_shrinks():
    # no predictive structure: filter norm collapses as T grows
    cfg = FcpConfig(n_past=4, n_future=0, ridge=1e-6)
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        t = 2000
        zhat = rng.standard_normal((t, 8)) + 1j * rng.standard_normal((t, 8))
        y = rng.standard_normal((t, 8)) + 1j * rng.standard_normal((t, 8))
        filt = estimate_filter(zhat, y, np.ones(y.shape), cfg)
        assert np.linalg.norm(filt, axis=1).max() < 0.1


def test_matches_oracle_on_single_source_scene(stft_cfg):
    scene, taps = hop_grid_scene(1, 2, seed=15, n_grid_taps=5, max_grid_lag=10,
                                 dry_len=8000)
    truth = render(scene)
    cfg = FcpConfig(n_past=10, n_future=0)
    mix_specs = stft_stack(truth.mixtures, stft_cfg)
    lam = fcp_weight(mix_specs, cfg.xi)
    zhat = stft(truth.images[0, 0], stft_cfg)
    filt = estimate_filter(zhat, mix_specs[1], lam[1], cfg)
    oracle = oracle_relative_rir(truth.images[0, 0], truth.images[0, 1],
                                 stft_cfg, cfg.n_past, cfg.n_future)
    energy = (np.abs(zhat) ** 2).sum(axis=0)
    weight = energy / energy.sum()
    num = np.sum(weight * np.linalg.norm(filt - oracle, axis=1) ** 2)
    den = np.sum(weight * np.linalg.norm(oracle, axis=1) ** 2)
    assert np.sqrt(num / den) < 1e-3


# ----------------------------------------------------------------- imaging


def test_identity_filter_reproduces_input():
    spec = _rand_spec(16)
    cfg = FcpConfig(n_past=3, n_future=2)
    filt = identity_filter(spec.shape[1], cfg)
    np.testing.assert_allclose(fcp_image(spec, filt, cfg), spec, atol=1e-14)


def test_zero_filter_gives_zero_image():
    spec = _rand_spec(17)
    cfg = FcpConfig(n_past=1, n_future=0)
    out = fcp_image(spec, np.zeros((spec.shape[1], 2), dtype=complex), cfg)
    np.testing.assert_array_equal(out, 0.0)


def test_image_linear_in_estimate():
    cfg = FcpConfig(n_past=2, n_future=1)
    a, b = _rand_spec(18), _rand_spec(19)
    rng = np.random.default_rng(20)
    filt = rng.standard_normal((17, 4)) + 1j * rng.standard_normal((17, 4))
    lhs = fcp_image(2.0 * a + 3.0 * b, filt, cfg)
    rhs = 2.0 * fcp_image(a, filt, cfg) + 3.0 * fcp_image(b, filt, cfg)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_single_source_image_residual(stft_cfg):
    # accurate estimate: summed filtered image reproduces the mixture
    scene, _ = hop_grid_scene(1, 3, seed=21, n_grid_taps=4, max_grid_lag=8,
                              dry_len=8000)
    truth = render(scene)
    cfg = FcpConfig(n_past=8, n_future=0)
    mix_specs = stft_stack(truth.mixtures, stft_cfg)
    zhats = np.stack([stft(truth.images[0, 0], stft_cfg)])
    bank = estimate_filterbank(zhats, mix_specs, cfg)
    images = bank.apply(zhats)
    for p in range(3):
        resid = (np.sum(np.abs(mix_specs[p] - images[p, 0]) ** 2)
                 / np.sum(np.abs(mix_specs[p]) ** 2))
        assert resid < 1e-4


def test_cross_term_small_for_accurate_estimates(stft_cfg):
    # mixture-fit ~ image-fit: the image-fit residual correlates weakly
    # with the competing source when the estimate is the true image plus
    # independent noise at -20 dB
    scene, _ = hop_grid_scene(2, 2, seed=22, n_grid_taps=4, max_grid_lag=8,
                              dry_len=24000)
    truth = render(scene)
    cfg = FcpConfig(n_past=8, n_future=0)
    mix_specs = stft_stack(truth.mixtures, stft_cfg)
    lam = fcp_weight(mix_specs, cfg.xi)
    rng = np.random.default_rng(23)

    image = stft(truth.images[0, 1], stft_cfg)       # speaker 1 at mic 2
    competing = stft(truth.images[1, 1], stft_cfg)   # speaker 2 at mic 2
    noise = (rng.standard_normal(image.shape) + 1j * rng.standard_normal(image.shape))
    zhat = stft(truth.images[0, 0], stft_cfg)
    zhat = zhat + noise * (0.1 * np.linalg.norm(zhat) / np.linalg.norm(noise))

    filt = estimate_filter(zhat, image, lam[1], cfg)
    resid = image - fcp_image(zhat, filt, cfg)
    w = 1.0 / lam[1]
    # expanding |Y - g z|^2 = |X - g z|^2 + |V|^2 + 2 Re<X - g z, V>:
    # the cross piece must be negligible against the self pieces it joins
    cross = np.abs(np.sum(w * np.conj(resid) * competing))
    self_terms = np.sum(w * (np.abs(resid) ** 2 + np.abs(competing) ** 2))
    assert 20 * np.log10(cross / self_terms) < -20.0


# -------------------------------------------------------------- filterbank


def test_filterbank_reference_identity_convention():
    zhats = np.stack([_rand_spec(24), _rand_spec(25)])
    mixtures = np.stack([zhats.sum(axis=0), _rand_spec(26)])
    cfg = FcpConfig(n_past=1, n_future=0)
    bank = estimate_filterbank(zhats, mixtures, cfg, reference_filtered=False)
    np.testing.assert_array_equal(bank.filters[0, 0],
                                  identity_filter(zhats.shape[2], cfg))
    images = bank.apply(zhats)
    np.testing.assert_allclose(images[0], zhats, atol=1e-14)


def test_filterbank_geometry_checks():
    cfg = FcpConfig(n_past=1, n_future=0)
    with pytest.raises(GeometryError):
        estimate_filterbank(_rand_spec(27), np.stack([_rand_spec(28)]), cfg)
    with pytest.raises(GeometryError):
        estimate_filter(_rand_spec(29), _rand_spec(30, t=51),
                        np.ones((50, 17)), cfg)
