import numpy as np
import pytest

from odsep.errors import ConfigurationError, DegenerateInputError
from odsep.fcp import FcpConfig, estimate_filterbank
from odsep.losses import (LossWeights, McVariant, combined_loss, isms_loss,
                          loss_surface, mc_loss_all_filtered,
                          mc_loss_ref_unfiltered, tf_abs_loss)
from odsep.sim import hop_grid_scene, render
from odsep.stft import StftConfig, stft, stft_stack


def _rand_spec(seed, t=40, f=11):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((t, f)) + 1j * rng.standard_normal((t, f))


def _scene_pack(seed, n_speakers=2, n_mics=3, dry_len=6400, stft_cfg=None,
                max_grid_lag=8):
    stft_cfg = stft_cfg or StftConfig()
    scene, _ = hop_grid_scene(n_speakers, n_mics, seed=seed, n_grid_taps=4,
                              max_grid_lag=max_grid_lag, dry_len=dry_len)
    truth = render(scene)
    mix = stft_stack(truth.mixtures, stft_cfg)
    refs = np.stack([
        stft(truth.images[c, 0], stft_cfg) for c in range(n_speakers)
    ])
    return truth, mix, refs


# ------------------------------------------------------------- tf_abs_loss


def test_tf_abs_loss_zero_iff_equal():
    y = _rand_spec(0)
    assert tf_abs_loss(y, y) == 0.0
    assert tf_abs_loss(y, y + 1e-3) > 0.0


def test_tf_abs_loss_hand_example():
    y = np.zeros((1, 1), dtype=complex)
    y[0, 0] = 3 + 4j
    assert tf_abs_loss(y, np.zeros_like(y)) == pytest.approx(2.4)


def test_tf_abs_loss_zero_estimate_bounds():
    # per bin |Re| + |Im| + |mag| lies in [2|Y|, (1 + sqrt 2)|Y|]
    y = _rand_spec(1)
    val = tf_abs_loss(y, np.zeros_like(y))
    assert 2.0 <= val <= 1.0 + np.sqrt(2.0) + 1e-12
    per_bin = np.abs(y.real) + np.abs(y.imag) + np.abs(y)
    assert np.all(per_bin >= 2.0 * np.abs(y) - 1e-12)
    assert np.all(per_bin <= (1.0 + np.sqrt(2.0)) * np.abs(y) + 1e-12)


def test_tf_abs_loss_zero_reference_rejected():
    with pytest.raises(DegenerateInputError):
        tf_abs_loss(np.zeros((3, 3), dtype=complex), _rand_spec(2, 3, 3))


# ---------------------------------------------------------------- weights


def test_loss_weights_validation():
    with pytest.raises(ConfigurationError):
        LossWeights(gamma=-0.1)
    with pytest.raises(ConfigurationError):
        LossWeights(alpha=np.zeros(3))
    with pytest.raises(ConfigurationError):
        LossWeights(alpha=np.array([1.0, -0.5]))
    assert LossWeights().gamma == 0.04


# ---------------------------------------------------------------- MC loss


def test_mc_single_speaker_estimate_equals_mixture(stft_cfg):
    # C=1 with zhat = Y_1: the reference-mic term vanishes
    truth, mix, refs = _scene_pack(3, n_speakers=1)
    cfg = FcpConfig(n_past=8, n_future=0)
    zhats = mix[:1].copy()
    bank = estimate_filterbank(zhats, mix, cfg, reference_filtered=False)
    breakdown = mc_loss_ref_unfiltered(mix, zhats, bank, LossWeights())
    assert breakdown.mc_per_mic[0] == 0.0
    assert breakdown.mc_total >= 0.0


def test_mc_alpha_scales_contribution(stft_cfg):
    truth, mix, refs = _scene_pack(4)
    cfg = FcpConfig(n_past=8, n_future=0)
    bank = estimate_filterbank(refs, mix, cfg, reference_filtered=False)
    base = mc_loss_ref_unfiltered(mix, refs, bank, LossWeights())
    doubled = mc_loss_ref_unfiltered(
        mix, refs, bank, LossWeights(alpha=np.array([1.0, 2.0, 1.0]))
    )
    assert doubled.mc_per_mic[1] == pytest.approx(2.0 * base.mc_per_mic[1])
    assert doubled.mc_per_mic[0] == pytest.approx(base.mc_per_mic[0])


def test_mc_all_filtered_speaker_permutation_invariant(stft_cfg):
    truth, mix, refs = _scene_pack(5)
    cfg = FcpConfig(n_past=8, n_future=0)
    weights = LossWeights()
    fwd, _ = mc_loss_all_filtered(mix, refs, cfg, weights)
    swapped, _ = mc_loss_all_filtered(mix, refs[::-1], cfg, weights)
    assert swapped.mc_total == pytest.approx(fwd.mc_total, rel=1e-12)


def test_mc_all_filtered_oracle_near_zero(stft_cfg):
    # reference-mic images are exactly filterable in hop-grid scenes, so
    # the causal all-filtered loss of oracle estimates is tiny
    truth, mix, refs = _scene_pack(6)
    cfg = FcpConfig(n_past=8, n_future=0)
    breakdown, bank = mc_loss_all_filtered(mix, refs, cfg, LossWeights())
    assert breakdown.mc_total < 1e-3
    assert bank.n_mics == 3


def test_mc_oracle_below_merged_estimates(stft_cfg):
    wins = 0
    for seed in range(10):
        truth, mix, refs = _scene_pack(100 + seed)
        cfg = FcpConfig(n_past=8, n_future=0)
        weights = LossWeights()
        oracle, _ = mc_loss_all_filtered(mix, refs, cfg, weights)
        merged = np.stack([mix[0] / 2.0, mix[0] / 2.0])
        degenerate, _ = mc_loss_all_filtered(mix, merged, cfg, weights)
        wins += int(degenerate.mc_total > oracle.mc_total)
    assert wins >= 9


def test_mc_ref_unfiltered_oracle_beats_swapped_bands(stft_cfg):
    truth, mix, refs = _scene_pack(7)
    cfg = FcpConfig(n_past=8, n_future=0)
    weights = LossWeights()
    bank = estimate_filterbank(refs, mix, cfg, reference_filtered=False)
    good = mc_loss_ref_unfiltered(mix, refs, bank, weights)
    rng = np.random.default_rng(8)
    swap = rng.random(refs.shape[2]) < 0.5
    swapped = refs.copy()
    swapped[0, :, swap], swapped[1, :, swap] = refs[1, :, swap], refs[0, :, swap]
    bank_sw = estimate_filterbank(swapped, mix, cfg, reference_filtered=False)
    bad = mc_loss_ref_unfiltered(mix, swapped, bank_sw, weights)
    # band-swapped estimates still sum to the mixture at the reference mic,
    # but filtered mics cannot match
    assert bad.mc_total > good.mc_total


# -------------------------------------------------------------------- ISMS


def test_isms_single_speaker_ratio_one(stft_cfg):
    truth, mix, _ = _scene_pack(9, n_speakers=1)
    images = np.stack([mix])  # at each mic the single "image" is the mixture
    images = images.transpose(1, 0, 2, 3)
    val = isms_loss(images, mix, LossWeights())
    assert val == pytest.approx(mix.shape[0], rel=1e-12)


def test_isms_constant_magnitude_frame_contributes_zero():
    t, f = 6, 16
    mix = np.stack([_rand_spec(10, t, f)])
    images = np.full((1, 1, t, f), 0.7 + 0.0j)
    assert isms_loss(images, mix, LossWeights()) == 0.0


def test_isms_invariant_to_global_scaling():
    mix = np.stack([_rand_spec(11)]) + 10.0  # keep magnitudes off the floor
    images = np.abs(np.stack([np.stack([_rand_spec(12), _rand_spec(13)])])) + 10.0
    weights = LossWeights()
    a = isms_loss(images, mix, weights)
    b = isms_loss(7.3 * images, 7.3 * mix, weights)
    assert b == pytest.approx(a, rel=1e-12)


def test_isms_zero_variance_mixture_rejected():
    mix = np.full((1, 5, 9), 2.0 + 0.0j)
    images = np.abs(np.random.default_rng(14).standard_normal((1, 2, 5, 9))) + 0.5
    with pytest.raises(DegenerateInputError):
        isms_loss(images.astype(complex), mix, LossWeights())


def test_isms_band_swap_increases_loss(stft_cfg):
    cfg = FcpConfig(n_past=8, n_future=0)
    worse = 0
    for seed in range(10):
        truth, mix, refs = _scene_pack(200 + seed)
        images = np.stack([
            np.stack([stft(truth.images[c, p], stft_cfg) for c in range(2)])
            for p in range(3)
        ])
        rng = np.random.default_rng(seed)
        swap = rng.random(mix.shape[2]) < 0.5
        swapped = images.copy()
        swapped[:, 0, :, swap], swapped[:, 1, :, swap] = \
            images[:, 1, :, swap], images[:, 0, :, swap]
        weights = LossWeights()
        worse += int(isms_loss(swapped, mix, weights)
                     > isms_loss(images, mix, weights))
    assert worse >= 9


# ---------------------------------------------------------------- combined


def test_combined_gamma_zero_is_mc_only(stft_cfg):
    truth, mix, refs = _scene_pack(15)
    cfg = FcpConfig(n_past=8, n_future=0)
    breakdown, _ = combined_loss(mix, refs, cfg, LossWeights(gamma=0.0))
    assert breakdown.combined == breakdown.mc_total


def test_combined_is_sum_of_parts(stft_cfg):
    truth, mix, refs = _scene_pack(16)
    cfg = FcpConfig(n_past=8, n_future=0)
    breakdown, _ = combined_loss(mix, refs, cfg, LossWeights(gamma=1.0))
    assert breakdown.combined == pytest.approx(
        breakdown.mc_total + breakdown.isms_total, abs=1e-12
    )
    assert np.all(breakdown.mc_per_mic >= 0)
    assert np.all(breakdown.isms_per_mic >= 0)


def test_combined_ranks_oracle_below_band_swapped(stft_cfg):
    truth, mix, refs = _scene_pack(17)
    cfg = FcpConfig(n_past=8, n_future=0)
    rng = np.random.default_rng(18)
    swap = rng.random(mix.shape[2]) < 0.5
    swapped = refs.copy()
    swapped[0, :, swap], swapped[1, :, swap] = refs[1, :, swap], refs[0, :, swap]
    for gamma in (0.02, 0.04, 0.06, 0.1, 0.3, 1.0):
        weights = LossWeights(gamma=gamma)
        good, _ = combined_loss(mix, refs, cfg, weights)
        bad, _ = combined_loss(mix, swapped, cfg, weights)
        assert bad.combined > good.combined


def test_combined_variant_accepts_strings(stft_cfg):
    truth, mix, refs = _scene_pack(19)
    cfg = FcpConfig(n_past=8, n_future=0)
    a, _ = combined_loss(mix, refs, cfg, LossWeights(), variant="ref-unfiltered")
    b, _ = combined_loss(mix, refs, cfg, LossWeights(),
                         variant=McVariant.REF_UNFILTERED)
    assert a.combined == b.combined


# ------------------------------------------------------------ loss surface


def test_loss_surface_grid_and_symmetry(stft_cfg):
    truth, mix, refs = _scene_pack(20, dry_len=4800)
    cfg = FcpConfig(n_past=8, n_future=1)
    rows = loss_surface(truth, stft_cfg, cfg, LossWeights(), grid_n=5)
    assert rows.shape == (25, 3)
    np.testing.assert_allclose(rows[0, :2], [0.0, 0.0])
    np.testing.assert_allclose(rows[-1, :2], [1.0, 1.0])
    table = {(round(mu, 3), round(nu, 3)): val for mu, nu, val in rows}
    # relabeling symmetry: L(mu, nu) == L(1 - mu, 1 - nu)
    for mu, nu, val in rows:
        mirrored = table[(round(1.0 - mu, 3), round(1.0 - nu, 3))]
        assert mirrored == pytest.approx(val, rel=1e-6)


def test_loss_surface_corners_win(stft_cfg):
    truth, mix, refs = _scene_pack(21, n_mics=4, dry_len=4800)
    cfg = FcpConfig(n_past=8, n_future=1)
    rows = loss_surface(truth, stft_cfg, cfg, LossWeights(), grid_n=5)
    table = {(round(mu, 3), round(nu, 3)): val for mu, nu, val in rows}
    order = np.argsort(rows[:, 2])
    smallest = {tuple(np.round(rows[i, :2], 3)) for i in order[:2]}
    assert smallest == {(1.0, 0.0), (0.0, 1.0)}
    assert table[(0.5, 0.5)] > table[(1.0, 0.0)]


def test_loss_surface_freeze_filters_matches_at_oracle_corner(stft_cfg):
    truth, mix, refs = _scene_pack(22, dry_len=4800)
    cfg = FcpConfig(n_past=8, n_future=1)
    live = loss_surface(truth, stft_cfg, cfg, LossWeights(), grid_n=3)
    frozen = loss_surface(truth, stft_cfg, cfg, LossWeights(), grid_n=3,
                          freeze_filters=True)
    # at (mu, nu) = (1, 0) both evaluate the oracle assignment
    idx = 2 * 3 + 0
    np.testing.assert_allclose(live[idx], frozen[idx], rtol=1e-10)


def test_loss_surface_requires_two_speakers(stft_cfg):
    truth, mix, refs = _scene_pack(23, n_speakers=1)
    with pytest.raises(ConfigurationError):
        loss_surface(truth, stft_cfg, FcpConfig(), LossWeights(), grid_n=3)
