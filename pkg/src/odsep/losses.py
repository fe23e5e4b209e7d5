"""Mixture-consistency and magnitude-scattering losses.

The elementary term compares two spectrograms by the absolute error of
their real parts, imaginary parts, and magnitudes, normalized by the
total reference magnitude.  The mixture-consistency (MC) loss applies it
per microphone between the observed mixture and the sum of filtered
speaker estimates, in one of two variants: the reference microphone's
estimates left unfiltered, or every microphone's estimates filtered with
causal-by-default filters.

The intra-source magnitude scattering (ISMS) loss penalizes per-frame
variance of log-magnitudes across frequency, normalized by the mixture's
own scattering; estimates whose frequencies mix speaker labels scatter
more and score higher.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, GeometryError
from .fcp import FcpConfig, RelativeFilterBank, estimate_filterbank, fcp_weight
from .sim import SceneTruth
from .stft import StftConfig, stft, stft_stack

LOG_FLOOR = 1e-8


class McVariant(str, enum.Enum):
    """Which microphones get filtered estimates in the MC loss."""

    REF_UNFILTERED = "ref-unfiltered"
    ALL_FILTERED = "all-filtered"


@dataclass(frozen=True)
class LossWeights:
    """Per-microphone weights and the scattering-term weight."""

    alpha: np.ndarray | None = None  # (P,), defaults to all ones
    gamma: float = 0.04

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigurationError("gamma must be non-negative")
        if self.alpha is not None:
            alpha = np.asarray(self.alpha, dtype=np.float64)
            if np.any(alpha < 0) or not np.any(alpha > 0):
                raise ConfigurationError(
                    "alpha entries must be >= 0 with at least one positive"
                )
            object.__setattr__(self, "alpha", alpha)

    def mic_weights(self, n_mics: int) -> np.ndarray:
        if self.alpha is None:
            return np.ones(n_mics)
        if self.alpha.shape != (n_mics,):
            raise GeometryError(
                f"alpha has shape {self.alpha.shape}, expected ({n_mics},)"
            )
        return self.alpha


@dataclass
class LossBreakdown:
    """Weighted per-microphone terms and their combination."""

    mc_per_mic: np.ndarray
    isms_per_mic: np.ndarray
    mc_total: float
    isms_total: float
    gamma: float
    combined: float


def _breakdown(mc_terms, isms_terms, alpha, gamma) -> LossBreakdown:
    mc = alpha * mc_terms
    isms = alpha * isms_terms
    mc_total = float(mc.sum())
    isms_total = float(isms.sum())
    return LossBreakdown(
        mc_per_mic=mc, isms_per_mic=isms, mc_total=mc_total,
        isms_total=isms_total, gamma=gamma,
        combined=mc_total + gamma * isms_total,
    )


def tf_abs_loss(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Absolute real/imaginary/magnitude error, normalized by sum |reference|."""
    reference = np.asarray(reference)
    estimate = np.asarray(estimate)
    if reference.shape != estimate.shape:
        raise GeometryError("spectrograms must share shape")
    denom = np.abs(reference).sum()
    if denom == 0.0:
        raise DegenerateInputError("all-zero reference spectrogram")
    num = (np.abs(reference.real - estimate.real)
           + np.abs(reference.imag - estimate.imag)
           + np.abs(np.abs(reference) - np.abs(estimate)))
    return float(num.sum() / denom)


def _mc_terms(mixtures: np.ndarray, summed: np.ndarray) -> np.ndarray:
    return np.array([tf_abs_loss(y, s) for y, s in zip(mixtures, summed)])


def mc_loss_ref_unfiltered(mixtures: np.ndarray, zhats: np.ndarray,
                           bank: RelativeFilterBank,
                           weights: LossWeights) -> LossBreakdown:
    """MC loss with the raw estimate sum at the reference microphone.

    Non-reference microphones use the bank's filters; the bank's
    reference-mic slice is ignored.
    """
    mixtures = np.asarray(mixtures)
    zhats = np.asarray(zhats)
    p_cnt = mixtures.shape[0]
    if bank.n_mics != p_cnt:
        raise GeometryError("filter bank does not cover all microphones")
    images = bank.apply(zhats)  # (P, C, T, F)
    summed = images.sum(axis=1)
    summed[0] = zhats.sum(axis=0)
    alpha = weights.mic_weights(p_cnt)
    terms = _mc_terms(mixtures, summed)
    return _breakdown(terms, np.zeros(p_cnt), alpha, weights.gamma)


def mc_loss_all_filtered(mixtures: np.ndarray, zhats: np.ndarray,
                         fcp_cfg: FcpConfig, weights: LossWeights
                         ) -> tuple[LossBreakdown, RelativeFilterBank]:
    """MC loss with filters re-estimated for every microphone.

    Estimates are filtered at the reference microphone too, so they act
    as virtual-microphone signals; filters are causal under the default
    tap configuration.  Returns the bank for downstream image extraction.
    """
    mixtures = np.asarray(mixtures)
    zhats = np.asarray(zhats)
    bank = estimate_filterbank(zhats, mixtures, fcp_cfg, reference_filtered=True)
    summed = bank.apply(zhats).sum(axis=1)
    alpha = weights.mic_weights(mixtures.shape[0])
    terms = _mc_terms(mixtures, summed)
    return _breakdown(terms, np.zeros(mixtures.shape[0]), alpha, weights.gamma), bank


def _isms_terms(images: np.ndarray, mixtures: np.ndarray,
                log_floor: float) -> np.ndarray:
    p_cnt = mixtures.shape[0]
    terms = np.empty(p_cnt)
    for p in range(p_cnt):
        est_log = np.log(np.maximum(np.abs(images[p]), log_floor))  # (C, T, F)
        mix_log = np.log(np.maximum(np.abs(mixtures[p]), log_floor))
        num = est_log.var(axis=-1).mean(axis=0).sum()  # mean over C, sum over T
        den = mix_log.var(axis=-1).sum()
        if den == 0.0:
            raise DegenerateInputError(
                f"mixture at mic {p} has zero log-magnitude variance"
            )
        terms[p] = num / den
    return terms


def isms_loss(images: np.ndarray, mixtures: np.ndarray, weights: LossWeights,
              log_floor: float = LOG_FLOOR) -> float:
    """Intra-source magnitude scattering of per-mic speaker images.

    ``images`` has shape (P, C, T, F); per frame the variance of
    log-magnitudes over frequency is averaged across speakers, summed
    over frames, and normalized by the mixture's own figure.  Variances
    use the population convention (divide by F); magnitudes are floored
    before the log.
    """
    images = np.asarray(images)
    mixtures = np.asarray(mixtures)
    if images.ndim != 4 or mixtures.ndim != 3:
        raise GeometryError("expected images (P, C, T, F) and mixtures (P, T, F)")
    if images.shape[0] != mixtures.shape[0] or images.shape[2:] != mixtures.shape[1:]:
        raise GeometryError("images and mixtures must share mic count and (T, F)")
    alpha = weights.mic_weights(mixtures.shape[0])
    return float((alpha * _isms_terms(images, mixtures, log_floor)).sum())


def combined_loss(mixtures: np.ndarray, zhats: np.ndarray, fcp_cfg: FcpConfig,
                  weights: LossWeights,
                  variant: McVariant = McVariant.ALL_FILTERED,
                  log_floor: float = LOG_FLOOR
                  ) -> tuple[LossBreakdown, RelativeFilterBank]:
    """MC plus gamma-weighted scattering loss; returns the filter bank used.

    Under the ref-unfiltered variant the reference mic contributes its raw
    estimates both to the MC term and to the scattering images.
    """
    mixtures = np.asarray(mixtures)
    zhats = np.asarray(zhats)
    variant = McVariant(variant)
    bank = estimate_filterbank(
        zhats, mixtures, fcp_cfg,
        reference_filtered=(variant is McVariant.ALL_FILTERED),
    )
    images = bank.apply(zhats)
    summed = images.sum(axis=1)
    alpha = weights.mic_weights(mixtures.shape[0])
    mc_terms = _mc_terms(mixtures, summed)
    isms_terms = _isms_terms(images, mixtures, log_floor)
    return _breakdown(mc_terms, isms_terms, alpha, weights.gamma), bank


def loss_surface(truth: SceneTruth, stft_cfg: StftConfig, fcp_cfg: FcpConfig,
                 weights: LossWeights, grid_n: int = 21,
                 variant: McVariant = McVariant.REF_UNFILTERED,
                 freeze_filters: bool = False) -> np.ndarray:
    """Sweep hypothesized two-speaker estimates over a mixing grid.

    For grid values mu, nu in [0, 1] the hypothesized estimates are

        z1 = mu * X1 + nu * X2 + noise/2
        z2 = (1-mu) * X1 + (1-nu) * X2 + noise/2

    built from the true reference-mic speaker images X1, X2 and the
    reference-mic noise, and the MC loss is evaluated at each point.
    Filters are re-estimated per grid point unless ``freeze_filters``,
    which reuses the filters of the oracle assignment (mu=1, nu=0).

    Returns rows (mu, nu, loss) in row-major (mu outer) order.
    """
    if truth.n_speakers != 2:
        raise ConfigurationError("loss surface is defined for 2-speaker scenes")
    if grid_n < 2:
        raise ConfigurationError("grid_n must be >= 2")
    variant = McVariant(variant)
    mixtures = stft_stack(truth.mixtures, stft_cfg)
    ref_images = np.stack([stft(truth.images[c, 0], stft_cfg) for c in range(2)])
    noise_spec = stft(truth.noise[0], stft_cfg) if np.any(truth.noise[0]) else None
    lam = fcp_weight(mixtures, fcp_cfg.xi)
    alpha = weights.mic_weights(mixtures.shape[0])
    ref_filtered = variant is McVariant.ALL_FILTERED

    def hypothesized(mu, nu):
        z1 = mu * ref_images[0] + nu * ref_images[1]
        z2 = (1.0 - mu) * ref_images[0] + (1.0 - nu) * ref_images[1]
        if noise_spec is not None:
            z1 = z1 + 0.5 * noise_spec
            z2 = z2 + 0.5 * noise_spec
        return np.stack([z1, z2])

    frozen_bank = None
    if freeze_filters:
        frozen_bank = estimate_filterbank(
            hypothesized(1.0, 0.0), mixtures, fcp_cfg,
            reference_filtered=ref_filtered, weights=lam,
        )

    grid = np.linspace(0.0, 1.0, grid_n)
    rows = np.empty((grid_n * grid_n, 3))
    i = 0
    for mu in grid:
        for nu in grid:
            zhats = hypothesized(mu, nu)
            bank = frozen_bank
            if bank is None:
                bank = estimate_filterbank(
                    zhats, mixtures, fcp_cfg,
                    reference_filtered=ref_filtered, weights=lam,
                )
            summed = bank.apply(zhats).sum(axis=1)
            if not ref_filtered:
                summed[0] = zhats.sum(axis=0)
            loss = float((alpha * _mc_terms(mixtures, summed)).sum())
            rows[i] = (mu, nu, loss)
            i += 1
    return rows
