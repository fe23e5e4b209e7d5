"""Sub-band forward convolutive prediction (FCP).

Estimates, independently at each frequency, a short complex filter that
maps stacked frames of a source estimate onto an observed mixture by
weighted linear regression.  Filtering the estimate with the solved
filter yields an approximation of that source's image at the target
microphone.

Conventions: a filter g of length K = n_past + 1 + n_future acts on the
frame stack ztilde(t) = [Z(t - n_past), ..., Z(t), ..., Z(t + n_future)]
as g^H ztilde(t), i.e. entry n_past multiplies the current frame.  Filters
are stored as (F, K) arrays, banks as (P, C, F, K).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (ConfigurationError, DegenerateInputError, GeometryError,
                     NumericalError)

MAX_TAPS = 64


@dataclass(frozen=True)
class FcpConfig:
    """Filter taps and regression conditioning.

    n_past/n_future count frames before/after the current one; xi floors
    the regression weights; ridge is diagonal loading relative to the
    Gram-matrix trace.
    """

    n_past: int = 19
    n_future: int = 0
    xi: float = 1e-4
    ridge: float = 1e-6

    def __post_init__(self):
        if self.n_past < 0 or self.n_future < 0:
            raise ConfigurationError("tap counts must be non-negative")
        if self.n_taps > MAX_TAPS:
            raise ConfigurationError(f"K = {self.n_taps} exceeds the {MAX_TAPS}-tap cap")
        if self.xi <= 0:
            raise ConfigurationError("xi must be positive")
        if self.ridge < 0:
            raise ConfigurationError("ridge must be non-negative")

    @property
    def n_taps(self) -> int:
        return self.n_past + 1 + self.n_future


def stack_frames(spec: np.ndarray, n_past: int, n_future: int) -> np.ndarray:
    """Stack past/future frames: (..., T, F) -> (..., T, F, K), zeros outside."""
    spec = np.asarray(spec)
    k = n_past + 1 + n_future
    pad = [(0, 0)] * spec.ndim
    pad[-2] = (n_past, n_future)
    padded = np.pad(spec, pad)
    return sliding_window_view(padded, k, axis=-2)


def fcp_weight(mixtures: np.ndarray, xi: float = 1e-4) -> np.ndarray:
    """Per-unit regression weights from the multichannel mixture.

    weight[p, t, f] = xi * max_{t',f'} mean_p' |Y_p'(t',f')|^2 + |Y_p(t,f)|^2;
    strictly positive for any nonzero mixture and shared by all speakers.
    """
    mixtures = np.asarray(mixtures)
    if mixtures.ndim != 3:
        raise GeometryError("mixtures must have shape (P, T, F)")
    power = np.abs(mixtures) ** 2
    floor = xi * power.mean(axis=0).max()
    if floor == 0.0:
        raise DegenerateInputError("all-zero mixture gives zero weights")
    return floor + power


def _solve_hermitian(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve gram[f] x[f] = rhs[f] per batch entry via Cholesky."""
    out = np.empty_like(rhs)
    for f in range(gram.shape[0]):
        try:
            factor = scipy.linalg.cho_factor(gram[f], lower=True, check_finite=False)
            out[f] = scipy.linalg.cho_solve(factor, rhs[f], check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError(
                f"singular normal equations at frequency {f}; increase ridge"
            ) from exc
    return out


def _loaded_gram(gram: np.ndarray, ridge: float) -> np.ndarray:
    k = gram.shape[-1]
    trace = np.trace(gram, axis1=-2, axis2=-1).real
    load = np.where(trace > 0.0, ridge * trace / k, 1.0)
    return gram + load[:, None, None] * np.eye(k)


def estimate_filter(zhat: np.ndarray, target: np.ndarray, weights: np.ndarray,
                    cfg: FcpConfig) -> np.ndarray:
    """Weighted least-squares filter from ``zhat`` to ``target``, per frequency.

    Args:
        zhat: (T, F) source estimate spectrogram.
        target: (T, F) observed spectrogram to predict.
        weights: (T, F) positive weights (the regression divides by them).
        cfg: tap and conditioning configuration.

    Returns:
        (F, K) complex filters minimizing
        sum_t |target(t,f) - g^H ztilde(t,f)|^2 / weights(t,f)
        with ridge * trace/K loaded onto the Gram diagonal.  Frequencies
        where zhat is silent come back as zero filters.
    """
    zhat = np.asarray(zhat)
    target = np.asarray(target)
    weights = np.asarray(weights, dtype=np.float64)
    if zhat.shape != target.shape or zhat.shape != weights.shape:
        raise GeometryError("zhat, target, and weights must share shape (T, F)")
    if not (np.all(np.isfinite(zhat)) and np.all(np.isfinite(target))):
        raise GeometryError("non-finite spectrogram input")
    if np.any(weights <= 0.0):
        raise DegenerateInputError("weights must be strictly positive")

    inv_w = 1.0 / weights
    stacked = stack_frames(zhat, cfg.n_past, cfg.n_future)       # (T, F, K)
    a = np.ascontiguousarray(stacked.transpose(1, 2, 0))         # (F, K, T)
    aw = np.ascontiguousarray((stacked * inv_w[:, :, None]).transpose(1, 2, 0))
    gram = aw @ a.conj().transpose(0, 2, 1)                      # (F, K, K)
    rhs = (aw @ np.conj(target.T)[:, :, None])[:, :, 0]          # (F, K)
    return _solve_hermitian(_loaded_gram(gram, cfg.ridge), rhs)


def fcp_image(zhat: np.ndarray, filt: np.ndarray, cfg: FcpConfig) -> np.ndarray:
    """Apply a per-frequency filter: out(t,f) = filt(f)^H ztilde(t,f)."""
    zhat = np.asarray(zhat)
    filt = np.asarray(filt)
    if filt.shape != (zhat.shape[1], cfg.n_taps):
        raise GeometryError(
            f"filter shape {filt.shape} does not match (F, K) = "
            f"({zhat.shape[1]}, {cfg.n_taps})"
        )
    stacked = stack_frames(zhat, cfg.n_past, cfg.n_future)
    return np.einsum("fk,tfk->tf", np.conj(filt), stacked)


def identity_filter(n_bins: int, cfg: FcpConfig) -> np.ndarray:
    """(F, K) filter that reproduces the input spectrogram."""
    filt = np.zeros((n_bins, cfg.n_taps), dtype=np.complex128)
    filt[:, cfg.n_past] = 1.0
    return filt


@dataclass
class RelativeFilterBank:
    """Per-(mic, speaker, frequency) filters of K taps each."""

    filters: np.ndarray  # (P, C, F, K) complex
    cfg: FcpConfig

    @property
    def n_mics(self) -> int:
        return self.filters.shape[0]

    @property
    def n_speakers(self) -> int:
        return self.filters.shape[1]

    def apply(self, zhats: np.ndarray) -> np.ndarray:
        """Filter speaker estimates to per-mic images: (C,T,F) -> (P,C,T,F)."""
        zhats = np.asarray(zhats)
        if zhats.shape[0] != self.n_speakers:
            raise GeometryError("speaker count mismatch between bank and estimates")
        p_cnt, c_cnt = self.n_mics, self.n_speakers
        out = np.empty((p_cnt, c_cnt) + zhats.shape[1:], dtype=np.complex128)
        for p in range(p_cnt):
            for c in range(c_cnt):
                out[p, c] = fcp_image(zhats[c], self.filters[p, c], self.cfg)
        return out


def estimate_filterbank(zhats: np.ndarray, mixtures: np.ndarray, cfg: FcpConfig,
                        *, reference_filtered: bool = True,
                        weights: np.ndarray | None = None) -> RelativeFilterBank:
    """Solve filters for every (mic, speaker) pair.

    With ``reference_filtered=False`` the reference microphone (index 0)
    receives identity filters, matching losses whose reference-mic term
    compares the raw estimate sum against the mixture.
    """
    zhats = np.asarray(zhats)
    mixtures = np.asarray(mixtures)
    if zhats.ndim != 3 or mixtures.ndim != 3:
        raise GeometryError("expected zhats (C, T, F) and mixtures (P, T, F)")
    if zhats.shape[1:] != mixtures.shape[1:]:
        raise GeometryError("estimates and mixtures must share (T, F) geometry")
    if weights is None:
        weights = fcp_weight(mixtures, cfg.xi)
    c_cnt = zhats.shape[0]
    p_cnt, _, n_bins = mixtures.shape
    filters = np.empty((p_cnt, c_cnt, n_bins, cfg.n_taps), dtype=np.complex128)
    start = 0
    if not reference_filtered:
        filters[0] = identity_filter(n_bins, cfg)[None]
        start = 1
    for p in range(start, p_cnt):
        for c in range(c_cnt):
            filters[p, c] = estimate_filter(zhats[c], mixtures[p], weights[p], cfg)
    return RelativeFilterBank(filters=filters, cfg=cfg)
