"""Time-domain Wiener filtering baseline.

Fits, per (microphone, speaker) pair, an FIR filter minimizing the
squared error between the mixture and the filtered speaker estimate,
then scores how well the filtered estimates sum to each mixture under an
L1 norm.  A filter of ``taps`` coefficients spans ``future_taps`` samples
of lookahead, the current sample, and ``taps - 1 - future_taps`` past
samples; convolution edges are zero-padded ('same' length output).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (ConfigurationError, DegenerateInputError, GeometryError,
                     NumericalError)


@dataclass(frozen=True)
class WienerConfig:
    taps: int = 512
    future_taps: int = 100
    ridge: float = 0.0

    def __post_init__(self):
        if self.taps < 1:
            raise ConfigurationError("taps must be >= 1")
        if not 0 <= self.future_taps < self.taps:
            raise ConfigurationError("need 0 <= future_taps < taps")
        if self.ridge < 0:
            raise ConfigurationError("ridge must be non-negative")


def _design_matrix(zhat: np.ndarray, taps: int, future: int) -> np.ndarray:
    """Rows X[n, m] = zhat[n + future - m], zero outside the signal."""
    n = zhat.size
    padded = np.concatenate([np.zeros(taps - 1 - future), zhat, np.zeros(future)])
    return sliding_window_view(padded, taps)[:n, ::-1]


def estimate_wiener(zhat: np.ndarray, target: np.ndarray,
                    cfg: WienerConfig) -> np.ndarray:
    """Least-squares FIR filter mapping ``zhat`` onto ``target``.

    Solves the normal equations of ``min_h ||target - h * zhat||^2`` with
    ``cfg.ridge`` (relative to the mean Gram diagonal) loaded onto the
    diagonal.  Raises if the system is singular and ridge is zero.
    """
    zhat = np.asarray(zhat, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if zhat.shape != target.shape or zhat.ndim != 1:
        raise GeometryError("zhat and target must be 1-D of equal length")
    if not np.any(zhat != 0.0):
        raise DegenerateInputError("zhat is all zero")

    design = _design_matrix(zhat, cfg.taps, cfg.future_taps)
    gram = design.T @ design
    rhs = design.T @ target
    if cfg.ridge > 0.0:
        gram = gram + cfg.ridge * (np.trace(gram) / cfg.taps) * np.eye(cfg.taps)
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(
            "singular Wiener normal equations; set ridge > 0"
        ) from exc
    return scipy.linalg.cho_solve(factor, rhs, check_finite=False)


def apply_wiener(filt: np.ndarray, zhat: np.ndarray, future_taps: int) -> np.ndarray:
    """Filter ``zhat`` with ``future_taps`` samples of lookahead, same length."""
    zhat = np.asarray(zhat, dtype=np.float64)
    full = np.convolve(zhat, filt)
    return full[future_taps : future_taps + zhat.size]


def wiener_mc_loss(mixtures: np.ndarray, zhats: np.ndarray, cfg: WienerConfig,
                   alpha: np.ndarray | None = None) -> float:
    """L1 mixture-consistency of Wiener-filtered estimates.

    Per microphone p: ||y_p - sum_c h_p(c) * z(c)||_1 / ||y_p||_1 with
    each h_p(c) fit independently by :func:`estimate_wiener`.  All-zero
    estimates contribute a zero filter.  ``alpha`` weights microphones
    (default all ones).

    Long filters can drive this loss down even for unseparated estimates
    (enough degrees of freedom to fit the mixture from anything), so the
    tap count must stay commensurate with the true filter support.
    """
    mixtures = np.atleast_2d(np.asarray(mixtures, dtype=np.float64))
    zhats = np.atleast_2d(np.asarray(zhats, dtype=np.float64))
    if mixtures.shape[1] != zhats.shape[1]:
        raise GeometryError("mixtures and estimates must share length")
    p_cnt = mixtures.shape[0]
    weights = np.ones(p_cnt) if alpha is None else np.asarray(alpha, dtype=np.float64)
    if weights.shape != (p_cnt,):
        raise GeometryError(f"alpha must have shape ({p_cnt},)")

    total = 0.0
    for p in range(p_cnt):
        norm = np.abs(mixtures[p]).sum()
        if norm == 0.0:
            raise DegenerateInputError(f"mixture at mic {p} is all zero")
        fitted = np.zeros_like(mixtures[p])
        for z in zhats:
            if not np.any(z != 0.0):
                continue
            filt = estimate_wiener(z, mixtures[p], cfg)
            fitted += apply_wiener(filt, z, cfg.future_taps)
        total += weights[p] * np.abs(mixtures[p] - fitted).sum() / norm
    return float(total)


def taps_from_stft_filter(n_stft_taps: int, hop_ms: float = 8.0,
                          win_ms: float = 32.0, sample_rate: int = 8000) -> int:
    """Time-domain tap count with the same span as an STFT-domain filter.

    A K-frame filter at the given hop/window covers
    (K - 1) * hop_ms + win_ms milliseconds of signal.
    """
    if n_stft_taps < 1:
        raise ConfigurationError("filter needs at least one tap")
    span_ms = (n_stft_taps - 1) * hop_ms + win_ms
    taps = span_ms / 1000.0 * sample_rate
    rounded = round(taps)
    if abs(taps - rounded) > 1e-9:
        raise ConfigurationError(
            f"tap span {span_ms} ms is not integral at {sample_rate} Hz"
        )
    return int(rounded)
