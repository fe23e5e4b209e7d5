"""STFT analysis/synthesis with exact overlap-add reconstruction.

Spectrograms are complex128 arrays of shape (T, F), frame index first.
Multi-microphone stacks use shape (P, T, F) and per-speaker stacks
(C, T, F).  The analysis window is a periodic square-root Hann; the
synthesis window is the analysis window divided by the overlap-add
normalizer, so a round trip reconstructs the input exactly (up to float
rounding) for every sample.

The head of the signal is zero-padded by ``win_len - hop`` samples and
the tail by whatever is needed to cover the last sample, so every input
sample receives the full window overlap.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, GeometryError

_COLA_TOL = 1e-12


@dataclass(frozen=True)
class StftConfig:
    """Frame geometry (defaults: 32 ms window, 8 ms hop at 8 kHz)."""

    sample_rate: int = 8000
    win_len: int = 256
    hop: int = 64
    fft_size: int = 256

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate must be positive")
        if self.win_len <= 0 or self.hop <= 0:
            raise ConfigurationError("win_len and hop must be positive")
        if self.win_len % self.hop != 0:
            raise ConfigurationError(
                f"hop ({self.hop}) must divide win_len ({self.win_len})"
            )
        if self.hop >= self.win_len:
            raise ConfigurationError("square-root Hann needs overlap: hop < win_len")
        if self.fft_size < self.win_len:
            raise ConfigurationError("fft_size must be >= win_len")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad_head(self) -> int:
        return self.win_len - self.hop

    def num_frames(self, n_samples: int) -> int:
        """Frame count for an input of ``n_samples``; pure in (n, config)."""
        if n_samples <= 0:
            raise ConfigurationError("signal must be non-empty")
        return (self.pad_head + n_samples - 1) // self.hop + 1

    @cached_property
    def analysis_window(self) -> np.ndarray:
        n = np.arange(self.win_len)
        hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.win_len)
        return np.sqrt(hann)

    @cached_property
    def _ola_norm(self) -> np.ndarray:
        # Sum of the squared analysis window over all hop-shifted copies,
        # folded to one hop period.  Strictly positive iff COLA holds.
        w2 = self.analysis_window**2
        norm = w2.reshape(self.win_len // self.hop, self.hop).sum(axis=0)
        if np.any(norm < _COLA_TOL):
            raise ConfigurationError("window/hop pair violates the COLA condition")
        return norm

    @cached_property
    def synthesis_window(self) -> np.ndarray:
        reps = self.win_len // self.hop
        return self.analysis_window / np.tile(self._ola_norm, reps)


def stft(audio: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Analyze a real signal into a (T, F) complex spectrogram.

    Args:
        audio: real 1-D sample vector, non-empty.
        cfg: frame geometry.

    Returns:
        complex128 array of shape (num_frames(len(audio)), cfg.n_bins).
    """
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1:
        raise GeometryError(f"audio must be 1-D, got shape {audio.shape}")
    if audio.size == 0:
        raise ConfigurationError("audio must be non-empty")
    if not np.all(np.isfinite(audio)):
        raise ConfigurationError("audio contains non-finite samples")

    n_frames = cfg.num_frames(audio.size)
    padded = np.zeros((n_frames - 1) * cfg.hop + cfg.win_len)
    padded[cfg.pad_head : cfg.pad_head + audio.size] = audio
    frames = sliding_window_view(padded, cfg.win_len)[:: cfg.hop]
    return np.fft.rfft(frames * cfg.analysis_window, n=cfg.fft_size)


def istft(spec: np.ndarray, cfg: StftConfig, out_len: int | None = None) -> np.ndarray:
    """Resynthesize a (T, F) spectrogram by windowed overlap-add.

    ``out_len`` selects how many samples to return, counted from the start
    of the original (un-padded) signal; it defaults to the longest span
    with full window coverage.  Inverts :func:`stft` exactly when called
    with the producing config and the original length.
    """
    spec = np.asarray(spec)
    if spec.ndim != 2:
        raise GeometryError(f"spectrogram must be 2-D, got shape {spec.shape}")
    n_frames, n_bins = spec.shape
    if n_bins != cfg.n_bins:
        raise GeometryError(
            f"spectrogram has {n_bins} bins but config expects {cfg.n_bins}"
        )
    if not np.all(np.isfinite(spec)):
        raise GeometryError("spectrogram contains non-finite entries")

    max_len = n_frames * cfg.hop - cfg.pad_head
    if out_len is None:
        out_len = max_len
    if out_len <= 0 or out_len > max_len:
        raise GeometryError(
            f"out_len must be in [1, {max_len}] for {n_frames} frames, got {out_len}"
        )

    frames = np.fft.irfft(spec, n=cfg.fft_size)[:, : cfg.win_len]
    frames = frames * cfg.synthesis_window
    out = np.zeros((n_frames - 1) * cfg.hop + cfg.win_len)
    for t in range(n_frames):
        start = t * cfg.hop
        out[start : start + cfg.win_len] += frames[t]
    return out[cfg.pad_head : cfg.pad_head + out_len]


def stft_stack(signals: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """STFT each row of a (n_channels, n_samples) array -> (n_channels, T, F)."""
    signals = np.atleast_2d(np.asarray(signals, dtype=np.float64))
    return np.stack([stft(row, cfg) for row in signals])
