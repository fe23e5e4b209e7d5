"""WAV input/output.

Internally signals are float64 in [-1, 1]; on disk either IEEE float32
or 16-bit PCM.  Multichannel data uses shape (n_channels, n_samples).
PCM samples are scaled by 32767 symmetrically on write and read, so a
write/read round trip of in-range data is exact at 16-bit resolution.
"""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from .errors import ConfigurationError

_PCM_SCALE = 32767.0


def write_wav(path, data: np.ndarray, sample_rate: int = 8000,
              sample_format: str = "float32") -> None:
    """Write a mono (n,) or multichannel (ch, n) signal."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        frames = data
    elif data.ndim == 2:
        frames = data.T
    else:
        raise ConfigurationError(f"data must be 1-D or 2-D, got shape {data.shape}")
    if sample_format == "float32":
        wavfile.write(path, sample_rate, frames.astype(np.float32))
    elif sample_format == "pcm16":
        scaled = np.round(np.clip(frames, -1.0, 1.0) * _PCM_SCALE)
        wavfile.write(path, sample_rate, scaled.astype(np.int16))
    else:
        raise ConfigurationError(f"unsupported sample_format: {sample_format!r}")


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV file; returns (float64 data, sample_rate).

    Mono comes back as (n,), multichannel as (n_channels, n_samples).
    Only 16-bit PCM and 32-bit float files are accepted.
    """
    sample_rate, frames = wavfile.read(path)
    if frames.dtype == np.int16:
        data = frames.astype(np.float64) / _PCM_SCALE
    elif frames.dtype == np.float32:
        data = frames.astype(np.float64)
    else:
        raise ConfigurationError(
            f"unsupported WAV sample format {frames.dtype}; use pcm16 or float32"
        )
    if data.ndim == 2:
        data = data.T
    return data, int(sample_rate)
