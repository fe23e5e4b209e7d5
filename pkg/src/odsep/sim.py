"""Synthetic multichannel scenes with known ground truth.

A scene is a set of dry sources plus one FIR room impulse response per
(speaker, microphone) pair.  Rendering convolves every dry source with
every RIR, sums the speaker images per microphone, and optionally adds
white Gaussian noise at a prescribed SNR.  Mixtures therefore satisfy

    mixtures[p] == sum_c images[c][p] + noise[p]

exactly, sample by sample, which downstream tests rely on.

Two scene generators are provided: ``random_scene`` draws generic
exponentially decaying RIRs, while ``hop_grid_scene`` places RIR taps on
integer multiples of the STFT hop so that cross-microphone filters are
exactly representable by short per-frequency filters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigurationError, DegenerateInputError, GeometryError
from .fcp import stack_frames
from .seeding import substream
from .stft import StftConfig, stft


@dataclass
class SimScene:
    """Dry sources, per-(speaker, mic) RIRs, and a noise level."""

    dry: list[np.ndarray]
    rirs: list[list[np.ndarray]]
    sample_rate: int = 8000
    noise_snr_db: float | None = None
    seed: int = 0

    @property
    def n_speakers(self) -> int:
        return len(self.dry)

    @property
    def n_mics(self) -> int:
        return len(self.rirs[0])

    def validate(self) -> None:
        if self.n_speakers < 1:
            raise ConfigurationError("scene needs at least one speaker")
        if len(self.rirs) != self.n_speakers:
            raise GeometryError("rirs must have one row per speaker")
        n_mics = len(self.rirs[0])
        if n_mics < 1:
            raise ConfigurationError("scene needs at least one microphone")
        n = len(self.dry[0])
        for d in self.dry:
            if len(d) != n:
                raise GeometryError("all dry sources must have equal length")
            if len(d) == 0:
                raise ConfigurationError("empty dry source")
        for row in self.rirs:
            if len(row) != n_mics:
                raise GeometryError("ragged RIR table")
            for h in row:
                if len(h) == 0:
                    raise ConfigurationError("zero-length RIR")
                if not np.any(np.asarray(h) != 0.0):
                    raise ConfigurationError("all-zero RIR has no direct path")


@dataclass
class SceneTruth:
    """Rendered ground truth: per-(speaker, mic) images and mixtures."""

    images: np.ndarray    # (C, P, n) speaker images
    mixtures: np.ndarray  # (P, n)
    noise: np.ndarray     # (P, n)

    @property
    def n_speakers(self) -> int:
        return self.images.shape[0]

    @property
    def n_mics(self) -> int:
        return self.images.shape[1]


def render(scene: SimScene) -> SceneTruth:
    """Convolve, sum, and add noise; deterministic for a fixed scene seed."""
    scene.validate()
    n = len(scene.dry[0])
    c_cnt, p_cnt = scene.n_speakers, scene.n_mics
    images = np.zeros((c_cnt, p_cnt, n))
    for c in range(c_cnt):
        dry = np.asarray(scene.dry[c], dtype=np.float64)
        for p in range(p_cnt):
            h = np.asarray(scene.rirs[c][p], dtype=np.float64)
            images[c, p] = np.convolve(dry, h)[:n]

    summed = images.sum(axis=0)
    noise = np.zeros_like(summed)
    if scene.noise_snr_db is not None:
        rng = substream(scene.seed, "render/noise")
        white = rng.standard_normal(summed.shape)
        sig_energy = np.sum(summed**2, axis=1)
        if np.any(sig_energy == 0.0):
            raise DegenerateInputError("cannot set noise SNR against a silent mixture")
        white_energy = np.sum(white**2, axis=1)
        gain = np.sqrt(sig_energy / (white_energy * 10.0 ** (scene.noise_snr_db / 10.0)))
        noise = white * gain[:, None]
    return SceneTruth(images=images, mixtures=summed + noise, noise=noise)


def decay_time_constant(decay_ms: float, sample_rate: int) -> float:
    """Time constant (in samples) of the RIR envelope exp(-t/tau).

    ``decay_ms`` is the time for the envelope amplitude to fall by 20 dB,
    so a 60 dB decay spans 3 * decay_ms.
    """
    return decay_ms / 1000.0 * sample_rate / math.log(10.0)


def _random_rir(rng, rir_len, decay_ms, max_delay, sample_rate):
    delay = 0
    if max_delay > 0 and rir_len > 1:
        delay = int(rng.integers(0, min(max_delay, rir_len - 1) + 1))
    h = np.zeros(rir_len)
    n_active = rir_len - delay
    if decay_ms <= 0.0:
        env = np.zeros(n_active)
        env[0] = 1.0
    else:
        tau = decay_time_constant(decay_ms, sample_rate)
        env = np.exp(-np.arange(n_active) / tau)
    taps = 0.5 * rng.standard_normal(n_active) * env
    taps[0] = 1.0  # direct path
    h[delay:] = taps
    return h / np.linalg.norm(h)


def _random_dry(rng, n_samples, sample_rate):
    """Amplitude-modulated colored noise, a crude stand-in for speech."""
    white = rng.standard_normal(n_samples)
    pole = rng.uniform(0.2, 0.9)
    colored = lfilter([1.0], [1.0, -pole], white)
    seg = max(1, int(0.05 * sample_rate))
    knots = np.abs(rng.standard_normal(n_samples // seg + 2)) + 0.15
    env = np.interp(np.arange(n_samples) / seg, np.arange(knots.size), knots)
    sig = colored * env
    return 0.1 * sig / np.sqrt(np.mean(sig**2))


def random_scene(n_speakers: int, n_mics: int, seed: int, *,
                 dry_len: int = 8000, rir_len: int = 256, decay_ms: float = 8.0,
                 max_delay: int = 32, noise_snr_db: float | None = None,
                 sample_rate: int = 8000,
                 dry: list[np.ndarray] | None = None) -> SimScene:
    """Draw a scene with decaying-noise RIRs and AM-noise dry sources.

    The same seed always yields the same scene; ``dry`` may supply
    caller-provided source signals instead of the generated ones.
    """
    if n_speakers < 1 or n_mics < 1:
        raise ConfigurationError("need at least one speaker and one microphone")
    if rir_len < 1:
        raise ConfigurationError("rir_len must be >= 1")
    if max_delay < 0 or decay_ms < 0:
        raise ConfigurationError("max_delay and decay_ms must be non-negative")
    if dry is None:
        dry = [
            _random_dry(substream(seed, f"dry/{c}"), dry_len, sample_rate)
            for c in range(n_speakers)
        ]
    else:
        dry = [np.asarray(d, dtype=np.float64) for d in dry]
        if len(dry) != n_speakers:
            raise GeometryError("dry must provide one signal per speaker")
    rirs = [
        [
            _random_rir(substream(seed, f"rir/{c}/{p}"),
                        rir_len, decay_ms, max_delay, sample_rate)
            for p in range(n_mics)
        ]
        for c in range(n_speakers)
    ]
    return SimScene(dry=dry, rirs=rirs, sample_rate=sample_rate,
                    noise_snr_db=noise_snr_db, seed=seed)


def hop_grid_scene(n_speakers: int, n_mics: int, seed: int, *,
                   hop: int = 64, n_grid_taps: int = 6, max_grid_lag: int = 19,
                   dry_len: int = 6400, noise_snr_db: float | None = None,
                   sample_rate: int = 8000) -> tuple[SimScene, np.ndarray]:
    """Scene whose cross-mic filters live exactly on the STFT frame grid.

    The reference microphone (index 0) sees a scaled unit impulse per
    speaker; every other microphone sees taps only at integer multiples
    of ``hop``.  The per-frequency filter relating the reference image to
    any other image is then exactly the tap sequence, which makes these
    scenes exact fixtures for filter-recovery and solver tests.

    Returns the scene plus the grid-tap table with shape
    (n_speakers, n_mics, max_grid_lag + 1); entry [c, p, k] is the tap at
    time lag k * hop.  Dry sources end with enough silence that the
    frame-shift identity holds on every frame.
    """
    if n_grid_taps < 1 or max_grid_lag < 0:
        raise ConfigurationError("need n_grid_taps >= 1 and max_grid_lag >= 0")
    taps = np.zeros((n_speakers, n_mics, max_grid_lag + 1))
    rirs = []
    for c in range(n_speakers):
        rng = substream(seed, f"grid-rir/{c}")
        row = []
        for p in range(n_mics):
            if p == 0:
                amp = 0.7 + 0.6 * rng.random()
                taps[c, p, 0] = amp
                row.append(np.array([amp]))
            else:
                lags = [0] + list(
                    rng.choice(np.arange(1, max_grid_lag + 1),
                               size=min(n_grid_taps - 1, max_grid_lag),
                               replace=False)
                )
                h = np.zeros(max_grid_lag * hop + 1)
                for j, lag in enumerate(lags):
                    a = (0.9 ** j) * (0.5 + rng.random()) * rng.choice([-1.0, 1.0])
                    h[lag * hop] = a
                    taps[c, p, lag] = a
                row.append(h)
        rirs.append(row)

    tail = (max_grid_lag + 1) * hop + 4 * hop
    dry = []
    for c in range(n_speakers):
        sig = _random_dry(substream(seed, f"dry/{c}"), dry_len - tail, sample_rate)
        dry.append(np.concatenate([sig, np.zeros(tail)]))
    return (
        SimScene(dry=dry, rirs=rirs, sample_rate=sample_rate,
                 noise_snr_db=noise_snr_db, seed=seed),
        taps,
    )


def grid_taps_filterbank(taps: np.ndarray, n_bins: int, n_past: int,
                         n_future: int) -> np.ndarray:
    """Exact per-frequency filters for a hop-grid scene.

    Lays the grid taps of each non-reference microphone out on the
    (n_past, n_future) stacking used by the prediction modules; the
    reference microphone maps to itself.  Output shape (P, C, F, K).
    Conjugation is a no-op for the real taps but kept for clarity: a
    filter g produces images via conj(g) applied to stacked frames.
    """
    c_cnt, p_cnt, n_lags = taps.shape
    if n_lags - 1 > n_past:
        raise GeometryError("grid lags exceed the causal filter span")
    k = n_past + 1 + n_future
    bank = np.zeros((p_cnt, c_cnt, n_bins, k), dtype=np.complex128)
    ref = taps[:, 0, 0]
    for p in range(p_cnt):
        for c in range(c_cnt):
            if p == 0:
                bank[p, c, :, n_past] = 1.0
                continue
            for lag in range(n_lags):
                coeff = taps[c, p, lag] / ref[c]
                bank[p, c, :, n_past - lag] = np.conj(coeff)
    return bank


def oracle_relative_rir(image_ref: np.ndarray, image_target: np.ndarray,
                        cfg: StftConfig, n_past: int, n_future: int) -> np.ndarray:
    """Least-squares per-frequency filter mapping one image onto another.

    Solves, independently at each frequency, for the filter g minimizing
    ``sum_t |X_target(t, f) - g^H ztilde(t, f)|^2`` where ztilde stacks
    n_past past and n_future future frames of the reference image.  Uses
    an SVD-based solve so rank-deficient (silent) frequencies yield the
    minimum-norm filter; serves as the independent oracle against which
    the weighted-prediction path is checked.
    """
    image_ref = np.asarray(image_ref, dtype=np.float64)
    image_target = np.asarray(image_target, dtype=np.float64)
    if image_ref.shape != image_target.shape:
        raise GeometryError("images must share length")
    if not (np.any(image_ref != 0.0) and np.any(image_target != 0.0)):
        raise DegenerateInputError("both images must be nonzero")
    ref_spec = stft(image_ref, cfg)
    tgt_spec = stft(image_target, cfg)
    stacked = stack_frames(ref_spec, n_past, n_future)  # (T, F, K)
    n_bins = ref_spec.shape[1]
    k = n_past + 1 + n_future
    filters = np.zeros((n_bins, k), dtype=np.complex128)
    for f in range(n_bins):
        sol, *_ = np.linalg.lstsq(stacked[:, f, :], tgt_spec[:, f], rcond=None)
        filters[f] = np.conj(sol)
    return filters


def constraint_counts(n_frames: int, n_bins: int, n_mics: int, n_speakers: int,
                      filter_taps: int) -> tuple[int, int]:
    """(unknowns, equations) of the constrained separation model.

    One unknown per reference-mic speaker coefficient plus one filter tap
    per (non-reference mic, speaker, frequency), against one equation per
    observed mixture coefficient.  Over-determined scenes have more
    equations than unknowns once the mixture is long enough.
    """
    unknowns = (n_frames * n_bins * n_speakers
                + n_bins * (n_mics - 1) * filter_taps * n_speakers)
    equations = n_frames * n_bins * n_mics
    return unknowns, equations
