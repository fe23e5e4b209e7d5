"""Separation quality metrics on time-domain signals.

SI-SDR projects the estimate onto the reference before computing the
distortion ratio, making it invariant to estimate scaling; SNR is its
plain non-scale-invariant companion.  Degenerate ratios are clamped to
+/- 120 dB sentinels instead of infinities.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, GeometryError

SENTINEL_DB = 120.0


def _check_pair(est: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 1:
        raise GeometryError("estimate and reference must be 1-D of equal length")
    if not np.any(ref != 0.0):
        raise DegenerateInputError("reference signal is all zero")
    return est, ref


def _ratio_db(num: float, den: float) -> float:
    if den == 0.0:
        return SENTINEL_DB
    if num == 0.0:
        return -SENTINEL_DB
    return float(np.clip(10.0 * np.log10(num / den), -SENTINEL_DB, SENTINEL_DB))


def si_sdr(est: np.ndarray, ref: np.ndarray) -> float:
    """Scale-invariant signal-to-distortion ratio in dB."""
    est, ref = _check_pair(est, ref)
    scale = np.dot(est, ref) / np.dot(ref, ref)
    target = scale * ref
    return _ratio_db(np.sum(target**2), np.sum((est - target) ** 2))


def snr(est: np.ndarray, ref: np.ndarray) -> float:
    """Plain signal-to-noise ratio of the estimation error in dB."""
    est, ref = _check_pair(est, ref)
    return _ratio_db(np.sum(ref**2), np.sum((ref - est) ** 2))


@dataclass
class MetricReport:
    """Per-speaker metrics under the best speaker assignment."""

    permutation: tuple[int, ...]
    si_sdr: np.ndarray
    snr: np.ndarray
    si_sdr_delta: np.ndarray
    snr_delta: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["speaker", "si_sdr", "snr", "si_sdr_delta", "snr_delta"])
            for c in range(len(self.permutation)):
                writer.writerow([
                    c + 1,
                    f"{self.si_sdr[c]:.12g}",
                    f"{self.snr[c]:.12g}",
                    f"{self.si_sdr_delta[c]:.12g}",
                    f"{self.snr_delta[c]:.12g}",
                ])


def report(estimates: np.ndarray, references: np.ndarray,
           mixture: np.ndarray) -> MetricReport:
    """Score estimates against references relative to the mixture baseline.

    Applies the metric-optimal speaker assignment (SI-SDR) and reports,
    per matched speaker, SI-SDR and SNR plus their improvement over using
    the mixture itself as the estimate.
    """
    from .align import pit_speaker_permutation

    estimates = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    references = np.atleast_2d(np.asarray(references, dtype=np.float64))
    mixture = np.asarray(mixture, dtype=np.float64)
    if estimates.shape != references.shape:
        raise GeometryError("need matching (C, n) estimates and references")
    if mixture.shape != references.shape[1:]:
        raise GeometryError("mixture length must match the references")

    perm, si_vals = pit_speaker_permutation(estimates, references, metric=si_sdr)
    snr_vals = np.array([
        snr(estimates[perm[c]], references[c]) for c in range(len(perm))
    ])
    mix_si = np.array([si_sdr(mixture, ref) for ref in references])
    mix_snr = np.array([snr(mixture, ref) for ref in references])
    return MetricReport(
        permutation=perm,
        si_sdr=si_vals,
        snr=snr_vals,
        si_sdr_delta=si_vals - mix_si,
        snr_delta=snr_vals - mix_snr,
    )
