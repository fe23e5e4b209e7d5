"""Frequency-permutation repair and utterance-level speaker matching.

Per-frequency separation can assign speaker labels inconsistently across
frequencies.  ``oracle_freq_align`` repairs labels against known
references; ``corr_freq_align`` is a blind greedy pass that groups
frequencies by the correlation of their frame-wise log-magnitude
envelopes against running per-speaker centroids.  The greedy scheme is a
deliberately simple design: sweep frequencies in ascending order, seed
the centroids from the lowest eighth of the spectrum (where speech
energy concentrates), and repeat sweeps against the full centroids until
the labeling stops changing.
"""

from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, GeometryError

MAX_SPEAKERS = 8
_LOG_FLOOR = 1e-8


@dataclass
class FrequencyPermutation:
    """Per-frequency relabeling: output slot c takes input perm[f, c]."""

    perm: np.ndarray  # (F, C) int

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        c = perm.shape[1]
        ref = np.arange(c)
        if not np.all(np.sort(perm, axis=1) == ref):
            raise ConfigurationError("each row must be a permutation of 0..C-1")
        self.perm = perm

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.perm == np.arange(self.perm.shape[1])))

    def apply(self, specs: np.ndarray) -> np.ndarray:
        """Relabel (C, T, F) spectrograms frequency by frequency."""
        specs = np.asarray(specs)
        self._check_shape(specs)
        out = np.empty_like(specs)
        for f in range(self.perm.shape[0]):
            out[:, :, f] = specs[self.perm[f], :, f]
        return out

    def apply_filterbank(self, filters: np.ndarray) -> np.ndarray:
        """Relabel the speaker axis of a (P, C, F, K) filter array."""
        filters = np.asarray(filters)
        out = np.empty_like(filters)
        for f in range(self.perm.shape[0]):
            out[:, :, f] = filters[:, self.perm[f], f]
        return out

    def _check_shape(self, specs):
        if specs.shape[0] != self.perm.shape[1] or specs.shape[2] != self.perm.shape[0]:
            raise GeometryError(
                f"permutation ({self.perm.shape}) does not match spectrograms "
                f"{specs.shape}"
            )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["f", "perm"])
            for f, row in enumerate(self.perm):
                writer.writerow([f, " ".join(str(int(v)) for v in row)])

    @classmethod
    def read_csv(cls, path) -> "FrequencyPermutation":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for _, cell in reader:
                rows.append([int(v) for v in cell.split()])
        return cls(perm=np.asarray(rows, dtype=np.int64))


def _check_speaker_count(c: int) -> None:
    if c > MAX_SPEAKERS:
        raise ConfigurationError(
            f"permutation search is factorial; at most {MAX_SPEAKERS} speakers"
        )


def oracle_freq_align(estimates: np.ndarray, references: np.ndarray
                      ) -> tuple[np.ndarray, FrequencyPermutation]:
    """Relabel each frequency to minimize squared error against references."""
    estimates = np.asarray(estimates)
    references = np.asarray(references)
    if estimates.shape != references.shape:
        raise GeometryError("estimates and references must share shape (C, T, F)")
    c_cnt, _, n_bins = estimates.shape
    _check_speaker_count(c_cnt)

    # cost[a, b, f]: squared error of putting estimate a in slot b at frequency f
    diff = estimates[:, None] - references[None, :]          # (C, C, T, F)
    cost = (np.abs(diff) ** 2).sum(axis=2)                   # (C, C, F)
    perms = list(itertools.permutations(range(c_cnt)))
    totals = np.stack(
        [cost[list(p), range(c_cnt)].sum(axis=0) for p in perms]
    )                                                        # (n_perms, F)
    best = totals.argmin(axis=0)
    perm = np.asarray([perms[b] for b in best], dtype=np.int64)
    fperm = FrequencyPermutation(perm=perm)
    return fperm.apply(estimates), fperm


def _pearson(u: np.ndarray, v: np.ndarray) -> float:
    uc = u - u.mean()
    vc = v - v.mean()
    denom = np.linalg.norm(uc) * np.linalg.norm(vc)
    if denom == 0.0:
        return 0.0
    return float(np.dot(uc, vc) / denom)


def corr_freq_align(estimates: np.ndarray, *, max_sweeps: int = 10,
                    log_floor: float = _LOG_FLOOR
                    ) -> tuple[np.ndarray, FrequencyPermutation]:
    """Blind frequency alignment by envelope correlation.

    Maintains per-speaker centroid envelopes (mean log-magnitude over
    frequencies aligned so far) and assigns, at each frequency, the label
    permutation maximizing the summed Pearson correlation between that
    frequency's envelopes and the centroids.  The first sweep updates
    centroids as it goes; later sweeps re-decide every frequency against
    fixed full-band centroids until nothing changes or ``max_sweeps``.
    All-constant envelopes leave the identity permutation and emit a
    warning.
    """
    estimates = np.asarray(estimates)
    if estimates.ndim != 3:
        raise GeometryError("estimates must have shape (C, T, F)")
    c_cnt, n_frames, n_bins = estimates.shape
    if c_cnt < 2:
        raise ConfigurationError("alignment needs at least two speakers")
    _check_speaker_count(c_cnt)

    env = np.log(np.maximum(np.abs(estimates), log_floor))   # (C, T, F)
    env = env.transpose(0, 2, 1)                             # (C, F, T)
    if np.allclose(env.std(axis=-1), 0.0):
        warnings.warn("all-constant envelopes; returning identity permutation")
        perm = np.tile(np.arange(c_cnt), (n_bins, 1))
        fperm = FrequencyPermutation(perm=perm)
        return estimates.copy(), fperm

    perms = list(itertools.permutations(range(c_cnt)))
    perm = np.tile(np.arange(c_cnt), (n_bins, 1))
    n_seed = max(2, n_bins // 8)

    def best_perm(f, centroids):
        scores = [
            sum(_pearson(env[p[c], f], centroids[c]) for c in range(c_cnt))
            for p in perms
        ]
        return np.asarray(perms[int(np.argmax(scores))], dtype=np.int64)

    for sweep in range(max_sweeps):
        changed = 0
        if sweep == 0:
            centroid_sum = env[:, :n_seed].sum(axis=1)
            centroid_cnt = n_seed
            for f in range(n_bins):
                new = best_perm(f, centroid_sum / centroid_cnt)
                changed += int(not np.array_equal(new, perm[f]))
                perm[f] = new
                centroid_sum += env[new, f]
                centroid_cnt += 1
        else:
            aligned = np.stack([env[perm[f], f] for f in range(n_bins)], axis=1)
            centroids = aligned.mean(axis=1)
            for f in range(n_bins):
                new = best_perm(f, centroids)
                changed += int(not np.array_equal(new, perm[f]))
                perm[f] = new
        if changed == 0 and sweep > 0:
            break

    fperm = FrequencyPermutation(perm=perm)
    return fperm.apply(estimates), fperm


def pit_speaker_permutation(estimates: np.ndarray, references: np.ndarray,
                            metric=None) -> tuple[tuple[int, ...], np.ndarray]:
    """Exhaustive speaker assignment maximizing the mean metric.

    Returns the permutation (output slot c takes estimate perm[c]) and
    the per-slot metric values under it.  Default metric is SI-SDR.
    """
    if metric is None:
        from .metrics import si_sdr
        metric = si_sdr
    estimates = np.atleast_2d(np.asarray(estimates))
    references = np.atleast_2d(np.asarray(references))
    if estimates.shape != references.shape:
        raise GeometryError("estimates and references must share shape (C, n)")
    c_cnt = estimates.shape[0]
    _check_speaker_count(c_cnt)

    table = np.empty((c_cnt, c_cnt))
    for a in range(c_cnt):
        for b in range(c_cnt):
            table[a, b] = metric(estimates[a], references[b])
    best_perm, best_score = None, -np.inf
    for p in itertools.permutations(range(c_cnt)):
        score = table[list(p), range(c_cnt)].mean()
        if score > best_score:
            best_perm, best_score = p, score
    values = table[list(best_perm), range(c_cnt)]
    return best_perm, values
