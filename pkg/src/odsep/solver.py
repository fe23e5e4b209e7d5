"""Alternating least squares for multichannel blind deconvolution.

Jointly estimates per-speaker reference-microphone spectrograms and the
per-frequency filters relating them to every other microphone, by
minimizing

    sum_{t,f} |Y_0 - sum_c X(c,t,f)|^2
  + sum_{p>=1} sum_{t,f} |Y_p - sum_c g_p(c,f)^H xtilde(c,t,f)|^2
  + lam_g * sum ||g||^2 + lam_x * sum |X|^2

over X and g in closed-form alternation.  Each half step is the exact
coordinate minimizer of this objective (diagonal loading included), so
the traced objective is non-increasing.  The raw data residual (the
objective without the loading terms) is traced alongside.

The reference microphone (index 0) enters unfiltered, which anchors the
inherent filter/source scale ambiguity; the returned filter bank carries
identity filters for it.  Solves are independent per frequency.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, GeometryError, NumericalError
from .fcp import FcpConfig, RelativeFilterBank, fcp_image, identity_filter, stack_frames
from .seeding import substream

_DIVERGENCE_REL = 1e-6
_DIVERGENCE_ABS = 1e-12


@dataclass(frozen=True)
class AlsConfig:
    """Iteration control and conditioning for the alternating solver.

    ``objective_floor`` stops the iteration once the data residual falls
    below this fraction of the mixture energy; ``tol_rel`` stops it once
    the relative objective decrease per iteration falls below it.
    """

    max_iters: int = 30
    tol_rel: float = 1e-6
    fcp: FcpConfig = field(default_factory=FcpConfig)
    init: str = "mixture_split_random"
    source_ridge: float = 1e-6
    seed: int = 0
    objective_floor: float = 1e-10
    init_noise: float = 0.1

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.tol_rel <= 0:
            raise ConfigurationError("tol_rel must be positive")
        if self.source_ridge < 0:
            raise ConfigurationError("source_ridge must be non-negative")
        if self.init not in ("mixture_split_random", "oracle", "user"):
            raise ConfigurationError(f"unknown init scheme {self.init!r}")


@dataclass
class AlsTrace:
    """Objective history; ``objective`` includes the loading penalties."""

    objective: list[float] = field(default_factory=list)
    data_term: list[float] = field(default_factory=list)
    half_step: list[tuple[str, float]] = field(default_factory=list)
    cond_estimate: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


@dataclass
class SeparationEstimate:
    """Per-speaker reference spectrograms plus filtered per-mic images."""

    zhat: np.ndarray    # (C, T, F)
    images: np.ndarray  # (P, C, T, F)


def filter_step(xhat: np.ndarray, mixtures: np.ndarray, cfg: FcpConfig,
                ridge_abs: float = 0.0) -> np.ndarray:
    """Jointly solve all speakers' filters per (mic, frequency).

    Returns (P, C, F, K) filters; the reference microphone gets identity
    filters.  Unlike the weighted single-speaker regression, this stacks
    all C*K coefficients of one microphone into a single unweighted
    least-squares problem, which is the exact coordinate minimizer of the
    blind-deconvolution objective in the filters.
    """
    xhat = np.asarray(xhat)
    mixtures = np.asarray(mixtures)
    if xhat.ndim != 3 or mixtures.ndim != 3 or xhat.shape[1:] != mixtures.shape[1:]:
        raise GeometryError("expected xhat (C, T, F), mixtures (P, T, F)")
    if not np.all(np.isfinite(xhat)):
        raise GeometryError("non-finite source estimates")
    c_cnt, n_frames, n_bins = xhat.shape
    p_cnt = mixtures.shape[0]
    k = cfg.n_taps

    filters = np.empty((p_cnt, c_cnt, n_bins, k), dtype=np.complex128)
    filters[0] = identity_filter(n_bins, cfg)[None]
    if p_cnt == 1:
        return filters

    stacked = stack_frames(xhat, cfg.n_past, cfg.n_future)     # (C, T, F, K)
    basis = stacked.transpose(1, 2, 0, 3).reshape(n_frames, n_bins, c_cnt * k)
    a = np.ascontiguousarray(basis.transpose(1, 2, 0))         # (F, CK, T)
    gram = a @ a.conj().transpose(0, 2, 1)
    gram += ridge_abs * np.eye(c_cnt * k)
    rhs = a @ np.conj(mixtures[1:]).transpose(2, 1, 0)         # (F, CK, P-1)

    sol = np.empty_like(rhs)
    for f in range(n_bins):
        try:
            factor = scipy.linalg.cho_factor(gram[f], lower=True, check_finite=False)
            sol[f] = scipy.linalg.cho_solve(factor, rhs[f], check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError(
                f"singular filter-step system at frequency {f}; increase ridge"
            ) from exc
    joint = sol.transpose(2, 0, 1).reshape(p_cnt - 1, n_bins, c_cnt, k)
    filters[1:] = joint.transpose(0, 2, 1, 3)
    return filters


def _assemble_source_normal(filters: np.ndarray, mixtures: np.ndarray,
                            n_past: int, n_future: int
                            ) -> tuple[np.ndarray, np.ndarray, int]:
    """Banded normal equations of the source update, batched over frequency.

    Unknowns at one frequency are ordered frame-major: index t*C + c.
    Returns (ab, rhs, bandwidth) where ab[f] is the upper banded storage
    of A^H A and rhs[f] = A^H y, assembled directly from the filter
    cross-correlations (the design matrix is never formed).
    """
    p_cnt, c_cnt, n_bins, k = filters.shape
    n_frames = mixtures.shape[1]
    n = n_frames * c_cnt
    bandwidth = (k - 1) * c_cnt + (c_cnt - 1)
    ab = np.zeros((n_bins, bandwidth + 1, n), dtype=np.complex128)
    rhs = np.zeros((n_bins, n), dtype=np.complex128)

    # Reference mic: per frame a C x C all-ones block, same at every f.
    for dc in range(c_cnt):
        cols = np.arange(n, dtype=np.intp).reshape(n_frames, c_cnt)[:, dc:].ravel()
        ab[:, bandwidth - dc, cols] += 1.0
    rhs += np.repeat(mixtures[0], c_cnt, axis=0).T  # conj(1) * Y_0 per (t, c)

    # Filtered mics: row t couples unknowns (t - n_past + k1, c1) and
    # (t - n_past + k2, c2) with weight g[c1,k1] * conj(g[c2,k2]); each
    # valid row adds one entry along the band diagonal.
    conj_f = np.conj(filters[1:])        # matches the design-matrix entries
    for k1 in range(k):
        for k2 in range(k):
            dt = k2 - k1
            t_lo = max(0, n_past - k1, n_past - k2)
            t_hi = min(n_frames, n_frames + n_past - k1, n_frames + n_past - k2)
            if t_hi <= t_lo:
                continue
            i_start = t_lo - n_past + k1   # first row's (t1) position
            count = t_hi - t_lo
            for c1 in range(c_cnt):
                for c2 in range(c_cnt):
                    d = dt * c_cnt + (c2 - c1)
                    if d < 0:
                        continue
                    # sum over mics of g_p[c1,:,k1] * conj(g_p[c2,:,k2])
                    val = np.einsum(
                        "pf,pf->f",
                        np.conj(conj_f[:, c1, :, k1]), conj_f[:, c2, :, k2]
                    )
                    j0 = (i_start + dt) * c_cnt + c2
                    ab[:, bandwidth - d, j0 : j0 + count * c_cnt : c_cnt] += (
                        val[:, None]
                    )
        # rhs: conj(entry) * Y_p summed over rows; entry = conj(g[c,k1])
        t_lo = max(0, n_past - k1)
        t_hi = min(n_frames, n_frames + n_past - k1)
        if t_hi <= t_lo:
            continue
        t1 = np.arange(t_lo, t_hi) - n_past + k1
        for c in range(c_cnt):
            # (P-1, F) filter values against (P-1, rows, F) mixture slabs
            contrib = np.einsum(
                "pf,ptf->tf",
                np.conj(conj_f[:, c, :, k1]), mixtures[1:, t_lo:t_hi, :]
            )
            rhs[:, t1 * c_cnt + c] += contrib.T
    return ab, rhs, bandwidth


def _cond_estimate(ab, factor, bandwidth, n, n_iters=4):
    """Infinity-norm over smallest-eigenvalue estimate via inverse power."""
    probe = substream(0, "cond-probe").standard_normal(n)
    v = probe / np.linalg.norm(probe)
    growth = 1.0
    for _ in range(n_iters):
        v = scipy.linalg.cho_solve_banded((factor, False), v, check_finite=False)
        growth = np.linalg.norm(v)
        v = v / growth
    # infinity norm from the banded storage (Hermitian: mirror the band)
    row_sums = np.abs(ab[bandwidth]).copy()
    for d in range(1, bandwidth + 1):
        mags = np.abs(ab[bandwidth - d, d:])
        row_sums[d:] += mags
        row_sums[:-d] += mags
    return float(row_sums.max() * growth)


def source_step(filters: np.ndarray, mixtures: np.ndarray, cfg: FcpConfig,
                source_ridge: float = 0.0) -> tuple[np.ndarray, float]:
    """Exact least-squares update of the per-speaker spectrograms.

    Per frequency, solves the banded normal equations coupling all
    speakers and frames: reference-mic rows are instantaneous sums,
    other rows are framewise convolutions with the current filters.
    Returns the updated (C, T, F) estimates and a condition-number
    estimate (the worst frequency's).
    """
    filters = np.asarray(filters)
    mixtures = np.asarray(mixtures)
    if not np.all(np.isfinite(filters)):
        raise GeometryError("non-finite filters")
    p_cnt, c_cnt, n_bins, k = filters.shape
    if mixtures.shape[0] != p_cnt or mixtures.shape[2] != n_bins:
        raise GeometryError("filters and mixtures disagree on mics or bins")
    n_frames = mixtures.shape[1]

    ab, rhs, bandwidth = _assemble_source_normal(
        filters, mixtures, cfg.n_past, cfg.n_future
    )
    ab[:, bandwidth, :] += source_ridge
    out = np.empty((c_cnt, n_frames, n_bins), dtype=np.complex128)
    factors = []
    diag_ratio = np.empty(n_bins)
    for f in range(n_bins):
        try:
            factor = scipy.linalg.cholesky_banded(ab[f], lower=False,
                                                  check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError(
                f"singular source-step system at frequency {f}; "
                "increase source_ridge"
            ) from exc
        sol = scipy.linalg.cho_solve_banded((factor, False), rhs[f],
                                            check_finite=False)
        out[:, :, f] = sol.reshape(n_frames, c_cnt).T
        factors.append(factor)
        diag = ab[f, bandwidth, :].real
        diag_ratio[f] = diag.max() / diag.min()
    # refine the condition estimate only where the cheap proxy is worst
    f_worst = int(diag_ratio.argmax())
    cond = _cond_estimate(ab[f_worst], factors[f_worst], bandwidth,
                          n_frames * c_cnt)
    return out, cond


def objective(mixtures: np.ndarray, xhat: np.ndarray, filters: np.ndarray,
              cfg: FcpConfig, lam_g: float = 0.0, lam_x: float = 0.0
              ) -> tuple[float, float]:
    """(loaded objective, raw data residual) of the current iterate."""
    stacked = stack_frames(xhat, cfg.n_past, cfg.n_future)
    data = float(np.sum(np.abs(mixtures[0] - xhat.sum(axis=0)) ** 2))
    if filters.shape[0] > 1:
        pred = np.einsum("pcfk,ctfk->ptf", np.conj(filters[1:]), stacked)
        data += float(np.sum(np.abs(mixtures[1:] - pred) ** 2))
    penalty = (lam_g * float(np.sum(np.abs(filters[1:]) ** 2))
               + lam_x * float(np.sum(np.abs(xhat) ** 2)))
    return data + penalty, data


def _initial_estimates(mixtures, n_speakers, cfg, init_images):
    if cfg.init in ("oracle", "user"):
        if init_images is None:
            raise ConfigurationError(f"init={cfg.init!r} requires init_images")
        init_images = np.asarray(init_images, dtype=np.complex128)
        expected = (n_speakers,) + mixtures.shape[1:]
        if init_images.shape != expected:
            raise GeometryError(
                f"init_images must have shape {expected}, got {init_images.shape}"
            )
        return init_images.copy()
    rng = substream(cfg.seed, "als-init")
    shape = (n_speakers,) + mixtures.shape[1:]
    wiggle = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    wiggle /= np.sqrt(2.0)
    return mixtures[0] / n_speakers * (1.0 + cfg.init_noise * wiggle)


def solve(mixtures: np.ndarray, n_speakers: int, cfg: AlsConfig,
          init_images: np.ndarray | None = None
          ) -> tuple[SeparationEstimate, AlsTrace, RelativeFilterBank]:
    """Run the alternating solver on (P, T, F) mixture spectrograms.

    Deterministic for a fixed config and seed.  Raises NumericalError if
    the objective ever increases beyond slack, which indicates a
    conditioning problem rather than normal non-convergence.
    """
    mixtures = np.asarray(mixtures, dtype=np.complex128)
    if mixtures.ndim != 3:
        raise GeometryError("mixtures must have shape (P, T, F)")
    if not np.all(np.isfinite(mixtures)):
        raise GeometryError("non-finite mixtures")
    if n_speakers < 1:
        raise ConfigurationError("need at least one speaker")
    p_cnt, n_frames, n_bins = mixtures.shape
    if p_cnt <= n_speakers:
        warnings.warn(
            f"{p_cnt} mics for {n_speakers} speakers is not over-determined; "
            "blind recovery is not identifiable in general"
        )

    mix_energy = float(np.sum(np.abs(mixtures) ** 2))
    if mix_energy == 0.0:
        raise ConfigurationError("all-zero mixture")
    mean_power = mix_energy / mixtures.size
    # Loading is frozen up front so the alternation minimizes one fixed
    # objective; per-step trace-relative loading would break monotonicity.
    lam_g = cfg.fcp.ridge * n_frames * mean_power
    lam_x = cfg.source_ridge

    xhat = _initial_estimates(mixtures, n_speakers, cfg, init_images)
    trace = AlsTrace()
    prev_half = None

    def check_descent(value, stage):
        nonlocal prev_half
        if prev_half is not None:
            slack = _DIVERGENCE_REL * prev_half + _DIVERGENCE_ABS * mix_energy
            if value > prev_half + slack:
                raise NumericalError(
                    f"objective increased during {stage} "
                    f"({prev_half:.6e} -> {value:.6e}); conditioning bug"
                )
        prev_half = value
        trace.half_step.append((stage, value))

    filters = None
    for it in range(cfg.max_iters):
        filters = filter_step(xhat, mixtures, cfg.fcp, lam_g)
        value, _ = objective(mixtures, xhat, filters, cfg.fcp, lam_g, lam_x)
        check_descent(value, "filter")

        xhat, cond = source_step(filters, mixtures, cfg.fcp, lam_x)
        value, data = objective(mixtures, xhat, filters, cfg.fcp, lam_g, lam_x)
        check_descent(value, "source")

        trace.objective.append(value)
        trace.data_term.append(data)
        trace.cond_estimate.append(cond)
        trace.iterations = it + 1
        if data <= cfg.objective_floor * mix_energy:
            trace.converged = True
            break
        if it > 0:
            prev = trace.objective[-2]
            if prev - value <= cfg.tol_rel * prev:
                trace.converged = True
                break

    # Re-sync filters to the final source estimates so the returned bank
    # and images are mutually consistent; this can only lower the objective.
    filters = filter_step(xhat, mixtures, cfg.fcp, lam_g)
    value, _ = objective(mixtures, xhat, filters, cfg.fcp, lam_g, lam_x)
    check_descent(value, "filter")

    bank = RelativeFilterBank(filters=filters, cfg=cfg.fcp)
    estimate = SeparationEstimate(zhat=xhat, images=bank.apply(xhat))
    return estimate, trace, bank


def extract_reference_images(estimate: SeparationEstimate,
                             bank: RelativeFilterBank) -> np.ndarray:
    """Per-speaker reference-microphone images from the solved state."""
    return np.stack([
        fcp_image(estimate.zhat[c], bank.filters[0, c], bank.cfg)
        for c in range(estimate.zhat.shape[0])
    ])
