"""Batch experiment front-end.

Every command reads an optional INI-style config file (section named
after the command, plus a [common] section), applies command-line
overrides on top, and writes a reproducibility manifest next to its
artifacts.  Identical config and seed give byte-identical outputs.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (ConfigurationError, DegenerateInputError, GeometryError,
                     NumericalError)
from .fcp import FcpConfig, fcp_image
from .losses import LossWeights, McVariant, combined_loss, loss_surface
from .metrics import report
from .sim import SceneTruth, random_scene, render
from .solver import AlsConfig, solve
from .stft import StftConfig, istft, stft, stft_stack
from .wavio import read_wav, write_wav
from .wiener import WienerConfig, apply_wiener, estimate_wiener, \
    taps_from_stft_filter, wiener_mc_loss


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(outdir: Path, command: str, config: dict,
                    outputs: list[Path]) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "outputs": [
            {"path": p.name, "sha256": _sha256(p)} for p in sorted(outputs)
        ],
    }
    path = outdir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _fmt(value: float) -> str:
    return f"{value:.12g}"


def _merge_config(args: argparse.Namespace, defaults: dict) -> dict:
    """Precedence: command line > config file > defaults."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        parser = configparser.ConfigParser()
        read = parser.read(args.config)
        if not read:
            raise OSError(f"cannot read config file {args.config}")
        for section in ("common", args.command):
            if not parser.has_section(section):
                continue
            for key, raw in parser.items(section):
                if key not in defaults:
                    raise ConfigurationError(
                        f"unknown key {key!r} in config section [{section}]"
                    )
                ref = defaults[key]
                if isinstance(ref, bool):
                    merged[key] = parser.getboolean(section, key)
                elif isinstance(ref, int):
                    merged[key] = parser.getint(section, key)
                elif isinstance(ref, float):
                    merged[key] = parser.getfloat(section, key)
                else:
                    merged[key] = raw
    for key in defaults:
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            merged[key] = cli_val
    return merged


def _out_dir(path_str: str) -> Path:
    path = Path(path_str)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------- simulate

SIMULATE_DEFAULTS = {
    "speakers": 2, "mics": 3, "seed": 0, "dry_len": 8000, "rir_len": 256,
    "decay_ms": 8.0, "max_delay": 32, "noise_snr_db": 0.0, "noise": False,
    "sample_rate": 8000, "out": "scene",
}


def save_truth_bundle(outdir: Path, truth: SceneTruth, sample_rate: int
                      ) -> list[Path]:
    """Write mixture, per-speaker image, and noise WAVs."""
    outputs = []
    mix_path = outdir / "mixture.wav"
    write_wav(mix_path, truth.mixtures, sample_rate)
    outputs.append(mix_path)
    for c in range(truth.n_speakers):
        path = outdir / f"image_c{c + 1}.wav"
        write_wav(path, truth.images[c], sample_rate)
        outputs.append(path)
    noise_path = outdir / "noise.wav"
    write_wav(noise_path, truth.noise, sample_rate)
    outputs.append(noise_path)
    return outputs


def load_truth_bundle(directory) -> tuple[SceneTruth, int]:
    """Read back a bundle written by :func:`save_truth_bundle`."""
    directory = Path(directory)
    mixtures, sr = read_wav(directory / "mixture.wav")
    mixtures = np.atleast_2d(mixtures)
    image_paths = sorted(directory.glob("image_c*.wav"))
    if not image_paths:
        raise OSError(f"no speaker images found in {directory}")
    images = np.stack([np.atleast_2d(read_wav(p)[0]) for p in image_paths])
    noise_path = directory / "noise.wav"
    if noise_path.exists():
        noise = np.atleast_2d(read_wav(noise_path)[0])
    else:
        noise = mixtures - images.sum(axis=0)
    return SceneTruth(images=images, mixtures=mixtures, noise=noise), sr


def cmd_simulate(cfg: dict) -> int:
    if cfg["speakers"] < 1 or cfg["mics"] < 1:
        raise ConfigurationError("need speakers >= 1 and mics >= 1")
    scene = random_scene(
        cfg["speakers"], cfg["mics"], cfg["seed"],
        dry_len=cfg["dry_len"], rir_len=cfg["rir_len"],
        decay_ms=cfg["decay_ms"], max_delay=cfg["max_delay"],
        noise_snr_db=cfg["noise_snr_db"] if cfg["noise"] else None,
        sample_rate=cfg["sample_rate"],
    )
    truth = render(scene)
    outdir = _out_dir(cfg["out"])
    outputs = save_truth_bundle(outdir, truth, cfg["sample_rate"])
    _write_manifest(outdir, "simulate", cfg, outputs)
    print(f"wrote {len(outputs)} files to {outdir}")
    return 0


# ---------------------------------------------------------------- separate

SEPARATE_DEFAULTS = {
    "mixture": "", "truth_dir": "", "speakers": 2, "seed": 0,
    "max_iters": 30, "tol_rel": 1e-6, "n_past": 19, "n_future": 0,
    "ridge": 1e-6, "source_ridge": 1e-6, "init": "mixture_split_random",
    "align": "none", "out": "separated",
}


def _load_mixture(cfg: dict) -> tuple[np.ndarray, int]:
    if not cfg["mixture"]:
        raise ConfigurationError("--mixture is required")
    mixture, sr = read_wav(cfg["mixture"])
    return np.atleast_2d(mixture), sr


def cmd_separate(cfg: dict) -> int:
    mixture, sr = _load_mixture(cfg)
    stft_cfg = StftConfig(sample_rate=sr)
    fcp_cfg = FcpConfig(n_past=cfg["n_past"], n_future=cfg["n_future"],
                        ridge=cfg["ridge"])
    als_cfg = AlsConfig(
        max_iters=cfg["max_iters"], tol_rel=cfg["tol_rel"], fcp=fcp_cfg,
        init=cfg["init"], source_ridge=cfg["source_ridge"], seed=cfg["seed"],
    )
    if cfg["align"] not in ("none", "corr", "oracle"):
        raise ConfigurationError("--align must be none, corr, or oracle")

    truth = None
    if cfg["truth_dir"]:
        truth, truth_sr = load_truth_bundle(cfg["truth_dir"])
        if truth_sr != sr:
            raise ConfigurationError("truth bundle sample rate mismatch")
    if cfg["align"] == "oracle" and truth is None:
        raise ConfigurationError("--align oracle requires --truth-dir")
    if als_cfg.init != "mixture_split_random" and truth is None:
        raise ConfigurationError(f"--init {als_cfg.init} requires --truth-dir")

    mix_specs = stft_stack(mixture, stft_cfg)
    init_images = None
    if als_cfg.init in ("oracle", "user"):
        init_images = np.stack([
            stft(truth.images[c, 0], stft_cfg) for c in range(cfg["speakers"])
        ])
    estimate, trace, bank = solve(mix_specs, cfg["speakers"], als_cfg,
                                  init_images=init_images)

    zhat = estimate.zhat
    filters = bank.filters
    perm = None
    if cfg["align"] != "none":
        if cfg["align"] == "oracle":
            refs = np.stack([
                stft(truth.images[c, 0], stft_cfg) for c in range(cfg["speakers"])
            ])
            from .align import oracle_freq_align
            zhat, perm = oracle_freq_align(zhat, refs)
        else:
            from .align import corr_freq_align
            zhat, perm = corr_freq_align(zhat)
        filters = perm.apply_filterbank(filters)

    ref_images = np.stack([
        fcp_image(zhat[c], filters[0, c], fcp_cfg)
        for c in range(cfg["speakers"])
    ])
    n_samples = mixture.shape[1]
    est_time = np.stack([
        istft(ref_images[c], stft_cfg, n_samples)
        for c in range(cfg["speakers"])
    ])

    outdir = _out_dir(cfg["out"])
    outputs = []
    for c in range(cfg["speakers"]):
        path = outdir / f"estimate_c{c + 1}.wav"
        write_wav(path, est_time[c], sr)
        outputs.append(path)
    trace_path = outdir / "trace.csv"
    _write_csv(trace_path, ["iter", "objective"],
               [(i, _fmt(v)) for i, v in enumerate(trace.objective)])
    outputs.append(trace_path)
    spec_path = outdir / "estimates.npz"
    np.savez(spec_path, zhat=zhat, images=estimate.images, filters=filters)
    outputs.append(spec_path)
    if perm is not None:
        perm_path = outdir / "permutation.csv"
        perm.write_csv(perm_path)
        outputs.append(perm_path)
    if truth is not None:
        metrics_path = outdir / "metrics.csv"
        rep = report(est_time, truth.images[:, 0], mixture[0])
        rep.write_csv(metrics_path)
        outputs.append(metrics_path)
    _write_manifest(outdir, "separate", cfg, outputs)
    print(f"solved in {trace.iterations} iterations "
          f"(converged={trace.converged}); wrote {outdir}")
    return 0


# ------------------------------------------------------------- loss-surface

SURFACE_DEFAULTS = {
    "truth_dir": "", "grid": 21, "variant": "ref-unfiltered",
    "n_past": 19, "n_future": 0, "ridge": 1e-6, "xi": 1e-4,
    "freeze_filters": False, "out": "surface",
}


def cmd_loss_surface(cfg: dict) -> int:
    if not cfg["truth_dir"]:
        raise ConfigurationError("--truth-dir is required")
    truth, sr = load_truth_bundle(cfg["truth_dir"])
    stft_cfg = StftConfig(sample_rate=sr)
    fcp_cfg = FcpConfig(n_past=cfg["n_past"], n_future=cfg["n_future"],
                        ridge=cfg["ridge"], xi=cfg["xi"])
    rows = loss_surface(truth, stft_cfg, fcp_cfg, LossWeights(),
                        grid_n=cfg["grid"], variant=McVariant(cfg["variant"]),
                        freeze_filters=cfg["freeze_filters"])
    outdir = _out_dir(cfg["out"])
    path = outdir / "surface.csv"
    _write_csv(path, ["mu", "nu", "loss"],
               [(_fmt(mu), _fmt(nu), _fmt(val)) for mu, nu, val in rows])
    _write_manifest(outdir, "loss-surface", cfg, [path])
    print(f"wrote {path}")
    return 0


# --------------------------------------------------------------- loss-eval

LOSS_EVAL_DEFAULTS = {
    "mixture": "", "estimates": "", "variant": "all-filtered",
    "n_past": 19, "n_future": 0, "ridge": 1e-6, "xi": 1e-4,
    "gamma": 0.04, "out": "loss",
}


def _load_estimates(cfg: dict, sr: int) -> np.ndarray:
    if not cfg["estimates"]:
        raise ConfigurationError("--estimates is required")
    paths = [p for p in cfg["estimates"].split(",") if p]
    signals = []
    for p in paths:
        data, est_sr = read_wav(p)
        if est_sr != sr:
            raise ConfigurationError(f"sample rate mismatch in {p}")
        signals.append(np.atleast_2d(data)[0])
    return np.stack(signals)


def cmd_loss_eval(cfg: dict) -> int:
    mixture, sr = _load_mixture(cfg)
    estimates = _load_estimates(cfg, sr)
    stft_cfg = StftConfig(sample_rate=sr)
    fcp_cfg = FcpConfig(n_past=cfg["n_past"], n_future=cfg["n_future"],
                        ridge=cfg["ridge"], xi=cfg["xi"])
    weights = LossWeights(gamma=cfg["gamma"])
    mix_specs = stft_stack(mixture, stft_cfg)
    zhats = stft_stack(estimates, stft_cfg)
    breakdown, _ = combined_loss(mix_specs, zhats, fcp_cfg, weights,
                                 variant=McVariant(cfg["variant"]))
    outdir = _out_dir(cfg["out"])
    path = outdir / "loss.csv"
    rows = [("variant", cfg["variant"]), ("gamma", _fmt(breakdown.gamma))]
    for p, val in enumerate(breakdown.mc_per_mic):
        rows.append((f"mc_mic{p + 1}", _fmt(val)))
    for p, val in enumerate(breakdown.isms_per_mic):
        rows.append((f"isms_mic{p + 1}", _fmt(val)))
    rows += [("mc_total", _fmt(breakdown.mc_total)),
             ("isms_total", _fmt(breakdown.isms_total)),
             ("combined", _fmt(breakdown.combined))]
    _write_csv(path, ["key", "value"], rows)
    _write_manifest(outdir, "loss-eval", cfg, [path])
    print(f"combined loss {breakdown.combined:.6g}; wrote {path}")
    return 0


# ------------------------------------------------------------------ wiener

WIENER_DEFAULTS = {
    "mixture": "", "estimates": "", "taps": 512, "taps_from_k": 0,
    "future_taps": 100, "ridge": 1e-8, "out": "wiener",
}


def cmd_wiener(cfg: dict) -> int:
    mixture, sr = _load_mixture(cfg)
    estimates = _load_estimates(cfg, sr)
    taps = cfg["taps"]
    if cfg["taps_from_k"]:
        taps = taps_from_stft_filter(cfg["taps_from_k"], sample_rate=sr)
    future = min(cfg["future_taps"], taps - 1)
    wf_cfg = WienerConfig(taps=taps, future_taps=future, ridge=cfg["ridge"])
    loss = wiener_mc_loss(mixture, estimates, wf_cfg)
    outdir = _out_dir(cfg["out"])
    outputs = []
    for c, z in enumerate(estimates):
        filt = estimate_wiener(z, mixture[0], wf_cfg)
        path = outdir / f"filtered_c{c + 1}.wav"
        write_wav(path, apply_wiener(filt, z, wf_cfg.future_taps), sr)
        outputs.append(path)
    path = outdir / "wiener_loss.csv"
    _write_csv(path, ["key", "value"],
               [("taps", taps), ("future_taps", future), ("loss", _fmt(loss))])
    outputs.append(path)
    _write_manifest(outdir, "wiener", cfg, outputs)
    print(f"wiener loss {loss:.6g} with {taps} taps; wrote {outdir}")
    return 0


# ----------------------------------------------------------------- metrics

METRICS_DEFAULTS = {
    "estimates": "", "truth_dir": "", "out": "metrics",
}


def cmd_metrics(cfg: dict) -> int:
    if not cfg["truth_dir"]:
        raise ConfigurationError("--truth-dir is required")
    truth, sr = load_truth_bundle(cfg["truth_dir"])
    estimates = _load_estimates(cfg, sr)
    n = min(estimates.shape[1], truth.images.shape[2])
    rep = report(estimates[:, :n], truth.images[:, 0, :n], truth.mixtures[0, :n])
    outdir = _out_dir(cfg["out"])
    path = outdir / "metrics.csv"
    rep.write_csv(path)
    _write_manifest(outdir, "metrics", cfg, [path])
    print(f"mean si_sdr {np.mean(rep.si_sdr):.2f} dB; wrote {path}")
    return 0


# ------------------------------------------------------------------- align

ALIGN_DEFAULTS = {
    "estimates": "", "mode": "corr", "truth_dir": "", "out": "aligned",
}


def cmd_align(cfg: dict) -> int:
    if cfg["mode"] not in ("corr", "oracle"):
        raise ConfigurationError("--mode must be corr or oracle")
    paths = [p for p in cfg["estimates"].split(",") if p]
    if not paths:
        raise ConfigurationError("--estimates is required")
    first, sr = read_wav(paths[0])
    signals = [np.atleast_2d(first)[0]]
    for p in paths[1:]:
        data, est_sr = read_wav(p)
        if est_sr != sr:
            raise ConfigurationError(f"sample rate mismatch in {p}")
        signals.append(np.atleast_2d(data)[0])
    estimates = np.stack(signals)
    stft_cfg = StftConfig(sample_rate=sr)
    specs = stft_stack(estimates, stft_cfg)

    if cfg["mode"] == "oracle":
        if not cfg["truth_dir"]:
            raise ConfigurationError("--mode oracle requires --truth-dir")
        truth, truth_sr = load_truth_bundle(cfg["truth_dir"])
        if truth_sr != sr:
            raise ConfigurationError("truth bundle sample rate mismatch")
        refs = np.stack([
            stft(truth.images[c, 0, :estimates.shape[1]], stft_cfg)
            for c in range(estimates.shape[0])
        ])
        from .align import oracle_freq_align
        aligned, perm = oracle_freq_align(specs, refs)
    else:
        from .align import corr_freq_align
        aligned, perm = corr_freq_align(specs)

    outdir = _out_dir(cfg["out"])
    outputs = []
    for c in range(aligned.shape[0]):
        path = outdir / f"aligned_c{c + 1}.wav"
        write_wav(path, istft(aligned[c], stft_cfg, estimates.shape[1]), sr)
        outputs.append(path)
    perm_path = outdir / "permutation.csv"
    perm.write_csv(perm_path)
    outputs.append(perm_path)
    _write_manifest(outdir, "align", cfg, outputs)
    print(f"aligned {aligned.shape[0]} estimates; wrote {outdir}")
    return 0


# -------------------------------------------------------------------- main

_COMMANDS = {
    "simulate": (SIMULATE_DEFAULTS, cmd_simulate),
    "separate": (SEPARATE_DEFAULTS, cmd_separate),
    "loss-surface": (SURFACE_DEFAULTS, cmd_loss_surface),
    "loss-eval": (LOSS_EVAL_DEFAULTS, cmd_loss_eval),
    "wiener": (WIENER_DEFAULTS, cmd_wiener),
    "metrics": (METRICS_DEFAULTS, cmd_metrics),
    "align": (ALIGN_DEFAULTS, cmd_align),
}


def build_parser() -> _Parser:
    parser = _Parser(prog="odsep", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (defaults, _) in _COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="INI config file")
        for key, val in defaults.items():
            flag = "--" + key.replace("_", "-")
            if isinstance(val, bool):
                p.add_argument(flag, action="store_const", const=True,
                               default=None)
            else:
                p.add_argument(flag, type=type(val), default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        defaults, handler = _COMMANDS[args.command]
        cfg = _merge_config(args, defaults)
        return handler(cfg)
    except (ConfigurationError, DegenerateInputError, GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
