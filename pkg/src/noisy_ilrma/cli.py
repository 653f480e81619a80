"""Command-line front end: ``noisy-ilrma {extract,simulate,bench}``.

Settings come from an optional ``key = value`` file (``--config``), then from
flags, which win. Exit codes: 0 success, 2 usage or input error, 3 numerical
failure. ``NOISY_ILRMA_THREADS`` caps the number of parallel bench workers.
"""

import argparse
import csv
import dataclasses
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy.io import wavfile

from .demix import NoisyIlrmaConfig, run_noisy_ilrma, wiener_extract
from .errors import NoisyIlrmaError, SingularMatrixError, UsageError
from .evaluation import DEFAULT_TAPS, sdr_improvement
from .mixsim import ArrayGeometry, Reverb, default_mixture_spec, render_mixture
from .stft import StftConfig, analyze, synthesize

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

TRACE_HEADER = ["iteration", "cost", "wall_time_s"]
BENCH_HEADER = ["condition", "seed", "iteration", "wall_time_s", "cost", "sdr_improvement_db"]
VARIANTS = ("switching", "non-switching")


def _never_or_int(text):
    return None if str(text).strip().lower() in ("never", "none") else int(text)


def _optional_float(text):
    return None if str(text).strip().lower() in ("none", "off", "") else float(text)


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _seed_list(text):
    """``"3"``, ``"0,2,5"`` or an inclusive range ``"0-9"``."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def _variant_list(text):
    names = [v.strip() for v in str(text).split(",") if v.strip()]
    for name in names:
        if name not in VARIANTS:
            raise UsageError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    return names


@dataclass
class RunConfig:
    """Everything a subcommand needs; field names double as config-file keys."""

    mode: str = "extract"
    # io
    input: Optional[str] = None
    output: Optional[str] = None
    reference: Optional[str] = None
    csv: Optional[str] = None
    # stft
    sample_rate: int = 16000
    window_length: int = 1024
    hop_length: int = 512
    # algorithm
    bases: int = 3
    iterations: int = 50
    schedule_ratio: int = 10
    switch_at: Optional[int] = 4
    alpha: float = 1.1
    beta_scale: float = 1e-3
    eps: float = 1e-12
    seed: int = 0
    # simulation
    snr: float = 0.0
    duration: float = 8.8
    mics: int = 4
    spacing: float = 0.05
    target_angle: float = 0.0
    noise_directions: int = 19
    rt60: Optional[float] = None
    sensor_noise_db: Optional[float] = None
    # evaluation and bench
    taps: int = DEFAULT_TAPS
    seeds: Optional[List[int]] = None
    snrs: Optional[List[float]] = None
    variants: Tuple[str, ...] = VARIANTS

    def stft(self):
        return StftConfig(self.sample_rate, self.window_length, self.hop_length)

    def algorithm(self, switch_at=dataclasses.MISSING):
        return NoisyIlrmaConfig(
            n_basis=self.bases,
            n_iter=self.iterations,
            schedule_ratio=self.schedule_ratio,
            switch_iter=self.switch_at if switch_at is dataclasses.MISSING else switch_at,
            alpha=self.alpha,
            beta_scale=self.beta_scale,
            eps=self.eps,
            seed=self.seed,
        )

    def mixture_spec(self, seed, snr=None):
        spec = default_mixture_spec(
            seed=seed,
            duration=self.duration,
            sample_rate=self.sample_rate,
            target_angle=self.target_angle,
            input_snr=self.snr if snr is None else snr,
            n_noise=self.noise_directions,
            geometry=ArrayGeometry(self.mics, self.spacing),
            reverb=None if self.rt60 is None else Reverb(rt60=self.rt60, rng_seed=seed),
        )
        spec.sensor_noise_db = self.sensor_noise_db
        spec.sensor_seed = seed
        return spec


_PARSERS = {
    "input": str,
    "output": str,
    "reference": str,
    "csv": str,
    "sample_rate": int,
    "window_length": int,
    "hop_length": int,
    "bases": int,
    "iterations": int,
    "schedule_ratio": int,
    "switch_at": _never_or_int,
    "alpha": float,
    "beta_scale": float,
    "eps": float,
    "seed": int,
    "snr": float,
    "duration": float,
    "mics": int,
    "spacing": float,
    "target_angle": float,
    "noise_directions": int,
    "rt60": _optional_float,
    "sensor_noise_db": _optional_float,
    "taps": int,
    "seeds": _seed_list,
    "snrs": _float_list,
    "variants": lambda text: tuple(_variant_list(text)),
}


def parse_config_text(text):
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes equal underscores."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_").lower()
        if key not in _PARSERS:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise UsageError(f"config line {lineno}: bad value for {key}: {exc}") from None
    return values


def build_parser():
    parser = argparse.ArgumentParser(prog="noisy-ilrma", description="Blind target extraction from diffuse-noise mixtures.")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode, text in [
        ("extract", "extract the target from a multichannel WAV"),
        ("simulate", "render a synthetic mixture to WAV files"),
        ("bench", "run seeded extraction benchmarks and write CSV traces"),
    ]:
        p = sub.add_parser(mode, help=text)
        p.add_argument("--config", help="key = value settings file (flags override it)")
        p.add_argument("--input", help="input WAV (extract)")
        p.add_argument("--output", help="output WAV (extract) or directory (simulate, bench)")
        p.add_argument("--reference", help="target-image WAV for SDR tracking (extract)")
        p.add_argument("--csv", help="trace CSV (extract) or aggregate CSV (bench)")
        p.add_argument("--seed", help="random seed; for bench a list like 0-9 or 1,4")
        p.add_argument("--iterations", help="outer iterations")
        p.add_argument("--switch-at", dest="switch_at", help="switching iteration, or 'never'")
        p.add_argument("--bases", help="NMF bases per source")
        p.add_argument("--snr", help="input SNR in dB (simulate, bench)")
    return parser


def resolve_config(args):
    values = {}
    if args.config:
        try:
            values.update(parse_config_text(Path(args.config).read_text()))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
    for key in ("input", "output", "reference", "csv", "iterations", "switch_at", "bases", "snr"):
        raw = getattr(args, key)
        if raw is not None:
            try:
                values[key] = _PARSERS[key](raw)
            except ValueError:
                raise UsageError(f"bad value for --{key.replace('_', '-')}: {raw!r}") from None
    if args.seed is not None:
        try:
            seeds = _seed_list(args.seed)
        except ValueError:
            raise UsageError(f"bad value for --seed: {args.seed!r}") from None
        if not seeds:
            raise UsageError("--seed is empty")
        values["seed"] = seeds[0]
        values["seeds"] = seeds
    if args.snr is not None:
        values["snrs"] = [values["snr"]]
    config = RunConfig(mode=args.mode, **values)
    if config.bases < 1:
        raise UsageError("bases must be >= 1")
    if config.iterations < 0:
        raise UsageError("iterations must be >= 0")
    return config


# WAV helpers


def read_wav(path, expected_rate=None):
    """Read a 16-bit PCM or 32-bit float WAV as float64 ``(channels, samples)``."""
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError, EOFError) as exc:
        raise UsageError(f"cannot read WAV {path}: {exc}") from None
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        data = data.astype(np.float64)
    else:
        raise UsageError(f"{path}: unsupported sample format {data.dtype}; use 16-bit PCM or 32-bit float")
    if expected_rate is not None and rate != expected_rate:
        raise UsageError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    data = data[:, None] if data.ndim == 1 else data
    return np.ascontiguousarray(data.T)


def write_wav(path, waveform, sample_rate):
    """Write ``(channels, samples)`` as 32-bit float."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, sample_rate, np.ascontiguousarray(np.asarray(waveform, dtype=np.float32).T))


def _write_csv(path, header, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# pipeline


def extract_waveform(mixture, config, reference=None, algorithm=None):
    """Run the extraction on ``(M, N)`` samples.

    Returns ``(estimate, rows)``: the float32-representable ``(M, N)`` output and
    trace rows ``[iteration, cost, wall_time_s(, sdr_improvement_db)]``. When a
    reference is given, SDR improvement is evaluated after every iteration on
    channel 1 of the float32-quantized estimate, i.e. on exactly the samples
    that end up in the output file.
    """
    stft = config.stft()
    algorithm = algorithm or config.algorithm()
    n = mixture.shape[1]
    x = analyze(mixture, stft)
    sdr_by_iter = {}

    def to_waveform(spectrogram):
        return synthesize(spectrogram, stft, length=n).astype(np.float32).astype(np.float64)

    callback = None
    if reference is not None:

        def callback(it, w, model, lam):
            estimate = to_waveform(wiener_extract(x, w, model, lam).extracted[..., :1])[0]
            sdr_by_iter[it] = sdr_improvement(estimate, mixture[0], reference, config.taps).sdr_improvement

    result = run_noisy_ilrma(x, algorithm, callback=callback)
    rows = []
    for entry in result.trace:
        row = [entry.iteration, repr(entry.cost), repr(entry.wall_time)]
        if reference is not None:
            row.append(repr(sdr_by_iter[entry.iteration]))
        rows.append(row)
    return to_waveform(result.extracted), rows


def cmd_extract(config):
    if not config.input or not config.output:
        raise UsageError("extract needs --input and --output")
    mixture = read_wav(config.input, config.sample_rate)
    if mixture.shape[0] < 2:
        raise UsageError(f"{config.input}: at least two channels are required, got {mixture.shape[0]}")
    reference = None
    if config.reference:
        ref = read_wav(config.reference, config.sample_rate)
        if ref.shape[1] != mixture.shape[1]:
            raise UsageError("reference and input lengths differ")
        reference = ref[0]
    estimate, rows = extract_waveform(mixture, config, reference)
    write_wav(config.output, estimate, config.sample_rate)
    if config.csv:
        header = TRACE_HEADER + (["sdr_improvement_db"] if reference is not None else [])
        _write_csv(config.csv, header, rows)
    return EXIT_OK


def cmd_simulate(config):
    if not config.output:
        raise UsageError("simulate needs --output DIR")
    try:
        gt = render_mixture(config.mixture_spec(config.seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(config.output)
    for name, wave in [("mixture", gt.mixture), ("target", gt.target_image), ("noise", gt.noise_image)]:
        write_wav(out / f"{name}.wav", wave, config.sample_rate)
    return EXIT_OK


def condition_name(snr, variant):
    return f"snr{snr:g}dB_{variant}"


def _bench_cell(config, snr, variant, seed):
    gt = render_mixture(config.mixture_spec(seed, snr))
    switch = config.switch_at if variant == "switching" else None
    cell = dataclasses.replace(config, seed=seed)
    _, rows = extract_waveform(gt.mixture, cell, gt.target_image[0], cell.algorithm(switch_at=switch))
    return condition_name(snr, variant), seed, rows


def _worker_count(cells):
    cap = os.environ.get("NOISY_ILRMA_THREADS")
    if cap is None:
        limit = os.cpu_count() or 1
    else:
        try:
            limit = int(cap)
        except ValueError:
            raise UsageError(f"NOISY_ILRMA_THREADS must be an integer, got {cap!r}") from None
        if limit < 1:
            raise UsageError("NOISY_ILRMA_THREADS must be >= 1")
    return max(1, min(limit, cells))


def cmd_bench(config):
    if not config.output:
        raise UsageError("bench needs --output DIR")
    if config.switch_at is None and "switching" in config.variants:
        raise UsageError("the switching variant needs a switch iteration")
    seeds = config.seeds if config.seeds is not None else [config.seed]
    snrs = config.snrs if config.snrs is not None else [config.snr]
    cells = [(snr, variant, seed) for snr in snrs for variant in config.variants for seed in seeds]
    workers = _worker_count(len(cells))
    if workers == 1:
        results = [_bench_cell(config, *cell) for cell in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_bench_cell, [config] * len(cells), *zip(*cells)))

    out = Path(config.output)
    aggregate = []
    for condition, seed, rows in results:
        _write_csv(out / f"{condition}_seed{seed}.csv", TRACE_HEADER + ["sdr_improvement_db"], rows)
        for it, cost, wall, sdri in rows:
            if it >= 1:
                aggregate.append([condition, seed, it, wall, cost, sdri])
    _write_csv(config.csv or out / "aggregate.csv", BENCH_HEADER, aggregate)
    return EXIT_OK


COMMANDS = {"extract": cmd_extract, "simulate": cmd_simulate, "bench": cmd_bench}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        config = resolve_config(args)
        return COMMANDS[config.mode](config)
    except SingularMatrixError as exc:
        print(f"noisy-ilrma: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NoisyIlrmaError, ValueError) as exc:
        print(f"noisy-ilrma: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
