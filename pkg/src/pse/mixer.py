"""Desk-scale data synthesis: enrollment cuts, a deterministic stand-in
embedding extractor, synthetic room responses, on-the-fly noisy-clip mixing,
and a manifest-writing dataset generator.

Every stochastic operation is a pure function of (inputs, seed); the dataset
generator derives one child SplitMix64 stream per clip so regeneration from a
manifest seed is bit-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .dsp import Waveform, stft
from .errors import ConfigError, UsageError
from .numerics import SeededRng, glorot_bound

EMBED_DIM = 192
EARLY_REVERB_SECONDS = 0.050
_STUB_PROJECTION_SEED = 0x5EEDFACE
_PEAK_LIMIT_DBFS = -1.0
_SILENCE_RMS = 1e-6


@dataclass
class MixSpec:
    """Ranges and probabilities for one synthesized clip."""

    clip_seconds: float = 4.0
    snr_noise_db: tuple[float, float] = (-5.0, 15.0)
    sir_db: tuple[float, float] = (-5.0, 15.0)
    p_interferer: float = 0.5
    p_reverb: float = 0.5
    target_level_dbfs: tuple[float, float] = (-35.0, -15.0)
    t60_range: tuple[float, float] = (0.15, 0.6)
    enroll_seconds: float = 4.0
    seed: int = 0

    def __post_init__(self):
        for name in ("snr_noise_db", "sir_db", "target_level_dbfs", "t60_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range {lo}..{hi} is not ordered")
        for name in ("p_interferer", "p_reverb"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        if self.clip_seconds <= 0 or self.enroll_seconds <= 0:
            raise ConfigError("clip and enrollment durations must be positive")


@dataclass
class SyntheticRir:
    """Unit direct path followed by an exponentially decaying noise tail."""

    samples: np.ndarray
    direct_index: int
    t60: float


@dataclass
class MixDraws:
    """The random values one clip consumed, recorded for the manifest."""

    target_level_dbfs: float
    reverb: bool
    t60: float
    interferer: bool
    sir_db: float
    snr_db: float


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x, dtype=np.float64))))


def cut_enrollment(speech: Waveform, seconds: float, rng: SeededRng) -> Waveform:
    """A random contiguous segment of exactly `seconds` duration."""
    n = int(round(seconds * speech.sample_rate))
    if n < 1 or n > len(speech.samples):
        raise UsageError(
            f"cannot cut {seconds}s from a {len(speech.samples) / speech.sample_rate:.2f}s source"
        )
    start = rng.randint(len(speech.samples) - n + 1)
    return Waveform(speech.samples[start : start + n].copy(), speech.sample_rate)


def _stub_projection(n_stats: int) -> np.ndarray:
    rng = SeededRng(_STUB_PROJECTION_SEED)
    bound = glorot_bound(n_stats, EMBED_DIM)
    u = rng.u01_array(EMBED_DIM * n_stats)
    return (bound * (2.0 * u - 1.0)).astype(np.float32).reshape(EMBED_DIM, n_stats)


_projection_cache: dict[int, np.ndarray] = {}


def stub_embed(speech: Waveform) -> np.ndarray:
    """Deterministic 192-d stand-in for a speaker-verification embedding.

    Log-magnitude spectrogram statistics (per-bin mean and std over time) are
    projected by a fixed seeded matrix and L2-normalized. Good enough for
    plumbing tests: different cuts of the same source land closer together
    than unrelated noise does.
    """
    if speech.duration < 0.5:
        raise UsageError(f"embedding needs >= 0.5 s of audio, got {speech.duration:.2f} s")
    spec = stft(speech)
    logmag = np.log(np.abs(spec.data) + 1e-8)
    stats = np.concatenate([logmag.mean(axis=0), logmag.std(axis=0)]).astype(np.float32)
    n_stats = stats.shape[0]
    if n_stats not in _projection_cache:
        _projection_cache[n_stats] = _stub_projection(n_stats)
    emb = _projection_cache[n_stats] @ stats
    norm = float(np.linalg.norm(emb))
    return (emb / max(norm, 1e-12)).astype(np.float32)


def synth_rir(t60: float, sample_rate: int, rng: SeededRng) -> SyntheticRir:
    """Synthetic impulse response: delta + 0.3-scaled uniform white tail
    decaying by 60 dB over t60 seconds."""
    if not 0.05 <= t60 <= 1.0:
        raise ConfigError(f"t60 must be within [0.05, 1.0] s, got {t60}")
    length = int(round(t60 * sample_rate)) + 1
    tail_gain = 0.3
    noise = 2.0 * rng.u01_array(length - 1) - 1.0  # uniform in [-1, 1)
    n = np.arange(1, length, dtype=np.float64)
    envelope = np.exp(-6.9 * n / (t60 * sample_rate))
    samples = np.empty(length, dtype=np.float32)
    samples[0] = 1.0
    samples[1:] = (tail_gain * noise * envelope).astype(np.float32)
    return SyntheticRir(samples=samples, direct_index=0, t60=t60)


def early_reverb_target(clean: Waveform, rir: SyntheticRir) -> Waveform:
    """Convolve with the RIR truncated 50 ms after the direct path;
    output length equals input length."""
    cutoff = rir.direct_index + int(round(EARLY_REVERB_SECONDS * clean.sample_rate)) + 1
    return _convolve_keep_length(clean, rir.samples[:cutoff])


def _convolve_keep_length(x: Waveform, taps: np.ndarray) -> Waveform:
    y = fftconvolve(x.samples.astype(np.float64), np.asarray(taps, dtype=np.float64))
    return Waveform(y[: len(x.samples)].astype(np.float32), x.sample_rate)


def _fit_length(samples: np.ndarray, n: int, rng: SeededRng) -> np.ndarray:
    """Tile a too-short source, then take a random offset cut of n samples."""
    if len(samples) < n:
        samples = np.tile(samples, math.ceil(n / len(samples)))
    start = rng.randint(len(samples) - n + 1)
    return samples[start : start + n].copy()


def _mix_with_draws(
    target: Waveform,
    interferer: Waveform | None,
    noise: Waveform,
    spec: MixSpec,
    rng: SeededRng,
) -> tuple[tuple[Waveform, Waveform, Waveform], MixDraws]:
    sr = target.sample_rate
    n = int(round(spec.clip_seconds * sr))

    # Fixed draw order so a clip is reproducible from its seed alone.
    level_db = rng.uniform(*spec.target_level_dbfs)
    reverb = rng.u01() < spec.p_reverb
    t60 = rng.uniform(*spec.t60_range)
    interferer_roll = rng.u01() < spec.p_interferer  # always drawn, keeps the stream aligned
    use_interferer = interferer is not None and interferer_roll
    sir_db = rng.uniform(*spec.sir_db)
    snr_lo, snr_hi = spec.snr_noise_db
    snr_db = math.inf if math.isinf(snr_lo) and math.isinf(snr_hi) else rng.uniform(snr_lo, snr_hi)

    target_cut = _fit_length(target.samples, n, rng)
    rms = _rms(target_cut)
    if rms < _SILENCE_RMS:
        raise UsageError(f"target segment is effectively silent (rms {rms:.2e})")
    scaled = target_cut * np.float32(10.0 ** (level_db / 20.0) / rms)

    if reverb:
        rir = synth_rir(t60, sr, rng)
        speech = _convolve_keep_length(Waveform(scaled, sr), rir.samples).samples
        reference = early_reverb_target(Waveform(scaled, sr), rir).samples
    else:
        speech = scaled
        reference = scaled.copy()

    mix = speech.copy()
    speech_rms = _rms(speech)
    if use_interferer:
        cut = _fit_length(interferer.samples, n, rng)
        cut_rms = _rms(cut)
        if cut_rms < _SILENCE_RMS:
            raise UsageError("interferer segment is effectively silent")
        mix = mix + cut * np.float32(speech_rms / cut_rms * 10.0 ** (-sir_db / 20.0))
    if math.isfinite(snr_db):
        cut = _fit_length(noise.samples, n, rng)
        cut_rms = _rms(cut)
        if cut_rms < _SILENCE_RMS:
            raise UsageError("noise segment is effectively silent")
        mix = mix + cut * np.float32(speech_rms / cut_rms * 10.0 ** (-snr_db / 20.0))

    # One shared gain keeps the noisy/reference pair consistent, so SNR
    # measured between components is exactly the drawn value.
    limit = 10.0 ** (_PEAK_LIMIT_DBFS / 20.0)
    peak = float(np.max(np.abs(mix))) if len(mix) else 0.0
    if peak > limit:
        gain = np.float32(limit / peak)
        mix = mix * gain
        reference = reference * gain

    enroll_n = int(round(spec.enroll_seconds * sr))
    enroll_src = target.samples
    if len(enroll_src) < enroll_n:
        enroll_src = np.tile(enroll_src, math.ceil(enroll_n / len(enroll_src)))
    start = rng.randint(len(enroll_src) - enroll_n + 1)
    enroll = enroll_src[start : start + enroll_n].copy()

    triple = (Waveform(mix, sr), Waveform(reference, sr), Waveform(enroll, sr))
    draws = MixDraws(level_db, reverb, t60, use_interferer, sir_db, snr_db)
    return triple, draws


def mix_clip(
    target: Waveform,
    interferer: Waveform | None,
    noise: Waveform,
    spec: MixSpec,
    rng: SeededRng,
) -> tuple[Waveform, Waveform, Waveform]:
    """Synthesize one (noisy, target_ref, embedding_source) triple."""
    triple, _ = _mix_with_draws(target, interferer, noise, spec, rng)
    return triple


def gen_dataset(
    dir_out,
    clean_paths: list,
    noise_paths: list,
    spec: MixSpec,
    n_clips: int,
) -> Path:
    """Materialize n_clips triples as WAV files plus a JSON manifest.

    Clip i uses the child stream SeededRng(spec.seed).spawn(i); the manifest
    records that child seed, so any clip regenerates bit-identically.
    """
    from .wavio import wav_read, wav_write  # local import; wavio pulls in nothing heavy

    if not clean_paths:
        raise UsageError("no clean source files given")
    snr_lo, _ = spec.snr_noise_db
    if not noise_paths and not math.isinf(snr_lo):
        raise UsageError("no noise source files given")

    out = Path(dir_out)
    out.mkdir(parents=True, exist_ok=True)
    root = SeededRng(spec.seed)
    cache: dict[str, Waveform] = {}

    def load(path) -> Waveform:
        key = str(path)
        if key not in cache:
            cache[key] = wav_read(key)
        return cache[key]

    manifest = []
    for i in range(n_clips):
        crng = root.spawn(i)
        t_idx = crng.randint(len(clean_paths))
        if len(clean_paths) > 1:
            j = crng.randint(len(clean_paths) - 1)
            i_idx = j + 1 if j >= t_idx else j
        else:
            i_idx = None
        n_idx = crng.randint(len(noise_paths)) if noise_paths else None

        target = load(clean_paths[t_idx])
        interferer = load(clean_paths[i_idx]) if i_idx is not None else None
        noise = (
            load(noise_paths[n_idx])
            if n_idx is not None
            else Waveform(np.zeros(1, dtype=np.float32), target.sample_rate)
        )
        (noisy, ref, enroll), draws = _mix_with_draws(target, interferer, noise, spec, crng)

        names = {
            "noisy": f"clip{i:05d}_noisy.wav",
            "target": f"clip{i:05d}_target.wav",
            "enroll": f"clip{i:05d}_enroll.wav",
        }
        wav_write(out / names["noisy"], noisy, encoding="float32")
        wav_write(out / names["target"], ref, encoding="float32")
        wav_write(out / names["enroll"], enroll, encoding="float32")
        manifest.append(
            {
                "clip_id": i,
                "seed": crng.seed,
                "snr_db": draws.snr_db if math.isfinite(draws.snr_db) else None,
                "sir_db": draws.sir_db if draws.interferer else None,
                "reverb": draws.reverb,
                "t60": draws.t60 if draws.reverb else None,
                "paths": names,
            }
        )

    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    return manifest_path
