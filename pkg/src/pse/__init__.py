"""Personalized speech enhancement: a streaming band-split RNN whose band
features are rescaled by attention against an enrolled speaker embedding.

Typical use:

    from pse import ModelConfig, build, stub_embed, wav_read

    store, engine = build(ModelConfig.default(48000), seed=0)
    emb = stub_embed(wav_read("enroll.wav"))
    clean = engine.enhance_offline(wav_read("noisy.wav"), emb)
"""

from .bands import BandScheme, apply_mask, band_merge, band_split, default_scheme
from .dsp import ComplexSpectrogram, Waveform, compress, default_fft_size, istft, stft
from .engine import (
    Engine,
    ModelConfig,
    StreamState,
    WeightStore,
    build,
    count_macs,
    count_params,
    expected_tensor_specs,
    force_identity_mask,
    load_engine,
    load_weights,
    save_weights,
)
from .errors import (
    ConfigError,
    DimensionError,
    NumericError,
    PseError,
    UsageError,
    WeightLoadError,
    WeightValidationError,
)
from .losses import LossGradient, LossReport, gradient_check, loss_grad, loss_total, mse_asym, mse_complex
from .mixer import (
    EMBED_DIM,
    MixSpec,
    SyntheticRir,
    cut_enrollment,
    early_reverb_target,
    gen_dataset,
    mix_clip,
    stub_embed,
    synth_rir,
)
from .numerics import SeededRng
from .wavio import WavError, wav_read, wav_write

__version__ = "0.1.0"

__all__ = [
    "BandScheme",
    "ComplexSpectrogram",
    "ConfigError",
    "DimensionError",
    "EMBED_DIM",
    "Engine",
    "LossGradient",
    "LossReport",
    "MixSpec",
    "ModelConfig",
    "NumericError",
    "PseError",
    "SeededRng",
    "StreamState",
    "SyntheticRir",
    "UsageError",
    "Waveform",
    "WavError",
    "WeightLoadError",
    "WeightStore",
    "WeightValidationError",
    "apply_mask",
    "band_merge",
    "band_split",
    "build",
    "compress",
    "count_macs",
    "count_params",
    "cut_enrollment",
    "default_fft_size",
    "default_scheme",
    "early_reverb_target",
    "expected_tensor_specs",
    "force_identity_mask",
    "gen_dataset",
    "gradient_check",
    "istft",
    "load_engine",
    "load_weights",
    "loss_grad",
    "loss_total",
    "mix_clip",
    "mse_asym",
    "mse_complex",
    "save_weights",
    "stft",
    "stub_embed",
    "synth_rir",
    "wav_read",
    "wav_write",
]
