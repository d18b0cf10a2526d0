import numpy as np
import pytest

from pse import BandScheme, ModelConfig, Waveform, build


def tiny_config(**overrides) -> ModelConfig:
    base = dict(
        sample_rate=16000,
        fft_size=32,
        hop=16,
        scheme=BandScheme((4, 5, 8)),
        n_features=8,
        gru_hidden=6,
        mlp_hidden=10,
        attn_channels=5,
        embed_dim=7,
        n_blocks=2,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def tiny_cfg() -> ModelConfig:
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_engine(tiny_cfg):
    store, engine = build(tiny_cfg, seed=1234)
    return engine


@pytest.fixture(scope="session")
def full_engine_16k():
    """Default-size model at 16 kHz (same K/N/H as 48 kHz, smaller bands)."""
    store, engine = build(ModelConfig.default(16000), seed=7)
    return engine


def random_waveform(seconds: float, sample_rate: int, seed: int, level: float = 0.1) -> Waveform:
    rng = np.random.default_rng(seed)
    n = int(seconds * sample_rate)
    return Waveform(rng.standard_normal(n).astype(np.float32) * level, sample_rate)


def random_embedding(dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(dim).astype(np.float32)
    return e / np.linalg.norm(e)
