"""Synthetic tone/caption corpus for smoke runs, plus the matching toy configuration."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .audio import hz_to_mel, mel_to_hz, write_wav
from .config import AudioConfig, Config, LossConfig, MaskConfig, ModelConfig, TrainConfig
from .manifest import CaptionRecord, Manifest, write_manifest
from .rng import make_rng

_ONSETS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def nonsense_words(count: int, seed: int = 0) -> list[str]:
    """``count`` distinct pronounceable three-syllable words."""
    rng = make_rng(seed, "words")
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        word = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(3))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def tone_frequencies(count: int, low: float = 150.0, high: float = 7000.0) -> np.ndarray:
    """Evenly spaced on the mel scale, so neighbours stay resolvable by the filterbank."""
    return mel_to_hz(np.linspace(hz_to_mel(low), hz_to_mel(high), count))


def tone(freq: float, seconds: float, sample_rate: int = 16000, amplitude: float = 0.5) -> np.ndarray:
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    return amplitude * np.sin(2 * np.pi * freq * t)


def make_tone_dataset(
    root: str | os.PathLike, count: int = 64, seconds: float = 1.28, seed: int = 0, sample_rate: int = 16000
) -> Manifest:
    """Write ``count`` pure tones and a manifest pairing each with its own one-word caption."""
    root = Path(root)
    (root / "audio").mkdir(parents=True, exist_ok=True)
    records = []
    for i, (freq, word) in enumerate(zip(tone_frequencies(count), nonsense_words(count, seed))):
        rel = f"audio/tone_{i:03d}.wav"
        write_wav(root / rel, tone(freq, seconds, sample_rate), sample_rate)
        records.append(CaptionRecord(id=f"tone_{i:03d}", audio_path=rel, captions=[word]))
    manifest = Manifest(records, root=str(root))
    write_manifest(manifest, root / "manifest.jsonl")
    return manifest


def toy_config(mask: str = "none", reconstruction_weight: float = 0.0, **train) -> Config:
    """Two-layer, 64-wide encoders over 1.28 s clips (an 8x8 patch grid)."""
    audio = AudioConfig(target_seconds=1.28, spec_augment=False, norm_mean=-13.0, norm_std=6.0)
    model = ModelConfig(
        width=64, depth=2, heads=4, text_width=64, text_depth=2, text_heads=4,
        shared_dim=64, decoder_width=64, decoder_depth=1, decoder_heads=4,
    )
    masking = MaskConfig(strategy=mask, group_ratio=0.2, frame_ratio=0.2)
    loss = LossConfig(reconstruction_weight=reconstruction_weight)
    settings = dict(batch_size=16, epochs=125, max_steps=500, peak_lr=2e-3)
    settings.update(train)
    return Config(audio=audio, model=model, mask=masking, loss=loss, train=TrainConfig(**settings)).validate()
