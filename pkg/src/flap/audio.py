"""WAV loading, log-mel features, crop/pad, SpecAug, patching and fusion views."""

from __future__ import annotations

import logging
import os
import wave
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import AudioConfig

logger = logging.getLogger(__name__)


class AudioFormatError(ValueError):
    """The file is not 16-bit PCM mono at the configured rate."""


class AudioInputError(ValueError):
    pass


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # [T, n_mels] natural-log mel energies
    sample_rate: int
    hop_ms: float
    win_ms: float

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class PatchSequence:
    """Patchified spectrograms.

    ``tokens`` is [B, N, p_t * p_f] with N = grid[0] * grid[1]; patches are
    ordered time-major then frequency. ``frames`` is the unpadded frame count,
    so depatchify can undo the zero padding added to reach a multiple of p_t.
    """

    tokens: np.ndarray
    grid: tuple[int, int]
    patch_size: tuple[int, int]
    frames: int

    @property
    def num_tokens(self) -> int:
        return self.grid[0] * self.grid[1]


# WAV -------------------------------------------------------------------------


def load_wav(path: str | os.PathLike, sample_rate: int = 16000) -> np.ndarray:
    """Read a PCM16 mono WAV as float64 samples in [-1, 1).

    No resampling is attempted; any rate, channel count or sample width other
    than the expected one raises ``AudioFormatError``.
    """
    try:
        with wave.open(os.fspath(path), "rb") as fh:
            channels, width, rate, count = fh.getnchannels(), fh.getsampwidth(), fh.getframerate(), fh.getnframes()
            raw = fh.readframes(count)
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: unsupported WAV encoding ({exc})") from exc
    if channels != 1:
        raise AudioFormatError(f"{path}: expected mono, found {channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit PCM, found {8 * width}-bit samples")
    if rate != sample_rate:
        raise AudioFormatError(f"{path}: expected {sample_rate} Hz, found {rate} Hz")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path: str | os.PathLike, samples: np.ndarray, sample_rate: int = 16000) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(os.fspath(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())


# mel features ----------------------------------------------------------------


def hz_to_mel(hz):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int) -> np.ndarray:
    """Triangular HTK-mel filters spanning 0 Hz to Nyquist, unnormalized.

    Returns [n_mels, n_fft // 2 + 1]; filter m peaks (weight 1) at the m-th
    interior point of n_mels + 2 mel-equispaced edges.
    """
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    bins = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lower) / (center - lower)
    falling = (upper - bins[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def mel_center_frequencies(config: AudioConfig) -> np.ndarray:
    return mel_to_hz(np.linspace(0.0, hz_to_mel(config.sample_rate / 2), config.n_mels + 2))[1:-1]


def mel_spectrogram(waveform: np.ndarray, config: AudioConfig) -> MelSpectrogram:
    """Log-mel energies, Hann window, no centering.

    Frames are ``win_length`` samples every ``hop_length`` samples, zero-padded
    to ``n_fft`` before the FFT, so T = floor((len - win) / hop) + 1. Each bin
    holds ln(mel power + log_floor).
    """
    waveform = np.asarray(waveform, dtype=np.float64)
    win, hop = config.win_length, config.hop_length
    if waveform.ndim != 1 or waveform.shape[0] < win:
        raise AudioInputError(f"waveform of {waveform.shape[-1] if waveform.ndim else 0} samples is shorter than one {win}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(waveform, win)[::hop]
    window = np.hanning(win + 1)[:-1]  # periodic Hann
    spectrum = np.fft.rfft(frames * window, n=config.n_fft, axis=-1)
    power = spectrum.real**2 + spectrum.imag**2
    mel = power @ mel_filterbank(config.sample_rate, config.n_fft, config.n_mels).T
    return MelSpectrogram(np.log(mel + config.log_floor), config.sample_rate, config.hop_ms, config.win_ms)


def pad_or_crop(frames: np.ndarray, target_frames: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Bring ``frames`` [T, F] to exactly ``target_frames`` rows.

    Shorter inputs are zero-padded at the end. Longer inputs are cropped to a
    contiguous window starting at a uniform random offset, or at frame 0 when
    ``rng`` is None (the deterministic evaluation path).
    """
    t = frames.shape[0]
    if t == target_frames:
        return frames.copy()
    if t < target_frames:
        pad = np.zeros((target_frames - t,) + frames.shape[1:], dtype=frames.dtype)
        return np.concatenate([frames, pad], axis=0)
    start = 0 if rng is None else int(rng.integers(0, t - target_frames + 1))
    return frames[start : start + target_frames].copy()


def draw_spec_augment(
    num_frames: int, num_bins: int, rng: np.random.Generator, time_max: int = 192, freq_max: int = 48
) -> tuple[int, int, int, int]:
    """Sample (time_start, time_width, freq_start, freq_width).

    Widths are uniform integers in [0, max]; a width larger than the axis is
    clipped to the axis length.
    """
    tw = min(int(rng.integers(0, time_max + 1)), num_frames)
    fw = min(int(rng.integers(0, freq_max + 1)), num_bins)
    t0 = int(rng.integers(0, num_frames - tw + 1))
    f0 = int(rng.integers(0, num_bins - fw + 1))
    return t0, tw, f0, fw


def spec_augment(
    frames: np.ndarray, rng: np.random.Generator, time_max: int = 192, freq_max: int = 48
) -> np.ndarray:
    """Zero one random time stripe and one random frequency stripe.

    Works on [T, F] or channel-stacked [C, T, F] input; stacked views share a
    single draw.
    """
    t0, tw, f0, fw = draw_spec_augment(frames.shape[-2], frames.shape[-1], rng, time_max, freq_max)
    out = frames.copy()
    out[..., t0 : t0 + tw, :] = 0.0
    out[..., :, f0 : f0 + fw] = 0.0
    return out


# patches ---------------------------------------------------------------------


def patchify(spec: np.ndarray, patch_size: tuple[int, int] = (16, 16)) -> PatchSequence:
    """Cut [T, F] or [B, T, F] spectrograms into non-overlapping patches.

    T is zero-padded up to a multiple of p_t; F must already be a multiple of
    p_f.
    """
    spec = np.asarray(spec, dtype=np.float64)
    batched = spec if spec.ndim == 3 else spec[None]
    b, t, f = batched.shape
    pt, pf = patch_size
    if f % pf:
        raise AssertionError(f"frequency axis {f} is not a multiple of patch height {pf}")
    gt = -(-t // pt)
    if gt * pt != t:
        batched = np.concatenate([batched, np.zeros((b, gt * pt - t, f))], axis=1)
    gf = f // pf
    tokens = batched.reshape(b, gt, pt, gf, pf).transpose(0, 1, 3, 2, 4).reshape(b, gt * gf, pt * pf)
    return PatchSequence(np.ascontiguousarray(tokens), (gt, gf), (pt, pf), t)


def depatchify(tokens: np.ndarray, grid: tuple[int, int], patch_size: tuple[int, int], frames: int | None = None) -> np.ndarray:
    """Inverse of ``patchify``; returns [B, T, F], cropped to ``frames`` if given."""
    tokens = np.asarray(tokens)
    b = tokens.shape[0]
    gt, gf = grid
    pt, pf = patch_size
    spec = tokens.reshape(b, gt, gf, pt, pf).transpose(0, 1, 3, 2, 4).reshape(b, gt * pt, gf * pf)
    return spec[:, :frames] if frames is not None else spec


# feature fusion --------------------------------------------------------------


def _resize_time(frames: np.ndarray, target: int) -> np.ndarray:
    """Linear interpolation of [T, F] along time to ``target`` rows."""
    src = np.linspace(0.0, frames.shape[0] - 1, target)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, frames.shape[0] - 1)
    w = (src - lo)[:, None]
    return frames[lo] * (1.0 - w) + frames[hi] * w


def fusion_views(frames: np.ndarray, config: AudioConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Global + local views of a full-length log-mel clip, stacked [1 + L, T, F].

    The global view squeezes the whole clip to the target frame count; each
    local view is a target-length crop drawn from its own equal third of the
    clip (its start, when ``rng`` is None). Clips no longer than the target
    yield identical padded views.
    """
    target = config.target_frames
    n_local = config.fusion_local_views
    if frames.shape[0] <= target:
        view = pad_or_crop(frames, target)
        return np.stack([view] * (1 + n_local))
    views = [_resize_time(frames, target)]
    span = frames.shape[0] - target
    bounds = np.linspace(0, span, n_local + 1).astype(int)
    for i in range(n_local):
        lo, hi = bounds[i], max(bounds[i], bounds[i + 1])
        start = lo if rng is None else int(rng.integers(lo, hi + 1))
        views.append(frames[start : start + target])
    return np.stack(views)
