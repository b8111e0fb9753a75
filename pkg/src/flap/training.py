"""Adam, the warmup/cosine schedule and the seeded training loop."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .audio import AudioFormatError, fusion_views, load_wav, mel_spectrogram, pad_or_crop, patchify, spec_augment
from .config import Config, ConfigError
from .manifest import CaptionRecord, Manifest
from .masking import plan_mask
from .model import FLAPModel, Parameter
from .numerics import NumericError, count_ops, save_checkpoint
from .objectives import combined_loss
from .rng import make_rng
from .text import Vocab, build_vocab, pad_batch, tokenize

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "epoch", "lr", "contrastive", "reconstruction", "total", "temperature")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: Mapping[str, Parameter],
    state: OptimizerState,
    lr: float,
    beta1: float = 0.99,
    beta2: float = 0.9,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place, using each parameter's ``.grad``.

    Parameters without a gradient (or with ``requires_grad=False``) are left
    alone. Any non-finite gradient aborts before anything is modified.
    """
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name, p in params.items():
        if p.grad is None or not p.requires_grad:
            continue
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        if m.shape != p.shape:
            raise ValueError(f"optimizer moments for {name!r} have shape {m.shape}, parameter {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * p.grad
        v *= beta2
        v += (1.0 - beta2) * p.grad**2
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def lr_at(step: int, total_steps: int, peak_lr: float, warmup_steps: int) -> float:
    """Linear warmup from 0 to ``peak_lr``, then cosine decay to 0 at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return peak_lr * step / warmup_steps
    span = total_steps - warmup_steps
    progress = (step - warmup_steps) / span if span > 0 else 1.0
    return peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def default_warmup(total_steps: int) -> int:
    return int(0.05 * total_steps)


def clip_gradients(params: Mapping[str, Parameter], max_norm: float) -> float:
    grads = [p.grad for p in params.values() if p.grad is not None]
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


def caption_sampler(record: CaptionRecord, rng: np.random.Generator) -> str:
    """Uniform choice over all of a record's captions, original or augmented."""
    return record.captions[int(rng.integers(len(record.captions)))]


class FeatureStore:
    """Full-length normalized log-mel frames per record, computed once.

    Records whose audio cannot be read are dropped with a warning.
    """

    def __init__(self, manifest: Manifest, config: Config) -> None:
        self.config = config
        self.frames: dict[str, np.ndarray] = {}
        self.records: list[CaptionRecord] = []
        for record in manifest:
            try:
                wav = load_wav(manifest.resolve(record), config.audio.sample_rate)
                mel = mel_spectrogram(wav, config.audio).frames
                self.frames[record.id] = (mel - config.audio.norm_mean) / config.audio.norm_std
            except (OSError, EOFError, AudioFormatError, ValueError) as exc:
                logger.warning("skipping record %s: %s", record.id, exc)
                continue
            self.records.append(record)

    def audio_batch(self, ids: list[str], rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Model input and reconstruction target patches for a batch.

        With ``rng`` the training path is used (random crops, SpecAug if
        enabled); without it, deterministic start crops and no SpecAug.
        Returns ``(inputs, target_patches)``; inputs are patch tokens
        [B, N, Dp], or stacked views [B, C, T, F] when fusion is on.
        """
        audio = self.config.audio
        items = []
        for rid in ids:
            frames = self.frames[rid]
            view = fusion_views(frames, audio, rng) if audio.fusion else pad_or_crop(frames, audio.target_frames, rng)
            if rng is not None and audio.spec_augment:
                view = spec_augment(view, rng, audio.time_mask_max, audio.freq_mask_max)
            items.append(view)
        stacked = np.stack(items)
        patch = (audio.patch_time, audio.patch_freq)
        if audio.fusion:
            return stacked, patchify(stacked[:, 0], patch).tokens
        tokens = patchify(stacked, patch).tokens
        return tokens, tokens


@dataclass
class StepRecord:
    step: int
    epoch: int
    lr: float
    contrastive: float
    reconstruction: float
    total: float
    temperature: float
    encoder_flops: int
    reconstruction_active: bool = False

    def row(self) -> list:
        return [getattr(self, c) for c in LOG_COLUMNS]


@dataclass
class TrainResult:
    model: FLAPModel
    vocab: Vocab
    history: list[StepRecord]
    checkpoint: Path | None = None

    @property
    def mean_encoder_flops(self) -> float:
        return float(np.mean([h.encoder_flops for h in self.history]))


def write_run_metadata(directory: Path, config: Config, vocab: Vocab) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.txt").write_text(config.dumps(), encoding="utf-8")
    vocab.save(directory / "vocab.txt")


def _prune_checkpoints(directory: Path, keep: int) -> None:
    epochs = sorted(directory.glob("epoch_*.ckpt"))
    for old in epochs[: max(0, len(epochs) - keep)]:
        old.unlink()


def train(manifest: Manifest, config: Config, vocab: Vocab | None = None) -> TrainResult:
    """Train from scratch; every random draw comes from a stream of ``train.seed``.

    Per step: sample captions, crop/augment audio, patchify, draw a fresh mask
    plan, run both encoders (and the decoder if reconstruction is weighted),
    backpropagate the combined loss and apply one Adam update.
    """
    config.validate()
    tc = config.train
    if tc.batch_size < 2:
        warnings.warn("batch_size < 2 makes the contrastive loss identically zero", stacklevel=2)
    store = FeatureStore(manifest, config)
    if not store.records:
        raise ValueError("no readable records in manifest")
    vocab = vocab or build_vocab(manifest.all_captions())

    seed = tc.seed
    model = FLAPModel(config, len(vocab), make_rng(seed, "init"))
    rng_shuffle, rng_audio = make_rng(seed, "shuffle"), make_rng(seed, "audio")
    rng_mask, rng_caption = make_rng(seed, "mask"), make_rng(seed, "caption")

    n_records = len(store.records)
    batches_per_epoch = math.ceil(n_records / tc.batch_size)
    total_steps = tc.max_steps if tc.max_steps is not None else tc.epochs * batches_per_epoch
    if total_steps <= 0:
        raise ConfigError("training needs at least one step")
    warmup = default_warmup(total_steps) if tc.warmup_steps is None else tc.warmup_steps
    if warmup >= total_steps:
        raise ConfigError(f"warmup_steps={warmup} must be below total steps {total_steps}")

    ckpt_dir = Path(tc.checkpoint_dir) if tc.checkpoint_dir else None
    if ckpt_dir is not None:
        write_run_metadata(ckpt_dir, config, vocab)
    log_fh = open(tc.log_path, "w", newline="", encoding="utf-8") if tc.log_path else None
    log = csv.writer(log_fh) if log_fh else None
    if log:
        log.writerow(LOG_COLUMNS)

    params = model.parameters()
    state = OptimizerState()
    history: list[StepRecord] = []
    grid = config.audio.grid
    step = 0
    epoch = 0
    try:
        while step < total_steps:
            order = rng_shuffle.permutation(n_records)
            for start in range(0, n_records, tc.batch_size):
                if step >= total_steps:
                    break
                batch = [store.records[i] for i in order[start : start + tc.batch_size]]
                captions = [caption_sampler(r, rng_caption) for r in batch]
                ids, mask = pad_batch([tokenize(c, vocab, config.model.max_text_len) for c in captions])
                inputs, target = store.audio_batch([r.id for r in batch], rng_audio)
                plan = plan_mask(config.mask, config.audio.num_patches, rng_mask, len(batch), default_groups=grid[0])

                with count_ops() as ops:
                    audio_emb, per_token = model.encode_audio(inputs, plan)
                text_emb = model.encode_text(ids, mask)
                recon = None
                if model.has_decoder and plan.num_dropped > 0:
                    recon = (model.decode_audio(per_token, plan), target, plan)
                report = combined_loss(
                    audio_emb, text_emb, model.temperature(), recon, config.loss.reconstruction_weight, config.loss.symmetric
                )

                model.zero_grad()
                report.total.backward()
                if tc.grad_clip is not None:
                    clip_gradients(params, tc.grad_clip)
                lr = lr_at(step, total_steps, tc.peak_lr, warmup)
                adam_step(params, state, lr, tc.beta1, tc.beta2, tc.adam_eps)
                model.clamp_temperature()

                s = report.scalars()
                record = StepRecord(
                    step, epoch, lr, s["contrastive"], s["reconstruction"], s["total"], s["temperature"],
                    ops.flops, report.reconstruction_active,
                )
                history.append(record)
                if log:
                    log.writerow(record.row())
                step += 1
            if ckpt_dir is not None:
                save_checkpoint(ckpt_dir / f"epoch_{epoch:04d}.ckpt", model.state_dict())
                _prune_checkpoints(ckpt_dir, tc.keep_checkpoints)
            epoch += 1
    finally:
        if log_fh:
            log_fh.close()

    final = None
    if ckpt_dir is not None:
        final = ckpt_dir / "final.ckpt"
        save_checkpoint(final, model.state_dict())
    logger.info("trained %d steps over %d epochs", step, epoch)
    return TrainResult(model, vocab, history, final)

