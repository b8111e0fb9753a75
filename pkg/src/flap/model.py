"""Audio/text encoders, projection heads and the masked-patch decoder."""

from __future__ import annotations

import math
from typing import Iterator, Mapping

import numpy as np

from .config import AudioConfig, Config, ConfigError, ModelConfig
from .masking import MaskPlan, apply_mask, restore_order
from .numerics import (
    ShapeError,
    Tensor,
    conv2d,
    exp,
    gelu,
    l2_normalize,
    layernorm,
    mean_pool,
    softmax,
)

_NEG_INF = -1e9


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, requires_grad: bool = True) -> None:
        super().__init__(data, requires_grad=requires_grad)


class Module:
    """Parameters and submodules are discovered from attributes in assignment order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.named_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch; missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape} != parameter shape {p.shape}")
            p.data[...] = value

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True) -> None:
        limit = math.sqrt(6.0 / (d_in + d_out))
        self.weight = Parameter(rng.uniform(-limit, limit, size=(d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5) -> None:
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layernorm(x, self.gain, self.bias, self.eps)


class Attention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator) -> None:
        if dim % heads:
            raise ConfigError(f"width {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def __call__(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        b, n, d = x.shape
        h = self.heads
        dh = d // h

        def split(t: Tensor) -> Tensor:
            return t.reshape(b, n, h, dh).transpose(0, 2, 1, 3)

        q, k, v = split(self.wq(x)), split(self.wk(x)), split(self.wv(x))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
        if key_mask is not None:
            scores = scores + np.where(key_mask > 0, 0.0, _NEG_INF)[:, None, None, :]
        out = softmax(scores, axis=-1) @ v
        return self.wo(out.transpose(0, 2, 1, 3).reshape(b, n, d))


class Block(Module):
    """Pre-norm transformer block with a GELU MLP."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float, rng: np.random.Generator) -> None:
        hidden = int(round(dim * mlp_ratio))
        self.norm1 = LayerNorm(dim)
        self.attn = Attention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        x = x + self.attn(self.norm1(x), key_mask)
        return x + self.fc2(gelu(self.fc1(self.norm2(x))))


def add_blocks(module: Module, depth: int, dim: int, heads: int, mlp_ratio: float, rng: np.random.Generator) -> None:
    """Attach ``block0 .. block{depth-1}`` directly so names read ``<module>.block0.attn.wq``."""
    module.depth = depth
    for i in range(depth):
        setattr(module, f"block{i}", Block(dim, heads, mlp_ratio, rng))


def run_blocks(module: Module, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
    for i in range(module.depth):
        x = getattr(module, f"block{i}")(x, key_mask)
    return x


def sinusoid_1d(positions: np.ndarray, width: int) -> np.ndarray:
    if width % 2:
        raise ConfigError(f"sinusoid width {width} must be even")
    omega = 1.0 / 10000.0 ** (np.arange(width // 2) / (width / 2.0))
    angles = np.asarray(positions, dtype=np.float64)[:, None] * omega[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def sinusoid_2d(grid: tuple[int, int], width: int) -> np.ndarray:
    """Fixed positions for a (time, freq) patch grid, rows in time-major order.

    The first half of each row encodes the time index, the second half the
    frequency index, each as [sin | cos] over geometric frequencies.
    """
    if width % 4:
        raise ConfigError(f"2-D sinusoid width {width} must be divisible by 4")
    gt, gf = grid
    t_idx, f_idx = np.meshgrid(np.arange(gt), np.arange(gf), indexing="ij")
    return np.concatenate(
        [sinusoid_1d(t_idx.reshape(-1), width // 2), sinusoid_1d(f_idx.reshape(-1), width // 2)], axis=1
    )


class FeatureFusion(Module):
    """Merge stacked global/local views with one 3x3 convolution, then patchify.

    The kernel starts as a per-channel average at the centre tap, so fusing
    identical views reproduces the single view.
    """

    def __init__(self, channels: int, audio: AudioConfig) -> None:
        w = np.zeros((1, channels, 3, 3))
        w[0, :, 1, 1] = 1.0 / channels
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(1))
        self.patch_size = (audio.patch_time, audio.patch_freq)

    def __call__(self, views: np.ndarray) -> Tensor:
        views = np.asarray(views, dtype=np.float64)
        b, c, t, f = views.shape
        pt, pf = self.patch_size
        gt = -(-t // pt)
        if gt * pt != t:
            views = np.concatenate([views, np.zeros((b, c, gt * pt - t, f))], axis=2)
        fused = conv2d(Tensor(views), self.weight, self.bias, padding=1)
        gf = f // pf
        return fused.reshape(b, gt, pt, gf, pf).transpose(0, 1, 3, 2, 4).reshape(b, gt * gf, pt * pf)


class AudioEncoder(Module):
    def __init__(self, model: ModelConfig, audio: AudioConfig, rng: np.random.Generator) -> None:
        self.grid = audio.grid
        self.num_tokens = audio.num_patches
        self.patch_embed = Linear(audio.patch_dim, model.width, rng)
        self.pos_embed = Parameter(rng.normal(0.0, model.init_std, size=(self.num_tokens, model.width)))
        add_blocks(self, model.depth, model.width, model.heads, model.mlp_ratio, rng)
        self.norm = LayerNorm(model.width)
        self.proj = Linear(model.width, model.shared_dim, rng, bias=False)
        if audio.fusion:
            self.fusion = FeatureFusion(1 + audio.fusion_local_views, audio)

    def __call__(self, patches, plan: MaskPlan) -> tuple[Tensor, Tensor]:
        """Returns (pooled [B, D_shared] unit rows, per-token features [B, N', D])."""
        if patches.shape[1] != self.num_tokens:
            raise ShapeError(f"expected {self.num_tokens} patch tokens, got {patches.shape[1]}")
        x = self.patch_embed(patches) + self.pos_embed
        x = apply_mask(x, plan)
        per_token = self.norm(run_blocks(self, x))
        pooled = l2_normalize(self.proj(per_token.mean(axis=1)))
        return pooled, per_token


class TextEncoder(Module):
    def __init__(self, model: ModelConfig, vocab_size: int, rng: np.random.Generator) -> None:
        self.max_len = model.max_text_len
        self.tok_embed = Parameter(rng.normal(0.0, model.init_std, size=(vocab_size, model.text_width)))
        self.pos_embed = Parameter(rng.normal(0.0, model.init_std, size=(model.max_text_len, model.text_width)))
        add_blocks(self, model.text_depth, model.text_width, model.text_heads, model.mlp_ratio, rng)
        self.norm = LayerNorm(model.text_width)
        self.proj = Linear(model.text_width, model.shared_dim, rng, bias=False)

    def __call__(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        length = ids.shape[1]
        if ids.size and (ids.min() < 0 or ids.max() >= self.tok_embed.shape[0]):
            raise ValueError(f"token ids must lie in [0, {self.tok_embed.shape[0]}) for this vocab")
        if length > self.max_len:
            raise ShapeError(f"caption length {length} exceeds {self.max_len}")
        x = self.tok_embed[ids] + self.pos_embed[:length]
        x = self.norm(run_blocks(self, x, key_mask=mask))
        return l2_normalize(self.proj(mean_pool(x, mask)))


class AudioDecoder(Module):
    def __init__(self, model: ModelConfig, audio: AudioConfig, rng: np.random.Generator) -> None:
        self.embed = Linear(model.width, model.decoder_width, rng)
        self.mask_token = Parameter(rng.normal(0.0, model.init_std, size=(model.decoder_width,)))
        add_blocks(self, model.decoder_depth, model.decoder_width, model.decoder_heads, model.mlp_ratio, rng)
        self.norm = LayerNorm(model.decoder_width)
        self.head = Linear(model.decoder_width, audio.patch_dim, rng)
        self.positions = sinusoid_2d(audio.grid, model.decoder_width)

    def __call__(self, per_token: Tensor, plan: MaskPlan) -> Tensor:
        """Reconstruct all N patches [B, N, D_patch] from the N' visible features."""
        x = restore_order(self.embed(per_token), self.mask_token, plan)
        x = x + self.positions
        return self.head(self.norm(run_blocks(self, x)))


class FLAPModel(Module):
    """Both encoders, the optional reconstruction decoder and the learned temperature.

    The decoder exists only when the reconstruction loss weight is positive.
    Temperature is stored as its logarithm.
    """

    def __init__(self, config: Config, vocab_size: int, rng: np.random.Generator) -> None:
        config.model.validate()
        self.config = config
        self.audio_encoder = AudioEncoder(config.model, config.audio, rng)
        self.text_encoder = TextEncoder(config.model, vocab_size, rng)
        if config.loss.reconstruction_weight > 0:
            self.decoder = AudioDecoder(config.model, config.audio, rng)
        self.log_temperature = Parameter(
            np.array([math.log(config.loss.temperature_init)]), requires_grad=config.loss.learn_temperature
        )

    @property
    def has_decoder(self) -> bool:
        return "decoder" in vars(self)

    def temperature(self) -> Tensor:
        return exp(self.log_temperature)

    def clamp_temperature(self) -> None:
        floor = math.log(self.config.loss.temperature_min)
        np.maximum(self.log_temperature.data, floor, out=self.log_temperature.data)

    def audio_tokens(self, batch) -> Tensor | np.ndarray:
        """Patch tokens from either pre-cut patches [B, N, Dp] or fusion views [B, C, T, F]."""
        if np.ndim(batch) == 4:
            return self.audio_encoder.fusion(batch)
        return batch

    def encode_audio(self, batch, plan: MaskPlan) -> tuple[Tensor, Tensor]:
        return self.audio_encoder(self.audio_tokens(batch), plan)

    def encode_text(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        return self.text_encoder(ids, mask)

    def decode_audio(self, per_token: Tensor, plan: MaskPlan) -> Tensor:
        if not self.has_decoder:
            raise ConfigError("model was built without a decoder (loss.reconstruction_weight == 0)")
        return self.decoder(per_token, plan)
