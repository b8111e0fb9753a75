"""Analytic matmul cost of the audio encoder under token dropping.

Per transformer layer over N tokens of width D (2 FLOPs per multiply-add):

    linear    = 2 * (4 + 2 * mlp_ratio) * N * D^2     (Q, K, V, output; two MLP layers)
    attention = 2 * 2 * N^2 * D                       (scores and weighted sum)

Softmax, norms and the patch-embedding stem are not modelled.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

from .config import AudioConfig, ConfigError, ModelConfig
from .masking import keep_count
from .numerics import OpCounter, count_ops

CURVE_HEADER = ("strategy", "ratio_1", "ratio_2", "keep_fraction", "gflops", "relative")

# ViT-Base sized encoder; batch of eight 10 s clips
DEFAULT_ENCODER = ModelConfig(width=768, depth=12, heads=12, mlp_ratio=4.0)
DEFAULT_BATCH = 8


@dataclass
class CostReport:
    num_tokens: int
    num_kept: int
    depth: int
    width: int
    heads: int
    mlp_ratio: float
    batch_size: int
    flops_linear: int
    flops_attention: int
    reference_flops: int = field(repr=False, default=0)

    @property
    def keep_fraction(self) -> float:
        return self.num_kept / self.num_tokens

    @property
    def flops_total(self) -> int:
        return self.flops_linear + self.flops_attention

    @property
    def relative_to_unmasked(self) -> float:
        return self.flops_total / self.reference_flops

    @property
    def attention_share(self) -> float:
        return self.flops_attention / self.flops_total

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(keep_fraction=self.keep_fraction, flops_total=self.flops_total, relative=self.relative_to_unmasked)
        return out


def _layer_terms(n: int, width: int, mlp_ratio: float) -> tuple[int, int]:
    hidden = int(round(width * mlp_ratio))
    linear = 2 * (4 * n * width * width + 2 * n * width * hidden)
    attention = 2 * 2 * n * n * width
    return linear, attention


def encoder_flops(
    num_kept: int,
    depth: int,
    width: int,
    heads: int,
    mlp_ratio: float,
    batch_size: int = 1,
    num_tokens: int | None = None,
) -> CostReport:
    """Matmul FLOPs of ``depth`` encoder layers over ``num_kept`` tokens.

    ``num_tokens`` is the unmasked length used for ``relative_to_unmasked``
    (defaults to ``num_kept``).
    """
    if min(num_kept, depth, width, heads, batch_size) <= 0 or mlp_ratio <= 0:
        raise ConfigError("encoder dimensions must be positive")
    if width % heads:
        raise ConfigError(f"width {width} is not divisible by {heads} heads")
    num_tokens = num_kept if num_tokens is None else num_tokens
    linear, attention = _layer_terms(num_kept, width, mlp_ratio)
    ref_linear, ref_attention = _layer_terms(num_tokens, width, mlp_ratio)
    scale = depth * batch_size
    return CostReport(
        num_tokens, num_kept, depth, width, heads, mlp_ratio, batch_size,
        scale * linear, scale * attention, scale * (ref_linear + ref_attention),
    )


@dataclass
class CurveRow:
    strategy: str
    ratio_1: float
    ratio_2: float | None
    keep_fraction: float
    gflops: float
    relative: float

    def cells(self) -> list[str]:
        return [
            self.strategy,
            repr(self.ratio_1),
            "" if self.ratio_2 is None else repr(self.ratio_2),
            f"{self.keep_fraction:.6f}",
            f"{self.gflops:.6f}",
            f"{self.relative:.6f}",
        ]


def kept_tokens(strategy: str, num_tokens: int, ratio: float | tuple[float, float], groups: int | None = None) -> int:
    """Exact N' from the masking module's floor/clamp rules."""
    if strategy == "none":
        return num_tokens
    if strategy == "1d":
        return keep_count(num_tokens, float(ratio))
    if strategy == "2d":
        if groups is None or num_tokens % groups:
            raise ConfigError(f"2-D masking needs a group count dividing N={num_tokens}")
        r1, r2 = ratio if isinstance(ratio, tuple) else (ratio, ratio)
        return keep_count(groups, r1) * keep_count(num_tokens // groups, r2)
    raise ConfigError(f"unknown masking strategy {strategy!r}")


def masking_cost_curve(
    strategy: str,
    ratios: Iterable[float | tuple[float, float]],
    model: ModelConfig = DEFAULT_ENCODER,
    audio: AudioConfig | None = None,
    batch_size: int = DEFAULT_BATCH,
) -> list[CurveRow]:
    """One row per ratio. For ``2d`` a bare float applies to both the group and frame axes."""
    audio = audio or AudioConfig()
    n = audio.num_patches
    groups = audio.grid[0]
    rows = []
    for ratio in ratios:
        pair = ratio if isinstance(ratio, tuple) else ((ratio, ratio) if strategy == "2d" else (ratio, None))
        n_kept = kept_tokens(strategy, n, pair if strategy == "2d" else pair[0], groups)
        report = encoder_flops(n_kept, model.depth, model.width, model.heads, model.mlp_ratio, batch_size, n)
        rows.append(
            CurveRow(strategy, pair[0], pair[1], report.keep_fraction, report.flops_total / 1e9, report.relative_to_unmasked)
        )
    return rows


def write_cost_curve(rows: Sequence[CurveRow], path: str | os.PathLike | None = None) -> str:
    """Render rows as CSV; also writes them to ``path`` when given."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_HEADER)
    for row in rows:
        writer.writerow(row.cells())
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def measured_op_count(forward: Callable[[], object]) -> OpCounter:
    """Run ``forward`` once and return the matmul FLOPs it performed."""
    with count_ops() as counter:
        forward()
    return counter
