"""1-D and 2-D random token dropping with restore bookkeeping.

Keep counts use floor with a clamp to at least one token:

    1-D:  N' = max(1, floor((1 - rho) * N))
    2-D:  M' = max(1, floor((1 - rho_M) * M)),  K' = max(1, floor((1 - rho_K) * K)),
          N' = M' * K'  with K = N / M

2-D groups are runs of K consecutive tokens in the flattened (time-major)
order; every kept group keeps the same number K' of its tokens, drawn
independently per group. Each batch item gets its own plan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, MaskConfig
from .numerics import ShapeError, Tensor, broadcast_to, concat, gather_rows

_ROUND_SLACK = 1e-9


def keep_count(n: int, ratio: float) -> int:
    """max(1, floor((1 - ratio) * n)), robust to binary representation of ratio."""
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"masking ratio {ratio} must lie in [0, 1)")
    return max(1, math.floor((1.0 - ratio) * n + _ROUND_SLACK))


@dataclass
class MaskPlan:
    """Which tokens each batch item keeps.

    ``kept`` [B, N'] and ``dropped`` [B, N - N'] hold ascending token indices;
    ``restore`` [B, N] maps positions of the concatenation [kept ‖ dropped]
    back to original order, i.e. concat(kept, dropped)[b, restore[b]] == arange(N).
    """

    strategy: str
    kept: np.ndarray
    dropped: np.ndarray
    restore: np.ndarray
    num_tokens: int
    params: tuple = ()

    @property
    def batch_size(self) -> int:
        return self.kept.shape[0]

    @property
    def num_kept(self) -> int:
        return self.kept.shape[1]

    @property
    def num_dropped(self) -> int:
        return self.num_tokens - self.num_kept

    @property
    def keep_fraction(self) -> float:
        return self.num_kept / self.num_tokens

    def dropped_mask(self) -> np.ndarray:
        """[B, N] float mask, 1.0 at dropped positions."""
        mask = np.zeros((self.batch_size, self.num_tokens))
        np.put_along_axis(mask, self.dropped, 1.0, axis=1)
        return mask


def _from_kept(strategy: str, kept: np.ndarray, n: int, params: tuple) -> MaskPlan:
    b = kept.shape[0]
    flags = np.ones((b, n), dtype=bool)
    np.put_along_axis(flags, kept, False, axis=1)
    dropped = np.nonzero(flags)[1].reshape(b, n - kept.shape[1])
    restore = np.argsort(np.concatenate([kept, dropped], axis=1), axis=1, kind="stable")
    return MaskPlan(strategy, kept, dropped, restore, n, params)


def keep_all(n: int, batch_size: int = 1) -> MaskPlan:
    kept = np.tile(np.arange(n), (batch_size, 1))
    return _from_kept("none", kept, n, ())


def plan_mask_1d(n: int, ratio: float, rng: np.random.Generator, batch_size: int = 1) -> MaskPlan:
    """Keep a uniformly random subset of N' tokens per batch item."""
    n_keep = keep_count(n, ratio)
    kept = np.stack([np.sort(rng.permutation(n)[:n_keep]) for _ in range(batch_size)])
    return _from_kept("1d", kept, n, (ratio,))


def plan_mask_2d(
    n: int, groups: int, group_ratio: float, frame_ratio: float, rng: np.random.Generator, batch_size: int = 1
) -> MaskPlan:
    """Keep M' random groups, and K' random tokens inside each kept group."""
    if groups <= 0 or n % groups:
        raise ConfigError(f"2-D masking needs the group count M={groups} to divide N={n}")
    k = n // groups
    m_keep = keep_count(groups, group_ratio)
    k_keep = keep_count(k, frame_ratio)
    rows = []
    for _ in range(batch_size):
        chosen = np.sort(rng.permutation(groups)[:m_keep])
        inner = np.stack([np.sort(rng.permutation(k)[:k_keep]) for _ in chosen])
        rows.append((chosen[:, None] * k + inner).reshape(-1))
    return _from_kept("2d", np.stack(rows), n, (groups, group_ratio, frame_ratio))


def plan_mask(
    config: MaskConfig,
    n: int,
    rng: np.random.Generator,
    batch_size: int = 1,
    train: bool = True,
    default_groups: int | None = None,
) -> MaskPlan:
    """Plan from config; evaluation (``train=False``) always keeps every token."""
    if not train or config.strategy == "none":
        return keep_all(n, batch_size)
    if config.strategy == "1d":
        return plan_mask_1d(n, config.ratio, rng, batch_size)
    if config.strategy == "2d":
        groups = config.groups or default_groups
        if groups is None:
            raise ConfigError("2-D masking needs mask.groups")
        return plan_mask_2d(n, groups, config.group_ratio, config.frame_ratio, rng, batch_size)
    raise ConfigError(f"unknown masking strategy {config.strategy!r}")


def apply_mask(tokens: Tensor, plan: MaskPlan) -> Tensor:
    """Select kept rows: out[b, j] = tokens[b, plan.kept[b, j]]."""
    if tokens.ndim != 3 or tokens.shape[1] != plan.num_tokens or tokens.shape[0] != plan.batch_size:
        raise ShapeError(
            f"mask plan for B={plan.batch_size}, N={plan.num_tokens} does not fit tokens of shape {tokens.shape}"
        )
    return gather_rows(tokens, plan.kept)


def restore_order(visible: Tensor, mask_token: Tensor, plan: MaskPlan) -> Tensor:
    """Scatter visible rows back to their positions, filling the rest with ``mask_token``."""
    b, n_vis, d = visible.shape
    if (b, n_vis) != (plan.batch_size, plan.num_kept) or mask_token.shape != (d,):
        raise ShapeError(
            f"restore_order: visible {visible.shape} / mask token {mask_token.shape} "
            f"do not match plan (B={plan.batch_size}, N'={plan.num_kept})"
        )
    if plan.num_dropped == 0:
        full = visible
    else:
        fill = broadcast_to(mask_token, (b, plan.num_dropped, d))
        full = concat([visible, fill], axis=1)
    return gather_rows(full, plan.restore)
