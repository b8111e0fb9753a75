"""Contrastive InfoNCE, masked-patch reconstruction MSE and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError
from .masking import MaskPlan
from .numerics import ShapeError, Tensor, cross_entropy_rows, gather_rows

NORM_TOLERANCE = 1e-6


class ContractError(ValueError):
    """Inputs violate a documented precondition (e.g. non-unit embeddings)."""


def _check_unit_rows(x: Tensor, name: str) -> None:
    norms = np.linalg.norm(x.data, axis=-1)
    worst = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
    if worst > NORM_TOLERANCE:
        raise ContractError(f"{name} rows must be unit-normalized; max |norm - 1| = {worst:.3g}")


def info_nce(audio: Tensor, text: Tensor, temperature, symmetric: bool = True) -> Tensor:
    """Batch InfoNCE over cosine similarities, matching pairs on the diagonal.

    With ``symmetric=False`` only the audio-anchored direction is used:
    -(1/B) sum_i log softmax_j(a_i . t_j / tau)[i]. The symmetric form averages
    it with the text-anchored direction.
    """
    if audio.ndim != 2 or audio.shape != text.shape:
        raise ShapeError(f"info_nce needs matching [B, D] inputs, got {audio.shape} and {text.shape}")
    _check_unit_rows(audio, "audio")
    _check_unit_rows(text, "text")
    tau = temperature if isinstance(temperature, Tensor) else Tensor(np.asarray(temperature, dtype=np.float64))
    if np.any(tau.data <= 0):
        raise ConfigError(f"temperature must be positive, got {tau.data}")
    logits = (audio @ text.transpose()) / tau.reshape(())
    targets = np.arange(audio.shape[0])
    loss = cross_entropy_rows(logits, targets)
    if symmetric:
        loss = (loss + cross_entropy_rows(logits.transpose(), targets)) * 0.5
    return loss


def reconstruction_mse(reconstructed: Tensor, target, plan: MaskPlan) -> tuple[Tensor, bool]:
    """Mean squared error over the masked patches only.

    Returns ``(loss, active)``. Visible patches are never read. With a keep-all
    plan there is nothing to reconstruct and the result is ``(0, False)``.
    """
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if reconstructed.shape != target.shape:
        raise ShapeError(f"reconstruction {reconstructed.shape} and target {target.shape} differ")
    if reconstructed.shape[:2] != (plan.batch_size, plan.num_tokens):
        raise ShapeError(f"plan (B={plan.batch_size}, N={plan.num_tokens}) does not match {reconstructed.shape}")
    if plan.num_dropped == 0:
        return Tensor(0.0), False
    picked = gather_rows(reconstructed, plan.dropped)
    truth = np.take_along_axis(target, plan.dropped[..., None], axis=1)
    diff = picked - truth
    return (diff * diff).mean(), True


@dataclass
class LossReport:
    contrastive: Tensor
    reconstruction: Tensor
    total: Tensor
    temperature: float
    weight: float
    reconstruction_active: bool = False

    def scalars(self) -> dict[str, float]:
        return {
            "contrastive": self.contrastive.item(),
            "reconstruction": self.reconstruction.item(),
            "total": self.total.item(),
            "temperature": self.temperature,
        }


def combined_loss(
    audio: Tensor,
    text: Tensor,
    temperature,
    reconstruction: tuple[Tensor, np.ndarray, MaskPlan] | None = None,
    weight: float = 1.0,
    symmetric: bool = True,
) -> LossReport:
    """total = contrastive + weight * reconstruction.

    ``reconstruction`` is ``(reconstructed, target_patches, plan)`` or None;
    a zero weight skips the reconstruction term entirely.
    """
    contrastive = info_nce(audio, text, temperature, symmetric)
    tau = float(np.asarray(temperature.data if isinstance(temperature, Tensor) else temperature).reshape(-1)[0])
    if reconstruction is None or weight == 0:
        return LossReport(contrastive, Tensor(0.0), contrastive, tau, weight)
    recon, active = reconstruction_mse(*reconstruction)
    total = contrastive + recon * weight if active else contrastive
    return LossReport(contrastive, recon, total, tau, weight, active)
