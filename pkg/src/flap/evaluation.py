"""Text-to-audio and audio-to-text retrieval recall with masking disabled."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import Config, ConfigError, load_config
from .manifest import Manifest
from .masking import keep_all
from .model import FLAPModel
from .numerics import Tensor, load_checkpoint, no_grad
from .objectives import ContractError, NORM_TOLERANCE
from .text import Vocab, pad_batch, tokenize
from .training import FeatureStore

TEXT_TO_AUDIO = "text_to_audio"
AUDIO_TO_TEXT = "audio_to_text"
RECALL_KS = (1, 5, 10)


@dataclass
class RetrievalReport:
    direction: str
    recall_at: dict[int, float]
    num_queries: int

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "num_queries": self.num_queries,
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
        }


def _array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def similarity_matrix(audio, text) -> np.ndarray:
    """Cosine similarities [Q, P] between unit-normalized rows."""
    a, t = _array(audio), _array(text)
    for name, x in (("audio", a), ("text", t)):
        dev = np.max(np.abs(np.linalg.norm(x, axis=1) - 1.0)) if len(x) else 0.0
        if dev > NORM_TOLERANCE:
            raise ContractError(f"{name} rows must be unit-normalized; max |norm - 1| = {dev:.3g}")
    return a @ t.T


def top_k(sim: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best candidates per row; equal scores rank the lower index first."""
    if not 1 <= k <= sim.shape[1]:
        raise ConfigError(f"k={k} must lie in [1, {sim.shape[1]}]")
    return np.argsort(-sim, axis=1, kind="stable")[:, :k]


def recall_at_k(sim: np.ndarray, ground_truth: Sequence[set[int]], k: int) -> float:
    """Fraction of query rows with at least one correct index among their top k."""
    sim = np.asarray(sim)
    if len(ground_truth) != sim.shape[0]:
        raise ValueError(f"{len(ground_truth)} ground-truth sets for {sim.shape[0]} queries")
    if any(not gt for gt in ground_truth):
        raise ValueError("every query needs at least one correct candidate")
    best = top_k(sim, k)
    hits = sum(bool(gt.intersection(row.tolist())) for gt, row in zip(ground_truth, best))
    return hits / sim.shape[0]


def retrieval_report(sim: np.ndarray, ground_truth: Sequence[set[int]], direction: str) -> RetrievalReport:
    ks = [k for k in RECALL_KS if k <= sim.shape[1]] or [sim.shape[1]]
    recalls = {k: recall_at_k(sim, ground_truth, k) for k in ks}
    # a candidate pool smaller than k makes R@k trivially 1
    recalls.update({k: 1.0 for k in RECALL_KS if k > sim.shape[1]})
    return RetrievalReport(direction, dict(sorted(recalls.items())), sim.shape[0])


def embed_manifest(
    model: FLAPModel, store: FeatureStore, vocab: Vocab, batch_size: int = 64
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (audio [A, D], caption embeddings [C, D], owning audio index per caption [C])."""
    cfg = model.config
    records = store.records
    audio_rows, text_rows, owners, captions = [], [], [], []
    for i, record in enumerate(records):
        captions.extend(record.captions)
        owners.extend([i] * len(record.captions))
    with no_grad():
        for start in range(0, len(records), batch_size):
            ids = [r.id for r in records[start : start + batch_size]]
            inputs, _ = store.audio_batch(ids, rng=None)
            pooled, _ = model.encode_audio(inputs, keep_all(cfg.audio.num_patches, len(ids)))
            audio_rows.append(pooled.data)
        for start in range(0, len(captions), batch_size):
            chunk = [tokenize(c, vocab, cfg.model.max_text_len) for c in captions[start : start + batch_size]]
            text_rows.append(model.encode_text(*pad_batch(chunk)).data)
    return np.concatenate(audio_rows), np.concatenate(text_rows), np.asarray(owners)


def evaluate(model: FLAPModel, manifest: Manifest, vocab: Vocab) -> tuple[RetrievalReport, RetrievalReport]:
    """Both retrieval directions over every record and every caption.

    Each caption is a text-to-audio query with its own clip as the answer;
    each clip is an audio-to-text query answered by any of its captions.
    """
    if len(manifest) == 0:
        raise ValueError("cannot evaluate an empty manifest")
    store = FeatureStore(manifest, model.config)
    if not store.records:
        raise ValueError("no readable records in manifest")
    audio, text, owners = embed_manifest(model, store, vocab)
    t2a = retrieval_report(similarity_matrix(text, audio), [{int(o)} for o in owners], TEXT_TO_AUDIO)
    by_audio = [set(np.flatnonzero(owners == i).tolist()) for i in range(len(audio))]
    a2t = retrieval_report(similarity_matrix(audio, text), by_audio, AUDIO_TO_TEXT)
    return t2a, a2t


def load_trained(checkpoint: str | os.PathLike) -> tuple[FLAPModel, Config, Vocab]:
    """Rebuild a model from a checkpoint and the config.txt/vocab.txt saved beside it."""
    directory = Path(checkpoint).parent
    config = load_config(directory / "config.txt")
    vocab = Vocab.load(directory / "vocab.txt")
    model = FLAPModel(config, len(vocab), np.random.default_rng(0))
    model.load_state_dict(load_checkpoint(checkpoint))
    return model, config, vocab


def evaluate_checkpoint(checkpoint: str | os.PathLike, manifest: Manifest) -> tuple[RetrievalReport, RetrievalReport]:
    model, _, vocab = load_trained(checkpoint)
    return evaluate(model, manifest, vocab)


def reports_to_json(reports: Sequence[RetrievalReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2)


def format_table(reports: Sequence[RetrievalReport]) -> str:
    """One row, R@1/5/10 per direction, as percentages."""
    by_dir = {r.direction: r for r in reports}
    order = [d for d in (TEXT_TO_AUDIO, AUDIO_TO_TEXT) if d in by_dir]
    head1 = "".join(f"{'Text-Audio' if d == TEXT_TO_AUDIO else 'Audio-Text':^24}" for d in order)
    head2 = "".join(f"{'R@' + str(k):>8}" for _ in order for k in RECALL_KS)
    row = "".join(f"{100 * by_dir[d].recall_at[k]:8.1f}" for d in order for k in RECALL_KS)
    return "\n".join([head1.rstrip(), head2, row])
