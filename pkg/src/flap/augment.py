"""Caption enrichment: audio tags + original caption -> prompt -> text endpoint -> extra captions."""

from __future__ import annotations

import copy
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx
import numpy as np

from .audio import load_wav, mel_center_frequencies, mel_spectrogram
from .config import AudioConfig
from .manifest import LLM_AUGMENTED, ORIGINAL, CaptionRecord, Manifest, ManifestError

logger = logging.getLogger(__name__)

PROMPT_TEMPLATE = "Describe a situation with {tags} sounds and combine it with the {caption} together."
CLEAN_PROMPT_TEMPLATE = "Describe a situation with {tags} sounds, consistent with this description: {caption}"
MAX_PROMPT_TAGS = 5


class TaggingError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass
class TagResult:
    """Ranked (label, score) pairs, highest score first."""

    record_id: str
    tags: list[tuple[str, float]]

    def __post_init__(self) -> None:
        if not self.tags:
            raise TaggingError(f"no tags for record {self.record_id!r}")
        self.tags = sorted(((str(label), float(score)) for label, score in self.tags), key=lambda t: -t[1])

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self.tags]


@dataclass
class AugmentedCaption:
    record_id: str
    original: str
    generated: str
    prompt: str
    provider: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)


class Tagger(Protocol):
    def tag(self, record: CaptionRecord, manifest: Manifest) -> TagResult: ...


class FileTagger:
    """Precomputed tags: one JSON file mapping id -> {label: score}, or a directory of ``<id>.json``."""

    def __init__(self, source: str | os.PathLike) -> None:
        self.source = Path(source)
        self._table: dict | None = None
        if self.source.is_file():
            with open(self.source, encoding="utf-8") as fh:
                self._table = json.load(fh)

    def _lookup(self, record_id: str):
        if self._table is not None:
            if record_id not in self._table:
                raise TaggingError(f"no tag entry for record {record_id!r} in {self.source}")
            return self._table[record_id]
        path = self.source / f"{record_id}.json"
        if not path.exists():
            raise TaggingError(f"missing tag sidecar {path} for record {record_id!r}")
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    def tag(self, record: CaptionRecord, manifest: Manifest | None = None) -> TagResult:
        entry = self._lookup(record.id)
        if isinstance(entry, dict):
            pairs = list(entry.items())
        elif isinstance(entry, list):
            pairs = [(e["label"], e["score"]) if isinstance(e, dict) else tuple(e) for e in entry]
        else:
            raise TaggingError(f"tag entry for {record.id!r} must be a mapping or a list")
        return TagResult(record.id, pairs)


# label, lower edge Hz, upper edge Hz
BAND_RULES: tuple[tuple[str, float, float], ...] = (
    ("low rumble", 0.0, 250.0),
    ("hum", 250.0, 1000.0),
    ("tonal whistle", 1000.0, 4000.0),
    ("hiss", 4000.0, float("inf")),
)


class BandEnergyTagger:
    """Offline toy tagger: each label scores its frequency band's share of mel power."""

    def __init__(self, audio: AudioConfig | None = None) -> None:
        self.audio = audio or AudioConfig()
        centers = mel_center_frequencies(self.audio)
        self._bands = [(label, (centers >= lo) & (centers < hi)) for label, lo, hi in BAND_RULES]

    def tag_waveform(self, record_id: str, waveform: np.ndarray) -> TagResult:
        power = np.exp(mel_spectrogram(waveform, self.audio).frames).sum(axis=0)
        total = power.sum()
        return TagResult(record_id, [(label, float(power[sel].sum() / total)) for label, sel in self._bands])

    def tag(self, record: CaptionRecord, manifest: Manifest) -> TagResult:
        return self.tag_waveform(record.id, load_wav(manifest.resolve(record), self.audio.sample_rate))


def build_prompt(tags: Sequence[str] | TagResult, caption: str, cleaned: bool = False, max_tags: int = MAX_PROMPT_TAGS) -> str:
    """Fill the caption-enrichment template with the top tags and the caption, verbatim."""
    labels = tags.labels if isinstance(tags, TagResult) else list(tags)
    labels = labels[:max_tags]
    if not labels or not caption:
        raise ValueError("build_prompt needs at least one tag and a nonempty caption")
    template = CLEAN_PROMPT_TEMPLATE if cleaned else PROMPT_TEMPLATE
    return template.format(tags=", ".join(labels), caption=caption)


@dataclass
class EndpointConfig:
    """A text-generation service: POST {prompt, max_tokens, temperature} -> {text}."""

    url: str
    auth_header: str | None = None
    timeout: float = 30.0
    max_tokens: int = 128
    temperature: float = 0.7
    attempts: int = 3
    backoff: float = 0.5
    max_in_flight: int = 4

    @classmethod
    def from_env(cls, **overrides) -> "EndpointConfig":
        """Reads ``FLAP_LLM_URL`` and optional ``FLAP_LLM_AUTH`` (full Authorization header value)."""
        url = overrides.pop("url", None) or os.environ.get("FLAP_LLM_URL")
        if not url:
            raise GenerationError("no endpoint URL: pass one or set FLAP_LLM_URL")
        overrides.setdefault("auth_header", os.environ.get("FLAP_LLM_AUTH"))
        return cls(url=url, **overrides)


def _single_paragraph(text: str) -> str:
    first = text.strip().split("\n\n", 1)[0]
    return " ".join(first.split())


def _retryable(status: int) -> bool:
    return status == 429 or status >= 500


def generate_caption(
    prompt: str,
    endpoint: EndpointConfig,
    client: httpx.Client | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[str, dict]:
    """POST the prompt, retrying rate limits, server errors and network failures.

    Waits ``backoff * 2**k`` seconds before retry k+1. Returns the trimmed
    first paragraph and provider metadata; raises ``GenerationError`` when all
    attempts fail, on a non-retryable status, or on an empty generation.
    """
    headers = {"Authorization": endpoint.auth_header} if endpoint.auth_header else {}
    payload = {"prompt": prompt, "max_tokens": endpoint.max_tokens, "temperature": endpoint.temperature}
    owned = client is None
    client = client or httpx.Client(timeout=endpoint.timeout)
    last_error = "no attempt made"
    try:
        for attempt in range(endpoint.attempts):
            if attempt:
                sleep(endpoint.backoff * 2 ** (attempt - 1))
            try:
                response = client.post(endpoint.url, json=payload, headers=headers, timeout=endpoint.timeout)
            except httpx.TransportError as exc:
                last_error = f"network error: {exc}"
                continue
            if _retryable(response.status_code):
                last_error = f"HTTP {response.status_code}"
                continue
            if response.status_code >= 400:
                raise GenerationError(f"endpoint rejected request: HTTP {response.status_code}")
            try:
                text = response.json()["text"]
            except (ValueError, KeyError, TypeError) as exc:
                raise GenerationError(f"malformed endpoint response: {exc}") from exc
            text = _single_paragraph(str(text))
            if not text:
                raise GenerationError("endpoint returned an empty generation")
            meta = {"url": endpoint.url, "attempts": attempt + 1, "temperature": endpoint.temperature,
                    "max_tokens": endpoint.max_tokens}
            return text, meta
    finally:
        if owned:
            client.close()
    raise GenerationError(f"giving up after {endpoint.attempts} attempts ({last_error})")


def augment_manifest(
    manifest: Manifest,
    tagger: Tagger,
    endpoint: EndpointConfig,
    client: httpx.Client | None = None,
    cleaned: bool = False,
    sleep: Callable[[float], None] = time.sleep,
) -> list[AugmentedCaption]:
    """One generated caption per original caption, requests issued concurrently.

    Records whose tagging or generation fails are logged and skipped. Output
    order follows the manifest regardless of completion order.
    """
    jobs: list[tuple[CaptionRecord, str, str]] = []
    for record in manifest:
        try:
            tags = tagger.tag(record, manifest)
        except (TaggingError, OSError, ValueError) as exc:
            logger.error("skipping record %s: tagging failed (%s)", record.id, exc)
            continue
        for caption, source in zip(record.captions, record.caption_sources):
            if source == ORIGINAL:
                jobs.append((record, caption, build_prompt(tags, caption, cleaned)))

    def run(job: tuple[CaptionRecord, str, str]) -> AugmentedCaption | None:
        record, caption, prompt = job
        try:
            text, meta = generate_caption(prompt, endpoint, client, sleep)
        except GenerationError as exc:
            logger.error("skipping record %s: %s", record.id, exc)
            return None
        return AugmentedCaption(record.id, caption, text, prompt, meta)

    with ThreadPoolExecutor(max_workers=max(1, endpoint.max_in_flight)) as pool:
        results = list(pool.map(run, jobs))
    return [r for r in results if r is not None]


def merge_manifest(original: Manifest, augmented: Sequence[AugmentedCaption]) -> Manifest:
    """Copy of ``original`` with each generated caption appended to its record.

    Original captions are never touched; a generated string already present on
    the record is not added again, so merging twice changes nothing.
    """
    records = [copy.deepcopy(r) for r in original]
    index = {r.id: r for r in records}
    for item in augmented:
        if item.record_id not in index:
            raise ManifestError(f"augmented caption refers to unknown record {item.record_id!r}")
        record = index[item.record_id]
        if item.generated not in record.captions:
            record.captions.append(item.generated)
            record.caption_sources.append(LLM_AUGMENTED)
    return Manifest(records, root=original.root)


def write_augmented(items: Sequence[AugmentedCaption], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(item.to_json() + "\n")


def read_augmented(path: str | os.PathLike) -> list[AugmentedCaption]:
    with open(path, encoding="utf-8") as fh:
        return [AugmentedCaption(**json.loads(line)) for line in fh if line.strip()]
