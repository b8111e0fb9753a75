"""JSON-lines dataset manifests binding audio files to captions."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

ORIGINAL = "original"
LLM_AUGMENTED = "llm_augmented"


class ManifestError(ValueError):
    pass


@dataclass
class CaptionRecord:
    """One audio clip and its captions.

    ``caption_sources`` parallels ``captions`` and tags each entry as
    ``original`` or ``llm_augmented``.
    """

    id: str
    audio_path: str
    captions: list[str]
    caption_sources: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.captions:
            raise ManifestError(f"record {self.id!r} has no captions")
        if not self.caption_sources:
            self.caption_sources = [ORIGINAL] * len(self.captions)
        if len(self.caption_sources) != len(self.captions):
            raise ManifestError(f"record {self.id!r}: caption_sources length differs from captions")
        bad = set(self.caption_sources) - {ORIGINAL, LLM_AUGMENTED}
        if bad:
            raise ManifestError(f"record {self.id!r}: unknown source tags {sorted(bad)}")


@dataclass
class Manifest:
    records: list[CaptionRecord]
    root: str | None = None  # directory relative audio paths hang off; None = not yet placed

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for r in self.records:
            if r.id in seen:
                raise ManifestError(f"duplicate record id {r.id!r}")
            seen.add(r.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[CaptionRecord]:
        return iter(self.records)

    def by_id(self) -> dict[str, CaptionRecord]:
        return {r.id: r for r in self.records}

    def resolve(self, record: CaptionRecord) -> Path:
        path = Path(record.audio_path)
        return path if path.is_absolute() else Path(self.root or ".") / path

    def all_captions(self) -> list[str]:
        return [c for r in self.records for c in r.captions]


def read_manifest(path: str | os.PathLike) -> Manifest:
    """Read a manifest; relative audio paths resolve against its directory."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(
                    CaptionRecord(
                        id=str(obj["id"]),
                        audio_path=obj["audio_path"],
                        captions=list(obj["captions"]),
                        caption_sources=list(obj.get("caption_sources", [])),
                    )
                )
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ManifestError(f"{path}:{lineno}: malformed record ({exc})") from exc
    return Manifest(records, root=str(Path(path).parent))


def write_manifest(manifest: Manifest, path: str | os.PathLike) -> None:
    """Write JSON lines; relative audio paths are rebased onto the new file's directory."""
    target_dir = Path(path).resolve().parent
    with open(path, "w", encoding="utf-8") as fh:
        for record in manifest.records:
            row = asdict(record)
            if manifest.root is not None and not Path(record.audio_path).is_absolute():
                row["audio_path"] = Path(os.path.relpath(manifest.resolve(record).resolve(), target_dir)).as_posix()
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
