"""Caption record model plus line-delimited corpus, annotation, and shard I/O.

A corpus is a UTF-8 file with one JSON object per line::

    {"id": "c1", "caption": "a black dog", "image_ref": "http://...", "scores": {"vba": 0.9}}

``image_ref`` may be omitted. ``scores`` maps free-form score names to reals
in [0, 1], so new scorers can attach values without schema changes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator


class CorpusError(ValueError):
    """Malformed corpus content (carries file/line context in the message)."""


class AnnotationError(ValueError):
    """Malformed or out-of-range annotation content."""


@dataclass(frozen=True)
class CaptionRecord:
    """One corpus item: an id, the caption text, and attached named scores.

    Instances are immutable; use :meth:`with_score` to derive enriched copies.
    """

    id: str
    caption: str
    image_ref: str | None = None
    scores: dict[str, float] = field(default_factory=dict)

    def validate(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise CorpusError("record id must be a non-empty string")
        if not isinstance(self.caption, str) or not self.caption.strip():
            raise CorpusError(f"record {self.id!r}: caption is empty")
        if self.image_ref is not None and not isinstance(self.image_ref, str):
            raise CorpusError(f"record {self.id!r}: image_ref must be a string")
        for name, value in self.scores.items():
            if not isinstance(name, str) or not name:
                raise CorpusError(f"record {self.id!r}: score names must be non-empty strings")
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not 0.0 <= value <= 1.0:
                raise CorpusError(f"record {self.id!r}: score {name!r}={value!r} outside [0, 1]")

    def with_score(self, name: str, value: float) -> "CaptionRecord":
        """Return a copy of this record with ``name`` set to ``value``."""
        scores = dict(self.scores)
        scores[name] = float(value)
        rec = CaptionRecord(self.id, self.caption, self.image_ref, scores)
        rec.validate()
        return rec

    def to_json(self) -> str:
        obj: dict = {"id": self.id, "caption": self.caption}
        if self.image_ref is not None:
            obj["image_ref"] = self.image_ref
        obj["scores"] = self.scores
        return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_obj(cls, obj: object) -> "CaptionRecord":
        if not isinstance(obj, dict):
            raise CorpusError("record must be a JSON object")
        unknown = set(obj) - {"id", "caption", "image_ref", "scores"}
        if unknown:
            raise CorpusError(f"unknown record fields: {sorted(unknown)}")
        scores = obj.get("scores") or {}
        if not isinstance(scores, dict):
            raise CorpusError("scores must be an object of name -> number")
        rec = cls(
            id=obj.get("id", ""),
            caption=obj.get("caption", ""),
            image_ref=obj.get("image_ref"),
            scores={k: float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v
                    for k, v in scores.items()},
        )
        rec.validate()
        return rec


@dataclass
class ReadStats:
    """Counters filled in by :func:`read_corpus` in lenient mode."""

    read: int = 0
    skipped: int = 0
    duplicates: int = 0


def read_corpus(path: str | Path, strict: bool = True,
                stats: ReadStats | None = None) -> Iterator[CaptionRecord]:
    """Stream records from a line-delimited corpus file.

    In strict mode the first malformed line or duplicate id aborts with a
    :class:`CorpusError` naming the line. In lenient mode malformed lines are
    skipped and counted in ``stats``; duplicate ids pass through (and are
    counted), so keyed consumers such as :func:`load_index` see the last
    occurrence win.
    """
    path = Path(path)
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = CaptionRecord.from_obj(json.loads(line))
            except (json.JSONDecodeError, CorpusError) as exc:
                if strict:
                    raise CorpusError(f"{path}:{lineno}: {exc}") from exc
                if stats is not None:
                    stats.skipped += 1
                continue
            if record.id in seen:
                if strict:
                    raise CorpusError(f"{path}:{lineno}: duplicate id {record.id!r}")
                if stats is not None:
                    stats.duplicates += 1
            else:
                seen.add(record.id)
            if stats is not None:
                stats.read += 1
            yield record


def load_index(path: str | Path, strict: bool = False) -> dict[str, CaptionRecord]:
    """Materialize a corpus into an id-keyed dict (duplicates: last wins)."""
    return {rec.id: rec for rec in read_corpus(path, strict=strict)}


def write_corpus(records: Iterable[CaptionRecord], path: str | Path) -> int:
    """Write records one JSON object per line; returns the record count."""
    path = Path(path)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            record.validate()
            fh.write(record.to_json())
            fh.write("\n")
            count += 1
    return count


@dataclass(frozen=True)
class ShardManifest:
    shard_paths: tuple[str, ...]
    records_per_shard: tuple[int, ...]
    total: int

    def validate(self) -> None:
        if len(self.shard_paths) != len(self.records_per_shard):
            raise CorpusError("manifest lists must have equal length")
        if sum(self.records_per_shard) != self.total:
            raise CorpusError("manifest total does not match per-shard counts")

    def to_json(self) -> str:
        return json.dumps(
            {
                "shard_paths": list(self.shard_paths),
                "records_per_shard": list(self.records_per_shard),
                "total": self.total,
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_obj(cls, obj: dict) -> "ShardManifest":
        manifest = cls(
            shard_paths=tuple(obj["shard_paths"]),
            records_per_shard=tuple(int(n) for n in obj["records_per_shard"]),
            total=int(obj["total"]),
        )
        manifest.validate()
        return manifest

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ShardManifest":
        return cls.from_obj(json.loads(Path(path).read_text(encoding="utf-8")))


def shard(records: Iterable[CaptionRecord], shard_size: int,
          out_dir: str | Path, prefix: str = "shard") -> ShardManifest:
    """Split records in input order into files of ``shard_size`` records.

    The final shard may be smaller. Returns a manifest whose concatenation
    order reproduces the input sequence.
    """
    if shard_size < 1:
        raise ValueError("shard_size must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    paths: list[str] = []
    counts: list[int] = []
    fh = None
    current = 0
    try:
        for record in records:
            if fh is None:
                shard_path = out_dir / f"{prefix}-{len(paths):05d}.jsonl"
                fh = shard_path.open("w", encoding="utf-8")
                paths.append(str(shard_path))
                counts.append(0)
                current = 0
            fh.write(record.to_json())
            fh.write("\n")
            current += 1
            counts[-1] = current
            if current == shard_size:
                fh.close()
                fh = None
    finally:
        if fh is not None:
            fh.close()
    manifest = ShardManifest(tuple(paths), tuple(counts), sum(counts))
    manifest.validate()
    return manifest


@dataclass(frozen=True)
class AnnotationSet:
    """Human concreteness labels keyed by caption id, on a bounded scale."""

    scale_min: int
    scale_max: int
    labels: dict[str, float]

    def validate(self) -> None:
        if self.scale_min >= self.scale_max:
            raise AnnotationError(f"scale [{self.scale_min}, {self.scale_max}] is empty")
        for key, value in self.labels.items():
            if not self.scale_min <= value <= self.scale_max:
                raise AnnotationError(
                    f"label for {key!r} is {value}, outside [{self.scale_min}, {self.scale_max}]"
                )


def read_annotations(path: str | Path) -> AnnotationSet:
    """Read a tab-separated annotation file.

    Expected layout: a ``# scale <min> <max>`` comment line, an ``id<TAB>score``
    header, then one ``id<TAB>value`` row per caption.
    """
    path = Path(path)
    scale: tuple[int, int] | None = None
    labels: dict[str, float] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts and parts[0] == "scale":
                    if len(parts) != 3:
                        raise AnnotationError(f"{path}:{lineno}: malformed scale declaration")
                    scale = (int(parts[1]), int(parts[2]))
                continue
            if line == "id\tscore":
                continue
            if scale is None:
                raise AnnotationError(f"{path}: missing '# scale <min> <max>' declaration")
            fields = line.split("\t")
            if len(fields) != 2:
                raise AnnotationError(f"{path}:{lineno}: expected 'id<TAB>score'")
            key, value = fields[0], float(fields[1])
            if key in labels:
                raise AnnotationError(f"{path}:{lineno}: duplicate id {key!r}")
            labels[key] = value
    if scale is None:
        raise AnnotationError(f"{path}: missing '# scale <min> <max>' declaration")
    annotations = AnnotationSet(scale[0], scale[1], labels)
    annotations.validate()
    return annotations


def write_annotations(annotations: AnnotationSet, path: str | Path) -> None:
    annotations.validate()
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"# scale {annotations.scale_min} {annotations.scale_max}\n")
        fh.write("id\tscore\n")
        for key, value in annotations.labels.items():
            fh.write(f"{key}\t{value!r}\n")
