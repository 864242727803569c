"""Budget-constrained selection and distillation-set emission.

Selection is built for corpora far larger than memory: top-k keeps a bounded
heap of size k, random sampling ranks records by a seeded hash of their id
(uniform without replacement, and independent of sharding or worker count),
and threshold selection streams. All methods emit survivors in original
corpus order so outputs diff cleanly across runs.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
import random
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .corpus import CaptionRecord, ReadStats, read_corpus

METHODS = ("top_k", "threshold", "random")


@dataclass(frozen=True)
class SelectionSpec:
    """One selection stage, optionally stacked on a prefilter stage.

    The prefilter, when present, runs first over the full input and the
    outer method runs on its survivors.
    """

    method: str
    score_name: str | None = None
    k: int | None = None
    theta: float | None = None
    seed: int | None = None
    prefilter: "SelectionSpec | None" = None

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown selection method {self.method!r}")
        if self.method == "top_k":
            if self.k is None or self.k < 1:
                raise ValueError("top_k needs k >= 1")
            if not self.score_name:
                raise ValueError("top_k needs a score name")
        elif self.method == "threshold":
            if self.theta is None:
                raise ValueError("threshold needs theta")
            if not self.score_name:
                raise ValueError("threshold needs a score name")
        elif self.method == "random":
            if self.k is None or self.k < 1:
                raise ValueError("random needs k >= 1")
            if self.seed is None:
                raise ValueError("random needs a seed for reproducibility")
        if self.prefilter is not None:
            self.prefilter.validate()

    def to_obj(self) -> dict:
        obj: dict = {"method": self.method}
        if self.score_name is not None:
            obj["score_name"] = self.score_name
        if self.k is not None:
            obj["k"] = self.k
        if self.theta is not None:
            obj["theta"] = self.theta
        if self.seed is not None:
            obj["seed"] = self.seed
        if self.prefilter is not None:
            obj["prefilter"] = self.prefilter.to_obj()
        return obj

    @classmethod
    def from_obj(cls, obj: dict) -> "SelectionSpec":
        prefilter = obj.get("prefilter")
        spec = cls(
            method=obj["method"],
            score_name=obj.get("score_name"),
            k=obj.get("k"),
            theta=obj.get("theta"),
            seed=obj.get("seed"),
            prefilter=cls.from_obj(prefilter) if prefilter else None,
        )
        spec.validate()
        return spec

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_obj(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SelectionSpec":
        return cls.from_obj(json.loads(Path(path).read_text(encoding="utf-8")))


def _sample_key(seed: int, record_id: str) -> int:
    """Stable 64-bit rank for seeded random selection.

    Records with the k smallest keys form a uniform size-k sample; keys
    depend only on (seed, id), so the sample is invariant to record order,
    sharding, and worker count.
    """
    digest = hashlib.blake2b(f"{seed}\x00{record_id}".encode("utf-8"), digest_size=8)
    return int.from_bytes(digest.digest(), "big")


class _WorstFirst:
    """Heap adapter: the bounded heap keeps its *worst* candidate on top."""

    __slots__ = ("key", "pos", "record")

    def __init__(self, key, pos, record):
        self.key = key
        self.pos = pos
        self.record = record

    def __lt__(self, other):
        return self.key > other.key


def _rank_key(spec: SelectionSpec, record: CaptionRecord, pos) -> tuple:
    # ascending = better; id then pos break ties deterministically
    if spec.method == "random":
        return (_sample_key(spec.seed, record.id), record.id, pos)
    return (-record.scores[spec.score_name], record.id, pos)


def _scan_bounded(records: Iterable[tuple[object, CaptionRecord]], spec: SelectionSpec,
                  strict: bool, stats: ReadStats | None) -> tuple[list[_WorstFirst], int]:
    """One pass keeping the spec's k best candidates; returns (heap, eligible)."""
    heap: list[_WorstFirst] = []
    eligible = 0
    needs_score = spec.method != "random"
    for pos, record in records:
        if needs_score and spec.score_name not in record.scores:
            if strict:
                raise KeyError(f"record {record.id!r} has no score {spec.score_name!r}")
            if stats is not None:
                stats.skipped += 1
            continue
        eligible += 1
        item = _WorstFirst(_rank_key(spec, record, pos), pos, record)
        if len(heap) < spec.k:
            heapq.heappush(heap, item)
        elif heap[0] < item:
            heapq.heapreplace(heap, item)
    return heap, eligible


def _merge_bounded(parts: Iterable[tuple[list[_WorstFirst], int]], spec: SelectionSpec) -> list[CaptionRecord]:
    candidates: list[_WorstFirst] = []
    eligible = 0
    for heap, count in parts:
        candidates.extend(heap)
        eligible += count
    if spec.k > eligible:
        warnings.warn(f"requested k={spec.k} but only {eligible} records are eligible; "
                      f"returning all of them")
    winners = sorted(candidates, key=lambda item: item.key)[:spec.k]
    winners.sort(key=lambda item: item.pos)
    return [item.record for item in winners]


def _select_threshold(records: Iterable[CaptionRecord], spec: SelectionSpec,
                      strict: bool, stats: ReadStats | None) -> Iterator[CaptionRecord]:
    for record in records:
        if spec.score_name not in record.scores:
            if strict:
                raise KeyError(f"record {record.id!r} has no score {spec.score_name!r}")
            if stats is not None:
                stats.skipped += 1
            continue
        if record.scores[spec.score_name] >= spec.theta:
            yield record


def select(records: Iterable[CaptionRecord], spec: SelectionSpec,
           strict: bool = True, stats: ReadStats | None = None) -> Iterator[CaptionRecord]:
    """Apply a selection spec to a record stream, preserving input order.

    ``threshold`` yields lazily; ``top_k`` and ``random`` buffer at most k
    records. Records missing the ranking score abort in strict mode and are
    skipped (and counted) in lenient mode.
    """
    spec.validate()
    if spec.prefilter is not None:
        survivors = select(records, spec.prefilter, strict=strict, stats=stats)
        return select(survivors, replace(spec, prefilter=None), strict=strict, stats=stats)
    if spec.method == "threshold":
        return _select_threshold(records, spec, strict, stats)
    part = _scan_bounded(enumerate(records), spec, strict, stats)
    return iter(_merge_bounded([part], spec))


def select_sharded(shard_paths: Sequence[str | Path], spec: SelectionSpec,
                   workers: int = 1, strict: bool = True,
                   stats: ReadStats | None = None) -> list[CaptionRecord]:
    """Run a selection over sharded corpus files with shard-level parallelism.

    The merge is deterministic for any worker count: per-shard candidates
    are combined in shard order and ranked with the same tie-break rule as
    the in-memory path. Nested prefilter stages run innermost first, each
    stage fully resolved before the next.
    """
    spec.validate()
    chain: list[SelectionSpec] = []
    stage: SelectionSpec | None = spec
    while stage is not None:
        chain.append(stage)
        stage = stage.prefilter

    innermost = replace(chain[-1], prefilter=None)
    records = _run_stage_over_shards(shard_paths, innermost, workers, strict, stats)
    for outer in reversed(chain[:-1]):
        records = list(select(iter(records), replace(outer, prefilter=None),
                              strict=strict, stats=stats))
    return records


def _run_stage_over_shards(shard_paths: Sequence[str | Path], spec: SelectionSpec,
                           workers: int, strict: bool,
                           stats: ReadStats | None) -> list[CaptionRecord]:
    # each worker gets private counters; merged single-threaded afterwards
    def scan_bounded(idx_path):
        idx, path = idx_path
        local = ReadStats()
        rows = (((idx, line), rec) for line, rec in enumerate(read_corpus(path, strict=strict, stats=local)))
        heap, eligible = _scan_bounded(rows, spec, strict, local)
        return heap, eligible, local

    def scan_threshold(idx_path):
        _, path = idx_path
        local = ReadStats()
        selected = list(_select_threshold(read_corpus(path, strict=strict, stats=local),
                                          spec, strict, local))
        return selected, local

    def run(fn, jobs):
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(fn, jobs))
        return [fn(job) for job in jobs]

    jobs = list(enumerate(shard_paths))
    if spec.method == "threshold":
        parts = run(scan_threshold, jobs)
        if stats is not None:
            for _, local in parts:
                _merge_stats(stats, local)
        return [record for part, _ in parts for record in part]

    parts = run(scan_bounded, jobs)
    if stats is not None:
        for _, _, local in parts:
            _merge_stats(stats, local)
    return _merge_bounded([(heap, eligible) for heap, eligible, _ in parts], spec)


def _merge_stats(target: ReadStats, part: ReadStats) -> None:
    target.read += part.read
    target.skipped += part.skipped
    target.duplicates += part.duplicates


@dataclass(frozen=True)
class TrainingBudget:
    """The fixed-iteration training regime: dataset size M, iteration cap N."""

    dataset_size: int
    iterations: int
    batch_size: int

    def validate(self) -> None:
        if min(self.dataset_size, self.iterations, self.batch_size) < 1:
            raise ValueError("budget fields must all be >= 1")


@dataclass(frozen=True)
class EpochPlan:
    epochs: float
    steps: int


def plan_epochs(budget: TrainingBudget, selected_count: int) -> EpochPlan:
    """How many passes a fixed iteration budget makes over the selected set."""
    budget.validate()
    if selected_count < 1:
        raise ValueError("selected_count must be >= 1")
    return EpochPlan(
        epochs=budget.iterations * budget.batch_size / selected_count,
        steps=budget.iterations,
    )


def emit_distillation_set(records: Iterable[CaptionRecord], target_score: str,
                          target_space: str, out: str | Path) -> int:
    """Write (caption, target) training pairs, one JSON object per line.

    ``target_space`` is ``probability`` (stored score as-is) or ``logit``
    (ln(t / (1-t)); requires every target strictly inside (0, 1)). A sidecar
    ``<out>.meta.json`` records the space, source score, and count so
    trainers know what they are regressing onto.
    """
    if target_space not in ("probability", "logit"):
        raise ValueError(f"unknown target space {target_space!r}")
    out = Path(out)
    count = 0
    with out.open("w", encoding="utf-8") as fh:
        for record in records:
            if target_score not in record.scores:
                raise KeyError(f"record {record.id!r} has no score {target_score!r}")
            target = record.scores[target_score]
            if target_space == "logit":
                if not 0.0 < target < 1.0:
                    raise ValueError(
                        f"record {record.id!r}: target {target!r} outside (0, 1); "
                        f"logit space is undefined there")
                target = math.log(target / (1.0 - target))
            fh.write(json.dumps({"caption": record.caption, "target": target},
                                ensure_ascii=False))
            fh.write("\n")
            count += 1
    meta = {"target_space": target_space, "score_name": target_score, "count": count}
    out.with_name(out.name + ".meta.json").write_text(json.dumps(meta) + "\n", encoding="utf-8")
    return count


def split_fraction_sizes(total: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``total`` records to fractions."""
    if not fractions or any(f <= 0 for f in fractions):
        raise ValueError("fractions must be positive")
    if sum(fractions) > 1.0 + 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)}, more than 1")
    quotas = [total * f for f in fractions]
    sizes = [math.floor(q) for q in quotas]
    assigned_target = round(sum(quotas))
    remainders = sorted(range(len(fractions)), key=lambda i: quotas[i] - sizes[i], reverse=True)
    for i in remainders[: assigned_target - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_corpus(records: Iterable[CaptionRecord], fractions: Sequence[float],
                 seed: int) -> list[list[CaptionRecord]]:
    """Deterministic seeded partition into parts sized by the fractions.

    Parts are disjoint; with fractions summing to 1 their union is the
    input. Records keep corpus order within each part.
    """
    pool = list(records)
    sizes = split_fraction_sizes(len(pool), fractions)
    indices = list(range(len(pool)))
    random.Random(seed).shuffle(indices)
    parts: list[list[CaptionRecord]] = []
    offset = 0
    for size in sizes:
        chosen = sorted(indices[offset:offset + size])
        parts.append([pool[i] for i in chosen])
        offset += size
    return parts
