"""Per-caption-length score standardization in logit space.

Reconstruction similarities depend strongly on caption length (short captions
reconstruct more easily). Fitting per-length statistics of the transformed
similarities and re-expressing every score against a fixed target
distribution (logit-normal with mu=0.5, sigma=1) removes that dependence,
making scores comparable across lengths.

Two transforms are available:

* ``standard``: t(p) = ln(p / (1-p)), inverted by the logistic sigmoid.
  This realizes the logit-normal target exactly and is the default.
* ``paper-literal``: t(p) = ln(1 / (1-p)), a one-sided transform inverted by
  p = 1 - exp(-v); negative v clamps to 0. Kept as an option because some
  published descriptions of this procedure write the transform this way.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .corpus import CaptionRecord, ReadStats

FORMAT_VERSION = 1

TRANSFORMS = ("standard", "paper-literal")

DEFAULT_CLAMP_EPS = 1e-4
DEFAULT_MIN_BUCKET_COUNT = 20
DEFAULT_TARGET_MU = 0.5
DEFAULT_TARGET_SIGMA = 1.0

# |logit| beyond this underflows the sigmoid to exactly 0.0 or 1.0 in float64;
# expit(+-36) is still strictly inside (0, 1) by ~2e-16
LOGIT_SAFE_LIMIT = 36.0


def clamp_unit(p: float, eps: float) -> float:
    """Clamp p into [eps, 1-eps] so the transforms stay finite."""
    return min(max(p, eps), 1.0 - eps)


def transform_value(transform: str, p: float) -> float:
    if transform == "standard":
        return math.log(p / (1.0 - p))
    if transform == "paper-literal":
        return math.log(1.0 / (1.0 - p))
    raise ValueError(f"unknown transform {transform!r}")


def inverse_transform_value(transform: str, v: float) -> float:
    if transform == "standard":
        if v >= 0:
            return 1.0 / (1.0 + math.exp(-v))
        e = math.exp(v)
        return e / (1.0 + e)
    if transform == "paper-literal":
        if v < 0:
            return 0.0
        return 1.0 - math.exp(-v)
    raise ValueError(f"unknown transform {transform!r}")


class RunningStats:
    """Streaming count/mean/M2 accumulator with exact parallel merge.

    Uses the population convention: ``std == sqrt(M2 / count)``.
    """

    __slots__ = ("count", "mean", "m2")

    def __init__(self, count: int = 0, mean: float = 0.0, m2: float = 0.0):
        self.count = count
        self.mean = mean
        self.m2 = m2

    def add(self, value: float) -> None:
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    def merge(self, other: "RunningStats") -> None:
        if other.count == 0:
            return
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean, other.m2
            return
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / total
        self.m2 += other.m2 + delta * delta * self.count * other.count / total
        self.count = total

    @property
    def std(self) -> float:
        if self.count == 0:
            return 0.0
        return math.sqrt(max(self.m2, 0.0) / self.count)


@dataclass(frozen=True)
class LengthBucketStats:
    """Statistics of transformed similarities for one caption length.

    ``length`` 0 marks the pooled all-lengths bucket.
    """

    length: int
    count: int
    mean_t: float
    std_t: float


@dataclass(frozen=True)
class StandardizationModel:
    buckets: dict[int, LengthBucketStats]
    global_stats: LengthBucketStats
    transform: str = "standard"
    target_mu: float = DEFAULT_TARGET_MU
    target_sigma: float = DEFAULT_TARGET_SIGMA
    clamp_eps: float = DEFAULT_CLAMP_EPS
    min_bucket_count: int = DEFAULT_MIN_BUCKET_COUNT
    length_unit: str = "word"

    def stats_for(self, caption_length: int) -> LengthBucketStats:
        bucket = self.buckets.get(caption_length)
        if bucket is not None and bucket.count >= self.min_bucket_count:
            return bucket
        return self.global_stats

    def to_obj(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "transform": self.transform,
            "target_mu": self.target_mu,
            "target_sigma": self.target_sigma,
            "clamp_eps": self.clamp_eps,
            "min_bucket_count": self.min_bucket_count,
            "length_unit": self.length_unit,
            "global": _bucket_to_obj(self.global_stats),
            "buckets": [_bucket_to_obj(b) for b in
                        sorted(self.buckets.values(), key=lambda b: b.length)],
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "StandardizationModel":
        version = obj.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported standardizer format_version {version!r}")
        buckets = {b["length"]: _bucket_from_obj(b) for b in obj["buckets"]}
        return cls(
            buckets=buckets,
            global_stats=_bucket_from_obj(obj["global"]),
            transform=obj["transform"],
            target_mu=float(obj["target_mu"]),
            target_sigma=float(obj["target_sigma"]),
            clamp_eps=float(obj["clamp_eps"]),
            min_bucket_count=int(obj["min_bucket_count"]),
            length_unit=obj.get("length_unit", "word"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_obj(), ensure_ascii=False, indent=2) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "StandardizationModel":
        return cls.from_obj(json.loads(Path(path).read_text(encoding="utf-8")))


def _bucket_to_obj(b: LengthBucketStats) -> dict:
    return {"length": b.length, "count": b.count, "mean_t": b.mean_t, "std_t": b.std_t}


def _bucket_from_obj(obj: dict) -> LengthBucketStats:
    return LengthBucketStats(int(obj["length"]), int(obj["count"]),
                             float(obj["mean_t"]), float(obj["std_t"]))


def caption_length(caption: str, unit: str = "word") -> int:
    """Caption length in whitespace-separated tokens (default) or characters."""
    if unit == "word":
        return len(caption.split())
    if unit == "char":
        return len(caption)
    raise ValueError(f"unknown length unit {unit!r}")


def collect_bucket_stats(samples: Iterable[tuple[int, float]], transform: str = "standard",
                         clamp_eps: float = DEFAULT_CLAMP_EPS) -> dict[int, RunningStats]:
    """One streaming pass over (length, similarity) pairs.

    Partial results from separate shards merge exactly via
    :func:`merge_bucket_stats`, so fitting parallelizes across workers.
    """
    buckets: dict[int, RunningStats] = {}
    for length, p in samples:
        length = int(length)
        if length < 1:
            raise ValueError(f"caption length must be >= 1, got {length}")
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"similarity {p!r} outside [0, 1]")
        t = transform_value(transform, clamp_unit(p, clamp_eps))
        stats = buckets.get(length)
        if stats is None:
            stats = buckets[length] = RunningStats()
        stats.add(t)
    return buckets


def merge_bucket_stats(parts: Iterable[dict[int, RunningStats]]) -> dict[int, RunningStats]:
    merged: dict[int, RunningStats] = {}
    for part in parts:
        for length, stats in part.items():
            if length in merged:
                merged[length].merge(stats)
            else:
                merged[length] = RunningStats(stats.count, stats.mean, stats.m2)
    return merged


def build_model(bucket_stats: dict[int, RunningStats], *, transform: str = "standard",
                clamp_eps: float = DEFAULT_CLAMP_EPS,
                min_bucket_count: int = DEFAULT_MIN_BUCKET_COUNT,
                target_mu: float = DEFAULT_TARGET_MU,
                target_sigma: float = DEFAULT_TARGET_SIGMA,
                length_unit: str = "word") -> StandardizationModel:
    if not bucket_stats:
        raise ValueError("no samples to fit on")
    if not 0.0 < clamp_eps < 0.5:
        raise ValueError("clamp_eps must lie in (0, 0.5)")
    if target_sigma <= 0:
        raise ValueError("target_sigma must be positive")
    pooled = RunningStats()
    buckets = {}
    for length in sorted(bucket_stats):
        stats = bucket_stats[length]
        buckets[length] = LengthBucketStats(length, stats.count, stats.mean, stats.std)
        pooled.merge(stats)
    global_stats = LengthBucketStats(0, pooled.count, pooled.mean, pooled.std)
    return StandardizationModel(
        buckets=buckets,
        global_stats=global_stats,
        transform=transform,
        target_mu=target_mu,
        target_sigma=target_sigma,
        clamp_eps=clamp_eps,
        min_bucket_count=min_bucket_count,
        length_unit=length_unit,
    )


def fit_standardizer(samples: Iterable[tuple[int, float]], *, transform: str = "standard",
                     clamp_eps: float = DEFAULT_CLAMP_EPS,
                     min_bucket_count: int = DEFAULT_MIN_BUCKET_COUNT,
                     target_mu: float = DEFAULT_TARGET_MU,
                     target_sigma: float = DEFAULT_TARGET_SIGMA,
                     length_unit: str = "word") -> StandardizationModel:
    """Fit per-length and pooled statistics from (length, similarity) pairs."""
    stats = collect_bucket_stats(samples, transform=transform, clamp_eps=clamp_eps)
    return build_model(stats, transform=transform, clamp_eps=clamp_eps,
                       min_bucket_count=min_bucket_count, target_mu=target_mu,
                       target_sigma=target_sigma, length_unit=length_unit)


def standardize_score(model: StandardizationModel, caption_len: int, p: float) -> float:
    """Re-express one similarity against the model's target distribution.

    The score is transformed, z-scored against the stats of its length bucket
    (or the pooled stats when the bucket is missing or too small), scaled to
    the target mu/sigma, and inverse-transformed. Constant buckets
    (std_t == 0) map everything to the target center. Extreme standardized
    values clamp to ``LOGIT_SAFE_LIMIT`` so the output stays strictly inside
    (0, 1) instead of underflowing to a boundary.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"similarity {p!r} outside [0, 1]")
    stats = model.stats_for(caption_len)
    t = transform_value(model.transform, clamp_unit(p, model.clamp_eps))
    z = 0.0 if stats.std_t == 0.0 else (t - stats.mean_t) / stats.std_t
    v = model.target_mu + model.target_sigma * z
    v = min(max(v, -LOGIT_SAFE_LIMIT), LOGIT_SAFE_LIMIT)
    return inverse_transform_value(model.transform, v)


def standardize_corpus(records: Iterable[CaptionRecord], score_name: str,
                       model: StandardizationModel, strict: bool = True,
                       stats: ReadStats | None = None) -> Iterator[CaptionRecord]:
    """Attach ``<score_name>_std`` to every record carrying ``score_name``.

    Records missing the score abort in strict mode and are skipped (and
    counted) in lenient mode.
    """
    out_name = f"{score_name}_std"
    for record in records:
        if score_name not in record.scores:
            if strict:
                raise KeyError(f"record {record.id!r} has no score {score_name!r}")
            if stats is not None:
                stats.skipped += 1
            continue
        length = caption_length(record.caption, model.length_unit)
        value = standardize_score(model, length, record.scores[score_name])
        yield record.with_score(out_name, value)


class LengthLogitStandardizer(BaseEstimator, TransformerMixin):
    """Transformer view of the standardization fit, for pipeline use.

    ``X`` is an array of shape (n, 2): column 0 the caption length, column 1
    the raw similarity. ``transform`` returns the standardized similarities
    as a 1-d array. The fitted :class:`StandardizationModel` is exposed as
    ``model_``.
    """

    def __init__(self, score_transform="standard", clamp_eps=DEFAULT_CLAMP_EPS,
                 min_bucket_count=DEFAULT_MIN_BUCKET_COUNT,
                 target_mu=DEFAULT_TARGET_MU, target_sigma=DEFAULT_TARGET_SIGMA):
        self.score_transform = score_transform
        self.clamp_eps = clamp_eps
        self.min_bucket_count = min_bucket_count
        self.target_mu = target_mu
        self.target_sigma = target_sigma

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=2)
        self.model_ = fit_standardizer(
            ((int(row[0]), float(row[1])) for row in X),
            transform=self.score_transform,
            clamp_eps=self.clamp_eps,
            min_bucket_count=self.min_bucket_count,
            target_mu=self.target_mu,
            target_sigma=self.target_sigma,
        )
        return self

    def transform(self, X):
        if not hasattr(self, "model_"):
            raise NotFittedError("LengthLogitStandardizer is not fitted")
        X = check_array(X, ensure_min_features=2)
        return np.array([standardize_score(self.model_, int(row[0]), float(row[1]))
                         for row in X])
