"""Reader for the curation core's standardizer model file.

The file is the documented versioned JSON interchange format: transform
name, target mu/sigma, clamp epsilon, minimum bucket count, length unit,
per-length bucket statistics, and pooled global statistics. Served scores
are passed through this transform so different scorer processes emit
comparable values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

LOGIT_SAFE_LIMIT = 36.0


@dataclass(frozen=True)
class BucketStats:
    count: int
    mean_t: float
    std_t: float


@dataclass(frozen=True)
class Standardizer:
    buckets: dict[int, BucketStats]
    global_stats: BucketStats
    transform: str
    target_mu: float
    target_sigma: float
    clamp_eps: float
    min_bucket_count: int
    length_unit: str

    @classmethod
    def load(cls, path: str | Path) -> "Standardizer":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        if obj.get("format_version") != 1:
            raise ValueError(f"unsupported standardizer format_version "
                             f"{obj.get('format_version')!r}")
        buckets = {
            int(b["length"]): BucketStats(int(b["count"]), float(b["mean_t"]), float(b["std_t"]))
            for b in obj["buckets"]
        }
        g = obj["global"]
        return cls(
            buckets=buckets,
            global_stats=BucketStats(int(g["count"]), float(g["mean_t"]), float(g["std_t"])),
            transform=obj["transform"],
            target_mu=float(obj["target_mu"]),
            target_sigma=float(obj["target_sigma"]),
            clamp_eps=float(obj["clamp_eps"]),
            min_bucket_count=int(obj["min_bucket_count"]),
            length_unit=obj.get("length_unit", "word"),
        )

    def caption_length(self, caption: str) -> int:
        if self.length_unit == "word":
            return len(caption.split())
        return len(caption)

    def _forward(self, p: float) -> float:
        if self.transform == "standard":
            return math.log(p / (1.0 - p))
        if self.transform == "paper-literal":
            return math.log(1.0 / (1.0 - p))
        raise ValueError(f"unknown transform {self.transform!r}")

    def _inverse(self, v: float) -> float:
        if self.transform == "standard":
            if v >= 0:
                return 1.0 / (1.0 + math.exp(-v))
            e = math.exp(v)
            return e / (1.0 + e)
        if v < 0:
            return 0.0
        return 1.0 - math.exp(-v)

    def standardize(self, caption: str, p: float) -> float:
        """Map a raw similarity to its length-standardized value."""
        p = min(max(p, self.clamp_eps), 1.0 - self.clamp_eps)
        bucket = self.buckets.get(self.caption_length(caption))
        stats = bucket if bucket is not None and bucket.count >= self.min_bucket_count \
            else self.global_stats
        t = self._forward(p)
        z = 0.0 if stats.std_t == 0.0 else (t - stats.mean_t) / stats.std_t
        v = self.target_mu + self.target_sigma * z
        v = min(max(v, -LOGIT_SAFE_LIMIT), LOGIT_SAFE_LIMIT)
        return self._inverse(v)
