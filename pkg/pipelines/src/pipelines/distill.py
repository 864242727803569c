"""Distilled student: a small text regressor over the fused targets.

The student maps a caption to a single real and trains with mean squared
error against the targets from a distillation set (the line-delimited
``{caption, target}`` file the curation core emits, whose ``.meta.json``
sidecar records the target space). The bundled student is a linear head
over hashed character n-grams; production would swap in a small pretrained
text encoder behind the same interface.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

logger = logging.getLogger(__name__)

DEFAULT_STUDENT = "distilroberta-base"


@dataclass
class DistillConfig:
    student_checkpoint: str = DEFAULT_STUDENT
    feature_buckets: int = 4096
    ngram_sizes: tuple[int, ...] = (2, 3, 4)
    learning_rate: float = 5e-2
    epochs: int = 30
    batch_size: int = 256
    val_fraction: float = 0.1
    seed: int = 0


class StudentScorer(nn.Module):
    """Hashed n-gram features -> linear head -> one real per caption."""

    def __init__(self, feature_buckets: int = 4096, ngram_sizes: tuple[int, ...] = (2, 3, 4),
                 seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.feature_buckets = feature_buckets
        self.ngram_sizes = tuple(ngram_sizes)
        self.head = nn.Linear(feature_buckets, 1)
        self.target_space = "probability"

    def features(self, captions: list[str]) -> torch.Tensor:
        out = torch.zeros(len(captions), self.feature_buckets)
        for row, caption in enumerate(captions):
            text = f"#{caption.lower()}#"
            for size in self.ngram_sizes:
                for i in range(max(len(text) - size + 1, 0)):
                    gram = text[i:i + size]
                    out[row, zlib.crc32(gram.encode("utf-8")) % self.feature_buckets] += 1.0
        return nn.functional.normalize(out, dim=-1, eps=1e-8)

    def forward(self, captions: list[str]) -> torch.Tensor:
        return self.head(self.features(captions)).squeeze(-1)

    @torch.no_grad()
    def predict(self, captions: list[str]) -> torch.Tensor:
        self.eval()
        return self(captions)

    def save(self, path) -> None:
        torch.save(self, path)

    @classmethod
    def load(cls, path) -> "StudentScorer":
        return torch.load(path, map_location="cpu", weights_only=False)


def load_distillation_set(path: str | Path) -> tuple[list[str], list[float], dict]:
    """Read a distillation set and its metadata sidecar."""
    path = Path(path)
    captions: list[str] = []
    targets: list[float] = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            captions.append(obj["caption"])
            targets.append(float(obj["target"]))
    meta_path = path.with_name(path.name + ".meta.json")
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() \
        else {"target_space": "probability"}
    return captions, targets, meta


@dataclass
class DistillResult:
    student: StudentScorer
    train_mse_before: float
    train_mse_after: float
    val_mse_before: float
    val_mse_after: float
    target_space: str
    step_losses: list[float] = field(default_factory=list)


def distill_train(pairs: "str | Path | list[tuple[str, float]]",
                  config: DistillConfig | None = None,
                  target_space: str | None = None) -> DistillResult:
    """Regress the student onto (caption, target) pairs with MSE.

    ``pairs`` is a distillation-set path (metadata sidecar supplies the
    target space) or an in-memory list (pass ``target_space`` explicitly,
    defaulting to probability). Validation MSE before and after training is
    reported on a held-out tail.
    """
    config = config or DistillConfig()
    if isinstance(pairs, (str, Path)):
        captions, targets, meta = load_distillation_set(pairs)
        target_space = target_space or meta.get("target_space", "probability")
    else:
        captions = [c for c, _ in pairs]
        targets = [float(t) for _, t in pairs]
        target_space = target_space or "probability"
    if not captions:
        raise ValueError("distillation set is empty")
    if not all(torch.isfinite(torch.tensor(targets)).tolist()):
        raise ValueError("targets must be finite")

    torch.manual_seed(config.seed)
    student = StudentScorer(config.feature_buckets, config.ngram_sizes, seed=config.seed)
    student.target_space = target_space

    generator = torch.Generator().manual_seed(config.seed)
    order = torch.randperm(len(captions), generator=generator).tolist()
    n_val = int(len(captions) * config.val_fraction)
    val_idx, train_idx = order[:n_val], order[n_val:]
    if not train_idx:
        train_idx, val_idx = order, order

    train_captions = [captions[i] for i in train_idx]
    train_targets = torch.tensor([targets[i] for i in train_idx])
    val_captions = [captions[i] for i in val_idx] or train_captions
    val_targets = torch.tensor([targets[i] for i in val_idx]) if val_idx else train_targets

    train_features = student.features(train_captions)
    val_features = student.features(val_captions)

    def mse(features: torch.Tensor, expected: torch.Tensor) -> float:
        with torch.no_grad():
            return float(nn.functional.mse_loss(
                student.head(features).squeeze(-1), expected))

    result = DistillResult(student=student,
                           train_mse_before=mse(train_features, train_targets),
                           train_mse_after=0.0,
                           val_mse_before=mse(val_features, val_targets),
                           val_mse_after=0.0,
                           target_space=target_space)

    optimizer = torch.optim.Adam(student.parameters(), lr=config.learning_rate)
    student.train()
    for epoch in range(config.epochs):
        for start in range(0, len(train_captions), config.batch_size):
            sl = slice(start, start + config.batch_size)
            predicted = student.head(train_features[sl]).squeeze(-1)
            loss = nn.functional.mse_loss(predicted, train_targets[sl])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            result.step_losses.append(loss.item())
        logger.info("distill epoch=%d loss=%.6f", epoch, result.step_losses[-1])
    student.eval()

    result.train_mse_after = mse(train_features, train_targets)
    result.val_mse_after = mse(val_features, val_targets)
    return result
