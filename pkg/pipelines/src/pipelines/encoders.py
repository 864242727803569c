"""Frozen text encoders.

The production pipelines plug a large contrastive text encoder in here; the
bundled encoder is a deterministic hashed-trigram bag with a fixed random
projection, which is injective enough on realistic caption sets to act as a
semantic bottleneck at toy scale. It has no trainable parameters by
construction (weights live in buffers).
"""

from __future__ import annotations

import zlib

import torch
from torch import nn

DEFAULT_TEXT_ENCODER = "openai/clip-vit-large-patch14"


def _trigrams(caption: str) -> list[str]:
    padded = f"##{caption.lower()}##"
    return [padded[i:i + 3] for i in range(len(padded) - 2)]


class HashedTrigramEncoder(nn.Module):
    """Caption -> L2-normalized embedding via hashed character trigrams."""

    def __init__(self, buckets: int = 2048, dim: int = 64, seed: int = 0):
        super().__init__()
        self.buckets = buckets
        self.dim = dim
        generator = torch.Generator().manual_seed(seed)
        projection = torch.randn(buckets, dim, generator=generator) / buckets ** 0.5
        self.register_buffer("projection", projection)

    @property
    def output_dim(self) -> int:
        return self.dim

    def features(self, captions: list[str]) -> torch.Tensor:
        counts = torch.zeros(len(captions), self.buckets)
        for row, caption in enumerate(captions):
            for gram in _trigrams(caption):
                counts[row, zlib.crc32(gram.encode("utf-8")) % self.buckets] += 1.0
        return counts

    def forward(self, captions: list[str]) -> torch.Tensor:
        embedded = self.features(captions) @ self.projection
        return torch.nn.functional.normalize(embedded, dim=-1, eps=1e-8)


def save_module(module: nn.Module, path) -> None:
    torch.save(module, path)


def load_module(path) -> nn.Module:
    return torch.load(path, map_location="cpu", weights_only=False)


def state_hash(module: nn.Module) -> str:
    """Stable digest of all parameters and buffers, for frozen-weight checks."""
    import hashlib

    digest = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        digest.update(name.encode("utf-8"))
        digest.update(state[name].detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
