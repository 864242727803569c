"""Semantic-bottleneck reconstruction pipeline.

A frozen text encoder squeezes the caption into one embedding; a trainable
linear projection expands that embedding into soft-prefix slots for a frozen
decoder LM, which is asked to reconstruct the caption from the prefix alone.
Only the projection ever trains. Reconstruction fidelity of the best of five
beams (edit similarity by default) is the served concreteness signal.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .encoders import DEFAULT_TEXT_ENCODER, load_module, state_hash
from .lm import DEFAULT_LLM, PrefixLM, beam_search, reconstruction_loss

logger = logging.getLogger(__name__)


@dataclass
class SbaConfig:
    text_encoder_checkpoint: str = DEFAULT_TEXT_ENCODER
    llm_checkpoint: str = DEFAULT_LLM
    prefix_length: int = 10
    beams: int = 5
    epochs: int = 2
    batch_size: int = 128
    learning_rate: float = 2e-3
    warmup_ratio: float = 0.03
    max_len: int = 64
    seed: int = 0


class PrefixProjection(nn.Module):
    """Linear map from one encoder embedding to ``prefix_length`` LM slots."""

    def __init__(self, encoder_dim: int, prefix_length: int, lm_embed_dim: int,
                 seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.prefix_length = prefix_length
        self.lm_embed_dim = lm_embed_dim
        self.linear = nn.Linear(encoder_dim, prefix_length * lm_embed_dim)

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        flat = self.linear(embeddings)
        return flat.view(embeddings.shape[0], self.prefix_length, self.lm_embed_dim)


class SbaModel:
    """Bundle of frozen encoder, frozen decoder, and the trained projection."""

    def __init__(self, encoder: nn.Module, lm: PrefixLM, projection: PrefixProjection,
                 config: SbaConfig):
        self.encoder = encoder
        self.lm = lm
        self.projection = projection
        self.config = config

    def reconstruct(self, caption: str) -> list[str]:
        """Five beam-search reconstructions of the caption through the bottleneck."""
        with torch.no_grad():
            prefix = self.projection(self.encoder([caption]))
        return beam_search(self.lm, prefix, beams=self.config.beams,
                           max_len=self.config.max_len)

    def save(self, path) -> None:
        torch.save({"encoder": self.encoder, "lm": self.lm,
                    "projection": self.projection, "config": self.config}, path)

    @classmethod
    def load(cls, path) -> "SbaModel":
        bundle = torch.load(path, map_location="cpu", weights_only=False)
        return cls(bundle["encoder"], bundle["lm"], bundle["projection"], bundle["config"])


def _freeze(module: nn.Module) -> None:
    module.eval()
    for parameter in module.parameters():
        parameter.requires_grad_(False)


def _cosine_with_warmup(step: int, total: int, warmup: int) -> float:
    if step < warmup:
        return (step + 1) / max(warmup, 1)
    progress = (step - warmup) / max(total - warmup, 1)
    return 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


@dataclass
class SbaTrainResult:
    model: SbaModel
    step_losses: list[float] = field(default_factory=list)
    encoder_hash_before: str = ""
    encoder_hash_after: str = ""
    lm_hash_before: str = ""
    lm_hash_after: str = ""


def sba_train(captions: list[str], config: SbaConfig,
              encoder: nn.Module | None = None, lm: PrefixLM | None = None) -> SbaTrainResult:
    """Fit the projection on a caption corpus; everything else stays frozen.

    ``encoder``/``lm`` default to the checkpoints named in the config. The
    per-step training loss is logged and returned, and the frozen modules
    are hashed before and after so callers can verify nothing else moved.
    """
    if not captions:
        raise ValueError("no training captions")
    encoder = encoder if encoder is not None else load_module(config.text_encoder_checkpoint)
    lm = lm if lm is not None else load_module(config.llm_checkpoint)
    _freeze(encoder)
    _freeze(lm)

    torch.manual_seed(config.seed)
    encoder_dim = encoder(["probe"]).shape[-1]
    projection = PrefixProjection(encoder_dim, config.prefix_length, lm.embed_dim,
                                  seed=config.seed)
    if projection.lm_embed_dim != lm.embed_dim:
        raise ValueError("projection width does not match the decoder embedding width")

    result = SbaTrainResult(model=SbaModel(encoder, lm, projection, config))
    result.encoder_hash_before = state_hash(encoder)
    result.lm_hash_before = state_hash(lm)

    steps_per_epoch = max(1, (len(captions) + config.batch_size - 1) // config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    warmup_steps = int(config.warmup_ratio * total_steps)
    optimizer = torch.optim.AdamW(projection.parameters(), lr=config.learning_rate)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: _cosine_with_warmup(step, total_steps, warmup_steps))

    with torch.no_grad():
        embeddings = encoder(captions)

    step = 0
    for epoch in range(config.epochs):
        for start in range(0, len(captions), config.batch_size):
            batch = captions[start:start + config.batch_size]
            prefix = projection(embeddings[start:start + config.batch_size])
            loss = reconstruction_loss(lm, prefix, batch, config.max_len)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
            result.step_losses.append(loss.item())
            logger.info("sba step=%d epoch=%d loss=%.4f", step, epoch, result.step_losses[-1])
            step += 1

    result.encoder_hash_after = state_hash(encoder)
    result.lm_hash_after = state_hash(lm)
    return result
