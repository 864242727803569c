"""Visual-bottleneck reconstruction pipeline.

The caption drives a frozen text-to-image generator (seeded noise refined
over a fixed number of guidance steps); a frozen captioner decodes the
image back to text with beam search. Nothing in this pipeline trains. At
production scale the two components are a diffusion model and a large
captioner; the bundled components are deterministic toy stand-ins with the
same control surface (guidance scale, inference steps, beams, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .encoders import HashedTrigramEncoder, load_module
from .lm import PrefixLM, beam_search

DEFAULT_T2I = "stabilityai/stable-diffusion-2"
DEFAULT_CAPTIONER = "Salesforce/blip2-opt-2.7b"


@dataclass
class VbaConfig:
    t2i_checkpoint: str = DEFAULT_T2I
    captioner_checkpoint: str = DEFAULT_CAPTIONER
    guidance_scale: float = 9.0
    inference_steps: int = 20
    beams: int = 5
    max_len: int = 64


class TextToImage(nn.Module):
    """Deterministic guided refinement from seeded noise toward a caption
    pattern. All weights are fixed buffers; there is nothing to train."""

    def __init__(self, image_size: int = 16, embed_buckets: int = 2048, seed: int = 0):
        super().__init__()
        self.image_size = image_size
        self.text_encoder = HashedTrigramEncoder(buckets=embed_buckets, dim=64, seed=seed)
        generator = torch.Generator().manual_seed(seed + 1)
        self.register_buffer(
            "pattern_projection",
            torch.randn(64, 3 * image_size * image_size, generator=generator) / 8.0)

    def forward(self, caption: str, seed: int, guidance_scale: float,
                inference_steps: int) -> torch.Tensor:
        with torch.no_grad():
            embedding = self.text_encoder([caption])
            target = (embedding @ self.pattern_projection).view(3, self.image_size,
                                                                self.image_size)
            generator = torch.Generator().manual_seed(seed)
            image = torch.randn(3, self.image_size, self.image_size, generator=generator)
            uncond = torch.zeros_like(target)
            step_size = 1.0 / inference_steps
            for _ in range(inference_steps):
                # classifier-free-guidance-shaped update toward the caption pattern
                direction = uncond + guidance_scale * (target - uncond)
                image = image + step_size * (direction - image)
            return torch.tanh(image)


class ImageCaptioner(nn.Module):
    """Frozen image-to-text decoder: pooled image features feed soft prefix
    slots of a character decoder."""

    def __init__(self, image_size: int = 16, prefix_length: int = 8, seed: int = 0):
        super().__init__()
        self.prefix_length = prefix_length
        self.decoder = PrefixLM(seed=seed + 2)
        generator = torch.Generator().manual_seed(seed + 3)
        self.register_buffer(
            "feature_projection",
            torch.randn(3 * image_size * image_size,
                        prefix_length * self.decoder.embed_dim, generator=generator)
            / (image_size * 3))

    def forward(self, image: torch.Tensor, beams: int, max_len: int) -> list[str]:
        with torch.no_grad():
            flat = image.reshape(1, -1)
            prefix = (flat @ self.feature_projection).view(
                1, self.prefix_length, self.decoder.embed_dim)
            return beam_search(self.decoder, prefix, beams=beams, max_len=max_len)


class VbaPipeline:
    def __init__(self, t2i: TextToImage, captioner: ImageCaptioner, config: VbaConfig):
        self.t2i = t2i
        self.captioner = captioner
        self.config = config
        for module in (self.t2i, self.captioner):
            module.eval()
            for parameter in module.parameters():
                parameter.requires_grad_(False)

    def trainable_parameter_count(self) -> int:
        return sum(p.numel() for m in (self.t2i, self.captioner)
                   for p in m.parameters() if p.requires_grad)

    def reconstruct(self, caption: str, seed: int) -> tuple[torch.Tensor, list[str]]:
        image = self.t2i(caption, seed, self.config.guidance_scale,
                         self.config.inference_steps)
        texts = self.captioner(image, self.config.beams, self.config.max_len)
        return image, texts

    def save(self, path) -> None:
        torch.save({"t2i": self.t2i, "captioner": self.captioner,
                    "config": self.config}, path)

    @classmethod
    def load(cls, path, config: VbaConfig | None = None) -> "VbaPipeline":
        bundle = torch.load(path, map_location="cpu", weights_only=False)
        return cls(bundle["t2i"], bundle["captioner"], config or bundle["config"])


def vba_reconstruct(caption: str, config: VbaConfig, seed: int,
                    pipeline: VbaPipeline | None = None) -> tuple[torch.Tensor, list[str]]:
    """One generated image and its five beam-decoded captions.

    Without an explicit pipeline, the generator and captioner load from the
    checkpoints named in the config.
    """
    if pipeline is None:
        t2i = load_module(config.t2i_checkpoint)
        captioner = load_module(config.captioner_checkpoint)
        pipeline = VbaPipeline(t2i, captioner, config)
    return pipeline.reconstruct(caption, seed)
